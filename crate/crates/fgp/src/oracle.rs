//! Dense-oracle instances and identity checks.
//!
//! Everything the fast path computes through sparse factors and Woodbury
//! identities can be recomputed densely at small scale. This module
//! builds seeded random instances (bounded to n <= 60, M <= 80, r <= 6),
//! densifies the covariance, and verifies every identity the crate relies
//! on: the inverse and determinant reductions, the conditional moments,
//! the predictive distribution, and the block decomposition. These are
//! the only code paths in the crate allowed to form an n x n or M x M
//! dense matrix.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::basis::{BasisMatrix, Incidence};
use crate::block::{partition_cells, BlockModel, BlockWorkspace};
use crate::car::CarStructure;
use crate::em::e_step_ws;
use crate::error::Result;
use crate::likelihood::{Workspace, Ws};
use crate::linalg::{DenseChol, SparseSym};
use crate::model::{FgpParams, FgpStructure, GgmStructure};
use crate::predict::{predict_rows, PredictionRequest};

pub const ORACLE_MAX_N: usize = 60;
pub const ORACLE_MAX_M: usize = 80;
pub const ORACLE_MAX_R: usize = 6;

/// Standard oracle tolerance and the relaxed one for conditioning probes.
pub const ORACLE_TOL: f64 = 1e-8;
pub const PROBE_TOL: f64 = 1e-6;

/// Stress variants of the random instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleTweak {
    None,
    /// Noise diagonal scaled by 1e4.
    IllConditionedNoise,
    /// gamma at 0.99 of its upper bound.
    NearBoundaryGamma,
}

/// A seeded instance with everything needed to evaluate both the fast
/// path and the dense reference.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub structure: FgpStructure,
    pub params: FgpParams,
    pub z: DVector<f64>,
    /// prediction design: trend rows, basis rows, containing cells
    pub xp: DMatrix<f64>,
    pub sp: BasisMatrix,
    pub pred_cells: Vec<usize>,
}

impl OracleInstance {
    pub fn n(&self) -> usize {
        self.structure.n()
    }

    pub fn m(&self) -> usize {
        self.structure.m()
    }

    pub fn r(&self) -> usize {
        self.structure.r()
    }

    fn ggm(&self) -> &GgmStructure {
        self.structure.ggm.as_ref().expect("oracle instances carry a lattice")
    }

    pub fn dense_q(&self) -> DMatrix<f64> {
        self.ggm()
            .car
            .precision(self.params.tau2, self.params.gamma)
            .expect("oracle gamma admissible")
            .to_dense()
    }

    pub fn dense_q_inv(&self) -> DMatrix<f64> {
        DenseChol::factor(&self.dense_q())
            .expect("oracle Q positive definite")
            .inverse()
    }

    /// C = S K S' + A Q^{-1} A' + V, densified.
    pub fn dense_c(&self) -> DMatrix<f64> {
        let s = self.structure.basis.to_dense();
        let a = self.ggm().incidence.to_dense();
        let mut c = &s * &self.params.k * s.transpose()
            + &a * self.dense_q_inv() * a.transpose();
        for i in 0..self.n() {
            c[(i, i)] += self.structure.v_eps[i];
        }
        (&c + c.transpose()) * 0.5
    }
}

/// Seeded random instance within the oracle bounds.
pub fn build_oracle(seed: u64) -> OracleInstance {
    build_oracle_tweaked(seed, OracleTweak::None)
}

pub fn build_oracle_tweaked(seed: u64, tweak: OracleTweak) -> OracleInstance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = rng.random_range(20..=ORACLE_MAX_N);
    let m = rng.random_range(15..=ORACLE_MAX_M);
    let r = rng.random_range(1..=ORACLE_MAX_R);
    let p = rng.random_range(1..=3);
    build_sized(&mut rng, n, m, r, p, tweak)
}

/// As [`build_oracle`] but with explicit sizes (still bounded).
pub fn build_oracle_sized(seed: u64, n: usize, m: usize, r: usize, p: usize) -> OracleInstance {
    assert!(n <= 200 && m <= 200 && r <= 12, "oracle sizes are bounded");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    build_sized(&mut rng, n, m, r, p, OracleTweak::None)
}

fn build_sized(
    rng: &mut ChaCha20Rng,
    n: usize,
    m: usize,
    r: usize,
    p: usize,
    tweak: OracleTweak,
) -> OracleInstance {
    // proximity: a chain plus a few random extra edges
    let mut triplets = Vec::new();
    for i in 0..m - 1 {
        triplets.push((i, i + 1, 1.0));
        triplets.push((i + 1, i, 1.0));
    }
    let extra = (m / 8).max(1);
    for _ in 0..extra {
        let i = rng.random_range(0..m);
        let j = rng.random_range(0..m);
        if i.abs_diff(j) > 1 {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
    }
    let h = SparseSym::from_triplets(m, &triplets).expect("symmetric by construction");
    let car = CarStructure::with_identity_delta(h).expect("valid proximity");
    let (lo, hi) = car.gamma_bounds().expect("chain has edges");

    let gamma = match tweak {
        OracleTweak::NearBoundaryGamma => 0.99 * hi,
        _ => {
            let frac: f64 = rng.random_range(-0.85..0.85);
            if frac < 0.0 {
                -frac * lo
            } else {
                frac * hi
            }
        }
    };
    let tau2 = rng.random_range(0.3..3.0);

    // incidence: every observation lands in a random cell
    let cells: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let incidence = Incidence::from_cells(m, cells).unwrap();

    // dense random basis and covariates
    let s_dense = DMatrix::from_fn(n, r, |_, _| rng.random::<f64>());
    let basis = BasisMatrix::from_dense(&s_dense);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }

    let noise_scale = match tweak {
        OracleTweak::IllConditionedNoise => 1e4,
        _ => 1.0,
    };
    let sigma2_eps = rng.random_range(0.2..2.0) * noise_scale;
    let v_eps = DVector::from_fn(n, |_, _| sigma2_eps * rng.random_range(0.5..2.0));

    let gk = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = (&gk * gk.transpose()) / r as f64 + DMatrix::identity(r, r) * 0.2;

    let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));

    let ggm = GgmStructure::new(incidence, car).unwrap();
    let structure = FgpStructure::new(x, basis, Some(ggm), v_eps).unwrap();
    let params = FgpParams {
        beta,
        k,
        tau2,
        gamma,
    };

    // simulate z from the model itself
    let z = simulate_from(&structure, &params, rng);

    // prediction design rows
    let m_pred = 10.min(n);
    let sp = BasisMatrix::from_dense(&DMatrix::from_fn(m_pred, r, |_, _| rng.random::<f64>()));
    let mut xp = DMatrix::from_fn(m_pred, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    for i in 0..m_pred {
        xp[(i, 0)] = 1.0;
    }
    let pred_cells: Vec<usize> = (0..m_pred).map(|_| rng.random_range(0..m)).collect();

    OracleInstance {
        structure,
        params,
        z,
        xp,
        sp,
        pred_cells,
    }
}

fn simulate_from(
    structure: &FgpStructure,
    params: &FgpParams,
    rng: &mut ChaCha20Rng,
) -> DVector<f64> {
    let n = structure.n();
    let r = structure.r();
    let ggm = structure.ggm.as_ref().unwrap();
    let q_inv = DenseChol::factor(
        &ggm.car
            .precision(params.tau2, params.gamma)
            .unwrap()
            .to_dense(),
    )
    .unwrap()
    .inverse();
    let lq = DenseChol::factor(&((&q_inv + q_inv.transpose()) * 0.5))
        .unwrap()
        .l()
        .clone();
    let lk = DenseChol::factor_with_jitter(&params.k, 1e-12).unwrap().l().clone();
    let eta = &lk * DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let xi = &lq * DVector::from_fn(ggm.m(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut z = &structure.x * &params.beta
        + structure.basis.mul_vec(&eta)
        + ggm.incidence.mul_vec(&xi);
    for i in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        z[i] += e * structure.v_eps[i].sqrt();
    }
    z
}

/// One named deviation measurement.
#[derive(Debug, Clone)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub deviation: f64,
    pub tol: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.deviation.is_finite() && self.deviation <= self.tol
    }
}

/// Outcome of running every identity on one instance.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn failures(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }
}

impl std::fmt::Display for IdentityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:>24}  dev {:10.3e}  tol {:7.1e}  {}",
                c.name,
                c.deviation,
                c.tol,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Runs every identity at the standard oracle tolerance.
pub fn check_identities(inst: &OracleInstance) -> Result<IdentityReport> {
    check_identities_with_tol(inst, ORACLE_TOL)
}

pub fn check_identities_with_tol(inst: &OracleInstance, tol: f64) -> Result<IdentityReport> {
    let mut checks = Vec::new();
    let ws = Workspace::new(&inst.structure, inst.params.clone())?;
    let c = inst.dense_c();
    let c_fac = DenseChol::factor(&c)?;
    let n = inst.n();

    // deterministic probe vectors
    let b1 = inst.z.clone();
    let b2 = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });

    // Woodbury inverse: C (C^{-1} b) = b
    let mut dev = 0.0f64;
    for b in [&b1, &b2] {
        let x = ws.apply_c_inv_vec(b);
        dev = dev.max((&c * &x - b).norm() / b.norm());
    }
    checks.push(IdentityCheck {
        name: "woodbury_inverse",
        deviation: dev,
        tol,
    });

    // determinant reduction
    let ld_dev = (ws.log_det_c() - c_fac.logdet()).abs();
    checks.push(IdentityCheck {
        name: "log_det",
        deviation: ld_dev,
        tol,
    });

    // D against the dense inverse of A Q^{-1} A' + V
    let a = inst.ggm().incidence.to_dense();
    let mut d_inv_dense = &a * inst.dense_q_inv() * a.transpose();
    for i in 0..n {
        d_inv_dense[(i, i)] += inst.structure.v_eps[i];
    }
    let d_fac = DenseChol::factor(&((&d_inv_dense + d_inv_dense.transpose()) * 0.5))?;
    let mut dev = 0.0f64;
    for b in [&b1, &b2] {
        let got = ws.apply_d_vec(b);
        let want = d_fac.solve_vec(b);
        dev = dev.max((got - &want).norm() / want.norm().max(1e-300));
    }
    checks.push(IdentityCheck {
        name: "apply_d",
        deviation: dev,
        tol,
    });

    // E-step moments against dense conditioning
    let ws_enum = Ws::Full(Workspace::new(&inst.structure, inst.params.clone())?);
    let (mu, sigma) = e_step_ws(&ws_enum, &inst.z);
    let s = inst.structure.basis.to_dense();
    let res = &inst.z - &inst.structure.x * &inst.params.beta;
    let ci_res = c_fac.solve_vec(&res);
    let mu_dense = &inst.params.k * s.transpose() * &ci_res;
    let ci_s = c_fac.solve_mat(&s);
    let sigma_dense =
        &inst.params.k - &inst.params.k * s.transpose() * ci_s * &inst.params.k;
    checks.push(IdentityCheck {
        name: "e_step_mean",
        deviation: (&mu - &mu_dense).norm() / mu_dense.norm().max(1.0),
        tol,
    });
    checks.push(IdentityCheck {
        name: "e_step_cov",
        deviation: (&sigma - &sigma_dense).norm() / sigma_dense.norm().max(1.0),
        tol,
    });

    // predictive distribution against dense joint conditioning
    let pred = predict_rows(
        &ws_enum,
        &inst.z,
        &inst.xp,
        &inst.sp,
        Some(&inst.pred_cells),
        &PredictionRequest {
            want_std: true,
            batch_size: 4,
        },
    )?;
    let sp = inst.sp.to_dense();
    let m_pred = sp.nrows();
    let q_inv = inst.dense_q_inv();
    let ap = {
        let mut ap = DMatrix::zeros(m_pred, inst.m());
        for (i, &cell) in inst.pred_cells.iter().enumerate() {
            ap[(i, cell)] = 1.0;
        }
        ap
    };
    let cov_pp = &sp * &inst.params.k * sp.transpose() + &ap * &q_inv * ap.transpose();
    let cov_pz = &sp * &inst.params.k * s.transpose()
        + &ap * &q_inv * a.transpose();
    let mean_dense = &inst.xp * &inst.params.beta + &cov_pz * &ci_res;
    let cond_cov = &cov_pp - &cov_pz * c_fac.solve_mat(&cov_pz.transpose());
    checks.push(IdentityCheck {
        name: "predictive_mean",
        deviation: (&pred.mean - &mean_dense).norm() / mean_dense.norm().max(1.0),
        tol,
    });
    let std = pred.std.as_ref().expect("std requested");
    let mut dev = 0.0f64;
    for i in 0..m_pred {
        let want = cond_cov[(i, i)].max(0.0).sqrt();
        dev = dev.max((std[i] - want).abs() / want.max(1.0));
    }
    checks.push(IdentityCheck {
        name: "predictive_std",
        deviation: dev,
        tol,
    });

    // block identities: J=1 equals the full likelihood, J=2 equals the
    // dense evaluation of the block-diagonal model
    let full_nll = ws.nll(&inst.z);
    let p1 = partition_cells(inst.m(), 1)?;
    let bm1 = BlockModel::new(&inst.structure, &p1)?;
    let b1_nll = BlockWorkspace::new(&bm1, inst.params.clone())?.nll(&inst.z);
    checks.push(IdentityCheck {
        name: "block_j1_identity",
        deviation: (b1_nll - full_nll).abs() / (1.0 + full_nll.abs()),
        tol: 1e-10,
    });

    let p2 = partition_cells(inst.m(), 2)?;
    let bm2 = BlockModel::new(&inst.structure, &p2)?;
    let b2_nll = BlockWorkspace::new(&bm2, inst.params.clone())?.nll(&inst.z);
    let qb = bm2.dense_precision(&inst.params)?;
    let qb_inv = DenseChol::factor(&qb)?.inverse();
    let mut cb = &s * &inst.params.k * s.transpose() + &a * qb_inv * a.transpose();
    for i in 0..n {
        cb[(i, i)] += inst.structure.v_eps[i];
    }
    let cb_fac = DenseChol::factor(&((&cb + cb.transpose()) * 0.5))?;
    let dense_b_nll = 0.5 * (res.dot(&cb_fac.solve_vec(&res)) + cb_fac.logdet())
        + 0.5 * n as f64 * crate::likelihood::LN_2PI;
    checks.push(IdentityCheck {
        name: "block_j2_dense",
        deviation: (b2_nll - dense_b_nll).abs(),
        tol,
    });

    // positive semidefiniteness of the covariance quadratic form
    let trace_c = c.trace();
    let mut worst = 0.0f64;
    for b in [&b1, &b2] {
        let quad = b.dot(&(&c * b));
        let floor = -1e-10 * b.norm_squared() * trace_c / n as f64;
        if quad < floor {
            worst = worst.max(floor - quad);
        }
    }
    checks.push(IdentityCheck {
        name: "psd_quadratic_form",
        deviation: worst,
        tol: 0.0,
    });

    Ok(IdentityReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn instances_are_reproducible() {
        let a = build_oracle(42);
        let b = build_oracle(42);
        assert_eq!(a.n(), b.n());
        assert_eq!(a.z, b.z);
        assert_eq!(a.params.gamma, b.params.gamma);
    }

    #[test]
    fn dense_c_is_symmetric() {
        let inst = build_oracle(7);
        let c = inst.dense_c();
        for i in 0..inst.n() {
            for j in 0..inst.n() {
                assert_relative_eq!(c[(i, j)], c[(j, i)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn latent_covariance_rank_is_bounded() {
        // with M and r small, S K S' + A Q^{-1} A' has rank at most r + M
        let inst = build_oracle_sized(3, 40, 10, 3, 1);
        let s = inst.structure.basis.to_dense();
        let a = inst.structure.ggm.as_ref().unwrap().incidence.to_dense();
        let latent =
            &s * &inst.params.k * s.transpose() + &a * inst.dense_q_inv() * a.transpose();
        let eig = latent.symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let rank = eig
            .eigenvalues
            .iter()
            .filter(|&&v| v > 1e-10 * max_ev)
            .count();
        assert!(rank <= 13, "rank {rank}");
    }

    #[test]
    fn identities_hold_on_a_few_instances() {
        for seed in 0..5u64 {
            let inst = build_oracle(seed);
            let report = check_identities(&inst).unwrap();
            assert!(report.all_passed(), "seed {seed}:\n{report}");
        }
    }

    #[test]
    fn probes_hold_at_relaxed_tolerance() {
        let ill = build_oracle_tweaked(11, OracleTweak::IllConditionedNoise);
        let report = check_identities_with_tol(&ill, PROBE_TOL).unwrap();
        assert!(report.all_passed(), "ill-conditioned:\n{report}");
        let near = build_oracle_tweaked(13, OracleTweak::NearBoundaryGamma);
        let report = check_identities_with_tol(&near, PROBE_TOL).unwrap();
        assert!(report.all_passed(), "near-boundary:\n{report}");
    }
}
