//! EM estimation of theta = {beta, K, tau^2, gamma}.
//!
//! The low-rank coefficients eta are treated as missing data. Each
//! iteration computes their conditional moments, updates K in closed
//! form, and minimizes a profile objective f(tau^2, gamma) in which the
//! trend coefficients are re-substituted by their weighted-least-squares
//! value. The next iterate can never increase the expected complete-data
//! objective, so the observed negative log-likelihood is nonincreasing
//! along the trace up to floating-point noise.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{FgpError, Result};
use crate::likelihood::{ModelRef, Ws};
use crate::linalg::DenseChol;
use crate::model::{FgpParams, FgpStructure};
use crate::optim::{minimize_bounded, NelderMeadOptions};

/// EM control knobs.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Convergence threshold on the parameter-vector step; defaults to
    /// 1e-6 * max(r^2, 1) when unset.
    pub zeta: Option<f64>,
    /// Evaluation budget for the inner (tau^2, gamma) search per
    /// iteration.
    pub inner_budget: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 500,
            zeta: None,
            inner_budget: 200,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn zeta_for(&self, r: usize) -> f64 {
        self.zeta.unwrap_or(1e-6 * (r * r).max(1) as f64)
    }
}

/// Fit outcome: final parameters, the negative log-likelihood trace
/// (initial value first), and convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: FgpParams,
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
}

/// Conditional mean and covariance of eta given the data at the
/// workspace's parameter value.
pub fn e_step_ws(ws: &Ws, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let params = ws.params();
    let res = z - ws.x() * &params.beta;
    let ci_res = ws.apply_c_inv_vec(&res);
    let mu = &params.k * ws.basis().t_mul_vec(&ci_res);
    // S'C^{-1}S = G - G (K^{-1}+G)^{-1} G
    let g = ws.g();
    let sc = g - g * ws.inner_solve_mat(g);
    let sigma = &params.k - &params.k * sc * &params.k;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    (mu, sigma)
}

/// E-step against a freshly built workspace.
pub fn e_step(
    structure: &FgpStructure,
    params: &FgpParams,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let ws = ModelRef::Full(structure).workspace(params)?;
    Ok(e_step_ws(&ws, z))
}

/// Closed-form M-step updates:
/// `beta = (X'DX)^{-1} X'D (Z - S mu)` and `K = Sigma + mu mu'`.
pub fn m_step_closed(
    ws: &Ws,
    z: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k_next = sigma + mu * mu.transpose();
    let k_next = (&k_next + k_next.transpose()) * 0.5;
    let target = z - ws.basis().mul_vec(mu);
    let beta = weighted_ls(ws, &target)?;
    Ok((beta, k_next))
}

/// Generalized least squares of `target` on X under weight matrix D.
fn weighted_ls(ws: &Ws, target: &DVector<f64>) -> Result<DVector<f64>> {
    let x = ws.x();
    let p = x.ncols();
    let dx: Vec<DVector<f64>> = (0..p)
        .map(|a| ws.apply_d_vec(&DVector::from_column_slice(x.column(a).as_slice())))
        .collect();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for a in 0..p {
        for b in 0..p {
            gram[(a, b)] = x.column(a).dot(&dx[b]);
        }
        rhs[a] = dx[a].dot(target);
    }
    let gram = (&gram + gram.transpose()) * 0.5;
    let chol = DenseChol::factor(&gram).map_err(|_| FgpError::SingularGram)?;
    Ok(chol.solve_vec(&rhs))
}

/// The profile objective minimized over (tau^2, gamma) inside one M-step.
/// Every evaluation refactors the sparse matrices at the candidate value;
/// failures surface as +infinity so the search can route around them.
pub struct ProfileObjective<'a> {
    model: ModelRef<'a>,
    z: &'a DVector<f64>,
    mu: &'a DVector<f64>,
    sigma: &'a DMatrix<f64>,
    s_mu: DVector<f64>,
    k_current: DMatrix<f64>,
}

impl<'a> ProfileObjective<'a> {
    pub fn new(
        model: ModelRef<'a>,
        z: &'a DVector<f64>,
        mu: &'a DVector<f64>,
        sigma: &'a DMatrix<f64>,
        k_current: DMatrix<f64>,
    ) -> Self {
        let s_mu = model.basis().mul_vec(mu);
        ProfileObjective {
            model,
            z,
            mu,
            sigma,
            s_mu,
            k_current,
        }
    }

    /// f value alone; +infinity when the candidate is inadmissible.
    pub fn eval(&self, tau2: f64, gamma: f64) -> f64 {
        match self.eval_detail(tau2, gamma) {
            Ok((f, _)) => f,
            Err(_) => f64::INFINITY,
        }
    }

    /// f value together with the profiled trend coefficients.
    pub fn eval_detail(&self, tau2: f64, gamma: f64) -> Result<(f64, DVector<f64>)> {
        let p = self.model.p();
        let probe = FgpParams {
            beta: DVector::zeros(p),
            k: self.k_current.clone(),
            tau2,
            gamma,
        };
        let ws = self.model.workspace(&probe)?;
        let target = self.z - &self.s_mu;
        let beta = weighted_ls(&ws, &target)?;
        let z_tilde = self.z - self.model.x() * &beta;
        let dzt = ws.apply_d_vec(&z_tilde);
        let quad = z_tilde.dot(&dzt);
        let cross = 2.0 * dzt.dot(&self.s_mu);
        let g = ws.g();
        let trace_term = (g * self.sigma).trace();
        let mu_term = self.mu.dot(&(g * self.mu));
        let f = ws.log_det_d_inv() + quad - cross + trace_term + mu_term;
        Ok((f, beta))
    }
}

/// Initial values: OLS trend, tau^2 = 0.1 var(Z), K = 0.9 var(Z) I, and
/// gamma at the midpoint of the shrunk admissible interval.
pub fn initial_params(structure: &FgpStructure, z: &DVector<f64>) -> Result<FgpParams> {
    initial_params_model(ModelRef::Full(structure), z)
}

pub fn initial_params_model(model: ModelRef, z: &DVector<f64>) -> Result<FgpParams> {
    let n = model.n();
    if n < 2 {
        return Err(FgpError::DegenerateData);
    }
    let mean = z.sum() / n as f64;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) || !var.is_finite() {
        return Err(FgpError::DegenerateData);
    }
    // OLS trend start
    let x = model.x();
    let gram = x.transpose() * x;
    let chol = DenseChol::factor(&gram).map_err(|_| FgpError::SingularGram)?;
    let beta = chol.solve_vec(&(x.transpose() * z));

    let r = model.r();
    let gamma = model
        .gamma_box()
        .map_or(0.0, |(lo, hi)| 0.5 * (lo + hi));
    Ok(FgpParams {
        beta,
        k: DMatrix::identity(r, r) * (0.9 * var),
        tau2: 0.1 * var,
        gamma,
    })
}

/// Fits the full model by EM from the standard initialization.
pub fn fit_em(structure: &FgpStructure, z: &DVector<f64>, cfg: &EmConfig) -> Result<FitReport> {
    fit_em_model(ModelRef::Full(structure), z, cfg)
}

pub fn fit_em_model(model: ModelRef, z: &DVector<f64>, cfg: &EmConfig) -> Result<FitReport> {
    let init = initial_params_model(model, z)?;
    fit_em_from(model, z, cfg, init)
}

/// EM from an explicit starting point.
pub fn fit_em_from(
    model: ModelRef,
    z: &DVector<f64>,
    cfg: &EmConfig,
    init: FgpParams,
) -> Result<FitReport> {
    let start = Instant::now();
    let zeta = cfg.zeta_for(model.r());
    let mean = z.sum() / model.n().max(1) as f64;
    let var_z = z
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (model.n().max(2) - 1) as f64;
    // tau^2 search box, generous on both sides of the data variance
    let log_tau2_box = (
        (1e-8 * var_z.max(1e-300)).ln(),
        (1e6 * var_z.max(1e-300)).ln(),
    );
    let gamma_box = model.gamma_box();

    let mut params = init;
    let mut ws = model.workspace(&params)?;
    let mut trace = vec![ws.nll(z)];
    let mut converged = false;
    let mut iterations = 0usize;

    for t in 0..cfg.max_iters {
        iterations = t + 1;
        let (mu, sigma) = e_step_ws(&ws, z);

        let r = model.r();
        let k_next = if r > 0 {
            let k = &sigma + &mu * mu.transpose();
            (&k + k.transpose()) * 0.5
        } else {
            DMatrix::zeros(0, 0)
        };

        let (tau2_next, gamma_next, beta_next) = if model.has_ggm() {
            let prof = ProfileObjective::new(model, z, &mu, &sigma, k_next.clone());
            let (t2, g2) =
                minimize_profile(&prof, params.tau2, params.gamma, log_tau2_box, gamma_box, cfg);
            let (_, beta) = prof.eval_detail(t2, g2)?;
            (t2, g2, beta)
        } else {
            // D = V^{-1} is parameter-free; only the closed-form updates act
            let target = z - model.basis().mul_vec(&mu);
            let beta = weighted_ls(&ws, &target)?;
            (params.tau2, params.gamma, beta)
        };

        let next = FgpParams {
            beta: beta_next,
            k: k_next,
            tau2: tau2_next,
            gamma: gamma_next,
        };
        let step = (next.flat() - params.flat()).norm();
        ws = model.workspace(&next)?;
        trace.push(ws.nll(z));
        params = next;
        if step < zeta {
            converged = true;
            break;
        }
    }

    Ok(FitReport {
        params,
        nll_trace: trace,
        iterations,
        converged,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Bounded simplex search for the profile objective: one run warm-started
/// at the previous iterate, one restart from its best point, and the
/// previous iterate kept as a fallback so the step never increases f.
fn minimize_profile(
    prof: &ProfileObjective,
    tau2_prev: f64,
    gamma_prev: f64,
    log_tau2_box: (f64, f64),
    gamma_box: Option<(f64, f64)>,
    cfg: &EmConfig,
) -> (f64, f64) {
    let with_gamma = gamma_box.is_some();
    let objective = |x: &[f64]| {
        let tau2 = x[0].exp();
        let gamma = if with_gamma { x[1] } else { gamma_prev };
        prof.eval(tau2, gamma)
    };

    let (mut lo, mut hi) = (vec![log_tau2_box.0], vec![log_tau2_box.1]);
    let mut x0 = vec![tau2_prev.max(1e-300).ln().clamp(log_tau2_box.0, log_tau2_box.1)];
    if let Some((glo, ghi)) = gamma_box {
        lo.push(glo);
        hi.push(ghi);
        x0.push(gamma_prev.clamp(glo, ghi));
    }

    let opts = NelderMeadOptions {
        max_evals: (cfg.inner_budget / 2).max(10),
        ..Default::default()
    };
    let run1 = minimize_bounded(objective, &x0, &lo, &hi, &opts);
    let run2 = minimize_bounded(objective, &run1.x, &lo, &hi, &opts);
    let best = if run2.f <= run1.f { run2 } else { run1 };

    let f_prev = objective(&x0);
    if f_prev <= best.f {
        (tau2_prev, gamma_prev)
    } else {
        let tau2 = best.x[0].exp();
        let gamma = if with_gamma { best.x[1] } else { gamma_prev };
        (tau2, gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{bisquare_matrix, incidence_matrix, BisquareSet, Lattice};
    use crate::car::{proximity_first_order, CarStructure};
    use crate::model::GgmStructure;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn small_structure(m: usize, seed: u64) -> (FgpStructure, DVector<f64>) {
        let lat = Lattice::line(0.0, 10.0, m).unwrap();
        let h = proximity_first_order(&lat);
        let car = CarStructure::with_identity_delta(h).unwrap();
        let incidence = incidence_matrix(&lat, lat.centers()).unwrap();
        let bs = BisquareSet::multiresolution_1d((0.0, 10.0), &[2]).unwrap();
        let s = bisquare_matrix(&bs, lat.centers());
        let structure = FgpStructure::new(
            DMatrix::from_element(m, 1, 1.0),
            s,
            Some(GgmStructure::new(incidence, car).unwrap()),
            DVector::from_element(m, 0.5),
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let z = DVector::from_fn(m, |i, _| {
            (i as f64 * 0.5).sin() * 2.0 + rng.sample::<f64, _>(StandardNormal)
        });
        (structure, z)
    }

    #[test]
    fn initial_params_follow_the_rules() {
        let (structure, _) = small_structure(12, 0);
        // variance exactly 20 around a zero mean
        let mut z = DVector::zeros(12);
        let spread = (20.0f64).sqrt();
        for i in 0..12 {
            z[i] = if i % 2 == 0 { spread } else { -spread };
        }
        let mean = z.sum() / 12.0;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 11.0;
        let p = initial_params(&structure, &z).unwrap();
        assert_relative_eq!(p.tau2, 0.1 * var, epsilon = 1e-12);
        assert_relative_eq!(p.k[(0, 0)], 0.9 * var, epsilon = 1e-12);
        assert_relative_eq!(p.k[(1, 1)], 0.9 * var, epsilon = 1e-12);
        assert_relative_eq!(p.k[(0, 1)], 0.0);
        // chain bounds are symmetric, so gamma starts at zero
        assert_relative_eq!(p.gamma, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let (structure, _) = small_structure(8, 0);
        let z = DVector::from_element(8, 3.0);
        match initial_params(&structure, &z) {
            Err(FgpError::DegenerateData) => {}
            other => panic!("expected degenerate data, got {other:?}"),
        }
    }

    #[test]
    fn em_trace_is_monotone_on_small_instances() {
        for seed in 0..10u64 {
            let (structure, z) = small_structure(16, seed);
            let cfg = EmConfig {
                max_iters: 25,
                inner_budget: 80,
                ..Default::default()
            };
            let report = fit_em(&structure, &z, &cfg).unwrap();
            for w in report.nll_trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-8,
                    "seed {seed}: trace increased {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn refit_from_converged_point_stops_immediately() {
        let (structure, z) = small_structure(20, 3);
        let cfg = EmConfig {
            max_iters: 400,
            zeta: Some(5e-5),
            inner_budget: 120,
            ..Default::default()
        };
        let first = fit_em(&structure, &z, &cfg).unwrap();
        assert!(first.converged, "first fit must converge");
        let second = fit_em_from(
            ModelRef::Full(&structure),
            &z,
            &cfg,
            first.params.clone(),
        )
        .unwrap();
        assert!(second.iterations <= 2, "took {}", second.iterations);
    }

    #[test]
    fn profile_gamma_recovers_independence() {
        // gamma = 0 truth: the profile objective over a gamma grid should
        // dip near zero, in the median over seeded replicates
        let m = 200;
        let lat = Lattice::line(0.0, 50.0, m).unwrap();
        let h = proximity_first_order(&lat);
        let car = CarStructure::with_identity_delta(h).unwrap();
        let incidence = incidence_matrix(&lat, lat.centers()).unwrap();
        let structure = FgpStructure::new(
            DMatrix::from_element(m, 1, 1.0),
            crate::basis::BasisMatrix::empty(m),
            Some(GgmStructure::new(incidence, car).unwrap()),
            DVector::from_element(m, 0.25),
        )
        .unwrap();
        let tau2_true: f64 = 1.0;
        let grid: Vec<f64> = (-4..=4).map(|k| k as f64 / 10.0).collect();
        let mut argmins = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(900 + seed);
            let z = DVector::from_fn(m, |_, _| {
                let xi: f64 = rng.sample(StandardNormal);
                let eps: f64 = rng.sample(StandardNormal);
                xi * tau2_true.sqrt() + eps * 0.5
            });
            let mu = DVector::zeros(0);
            let sigma = DMatrix::zeros(0, 0);
            let prof = ProfileObjective::new(
                ModelRef::Full(&structure),
                &z,
                &mu,
                &sigma,
                DMatrix::zeros(0, 0),
            );
            let best = grid
                .iter()
                .copied()
                .min_by(|a, b| {
                    prof.eval(tau2_true, *a)
                        .partial_cmp(&prof.eval(tau2_true, *b))
                        .unwrap()
                })
                .unwrap();
            argmins.push(best);
        }
        argmins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = argmins[argmins.len() / 2];
        assert!(
            median.abs() <= 0.1 + 1e-12,
            "median argmin gamma {median} not near zero"
        );
    }

    #[test]
    fn profile_objective_finite_at_truth() {
        let (structure, z) = small_structure(16, 7);
        let params = initial_params(&structure, &z).unwrap();
        let ws = ModelRef::Full(&structure).workspace(&params).unwrap();
        let (mu, sigma) = e_step_ws(&ws, &z);
        let prof = ProfileObjective::new(
            ModelRef::Full(&structure),
            &z,
            &mu,
            &sigma,
            params.k.clone(),
        );
        assert!(prof.eval(params.tau2, params.gamma).is_finite());
        // inadmissible gamma maps to +infinity rather than an error
        assert!(prof.eval(params.tau2, 5.0).is_infinite());
    }

    #[test]
    fn pure_low_rank_em_runs_without_ggm() {
        let n = 30;
        let bs = BisquareSet::multiresolution_1d((0.0, 10.0), &[3]).unwrap();
        let locs: Vec<_> = (0..n)
            .map(|i| crate::basis::Point::new_1d(i as f64 * 10.0 / (n - 1) as f64))
            .collect();
        let s = bisquare_matrix(&bs, &locs);
        let structure = FgpStructure::new(
            DMatrix::from_element(n, 1, 1.0),
            s,
            None,
            DVector::from_element(n, 0.3),
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let z = DVector::from_fn(n, |i, _| {
            (i as f64 * 0.4).cos() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let report = fit_em(
            &structure,
            &z,
            &EmConfig {
                max_iters: 40,
                ..Default::default()
            },
        )
        .unwrap();
        for w in report.nll_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8);
        }
    }
}
