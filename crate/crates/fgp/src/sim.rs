//! Simulation and benchmark harness: Gaussian-process data generation
//! under exponential or sinusoidal covariances, dense-kriging baselines
//! with true (EK) or fitted exponential (MK) covariances, MSPE scoring,
//! scenario runners, and the likelihood-timing benchmark.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::Point;
use crate::block::{partition_lattice, BlockModel, BlockWorkspace};
use crate::design::{DesignContext, DomainSpec, FgpDesign, ProximityRule, TrendSpec};
use crate::em::{fit_em, EmConfig};
use crate::error::{FgpError, Result};
use crate::likelihood::{ModelRef, Workspace};
use crate::linalg::DenseChol;
use crate::model::FgpParams;
use crate::optim::{minimize_bounded, NelderMeadOptions, OptimResult};
use crate::predict::PredictionRequest;

/// Dense simulation bound.
pub const MAX_SIM_SIZE: usize = 20_000;
/// Dense kriging bound.
pub const MAX_KRIGING_SIZE: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovFamily {
    Exponential,
    /// sigma^2 sin(h/phi) phi / h; a valid covariance on the line only.
    Sinusoidal,
}

#[derive(Debug, Clone, Copy)]
pub struct CovarianceSpec {
    pub family: CovFamily,
    pub sigma2: f64,
    pub phi: f64,
}

/// Covariance value at separation `h >= 0`.
pub fn cov_eval(spec: &CovarianceSpec, h: f64) -> f64 {
    debug_assert!(h >= 0.0);
    match spec.family {
        CovFamily::Exponential => spec.sigma2 * (-h / spec.phi).exp(),
        CovFamily::Sinusoidal => {
            if h == 0.0 {
                spec.sigma2
            } else {
                let t = h / spec.phi;
                spec.sigma2 * t.sin() / t
            }
        }
    }
}

fn check_family_dim(spec: &CovarianceSpec, locations: &[Point]) -> Result<()> {
    if spec.family == CovFamily::Sinusoidal && locations.iter().any(|p| p.y != 0.0) {
        return Err(FgpError::InvalidCovariance(
            "sinusoidal covariance is valid in one dimension only".into(),
        ));
    }
    if !(spec.sigma2 > 0.0) || !(spec.phi > 0.0) {
        return Err(FgpError::InvalidCovariance(
            "covariance parameters must be positive".into(),
        ));
    }
    Ok(())
}

fn cov_matrix(spec: &CovarianceSpec, a: &[Point], b: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| cov_eval(spec, a[i].dist(&b[j])))
}

/// Draws the latent field and noisy data at `locations`; fully
/// determined by `seed`.
pub fn simulate_gp(
    spec: &CovarianceSpec,
    locations: &[Point],
    sigma2_eps: f64,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    simulate_gp_with(spec, locations, sigma2_eps, &mut rng)
}

pub(crate) fn simulate_gp_with(
    spec: &CovarianceSpec,
    locations: &[Point],
    sigma2_eps: f64,
    rng: &mut ChaCha20Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = locations.len();
    if n > MAX_SIM_SIZE {
        return Err(FgpError::SimulationTooLarge {
            n,
            max: MAX_SIM_SIZE,
        });
    }
    check_family_dim(spec, locations)?;
    let mut c = cov_matrix(spec, locations, locations);
    let jitter = 1e-10 * spec.sigma2;
    for i in 0..n {
        c[(i, i)] += jitter;
    }
    let l = DenseChol::factor(&c)?;
    let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = l.l() * w;
    let noise_sd = sigma2_eps.max(0.0).sqrt();
    let z = DVector::from_fn(n, |i, _| y[i] + noise_sd * rng.sample::<f64, _>(StandardNormal));
    Ok((y, z))
}

/// Dense kriging of the latent field with a known covariance: the EK
/// baseline when `spec` is the truth, the MK procedure when `spec` was
/// fitted. A constant mean is profiled by generalized least squares
/// unless `zero_mean` is set.
pub fn exact_kriging(
    spec: &CovarianceSpec,
    sigma2_eps: f64,
    obs: &[Point],
    z: &DVector<f64>,
    pred: &[Point],
    zero_mean: bool,
) -> Result<DVector<f64>> {
    let n = obs.len();
    if n > MAX_KRIGING_SIZE {
        return Err(FgpError::SimulationTooLarge {
            n,
            max: MAX_KRIGING_SIZE,
        });
    }
    check_family_dim(spec, obs)?;
    let mut c = cov_matrix(spec, obs, obs);
    for i in 0..n {
        c[(i, i)] += sigma2_eps;
    }
    let fac = DenseChol::factor_with_jitter(&c, 1e-10)?;
    let beta = if zero_mean {
        0.0
    } else {
        let ones = DVector::from_element(n, 1.0);
        let ci_one = fac.solve_vec(&ones);
        ones.dot(&fac.solve_vec(z)) / ones.dot(&ci_one)
    };
    let res = z - DVector::from_element(n, beta);
    let ci_res = fac.solve_vec(&res);
    let cross = cov_matrix(spec, pred, obs);
    Ok(DVector::from_element(pred.len(), beta) + cross * ci_res)
}

/// Maximum-likelihood fit of an exponential covariance with the noise
/// variance held at its known value.
#[derive(Debug, Clone, Copy)]
pub struct ExpMlFit {
    pub sigma2: f64,
    pub phi: f64,
    pub converged: bool,
    pub at_bound: bool,
}

pub fn fit_exponential_ml(
    obs: &[Point],
    z: &DVector<f64>,
    sigma2_eps: f64,
) -> Result<ExpMlFit> {
    let n = obs.len();
    if n < 2 {
        return Err(FgpError::DegenerateData);
    }
    let mean = z.sum() / n as f64;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(FgpError::DegenerateData);
    }
    let mut span = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            span = span.max(obs[i].dist(&obs[j]));
        }
    }
    if !(span > 0.0) {
        return Err(FgpError::DegenerateData);
    }

    let nll = |x: &[f64]| -> f64 {
        let spec = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: x[0].exp(),
            phi: x[1].exp(),
        };
        let mut c = cov_matrix(&spec, obs, obs);
        for i in 0..n {
            c[(i, i)] += sigma2_eps;
        }
        let fac = match DenseChol::factor(&c) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        let ones = DVector::from_element(n, 1.0);
        let ci_one = fac.solve_vec(&ones);
        let beta = ones.dot(&fac.solve_vec(z)) / ones.dot(&ci_one);
        let res = z - DVector::from_element(n, beta);
        0.5 * (res.dot(&fac.solve_vec(&res)) + fac.logdet())
    };

    let lo = [(1e-4 * var).ln(), (1e-3 * span).ln()];
    let hi = [(1e4 * var).ln(), (10.0 * span).ln()];
    let start = [
        (var - sigma2_eps).max(0.1 * var).ln(),
        (span / 10.0).ln(),
    ];
    let opts = NelderMeadOptions {
        max_evals: 200,
        ..Default::default()
    };
    let first = minimize_bounded(nll, &start, &lo, &hi, &opts);
    let second = minimize_bounded(nll, &first.x, &lo, &hi, &opts);
    let best: OptimResult = if second.f <= first.f { second } else { first };
    Ok(ExpMlFit {
        sigma2: best.x[0].exp(),
        phi: best.x[1].exp(),
        converged: best.f.is_finite(),
        at_bound: best.at_bound,
    })
}

/// Mean-squared prediction error over a holdout set.
pub fn mspe(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(FgpError::EmptyHoldout);
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(sum / truth.len() as f64)
}

/// One misspecification scenario: simulate on a line lattice, hold out a
/// fraction of cells, predict with EK, MK, and FGP, and score MSPE.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub cells: usize,
    pub domain: (f64, f64),
    pub holdout_fraction: f64,
    pub sigma2_eps: f64,
    pub covariance: CovarianceSpec,
    pub replicates: usize,
    pub seed: u64,
    pub basis_counts: Vec<usize>,
    pub proximity_d: f64,
    pub em: EmConfig,
}

impl ScenarioConfig {
    /// Scenario 1 defaults: exponential truth on 450 cells of [0, 100].
    pub fn scenario1(seed: u64, replicates: usize) -> Self {
        ScenarioConfig {
            cells: 450,
            domain: (0.0, 100.0),
            holdout_fraction: 0.1,
            sigma2_eps: 4.0,
            covariance: CovarianceSpec {
                family: CovFamily::Exponential,
                sigma2: 16.0,
                phi: 10.0,
            },
            replicates,
            seed,
            basis_counts: vec![2, 4, 8],
            proximity_d: 0.3,
            em: EmConfig::default(),
        }
    }

    /// Scenario 2: same design, sinusoidal truth.
    pub fn scenario2(seed: u64, replicates: usize) -> Self {
        ScenarioConfig {
            covariance: CovarianceSpec {
                family: CovFamily::Sinusoidal,
                sigma2: 16.0,
                phi: 0.5,
            },
            ..Self::scenario1(seed, replicates)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ek,
    Mk,
    Fgp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ek, Method::Mk, Method::Fgp];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ek => "ek",
            Method::Mk => "mk",
            Method::Fgp => "fgp",
        }
    }
}

/// MSPE for the three methods in one replicate.
pub type ReplicateMspe = [f64; 3];

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub ave_mspe: f64,
    pub std_mspe: f64,
    /// Ave[MSPE of EK] / Ave[MSPE of this method].
    pub rel_efficiency: f64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub summaries: Vec<MethodSummary>,
    pub per_run: Vec<Option<ReplicateMspe>>,
    pub failures: Vec<(usize, String)>,
}

fn holdout_split(m: usize, fraction: f64, rng: &mut ChaCha20Rng) -> (Vec<usize>, Vec<usize>) {
    let k = ((m as f64 * fraction).round() as usize).clamp(1, m - 1);
    let mut idx: Vec<usize> = (0..m).collect();
    // partial Fisher-Yates: the first k entries become the holdout
    for i in 0..k {
        let j = rng.random_range(i..m);
        idx.swap(i, j);
    }
    let mut holdout = idx[..k].to_vec();
    holdout.sort_unstable();
    let mut mask = vec![false; m];
    for &h in &holdout {
        mask[h] = true;
    }
    let observed: Vec<usize> = (0..m).filter(|&i| !mask[i]).collect();
    (holdout, observed)
}

fn run_replicate(
    cfg: &ScenarioConfig,
    ctx: &DesignContext,
    replicate: usize,
) -> Result<ReplicateMspe> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(replicate as u64));
    let centers = ctx.lattice().centers().to_vec();
    let (y, z) = simulate_gp_with(&cfg.covariance, &centers, cfg.sigma2_eps, &mut rng)?;
    let (holdout, observed) = holdout_split(cfg.cells, cfg.holdout_fraction, &mut rng);

    let obs_locs: Vec<Point> = observed.iter().map(|&i| centers[i]).collect();
    let pred_locs: Vec<Point> = holdout.iter().map(|&i| centers[i]).collect();
    let z_obs = DVector::from_fn(observed.len(), |k, _| z[observed[k]]);
    let y_hold: Vec<f64> = holdout.iter().map(|&i| y[i]).collect();

    // EK: the true covariance and parameters
    let ek_pred = exact_kriging(
        &cfg.covariance,
        cfg.sigma2_eps,
        &obs_locs,
        &z_obs,
        &pred_locs,
        false,
    )?;
    let ek = mspe(&y_hold, ek_pred.as_slice())?;

    // MK: exponential covariance fitted by maximum likelihood
    let fit = fit_exponential_ml(&obs_locs, &z_obs, cfg.sigma2_eps)?;
    let mk_spec = CovarianceSpec {
        family: CovFamily::Exponential,
        sigma2: fit.sigma2,
        phi: fit.phi,
    };
    let mk_pred = exact_kriging(
        &mk_spec,
        cfg.sigma2_eps,
        &obs_locs,
        &z_obs,
        &pred_locs,
        false,
    )?;
    let mk = mspe(&y_hold, mk_pred.as_slice())?;

    // FGP: EM fit and kriging under the fused model
    let structure = ctx.structure_for(
        &obs_locs,
        DVector::from_element(obs_locs.len(), cfg.sigma2_eps),
    )?;
    let report = fit_em(&structure, &z_obs, &cfg.em)?;
    let pred = ctx.predict(
        ModelRef::Full(&structure),
        &report.params,
        &z_obs,
        &pred_locs,
        &PredictionRequest {
            want_std: false,
            batch_size: 256,
        },
    )?;
    let fgp = mspe(&y_hold, pred.mean.as_slice())?;

    Ok([ek, mk, fgp])
}

/// Runs every replicate (concurrently when a rayon pool is available;
/// aggregation order is fixed) and summarizes MSPE per method.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<BenchResult> {
    let design = FgpDesign {
        domain: DomainSpec::Line {
            a: cfg.domain.0,
            b: cfg.domain.1,
            cells: cfg.cells,
        },
        basis_counts: cfg.basis_counts.clone(),
        proximity: Some(ProximityRule::Threshold {
            d: cfg.proximity_d,
        }),
        trend: TrendSpec::Constant,
    };
    let ctx = DesignContext::new(design)?;

    let outcomes: Vec<std::result::Result<ReplicateMspe, String>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, &ctx, rep).map_err(|e| e.to_string()))
        .collect();

    let mut per_run = Vec::with_capacity(cfg.replicates);
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => per_run.push(Some(v)),
            Err(e) => {
                per_run.push(None);
                failures.push((rep, e));
            }
        }
    }

    let ok: Vec<&ReplicateMspe> = per_run.iter().flatten().collect();
    if ok.is_empty() {
        return Err(FgpError::EmptyHoldout);
    }
    let l = ok.len() as f64;
    let mut summaries = Vec::new();
    let ave = |idx: usize| ok.iter().map(|v| v[idx]).sum::<f64>() / l;
    let ek_ave = ave(0);
    for (idx, method) in Method::ALL.iter().enumerate() {
        let a = ave(idx);
        let var = if ok.len() > 1 {
            ok.iter().map(|v| (v[idx] - a) * (v[idx] - a)).sum::<f64>() / (l - 1.0)
        } else {
            0.0
        };
        summaries.push(MethodSummary {
            method: *method,
            ave_mspe: a,
            std_mspe: var.sqrt(),
            rel_efficiency: ek_ave / a,
        });
    }
    Ok(BenchResult {
        summaries,
        per_run,
        failures,
    })
}

/// Timing-benchmark configuration: lattice sizes and block counts, with a
/// memory budget guarding against oversize rows.
#[derive(Debug, Clone)]
pub struct TimingConfig {
    pub sizes: Vec<usize>,
    pub blocks: Vec<usize>,
    pub domain: (f64, f64),
    pub basis_counts: Vec<usize>,
    pub seed: u64,
    pub mem_budget_bytes: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            sizes: vec![10_000, 100_000, 400_000],
            blocks: vec![1, 8],
            domain: (0.0, 2000.0),
            basis_counts: vec![16, 64, 256],
            seed: 7,
            mem_budget_bytes: 6 * 1024 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TimingRow {
    pub m: usize,
    pub j: usize,
    /// `None` marks a row skipped by the memory guard.
    pub seconds: Option<f64>,
}

/// Wall time of a single negative log-likelihood evaluation (factor
/// construction included) for each lattice size and block count. The
/// measured value is the better of two runs.
pub fn timing_benchmark(cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &m in &cfg.sizes {
        // rough structure footprint; likelihood work is linear on a line
        let r: usize = cfg.basis_counts.iter().sum();
        let est_bytes = 8 * (3 * m * r / cfg.basis_counts.len().max(1) + 24 * m);
        if est_bytes > cfg.mem_budget_bytes {
            for &j in &cfg.blocks {
                rows.push(TimingRow {
                    m,
                    j,
                    seconds: None,
                });
            }
            continue;
        }

        let design = FgpDesign {
            domain: DomainSpec::Line {
                a: cfg.domain.0,
                b: cfg.domain.1,
                cells: m,
            },
            basis_counts: cfg.basis_counts.clone(),
            proximity: Some(ProximityRule::FirstOrder),
            trend: TrendSpec::Constant,
        };
        let ctx = DesignContext::new(design)?;
        let centers = ctx.lattice().centers().to_vec();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let structure = ctx.structure_for(&centers, DVector::from_element(m, 1.0))?;
        let params = FgpParams {
            beta: DVector::zeros(1),
            k: DMatrix::identity(ctx.r(), ctx.r()),
            tau2: 1.0,
            gamma: 0.2,
        };

        for &j in &cfg.blocks {
            let seconds = if j <= 1 {
                let mut best = f64::INFINITY;
                for _ in 0..2 {
                    let t = Instant::now();
                    let ws = Workspace::new(&structure, params.clone())?;
                    let _nll = ws.nll(&z);
                    best = best.min(t.elapsed().as_secs_f64());
                }
                best
            } else {
                let partition = partition_lattice(ctx.lattice(), j)?;
                let model = BlockModel::new(&structure, &partition)?;
                let mut best = f64::INFINITY;
                for _ in 0..2 {
                    let t = Instant::now();
                    let ws = BlockWorkspace::new(&model, params.clone())?;
                    let _nll = ws.nll(&z);
                    best = best.min(t.elapsed().as_secs_f64());
                }
                best
            };
            rows.push(TimingRow {
                m,
                j,
                seconds: Some(seconds),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cov_eval_matches_closed_forms() {
        let exp = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 16.0,
            phi: 10.0,
        };
        assert_relative_eq!(cov_eval(&exp, 0.0), 16.0);
        assert_relative_eq!(cov_eval(&exp, 10.0), 16.0 * (-1.0f64).exp(), epsilon = 1e-12);

        let sin = CovarianceSpec {
            family: CovFamily::Sinusoidal,
            sigma2: 16.0,
            phi: 0.5,
        };
        assert_relative_eq!(cov_eval(&sin, 1e-12), 16.0, epsilon = 1e-9);
        assert_relative_eq!(
            cov_eval(&sin, std::f64::consts::PI * 0.5),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn simulation_is_deterministic_and_scales() {
        let locs: Vec<Point> = (0..40).map(|i| Point::new_1d(i as f64)).collect();
        let spec = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 16.0,
            phi: 10.0,
        };
        let (y1, z1) = simulate_gp(&spec, &locs, 4.0, 99).unwrap();
        let (y2, z2) = simulate_gp(&spec, &locs, 4.0, 99).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(z1, z2);

        // near-zero process variance leaves only noise
        let tiny = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 1e-12,
            phi: 10.0,
        };
        let (y, z) = simulate_gp(&tiny, &locs, 4.0, 5).unwrap();
        assert!(y.norm() < 1e-4);
        assert!(z.norm() > 1.0);
    }

    #[test]
    fn simulated_variance_in_lln_band() {
        let locs: Vec<Point> = (0..450)
            .map(|i| Point::new_1d(i as f64 * 100.0 / 449.0))
            .collect();
        let spec = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 16.0,
            phi: 10.0,
        };
        let mut mean_var = 0.0;
        let reps = 50;
        for seed in 0..reps {
            let (y, _) = simulate_gp(&spec, &locs, 4.0, seed).unwrap();
            let m = y.sum() / y.len() as f64;
            mean_var += y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.len() - 1) as f64;
        }
        mean_var /= reps as f64;
        assert!(
            (12.0..=20.0).contains(&mean_var),
            "average sample variance {mean_var}"
        );
    }

    #[test]
    fn sinusoidal_rejected_in_two_dimensions() {
        let locs = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)];
        let spec = CovarianceSpec {
            family: CovFamily::Sinusoidal,
            sigma2: 1.0,
            phi: 0.5,
        };
        assert!(simulate_gp(&spec, &locs, 1.0, 0).is_err());
    }

    #[test]
    fn kriging_interpolates_without_noise() {
        let locs: Vec<Point> = (0..20).map(|i| Point::new_1d(i as f64)).collect();
        let spec = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 4.0,
            phi: 5.0,
        };
        let (y, _) = simulate_gp(&spec, &locs, 0.0, 3).unwrap();
        let pred = exact_kriging(&spec, 0.0, &locs, &y, &locs[3..5], false).unwrap();
        assert_relative_eq!(pred[0], y[3], epsilon = 1e-5);
        assert_relative_eq!(pred[1], y[4], epsilon = 1e-5);
    }

    #[test]
    fn kriging_midpoint_symmetry() {
        // two observations symmetric about the prediction point get equal
        // weight, so swapping the data leaves the prediction unchanged
        let obs = vec![Point::new_1d(-1.0), Point::new_1d(1.0)];
        let spec = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 2.0,
            phi: 3.0,
        };
        let z1 = DVector::from_vec(vec![1.0, 3.0]);
        let z2 = DVector::from_vec(vec![3.0, 1.0]);
        let p1 = exact_kriging(&spec, 0.5, &obs, &z1, &[Point::new_1d(0.0)], false).unwrap();
        let p2 = exact_kriging(&spec, 0.5, &obs, &z2, &[Point::new_1d(0.0)], false).unwrap();
        assert_relative_eq!(p1[0], p2[0], epsilon = 1e-12);
    }

    #[test]
    fn exponential_ml_recovers_scale_ordering() {
        // doubling the data roughly quadruples the fitted variance
        let locs: Vec<Point> = (0..120).map(|i| Point::new_1d(i as f64 * 0.8)).collect();
        let spec = CovarianceSpec {
            family: CovFamily::Exponential,
            sigma2: 16.0,
            phi: 10.0,
        };
        let (_, z) = simulate_gp(&spec, &locs, 1.0, 21).unwrap();
        let fit1 = fit_exponential_ml(&locs, &z, 1.0).unwrap();
        let z2 = &z * 2.0;
        let fit2 = fit_exponential_ml(&locs, &z2, 1.0).unwrap();
        let ratio = fit2.sigma2 / fit1.sigma2;
        assert!(
            (2.5..=6.0).contains(&ratio),
            "variance ratio {ratio} (sigma2 {} -> {})",
            fit1.sigma2,
            fit2.sigma2
        );
    }

    #[test]
    fn short_white_noise_flags_boundary() {
        let locs: Vec<Point> = (0..10).map(|i| Point::new_1d(i as f64 * 10.0)).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let z = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = fit_exponential_ml(&locs, &z, 0.5).unwrap();
        // white-ish noise pushes the range toward a box face; either way
        // the call reports rather than fails
        assert!(fit.sigma2.is_finite() && fit.phi.is_finite());
    }

    #[test]
    fn mspe_basics() {
        assert_relative_eq!(mspe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(mspe(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 4.0);
        assert!(mspe(&[], &[]).is_err());
    }

    #[test]
    fn holdout_split_counts() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (h, o) = holdout_split(450, 0.1, &mut rng);
        assert_eq!(h.len(), 45);
        assert_eq!(o.len(), 405);
        let mut all: Vec<usize> = h.iter().chain(o.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..450).collect::<Vec<_>>());
    }
}

#[cfg(test)]
mod probe {
    use super::*;

    #[test]
    #[ignore]
    fn scenario_probe() {
        for (name, cfg) in [
            ("scenario1", ScenarioConfig::scenario1(1000, 5)),
            ("scenario2", ScenarioConfig::scenario2(2000, 5)),
        ] {
            let t = std::time::Instant::now();
            let res = run_scenario(&cfg).unwrap();
            println!("== {name} ({:.1}s) ==", t.elapsed().as_secs_f64());
            for s in &res.summaries {
                println!(
                    "{:>4}: ave {:8.4}  std {:8.4}  releff {:6.3}",
                    s.method.name(),
                    s.ave_mspe,
                    s.std_mspe,
                    s.rel_efficiency
                );
            }
            for f in &res.failures {
                println!("failure rep {}: {}", f.0, f.1);
            }
        }
    }
}
