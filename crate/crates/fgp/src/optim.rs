//! Derivative-free bounded minimization: Nelder-Mead simplex with box
//! constraints enforced by clamping. Objectives may return infinity to
//! veto a candidate, which keeps factorization failures optimizer-safe.

/// Options for [`minimize_bounded`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Initial simplex step as a fraction of the box width per dimension.
    pub init_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 200,
            f_tol: 1e-10,
            x_tol: 1e-10,
            init_step: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
    /// True when the minimizer sits against a box face.
    pub at_bound: bool,
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0`.
pub fn minimize_bounded<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NelderMeadOptions,
) -> OptimResult {
    let dim = x0.len();
    assert!(dim > 0 && lo.len() == dim && hi.len() == dim);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // initial simplex: x0 plus a step along each axis, stepping toward
    // the interior when x0 sits near the upper face
    let mut start = x0.to_vec();
    clamp(&mut start, lo, hi);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..dim {
        let width = (hi[i] - lo[i]).max(0.0);
        let mut step = opts.init_step * if width > 0.0 { width } else { start[i].abs().max(1.0) };
        if start[i] + step > hi[i] {
            step = -step;
        }
        let mut p = start.clone();
        p[i] += step;
        clamp(&mut p, lo, hi);
        let fp = eval(&p, &mut evals);
        simplex.push((p, fp));
    }

    let centroid = |s: &[(Vec<f64>, f64)]| -> Vec<f64> {
        let mut c = vec![0.0; dim];
        for (p, _) in &s[..dim] {
            for i in 0..dim {
                c[i] += p[i];
            }
        }
        for v in &mut c {
            *v /= dim as f64;
        }
        c
    };

    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = worst - best;
        let diam = (0..dim)
            .map(|i| {
                let vals: Vec<f64> = simplex.iter().map(|(p, _)| p[i]).collect();
                let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                mx - mn
            })
            .fold(0.0f64, f64::max);
        if spread.abs() <= opts.f_tol * (1.0 + best.abs()) && diam <= opts.x_tol.max(1e-14) {
            break;
        }

        let c = centroid(&simplex);
        let xw = simplex[dim].0.clone();
        let mut xr: Vec<f64> = (0..dim).map(|i| c[i] + alpha * (c[i] - xw[i])).collect();
        clamp(&mut xr, lo, hi);
        let fr = eval(&xr, &mut evals);

        if fr < simplex[0].1 {
            // try expansion
            let mut xe: Vec<f64> = (0..dim).map(|i| c[i] + gamma * (xr[i] - c[i])).collect();
            clamp(&mut xe, lo, hi);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            // contraction, outside or inside
            let (mut xc, toward): (Vec<f64>, f64) = if fr < simplex[dim].1 {
                ((0..dim).map(|i| c[i] + rho * (xr[i] - c[i])).collect(), fr)
            } else {
                ((0..dim).map(|i| c[i] + rho * (xw[i] - c[i])).collect(), simplex[dim].1)
            };
            clamp(&mut xc, lo, hi);
            let fc = eval(&xc, &mut evals);
            if fc < toward {
                simplex[dim] = (xc, fc);
            } else {
                // shrink toward the best vertex
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..dim {
                        v.0[i] = x_best[i] + sigma * (v.0[i] - x_best[i]);
                    }
                    clamp(&mut v.0, lo, hi);
                    v.1 = eval(&v.0, &mut evals);
                    if evals >= opts.max_evals {
                        break;
                    }
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, fv) = simplex[0].clone();
    let at_bound = x
        .iter()
        .enumerate()
        .any(|(i, &v)| {
            let w = (hi[i] - lo[i]).max(1e-300);
            (v - lo[i]).abs() <= 1e-6 * w || (hi[i] - v).abs() <= 1e-6 * w
        });
    OptimResult {
        converged: evals < opts.max_evals,
        x,
        f: fv,
        evals,
        at_bound,
    }
}
