//! Kriging under the fused model: predictive means and per-location
//! standard errors from the conditional distribution of the latent field
//! given the data.
//!
//! The mean is `X^P beta + S^P mu_eta + A^P mu_xi` with
//!
//! ```text
//! mu_eta = K S' C^{-1} (Z - X beta)
//! mu_xi  = Q^{-1} A' C^{-1} (Z - X beta)
//! ```
//!
//! Standard errors need only the diagonal of the predictive covariance;
//! it is assembled per location from the r x r conditional covariance of
//! eta, single diagonal entries of the conditional covariance of xi, and
//! the cross term. Columns of Q^{-1} are extracted on demand through
//! sparse solves, in batches, so no M x M dense object ever exists.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisMatrix;
use crate::error::{FgpError, Result};
use crate::likelihood::Ws;

/// What to predict and how.
#[derive(Debug, Clone)]
pub struct PredictionRequest {
    pub want_std: bool,
    pub batch_size: usize,
}

impl Default for PredictionRequest {
    fn default() -> Self {
        PredictionRequest {
            want_std: true,
            batch_size: 256,
        }
    }
}

/// Predictive output; `std` is present exactly when requested, `cells`
/// when the model carries a lattice.
#[derive(Debug, Clone)]
pub struct PredictionResult {
    pub mean: DVector<f64>,
    pub std: Option<DVector<f64>>,
    pub cells: Option<Vec<usize>>,
}

/// Posterior mean of the lattice coefficients,
/// `mu_xi = Q^{-1} A' C^{-1} (Z - X beta)`.
pub fn posterior_xi_mean(ws: &Ws, z: &DVector<f64>) -> Result<DVector<f64>> {
    let cells = ws.obs_cells().ok_or(FgpError::DimensionMismatch {
        context: "xi posterior requires a graphical component",
        expected: 1,
        found: 0,
    })?;
    let res = z - ws.x() * &ws.params().beta;
    let ci = ws.apply_c_inv_vec(&res);
    let mut at = DVector::zeros(ws.m());
    for (i, &c) in cells.iter().enumerate() {
        at[c] += ci[i];
    }
    Ok(ws.q_solve_vec(&at))
}

/// Conditional covariance of eta given the data:
/// `K - K S'C^{-1}S K` computed from cached r x r pieces.
pub fn posterior_eta_cov(ws: &Ws) -> DMatrix<f64> {
    let k = &ws.params().k;
    let g = ws.g();
    let fg = ws.inner_solve_mat(g);
    let sc = g - g * fg; // S'C^{-1}S
    let sigma = k - k * sc * k;
    (&sigma + sigma.transpose()) * 0.5
}

/// Row-level prediction: the caller supplies the design pieces evaluated
/// at the prediction locations (trend rows, basis rows, containing
/// cells). Location-based wrappers live with the model designs.
pub fn predict_rows(
    ws: &Ws,
    z: &DVector<f64>,
    xp: &DMatrix<f64>,
    sp: &BasisMatrix,
    cells: Option<&[usize]>,
    req: &PredictionRequest,
) -> Result<PredictionResult> {
    let m_pred = xp.nrows();
    if sp.n_rows() != m_pred {
        return Err(FgpError::DimensionMismatch {
            context: "prediction basis rows",
            expected: m_pred,
            found: sp.n_rows(),
        });
    }
    if let Some(c) = cells {
        if c.len() != m_pred {
            return Err(FgpError::DimensionMismatch {
                context: "prediction cells",
                expected: m_pred,
                found: c.len(),
            });
        }
    }
    if ws.has_ggm() != cells.is_some() {
        return Err(FgpError::DimensionMismatch {
            context: "prediction cells presence must match the model",
            expected: usize::from(ws.has_ggm()),
            found: usize::from(cells.is_some()),
        });
    }

    let params = ws.params();
    let res = z - ws.x() * &params.beta;
    let ci_res = ws.apply_c_inv_vec(&res);
    let mu_eta = &params.k * ws.basis().t_mul_vec(&ci_res);
    let mu_xi = if cells.is_some() {
        Some(posterior_xi_mean(ws, z)?)
    } else {
        None
    };

    let mut mean = xp * &params.beta;
    mean += sp.mul_vec(&mu_eta);
    if let (Some(mx), Some(cs)) = (&mu_xi, cells) {
        for i in 0..m_pred {
            mean[i] += mx[cs[i]];
        }
    }

    let std = if req.want_std {
        Some(prediction_std(ws, sp, cells, req.batch_size.max(1))?)
    } else {
        None
    };

    Ok(PredictionResult {
        mean,
        std,
        cells: cells.map(|c| c.to_vec()),
    })
}

fn prediction_std(
    ws: &Ws,
    sp: &BasisMatrix,
    cells: Option<&[usize]>,
    batch_size: usize,
) -> Result<DVector<f64>> {
    let m_pred = sp.n_rows();
    let r = ws.r();
    let sigma_eta = posterior_eta_cov(ws);
    let k = &ws.params().k;
    let obs_cells = ws.obs_cells();

    let mut std = DVector::zeros(m_pred);
    let mut batch_start = 0usize;
    while batch_start < m_pred {
        let batch_end = (batch_start + batch_size).min(m_pred);
        let rows: Vec<usize> = (batch_start..batch_end).collect();
        let sp_batch = sp.rows_dense(&rows);

        // per distinct cell in the batch: one Q column and one C^{-1} apply
        let mut cell_terms: std::collections::HashMap<usize, (f64, DVector<f64>)> =
            std::collections::HashMap::new();
        if let (Some(cs), Some(ocells)) = (cells, obs_cells) {
            for &c in &cs[batch_start..batch_end] {
                if cell_terms.contains_key(&c) {
                    continue;
                }
                let mut e_c = DVector::zeros(ws.m());
                e_c[c] = 1.0;
                let q_col = ws.q_solve_vec(&e_c);
                let alpha = q_col[c];
                // u = A q_col over the observations
                let u = DVector::from_fn(ocells.len(), |i, _| q_col[ocells[i]]);
                let w = ws.apply_c_inv_vec(&u);
                let sigma_xi_cc = alpha - u.dot(&w);
                // cross column: Sigma_{eta,xi} e_c = -K S' C^{-1} A Q^{-1} e_c
                let h_c = k * ws.basis().t_mul_vec(&w);
                cell_terms.insert(c, (sigma_xi_cc, h_c));
            }
        }

        for (b, i) in rows.iter().enumerate() {
            let s_i = sp_batch.row(b).transpose();
            let mut var = if r > 0 {
                (s_i.transpose() * &sigma_eta * &s_i)[(0, 0)]
            } else {
                0.0
            };
            if let Some(cs) = cells {
                let (sigma_xi_cc, h_c) = &cell_terms[&cs[*i]];
                var += sigma_xi_cc;
                var -= 2.0 * s_i.dot(h_c);
            }
            std[*i] = var.max(0.0).sqrt();
        }
        batch_start = batch_end;
    }
    Ok(std)
}

/// Marginal prior variance of the latent field at prediction rows:
/// `diag(S^P K S^P' + A^P Q^{-1} A^P')`. Used to sanity-bound the
/// posterior standard errors.
pub fn prior_variance(
    ws: &Ws,
    sp: &BasisMatrix,
    cells: Option<&[usize]>,
) -> Result<DVector<f64>> {
    let m_pred = sp.n_rows();
    let k = &ws.params().k;
    let mut out = DVector::zeros(m_pred);
    let rows: Vec<usize> = (0..m_pred).collect();
    let sp_dense = sp.rows_dense(&rows);
    for i in 0..m_pred {
        let s_i = sp_dense.row(i).transpose();
        if ws.r() > 0 {
            out[i] = (s_i.transpose() * k * &s_i)[(0, 0)];
        }
    }
    if let Some(cs) = cells {
        let mut seen: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        for (i, &c) in cs.iter().enumerate() {
            let alpha = *seen.entry(c).or_insert_with(|| {
                let mut e_c = DVector::zeros(ws.m());
                e_c[c] = 1.0;
                ws.q_solve_vec(&e_c)[c]
            });
            out[i] += alpha;
        }
    }
    Ok(out)
}
