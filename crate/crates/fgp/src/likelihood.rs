//! Likelihood evaluation through nested Woodbury identities.
//!
//! The data covariance is `C = S K S' + A Q^{-1} A' + V`. Writing
//! `D = (A Q^{-1} A' + V)^{-1}`, both the inverse and the log-determinant
//! of `C` reduce to quantities of size r and sparse quantities of size M:
//!
//! ```text
//! C^{-1}   = D - D S (K^{-1} + S'DS)^{-1} S'D
//! D        = V^{-1} - V^{-1} A (Q + A'V^{-1}A)^{-1} A'V^{-1}
//! log|C|   = log|K^{-1} + S'DS| + log|K| + log|D^{-1}|
//! log|D^-1|= log|Q + A'V^{-1}A| - log|Q| + log|V|
//! ```
//!
//! A [`Workspace`] holds the two sparse factors and the r x r pieces for
//! one parameter value; solves against it never allocate an n x n or
//! M x M dense array.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisMatrix, Incidence};
use crate::block::{BlockModel, BlockWorkspace};
use crate::error::{FgpError, Result};
use crate::linalg::{DenseChol, SparseChol};
use crate::model::{FgpParams, FgpStructure};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Jitter scale for covariance factors that are PSD by construction but
/// may be numerically rank-deficient.
pub(crate) const K_JITTER: f64 = 1e-10;

/// Applies `D = V^{-1} - V^{-1} A (Q + A'V^{-1}A)^{-1} A'V^{-1}` given its
/// factored pieces. With no graphical component `D` collapses to `V^{-1}`.
pub(crate) fn apply_d_parts(
    v_inv: &DVector<f64>,
    ggm: Option<(&Incidence, &SparseChol)>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let vi = v.component_mul(v_inv);
    match ggm {
        None => vi,
        Some((a, cap)) => {
            let w = a.t_mul_vec(&vi);
            let x = cap.solve_vec(&w);
            let back = a.mul_vec(&x).component_mul(v_inv);
            vi - back
        }
    }
}

/// Factored quantities for likelihood work at one parameter value.
/// Immutable once built; concurrent solves against it are safe.
#[derive(Debug)]
pub struct Workspace<'a> {
    structure: &'a FgpStructure,
    params: FgpParams,
    v_inv: DVector<f64>,
    logdet_v: f64,
    q_fac: Option<SparseChol>,
    cap_fac: Option<SparseChol>,
    k_chol: Option<DenseChol>,
    k_inv: DMatrix<f64>,
    /// S'DS
    g: DMatrix<f64>,
    /// factor of K^{-1} + S'DS
    inner_fac: DenseChol,
}

impl<'a> Workspace<'a> {
    pub fn new(structure: &'a FgpStructure, params: FgpParams) -> Result<Self> {
        params.validate(structure)?;
        let v_inv = structure.v_eps.map(|v| 1.0 / v);
        let logdet_v = structure.v_eps.iter().map(|v| v.ln()).sum();

        let (q_fac, cap_fac) = match &structure.ggm {
            Some(g) => {
                let q = g.car.precision(params.tau2, params.gamma)?;
                let q_fac = SparseChol::factor(&q)?;
                let cap = q.plus_diagonal(&g.incidence.t_mul_vec(&v_inv))?;
                let cap_fac = SparseChol::factor(&cap)?;
                (Some(q_fac), Some(cap_fac))
            }
            None => (None, None),
        };

        let r = structure.r();
        let (k_chol, k_inv) = if r > 0 {
            let kc = DenseChol::factor_with_jitter(&params.k, K_JITTER)?;
            let ki = kc.inverse();
            (Some(kc), ki)
        } else {
            (None, DMatrix::zeros(0, 0))
        };

        // G = S'DS, one D application per basis column
        let n = structure.n();
        let mut g = DMatrix::zeros(r, r);
        let mut col = DVector::zeros(n);
        for j in 0..r {
            col.fill(0.0);
            let (idx, val) = structure.basis.col(j);
            for (&i, &v) in idx.iter().zip(val) {
                col[i] = v;
            }
            let ggm_parts = structure
                .ggm
                .as_ref()
                .map(|s| (&s.incidence, cap_fac.as_ref().unwrap()));
            let d_col = apply_d_parts(&v_inv, ggm_parts, &col);
            g.set_column(j, &structure.basis.t_mul_vec(&d_col));
        }
        g = (&g + g.transpose()) * 0.5;

        let inner = &k_inv + &g;
        let inner_fac = DenseChol::factor_with_jitter(&inner, K_JITTER)?;

        Ok(Workspace {
            structure,
            params,
            v_inv,
            logdet_v,
            q_fac,
            cap_fac,
            k_chol,
            k_inv,
            g,
            inner_fac,
        })
    }

    pub fn structure(&self) -> &FgpStructure {
        self.structure
    }

    pub fn params(&self) -> &FgpParams {
        &self.params
    }

    pub fn has_ggm(&self) -> bool {
        self.structure.ggm.is_some()
    }

    /// S'DS
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn k_inv(&self) -> &DMatrix<f64> {
        &self.k_inv
    }

    /// (K^{-1} + S'DS)^{-1} v
    pub fn inner_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.inner_fac.solve_vec(v)
    }

    pub fn inner_solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.inner_fac.solve_mat(m)
    }

    /// D v without forming D.
    pub fn apply_d_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let ggm = self
            .structure
            .ggm
            .as_ref()
            .map(|s| (&s.incidence, self.cap_fac.as_ref().unwrap()));
        apply_d_parts(&self.v_inv, ggm, v)
    }

    pub fn apply_d_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = DVector::from_column_slice(b.column(j).as_slice());
            out.set_column(j, &self.apply_d_vec(&col));
        }
        out
    }

    /// C^{-1} v via the two nested Woodbury identities.
    pub fn apply_c_inv_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let dv = self.apply_d_vec(v);
        if self.structure.r() == 0 {
            return dv;
        }
        let t = self.structure.basis.t_mul_vec(&dv);
        let u = self.inner_fac.solve_vec(&t);
        let w = self.structure.basis.mul_vec(&u);
        let dw = self.apply_d_vec(&w);
        dv - dw
    }

    pub fn apply_c_inv_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = DVector::from_column_slice(b.column(j).as_slice());
            out.set_column(j, &self.apply_c_inv_vec(&col));
        }
        out
    }

    /// log|D^{-1}| = log|Q + A'V^{-1}A| - log|Q| + log|V|
    pub fn log_det_d_inv(&self) -> f64 {
        match (&self.cap_fac, &self.q_fac) {
            (Some(cap), Some(q)) => cap.logdet() - q.logdet() + self.logdet_v,
            _ => self.logdet_v,
        }
    }

    /// log|C| assembled from the small and sparse determinants.
    pub fn log_det_c(&self) -> f64 {
        let low_rank = match &self.k_chol {
            Some(kc) => self.inner_fac.logdet() + kc.logdet(),
            None => 0.0,
        };
        low_rank + self.log_det_d_inv()
    }

    /// Q^{-1} v. Requires the graphical component.
    pub fn q_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.q_fac
            .as_ref()
            .expect("graphical component required")
            .solve_vec(v)
    }

    /// Negative log-likelihood of the data, additive constant included so
    /// the value equals the exact negative log-density.
    pub fn nll(&self, z: &DVector<f64>) -> f64 {
        let res = z - &self.structure.x * &self.params.beta;
        let quad = res.dot(&self.apply_c_inv_vec(&res));
        0.5 * (quad + self.log_det_c()) + 0.5 * self.structure.n() as f64 * LN_2PI
    }
}

/// D B for a matrix of right-hand sides.
pub fn apply_d(ws: &Workspace, b: &DMatrix<f64>) -> DMatrix<f64> {
    ws.apply_d_mat(b)
}

/// C^{-1} b.
pub fn apply_c_inverse(ws: &Workspace, b: &DVector<f64>) -> DVector<f64> {
    ws.apply_c_inv_vec(b)
}

/// log|C|.
pub fn log_det_c(ws: &Workspace) -> f64 {
    ws.log_det_c()
}

/// One-shot negative log-likelihood.
pub fn neg_log_likelihood(
    structure: &FgpStructure,
    params: &FgpParams,
    z: &DVector<f64>,
) -> Result<f64> {
    if z.len() != structure.n() {
        return Err(FgpError::DimensionMismatch {
            context: "likelihood data",
            expected: structure.n(),
            found: z.len(),
        });
    }
    Ok(Workspace::new(structure, params.clone())?.nll(z))
}

/// A fused Gaussian process model seen by fitting and prediction: either
/// the full covariance or its block-diagonal approximation.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Full(&'a FgpStructure),
    Block(&'a BlockModel),
}

impl<'a> ModelRef<'a> {
    pub fn n(&self) -> usize {
        match self {
            ModelRef::Full(s) => s.n(),
            ModelRef::Block(b) => b.n(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            ModelRef::Full(s) => s.p(),
            ModelRef::Block(b) => b.p(),
        }
    }

    pub fn r(&self) -> usize {
        match self {
            ModelRef::Full(s) => s.r(),
            ModelRef::Block(b) => b.r(),
        }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        match self {
            ModelRef::Full(s) => &s.x,
            ModelRef::Block(b) => b.x(),
        }
    }

    pub fn basis(&self) -> &BasisMatrix {
        match self {
            ModelRef::Full(s) => &s.basis,
            ModelRef::Block(b) => b.basis(),
        }
    }

    pub fn v_eps(&self) -> &DVector<f64> {
        match self {
            ModelRef::Full(s) => &s.v_eps,
            ModelRef::Block(b) => b.v_eps(),
        }
    }

    pub fn has_ggm(&self) -> bool {
        match self {
            ModelRef::Full(s) => s.ggm.is_some(),
            ModelRef::Block(b) => b.num_blocks() > 0,
        }
    }

    /// Closed optimization box for gamma, shrunk inside the open interval.
    /// Block models intersect the per-block intervals.
    pub fn gamma_box(&self) -> Option<(f64, f64)> {
        match self {
            ModelRef::Full(s) => s.ggm.as_ref().and_then(|g| g.car.shrunk_bounds()),
            ModelRef::Block(b) => b.gamma_box(),
        }
    }

    pub fn workspace(&self, params: &FgpParams) -> Result<Ws<'a>> {
        match self {
            ModelRef::Full(s) => Ok(Ws::Full(Workspace::new(s, params.clone())?)),
            ModelRef::Block(b) => Ok(Ws::Block(BlockWorkspace::new(b, params.clone())?)),
        }
    }
}

/// Workspace over either model form, exposing the shared operator set.
#[derive(Debug)]
pub enum Ws<'a> {
    Full(Workspace<'a>),
    Block(BlockWorkspace<'a>),
}

macro_rules! delegate {
    ($self:ident, $ws:ident => $body:expr) => {
        match $self {
            Ws::Full($ws) => $body,
            Ws::Block($ws) => $body,
        }
    };
}

impl<'a> Ws<'a> {
    pub fn params(&self) -> &FgpParams {
        delegate!(self, w => w.params())
    }

    pub fn n(&self) -> usize {
        match self {
            Ws::Full(w) => w.structure().n(),
            Ws::Block(w) => w.model().n(),
        }
    }

    pub fn r(&self) -> usize {
        match self {
            Ws::Full(w) => w.structure().r(),
            Ws::Block(w) => w.model().r(),
        }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        match self {
            Ws::Full(w) => &w.structure().x,
            Ws::Block(w) => w.model().x(),
        }
    }

    pub fn basis(&self) -> &BasisMatrix {
        match self {
            Ws::Full(w) => &w.structure().basis,
            Ws::Block(w) => w.model().basis(),
        }
    }

    pub fn has_ggm(&self) -> bool {
        match self {
            Ws::Full(w) => w.has_ggm(),
            Ws::Block(w) => w.model().num_blocks() > 0,
        }
    }

    /// Global cell index of each observation, when a lattice is present.
    pub fn obs_cells(&self) -> Option<&[usize]> {
        match self {
            Ws::Full(w) => w.structure().ggm.as_ref().map(|g| g.incidence.cells()),
            Ws::Block(w) => Some(w.model().global_cells()),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Ws::Full(w) => w.structure().m(),
            Ws::Block(w) => w.model().m(),
        }
    }

    pub fn apply_d_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        delegate!(self, w => w.apply_d_vec(v))
    }

    pub fn apply_c_inv_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        delegate!(self, w => w.apply_c_inv_vec(v))
    }

    pub fn g(&self) -> &DMatrix<f64> {
        delegate!(self, w => w.g())
    }

    pub fn k_inv(&self) -> &DMatrix<f64> {
        delegate!(self, w => w.k_inv())
    }

    pub fn inner_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        delegate!(self, w => w.inner_solve_vec(v))
    }

    pub fn inner_solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        delegate!(self, w => w.inner_solve_mat(m))
    }

    pub fn log_det_d_inv(&self) -> f64 {
        delegate!(self, w => w.log_det_d_inv())
    }

    pub fn log_det_c(&self) -> f64 {
        delegate!(self, w => w.log_det_c())
    }

    pub fn q_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        delegate!(self, w => w.q_solve_vec(v))
    }

    pub fn nll(&self, z: &DVector<f64>) -> f64 {
        delegate!(self, w => w.nll(z))
    }
}
