//! Block fused Gaussian process: the lattice graph is partitioned into J
//! subgraphs, cross-block edges are deleted, and the precision becomes
//! block-diagonal. The likelihood then decomposes into per-block
//! reduction quantities
//!
//! ```text
//! a_j = Z~_j' D_j Z~_j     b_j = S_j' D_j Z~_j
//! G_j = S_j' D_j S_j       ld_j = log|D_j^{-1}|
//! ```
//!
//! which are independent map tasks; the fold over blocks is sequential
//! and in ascending block order, so results are bitwise identical for any
//! worker count. Spatial dependence across blocks survives through the
//! shared low-rank component.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{BasisMatrix, Lattice, LatticeGeometry};
use crate::car::CarStructure;
use crate::error::{FgpError, Result};
use crate::likelihood::{K_JITTER, LN_2PI};
use crate::linalg::{DenseChol, SparseChol, SparseSym};
use crate::model::{FgpParams, FgpStructure};

/// Assignment of lattice cells to contiguous blocks.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    cell_ranges: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn num_blocks(&self) -> usize {
        self.cell_ranges.len()
    }

    pub fn cell_ranges(&self) -> &[Range<usize>] {
        &self.cell_ranges
    }

    pub fn block_of_cell(&self, cell: usize) -> usize {
        self.cell_ranges
            .iter()
            .position(|r| r.contains(&cell))
            .expect("cell inside partition")
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.cell_ranges.iter().map(|r| r.len()).collect()
    }
}

/// Splits `m` cells into `j` contiguous ranges with sizes equal up to the
/// remainder (larger blocks first).
pub fn partition_cells(m: usize, j: usize) -> Result<BlockPartition> {
    if j == 0 || j > m {
        return Err(FgpError::DimensionMismatch {
            context: "block count",
            expected: m,
            found: j,
        });
    }
    let base = m / j;
    let extra = m % j;
    let mut ranges = Vec::with_capacity(j);
    let mut start = 0usize;
    for b in 0..j {
        let size = base + usize::from(b < extra);
        ranges.push(start..start + size);
        start += size;
    }
    Ok(BlockPartition {
        cell_ranges: ranges,
    })
}

/// Partitions a lattice along its natural order: intervals on a line,
/// row bands on a grid.
pub fn partition_lattice(lat: &Lattice, j: usize) -> Result<BlockPartition> {
    match *lat.geometry() {
        LatticeGeometry::Line { m, .. } => partition_cells(m, j),
        LatticeGeometry::Grid { nx, ny, .. } => {
            let rows = partition_cells(ny, j)?;
            Ok(BlockPartition {
                cell_ranges: rows
                    .cell_ranges
                    .iter()
                    .map(|r| r.start * nx..r.end * nx)
                    .collect(),
            })
        }
    }
}

/// Per-block reduction payload: two scalars, one r-vector, one r x r
/// matrix per worker.
#[derive(Debug, Clone)]
pub struct BlockSummary {
    pub a: f64,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub ld: f64,
}

#[derive(Debug, Clone)]
struct BlockPiece {
    cells: Range<usize>,
    /// global observation rows in this block, ascending
    rows: Vec<usize>,
    /// per-row local cell index (cell - cells.start)
    local_cells: Vec<usize>,
    car: CarStructure,
    basis: BasisMatrix,
    x: DMatrix<f64>,
    v_eps: DVector<f64>,
}

/// A block-partitioned model assembled from a full structure. Shared
/// parameters come from [`FgpParams`]; per-block (tau^2, gamma) overrides
/// are optional.
#[derive(Debug, Clone)]
pub struct BlockModel {
    x: DMatrix<f64>,
    basis: BasisMatrix,
    v_eps: DVector<f64>,
    global_cells: Vec<usize>,
    m: usize,
    blocks: Vec<BlockPiece>,
    overrides: Option<Vec<(f64, f64)>>,
}

impl BlockModel {
    /// Splits `structure` (which must carry a graphical component) along
    /// `partition`, dropping proximity edges that cross blocks.
    pub fn new(structure: &FgpStructure, partition: &BlockPartition) -> Result<Self> {
        let ggm = structure.ggm.as_ref().ok_or(FgpError::DimensionMismatch {
            context: "block model requires a graphical component",
            expected: 1,
            found: 0,
        })?;
        let m = ggm.m();
        let total: usize = partition.block_sizes().iter().sum();
        if total != m {
            return Err(FgpError::DimensionMismatch {
                context: "partition must cover all cells",
                expected: m,
                found: total,
            });
        }
        let cells = ggm.incidence.cells();
        let h = ggm.car.proximity();
        let delta = ggm.car.delta();

        let blocks = partition
            .cell_ranges
            .iter()
            .map(|range| {
                let rows: Vec<usize> = (0..structure.n())
                    .filter(|&i| range.contains(&cells[i]))
                    .collect();
                let local_cells: Vec<usize> =
                    rows.iter().map(|&i| cells[i] - range.start).collect();
                // subgraph proximity: both endpoints inside the block
                let mut triplets = Vec::new();
                for (i, j, v) in h.iter() {
                    if v != 0.0 && range.contains(&i) && range.contains(&j) {
                        triplets.push((i - range.start, j - range.start, v));
                    }
                }
                let h_j = SparseSym::from_triplets(range.len(), &triplets)?;
                let delta_j = DVector::from_fn(range.len(), |k, _| delta[range.start + k]);
                let car = CarStructure::new(h_j, delta_j)?;
                let basis = structure.basis.filter_rows(&rows);
                let x = structure.x.select_rows(rows.iter());
                let v_eps = DVector::from_fn(rows.len(), |k, _| structure.v_eps[rows[k]]);
                Ok(BlockPiece {
                    cells: range.clone(),
                    rows,
                    local_cells,
                    car,
                    basis,
                    x,
                    v_eps,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(BlockModel {
            x: structure.x.clone(),
            basis: structure.basis.clone(),
            v_eps: structure.v_eps.clone(),
            global_cells: cells.to_vec(),
            m,
            blocks,
            overrides: None,
        })
    }

    /// Per-block (tau^2, gamma) values replacing the shared parameters.
    pub fn with_overrides(mut self, overrides: Vec<(f64, f64)>) -> Result<Self> {
        if overrides.len() != self.blocks.len() {
            return Err(FgpError::DimensionMismatch {
                context: "per-block parameter overrides",
                expected: self.blocks.len(),
                found: overrides.len(),
            });
        }
        for (b, &(tau2, gamma)) in self.blocks.iter().zip(&overrides) {
            if !(tau2 > 0.0) {
                return Err(FgpError::DegenerateData);
            }
            if !b.car.gamma_admissible(gamma) {
                let (lo, hi) = b
                    .car
                    .gamma_bounds()
                    .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                return Err(FgpError::GammaOutOfRange { gamma, lo, hi });
            }
        }
        self.overrides = Some(overrides);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.basis.n_cols()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }

    pub fn v_eps(&self) -> &DVector<f64> {
        &self.v_eps
    }

    pub fn global_cells(&self) -> &[usize] {
        &self.global_cells
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.cells.len()).collect()
    }

    /// Intersection of the per-block shrunk admissibility intervals.
    pub fn gamma_box(&self) -> Option<(f64, f64)> {
        let mut box_: Option<(f64, f64)> = None;
        for b in &self.blocks {
            if let Some((lo, hi)) = b.car.shrunk_bounds() {
                box_ = Some(match box_ {
                    None => (lo, hi),
                    Some((l, h)) => (l.max(lo), h.min(hi)),
                });
            }
        }
        box_
    }

    fn params_of_block(&self, j: usize, shared: &FgpParams) -> (f64, f64) {
        match &self.overrides {
            Some(o) => o[j],
            None => (shared.tau2, shared.gamma),
        }
    }

    /// Densified block-diagonal precision; oracle-scale support only.
    pub fn dense_precision(&self, shared: &FgpParams) -> Result<DMatrix<f64>> {
        let mut q = DMatrix::zeros(self.m, self.m);
        for (j, piece) in self.blocks.iter().enumerate() {
            let (tau2, gamma) = self.params_of_block(j, shared);
            let qj = piece.car.precision(tau2, gamma)?.to_dense();
            let off = piece.cells.start;
            for a in 0..qj.nrows() {
                for b in 0..qj.ncols() {
                    q[(off + a, off + b)] = qj[(a, b)];
                }
            }
        }
        Ok(q)
    }
}

#[derive(Debug)]
struct BlockFactors {
    q_fac: SparseChol,
    cap_fac: SparseChol,
    v_inv: DVector<f64>,
    ld_d_inv: f64,
    g: DMatrix<f64>,
}

/// Factored per-block quantities for one shared parameter value.
#[derive(Debug)]
pub struct BlockWorkspace<'a> {
    model: &'a BlockModel,
    params: FgpParams,
    factors: Vec<BlockFactors>,
    k_chol: Option<DenseChol>,
    k_inv: DMatrix<f64>,
    g_total: DMatrix<f64>,
    inner_fac: DenseChol,
}

impl<'a> BlockWorkspace<'a> {
    pub fn new(model: &'a BlockModel, params: FgpParams) -> Result<Self> {
        if params.beta.len() != model.p() {
            return Err(FgpError::DimensionMismatch {
                context: "trend coefficients",
                expected: model.p(),
                found: params.beta.len(),
            });
        }
        let r = model.r();
        if params.k.nrows() != r || params.k.ncols() != r {
            return Err(FgpError::DimensionMismatch {
                context: "low-rank covariance",
                expected: r,
                found: params.k.nrows(),
            });
        }

        // map: factor each block independently
        let factors: Vec<BlockFactors> = model
            .blocks
            .par_iter()
            .enumerate()
            .map(|(j, piece)| {
                let (tau2, gamma) = model.params_of_block(j, &params);
                let q = piece.car.precision(tau2, gamma)?;
                let q_fac = SparseChol::factor(&q)?;
                let v_inv = piece.v_eps.map(|v| 1.0 / v);
                let mut diag = DVector::zeros(piece.cells.len());
                for (row, &c) in piece.local_cells.iter().enumerate() {
                    diag[c] += v_inv[row];
                }
                let cap = q.plus_diagonal(&diag)?;
                let cap_fac = SparseChol::factor(&cap)?;
                let logdet_v: f64 = piece.v_eps.iter().map(|v| v.ln()).sum();
                let ld_d_inv = cap_fac.logdet() - q_fac.logdet() + logdet_v;

                // G_j = S_j' D_j S_j
                let n_j = piece.rows.len();
                let mut g = DMatrix::zeros(r, r);
                let mut col = DVector::zeros(n_j);
                for k in 0..r {
                    col.fill(0.0);
                    let (idx, val) = piece.basis.col(k);
                    for (&i, &v) in idx.iter().zip(val) {
                        col[i] = v;
                    }
                    let d_col = block_apply_d(piece, &v_inv, &cap_fac, &col);
                    g.set_column(k, &piece.basis.t_mul_vec(&d_col));
                }
                g = (&g + g.transpose()) * 0.5;

                Ok(BlockFactors {
                    q_fac,
                    cap_fac,
                    v_inv,
                    ld_d_inv,
                    g,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let (k_chol, k_inv) = if r > 0 {
            let kc = DenseChol::factor_with_jitter(&params.k, K_JITTER)?;
            let ki = kc.inverse();
            (Some(kc), ki)
        } else {
            (None, DMatrix::zeros(0, 0))
        };

        // fold in ascending block order
        let mut g_total = DMatrix::zeros(r, r);
        for f in &factors {
            g_total += &f.g;
        }
        let inner = &k_inv + &g_total;
        let inner_fac = DenseChol::factor_with_jitter(&inner, K_JITTER)?;

        Ok(BlockWorkspace {
            model,
            params,
            factors,
            k_chol,
            k_inv,
            g_total,
            inner_fac,
        })
    }

    pub fn model(&self) -> &BlockModel {
        self.model
    }

    pub fn params(&self) -> &FgpParams {
        &self.params
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g_total
    }

    pub fn k_inv(&self) -> &DMatrix<f64> {
        &self.k_inv
    }

    pub fn inner_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.inner_fac.solve_vec(v)
    }

    pub fn inner_solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.inner_fac.solve_mat(m)
    }

    /// blockdiag{D_j} v on a full-length vector.
    pub fn apply_d_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        let parts: Vec<(usize, DVector<f64>)> = self
            .model
            .blocks
            .par_iter()
            .zip(&self.factors)
            .enumerate()
            .map(|(j, (piece, fac))| {
                let local = DVector::from_fn(piece.rows.len(), |k, _| v[piece.rows[k]]);
                (j, block_apply_d(piece, &fac.v_inv, &fac.cap_fac, &local))
            })
            .collect();
        for (j, local) in parts {
            let piece = &self.model.blocks[j];
            for (k, &row) in piece.rows.iter().enumerate() {
                out[row] = local[k];
            }
        }
        out
    }

    /// C^{-1} v for the block-diagonal model.
    pub fn apply_c_inv_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let dv = self.apply_d_vec(v);
        if self.model.r() == 0 {
            return dv;
        }
        let t = self.model.basis.t_mul_vec(&dv);
        let u = self.inner_fac.solve_vec(&t);
        let w = self.model.basis.mul_vec(&u);
        let dw = self.apply_d_vec(&w);
        dv - dw
    }

    pub fn log_det_d_inv(&self) -> f64 {
        self.factors.iter().map(|f| f.ld_d_inv).sum()
    }

    pub fn log_det_c(&self) -> f64 {
        let low_rank = match &self.k_chol {
            Some(kc) => self.inner_fac.logdet() + kc.logdet(),
            None => 0.0,
        };
        low_rank + self.log_det_d_inv()
    }

    /// blockdiag{Q_j}^{-1} w on a full lattice vector.
    pub fn q_solve_vec(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(w.len());
        for (piece, fac) in self.model.blocks.iter().zip(&self.factors) {
            let local = DVector::from_fn(piece.cells.len(), |k, _| w[piece.cells.start + k]);
            let solved = fac.q_fac.solve_vec(&local);
            for k in 0..piece.cells.len() {
                out[piece.cells.start + k] = solved[k];
            }
        }
        out
    }

    /// The per-block reduction payload for block `j`.
    pub fn block_summary(&self, j: usize, z: &DVector<f64>) -> BlockSummary {
        let piece = &self.model.blocks[j];
        let fac = &self.factors[j];
        let n_j = piece.rows.len();
        let z_j = DVector::from_fn(n_j, |k, _| z[piece.rows[k]]);
        let z_tilde = &z_j - &piece.x * &self.params.beta;
        let d = block_apply_d(piece, &fac.v_inv, &fac.cap_fac, &z_tilde);
        BlockSummary {
            a: z_tilde.dot(&d),
            b: piece.basis.t_mul_vec(&d),
            g: fac.g.clone(),
            ld: fac.ld_d_inv,
        }
    }

    /// Negative log-likelihood assembled from per-block summaries; the
    /// map runs in parallel, the reduction folds in block order.
    pub fn nll(&self, z: &DVector<f64>) -> f64 {
        let r = self.model.r();
        let summaries: Vec<BlockSummary> = (0..self.model.num_blocks())
            .into_par_iter()
            .map(|j| self.block_summary(j, z))
            .collect();
        let mut a_sum = 0.0;
        let mut b_sum = DVector::zeros(r);
        let mut ld_sum = 0.0;
        for s in &summaries {
            a_sum += s.a;
            b_sum += &s.b;
            ld_sum += s.ld;
        }
        let low_rank_quad = if r > 0 {
            b_sum.dot(&self.inner_fac.solve_vec(&b_sum))
        } else {
            0.0
        };
        let low_rank_ld = match &self.k_chol {
            Some(kc) => self.inner_fac.logdet() + kc.logdet(),
            None => 0.0,
        };
        0.5 * (a_sum - low_rank_quad + low_rank_ld + ld_sum)
            + 0.5 * self.model.n() as f64 * LN_2PI
    }
}

fn block_apply_d(
    piece: &BlockPiece,
    v_inv: &DVector<f64>,
    cap_fac: &SparseChol,
    v: &DVector<f64>,
) -> DVector<f64> {
    let vi = v.component_mul(v_inv);
    if piece.cells.is_empty() {
        return vi;
    }
    let mut w = DVector::zeros(piece.cells.len());
    for (row, &c) in piece.local_cells.iter().enumerate() {
        w[c] += vi[row];
    }
    let x = cap_fac.solve_vec(&w);
    let mut out = vi;
    for (row, &c) in piece.local_cells.iter().enumerate() {
        out[row] -= x[c] * v_inv[row];
    }
    out
}

/// One-shot block likelihood.
pub fn block_neg_log_likelihood(
    model: &BlockModel,
    params: &FgpParams,
    z: &DVector<f64>,
) -> Result<f64> {
    Ok(BlockWorkspace::new(model, params.clone())?.nll(z))
}

/// One-shot block C^{-1} b.
pub fn block_apply_c_inverse(
    model: &BlockModel,
    params: &FgpParams,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(BlockWorkspace::new(model, params.clone())?.apply_c_inv_vec(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{incidence_matrix, Lattice};
    use crate::car::proximity_first_order;
    use crate::likelihood::Workspace;
    use crate::model::GgmStructure;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn chain_structure(m: usize, r: usize, seed: u64) -> (FgpStructure, FgpParams, DVector<f64>) {
        let lat = Lattice::line(0.0, 10.0, m).unwrap();
        let h = proximity_first_order(&lat);
        let car = CarStructure::with_identity_delta(h).unwrap();
        let incidence = incidence_matrix(&lat, lat.centers()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let s = DMatrix::from_fn(m, r, |_, _| rng.random::<f64>());
        let structure = FgpStructure::new(
            DMatrix::from_element(m, 1, 1.0),
            BasisMatrix::from_dense(&s),
            Some(GgmStructure::new(incidence, car).unwrap()),
            DVector::from_fn(m, |_, _| 0.5 + rng.random::<f64>()),
        )
        .unwrap();
        let gk = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>() - 0.5);
        let k = &gk * gk.transpose() + DMatrix::identity(r, r) * 0.4;
        let params = FgpParams {
            beta: DVector::from_element(1, 0.3),
            k,
            tau2: 0.8,
            gamma: 0.3,
        };
        let z = DVector::from_fn(m, |i, _| (i as f64 * 0.7).sin() * 2.0 + 0.3);
        (structure, params, z)
    }

    #[test]
    fn partition_sizes_equal_up_to_remainder() {
        let p = partition_cells(450, 4).unwrap();
        assert_eq!(p.block_sizes(), vec![113, 113, 112, 112]);
        let p1 = partition_cells(450, 1).unwrap();
        assert_eq!(p1.block_sizes(), vec![450]);
    }

    #[test]
    fn chain_partition_drops_cross_edge() {
        let lat = Lattice::line(0.0, 5.0, 6).unwrap();
        let p = partition_lattice(&lat, 2).unwrap();
        assert_eq!(p.block_sizes(), vec![3, 3]);
        let h = proximity_first_order(&lat);
        let car = CarStructure::with_identity_delta(h).unwrap();
        let incidence = incidence_matrix(&lat, lat.centers()).unwrap();
        let structure = FgpStructure::new(
            DMatrix::from_element(6, 1, 1.0),
            BasisMatrix::empty(6),
            Some(GgmStructure::new(incidence, car).unwrap()),
            DVector::from_element(6, 1.0),
        )
        .unwrap();
        let model = BlockModel::new(&structure, &p).unwrap();
        // each block is a 3-chain: 2 edges, 4 stored entries
        for piece in &model.blocks {
            assert_eq!(piece.car.proximity().nnz(), 4);
        }
    }

    #[test]
    fn grid_partition_uses_row_bands() {
        let lat = Lattice::grid((0.0, 4.0), (0.0, 4.0), 4, 4).unwrap();
        let p = partition_lattice(&lat, 2).unwrap();
        assert_eq!(p.block_sizes(), vec![8, 8]);
        assert_eq!(p.cell_ranges()[0], 0..8);
    }

    #[test]
    fn single_block_matches_full_likelihood() {
        let (structure, params, z) = chain_structure(24, 3, 5);
        let p = partition_cells(24, 1).unwrap();
        let model = BlockModel::new(&structure, &p).unwrap();
        let block_nll = block_neg_log_likelihood(&model, &params, &z).unwrap();
        let full_nll = Workspace::new(&structure, params.clone()).unwrap().nll(&z);
        assert_relative_eq!(block_nll, full_nll, epsilon = 1e-10);
    }

    #[test]
    fn single_block_c_inverse_matches_full() {
        let (structure, params, z) = chain_structure(18, 2, 9);
        let p = partition_cells(18, 1).unwrap();
        let model = BlockModel::new(&structure, &p).unwrap();
        let got = block_apply_c_inverse(&model, &params, &z).unwrap();
        let want = Workspace::new(&structure, params.clone())
            .unwrap()
            .apply_c_inv_vec(&z);
        assert!((got - want).norm() < 1e-10);
    }

    #[test]
    fn dropped_edges_change_the_likelihood() {
        let (structure, params, z) = chain_structure(30, 2, 11);
        let p = partition_cells(30, 3).unwrap();
        let model = BlockModel::new(&structure, &p).unwrap();
        let block_nll = block_neg_log_likelihood(&model, &params, &z).unwrap();
        let full_nll = Workspace::new(&structure, params.clone()).unwrap().nll(&z);
        assert!((block_nll - full_nll).abs() > 1e-8);
    }

    #[test]
    fn summary_reduction_is_worker_count_invariant() {
        let (structure, params, z) = chain_structure(40, 3, 13);
        let p = partition_cells(40, 5).unwrap();
        let model = BlockModel::new(&structure, &p).unwrap();
        let mut values = Vec::new();
        for workers in [1usize, 2, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap();
            let v = pool.install(|| block_neg_log_likelihood(&model, &params, &z).unwrap());
            values.push(v);
        }
        assert_eq!(values[0].to_bits(), values[1].to_bits());
        assert_eq!(values[0].to_bits(), values[2].to_bits());
    }

    #[test]
    fn per_block_overrides_reduce_to_shared_when_equal() {
        let (structure, params, z) = chain_structure(20, 2, 17);
        let p = partition_cells(20, 2).unwrap();
        let shared = BlockModel::new(&structure, &p).unwrap();
        let overridden = BlockModel::new(&structure, &p)
            .unwrap()
            .with_overrides(vec![(params.tau2, params.gamma); 2])
            .unwrap();
        let a = block_neg_log_likelihood(&shared, &params, &z).unwrap();
        let b = block_neg_log_likelihood(&overridden, &params, &z).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn empty_block_summary_is_zero() {
        // observations only in the first half of the lattice
        let lat = Lattice::line(0.0, 9.0, 10).unwrap();
        let h = proximity_first_order(&lat);
        let car = CarStructure::with_identity_delta(h).unwrap();
        let obs: Vec<_> = lat.centers()[..5].to_vec();
        let incidence = incidence_matrix(&lat, &obs).unwrap();
        let structure = FgpStructure::new(
            DMatrix::from_element(5, 1, 1.0),
            BasisMatrix::empty(5),
            Some(GgmStructure::new(incidence, car).unwrap()),
            DVector::from_element(5, 1.0),
        )
        .unwrap();
        let params = FgpParams {
            beta: DVector::zeros(1),
            k: DMatrix::zeros(0, 0),
            tau2: 1.0,
            gamma: 0.2,
        };
        let model = BlockModel::new(&structure, &partition_cells(10, 2).unwrap()).unwrap();
        let ws = BlockWorkspace::new(&model, params).unwrap();
        let z = DVector::from_fn(5, |i, _| i as f64);
        let s = ws.block_summary(1, &z);
        assert_eq!(s.a, 0.0);
        assert_eq!(s.ld, 0.0);
        assert_eq!(s.b.len(), 0);
    }

    #[test]
    fn single_observation_block_shrinkage() {
        // one block, one cell, one observation: D = 1/(tau2 + v)
        let lat = Lattice::line(0.0, 1.0, 2).unwrap();
        let h = SparseSym::from_triplets(2, &[]).unwrap();
        let car = CarStructure::with_identity_delta(h).unwrap();
        let obs = vec![lat.centers()[0]];
        let incidence = incidence_matrix(&lat, &obs).unwrap();
        let v = 0.7;
        let tau2 = 1.3;
        let structure = FgpStructure::new(
            DMatrix::from_element(1, 1, 1.0),
            BasisMatrix::empty(1),
            Some(GgmStructure::new(incidence, car).unwrap()),
            DVector::from_element(1, v),
        )
        .unwrap();
        let params = FgpParams {
            beta: DVector::zeros(1),
            k: DMatrix::zeros(0, 0),
            tau2,
            gamma: 0.0,
        };
        let model = BlockModel::new(&structure, &partition_cells(2, 2).unwrap()).unwrap();
        let ws = BlockWorkspace::new(&model, params).unwrap();
        let z = DVector::from_element(1, 2.0);
        let s = ws.block_summary(0, &z);
        assert_relative_eq!(s.a, 4.0 / (tau2 + v), epsilon = 1e-12);
        // log|D^{-1}| = log(tau^2 + v) for a single cell with one observation
        assert_relative_eq!(s.ld, (tau2 + v).ln(), epsilon = 1e-12);
    }
}
