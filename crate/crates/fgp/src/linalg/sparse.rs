//! Sparse symmetric matrices and their LDL' factorization.
//!
//! Storage is compressed sparse column with the full (both-triangle)
//! pattern, which keeps matrix-vector products simple. Factorization
//! extracts the upper triangle of the permuted matrix and runs an
//! up-looking LDL' with elimination-tree symbolic analysis, so a factor
//! can be reused for many solves. For a symmetric positive-definite
//! input this is the Cholesky factorization up to a diagonal scaling:
//! A = P'(L+I) D (L+I)'P with D > 0.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{FgpError, Result};
use crate::linalg::dense::PIVOT_RTOL;

const NONE: usize = usize::MAX;

/// Symmetric sparse matrix in CSC form, full pattern stored.
#[derive(Debug, Clone)]
pub struct SparseSym {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Builds from triplets describing the full matrix. Duplicate entries
    /// are summed; the resulting pattern and values must be symmetric.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, _) in &entries {
            if i >= dim || j >= dim {
                return Err(FgpError::DimensionMismatch {
                    context: "sparse triplet index",
                    expected: dim,
                    found: i.max(j),
                });
            }
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (j, i));
        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev = None;
        for (i, j, v) in entries {
            if prev == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(i);
                values.push(v);
                col_ptr[j + 1] += 1;
                prev = Some((i, j));
            }
        }
        for j in 0..dim {
            col_ptr[j + 1] += col_ptr[j];
        }
        let m = SparseSym {
            dim,
            col_ptr,
            row_idx,
            values,
        };
        m.check_symmetry()?;
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        SparseSym {
            dim,
            col_ptr: (0..=dim).collect(),
            row_idx: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    fn check_symmetry(&self) -> Result<()> {
        let scale = self.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for j in 0..self.dim {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                let v = self.values[k];
                if (self.get(j, i) - v).abs() > 1e-12 * scale.max(1.0) {
                    return Err(FgpError::Asymmetric {
                        context: "sparse symmetric input",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry lookup by binary search within the column.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        match self.row_idx[lo..hi].binary_search(&i) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim);
        let mut y = DVector::zeros(self.dim);
        for j in 0..self.dim {
            let xj = x[j];
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.values[k] * xj;
            }
        }
        y
    }

    /// Returns a copy with `d` added to the diagonal. Diagonal entries must
    /// already be present in the pattern.
    pub fn plus_diagonal(&self, d: &DVector<f64>) -> Result<SparseSym> {
        debug_assert_eq!(d.len(), self.dim);
        let mut out = self.clone();
        for j in 0..self.dim {
            let lo = out.col_ptr[j];
            let hi = out.col_ptr[j + 1];
            match out.row_idx[lo..hi].binary_search(&j) {
                Ok(pos) => out.values[lo + pos] += d[j],
                Err(_) => {
                    return Err(FgpError::DimensionMismatch {
                        context: "diagonal entry missing in sparse pattern",
                        expected: j,
                        found: j,
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[(self.row_idx[k], j)] += self.values[k];
            }
        }
        m
    }

    /// Maximum |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0usize;
        for j in 0..self.dim {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                b = b.max(self.row_idx[k].abs_diff(j));
            }
        }
        b
    }

    pub(crate) fn csc_parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.col_ptr, &self.row_idx, &self.values)
    }

    /// Iterates stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1])
                .map(move |k| (self.row_idx[k], j, self.values[k]))
        })
    }
}

/// Fill-reducing ordering choice for the sparse factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// Identity permutation; right for chains and narrow-banded lattices.
    Natural,
    /// Greedy minimum-degree elimination ordering.
    MinDegree,
    /// Natural for narrow-banded inputs, minimum degree otherwise.
    Auto,
}

const AUTO_BAND_LIMIT: usize = 64;

/// Greedy minimum-degree ordering on the adjacency graph of the pattern.
/// Ties break toward the smallest vertex id, so the result is deterministic.
fn min_degree_order(m: &SparseSym) -> Vec<usize> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = m.dim();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j, _) in m.iter() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = BinaryHeap::with_capacity(n);
    for (v, a) in adj.iter().enumerate() {
        heap.push(Reverse((a.len(), v)));
    }
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue; // stale heap entry
        }
        eliminated[v] = true;
        perm.push(v);
        let neighbors: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &neighbors {
            adj[u].remove(&v);
        }
        for (a, &u) in neighbors.iter().enumerate() {
            for &w in &neighbors[a + 1..] {
                if adj[u].insert(w) {
                    adj[w].insert(u);
                }
            }
        }
        for &u in &neighbors {
            heap.push(Reverse((adj[u].len(), u)));
        }
        adj[v].clear();
    }
    perm
}

/// LDL' factor of a permuted sparse symmetric positive-definite matrix.
///
/// Immutable after construction; solves take `&self` and are safe to run
/// concurrently.
#[derive(Debug, Clone)]
pub struct SparseChol {
    dim: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    logdet: f64,
}

impl SparseChol {
    pub fn factor(m: &SparseSym) -> Result<Self> {
        Self::factor_with(m, Ordering::Auto)
    }

    pub fn factor_with(m: &SparseSym, ordering: Ordering) -> Result<Self> {
        let n = m.dim();
        let perm = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::MinDegree => min_degree_order(m),
            Ordering::Auto => {
                if m.bandwidth() <= AUTO_BAND_LIMIT {
                    (0..n).collect()
                } else {
                    min_degree_order(m)
                }
            }
        };
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // upper triangle of the permuted matrix, CSC
        let (col_ptr, row_idx, values) = m.csc_parts();
        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            for k in col_ptr[j]..col_ptr[j + 1] {
                let (pi, pj) = (iperm[row_idx[k]], iperm[j]);
                if pi <= pj {
                    counts[pj + 1] += 1;
                }
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let up_ptr = counts.clone();
        let nnz_up = up_ptr[n];
        let mut up_idx = vec![0usize; nnz_up];
        let mut up_val = vec![0.0f64; nnz_up];
        let mut cursor = up_ptr.clone();
        for j in 0..n {
            for k in col_ptr[j]..col_ptr[j + 1] {
                let (pi, pj) = (iperm[row_idx[k]], iperm[j]);
                if pi <= pj {
                    let slot = cursor[pj];
                    up_idx[slot] = pi;
                    up_val[slot] = values[k];
                    cursor[pj] += 1;
                }
            }
        }

        // elimination tree and column counts of L
        let mut parent = vec![NONE; n];
        let mut mark = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for j in 0..n {
            mark[j] = j;
            for k in up_ptr[j]..up_ptr[j + 1] {
                let mut i = up_idx[k];
                while i != j && mark[i] != j {
                    if parent[i] == NONE {
                        parent[i] = j;
                    }
                    lnz[i] += 1;
                    mark[i] = j;
                    i = parent[i];
                }
            }
        }

        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + lnz[j];
        }
        let mut l_rowidx = vec![0usize; l_colptr[n]];
        let mut l_values = vec![0.0f64; l_colptr[n]];
        let mut next_slot = l_colptr[..n].to_vec();
        let mut d = vec![0.0f64; n];

        // max diagonal of the input sets the relative pivot floor
        let mut max_diag = 0.0f64;
        for j in 0..n {
            for k in up_ptr[j]..up_ptr[j + 1] {
                if up_idx[k] == j {
                    max_diag = max_diag.max(up_val[k]);
                }
            }
        }
        let floor = PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);

        // up-looking numeric factorization: row k of L solves
        // (L+I)[0..k,0..k] y = A[0..k, k], pattern from the etree
        let mut y = vec![0.0f64; n];
        let mut visited = vec![false; n];
        let mut row_order = vec![0usize; n];
        let mut chain = vec![0usize; n];
        let mut d_inv = vec![0.0f64; n];
        let mut logdet = 0.0f64;
        for k in 0..n {
            let mut nnz_row = 0usize;
            for idx in up_ptr[k]..up_ptr[k + 1] {
                let r = up_idx[idx];
                if r == k {
                    d[k] += up_val[idx];
                    continue;
                }
                y[r] += up_val[idx];
                if visited[r] {
                    continue;
                }
                visited[r] = true;
                chain[0] = r;
                let mut chain_len = 1usize;
                let mut p = parent[r];
                while p != NONE && p < k && !visited[p] {
                    visited[p] = true;
                    chain[chain_len] = p;
                    chain_len += 1;
                    p = parent[p];
                }
                while chain_len > 0 {
                    chain_len -= 1;
                    row_order[nnz_row] = chain[chain_len];
                    nnz_row += 1;
                }
            }
            // eliminate in topological order (reverse of discovery)
            for t in (0..nnz_row).rev() {
                let c = row_order[t];
                let yc = y[c];
                let (f, l) = (l_colptr[c], next_slot[c]);
                for s in f..l {
                    y[l_rowidx[s]] -= l_values[s] * yc;
                }
                let lkc = yc * d_inv[c];
                let slot = next_slot[c];
                l_rowidx[slot] = k;
                l_values[slot] = lkc;
                next_slot[c] += 1;
                d[k] -= yc * lkc;
                y[c] = 0.0;
                visited[c] = false;
            }
            if !(d[k] > floor) {
                return Err(FgpError::NotPositiveDefinite { pivot: perm[k] });
            }
            d_inv[k] = 1.0 / d[k];
            logdet += d[k].ln();
        }

        Ok(SparseChol {
            dim: n,
            perm,
            l_colptr,
            l_rowidx,
            l_values,
            d,
            d_inv,
            logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Number of stored off-diagonal entries in the factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_values.len()
    }

    /// Solves `m x = b` against the factored matrix.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(b.len(), self.dim);
        let mut tmp = vec![0.0f64; self.dim];
        for k in 0..self.dim {
            tmp[k] = b[self.perm[k]];
        }
        self.solve_permuted_in_place(&mut tmp);
        let mut x = DVector::zeros(self.dim);
        for k in 0..self.dim {
            x[self.perm[k]] = tmp[k];
        }
        x
    }

    /// Solves for every column of `b`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        let mut tmp = vec![0.0f64; self.dim];
        for j in 0..b.ncols() {
            for k in 0..self.dim {
                tmp[k] = b[(self.perm[k], j)];
            }
            self.solve_permuted_in_place(&mut tmp);
            for k in 0..self.dim {
                out[(self.perm[k], j)] = tmp[k];
            }
        }
        out
    }

    fn solve_permuted_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        // (L+I) y = b
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for s in self.l_colptr[i]..self.l_colptr[i + 1] {
                    x[self.l_rowidx[s]] -= self.l_values[s] * xi;
                }
            }
        }
        // D z = y
        for i in 0..n {
            x[i] *= self.d_inv[i];
        }
        // (L+I)' x = z
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in self.l_colptr[i]..self.l_colptr[i + 1] {
                s -= self.l_values[k] * x[self.l_rowidx[k]];
            }
            x[i] = s;
        }
    }

    /// Effective Cholesky factor L_chol = (L+I) sqrt(D) of the permuted
    /// matrix, densified. Test support only.
    pub fn dense_factor(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            let root = self.d[j].sqrt();
            l[(j, j)] = root;
            for s in self.l_colptr[j]..self.l_colptr[j + 1] {
                l[(self.l_rowidx[s], j)] = self.l_values[s] * root;
            }
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::DenseChol;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn tridiag(dim: usize, diag: f64, off: f64) -> SparseSym {
        let mut t = Vec::new();
        for i in 0..dim {
            t.push((i, i, diag));
            if i + 1 < dim {
                t.push((i, i + 1, off));
                t.push((i + 1, i, off));
            }
        }
        SparseSym::from_triplets(dim, &t).unwrap()
    }

    /// rook-lattice CAR-style precision I - g*H on a side x side grid
    fn lattice_precision(side: usize, g: f64) -> SparseSym {
        let idx = |r: usize, c: usize| r * side + c;
        let mut t = Vec::new();
        for r in 0..side {
            for c in 0..side {
                t.push((idx(r, c), idx(r, c), 1.0));
                if r + 1 < side {
                    t.push((idx(r, c), idx(r + 1, c), -g));
                    t.push((idx(r + 1, c), idx(r, c), -g));
                }
                if c + 1 < side {
                    t.push((idx(r, c), idx(r, c + 1), -g));
                    t.push((idx(r, c + 1), idx(r, c), -g));
                }
            }
        }
        SparseSym::from_triplets(side * side, &t).unwrap()
    }

    #[test]
    fn tridiagonal_logdet_matches_dense() {
        let m = tridiag(5, 2.0, -0.5);
        let f = SparseChol::factor(&m).unwrap();
        let dense = DenseChol::factor(&m.to_dense()).unwrap();
        assert_relative_eq!(f.logdet(), dense.logdet(), epsilon = 1e-10);
    }

    #[test]
    fn sparse_identity_logdet_zero() {
        let f = SparseChol::factor(&SparseSym::identity(100)).unwrap();
        assert_relative_eq!(f.logdet(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lattice_car_logdet_matches_dense() {
        let m = lattice_precision(10, 0.2);
        let f = SparseChol::factor(&m).unwrap();
        let dense = DenseChol::factor(&m.to_dense()).unwrap();
        assert_relative_eq!(f.logdet(), dense.logdet(), epsilon = 1e-8);
    }

    #[test]
    fn solve_roundtrip() {
        let m = lattice_precision(7, 0.22);
        let f = SparseChol::factor(&m).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = DVector::from_fn(49, |_, _| rng.random::<f64>() - 0.5);
        let b = m.matvec(&x);
        let got = f.solve_vec(&b);
        assert!((&got - &x).norm() / x.norm() <= 1e-8);
    }

    #[test]
    fn ordering_invariance() {
        let m = lattice_precision(9, 0.21);
        let f_nat = SparseChol::factor_with(&m, Ordering::Natural).unwrap();
        let f_md = SparseChol::factor_with(&m, Ordering::MinDegree).unwrap();
        assert_relative_eq!(f_nat.logdet(), f_md.logdet(), epsilon = 1e-10);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let b = DVector::from_fn(81, |_, _| rng.random::<f64>() - 0.5);
        let xa = f_nat.solve_vec(&b);
        let xb = f_md.solve_vec(&b);
        assert!((&xa - &xb).norm() / xa.norm() <= 1e-10);
    }

    #[test]
    fn min_degree_reduces_fill_on_lattice() {
        let m = lattice_precision(16, 0.2);
        let f_nat = SparseChol::factor_with(&m, Ordering::Natural).unwrap();
        let f_md = SparseChol::factor_with(&m, Ordering::MinDegree).unwrap();
        assert!(f_md.factor_nnz() <= f_nat.factor_nnz());
    }

    #[test]
    fn reconstruction_matches_input() {
        let m = tridiag(8, 3.0, 1.0);
        let f = SparseChol::factor_with(&m, Ordering::MinDegree).unwrap();
        let l = f.dense_factor();
        let rebuilt = &l * l.transpose();
        // undo the permutation: rebuilt[k,l] = A[perm[k], perm[l]]
        let a = m.to_dense();
        for k in 0..8 {
            for l2 in 0..8 {
                assert_relative_eq!(
                    rebuilt[(k, l2)],
                    a[(f.perm()[k], f.perm()[l2])],
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let m = tridiag(4, 0.5, 1.0); // diagonally subdominant, indefinite
        match SparseChol::factor(&m) {
            Err(FgpError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let m =
            SparseSym::from_triplets(2, &[(0, 0, 1.0), (0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        assert_relative_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn asymmetric_pattern_rejected() {
        assert!(SparseSym::from_triplets(2, &[(0, 0, 1.0), (1, 0, 0.5), (1, 1, 1.0)]).is_err());
    }

    #[test]
    fn plus_diagonal_adds() {
        let m = tridiag(3, 2.0, -0.5);
        let d = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = m.plus_diagonal(&d).unwrap();
        assert_relative_eq!(out.get(0, 0), 3.0);
        assert_relative_eq!(out.get(2, 2), 5.0);
        assert_relative_eq!(out.get(0, 1), -0.5);
    }
}
