//! Fixed basis structures: multiresolution bisquare functions for the
//! low-rank component and the lattice incidence map for the graphical
//! component.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{FgpError, Result};

/// Spatial coordinate. One-dimensional problems keep `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new_1d(x: f64) -> Self {
        Point { x, y: 0.0 }
    }

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Compactly supported radial polynomial: `(1 - (d/r)^2)^2` for `d < r`,
/// zero otherwise. Continuous at the support boundary.
pub fn bisquare(dist: f64, radius: f64) -> f64 {
    if dist >= radius {
        0.0
    } else {
        let t = 1.0 - (dist / radius) * (dist / radius);
        t * t
    }
}

/// A multiresolution set of bisquare centers. Every center carries a level
/// (contiguous from 1) and each level has one radius.
#[derive(Debug, Clone)]
pub struct BisquareSet {
    centers: Vec<Point>,
    level_of: Vec<usize>,
    radii: Vec<f64>,
}

impl BisquareSet {
    pub fn new(centers: Vec<Point>, level_of: Vec<usize>, radii: Vec<f64>) -> Result<Self> {
        if centers.len() != level_of.len() {
            return Err(FgpError::DimensionMismatch {
                context: "bisquare level map",
                expected: centers.len(),
                found: level_of.len(),
            });
        }
        if radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(FgpError::EmptyDomain);
        }
        for (&lvl, c) in level_of.iter().zip(&centers) {
            if lvl == 0 || lvl > radii.len() {
                return Err(FgpError::DimensionMismatch {
                    context: "bisquare level index",
                    expected: radii.len(),
                    found: lvl,
                });
            }
            if !c.x.is_finite() || !c.y.is_finite() {
                return Err(FgpError::EmptyDomain);
            }
        }
        Ok(BisquareSet {
            centers,
            level_of,
            radii,
        })
    }

    /// Equally spaced centers over the interior of `[a, b]`: level `k`
    /// places `counts[k]` centers at midpoints of an even split, with
    /// radius 1.5 times the level spacing so neighboring functions at the
    /// same level overlap.
    pub fn multiresolution_1d(domain: (f64, f64), counts: &[usize]) -> Result<Self> {
        let (a, b) = domain;
        if !(b > a) || counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return Err(FgpError::EmptyDomain);
        }
        let mut centers = Vec::new();
        let mut level_of = Vec::new();
        let mut radii = Vec::new();
        for (lvl, &count) in counts.iter().enumerate() {
            let spacing = (b - a) / count as f64;
            radii.push(1.5 * spacing);
            for i in 0..count {
                centers.push(Point::new_1d(a + (i as f64 + 0.5) * spacing));
                level_of.push(lvl + 1);
            }
        }
        BisquareSet::new(centers, level_of, radii)
    }

    /// Regular per-level grids over a rectangle; `counts[k]` is the
    /// per-axis count at level `k`. Centers whose support disk does not
    /// intersect the rectangle are dropped.
    pub fn multiresolution_2d(
        xdomain: (f64, f64),
        ydomain: (f64, f64),
        counts: &[usize],
    ) -> Result<Self> {
        let (x0, x1) = xdomain;
        let (y0, y1) = ydomain;
        if !(x1 > x0) || !(y1 > y0) || counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return Err(FgpError::EmptyDomain);
        }
        let mut centers = Vec::new();
        let mut level_of = Vec::new();
        let mut radii = Vec::new();
        for (lvl, &count) in counts.iter().enumerate() {
            let dx = (x1 - x0) / count as f64;
            let dy = (y1 - y0) / count as f64;
            let radius = 1.5 * dx.max(dy);
            radii.push(radius);
            for iy in 0..count {
                for ix in 0..count {
                    let c = Point::new(
                        x0 + (ix as f64 + 0.5) * dx,
                        y0 + (iy as f64 + 0.5) * dy,
                    );
                    // distance from the rectangle to the center
                    let gx = (x0 - c.x).max(0.0).max(c.x - x1);
                    let gy = (y0 - c.y).max(0.0).max(c.y - y1);
                    if (gx * gx + gy * gy).sqrt() < radius {
                        centers.push(c);
                        level_of.push(lvl + 1);
                    }
                }
            }
        }
        BisquareSet::new(centers, level_of, radii)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn radius_of_center(&self, idx: usize) -> f64 {
        self.radii[self.level_of[idx] - 1]
    }

    pub fn level_of(&self, idx: usize) -> usize {
        self.level_of[idx]
    }
}

/// Sparse n x r basis evaluation matrix in CSC layout (one column per
/// basis function).
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl BasisMatrix {
    /// Basis with no functions (r = 0); the pure-CAR degenerate model.
    pub fn empty(n: usize) -> Self {
        BasisMatrix {
            n,
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut col_ptr = vec![0usize];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    row_idx.push(i);
                    values.push(m[(i, j)]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        BasisMatrix {
            n: m.nrows(),
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// S' v
    pub fn t_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.n);
        let r = self.n_cols();
        let mut out = DVector::zeros(r);
        for j in 0..r {
            let mut acc = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.values[k] * v[self.row_idx[k]];
            }
            out[j] = acc;
        }
        out
    }

    /// S a
    pub fn mul_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(a.len(), self.n_cols());
        let mut out = DVector::zeros(self.n);
        for j in 0..self.n_cols() {
            let aj = a[j];
            if aj != 0.0 {
                for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                    out[self.row_idx[k]] += self.values[k] * aj;
                }
            }
        }
        out
    }

    /// Scatter column `j` into a dense vector (reused buffer must be
    /// zeroed by the caller afterwards via the returned indices).
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }

    /// Dense extraction of selected rows (batch-sized, not n-sized).
    pub fn rows_dense(&self, rows: &[usize]) -> DMatrix<f64> {
        let mut pos_of = std::collections::HashMap::with_capacity(rows.len());
        for (k, &i) in rows.iter().enumerate() {
            pos_of.entry(i).or_insert_with(Vec::new).push(k);
        }
        let mut out = DMatrix::zeros(rows.len(), self.n_cols());
        for j in 0..self.n_cols() {
            let (idx, val) = self.col(j);
            for (&i, &v) in idx.iter().zip(val) {
                if let Some(ks) = pos_of.get(&i) {
                    for &k in ks {
                        out[(k, j)] = v;
                    }
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n_cols());
        for j in 0..self.n_cols() {
            let (idx, val) = self.col(j);
            for (&i, &v) in idx.iter().zip(val) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Restriction to a subset of rows, renumbered 0..rows.len() in the
    /// given order.
    pub fn filter_rows(&self, rows: &[usize]) -> BasisMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (local, &global) in rows.iter().enumerate() {
            map[global] = local;
        }
        let mut col_ptr = vec![0usize];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..self.n_cols() {
            let (idx, val) = self.col(j);
            for (&i, &v) in idx.iter().zip(val) {
                if map[i] != usize::MAX {
                    row_idx.push(map[i]);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        BasisMatrix {
            n: rows.len(),
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Evaluates every bisquare function at every location. Rows with no
/// basis support are legal and stay empty.
pub fn bisquare_matrix(bs: &BisquareSet, locations: &[Point]) -> BasisMatrix {
    let cols: Vec<(Vec<usize>, Vec<f64>)> = (0..bs.len())
        .into_par_iter()
        .map(|j| {
            let center = bs.centers()[j];
            let radius = bs.radius_of_center(j);
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for (i, loc) in locations.iter().enumerate() {
                let d = loc.dist(&center);
                if d < radius {
                    idx.push(i);
                    val.push(bisquare(d, radius));
                }
            }
            (idx, val)
        })
        .collect();
    let mut col_ptr = vec![0usize];
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    for (idx, val) in cols {
        row_idx.extend_from_slice(&idx);
        values.extend_from_slice(&val);
        col_ptr.push(row_idx.len());
    }
    BasisMatrix {
        n: locations.len(),
        col_ptr,
        row_idx,
        values,
    }
}

/// Geometry of the lattice hosting the graphical-model component.
#[derive(Debug, Clone)]
pub enum LatticeGeometry {
    /// Node-centered line: `m` cells with centers equally spaced over
    /// `[a, b]` including the endpoints.
    Line { a: f64, b: f64, m: usize },
    /// Cell-centered rectangles: `nx * ny` equal boxes tiling
    /// `[x0, x1] x [y0, y1]`, row-major cell ids.
    Grid {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        nx: usize,
        ny: usize,
    },
}

/// The M non-overlapping cells hosting the lattice random field.
#[derive(Debug, Clone)]
pub struct Lattice {
    geometry: LatticeGeometry,
    centers: Vec<Point>,
}

impl Lattice {
    pub fn line(a: f64, b: f64, m: usize) -> Result<Self> {
        if !(b > a) || m == 0 {
            return Err(FgpError::EmptyDomain);
        }
        let centers = if m == 1 {
            vec![Point::new_1d(0.5 * (a + b))]
        } else {
            let s = (b - a) / (m - 1) as f64;
            (0..m).map(|i| Point::new_1d(a + i as f64 * s)).collect()
        };
        Ok(Lattice {
            geometry: LatticeGeometry::Line { a, b, m },
            centers,
        })
    }

    pub fn grid(xdomain: (f64, f64), ydomain: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        let (x0, x1) = xdomain;
        let (y0, y1) = ydomain;
        if !(x1 > x0) || !(y1 > y0) || nx == 0 || ny == 0 {
            return Err(FgpError::EmptyDomain);
        }
        let dx = (x1 - x0) / nx as f64;
        let dy = (y1 - y0) / ny as f64;
        let mut centers = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                centers.push(Point::new(
                    x0 + (ix as f64 + 0.5) * dx,
                    y0 + (iy as f64 + 0.5) * dy,
                ));
            }
        }
        Ok(Lattice {
            geometry: LatticeGeometry::Grid {
                x0,
                x1,
                y0,
                y1,
                nx,
                ny,
            },
            centers,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        match self.geometry {
            LatticeGeometry::Line { .. } => 1,
            LatticeGeometry::Grid { .. } => 2,
        }
    }

    /// Containing cell of a location, or `None` outside the domain.
    /// Locations exactly on a cell boundary go to the lower-index cell.
    pub fn cell_of(&self, p: Point) -> Option<usize> {
        match self.geometry {
            LatticeGeometry::Line { a, b, m } => {
                if p.x < a || p.x > b {
                    return None;
                }
                if m == 1 {
                    return Some(0);
                }
                let s = (b - a) / (m - 1) as f64;
                let t = (p.x - a) / s;
                let cell = (t - 0.5).ceil();
                Some((cell.max(0.0) as usize).min(m - 1))
            }
            LatticeGeometry::Grid {
                x0,
                x1,
                y0,
                y1,
                nx,
                ny,
            } => {
                if p.x < x0 || p.x > x1 || p.y < y0 || p.y > y1 {
                    return None;
                }
                let dx = (x1 - x0) / nx as f64;
                let dy = (y1 - y0) / ny as f64;
                let ix = axis_cell((p.x - x0) / dx, nx);
                let iy = axis_cell((p.y - y0) / dy, ny);
                Some(iy * nx + ix)
            }
        }
    }
}

fn axis_cell(t: f64, count: usize) -> usize {
    let i = t.floor();
    let mut idx = i as usize;
    if t == i && idx > 0 {
        idx -= 1; // exact boundary goes to the lower cell
    }
    idx.min(count - 1)
}

/// One-hot incidence of observations onto lattice cells: row `i` has a
/// single 1 at the column of the containing cell.
#[derive(Debug, Clone)]
pub struct Incidence {
    n: usize,
    m: usize,
    cells: Vec<usize>,
}

impl Incidence {
    pub fn from_cells(m: usize, cells: Vec<usize>) -> Result<Self> {
        if let Some(idx) = cells.iter().position(|&c| c >= m) {
            return Err(FgpError::LocationOutsideLattice { index: idx });
        }
        Ok(Incidence {
            n: cells.len(),
            m,
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.m
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// A' v (scatter into cells)
    pub fn t_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.n);
        let mut out = DVector::zeros(self.m);
        for (i, &c) in self.cells.iter().enumerate() {
            out[c] += v[i];
        }
        out
    }

    /// A w (gather from cells)
    pub fn mul_vec(&self, w: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(w.len(), self.m);
        DVector::from_fn(self.n, |i, _| w[self.cells[i]])
    }

    /// Diagonal of A'A: observation counts per cell.
    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.m];
        for &c in &self.cells {
            counts[c] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.m);
        for (i, &c) in self.cells.iter().enumerate() {
            a[(i, c)] = 1.0;
        }
        a
    }
}

/// Maps each location to its containing cell. Fails with the index of the
/// first location outside the lattice.
pub fn incidence_matrix(lat: &Lattice, locations: &[Point]) -> Result<Incidence> {
    let mut cells = Vec::with_capacity(locations.len());
    for (i, p) in locations.iter().enumerate() {
        match lat.cell_of(*p) {
            Some(c) => cells.push(c),
            None => return Err(FgpError::LocationOutsideLattice { index: i }),
        }
    }
    Incidence::from_cells(lat.num_cells(), cells)
}
