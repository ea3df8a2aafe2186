//! Cell-centered rectangular grids and the staggered difference operators
//! built on them.
//!
//! Scalars (density, pressure) live at cell centers. Vector fields
//! (velocity, force density, displacement) live on the interior faces of a
//! MAC-style staggered layout; boundary faces carry zero normal component,
//! which is the discrete no-penetration condition. With this layout `grad`
//! is exactly minus the adjoint of `div` in the cell-volume weighted inner
//! product, so every Laplacian assembled from them is symmetric with
//! constants in its kernel.
//!
//! All fields are stored row-major (last axis fastest).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::validation(format!(
                "grid must have 1 to 3 axes, got {}",
                dims.len()
            )));
        }
        if dims.len() != spacing.len() {
            return Err(Error::validation(format!(
                "grid has {} extents but {} spacings",
                dims.len(),
                spacing.len()
            )));
        }
        if let Some(axis) = dims.iter().position(|&n| n < 2) {
            return Err(Error::validation(format!(
                "grid extent along axis {axis} is {} (need >= 2)",
                dims[axis]
            )));
        }
        if let Some(axis) = spacing.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::validation(format!(
                "grid spacing along axis {axis} is {} (need > 0)",
                spacing[axis]
            )));
        }
        Ok(Grid { dims, spacing })
    }

    /// Uniform grid with the same extent and spacing on every axis.
    pub fn uniform(ndim: usize, n: usize, h: f64) -> Result<Self> {
        Grid::new(vec![n; ndim], vec![h; ndim])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.dims
            .iter()
            .zip(&self.spacing)
            .map(|(&n, &h)| n as f64 * h)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    /// Distance in the flat index between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.ndim()];
        for axis in (0..self.ndim()).rev() {
            idx[axis] = flat % self.dims[axis];
            flat /= self.dims[axis];
        }
        idx
    }

    /// Physical coordinates of the center of cell `flat`, origin at the
    /// domain corner.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.spacing)
            .map(|(&i, &h)| (i as f64 + 0.5) * h)
            .collect()
    }

    /// Cell containing the physical point `x`, or `None` if outside.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.ndim() {
            return None;
        }
        let mut idx = Vec::with_capacity(self.ndim());
        for axis in 0..self.ndim() {
            let s = x[axis] / self.spacing[axis];
            if !(0.0..self.dims[axis] as f64).contains(&s) {
                return None;
            }
            idx.push(s.floor() as usize);
        }
        Some(self.flat_index(&idx))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.locate(x).is_some()
    }

    /// Number of interior faces normal to `axis`.
    pub fn face_count(&self, axis: usize) -> usize {
        self.len() / self.dims[axis] * (self.dims[axis] - 1)
    }

    /// Physical position of face `f` normal to `axis`.
    pub fn face_center(&self, axis: usize, f: usize) -> Vec<f64> {
        let (left, _) = self.face_cells(axis, f);
        let mut x = self.cell_center(left);
        x[axis] += 0.5 * self.spacing[axis];
        x
    }

    /// Calls `visit(face, left_cell, right_cell)` for every interior face
    /// normal to `axis`, in face storage order.
    pub fn for_each_face(&self, axis: usize, mut visit: impl FnMut(usize, usize, usize)) {
        let n = self.dims[axis];
        let inner = self.stride(axis);
        let outer = self.len() / (n * inner);
        let mut f = 0;
        for o in 0..outer {
            for i in 0..n - 1 {
                let base = (o * n + i) * inner;
                for r in 0..inner {
                    visit(f, base + r, base + r + inner);
                    f += 1;
                }
            }
        }
    }

    fn face_cells(&self, axis: usize, f: usize) -> (usize, usize) {
        let n = self.dims[axis];
        let inner = self.stride(axis);
        let r = f % inner;
        let rest = f / inner;
        let i = rest % (n - 1);
        let o = rest / (n - 1);
        let left = (o * n + i) * inner + r;
        (left, left + inner)
    }
}

/// Vector field on interior faces: one component array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub comps: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        FaceField {
            comps: (0..grid.ndim())
                .map(|axis| vec![0.0; grid.face_count(axis)])
                .collect(),
        }
    }

    /// Samples `f(x)[axis]` at each face center.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut out = FaceField::zeros(grid);
        for (axis, comp) in out.comps.iter_mut().enumerate() {
            for (k, v) in comp.iter_mut().enumerate() {
                *v = f(&grid.face_center(axis, k))[axis];
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.comps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.comps.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.comps.iter_mut().flatten()
    }

    pub fn scale(&mut self, s: f64) {
        self.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &FaceField) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }
}

/// Discrete L² inner product of cell fields.
pub fn inner(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Discrete L² inner product of face fields.
pub fn face_inner(grid: &Grid, a: &FaceField, b: &FaceField) -> f64 {
    grid.cell_volume() * a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>()
}

pub fn norm(grid: &Grid, a: &[f64]) -> f64 {
    inner(grid, a, a).sqrt()
}

pub fn face_norm(grid: &Grid, a: &FaceField) -> f64 {
    face_inner(grid, a, a).sqrt()
}

/// Discrete Lᵖ norm of a cell field; `p = inf` gives the max norm.
pub fn lp_norm(grid: &Grid, a: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return a.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    (grid.cell_volume() * a.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

pub fn subtract_mean(a: &mut [f64]) {
    let m = mean(a);
    a.iter_mut().for_each(|v| *v -= m);
}

/// Cell-centered divergence of a face field (zero flux through the boundary).
pub fn div(grid: &Grid, u: &FaceField) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for axis in 0..grid.ndim() {
        let inv_h = 1.0 / grid.spacing()[axis];
        let comp = &u.comps[axis];
        grid.for_each_face(axis, |f, l, r| {
            let flux = comp[f] * inv_h;
            out[l] += flux;
            out[r] -= flux;
        });
    }
    out
}

/// Face-normal gradient of a cell field.
pub fn grad(grid: &Grid, v: &[f64]) -> FaceField {
    let mut out = FaceField::zeros(grid);
    for axis in 0..grid.ndim() {
        let inv_h = 1.0 / grid.spacing()[axis];
        let comp = &mut out.comps[axis];
        grid.for_each_face(axis, |f, l, r| comp[f] = (v[r] - v[l]) * inv_h);
    }
    out
}

/// Arithmetic mean of the two cells adjacent to each face.
pub fn face_average(grid: &Grid, v: &[f64]) -> FaceField {
    let mut out = FaceField::zeros(grid);
    for axis in 0..grid.ndim() {
        let comp = &mut out.comps[axis];
        grid.for_each_face(axis, |f, l, r| comp[f] = 0.5 * (v[l] + v[r]));
    }
    out
}

/// Pointwise product of two face fields, collected back to cells by
/// averaging each cell's two faces per axis (boundary faces contribute
/// zero) and summing over axes. Discretizes `a · b` for face vectors.
pub fn face_dot_to_cells(grid: &Grid, a: &FaceField, b: &FaceField) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for axis in 0..grid.ndim() {
        let (ca, cb) = (&a.comps[axis], &b.comps[axis]);
        grid.for_each_face(axis, |f, l, r| {
            let prod = 0.5 * ca[f] * cb[f];
            out[l] += prod;
            out[r] += prod;
        });
    }
    out
}

/// Cell-centered vector from a face field: per axis, the mean of the two
/// faces bounding the cell (boundary faces count as zero).
pub fn faces_to_cells(grid: &Grid, u: &FaceField) -> Vec<Vec<f64>> {
    (0..grid.ndim())
        .map(|axis| {
            let mut out = vec![0.0; grid.len()];
            let comp = &u.comps[axis];
            grid.for_each_face(axis, |f, l, r| {
                out[l] += 0.5 * comp[f];
                out[r] += 0.5 * comp[f];
            });
            out
        })
        .collect()
}

/// Cell-centered gradient by centered differences, one-sided at the
/// domain boundary.
pub fn centered_gradient(grid: &Grid, v: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.ndim())
        .map(|axis| {
            let n = grid.dims()[axis];
            let s = grid.stride(axis);
            let h = grid.spacing()[axis];
            (0..grid.len())
                .map(|c| {
                    let i = (c / s) % n;
                    if i == 0 {
                        (v[c + s] - v[c]) / h
                    } else if i == n - 1 {
                        (v[c] - v[c - s]) / h
                    } else {
                        (v[c + s] - v[c - s]) / (2.0 * h)
                    }
                })
                .collect()
        })
        .collect()
}

/// Pointwise Euclidean magnitude of a cell-centered vector field.
pub fn magnitude(comps: &[Vec<f64>]) -> Vec<f64> {
    let n = comps.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .collect()
}

/// Samples `f` at every cell center.
pub fn sample(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..grid.len()).map(|c| f(&grid.cell_center(c))).collect()
}
