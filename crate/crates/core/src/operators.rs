//! Neumann Laplacians on the cell-centered grid.
//!
//! The sign convention is `-Δ >= 0`. The weighted operator
//! `-Δ_κ v = -∇·(κ ∇v)` uses the harmonic mean of the cell weight on each
//! face, so with `κ = 1/ρ₀` the face coefficient is `1/mean(ρ₀)`, the same
//! face density the momentum equation uses.

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};
use crate::grid::{self, FaceField, Grid};

/// Orthonormal DCT-II per axis. Its basis vectors are exactly the
/// eigenvectors of the unweighted cell-centered Neumann Laplacian.
#[derive(Debug, Clone)]
pub struct CosineTransform {
    grid: Grid,
    /// Per axis: `n × n`, row `m` is cosine mode `m` sampled at the cells.
    forward: Vec<DMatrix<f64>>,
    transposed: Vec<DMatrix<f64>>,
    /// Per axis: eigenvalues `(2/h²)(1 - cos(mπ/n))` of the 1D operator.
    axis_values: Vec<Vec<f64>>,
}

impl CosineTransform {
    pub fn new(grid: &Grid) -> Self {
        let mut forward = Vec::with_capacity(grid.ndim());
        let mut axis_values = Vec::with_capacity(grid.ndim());
        for (&n, &h) in grid.dims().iter().zip(grid.spacing()) {
            let nf = n as f64;
            let m = DMatrix::from_fn(n, n, |k, j| {
                let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                s * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / nf).cos()
            });
            forward.push(m);
            axis_values.push(
                (0..n)
                    .map(|k| 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * k as f64 / nf).cos()))
                    .collect(),
            );
        }
        CosineTransform {
            grid: grid.clone(),
            transposed: forward.iter().map(|m| m.transpose()).collect(),
            forward,
            axis_values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Eigenvalue of the full-grid mode with flat (row-major) index `mode`.
    pub fn eigenvalue(&self, mode: usize) -> f64 {
        self.grid
            .multi_index(mode)
            .iter()
            .zip(&self.axis_values)
            .map(|(&k, vals)| vals[k])
            .sum()
    }

    /// Entry `cell` of the Euclidean-unit eigenvector for `mode`.
    pub fn entry(&self, mode: usize, cell: usize) -> f64 {
        let km = self.grid.multi_index(mode);
        let jm = self.grid.multi_index(cell);
        km.iter()
            .zip(&jm)
            .zip(&self.forward)
            .map(|((&k, &j), m)| m[(k, j)])
            .product()
    }

    /// Euclidean-orthonormal coefficients of `v` (mode index row-major).
    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        self.apply(v, false)
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        self.apply(c, true)
    }

    fn apply(&self, v: &[f64], transpose: bool) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len(), "field length does not match grid");
        let mut cur = v.to_vec();
        let mut next = vec![0.0; v.len()];
        for axis in 0..self.grid.ndim() {
            let n = self.grid.dims()[axis];
            let post = self.grid.stride(axis);
            let pre = self.grid.len() / (n * post);
            let m = &self.forward[axis];
            let mt = &self.transposed[axis];
            if post == 1 {
                // Column-major (n × pre): column p is block p along this axis.
                let x = DMatrixView::from_slice(&cur, n, pre);
                let mut y = DMatrixViewMut::from_slice(&mut next, n, pre);
                if transpose {
                    y.gemm_tr(1.0, m, &x, 0.0);
                } else {
                    y.gemm(1.0, m, &x, 0.0);
                }
            } else {
                // Each block is (n × post) row-major, i.e. (post × n) column-major.
                let block = n * post;
                for p in 0..pre {
                    let src = &cur[p * block..(p + 1) * block];
                    let dst = &mut next[p * block..(p + 1) * block];
                    let x = DMatrixView::from_slice(src, post, n);
                    let mut y = DMatrixViewMut::from_slice(dst, post, n);
                    if transpose {
                        y.gemm(1.0, &x, m, 0.0);
                    } else {
                        y.gemm(1.0, &x, mt, 0.0);
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Symmetric nonnegative operator on zero-mean grid functions.
#[derive(Debug, Clone)]
pub enum LinOperator {
    /// Assembled matrix, symmetric in the Euclidean sense (uniform cell volume).
    Dense { grid: Grid, matrix: DMatrix<f64> },
    /// `scale · (-Δ_N)`, diagonalized by the cosine transform.
    Cosine {
        transform: Arc<CosineTransform>,
        scale: f64,
    },
}

impl LinOperator {
    pub fn grid(&self) -> &Grid {
        match self {
            LinOperator::Dense { grid, .. } => grid,
            LinOperator::Cosine { transform, .. } => transform.grid(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            LinOperator::Dense { matrix, .. } => {
                (matrix * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()
            }
            LinOperator::Cosine { transform, scale } => {
                let mut c = transform.forward(v);
                for (k, ck) in c.iter_mut().enumerate() {
                    *ck *= scale * transform.eigenvalue(k);
                }
                transform.inverse(&c)
            }
        }
    }

    /// Full matrix of the operator (for oracles and the dense eigensolver).
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinOperator::Dense { matrix, .. } => matrix.clone(),
            LinOperator::Cosine { transform, scale } => {
                let g = transform.grid();
                laplacian_matrix(g, &unit_face_weights(g)) * *scale
            }
        }
    }
}

fn unit_face_weights(grid: &Grid) -> FaceField {
    let mut w = FaceField::zeros(grid);
    w.iter_mut().for_each(|x| *x = 1.0);
    w
}

fn laplacian_matrix(grid: &Grid, face_weight: &FaceField) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(grid.len(), grid.len());
    for axis in 0..grid.ndim() {
        let h = grid.spacing()[axis];
        let w = &face_weight.comps[axis];
        grid.for_each_face(axis, |f, l, r| {
            let c = w[f] / (h * h);
            m[(l, l)] += c;
            m[(r, r)] += c;
            m[(l, r)] -= c;
            m[(r, l)] -= c;
        });
    }
    m
}

/// Face coefficients for the weighted Laplacian: harmonic mean of the
/// adjacent cell weights.
pub fn face_weights(grid: &Grid, weight: &[f64]) -> FaceField {
    let mut w = FaceField::zeros(grid);
    for axis in 0..grid.ndim() {
        let comp = &mut w.comps[axis];
        grid.for_each_face(axis, |f, l, r| {
            comp[f] = 2.0 * weight[l] * weight[r] / (weight[l] + weight[r]);
        });
    }
    w
}

/// Assembles `-∇·(κ∇·)` with reflecting closure; `weight = None` means `κ ≡ 1`.
///
/// A spatially uniform weight takes the cosine fast path.
pub fn build_laplacian(grid: &Grid, weight: Option<&[f64]>) -> Result<LinOperator> {
    let transform = || Arc::new(CosineTransform::new(grid));
    let Some(weight) = weight else {
        return Ok(LinOperator::Cosine {
            transform: transform(),
            scale: 1.0,
        });
    };
    if weight.len() != grid.len() {
        return Err(Error::validation(format!(
            "weight has {} values for a grid of {} cells",
            weight.len(),
            grid.len()
        )));
    }
    if let Some(bad) = weight.iter().position(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::validation(format!(
            "weight must be strictly positive; value {} at grid index {:?}",
            weight[bad],
            grid.multi_index(bad)
        )));
    }
    if weight.iter().all(|&k| k == weight[0]) {
        return Ok(LinOperator::Cosine {
            transform: transform(),
            scale: weight[0],
        });
    }
    Ok(LinOperator::Dense {
        grid: grid.clone(),
        matrix: laplacian_matrix(grid, &face_weights(grid, weight)),
    })
}

/// Applies `-∇·(w ∇v)` with explicit face coefficients, matrix-free.
pub fn apply_weighted_laplacian(grid: &Grid, face_weight: &FaceField, v: &[f64]) -> Vec<f64> {
    let mut flux = grid::grad(grid, v);
    for (q, w) in flux.iter_mut().zip(face_weight.iter()) {
        *q *= w;
    }
    let mut out = grid::div(grid, &flux);
    out.iter_mut().for_each(|x| *x = -*x);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumann_stencil_1d() {
        let h = 0.5;
        let g = Grid::new(vec![4], vec![h]).unwrap();
        let m = build_laplacian(&g, None).unwrap().to_dense();
        let s = 1.0 / (h * h);
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
             1.0, -1.0,  0.0,  0.0,
            -1.0,  2.0, -1.0,  0.0,
             0.0, -1.0,  2.0, -1.0,
             0.0,  0.0, -1.0,  1.0,
        ]) * s;
        assert!((m - expected).abs().max() < 1e-14);
    }

    #[test]
    fn constant_weight_scales_operator() {
        let g = Grid::new(vec![5, 4], vec![0.1, 0.2]).unwrap();
        let half = vec![0.5; g.len()];
        let a = build_laplacian(&g, Some(&half)).unwrap().to_dense();
        let b = build_laplacian(&g, None).unwrap().to_dense();
        assert!((a - b * 0.5).abs().max() < 1e-12);
    }

    #[test]
    fn nonpositive_weight_names_index() {
        let g = Grid::new(vec![3, 3], vec![1.0, 1.0]).unwrap();
        let mut w = vec![1.0; 9];
        w[5] = -2.0;
        let err = build_laplacian(&g, Some(&w)).unwrap_err().to_string();
        assert!(err.contains("[1, 2]"), "{err}");
    }

    #[test]
    fn constants_in_kernel() {
        let g = Grid::new(vec![4, 3], vec![1.0, 2.0]).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let op = build_laplacian(&g, Some(&w)).unwrap();
        let out = op.apply(&vec![3.0; g.len()]);
        assert!(out.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn cosine_transform_is_orthonormal_and_diagonalizes() {
        let g = Grid::new(vec![6, 5], vec![0.3, 0.7]).unwrap();
        let t = CosineTransform::new(&g);
        let v: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = t.inverse(&t.forward(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
        let dense = build_laplacian(&g, None).unwrap().to_dense();
        for mode in [1, 7, 29] {
            let e: Vec<f64> = (0..g.len()).map(|c| t.entry(mode, c)).collect();
            let ae = &dense * nalgebra::DVector::from_vec(e.clone());
            for (x, y) in ae.iter().zip(&e) {
                assert!((x - t.eigenvalue(mode) * y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matrix_free_matches_dense() {
        let g = Grid::new(vec![4, 5], vec![0.5, 0.25]).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|i| 1.0 / (900.0 + 10.0 * i as f64)).collect();
        let op = build_laplacian(&g, Some(&w)).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| (i as f64).cos()).collect();
        let a = op.apply(&v);
        let b = apply_weighted_laplacian(&g, &face_weights(&g, &w), &v);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
