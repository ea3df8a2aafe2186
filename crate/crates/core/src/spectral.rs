//! Eigenbases of Neumann Laplacians restricted to zero-mean functions, and
//! the spectral calculus built on them: fractional powers, L² truncation and
//! the Ritz projection.
//!
//! Eigenvectors are orthonormal in the discrete L² inner product
//! `(a, b) = V Σ aᵢbᵢ` (V the cell volume). Modes are sorted by ascending
//! eigenvalue; within a numerically degenerate group the order is the
//! lexicographic order of the entries after fixing each sign so that the
//! first nonzero entry is positive.

use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::operators::{CosineTransform, LinOperator};

/// Relative gap below which two eigenvalues count as tied.
const TIE_TOL: f64 = 1e-10;
/// Means below this (relative to max |v|, floored at 1) are subtracted silently.
pub const MEAN_TOL: f64 = 1e-8;
/// Per-mode eigen-residual bound, relative to the largest eigenvalue.
const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
enum Repr {
    /// `N × n`, columns L²-orthonormal.
    Dense(DMatrix<f64>),
    /// Subset of the full cosine basis, by flat mode index.
    Cosine {
        transform: Arc<CosineTransform>,
        modes: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    grid: Grid,
    values: Vec<f64>,
    repr: Repr,
    weighted: bool,
}

impl SpectralBasis {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Eigenvalues, ascending and strictly positive.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether the basis came from a variable-coefficient operator.
    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// The cosine transform behind this basis, if it is a cosine basis.
    pub fn cosine(&self) -> Option<(&Arc<CosineTransform>, &[usize])> {
        match &self.repr {
            Repr::Cosine { transform, modes } => Some((transform, modes)),
            Repr::Dense(_) => None,
        }
    }

    /// Mode `i` as a grid function.
    pub fn mode(&self, i: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.len()];
        c[i] = 1.0;
        self.synthesize(&c)
    }

    /// L² coefficients `(v, wᵢ)`. No mean check: the basis is orthogonal to
    /// constants, so any mean is dropped.
    pub fn analyze(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len(), "field length does not match grid");
        match &self.repr {
            Repr::Dense(w) => {
                let vol = self.grid.cell_volume();
                (w.tr_mul(&DVector::from_column_slice(v)) * vol)
                    .as_slice()
                    .to_vec()
            }
            Repr::Cosine { transform, modes } => {
                let full = transform.forward(v);
                let s = self.grid.cell_volume().sqrt();
                modes.iter().map(|&m| full[m] * s).collect()
            }
        }
    }

    /// `Σ cᵢ wᵢ`.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.len(), "coefficient count does not match basis");
        match &self.repr {
            Repr::Dense(w) => (w * DVector::from_column_slice(c)).as_slice().to_vec(),
            Repr::Cosine { transform, modes } => {
                let mut full = vec![0.0; self.grid.len()];
                let s = 1.0 / self.grid.cell_volume().sqrt();
                for (&m, &ci) in modes.iter().zip(c) {
                    full[m] = ci * s;
                }
                transform.inverse(&full)
            }
        }
    }

    /// L² projection onto the span of the basis.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.synthesize(&self.analyze(v))
    }

    /// Scales modal coefficients by `λᵢ^γ`.
    pub fn scale_modal(&self, gamma: f64, c: &[f64]) -> Vec<f64> {
        c.iter()
            .zip(&self.values)
            .map(|(ci, l)| ci * l.powf(gamma))
            .collect()
    }

    /// `A^γ v = Σ λᵢ^γ (v, wᵢ) wᵢ` over the retained modes.
    pub fn frac_apply(&self, gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
        if gamma < 0.0 && self.values.first().is_some_and(|&l| l < 1e-14) {
            return Err(Error::numerical(format!(
                "negative power {gamma} needs a positive spectrum; smallest eigenvalue is {:e}",
                self.values[0]
            )));
        }
        let v = zero_mean(v)?;
        Ok(self.synthesize(&self.scale_modal(gamma, &self.analyze(&v))))
    }

    /// Ritz projection coefficients of `g` for the operator this basis
    /// diagonalizes. In its own eigenbasis the energy-form projection and
    /// the L² projection coincide, so the coefficients are `(g, wᵢ)`.
    pub fn ritz_project(&self, g: &[f64]) -> Result<Vec<f64>> {
        let g = zero_mean(g)?;
        Ok(self.analyze(&g))
    }

    /// Dense `N × n` matrix of L²-normalized modes.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(w) => w.clone(),
            Repr::Cosine { .. } => {
                let cols: Vec<DVector<f64>> = (0..self.len())
                    .map(|i| DVector::from_vec(self.mode(i)))
                    .collect();
                DMatrix::from_columns(&cols)
            }
        }
    }
}

/// Returns `v` with its mean removed, rejecting means that are not
/// round-off.
pub fn zero_mean(v: &[f64]) -> Result<Vec<f64>> {
    let m = grid::mean(v);
    let scale = v.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    if m.abs() > MEAN_TOL * scale {
        return Err(Error::validation(format!(
            "input must have zero mean; mean is {m:e}"
        )));
    }
    Ok(v.iter().map(|x| x - m).collect())
}

/// The `n` smallest nonzero eigenpairs of `op`.
pub fn eigenbasis(op: &LinOperator, n: usize) -> Result<SpectralBasis> {
    let grid = op.grid().clone();
    let total = grid.len();
    if n == 0 || n >= total {
        return Err(Error::validation(format!(
            "mode count must be in 1..{total} (zero mode excluded), got {n}"
        )));
    }
    match op {
        LinOperator::Cosine { transform, scale } => {
            Ok(cosine_basis(&grid, transform.clone(), *scale, n))
        }
        LinOperator::Dense { matrix, .. } => dense_basis(&grid, matrix, n),
    }
}

/// Full-spectrum basis of the unweighted Neumann Laplacian (all N−1 modes).
pub fn neumann_basis(grid: &Grid) -> SpectralBasis {
    cosine_basis(
        grid,
        Arc::new(CosineTransform::new(grid)),
        1.0,
        grid.len() - 1,
    )
}

fn cosine_basis(grid: &Grid, transform: Arc<CosineTransform>, scale: f64, n: usize) -> SpectralBasis {
    let mut modes: Vec<(f64, usize)> = (1..grid.len())
        .map(|m| (scale * transform.eigenvalue(m), m))
        .collect();
    modes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // The first entry of every cosine mode is positive, so no sign fix is needed.
    break_ties(&mut modes, |a, b| {
        (0..grid.len())
            .map(|c| transform.entry(a, c).total_cmp(&transform.entry(b, c)))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    modes.truncate(n);
    SpectralBasis {
        grid: grid.clone(),
        values: modes.iter().map(|m| m.0).collect(),
        repr: Repr::Cosine {
            transform,
            modes: modes.iter().map(|m| m.1).collect(),
        },
        weighted: false,
    }
}

/// Re-sorts each run of numerically tied eigenvalues with `cmp`.
fn break_ties(modes: &mut [(f64, usize)], cmp: impl Fn(usize, usize) -> Ordering) {
    let mut start = 0;
    while start < modes.len() {
        let mut end = start + 1;
        while end < modes.len()
            && modes[end].0 - modes[start].0 <= TIE_TOL * modes[start].0.abs().max(f64::MIN_POSITIVE)
        {
            end += 1;
        }
        if end - start > 1 {
            let group = &mut modes[start..end];
            let lead = group[0].0;
            group.sort_by(|a, b| cmp(a.1, b.1));
            // Keep the value sequence sorted; tied values are equal to tolerance.
            let mut vals: Vec<f64> = group.iter().map(|g| g.0).collect();
            vals.sort_by(f64::total_cmp);
            debug_assert!(vals[0] >= lead);
            for (g, v) in group.iter_mut().zip(vals) {
                g.0 = v;
            }
        }
        start = end;
    }
}

fn dense_basis(grid: &Grid, matrix: &DMatrix<f64>, n: usize) -> Result<SpectralBasis> {
    let total = grid.len();
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lmax = eig.eigenvalues[order[total - 1]].abs().max(f64::MIN_POSITIVE);
    let l0 = eig.eigenvalues[order[0]];
    if l0.abs() > 1e-9 * lmax {
        return Err(Error::numerical(format!(
            "operator kernel is not one-dimensional: smallest eigenvalue {l0:e}"
        )));
    }

    let vol = grid.cell_volume();
    let mut vecs: Vec<DVector<f64>> = Vec::with_capacity(total - 1);
    let mut modes: Vec<(f64, usize)> = Vec::with_capacity(total - 1);
    for (slot, &k) in order[1..].iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let thresh = 1e-12 * v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > thresh) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vecs.push(v);
        modes.push((eig.eigenvalues[k], slot));
    }
    break_ties(&mut modes, |a, b| {
        vecs[a]
            .iter()
            .zip(vecs[b].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    modes.truncate(n);

    let mut w = DMatrix::zeros(total, n);
    let mut values = Vec::with_capacity(n);
    for (col, &(lambda, slot)) in modes.iter().enumerate() {
        let e = &vecs[slot];
        let resid = (matrix * e - e * lambda).norm();
        if resid > RESIDUAL_TOL * lmax {
            return Err(Error::numerical(format!(
                "eigenpair {col} residual {resid:e} exceeds {:e}",
                RESIDUAL_TOL * lmax
            )));
        }
        if lambda <= 0.0 {
            return Err(Error::numerical(format!(
                "eigenvalue {col} is not positive ({lambda:e})"
            )));
        }
        w.set_column(col, &(e / vol.sqrt()));
        values.push(lambda);
    }
    Ok(SpectralBasis {
        grid: grid.clone(),
        values,
        repr: Repr::Dense(w),
        weighted: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::build_laplacian;

    fn variable_weight(g: &Grid) -> Vec<f64> {
        grid::sample(g, |x| 1.0 / (1000.0 + 150.0 * (3.0 * x[0]).sin() * (2.0 * x.last().unwrap()).cos()))
    }

    #[test]
    fn eigenvalues_match_closed_form_1d() {
        let n = 64;
        let h = 1.0 / n as f64;
        let g = Grid::new(vec![n], vec![h]).unwrap();
        let b = eigenbasis(&build_laplacian(&g, None).unwrap(), n - 1).unwrap();
        for k in 1..n {
            let exact = 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos());
            assert!((b.values()[k - 1] - exact).abs() < 1e-10 * exact.max(1.0));
        }
    }

    #[test]
    fn dense_basis_is_orthonormal_and_zero_mean() {
        let g = Grid::new(vec![6, 5], vec![0.2, 0.3]).unwrap();
        let op = build_laplacian(&g, Some(&variable_weight(&g))).unwrap();
        let b = eigenbasis(&op, 20).unwrap();
        let w = b.to_dense();
        let gram = w.tr_mul(&w) * g.cell_volume();
        assert!((gram - DMatrix::identity(20, 20)).abs().max() < 1e-10);
        for i in 0..20 {
            assert!(grid::mean(&b.mode(i)).abs() < 1e-10);
        }
        assert!(b.values().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn full_basis_reproduces_zero_mean_vectors() {
        let g = Grid::new(vec![5, 4], vec![1.0, 1.0]).unwrap();
        let mut v: Vec<f64> = (0..g.len()).map(|i| ((i * 13) % 7) as f64).collect();
        grid::subtract_mean(&mut v);
        for op in [
            build_laplacian(&g, None).unwrap(),
            build_laplacian(&g, Some(&variable_weight(&g))).unwrap(),
        ] {
            let b = eigenbasis(&op, g.len() - 1).unwrap();
            let back = b.project(&v);
            for (a, c) in v.iter().zip(&back) {
                assert!((a - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mode_count_bounds() {
        let g = Grid::new(vec![4], vec![1.0]).unwrap();
        let op = build_laplacian(&g, None).unwrap();
        assert!(eigenbasis(&op, 0).is_err());
        assert!(eigenbasis(&op, 4).is_err());
        assert_eq!(eigenbasis(&op, 3).unwrap().len(), 3);
    }

    #[test]
    fn frac_apply_rejects_nonzero_mean() {
        let g = Grid::new(vec![8], vec![1.0]).unwrap();
        let b = neumann_basis(&g);
        let v = vec![1.0; 8];
        assert!(b.frac_apply(0.5, &v).is_err());
        let mut w: Vec<f64> = (0..8).map(|i| i as f64).collect();
        grid::subtract_mean(&mut w);
        w[0] += 1e-12;
        assert!(b.frac_apply(0.5, &w).is_ok());
    }

    #[test]
    fn frac_power_of_eigenvector() {
        let g = Grid::new(vec![7, 6], vec![0.5, 0.4]).unwrap();
        let b = eigenbasis(&build_laplacian(&g, Some(&variable_weight(&g))).unwrap(), 15).unwrap();
        for k in [0, 4, 14] {
            let w = b.mode(k);
            let aw = b.frac_apply(1.0, &w).unwrap();
            let w0 = b.frac_apply(0.0, &w).unwrap();
            for i in 0..g.len() {
                assert!((aw[i] - b.values()[k] * w[i]).abs() < 1e-10 * b.values()[k].max(1.0));
                assert!((w0[i] - w[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ties_are_broken_deterministically() {
        let g = Grid::uniform(2, 6, 1.0).unwrap();
        let b = eigenbasis(&build_laplacian(&g, None).unwrap(), 10).unwrap();
        // Modes (0,1) and (1,0) are tied; lexicographic entry order decides.
        assert!((b.values()[0] - b.values()[1]).abs() < 1e-12);
        let (w0, w1) = (b.mode(0), b.mode(1));
        let first_diff = w0.iter().zip(&w1).find(|(a, c)| a != c).unwrap();
        assert!(first_diff.0 < first_diff.1);
    }

    #[test]
    fn ritz_projection_matches_cosine_truncation_for_constant_weight() {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let weighted = eigenbasis(&build_laplacian(&g, Some(&vec![1e-3; g.len()])).unwrap(), 12).unwrap();
        let plain = eigenbasis(&build_laplacian(&g, None).unwrap(), 12).unwrap();
        let mut v = grid::sample(&g, |x| (x[0] * 5.0).exp() * x[1]);
        grid::subtract_mean(&mut v);
        let a = weighted.synthesize(&weighted.ritz_project(&v).unwrap());
        let c = plain.project(&v);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
