//! Constitutive terms of the (u, σ, p) system: the nonlinear coefficients
//! a and b, the coefficient-gradient couplings g and h, sources, and the
//! absorption operators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, FaceField, Grid};
use crate::media::MediumFields;
use crate::spectral::{self, SpectralBasis};

/// `a(σ) = 1 + 2σ`
pub fn a_of(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| 1.0 + 2.0 * s).collect()
}

/// `b(σ) = 1 + (B/2A)σ`
pub fn b_of(sigma: &[f64], b_over_a: &[f64]) -> Vec<f64> {
    sigma
        .iter()
        .zip(b_over_a)
        .map(|(s, ba)| 1.0 + 0.5 * ba * s)
        .collect()
}

/// `g(u) = −u·∇ln ρ₀`, with the product formed on faces.
pub fn g_of(grid: &Grid, u: &FaceField, rho0: &[f64]) -> Vec<f64> {
    let ln_rho: Vec<f64> = rho0.iter().map(|r| r.ln()).collect();
    g_from_gradient(grid, u, &grid::grad(grid, &ln_rho))
}

/// `g(u)` given the face gradient of `ln ρ₀`.
pub fn g_from_gradient(grid: &Grid, u: &FaceField, grad_ln_rho: &FaceField) -> Vec<f64> {
    let mut g = grid::face_dot_to_cells(grid, u, grad_ln_rho);
    g.iter_mut().for_each(|v| *v = -*v);
    g
}

/// `h = c₀²(Iₜu + d₀)·∇ρ₀`.
pub fn h_of(grid: &Grid, iu: &FaceField, d0: &FaceField, media: &MediumFields) -> Vec<f64> {
    h_from_gradient(grid, iu, d0, &grid::grad(grid, &media.rho0), &media.c0sq)
}

pub fn h_from_gradient(grid: &Grid, iu: &FaceField, d0: &FaceField, grad_rho: &FaceField, c0sq: &[f64]) -> Vec<f64> {
    let mut d = iu.clone();
    d.axpy(1.0, d0);
    let mut h = grid::face_dot_to_cells(grid, &d, grad_rho);
    h.iter_mut().zip(c0sq).for_each(|(v, c)| *v *= c);
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AbsorptionKind {
    /// `Lσ = −2α₀(−Δ_{1/ρ₀})⁻¹[τ(−Δ)^{y/2}σ_t + η(−Δ)^{(y+1)/2}σ]`
    #[default]
    ModifiedL,
    /// The k-Wave operator, `c₀²L̃(ρ₀σ)`.
    OriginalLtilde,
    None,
}

/// Matrix of `(wᵢ, (−Δ)^γ wⱼ)` over a weighted basis.
#[derive(Debug, Clone)]
pub enum Gram {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Gram {
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        match self {
            Gram::Diagonal(d) => d.iter().zip(c).map(|(a, b)| a * b).collect(),
            Gram::Dense(m) => (m * DVector::from_column_slice(c)).as_slice().to_vec(),
        }
    }

    /// `aᵀ K b`
    pub fn form(&self, a: &[f64], b: &[f64]) -> f64 {
        self.apply(b).iter().zip(a).map(|(x, y)| x * y).sum()
    }
}

/// Neumann-basis view of a weighted basis: everything needed to evaluate
/// `(−Δ)^γ` on the Galerkin space.
#[derive(Debug, Clone)]
pub struct FractionalCalculus {
    neumann: SpectralBasis,
    /// Neumann eigenvalue of each weighted mode (cosine case).
    diag: Option<Vec<f64>>,
    /// `(N−1) × n` Neumann coefficients of the weighted modes.
    coupling: Option<DMatrix<f64>>,
}

impl FractionalCalculus {
    pub fn new(weighted: &SpectralBasis) -> Self {
        let grid = weighted.grid();
        let neumann = spectral::neumann_basis(grid);
        if let Some((t, modes)) = weighted.cosine() {
            return FractionalCalculus {
                neumann,
                diag: Some(modes.iter().map(|&m| t.eigenvalue(m)).collect()),
                coupling: None,
            };
        }
        let n = weighted.len();
        let mut b = DMatrix::zeros(neumann.len(), n);
        for j in 0..n {
            b.set_column(j, &DVector::from_vec(neumann.analyze(&weighted.mode(j))));
        }
        FractionalCalculus {
            neumann,
            diag: None,
            coupling: Some(b),
        }
    }

    pub fn neumann(&self) -> &SpectralBasis {
        &self.neumann
    }

    pub fn gram(&self, gamma: f64) -> Gram {
        if let Some(d) = &self.diag {
            return Gram::Diagonal(d.iter().map(|m| m.powf(gamma)).collect());
        }
        let b = self.coupling.as_ref().expect("dense coupling present");
        let mut scaled = b.clone();
        for (mut row, mu) in scaled.row_iter_mut().zip(self.neumann.values()) {
            row *= mu.powf(gamma);
        }
        Gram::Dense(b.tr_mul(&scaled))
    }
}

/// Precomputed absorption term for the pressure law
/// `p = P[c₀²ρ₀b(σ)σ] − T(σ, σ_t) + P[h]`.
#[derive(Debug, Clone)]
pub enum AbsorptionOperator {
    None,
    Modified {
        alpha0: f64,
        tau: f64,
        eta: f64,
        lambda: Vec<f64>,
        k_slow: Gram,
        k_fast: Gram,
    },
    Original {
        alpha0: f64,
        y: f64,
        rho0: Vec<f64>,
        c0sq: Vec<f64>,
        weighted: SpectralBasis,
        neumann: SpectralBasis,
    },
}

impl AbsorptionOperator {
    pub fn new(kind: AbsorptionKind, media: &MediumFields, weighted: &SpectralBasis, calc: &FractionalCalculus) -> Result<Self> {
        let a = media.absorption;
        if a.alpha0 == 0.0 || kind == AbsorptionKind::None {
            return Ok(AbsorptionOperator::None);
        }
        match kind {
            AbsorptionKind::ModifiedL => Ok(AbsorptionOperator::Modified {
                alpha0: a.alpha0,
                tau: a.tau,
                eta: a.eta,
                lambda: weighted.values().to_vec(),
                k_slow: calc.gram(a.y / 2.0),
                k_fast: calc.gram((a.y + 1.0) / 2.0),
            }),
            AbsorptionKind::OriginalLtilde => {
                if a.y == 2.0 {
                    return Err(Error::validation(
                        "the original absorption operator has a tan pole at y = 2",
                    ));
                }
                Ok(AbsorptionOperator::Original {
                    alpha0: a.alpha0,
                    y: a.y,
                    rho0: media.rho0.clone(),
                    c0sq: media.c0sq.clone(),
                    weighted: weighted.clone(),
                    neumann: calc.neumann().clone(),
                })
            }
            AbsorptionKind::None => unreachable!(),
        }
    }

    /// Modal coefficients of the absorption term for modal `σ`, `σ_t`.
    pub fn apply(&self, sigma: &[f64], sigma_t: &[f64]) -> Vec<f64> {
        match self {
            AbsorptionOperator::None => vec![0.0; sigma.len()],
            AbsorptionOperator::Modified {
                alpha0,
                tau,
                eta,
                lambda,
                k_slow,
                k_fast,
            } => {
                let s = k_slow.apply(sigma_t);
                let f = k_fast.apply(sigma);
                s.iter()
                    .zip(&f)
                    .zip(lambda)
                    .map(|((s, f), l)| -2.0 * alpha0 * (tau * s + eta * f) / l)
                    .collect()
            }
            AbsorptionOperator::Original {
                alpha0,
                y,
                rho0,
                c0sq,
                weighted,
                neumann,
            } => {
                let pointwise = |c: &[f64]| -> Vec<f64> {
                    let mut v: Vec<f64> = weighted.synthesize(c).iter().zip(rho0).map(|(s, r)| s * r).collect();
                    grid::subtract_mean(&mut v);
                    v
                };
                let frac = |gamma: f64, v: &[f64]| neumann.synthesize(&neumann.scale_modal(gamma, &neumann.analyze(v)));
                let rho_t = frac(y / 2.0 - 1.0, &pointwise(sigma_t));
                let rho = frac((y - 1.0) / 2.0, &pointwise(sigma));
                let tan = (std::f64::consts::FRAC_PI_2 * y).tan();
                let out: Vec<f64> = c0sq
                    .iter()
                    .zip(rho_t.iter().zip(&rho))
                    .map(|(c2, (rt, r))| {
                        let c = c2.sqrt();
                        c2 * 2.0 * alpha0 * (-c.powf(y - 1.0) * rt + c.powf(*y) * tan * r)
                    })
                    .collect();
                weighted.analyze(&out)
            }
        }
    }
}

/// Dispersion prefactor `c₀^y tan(πy/2)` of the original operator.
pub fn dispersion_prefactor(c0: f64, y: f64) -> f64 {
    c0.powf(y) * (std::f64::consts::FRAC_PI_2 * y).tan()
}

/// Time dependence of one source component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Signal {
    /// `A sin(2πft)`, switched off after `cycles` periods when given.
    Tone {
        amplitude: f64,
        frequency: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cycles: Option<f64>,
    },
    /// Samples at `k·dt`, linearly interpolated.
    Tabulated { dt: f64, values: Vec<f64> },
}

impl Signal {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Tone {
                amplitude,
                frequency,
                cycles,
            } => {
                if cycles.is_some_and(|c| t * frequency > c) {
                    0.0
                } else {
                    amplitude * (std::f64::consts::TAU * frequency * t).sin()
                }
            }
            Signal::Tabulated { dt, values } => {
                let x = t / dt;
                let i = x.floor() as usize;
                if i + 1 >= values.len() {
                    return values.last().copied().unwrap_or(0.0);
                }
                let w = x - i as f64;
                (1.0 - w) * values[i] + w * values[i + 1]
            }
        }
    }

    /// Last time the signal is defined.
    pub fn coverage(&self) -> f64 {
        match self {
            Signal::Tone { .. } => f64::INFINITY,
            Signal::Tabulated { dt, values } => dt * (values.len().saturating_sub(1)) as f64,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            Signal::Tone {
                amplitude,
                frequency,
                cycles,
            } => amplitude.is_finite() && *frequency > 0.0 && cycles.map_or(true, |c| c > 0.0),
            Signal::Tabulated { dt, values } => *dt > 0.0 && !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid source signal {self:?}")))
        }
    }
}

/// A spatial profile driven by a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceComponent {
    pub profile: Vec<f64>,
    pub signal: Signal,
}

/// Force density `f = −∇q` with `q(x,t) = Σ sᵢ(t) φᵢ(x)`; `q` has units of
/// pressure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceTerm {
    pub components: Vec<SourceComponent>,
}

impl SourceTerm {
    pub fn zero() -> Self {
        SourceTerm::default()
    }

    pub fn single(profile: Vec<f64>, signal: Signal) -> Self {
        SourceTerm {
            components: vec![SourceComponent { profile, signal }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    /// Union of the components of both terms.
    pub fn plus(&self, other: &SourceTerm) -> SourceTerm {
        let mut components = self.components.clone();
        components.extend(other.components.iter().cloned());
        SourceTerm { components }
    }

    pub fn check(&self, grid: &Grid, t_end: f64) -> Result<()> {
        for (i, c) in self.components.iter().enumerate() {
            if c.profile.len() != grid.len() {
                return Err(Error::validation(format!(
                    "source {i} profile has {} values for {} cells",
                    c.profile.len(),
                    grid.len()
                )));
            }
            c.signal.check()?;
            if c.signal.coverage() < t_end * (1.0 - 1e-12) {
                return Err(Error::validation(format!(
                    "source {i} covers t <= {:e} s but the run ends at {t_end:e} s",
                    c.signal.coverage()
                )));
            }
        }
        Ok(())
    }

    pub fn potential(&self, grid: &Grid, t: f64) -> Vec<f64> {
        let mut q = vec![0.0; grid.len()];
        for c in &self.components {
            let s = c.signal.value(t);
            if s != 0.0 {
                q.iter_mut().zip(&c.profile).for_each(|(q, p)| *q += s * p);
            }
        }
        q
    }

    pub fn force(&self, grid: &Grid, t: f64) -> FaceField {
        if self.is_zero() {
            return FaceField::zeros(grid);
        }
        let mut f = grid::grad(grid, &self.potential(grid, t));
        f.scale(-1.0);
        f
    }
}

/// Unit-peak Gaussian profile; `width` is the standard deviation in m.
pub fn gaussian_profile(grid: &Grid, center: &[f64], width: f64) -> Vec<f64> {
    grid::sample(grid, |x| {
        let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
        (-0.5 * r2 / (width * width)).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::Absorption;
    use crate::operators::build_laplacian;
    use crate::spectral::eigenbasis;

    #[test]
    fn coefficient_examples() {
        assert_eq!(a_of(&[0.0, 0.1, -0.5]), vec![1.0, 1.2, 0.0]);
        let b = b_of(&[0.0, 0.1], &[7.0, 7.0]);
        assert_eq!(b[0], 1.0);
        assert!((b[1] - 1.35).abs() < 1e-15);
        assert_eq!(b_of(&[0.3, -0.9], &[0.0, 0.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn g_is_minus_directional_derivative() {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let rho0 = grid::sample(&g, |x| x[0].exp());
        let u = FaceField::from_fn(&g, |_| vec![1.0, 0.0]);
        let out = g_of(&g, &u, &rho0);
        for c in 0..g.len() {
            let i = g.multi_index(c)[0];
            if i > 0 && i < 7 {
                assert!((out[c] + 1.0).abs() < 1e-12);
            }
        }
        assert!(g_of(&g, &u, &vec![3.0; g.len()]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn g_converges_at_second_order_inside() {
        let err = |n: usize| {
            let g = Grid::uniform(2, n, 1.0 / n as f64).unwrap();
            let rho0 = grid::sample(&g, |x| 1000.0 * (1.0 + 0.2 * (2.0 * x[0]).sin() * x[1].cos()));
            let uf = |x: &[f64]| vec![(3.0 * x[1]).cos() + x[0], x[0] * x[1]];
            let u = FaceField::from_fn(&g, uf);
            let out = g_of(&g, &u, &rho0);
            let mut e: f64 = 0.0;
            for c in 0..g.len() {
                let idx = g.multi_index(c);
                if idx.iter().any(|&i| i == 0 || i == n - 1) {
                    continue;
                }
                let x = g.cell_center(c);
                let r = 1.0 + 0.2 * (2.0 * x[0]).sin() * x[1].cos();
                let dx = 0.4 * (2.0 * x[0]).cos() * x[1].cos() / r;
                let dy = -0.2 * (2.0 * x[0]).sin() * x[1].sin() / r;
                let v = uf(&x);
                e = e.max((out[c] + v[0] * dx + v[1] * dy).abs());
            }
            e
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 3.5, "interior ratio {ratio}");
    }

    #[test]
    fn h_grows_linearly_for_constant_velocity() {
        let g = Grid::uniform(1, 8, 0.125).unwrap();
        let mut m = MediumFields::constant(&g, 1.0, 2.0, 0.0, Absorption::none(1.5)).unwrap();
        m.rho0 = grid::sample(&g, |x| 1.0 + x[0]);
        let d0 = FaceField::zeros(&g);
        assert!(h_of(&g, &d0, &d0, &m).iter().all(|&v| v == 0.0));
        // u = 0.5 for t in [0, T]: Iu = 0.5 t, h = c² · 0.5 t · 1 inside.
        for t in [0.5, 1.0, 2.0] {
            let iu = FaceField::from_fn(&g, |_| vec![0.5 * t]);
            let h = h_of(&g, &iu, &d0, &m);
            assert!((h[3] - 4.0 * 0.5 * t).abs() < 1e-12);
        }
    }

    fn modal_setup(rho: f64) -> (Grid, MediumFields, SpectralBasis, FractionalCalculus) {
        let g = Grid::uniform(2, 8, 1.0 / 8.0).unwrap();
        let absorption = Absorption {
            alpha0: 0.3,
            y: 1.5,
            tau: 0.7,
            eta: 1.3,
        };
        let m = MediumFields::constant(&g, rho, 1.0, 0.0, absorption).unwrap();
        let basis = eigenbasis(&build_laplacian(&g, Some(&vec![1.0 / rho; g.len()])).unwrap(), 20).unwrap();
        let calc = FractionalCalculus::new(&basis);
        (g, m, basis, calc)
    }

    #[test]
    fn modified_operator_on_eigenmode() {
        let (_, m, basis, calc) = modal_setup(1.0);
        let op = AbsorptionOperator::new(AbsorptionKind::ModifiedL, &m, &basis, &calc).unwrap();
        let k = 5;
        let mut c = vec![0.0; basis.len()];
        let mut ct = vec![0.0; basis.len()];
        c[k] = 0.4;
        ct[k] = -1.1;
        let out = op.apply(&c, &ct);
        let l = basis.values()[k];
        let a = m.absorption;
        let expect = -2.0 * a.alpha0 / l * (a.tau * l.powf(0.75) * ct[k] + a.eta * l.powf(1.25) * c[k]);
        assert!((out[k] - expect).abs() < 1e-10 * expect.abs());
        for (i, v) in out.iter().enumerate() {
            if i != k {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_alpha_gives_zero() {
        let (g, mut m, basis, calc) = modal_setup(2.0);
        m.absorption.alpha0 = 0.0;
        for kind in [AbsorptionKind::ModifiedL, AbsorptionKind::OriginalLtilde] {
            let op = AbsorptionOperator::new(kind, &m, &basis, &calc).unwrap();
            let c: Vec<f64> = (0..basis.len()).map(|i| i as f64).collect();
            assert!(op.apply(&c, &c).iter().all(|&v| v == 0.0));
        }
        assert_eq!(g.len(), 64);
    }

    #[test]
    fn dispersion_prefactor_sign() {
        let c: f64 = 1500.0;
        assert!((dispersion_prefactor(c, 1.5) + c.powf(1.5)).abs() < 1e-9 * c.powf(1.5));
    }

    #[test]
    fn original_operator_rejects_pole() {
        let (_, mut m, basis, calc) = modal_setup(1.0);
        m.absorption.y = 2.0;
        assert!(AbsorptionOperator::new(AbsorptionKind::OriginalLtilde, &m, &basis, &calc).is_err());
    }

    #[test]
    fn signals() {
        let s = Signal::Tone {
            amplitude: 2.0,
            frequency: 1.0,
            cycles: Some(1.0),
        };
        assert!((s.value(0.25) - 2.0).abs() < 1e-12);
        assert_eq!(s.value(1.5), 0.0);
        let tab = Signal::Tabulated {
            dt: 0.5,
            values: vec![0.0, 1.0, 3.0],
        };
        assert!((tab.value(0.75) - 2.0).abs() < 1e-12);
        assert_eq!(tab.coverage(), 1.0);
        let g = Grid::uniform(1, 4, 1.0).unwrap();
        let src = SourceTerm::single(vec![1.0; 4], tab);
        assert!(src.check(&g, 1.0).is_ok());
        assert!(src.check(&g, 1.5).is_err());
    }
}
