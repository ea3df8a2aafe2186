//! Material coefficients, unit conversions and validity checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::spectral;

/// Nepers per decibel, inverted: `20 / ln 10`.
const DB_PER_NEPER: f64 = 8.686;

/// Default bound on the coefficient smallness aggregate.
pub const DEFAULT_DELTA: f64 = 0.1;
/// Default bound on the smallness monitor.
pub const DEFAULT_R: f64 = 0.25;

/// Power-law absorption parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    /// Np·(rad/s)^(−y)·m⁻¹.
    pub alpha0: f64,
    pub y: f64,
    pub tau: f64,
    pub eta: f64,
}

impl Absorption {
    pub fn none(y: f64) -> Self {
        Absorption {
            alpha0: 0.0,
            y,
            tau: 1.0,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediumFields {
    /// kg/m³
    pub rho0: Vec<f64>,
    /// m²/s²
    pub c0sq: Vec<f64>,
    pub b_over_a: Vec<f64>,
    pub absorption: Absorption,
}

impl MediumFields {
    /// Homogeneous medium.
    pub fn constant(grid: &Grid, rho0: f64, c0: f64, b_over_a: f64, absorption: Absorption) -> Result<Self> {
        let n = grid.len();
        let m = MediumFields {
            rho0: vec![rho0; n],
            c0sq: vec![c0 * c0; n],
            b_over_a: vec![b_over_a; n],
            absorption,
        };
        m.check(grid)?;
        Ok(m)
    }

    /// Checks shapes and the pointwise invariants.
    pub fn check(&self, grid: &Grid) -> Result<()> {
        for (name, f) in [("rho0", &self.rho0), ("c0sq", &self.c0sq), ("b_over_a", &self.b_over_a)] {
            if f.len() != grid.len() {
                return Err(Error::validation(format!(
                    "{name} has {} values for a grid of {} cells",
                    f.len(),
                    grid.len()
                )));
            }
        }
        for (name, f) in [("rho0", &self.rho0), ("c0sq", &self.c0sq)] {
            if let Some(i) = f.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::validation(format!(
                    "{name} must be positive; value {} at grid index {:?}",
                    f[i],
                    grid.multi_index(i)
                )));
            }
        }
        if let Some(i) = self.b_over_a.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "b_over_a is not finite at grid index {:?}",
                grid.multi_index(i)
            )));
        }
        let a = &self.absorption;
        check_y(a.y)?;
        if !(a.alpha0 >= 0.0 && a.alpha0.is_finite()) {
            return Err(Error::validation(format!("alpha0 must be >= 0, got {}", a.alpha0)));
        }
        if !(a.tau > 0.0 && a.eta > 0.0) {
            return Err(Error::validation(format!(
                "tau and eta must be positive, got tau = {}, eta = {}",
                a.tau, a.eta
            )));
        }
        Ok(())
    }

    pub fn rho0_is_constant(&self) -> bool {
        self.rho0.iter().all(|&r| r == self.rho0[0])
    }

    /// Mean sound speed, the reference for the τ/η convention.
    pub fn c0_ref(&self) -> f64 {
        self.c0sq.iter().map(|c| c.sqrt()).sum::<f64>() / self.c0sq.len() as f64
    }

    pub fn max_c0(&self) -> f64 {
        self.c0sq.iter().fold(0.0_f64, |m, c| m.max(c.sqrt()))
    }
}

fn check_y(y: f64) -> Result<()> {
    if !(y > 1.0 && y < 3.0) {
        return Err(Error::validation(format!("y out of (1,3): {y}")));
    }
    Ok(())
}

/// Spatial profile of a coefficient field: `base · (1 + amplitude · shape)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Phantom {
    Constant,
    /// Gaussian bump; `center` in m, `width` is the standard deviation in m.
    GaussianBlob {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
    },
    /// `sin(2π k·x / L)` with `cycles` full periods per domain length.
    Sinusoid { cycles: Vec<f64>, amplitude: f64 },
    /// Seeded sum of low-order cosines normalized to unit peak.
    RandomSmooth {
        amplitude: f64,
        max_mode: usize,
        seed: u64,
    },
}

impl Phantom {
    pub fn amplitude(&self) -> f64 {
        match self {
            Phantom::Constant => 0.0,
            Phantom::GaussianBlob { amplitude, .. }
            | Phantom::Sinusoid { amplitude, .. }
            | Phantom::RandomSmooth { amplitude, .. } => *amplitude,
        }
    }

    /// Unit-amplitude shape sampled at the cell centers.
    pub fn shape(&self, grid: &Grid) -> Result<Vec<f64>> {
        let d = grid.ndim();
        let lengths = grid.lengths();
        match self {
            Phantom::Constant => Ok(vec![0.0; grid.len()]),
            Phantom::GaussianBlob { center, width, .. } => {
                if center.len() != d || !(*width > 0.0) {
                    return Err(Error::validation(format!(
                        "gaussian-blob needs a {d}-component center and positive width"
                    )));
                }
                Ok(grid::sample(grid, |x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                    (-0.5 * r2 / (width * width)).exp()
                }))
            }
            Phantom::Sinusoid { cycles, .. } => {
                if cycles.len() != d {
                    return Err(Error::validation(format!(
                        "sinusoid needs {d} cycle counts, got {}",
                        cycles.len()
                    )));
                }
                Ok(grid::sample(grid, |x| {
                    let arg: f64 = x
                        .iter()
                        .zip(cycles)
                        .zip(&lengths)
                        .map(|((xi, k), l)| 2.0 * std::f64::consts::PI * k * xi / l)
                        .sum();
                    arg.sin()
                }))
            }
            Phantom::RandomSmooth { max_mode, seed, .. } => {
                if *max_mode == 0 {
                    return Err(Error::validation("random-smooth needs max_mode >= 1"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let k = max_mode + 1;
                let count = k.pow(d as u32);
                let mut terms = Vec::with_capacity(count);
                for flat in 1..count {
                    let mut rest = flat;
                    let idx: Vec<usize> = (0..d)
                        .map(|_| {
                            let i = rest % k;
                            rest /= k;
                            i
                        })
                        .collect();
                    let c: f64 = rng.gen_range(-1.0..1.0);
                    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    terms.push((idx, c, phase));
                }
                let mut s = grid::sample(grid, |x| {
                    terms
                        .iter()
                        .map(|(idx, c, phase)| {
                            let arg: f64 = idx
                                .iter()
                                .zip(x)
                                .zip(&lengths)
                                .map(|((&i, xi), l)| std::f64::consts::PI * i as f64 * xi / l)
                                .sum();
                            c * (arg + phase).cos()
                        })
                        .sum()
                });
                let peak = s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    s.iter_mut().for_each(|v| *v /= peak);
                }
                Ok(s)
            }
        }
    }

    /// `base · (1 + amplitude · shape)`.
    pub fn field(&self, grid: &Grid, base: f64) -> Result<Vec<f64>> {
        let a = self.amplitude();
        Ok(self
            .shape(grid)?
            .into_iter()
            .map(|s| base * (1.0 + a * s))
            .collect())
    }
}

/// Converts dB/(cm·MHz^y) to Np/m per (rad/s)^y.
pub fn db_to_internal_alpha(alpha_db: f64, y: f64) -> Result<f64> {
    check_y(y)?;
    if !(alpha_db >= 0.0) {
        return Err(Error::validation(format!("alpha_db must be >= 0, got {alpha_db}")));
    }
    Ok(alpha_db * (100.0 / DB_PER_NEPER) * (2.0 * std::f64::consts::PI * 1e6).powf(-y))
}

/// Default modified-operator coefficients and whether η needed its sign
/// flipped to stay positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEta {
    pub tau: f64,
    pub eta: f64,
    pub sign_flipped: bool,
}

/// `τ = c^{y−1}`, `η = −c^y tan(πy/2)`; for `y ∈ (2,3)` the latter is
/// negative and its magnitude is used instead, with a warning. At `y = 2`
/// the default η is zero and is rejected.
pub fn default_tau_eta(c0_ref: f64, y: f64) -> Result<TauEta> {
    if !(c0_ref > 0.0) {
        return Err(Error::validation(format!("c0_ref must be positive, got {c0_ref}")));
    }
    check_y(y)?;
    if y == 2.0 {
        return Err(Error::validation(
            "y = 2 makes tan(pi y / 2) vanish, so the default eta is 0; set eta explicitly",
        ));
    }
    let tau = c0_ref.powf(y - 1.0);
    let eta = -c0_ref.powf(y) * (std::f64::consts::FRAC_PI_2 * y).tan();
    if (y - 2.0).abs() < 1e-3 || (y - 1.0) < 1e-3 || (3.0 - y) < 1e-3 {
        log::warn!("y = {y} is near a zero or pole of tan(pi y/2); eta = {eta:e} is ill-conditioned");
    }
    if eta > 0.0 {
        Ok(TauEta {
            tau,
            eta,
            sign_flipped: false,
        })
    } else {
        log::warn!("-c^y tan(pi y/2) = {eta:e} is not positive for y = {y}; using its magnitude");
        Ok(TauEta {
            tau,
            eta: eta.abs(),
            sign_flipped: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediaValidityReport {
    /// `‖∇[c₀²∇ρ₀]‖₂`
    pub grad_c2_grad_rho: f64,
    /// `‖c₀²∇ρ₀‖₃`
    pub c2_grad_rho_l3: f64,
    /// `‖∇ln ρ₀‖_{H^{(y+1)/2}}`
    pub grad_ln_rho_h: f64,
    pub delta_rc: f64,
    pub delta: f64,
    pub delta_ok: bool,
    /// `y > d − 1` and `2 ≤ y ≤ 3`.
    pub existence_window: bool,
    /// `y > d`.
    pub inviscid_window: bool,
    pub notes: Vec<String>,
}

pub fn validate_media(m: &MediumFields, grid: &Grid, y: f64) -> Result<MediaValidityReport> {
    validate_media_with(m, grid, y, DEFAULT_DELTA)
}

pub fn validate_media_with(m: &MediumFields, grid: &Grid, y: f64, delta: f64) -> Result<MediaValidityReport> {
    m.check(grid)?;
    check_y(y)?;
    let d = grid.ndim();
    let grad_rho = grid::centered_gradient(grid, &m.rho0);
    let c2_grad_rho: Vec<Vec<f64>> = grad_rho
        .iter()
        .map(|g| g.iter().zip(&m.c0sq).map(|(a, c)| a * c).collect())
        .collect();

    let mut sq = 0.0;
    for comp in &c2_grad_rho {
        for dd in grid::centered_gradient(grid, comp) {
            sq += grid::inner(grid, &dd, &dd);
        }
    }
    let grad_c2_grad_rho = sq.sqrt();
    let c2_grad_rho_l3 = grid::lp_norm(grid, &grid::magnitude(&c2_grad_rho), 3.0);

    let ln_rho: Vec<f64> = m.rho0.iter().map(|r| r.ln()).collect();
    let basis = spectral::neumann_basis(grid);
    let s = (y + 1.0) / 2.0;
    let mut hs = 0.0;
    for comp in grid::centered_gradient(grid, &ln_rho) {
        hs += sobolev_norm_sq(&basis, &comp, s);
    }
    let grad_ln_rho_h = hs.sqrt();

    let delta_rc = grad_c2_grad_rho + c2_grad_rho_l3 + grad_ln_rho_h;
    let existence_window = y > (d as f64 - 1.0) && (2.0..=3.0).contains(&y);
    let inviscid_window = y > d as f64;
    let mut notes = vec![
        "tau/eta default: tau = c^(y-1), eta = -c^y tan(pi y/2) (convention, not calibrated)".to_string(),
    ];
    if !existence_window {
        notes.push(format!("y = {y} outside the existence-theory window for d = {d}"));
    }
    if !inviscid_window {
        notes.push(format!("y = {y} does not exceed d = {d}; inviscid limit not covered"));
    }
    if delta_rc >= delta {
        notes.push(format!("coefficient aggregate {delta_rc:.3e} is not below {delta}"));
    }
    Ok(MediaValidityReport {
        grad_c2_grad_rho,
        c2_grad_rho_l3,
        grad_ln_rho_h,
        delta_rc,
        delta,
        delta_ok: delta_rc < delta,
        existence_window,
        inviscid_window,
        notes,
    })
}

/// `‖v‖² + ‖(−Δ)^{s/2}(v − v̄)‖²` on the Neumann basis.
pub fn sobolev_norm_sq(basis: &spectral::SpectralBasis, v: &[f64], s: f64) -> f64 {
    let grid = basis.grid();
    let c = basis.analyze(v);
    let frac: f64 = c
        .iter()
        .zip(basis.values())
        .map(|(ci, l)| ci * ci * l.powf(s))
        .sum();
    grid::inner(grid, v, v) + frac
}
