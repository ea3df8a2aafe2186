//! Time integration of the semi-discrete Galerkin system.
//!
//! Velocity lives on grid faces; σ and p live in the span of the first `n`
//! eigenmodes of `−Δ_{1/ρ₀}`. One step is a backward-Euler velocity update
//! with the previous pressure, a Picard iteration for (σ, p) with the new
//! velocity, and trapezoidal accumulation of the displacement integral.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{self, FaceField, Grid};
use crate::media::MediumFields;
use crate::operators::build_laplacian;
use crate::physics::{self, AbsorptionKind, AbsorptionOperator, FractionalCalculus, Gram, SourceTerm};
use crate::spectral::{self, eigenbasis, SpectralBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Pa·s
    #[serde(default)]
    pub mu: f64,
    /// s
    pub dt: f64,
    /// s
    pub t_end: f64,
    pub n_modes: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iters")]
    pub picard_max_iters: usize,
    #[serde(default)]
    pub linear_mode: bool,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default)]
    pub absorption: AbsorptionKind,
}

fn default_picard_tol() -> f64 {
    1e-10
}
fn default_picard_max_iters() -> usize {
    50
}
fn default_cg_tol() -> f64 {
    1e-12
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, n_modes: usize) -> Self {
        SolverConfig {
            mu: 0.0,
            dt,
            t_end,
            n_modes,
            picard_tol: default_picard_tol(),
            picard_max_iters: default_picard_max_iters(),
            linear_mode: false,
            cg_tol: default_cg_tol(),
            absorption: AbsorptionKind::ModifiedL,
        }
    }

    /// Every violated invariant, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            v.push(format!("solver.mu must be >= 0, got {}", self.mu));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("solver.dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end >= self.dt * (1.0 - 1e-12)) {
            v.push(format!("solver.t_end must be >= dt, got {}", self.t_end));
        }
        if self.n_modes < 1 {
            v.push("solver.n_modes must be >= 1".into());
        }
        if !(self.picard_tol > 0.0) {
            v.push(format!("solver.picard_tol must be > 0, got {}", self.picard_tol));
        }
        if self.picard_max_iters < 1 {
            v.push("solver.picard_max_iters must be >= 1".into());
        }
        if !(self.cg_tol > 0.0) {
            v.push(format!("solver.cg_tol must be > 0, got {}", self.cg_tol));
        }
        v
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Number of steps covering `t_end`.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Immutable discretization of one medium: bases, face coefficients and
/// absorption operator. Shareable between concurrent runs.
#[derive(Debug)]
pub struct Model {
    pub grid: Grid,
    pub media: MediumFields,
    pub basis: SpectralBasis,
    pub calc: FractionalCalculus,
    pub absorption: AbsorptionOperator,
    pub kind: AbsorptionKind,
    /// `(wᵢ, (−Δ)^{y/2} wⱼ)`
    pub k_slow: Gram,
    /// `(wᵢ, (−Δ)^{(y+1)/2} wⱼ)`
    pub k_fast: Gram,
    /// Arithmetic face mean of ρ₀.
    pub rho_f: FaceField,
    pub grad_ln_rho: FaceField,
    pub grad_rho: FaceField,
    /// `c₀²ρ₀` at cells.
    pub stiffness: Vec<f64>,
    /// True when ∇ρ₀ ≡ 0, so g and h vanish.
    pub uniform_density: bool,
}

impl Model {
    pub fn new(grid: &Grid, media: &MediumFields, n_modes: usize, kind: AbsorptionKind) -> Result<Self> {
        media.check(grid)?;
        let weight: Vec<f64> = media.rho0.iter().map(|r| 1.0 / r).collect();
        let basis = eigenbasis(&build_laplacian(grid, Some(&weight))?, n_modes)?;
        let calc = FractionalCalculus::new(&basis);
        let absorption = AbsorptionOperator::new(kind, media, &basis, &calc)?;
        let y = media.absorption.y;
        let ln_rho: Vec<f64> = media.rho0.iter().map(|r| r.ln()).collect();
        Ok(Model {
            grid: grid.clone(),
            media: media.clone(),
            k_slow: calc.gram(y / 2.0),
            k_fast: calc.gram((y + 1.0) / 2.0),
            basis,
            calc,
            absorption,
            kind,
            rho_f: grid::face_average(grid, &media.rho0),
            grad_ln_rho: grid::grad(grid, &ln_rho),
            grad_rho: grid::grad(grid, &media.rho0),
            stiffness: media.c0sq.iter().zip(&media.rho0).map(|(c, r)| c * r).collect(),
            uniform_density: media.rho0_is_constant(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.basis.len()
    }

    pub fn g(&self, u: &FaceField) -> Vec<f64> {
        if self.uniform_density {
            return vec![0.0; self.grid.len()];
        }
        physics::g_from_gradient(&self.grid, u, &self.grad_ln_rho)
    }

    pub fn h(&self, iu: &FaceField, d0: &FaceField) -> Vec<f64> {
        if self.uniform_density {
            return vec![0.0; self.grid.len()];
        }
        physics::h_from_gradient(&self.grid, iu, d0, &self.grad_rho, &self.media.c0sq)
    }

    /// `c₀²ρ₀b(σ)` at cells for a grid σ.
    pub fn beta(&self, sigma: &[f64], linear: bool) -> Vec<f64> {
        if linear {
            return self.stiffness.clone();
        }
        self.stiffness
            .iter()
            .zip(physics::b_of(sigma, &self.media.b_over_a))
            .map(|(s, b)| s * b)
            .collect()
    }

    /// Largest modal angular frequency `max c₀ · sqrt(max ρ₀ λ)`.
    pub fn omega_max(&self) -> f64 {
        let lmax = self.basis.values().last().copied().unwrap_or(0.0);
        let rmax = self.media.rho0.iter().fold(0.0_f64, |m, r| m.max(*r));
        self.media.max_c0() * (lmax * rmax).sqrt()
    }

    /// Largest modal absorption rate `2α₀τ λ_max^{y/2}` (ModifiedL only).
    /// Pressure enters the velocity update lagged, so this rate acts as an
    /// explicit damping term and `rate · dt` should stay below about 2.
    pub fn damping_rate_max(&self) -> f64 {
        let a = &self.media.absorption;
        if self.kind != AbsorptionKind::ModifiedL || a.alpha0 == 0.0 {
            return 0.0;
        }
        let lmax = self.basis.values().last().copied().unwrap_or(0.0);
        2.0 * a.alpha0 * a.tau * lmax.powf(0.5 * a.y)
    }

    pub fn media_hash(&self) -> String {
        media_hash(&self.grid, &self.media)
    }
}

pub fn media_hash(grid: &Grid, media: &MediumFields) -> String {
    let mut h = Sha256::new();
    for d in grid.dims() {
        h.update((*d as u64).to_le_bytes());
    }
    for f in grid
        .spacing()
        .iter()
        .chain(&media.rho0)
        .chain(&media.c0sq)
        .chain(&media.b_over_a)
    {
        h.update(f.to_le_bytes());
    }
    let a = media.absorption;
    for f in [a.alpha0, a.y, a.tau, a.eta] {
        h.update(f.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    /// m/s on faces.
    pub u: FaceField,
    /// Modal coefficients of σ.
    pub sigma: Vec<f64>,
    /// Modal coefficients of p (Pa).
    pub p: Vec<f64>,
    /// `∫₀ᵗ u ds` on faces (m).
    pub iu: FaceField,
    /// Initial displacement (m).
    pub d0: Arc<FaceField>,
}

impl SimState {
    pub fn sigma_grid(&self, model: &Model) -> Vec<f64> {
        model.basis.synthesize(&self.sigma)
    }

    pub fn p_grid(&self, model: &Model) -> Vec<f64> {
        model.basis.synthesize(&self.p)
    }
}

/// Initial velocity, displacement and relative density on the grid.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub u0: FaceField,
    pub d0: FaceField,
    pub sigma0: Vec<f64>,
}

impl InitialData {
    pub fn zero(grid: &Grid) -> Self {
        InitialData {
            u0: FaceField::zeros(grid),
            d0: FaceField::zeros(grid),
            sigma0: vec![0.0; grid.len()],
        }
    }
}

pub fn init_state(model: &Model, config: &SolverConfig, data: &InitialData) -> Result<SimState> {
    let grid = &model.grid;
    let zero = FaceField::zeros(grid);
    if data.u0.comps.len() != zero.comps.len()
        || data.u0.len() != zero.len()
        || data.d0.len() != zero.len()
        || data.sigma0.len() != grid.len()
    {
        return Err(Error::validation("initial data dimensions do not match the grid"));
    }
    let sigma = model.basis.analyze(&spectral::zero_mean(&data.sigma0)?);
    // σ_t at t = 0 from the mass equation, for the absorption term in p.
    let sigma_t = mass_rate(model, config, &data.u0, &sigma);
    let p = pressure(model, config, &sigma, &sigma_t, &zero, &data.d0);
    Ok(SimState {
        t: 0.0,
        step: 0,
        u: data.u0.clone(),
        sigma,
        p,
        iu: zero,
        d0: Arc::new(data.d0.clone()),
    })
}

/// Modal `−P[a(σ)∇·u − g(u)]`.
fn mass_rate(model: &Model, config: &SolverConfig, u: &FaceField, sigma: &[f64]) -> Vec<f64> {
    let div_u = grid::div(&model.grid, u);
    let mut flux = if config.linear_mode {
        div_u
    } else {
        let s = model.basis.synthesize(sigma);
        div_u.iter().zip(&s).map(|(d, s)| (1.0 + 2.0 * s) * d).collect()
    };
    if !model.uniform_density {
        flux.iter_mut().zip(model.g(u)).for_each(|(f, g)| *f -= g);
    }
    model.basis.analyze(&flux).into_iter().map(|v| -v).collect()
}

/// Modal `P[c₀²ρ₀b(σ)σ] − T(σ, σ_t) + P[h]`.
fn pressure(model: &Model, config: &SolverConfig, sigma: &[f64], sigma_t: &[f64], iu: &FaceField, d0: &FaceField) -> Vec<f64> {
    let s = model.basis.synthesize(sigma);
    let beta = model.beta(&s, config.linear_mode);
    let mut field: Vec<f64> = beta.iter().zip(&s).map(|(b, s)| b * s).collect();
    if !model.uniform_density {
        field.iter_mut().zip(model.h(iu, d0)).for_each(|(f, h)| *f += h);
    }
    let mut p = model.basis.analyze(&field);
    p.iter_mut()
        .zip(model.absorption.apply(sigma, sigma_t))
        .for_each(|(p, t)| *p -= t);
    p
}

/// Backward-Euler velocity update with pressure `p_grid` and force `f`.
pub fn velocity_substep(model: &Model, config: &SolverConfig, dt: f64, u: &FaceField, p_grid: &[f64], f: &FaceField) -> Result<FaceField> {
    let grid = &model.grid;
    let gp = grid::grad(grid, p_grid);
    let mut rhs = u.clone();
    for ((r, rho), (fv, g)) in rhs
        .iter_mut()
        .zip(model.rho_f.iter())
        .zip(f.iter().zip(gp.iter()))
    {
        *r = rho * *r + dt * (fv - g);
    }
    if config.mu == 0.0 {
        for (r, rho) in rhs.iter_mut().zip(model.rho_f.iter()) {
            *r /= rho;
        }
        return Ok(rhs);
    }
    let md = config.mu * dt;
    let apply = |v: &FaceField| -> FaceField {
        let mut out = grid::grad(grid, &grid::div(grid, v));
        for ((o, x), rho) in out.iter_mut().zip(v.iter()).zip(model.rho_f.iter()) {
            *o = rho * x - md * *o;
        }
        out
    };
    let max_iter = (10.0 * (grid.len() as f64).sqrt()).ceil() as usize;
    conjugate_gradient(apply, &rhs, u, config.cg_tol, max_iter)
}

/// Plain CG for a symmetric positive definite operator on face fields.
fn conjugate_gradient(apply: impl Fn(&FaceField) -> FaceField, b: &FaceField, x0: &FaceField, tol: f64, max_iter: usize) -> Result<FaceField> {
    let dot = |a: &FaceField, b: &FaceField| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = x0.clone();
    if bnorm == 0.0 {
        return Ok(FaceField {
            comps: b.comps.iter().map(|c| vec![0.0; c.len()]).collect(),
        });
    }
    let mut r = b.clone();
    r.axpy(-1.0, &apply(&x));
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..=max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let ad = apply(&d);
        let alpha = rr / dot(&d, &ad);
        x.axpy(alpha, &d);
        r.axpy(-alpha, &ad);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (dv, rv) in d.iter_mut().zip(r.iter()) {
            *dv = rv + beta * *dv;
        }
    }
    Err(Error::numerical(format!(
        "velocity CG did not reach {tol:e} in {max_iter} iterations (residual {:e})",
        rr.sqrt() / bnorm
    )))
}

/// Result of the (σ, p) fixed-point substep.
#[derive(Debug, Clone)]
pub struct SigmaPressure {
    pub sigma: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
}

/// Picard iteration for σ and p given the new velocity and displacement
/// integral.
pub fn sigma_pressure_substep(model: &Model, config: &SolverConfig, dt: f64, state: &SimState, u_new: &FaceField, iu_new: &FaceField) -> Result<SigmaPressure> {
    let basis = &model.basis;
    let div_u = grid::div(&model.grid, u_new);
    let g_modal = if model.uniform_density {
        None
    } else {
        Some(basis.analyze(&model.g(u_new)))
    };
    let h_grid = (!model.uniform_density).then(|| model.h(iu_new, &state.d0));
    let h_modal = h_grid.as_ref().map(|h| basis.analyze(h));
    let lin_flux = config.linear_mode.then(|| basis.analyze(&div_u));

    let mut sigma_star = state.sigma.clone();
    let mut p_prev = state.p.clone();
    let mut last = f64::NAN;
    for it in 1..=config.picard_max_iters {
        let star_grid = basis.synthesize(&sigma_star);
        let flux = match &lin_flux {
            Some(f) => f.clone(),
            None => {
                let ad: Vec<f64> = div_u
                    .iter()
                    .zip(&star_grid)
                    .map(|(d, s)| (1.0 + 2.0 * s) * d)
                    .collect();
                basis.analyze(&ad)
            }
        };
        let mut sigma: Vec<f64> = state
            .sigma
            .iter()
            .zip(&flux)
            .map(|(s, f)| s - dt * f)
            .collect();
        if let Some(g) = &g_modal {
            sigma.iter_mut().zip(g).for_each(|(s, g)| *s += dt * g);
        }
        let sigma_t: Vec<f64> = sigma
            .iter()
            .zip(&state.sigma)
            .map(|(a, b)| (a - b) / dt)
            .collect();
        let beta = model.beta(&star_grid, config.linear_mode);
        let sg = basis.synthesize(&sigma);
        let field: Vec<f64> = beta.iter().zip(&sg).map(|(b, s)| b * s).collect();
        let mut p = basis.analyze(&field);
        if let Some(h) = &h_modal {
            p.iter_mut().zip(h).for_each(|(p, h)| *p += h);
        }
        p.iter_mut()
            .zip(model.absorption.apply(&sigma, &sigma_t))
            .for_each(|(p, t)| *p -= t);

        let change = rel_change(&sigma, &sigma_star).max(rel_change(&p, &p_prev));
        last = change;
        sigma_star = sigma;
        p_prev = p;
        if config.linear_mode || change < config.picard_tol {
            return Ok(SigmaPressure {
                sigma: sigma_star,
                p: p_prev,
                iterations: it,
            });
        }
    }
    Err(Error::numerical(format!(
        "Picard iteration did not converge in {} iterations (relative change {last:e})",
        config.picard_max_iters
    )))
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let d: f64 = new.iter().zip(old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if d == 0.0 {
        return 0.0;
    }
    let n: f64 = new.iter().map(|a| a * a).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub picard_iterations: usize,
    pub retried: bool,
}

fn advance(model: &Model, config: &SolverConfig, source: &SourceTerm, state: &SimState, dt: f64) -> Result<(SimState, usize)> {
    let grid = &model.grid;
    let t_new = state.t + dt;
    let f = source.force(grid, t_new);
    let u_new = velocity_substep(model, config, dt, &state.u, &state.p_grid(model), &f)?;
    let mut iu_new = state.iu.clone();
    iu_new.axpy(0.5 * dt, &state.u);
    iu_new.axpy(0.5 * dt, &u_new);
    let sp = sigma_pressure_substep(model, config, dt, state, &u_new, &iu_new)?;
    if !config.linear_mode {
        let s = model.basis.synthesize(&sp.sigma);
        let amin = physics::a_of(&s).into_iter().fold(f64::INFINITY, f64::min);
        let bmin = physics::b_of(&s, &model.media.b_over_a)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if !(amin > 0.0 && bmin > 0.0) {
            return Err(Error::numerical(format!(
                "degenerate coefficients: min a = {amin:e}, min b = {bmin:e}"
            )));
        }
    }
    if !(u_new.iter().all(|v| v.is_finite()) && sp.p.iter().all(|v| v.is_finite())) {
        return Err(Error::numerical("non-finite state"));
    }
    Ok((
        SimState {
            t: t_new,
            step: state.step + 1,
            u: u_new,
            sigma: sp.sigma,
            p: sp.p,
            iu: iu_new,
            d0: state.d0.clone(),
        },
        sp.iterations,
    ))
}

/// One full step; on a numerical failure retries once as two half steps.
pub fn step(model: &Model, config: &SolverConfig, source: &SourceTerm, state: &SimState) -> Result<(SimState, StepStats)> {
    match advance(model, config, source, state, config.dt) {
        Ok((s, it)) => Ok((
            s,
            StepStats {
                picard_iterations: it,
                retried: false,
            },
        )),
        Err(e) if e.is_numerical() => {
            log::warn!("step at t = {:e} failed ({e}); retrying with dt/2", state.t);
            let half = 0.5 * config.dt;
            let retry = advance(model, config, source, state, half).and_then(|(mid, a)| {
                advance(model, config, source, &mid, half).map(|(end, b)| (end, a + b))
            });
            match retry {
                Ok((mut s, it)) => {
                    s.step = state.step + 1;
                    Ok((
                        s,
                        StepStats {
                            picard_iterations: it,
                            retried: true,
                        },
                    ))
                }
                Err(e2) => Err(Error::StepFailure {
                    t: state.t,
                    reason: format!("{e}; after halving dt: {e2}"),
                }),
            }
        }
        Err(e) => Err(e),
    }
}

/// Stored output of a run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// States at steps `0, stride, 2·stride, …`.
    pub states: Vec<SimState>,
    pub stride: usize,
    /// Time of every step, starting at 0.
    pub times: Vec<f64>,
    pub probes: Vec<usize>,
    /// Pressure at each probe cell, every step.
    pub traces: Vec<Vec<f64>>,
    pub picard_iterations: Vec<usize>,
    pub retries: usize,
    pub config_hash: String,
    pub media_hash: String,
}

impl Trajectory {
    pub fn sample_times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

fn probe_values(model: &Model, state: &SimState, probes: &[usize]) -> Vec<f64> {
    if probes.is_empty() {
        return Vec::new();
    }
    let p = state.p_grid(model);
    probes.iter().map(|&c| p[c]).collect()
}

/// Runs from `data` to `config.t_end`, storing every `stride`-th state.
pub fn run(model: &Model, config: &SolverConfig, source: &SourceTerm, data: &InitialData, probes: &[usize], stride: usize) -> Result<Trajectory> {
    config.check()?;
    if config.n_modes != model.n_modes() {
        return Err(Error::validation(format!(
            "config asks for {} modes but the model has {}",
            config.n_modes,
            model.n_modes()
        )));
    }
    let steps = config.steps();
    if stride == 0 || steps % stride != 0 {
        return Err(Error::validation(format!(
            "stride {stride} must divide the step count {steps}"
        )));
    }
    if let Some(&bad) = probes.iter().find(|&&c| c >= model.grid.len()) {
        return Err(Error::validation(format!("probe cell {bad} outside the grid")));
    }
    source.check(&model.grid, config.t_end)?;
    let osc = model.omega_max() * config.dt;
    if osc > 2.0 {
        log::warn!("omega_max * dt = {osc:.3} exceeds 2; expect instability");
    }
    let damp = model.damping_rate_max() * config.dt;
    if damp > 2.0 {
        log::warn!("absorption rate * dt = {damp:.3} exceeds 2; expect instability");
    }

    let mut state = init_state(model, config, data)?;
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(steps + 1); probes.len()];
    let push_probes = |traces: &mut Vec<Vec<f64>>, s: &SimState| {
        for (tr, v) in traces.iter_mut().zip(probe_values(model, s, probes)) {
            tr.push(v);
        }
    };
    push_probes(&mut traces, &state);
    let mut states = vec![state.clone()];
    let mut times = Vec::with_capacity(steps + 1);
    times.push(0.0);
    let mut picard = Vec::with_capacity(steps);
    let mut retries = 0;
    for k in 1..=steps {
        let (next, stats) = step(model, config, source, &state)?;
        state = next;
        // Keep time stamps exact multiples of dt.
        state.t = k as f64 * config.dt;
        times.push(state.t);
        picard.push(stats.picard_iterations);
        retries += stats.retried as usize;
        push_probes(&mut traces, &state);
        if k % stride == 0 {
            states.push(state.clone());
        }
    }
    Ok(Trajectory {
        states,
        stride,
        times,
        probes: probes.to_vec(),
        traces,
        picard_iterations: picard,
        retries,
        config_hash: config.hash(),
        media_hash: model.media_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{Absorption, Phantom};

    fn model_1d(n: usize, modes: usize) -> Model {
        let g = Grid::uniform(1, n, 1.0 / n as f64).unwrap();
        let m = MediumFields::constant(&g, 1.0, 1.0, 5.0, Absorption::none(1.5)).unwrap();
        Model::new(&g, &m, modes, AbsorptionKind::ModifiedL).unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let model = model_1d(16, 15);
        let cfg = SolverConfig::new(0.01, 0.05, 15);
        let data = InitialData::zero(&model.grid);
        let s0 = init_state(&model, &cfg, &data).unwrap();
        assert!(s0.p.iter().all(|&v| v == 0.0));
        let (s1, stats) = step(&model, &cfg, &SourceTerm::zero(), &s0).unwrap();
        assert_eq!(stats.picard_iterations, 1);
        assert!(s1.u.iter().all(|&v| v == 0.0));
        assert!(s1.sigma.iter().all(|&v| v == 0.0));
        let traj = run(&model, &cfg, &SourceTerm::zero(), &data, &[3], 1).unwrap();
        assert!(traj.traces[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_projects_sigma() {
        let model = model_1d(16, 15);
        let cfg = SolverConfig::new(0.01, 0.05, 15);
        let mut data = InitialData::zero(&model.grid);
        data.sigma0 = model.basis.mode(0);
        let s = init_state(&model, &cfg, &data).unwrap();
        assert!((s.sigma[0] - 1.0).abs() < 1e-12);
        assert!(s.sigma[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn explicit_velocity_update_when_inviscid() {
        let model = model_1d(8, 7);
        let cfg = SolverConfig::new(0.1, 0.1, 7);
        let g = &model.grid;
        let u = FaceField::from_fn(g, |x| vec![x[0]]);
        let p = grid::sample(g, |x| x[0] * x[0]);
        let f = FaceField::from_fn(g, |_| vec![0.5]);
        let out = velocity_substep(&model, &cfg, 0.1, &u, &p, &f).unwrap();
        let gp = grid::grad(g, &p);
        for i in 0..out.len() {
            let expect = u.comps[0][i] + 0.1 * (0.5 - gp.comps[0][i]);
            assert!((out.comps[0][i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn viscous_update_solves_the_implicit_system() {
        let model = model_1d(12, 11);
        let mut cfg = SolverConfig::new(0.05, 0.05, 11);
        cfg.mu = 0.3;
        let g = &model.grid;
        let u = FaceField::from_fn(g, |x| vec![(3.0 * x[0]).sin()]);
        let p = vec![0.0; g.len()];
        let f = FaceField::zeros(g);
        let out = velocity_substep(&model, &cfg, 0.05, &u, &p, &f).unwrap();
        let gd = grid::grad(g, &grid::div(g, &out));
        for i in 0..out.len() {
            let lhs = out.comps[0][i] - 0.3 * 0.05 * gd.comps[0][i];
            assert!((lhs - u.comps[0][i]).abs() < 1e-10);
        }
    }

    #[test]
    fn velocity_is_first_order_in_time() {
        // u_t = μ ∂ₓ(∂ₓu) with u = sin(πx) e^{−μπ²t} on [0,1]: zero at both walls.
        let n = 64;
        let g = Grid::uniform(1, n, 1.0 / n as f64).unwrap();
        let m = MediumFields::constant(&g, 1.0, 1.0, 0.0, Absorption::none(1.5)).unwrap();
        let model = Model::new(&g, &m, 5, AbsorptionKind::None).unwrap();
        let pi = std::f64::consts::PI;
        let err = |dt: f64| {
            let mut cfg = SolverConfig::new(dt, 0.2, 5);
            cfg.mu = 1.0;
            let mut u = FaceField::from_fn(&g, |x| vec![(pi * x[0]).sin()]);
            let p = vec![0.0; g.len()];
            let f = FaceField::zeros(&g);
            for _ in 0..cfg.steps() {
                u = velocity_substep(&model, &cfg, dt, &u, &p, &f).unwrap();
            }
            // Reference: the same spatial operator integrated exactly in time.
            let lam = 4.0 * (n as f64).powi(2) * (pi / (2.0 * n as f64)).sin().powi(2);
            let exact = FaceField::from_fn(&g, |x| vec![(pi * x[0]).sin() * (-lam * 0.2).exp()]);
            let mut d = u.clone();
            d.axpy(-1.0, &exact);
            d.max_abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn stride_controls_storage() {
        let model = model_1d(8, 7);
        let cfg = SolverConfig::new(0.01, 0.08, 7);
        let mut data = InitialData::zero(&model.grid);
        data.sigma0 = model.basis.mode(1).iter().map(|v| 0.01 * v).collect();
        let a = run(&model, &cfg, &SourceTerm::zero(), &data, &[], 2).unwrap();
        let b = run(&model, &cfg, &SourceTerm::zero(), &data, &[], 4).unwrap();
        assert_eq!(a.states.len() - 1, 2 * (b.states.len() - 1));
        assert!(run(&model, &cfg, &SourceTerm::zero(), &data, &[], 3).is_err());
        let one = SolverConfig::new(0.01, 0.01, 7);
        assert_eq!(run(&model, &one, &SourceTerm::zero(), &data, &[], 1).unwrap().states.len(), 2);
    }

    #[test]
    fn runs_are_bit_identical() {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let mut m = MediumFields::constant(&g, 1.0, 1.0, 5.0, Absorption { alpha0: 0.01, y: 1.5, tau: 1.0, eta: 1.0 }).unwrap();
        m.rho0 = Phantom::RandomSmooth { amplitude: 0.1, max_mode: 2, seed: 1 }.field(&g, 1.0).unwrap();
        let model = Model::new(&g, &m, 30, AbsorptionKind::ModifiedL).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1, 30);
        let mut data = InitialData::zero(&g);
        data.sigma0 = model.basis.mode(2).iter().map(|v| 0.01 * v).collect();
        let a = run(&model, &cfg, &SourceTerm::zero(), &data, &[5, 9], 1).unwrap();
        let b = run(&model, &cfg, &SourceTerm::zero(), &data, &[5, 9], 1).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.states, b.states);
        assert_eq!(a.config_hash, b.config_hash);
    }

    #[test]
    fn degenerate_density_aborts() {
        let model = model_1d(8, 7);
        let cfg = SolverConfig::new(0.01, 0.02, 7);
        let mut data = InitialData::zero(&model.grid);
        data.sigma0 = model.basis.mode(0).iter().map(|v| -2.0 * v).collect();
        let e = run(&model, &cfg, &SourceTerm::zero(), &data, &[], 1).unwrap_err();
        assert!(matches!(e, Error::StepFailure { .. }), "{e}");
        assert!(e.is_numerical());
    }

    #[test]
    fn config_violations_are_collected() {
        let mut c = SolverConfig::new(1.0, 0.5, 0);
        c.picard_tol = 0.0;
        c.mu = -1.0;
        assert_eq!(c.violations().len(), 4);
    }
}
