//! Post-processing of trajectories: energy and dissipation functionals,
//! the discrete energy identity, the smallness monitor, weak-form
//! residuals, and spectral checks on the weighted Laplacian.
//!
//! The identity is evaluated in the form the discretization satisfies
//! exactly at the semi-discrete level:
//!
//! ```text
//! d/dt [ ½(a, (∇·u)²) + ½ Σ_f w β̄ (∇σ)² + α₀η ‖(−Δ)^{(y+1)/4}σ‖² ]
//!   + μ Σ_f w ā (∇∇·u)² + 2α₀τ ‖(−Δ)^{y/4}σ_t‖² = rhs₁ + rhs₂
//! ```
//!
//! with `w = 1/ρ_f` and `β = c₀²ρ₀b(σ)`. Time derivatives are backward
//! differences of stored samples, so the residual is first order in dt.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, FaceField, Grid};
use crate::operators::build_laplacian;
use crate::physics::{AbsorptionKind, FractionalCalculus, SourceTerm};
use crate::solver::{Model, SimState, SolverConfig, Trajectory};
use crate::spectral::{self, eigenbasis, SpectralBasis};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyReport {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub l_monitor: Vec<f64>,
    /// Signed identity defect per sample; zero at the first sample.
    pub residual: Vec<f64>,
    pub rhs1: Vec<f64>,
    pub rhs2: Vec<f64>,
}

impl EnergyReport {
    /// `∫ |residual| dt` by the right-endpoint rule.
    pub fn integrated_residual(&self) -> f64 {
        self.t
            .windows(2)
            .zip(&self.residual[1..])
            .map(|(w, r)| (w[1] - w[0]) * r.abs())
            .sum()
    }

    pub fn energy_sup(&self) -> f64 {
        self.energy.iter().fold(0.0, |m: f64, e| m.max(*e))
    }
}

fn face_sum(grid: &Grid, parts: impl Iterator<Item = f64>) -> f64 {
    grid.cell_volume() * parts.sum::<f64>()
}

fn absorption_active(model: &Model) -> bool {
    model.kind == AbsorptionKind::ModifiedL && model.media.absorption.alpha0 > 0.0
}

fn modal_rate(a: &SimState, b: &SimState) -> Vec<f64> {
    let dt = b.t - a.t;
    b.sigma.iter().zip(&a.sigma).map(|(x, y)| (x - y) / dt).collect()
}

/// ℰ and 𝒟 at every stored sample.
pub fn energy_dissipation(model: &Model, config: &SolverConfig, traj: &Trajectory) -> EnergyReport {
    let grid = &model.grid;
    let states = &traj.states;
    let mut report = EnergyReport::default();
    let mut ip = vec![0.0; grid.len()];
    let mut p_prev = states[0].p_grid(model);
    let mut d_acc = 0.0;
    let mut integrand_prev = None;
    for (k, s) in states.iter().enumerate() {
        let div_u = grid::div(grid, &s.u);
        let sg = s.sigma_grid(model);
        let ssum: f64 = s.sigma.iter().map(|c| c * c).sum();
        let e = grid::face_inner(grid, &s.u, &s.u)
            + grid::inner(grid, &div_u, &div_u)
            + grid::face_norm(grid, &grid::grad(grid, &sg)).powi(2)
            + ssum
            + model.k_fast.form(&s.sigma, &s.sigma);

        let p = s.p_grid(model);
        if k > 0 {
            let dt = s.t - states[k - 1].t;
            ip.iter_mut()
                .zip(p_prev.iter().zip(&p))
                .for_each(|(i, (a, b))| *i += 0.5 * dt * (a + b));
        }
        p_prev = p;
        // σ_t from the neighbouring samples; the first sample borrows the second's.
        let rate = match (k, states.len()) {
            (0, 1) => vec![0.0; s.sigma.len()],
            (0, _) => modal_rate(&states[0], &states[1]),
            _ => modal_rate(&states[k - 1], s),
        };
        let gdu = grid::grad(grid, &div_u);
        let integrand = config.mu * grid::face_inner(grid, &gdu, &gdu)
            + rate.iter().map(|c| c * c).sum::<f64>()
            + model.k_slow.form(&rate, &rate)
            + grid::face_norm(grid, &grid::grad(grid, &ip)).powi(2);
        if let Some(prev) = integrand_prev {
            d_acc += 0.5 * (s.t - states[k - 1].t) * (prev + integrand);
        }
        integrand_prev = Some(integrand);
        report.t.push(s.t);
        report.energy.push(e);
        report.dissipation.push(d_acc);
    }
    report
}

/// Identity components at one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IdentityTerms {
    pub energy: f64,
    pub dissipation_rate: f64,
    pub rhs1: f64,
    pub rhs2: f64,
}

/// The identity's energy functional at one state.
pub fn identity_energy(model: &Model, config: &SolverConfig, s: &SimState) -> f64 {
    let grid = &model.grid;
    let div_u = grid::div(grid, &s.u);
    let sg = s.sigma_grid(model);
    let lin = config.linear_mode;
    let kinetic = grid.cell_volume()
        * div_u
            .iter()
            .zip(&sg)
            .map(|(d, s)| if lin { d * d } else { (1.0 + 2.0 * s) * d * d })
            .sum::<f64>();
    let beta_f = grid::face_average(grid, &model.beta(&sg, lin));
    let gs = grid::grad(grid, &sg);
    let potential = face_sum(
        grid,
        gs.iter()
            .zip(beta_f.iter())
            .zip(model.rho_f.iter())
            .map(|((g, b), r)| b / r * g * g),
    );
    let mut e = 0.5 * kinetic + 0.5 * potential;
    if absorption_active(model) {
        let a = model.media.absorption;
        e += a.alpha0 * a.eta * model.k_fast.form(&s.sigma, &s.sigma);
    }
    e
}

/// Dissipation rate and right-hand sides at `cur`, with σ_t from `prev`.
pub fn identity_terms(model: &Model, config: &SolverConfig, source: &SourceTerm, prev: &SimState, cur: &SimState) -> IdentityTerms {
    let grid = &model.grid;
    let lin = config.linear_mode;
    let mu = config.mu;
    let rate = modal_rate(prev, cur);
    let sg = cur.sigma_grid(model);
    let st = model.basis.synthesize(&rate);
    let div_u = grid::div(grid, &cur.u);
    let a: Vec<f64> = if lin {
        vec![1.0; grid.len()]
    } else {
        sg.iter().map(|s| 1.0 + 2.0 * s).collect()
    };
    let beta = model.beta(&sg, lin);
    let beta_t: Vec<f64> = if lin {
        vec![0.0; grid.len()]
    } else {
        model
            .stiffness
            .iter()
            .zip(&model.media.b_over_a)
            .zip(&st)
            .map(|((k, ba), s)| k * 0.5 * ba * s)
            .collect()
    };
    let beta_t_f = grid::face_average(grid, &beta_t);
    let w: Vec<f64> = model.rho_f.iter().map(|r| 1.0 / r).collect();
    let gs = grid::grad(grid, &sg);
    let gst = grid::grad(grid, &st);
    let gbeta = grid::grad(grid, &beta);
    let sbar = grid::face_average(grid, &sg);
    let gdu = grid::grad(grid, &div_u);
    let ga = grid::grad(grid, &a);
    let a_f = grid::face_average(grid, &a);
    let du_f = grid::face_average(grid, &div_u);
    let absorb = absorption_active(model);
    let abs = model.media.absorption;

    let mut dissipation_rate = mu * face_sum(
        grid,
        gdu.iter().zip(a_f.iter()).zip(&w).map(|((g, a), w)| w * a * g * g),
    );
    if absorb {
        dissipation_rate += 2.0 * abs.alpha0 * abs.tau * model.k_slow.form(&rate, &rate);
    }

    let mut f = source.force(grid, cur.t);
    f.iter_mut().zip(&w).for_each(|(f, w)| *f *= w);
    let div_f = grid::div(grid, &f);
    let vol = grid.cell_volume();
    let mut rhs1 = vol * div_f.iter().zip(&a).zip(&div_u).map(|((f, a), d)| f * a * d).sum::<f64>();
    rhs1 += 0.5 * face_sum(
        grid,
        beta_t_f.iter().zip(gs.iter()).zip(&w).map(|((b, g), w)| w * b * g * g),
    );
    rhs1 -= face_sum(
        grid,
        sbar.iter()
            .zip(gbeta.iter())
            .zip(gst.iter())
            .zip(&w)
            .map(|(((s, gb), gt), w)| w * s * gb * gt),
    );
    if !lin {
        rhs1 += vol * st.iter().zip(&div_u).map(|(s, d)| s * d * d).sum::<f64>();
        rhs1 -= mu * face_sum(
            grid,
            gdu.iter()
                .zip(ga.iter())
                .zip(du_f.iter())
                .zip(&w)
                .map(|(((g, ga), d), w)| w * g * ga * d),
        );
    }

    let mut rhs2 = 0.0;
    if !model.uniform_density {
        let h = model.h(&cur.iu, &cur.d0);
        let gamma = model.basis.analyze(&model.g(&cur.u));
        let pg = model.basis.synthesize(&gamma);
        let gh = grid::grad(grid, &h);
        let bs_h: Vec<f64> = beta.iter().zip(&sg).zip(&h).map(|((b, s), h)| b * s + h).collect();
        let gbs = grid::grad(grid, &bs_h);
        let gpg = grid::grad(grid, &pg);
        rhs2 -= face_sum(grid, gh.iter().zip(gst.iter()).zip(&w).map(|((a, b), w)| w * a * b));
        rhs2 += face_sum(grid, gpg.iter().zip(gbs.iter()).zip(&w).map(|((a, b), w)| w * a * b));
        if absorb {
            rhs2 += 2.0
                * abs.alpha0
                * (abs.tau * model.k_slow.form(&rate, &gamma) + abs.eta * model.k_fast.form(&cur.sigma, &gamma));
        }
    }
    IdentityTerms {
        energy: identity_energy(model, config, cur),
        dissipation_rate,
        rhs1,
        rhs2,
    }
}

/// Per-sample identity defect, plus the rhs split, written into a report.
pub fn energy_identity_residual(model: &Model, config: &SolverConfig, source: &SourceTerm, traj: &Trajectory) -> EnergyReport {
    let states = &traj.states;
    let mut report = EnergyReport {
        t: states.iter().map(|s| s.t).collect(),
        residual: vec![0.0],
        rhs1: vec![0.0],
        rhs2: vec![0.0],
        ..Default::default()
    };
    let mut e_prev = identity_energy(model, config, &states[0]);
    for k in 1..states.len() {
        let terms = identity_terms(model, config, source, &states[k - 1], &states[k]);
        let dt = states[k].t - states[k - 1].t;
        report
            .residual
            .push((terms.energy - e_prev) / dt + terms.dissipation_rate - terms.rhs1 - terms.rhs2);
        report.rhs1.push(terms.rhs1);
        report.rhs2.push(terms.rhs2);
        e_prev = terms.energy;
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallnessReport {
    pub t: Vec<f64>,
    pub series: Vec<f64>,
    pub sup: f64,
    pub r: f64,
    pub first_violation: Option<f64>,
}

impl SmallnessReport {
    pub fn stays_below(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// The smallness aggregate ℒ at every sample and its first crossing of `r`.
pub fn smallness_monitor(model: &Model, config: &SolverConfig, traj: &Trajectory, r: f64) -> SmallnessReport {
    let grid = &model.grid;
    let states = &traj.states;
    let media = &model.media;
    let grad_ln: Vec<Vec<f64>> = {
        let ln: Vec<f64> = media.rho0.iter().map(|v| v.ln()).collect();
        grid::centered_gradient(grid, &ln)
    };
    let mut int3 = 0.0;
    let mut int6 = 0.0;
    let mut series = Vec::with_capacity(states.len());
    for (k, s) in states.iter().enumerate() {
        let sg = s.sigma_grid(model);
        if k > 0 {
            let dt = s.t - states[k - 1].t;
            let st = model.basis.synthesize(&modal_rate(&states[k - 1], s));
            int3 += dt * grid::lp_norm(grid, &st, 3.0).powi(2);
            let scaled: Vec<f64> = st
                .iter()
                .zip(&media.b_over_a)
                .zip(&media.c0sq)
                .map(|((s, ba), c)| ba * c * s)
                .collect();
            int6 += dt * grid::lp_norm(grid, &scaled, 6.0).powi(2);
        }
        let sup = sg.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let grad_s = grid::magnitude(&grid::centered_gradient(grid, &sg));
        let c2b: Vec<f64> = if config.linear_mode {
            media.c0sq.clone()
        } else {
            crate::physics::b_of(&sg, &media.b_over_a)
                .iter()
                .zip(&media.c0sq)
                .map(|(b, c)| b * c)
                .collect()
        };
        let grad_c2b = grid::magnitude(&grid::centered_gradient(grid, &c2b));
        let c2b_gl: Vec<Vec<f64>> = grad_ln
            .iter()
            .map(|g| g.iter().zip(&c2b).map(|(g, c)| g * c).collect())
            .collect();
        let l = sup
            + 2.0 * int3.sqrt()
            + 2.0 * grid::lp_norm(grid, &grad_s, 3.0)
            + 0.5 * int6.sqrt()
            + grid::norm(grid, &grad_c2b)
            + grid::norm(grid, &grid::magnitude(&c2b_gl));
        series.push(l);
    }
    let t: Vec<f64> = states.iter().map(|s| s.t).collect();
    let first_violation = series.iter().position(|&l| l > r).map(|i| t[i]);
    SmallnessReport {
        sup: series.iter().fold(0.0, |m: f64, v| m.max(*v)),
        t,
        series,
        r,
        first_violation,
    }
}

/// Full report: functionals, identity and monitor in one pass.
pub fn energy_report(model: &Model, config: &SolverConfig, source: &SourceTerm, traj: &Trajectory, r: f64) -> EnergyReport {
    let mut rep = energy_dissipation(model, config, traj);
    let id = energy_identity_residual(model, config, source, traj);
    rep.residual = id.residual;
    rep.rhs1 = id.rhs1;
    rep.rhs2 = id.rhs2;
    rep.l_monitor = smallness_monitor(model, config, traj, r).series;
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakResidual {
    /// Time-integrated momentum equation.
    pub momentum: f64,
    pub mass: f64,
    /// Time-integrated pressure-density relation.
    pub pressure: f64,
}

/// Residuals of the weak formulation against `modes` basis functions times
/// `hats` interior temporal hat functions.
pub fn weak_form_residual(model: &Model, config: &SolverConfig, source: &SourceTerm, traj: &Trajectory, modes: usize, hats: usize) -> WeakResidual {
    let grid = &model.grid;
    let states = &traj.states;
    let basis = &model.basis;
    let m = modes.min(basis.len());
    let nt = states.len();
    let t: Vec<f64> = states.iter().map(|s| s.t).collect();
    let t_end = *t.last().unwrap();
    let lin = config.linear_mode;
    let absorb = absorption_active(model);
    let abs = model.media.absorption;

    let tests: Vec<Vec<f64>> = (0..m).map(|i| basis.mode(i)).collect();
    let test_grads: Vec<FaceField> = tests.iter().map(|w| grid::grad(grid, w)).collect();
    let lambda = basis.values();

    // Time quadrature weights (trapezoid).
    let mut qw = vec![0.0; nt];
    for k in 1..nt {
        let h = t[k] - t[k - 1];
        qw[k - 1] += 0.5 * h;
        qw[k] += 0.5 * h;
    }
    let hat = |j: usize, s: f64| {
        let width = t_end / (hats + 1) as f64;
        let c = width * (j + 1) as f64;
        (1.0 - (s - c).abs() / width).max(0.0)
    };

    let u0 = &states[0].u;
    let c0 = &states[0].sigma;
    let mut ip = vec![0.0; grid.len()];
    let mut ibs = vec![0.0; grid.len()];
    let mut ih = vec![0.0; grid.len()];
    let mut ic = vec![0.0; basis.len()];
    let mut ifc = FaceField::zeros(grid);
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>, FaceField)> = None;

    let mut r_mo = vec![vec![0.0; hats]; m];
    let mut r_ma = vec![vec![0.0; hats]; m];
    let mut r_pd = vec![vec![0.0; hats]; m];
    for (k, s) in states.iter().enumerate() {
        let sg = s.sigma_grid(model);
        let p = s.p_grid(model);
        let bs: Vec<f64> = model.beta(&sg, lin).iter().zip(&sg).map(|(b, s)| b * s).collect();
        let h = model.h(&s.iu, &s.d0);
        let f = source.force(grid, s.t);
        if let Some((pp, pbs, ph, pf)) = &prev {
            let dt = t[k] - t[k - 1];
            for (acc, (a, b)) in ip.iter_mut().zip(pp.iter().zip(&p)) {
                *acc += 0.5 * dt * (a + b);
            }
            for (acc, (a, b)) in ibs.iter_mut().zip(pbs.iter().zip(&bs)) {
                *acc += 0.5 * dt * (a + b);
            }
            for (acc, (a, b)) in ih.iter_mut().zip(ph.iter().zip(&h)) {
                *acc += 0.5 * dt * (a + b);
            }
            for (acc, (a, b)) in ic.iter_mut().zip(states[k - 1].sigma.iter().zip(&s.sigma)) {
                *acc += 0.5 * dt * (a + b);
            }
            for (acc, (a, b)) in ifc.iter_mut().zip(pf.iter().zip(f.iter())) {
                *acc += 0.5 * dt * (a + b);
            }
        }

        // Momentum: ρ(u − u₀) + ∇I p − μ∇∇·I u − I f.
        let mut mo = grid::grad(grid, &ip);
        let gdiu = grid::grad(grid, &grid::div(grid, &s.iu));
        for ((((m, u), u0), r), (g, fi)) in mo
            .iter_mut()
            .zip(s.u.iter())
            .zip(u0.iter())
            .zip(model.rho_f.iter())
            .zip(gdiu.iter().zip(ifc.iter()))
        {
            *m += r * (u - u0) - config.mu * g - fi;
        }
        // Mass: σ_t + a∇·u − g.
        let ma: Option<Vec<f64>> = (k > 0).then(|| {
            let st = basis.synthesize(&modal_rate(&states[k - 1], s));
            let div_u = grid::div(grid, &s.u);
            let g = model.g(&s.u);
            st.iter()
                .zip(&div_u)
                .zip(&sg)
                .zip(&g)
                .map(|(((st, d), s), g)| st + if lin { *d } else { (1.0 + 2.0 * s) * d } - g)
                .collect()
        });
        // Pressure-density: (I p − I βσ − I h, Δ_w w_i) + absorption.
        let pd: Vec<f64> = ip
            .iter()
            .zip(&ibs)
            .zip(&ih)
            .map(|((p, b), h)| p - b - h)
            .collect();
        let pd_modal = basis.analyze(&pd);
        let (abs_slow, abs_fast) = if absorb {
            let dc: Vec<f64> = s.sigma.iter().zip(c0).map(|(a, b)| a - b).collect();
            (model.k_slow.apply(&dc), model.k_fast.apply(&ic))
        } else {
            (vec![0.0; basis.len()], vec![0.0; basis.len()])
        };

        for i in 0..m {
            let mo_i = grid::face_inner(grid, &mo, &test_grads[i]);
            let ma_i = ma.as_ref().map_or(0.0, |v| grid::inner(grid, v, &tests[i]));
            let pd_i = -lambda[i] * pd_modal[i]
                + 2.0 * abs.alpha0 * (abs.tau * abs_slow[i] + abs.eta * abs_fast[i]);
            for j in 0..hats {
                let wgt = qw[k] * hat(j, s.t);
                if wgt != 0.0 {
                    r_mo[i][j] += wgt * mo_i;
                    r_ma[i][j] += wgt * ma_i;
                    r_pd[i][j] += wgt * pd_i;
                }
            }
        }
        prev = Some((p, bs, h, f));
    }
    let norm = |r: &Vec<Vec<f64>>| r.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    WeakResidual {
        momentum: norm(&r_mo),
        mass: norm(&r_ma),
        pressure: norm(&r_pd),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichRow {
    pub k: usize,
    /// Eigenvalue of `(−Δ_{1/ρ₀})⁻¹`.
    pub lambda: f64,
    /// Eigenvalue of `(−Δ)⁻¹`.
    pub mu: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub m_sq: f64,
    pub m_inv_sq: f64,
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Checks `μ_k/‖M⁻¹‖² ≤ λ_k ≤ ‖M‖²μ_k` for the `k_max` largest eigenvalues
/// of the inverse operators, with `‖M‖² = shrink · ‖ρ₀‖∞` and
/// `‖M⁻¹‖² = ‖1/ρ₀‖∞`. `shrink < 1` probes the check's sensitivity.
pub fn check_eigen_sandwich(grid: &Grid, rho0: &[f64], k_max: usize, shrink: f64) -> Result<SandwichReport> {
    if rho0.len() != grid.len() {
        return Err(Error::validation("rho0 does not match the grid"));
    }
    let weight: Vec<f64> = rho0.iter().map(|r| 1.0 / r).collect();
    let weighted = eigenbasis(&build_laplacian(grid, Some(&weight))?, k_max)?;
    let plain = eigenbasis(&build_laplacian(grid, None)?, k_max)?;
    let m_sq = shrink * rho0.iter().fold(0.0_f64, |m, r| m.max(*r));
    let m_inv_sq = weight.iter().fold(0.0_f64, |m, r| m.max(*r));
    let slack = 1e-10;
    let rows = (0..k_max)
        .map(|k| {
            let lambda = 1.0 / weighted.values()[k];
            let mu = 1.0 / plain.values()[k];
            let lower = mu / m_inv_sq;
            let upper = m_sq * mu;
            SandwichRow {
                k: k + 1,
                lambda,
                mu,
                lower,
                upper,
                pass: lambda >= lower * (1.0 - slack) && lambda <= upper * (1.0 + slack),
            }
        })
        .collect();
    Ok(SandwichReport { m_sq, m_inv_sq, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RitzStability {
    /// `‖∇Pg‖ / ‖∇g‖`, `‖(−Δ)^{y/4}Pg‖ / ‖(−Δ)^{y/4}g‖`, `‖(−Δ)^{(y+1)/4}Pg‖ / ‖(−Δ)^{(y+1)/4}g‖`.
    pub ratios: [f64; 3],
    pub bounds: [f64; 3],
}

impl RitzStability {
    pub fn holds(&self) -> bool {
        self.ratios
            .iter()
            .zip(&self.bounds)
            .all(|(r, b)| *r <= b * (1.0 + 1e-10))
    }
}

/// Norm ratios of the Ritz projection of `g` onto `basis` (a basis of
/// `−Δ_{1/ρ₀}`), against `(‖ρ₀‖∞‖1/ρ₀‖∞)^{1/2}`, `…^{y/4}`, `…^{(y+1)/4}`.
pub fn check_ritz_stability(basis: &SpectralBasis, calc: &FractionalCalculus, rho0: &[f64], g: &[f64], y: f64) -> Result<RitzStability> {
    let grid = basis.grid();
    let g = spectral::zero_mean(g)?;
    let pg = basis.synthesize(&basis.ritz_project(&g)?);
    let neumann = calc.neumann();
    let rmax = rho0.iter().fold(0.0_f64, |m, r| m.max(*r));
    let rinv = rho0.iter().fold(0.0_f64, |m, r| m.max(1.0 / r));
    let kappa = rmax * rinv;
    let frac_norm = |v: &[f64], gamma: f64| grid::norm(grid, &neumann.frac_apply(gamma, v).expect("zero mean"));
    let grad_norm = |v: &[f64]| grid::face_norm(grid, &grid::grad(grid, v));
    let (gs, gf) = (y / 4.0, (y + 1.0) / 4.0);
    Ok(RitzStability {
        ratios: [
            grad_norm(&pg) / grad_norm(&g),
            frac_norm(&pg, gs) / frac_norm(&g, gs),
            frac_norm(&pg, gf) / frac_norm(&g, gf),
        ],
        bounds: [kappa.sqrt(), kappa.powf(gs), kappa.powf(gf)],
    })
}

/// Relative max deviation between the probe traces of `run(a + b)` and
/// `run(a) + run(b)`, with zero initial data.
pub fn superposition_defect(model: &Model, config: &SolverConfig, a: &SourceTerm, b: &SourceTerm, probes: &[usize]) -> Result<f64> {
    let data = crate::solver::InitialData::zero(&model.grid);
    let steps = config.steps();
    let go = |s: &SourceTerm| crate::solver::run(model, config, s, &data, probes, steps);
    let (ra, rb, rab) = (go(a)?, go(b)?, go(&a.plus(b))?);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for ((x, y), z) in ra.traces.iter().zip(&rb.traces).zip(&rab.traces) {
        for ((x, y), z) in x.iter().zip(y).zip(z) {
            num = num.max((x + y - z).abs());
            den = den.max(z.abs());
        }
    }
    Ok(if den > 0.0 { num / den } else { num })
}

/// Integrated identity residual at `dt, dt/2, …` (`levels` runs).
pub fn identity_refinement(model: &Model, config: &SolverConfig, source: &SourceTerm, data: &crate::solver::InitialData, levels: usize) -> Result<Vec<f64>> {
    (0..levels)
        .map(|l| {
            let mut c = config.clone();
            c.dt = config.dt / 2f64.powi(l as i32);
            let traj = crate::solver::run(model, &c, source, data, &[], 1)?;
            Ok(energy_identity_residual(model, &c, source, &traj).integrated_residual())
        })
        .collect()
}

/// Ritz stability for `count` random zero-mean inputs built from the
/// model's first modes plus grid noise.
pub fn projection_stability_batch(model: &Model, count: usize, seed: u64) -> Result<Vec<RitzStability>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = model.grid.len();
    (0..count)
        .map(|_| {
            let mut g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            crate::grid::subtract_mean(&mut g);
            check_ritz_stability(&model.basis, &model.calc, &model.media.rho0, &g, model.media.absorption.y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{Absorption, MediumFields, Phantom};
    use crate::solver::{run, InitialData};

    fn setup() -> (Model, SolverConfig) {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let m = MediumFields::constant(&g, 1.0, 1.0, 0.0, Absorption::none(2.5)).unwrap();
        let model = Model::new(&g, &m, 20, AbsorptionKind::ModifiedL).unwrap();
        (model, SolverConfig::new(0.01, 0.05, 20))
    }

    #[test]
    fn zero_trajectory_has_zero_diagnostics() {
        let (model, cfg) = setup();
        let data = InitialData::zero(&model.grid);
        let traj = run(&model, &cfg, &SourceTerm::zero(), &data, &[], 1).unwrap();
        let rep = energy_report(&model, &cfg, &SourceTerm::zero(), &traj, 0.25);
        assert!(rep.energy.iter().all(|&e| e == 0.0));
        assert!(rep.dissipation.iter().all(|&e| e == 0.0));
        assert!(rep.residual.iter().all(|&e| e == 0.0));
        assert!(rep.l_monitor.iter().all(|&e| e == 0.0));
        let w = weak_form_residual(&model, &cfg, &SourceTerm::zero(), &traj, 10, 5);
        assert_eq!((w.momentum, w.mass, w.pressure), (0.0, 0.0, 0.0));
    }

    #[test]
    fn energy_of_a_static_mode() {
        let (model, cfg) = setup();
        let g = &model.grid;
        let w1 = model.basis.mode(0);
        let state = SimState {
            t: 0.0,
            step: 0,
            u: FaceField::zeros(g),
            sigma: model.basis.analyze(&w1),
            p: vec![0.0; model.n_modes()],
            iu: FaceField::zeros(g),
            d0: std::sync::Arc::new(FaceField::zeros(g)),
        };
        let traj = Trajectory {
            states: vec![state.clone(), SimState { t: 0.01, ..state }],
            stride: 1,
            times: vec![0.0, 0.01],
            probes: vec![],
            traces: vec![],
            picard_iterations: vec![1],
            retries: 0,
            config_hash: String::new(),
            media_hash: String::new(),
        };
        let rep = energy_dissipation(&model, &cfg, &traj);
        // Dense oracle: assemble −Δ and take the fractional power by full eigendecomposition.
        let a = build_laplacian(g, None).unwrap().to_dense();
        let eig = nalgebra::SymmetricEigen::new(a.clone());
        let v = nalgebra::DVector::from_vec(w1.clone());
        let coeffs = eig.eigenvectors.tr_mul(&v);
        let frac: f64 = coeffs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| c * c * l.max(0.0).powf(1.75))
            .sum::<f64>()
            * g.cell_volume();
        let grad_sq = (v.transpose() * &a * &v)[(0, 0)] * g.cell_volume();
        let expect = grad_sq + 1.0 + frac;
        assert!((rep.energy[0] - expect).abs() < 1e-9 * expect);
        assert!(rep.dissipation.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn rhs2_vanishes_for_uniform_density() {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let mut m = MediumFields::constant(&g, 1.0, 1.0, 4.0, Absorption { alpha0: 0.01, y: 2.5, tau: 1.0, eta: 1.0 }).unwrap();
        m.c0sq = Phantom::Sinusoid { cycles: vec![1.0, 0.5], amplitude: 0.1 }.field(&g, 1.0).unwrap();
        let model = Model::new(&g, &m, 30, AbsorptionKind::ModifiedL).unwrap();
        let cfg = SolverConfig::new(0.005, 0.05, 30);
        let mut data = InitialData::zero(&g);
        data.sigma0 = model.basis.mode(3).iter().map(|v| 0.01 * v).collect();
        let traj = run(&model, &cfg, &SourceTerm::zero(), &data, &[], 1).unwrap();
        let rep = energy_identity_residual(&model, &cfg, &SourceTerm::zero(), &traj);
        assert!(rep.rhs2.iter().all(|&v| v == 0.0));
        let d = energy_dissipation(&model, &cfg, &traj).dissipation;
        assert!(d.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn corrupted_density_inflates_mass_residual() {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let m = MediumFields::constant(&g, 1.0, 1.0, 4.0, Absorption::none(2.5)).unwrap();
        let model = Model::new(&g, &m, 30, AbsorptionKind::ModifiedL).unwrap();
        let cfg = SolverConfig::new(0.005, 0.2, 30);
        let mut data = InitialData::zero(&g);
        data.sigma0 = model.basis.mode(1).iter().map(|v| 0.01 * v).collect();
        let src = SourceTerm::zero();
        let traj = run(&model, &cfg, &src, &data, &[], 1).unwrap();
        let clean = weak_form_residual(&model, &cfg, &src, &traj, 10, 5);
        let mut bad = traj.clone();
        for s in bad.states.iter_mut() {
            s.sigma.iter_mut().for_each(|c| *c *= 1.1);
        }
        let dirty = weak_form_residual(&model, &cfg, &src, &bad, 10, 5);
        assert!(dirty.mass > 10.0 * clean.mass, "{dirty:?} vs {clean:?}");
    }

    #[test]
    fn sandwich_is_tight_for_constant_density() {
        let g = Grid::uniform(2, 8, 0.125).unwrap();
        let rep = check_eigen_sandwich(&g, &vec![1000.0; g.len()], 20, 1.0).unwrap();
        assert!(rep.all_pass());
        for r in &rep.rows {
            assert!((r.lambda - r.upper).abs() < 1e-9 * r.upper);
        }
        assert!(!check_eigen_sandwich(&g, &vec![1000.0; g.len()], 20, 0.9).unwrap().all_pass());
    }

    #[test]
    fn first_violation_is_the_first_crossing() {
        let (model, cfg) = setup();
        let mut data = InitialData::zero(&model.grid);
        data.sigma0 = model.basis.mode(0).iter().map(|v| 0.05 * v).collect();
        let traj = run(&model, &cfg, &SourceTerm::zero(), &data, &[], 1).unwrap();
        let rep = smallness_monitor(&model, &cfg, &traj, 0.25);
        let r = rep.series[2] * (1.0 - 1e-12);
        let rep = smallness_monitor(&model, &cfg, &traj, r);
        let first = rep.series.iter().position(|&l| l > r).unwrap();
        assert_eq!(rep.first_violation, Some(rep.t[first]));
    }
}
