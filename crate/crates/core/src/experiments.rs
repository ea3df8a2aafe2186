//! Ring-array tomography experiment with singular-value analysis, and the
//! vanishing-viscosity sweep.

use std::f64::consts::TAU;

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::media::{db_to_internal_alpha, default_tau_eta, Absorption, MediumFields, Phantom};
use crate::physics::{gaussian_profile, AbsorptionKind, Signal, SourceTerm};
use crate::solver::{run, InitialData, Model, SolverConfig, Trajectory};

/// Elements on a ring; source-capable elements are listed by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerArray {
    pub center: Vec<f64>,
    pub radius: f64,
    pub positions: Vec<Vec<f64>>,
    pub source_capable: Vec<bool>,
    /// Drive tone, Hz.
    pub frequency: f64,
    /// Drive amplitude of the force potential, Pa.
    pub amplitude: f64,
    /// Tone-burst length in periods.
    pub cycles: f64,
    /// Standard deviation of an element's Gaussian footprint, m.
    pub element_width: f64,
}

impl TransducerArray {
    /// `n` equally spaced elements starting on the positive x axis.
    pub fn ring(grid: &Grid, center: &[f64], radius: f64, n: usize, sources: &[usize]) -> Result<Self> {
        if grid.ndim() != 2 || center.len() != 2 {
            return Err(Error::validation("ring arrays need a 2D grid"));
        }
        if n == 0 || !(radius > 0.0) {
            return Err(Error::validation("ring needs at least one element and a positive radius"));
        }
        if let Some(&s) = sources.iter().find(|&&s| s >= n) {
            return Err(Error::validation(format!("source element {s} out of range for {n} elements")));
        }
        let positions: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let th = TAU * k as f64 / n as f64;
                vec![center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            })
            .collect();
        if let Some((k, p)) = positions.iter().enumerate().find(|(_, p)| !grid.contains(p)) {
            return Err(Error::validation(format!("element {k} at {p:?} lies outside the domain")));
        }
        let mut source_capable = vec![false; n];
        sources.iter().for_each(|&s| source_capable[s] = true);
        Ok(TransducerArray {
            center: center.to_vec(),
            radius,
            positions,
            source_capable,
            frequency: 0.0,
            amplitude: 0.0,
            cycles: 1.0,
            element_width: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sources(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.source_capable[k]).collect()
    }

    /// Cell index of every element center.
    pub fn cells(&self, grid: &Grid) -> Result<Vec<usize>> {
        self.positions
            .iter()
            .map(|p| grid.locate(p).ok_or_else(|| Error::validation(format!("element at {p:?} outside the grid"))))
            .collect()
    }

    /// In-phase drive of the listed elements.
    pub fn drive(&self, grid: &Grid, elements: &[usize]) -> SourceTerm {
        let signal = Signal::Tone {
            amplitude: self.amplitude,
            frequency: self.frequency,
            cycles: Some(self.cycles),
        };
        elements.iter().fold(SourceTerm::zero(), |acc, &e| {
            acc.plus(&SourceTerm::single(
                gaussian_profile(grid, &self.positions[e], self.element_width),
                signal.clone(),
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub sources: Vec<usize>,
    /// All elements not driving in this run.
    pub detectors: Vec<usize>,
}

impl PlannedRun {
    pub fn label(&self) -> String {
        let s: Vec<String> = self.sources.iter().map(|s| s.to_string()).collect();
        format!("s{}", s.join("+"))
    }
}

/// Every single source-capable element, then every pair, in lexicographic order.
pub fn run_plan(array: &TransducerArray) -> Vec<PlannedRun> {
    let src = array.sources();
    let mut sets: Vec<Vec<usize>> = src.iter().map(|&s| vec![s]).collect();
    for (i, &a) in src.iter().enumerate() {
        for &b in &src[i + 1..] {
            sets.push(vec![a, b]);
        }
    }
    sets.into_iter()
        .map(|sources| PlannedRun {
            detectors: (0..array.len()).filter(|e| !sources.contains(e)).collect(),
            sources,
        })
        .collect()
}

pub fn row_count(plan: &[PlannedRun]) -> usize {
    plan.iter().map(|r| r.detectors.len()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingPreset {
    Desk,
    Full,
}

/// Geometry, medium and drive of the ring experiment (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingParams {
    pub cells: usize,
    pub h: f64,
    pub rho0: f64,
    pub c0: f64,
    /// Relative sound-speed contrast of the inclusion.
    pub blob_amplitude: f64,
    pub blob_width: f64,
    pub b_over_a: f64,
    /// dB/(cm MHz^y).
    pub alpha_db: f64,
    pub y: f64,
    pub frequency: f64,
    pub amplitude: f64,
    pub cycles: f64,
    pub element_width: f64,
    pub elements: usize,
    pub sources: Vec<usize>,
    pub ring_radius: f64,
    pub dt: f64,
    pub steps: usize,
    /// Retained modes; `None` keeps all of them.
    #[serde(default)]
    pub n_modes: Option<usize>,
    #[serde(default)]
    pub absorption: AbsorptionKind,
}

impl RingParams {
    pub fn preset(p: RingPreset) -> Self {
        match p {
            RingPreset::Desk => RingParams {
                cells: 96,
                h: 0.75e-3,
                rho0: 1000.0,
                c0: 1500.0,
                blob_amplitude: 0.05,
                blob_width: 6e-3,
                b_over_a: 7.0,
                alpha_db: 0.5,
                y: 1.5,
                frequency: 0.25e6,
                amplitude: 4e7,
                cycles: 2.0,
                element_width: 1.5e-3,
                elements: 8,
                sources: vec![0, 2, 4, 6],
                ring_radius: 30.0 * 0.75e-3,
                dt: 2e-7,
                steps: 220,
                n_modes: None,
                absorption: AbsorptionKind::ModifiedL,
            },
            RingPreset::Full => RingParams {
                cells: 128,
                h: 1e-3,
                rho0: 1000.0,
                c0: 1500.0,
                blob_amplitude: 0.05,
                blob_width: 10e-3,
                b_over_a: 7.0,
                alpha_db: 0.5,
                y: 1.5,
                frequency: 0.25e6,
                amplitude: 5e6,
                cycles: 2.0,
                element_width: 2e-3,
                elements: 8,
                sources: vec![0, 2, 4, 6],
                ring_radius: 50e-3,
                dt: 2e-7,
                steps: 400,
                n_modes: None,
                absorption: AbsorptionKind::ModifiedL,
            },
        }
    }
}

/// Everything needed to execute a ring plan.
#[derive(Debug, Clone)]
pub struct RingExperiment {
    pub params: RingParams,
    pub grid: Grid,
    pub media: MediumFields,
    pub array: TransducerArray,
    pub plan: Vec<PlannedRun>,
}

pub fn build_ring_experiment(params: &RingParams) -> Result<RingExperiment> {
    let grid = Grid::uniform(2, params.cells, params.h)?;
    let wavelength = params.c0 / params.frequency;
    if wavelength / params.h < 6.0 {
        warn!(
            "only {:.1} points per wavelength at {} Hz",
            wavelength / params.h,
            params.frequency
        );
    }
    let center: Vec<f64> = grid.lengths().iter().map(|l| 0.5 * l).collect();
    let mut array = TransducerArray::ring(&grid, &center, params.ring_radius, params.elements, &params.sources)?;
    array.frequency = params.frequency;
    array.amplitude = params.amplitude;
    array.cycles = params.cycles;
    array.element_width = params.element_width;

    let alpha0 = db_to_internal_alpha(params.alpha_db, params.y)?;
    let te = default_tau_eta(params.c0, params.y)?;
    let absorption = Absorption {
        alpha0,
        y: params.y,
        tau: te.tau,
        eta: te.eta,
    };
    let mut media = MediumFields::constant(&grid, params.rho0, params.c0, params.b_over_a, absorption)?;
    // Inclusion off-center so the geometry has no mirror symmetry between sources.
    let blob = Phantom::GaussianBlob {
        center: vec![center[0] + 0.3 * params.ring_radius, center[1] + 0.2 * params.ring_radius],
        width: params.blob_width,
        amplitude: params.blob_amplitude,
    };
    media.c0sq = blob.field(&grid, params.c0)?.iter().map(|c| c * c).collect();
    media.check(&grid)?;
    let plan = run_plan(&array);
    Ok(RingExperiment {
        params: params.clone(),
        grid,
        media,
        array,
        plan,
    })
}

impl RingExperiment {
    pub fn n_modes(&self) -> usize {
        self.params.n_modes.unwrap_or(self.grid.len() - 1)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(&self.grid, &self.media, self.n_modes(), self.params.absorption)
    }

    pub fn solver_config(&self, linear_mode: bool) -> SolverConfig {
        let mut c = SolverConfig::new(self.params.dt, self.params.dt * self.params.steps as f64, self.n_modes());
        c.linear_mode = linear_mode;
        c.absorption = self.params.absorption;
        c
    }
}

/// Stacked detector traces, one row per (source set, detector).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataMatrix {
    pub labels: Vec<(String, usize)>,
    pub rows: Vec<Vec<f64>>,
    /// Sample times shared by every row.
    pub times: Vec<f64>,
}

impl DataMatrix {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let cols = self.rows.first().map_or(0, |r| r.len());
        DMatrix::from_fn(self.rows.len(), cols, |i, j| self.rows[i][j])
    }

    pub fn row(&self, label: &str, detector: usize) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|(l, d)| l == label && *d == detector)
            .map(|i| self.rows[i].as_slice())
    }
}

/// Worker count: `KWK_THREADS` when set, otherwise rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var("KWK_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs one source set and returns the full trajectory (states at start and end only).
pub fn run_single(exp: &RingExperiment, model: &Model, config: &SolverConfig, planned: &PlannedRun) -> Result<Trajectory> {
    let cells = exp.array.cells(&exp.grid)?;
    let probes: Vec<usize> = planned.detectors.iter().map(|&d| cells[d]).collect();
    let source = exp.array.drive(&exp.grid, &planned.sources);
    let data = InitialData::zero(&exp.grid);
    run(model, config, &source, &data, &probes, config.steps()).map_err(|e| match e {
        Error::StepFailure { t, reason } => Error::StepFailure {
            t,
            reason: format!("run {}: {reason}", planned.label()),
        },
        Error::Numerical(m) => Error::Numerical(format!("run {}: {m}", planned.label())),
        other => other,
    })
}

/// Executes every planned run (concurrently) and stacks traces in plan order.
pub fn run_experiment(exp: &RingExperiment, linear_mode: bool) -> Result<DataMatrix> {
    let model = exp.model()?;
    let config = exp.solver_config(linear_mode);
    info!(
        "ring experiment: {} runs, {} rows, linear_mode = {linear_mode}",
        exp.plan.len(),
        row_count(&exp.plan)
    );
    let work = || -> Vec<Result<Trajectory>> {
        exp.plan
            .par_iter()
            .map(|p| run_single(exp, &model, &config, p))
            .collect()
    };
    let results = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut m = DataMatrix {
        labels: Vec::new(),
        rows: Vec::new(),
        times: Vec::new(),
    };
    for (planned, traj) in exp.plan.iter().zip(results) {
        let traj = traj?;
        if m.times.is_empty() {
            m.times = traj.times.clone();
        }
        for (&d, tr) in planned.detectors.iter().zip(traj.traces) {
            m.labels.push((planned.label(), d));
            m.rows.push(tr);
        }
    }
    Ok(m)
}

/// Singular values in descending order, divided by the largest.
pub fn svd_spectrum(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().all(|&v| v == 0.0) {
        return Err(Error::validation("data matrix is all zero"));
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = s[0];
    Ok(s.into_iter().map(|v| v / top).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    /// Distance to the next run in the list (absent for the last).
    pub distance_to_next: Option<f64>,
    pub distance_to_inviscid: f64,
    /// `sup_t ‖u‖² + ‖∇·u‖² + ‖∇σ‖² + ‖σ‖²_{H^{(y+1)/2}}`.
    pub energy_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `(max − min)/max` of the energy sup over all runs including μ = 0.
    pub energy_variation: f64,
    pub inviscid_energy_sup: f64,
}

impl SweepReport {
    pub fn distances_decrease(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].distance_to_inviscid < w[0].distance_to_inviscid)
    }
}

/// `‖u_a − u_b‖_{L∞(L²)} + ‖σ_a − σ_b‖_{L∞(L²)}` over matching samples.
pub fn trajectory_distance(grid: &Grid, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::validation("trajectories have different sample counts"));
    }
    let mut du: f64 = 0.0;
    let mut ds: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        let mut d = x.u.clone();
        d.axpy(-1.0, &y.u);
        du = du.max(grid::face_norm(grid, &d));
        let s: f64 = x.sigma.iter().zip(&y.sigma).map(|(p, q)| (p - q).powi(2)).sum();
        ds = ds.max(s.sqrt());
    }
    Ok(du + ds)
}

/// Runs `base` with each μ in `mus` and with μ = 0, comparing trajectories.
pub fn viscosity_sweep(model: &Model, base: &SolverConfig, source: &SourceTerm, data: &InitialData, mus: &[f64], stride: usize) -> Result<SweepReport> {
    if !model.uniform_density {
        return Err(Error::validation("the viscosity sweep needs constant rho0"));
    }
    let d = model.grid.ndim() as f64;
    let y = model.media.absorption.y;
    if model.media.absorption.alpha0 > 0.0 && y <= d {
        return Err(Error::validation(format!("the vanishing-viscosity limit needs y > {d}, got {y}")));
    }
    let run_mu = |mu: f64| -> Result<Trajectory> {
        let mut c = base.clone();
        c.mu = mu;
        run(model, &c, source, data, &[], stride)
    };
    let trajs: Vec<Trajectory> = mus.iter().map(|&mu| run_mu(mu)).collect::<Result<_>>()?;
    let inviscid = run_mu(0.0)?;
    let energy_sup = |t: &Trajectory| {
        crate::diagnostics::energy_dissipation(model, base, t).energy_sup()
    };
    let inviscid_energy_sup = energy_sup(&inviscid);
    let mut rows = Vec::with_capacity(mus.len());
    for (i, (mu, t)) in mus.iter().zip(&trajs).enumerate() {
        rows.push(SweepRow {
            mu: *mu,
            distance_to_next: trajs
                .get(i + 1)
                .map(|n| trajectory_distance(&model.grid, t, n))
                .transpose()?,
            distance_to_inviscid: trajectory_distance(&model.grid, t, &inviscid)?,
            energy_sup: energy_sup(t),
        });
    }
    let sups = rows.iter().map(|r| r.energy_sup).chain([inviscid_energy_sup]);
    let (lo, hi) = sups.fold((f64::INFINITY, 0.0_f64), |(l, h), v| (l.min(v), h.max(v)));
    Ok(SweepReport {
        rows,
        energy_variation: if hi > 0.0 { (hi - lo) / hi } else { 0.0 },
        inviscid_energy_sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ring(n: usize, sources: &[usize]) -> TransducerArray {
        let g = Grid::uniform(2, 16, 1.0).unwrap();
        TransducerArray::ring(&g, &[8.0, 8.0], 5.0, n, sources).unwrap()
    }

    #[test]
    fn plan_row_counts() {
        let plan = run_plan(&small_ring(8, &[0, 2, 4, 6]));
        assert_eq!(plan.len(), 10);
        assert_eq!(row_count(&plan), 64);
        let plan = run_plan(&small_ring(4, &[0, 2]));
        assert_eq!(row_count(&plan), 8);
        let plan = run_plan(&small_ring(5, &[3]));
        assert_eq!(plan.len(), 1);
        assert_eq!(row_count(&plan), 4);
        assert_eq!(plan[0].label(), "s3");
    }

    #[test]
    fn ring_is_equally_spaced() {
        let a = small_ring(8, &[0]);
        let d: Vec<f64> = (0..8)
            .map(|k| {
                let (p, q) = (&a.positions[k], &a.positions[(k + 1) % 8]);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
            })
            .collect();
        assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-12));
    }

    #[test]
    fn ring_outside_domain_is_rejected() {
        let g = Grid::uniform(2, 16, 1.0).unwrap();
        assert!(TransducerArray::ring(&g, &[8.0, 8.0], 9.0, 8, &[0]).is_err());
    }

    #[test]
    fn rank_one_spectrum() {
        let u = nalgebra::DVector::from_fn(6, |i, _| (i as f64 + 1.0).sin());
        let v = nalgebra::DVector::from_fn(9, |i, _| (i as f64).cos());
        let s = svd_spectrum(&(u * v.transpose())).unwrap();
        assert_eq!(s[0], 1.0);
        assert!(s[1] <= 1e-12);
        assert!(svd_spectrum(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn zero_drive_gives_zero_matrix() {
        let mut p = RingParams::preset(RingPreset::Desk);
        p.cells = 16;
        p.h = 4.5e-3;
        p.ring_radius = 25e-3;
        p.steps = 4;
        p.amplitude = 0.0;
        p.n_modes = Some(60);
        let exp = build_ring_experiment(&p).unwrap();
        let m = run_experiment(&exp, false).unwrap();
        assert_eq!(m.rows.len(), 64);
        assert!(m.rows.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_mu_gives_zero_distance() {
        let g = Grid::uniform(1, 16, 1.0 / 16.0).unwrap();
        let m = MediumFields::constant(&g, 1.0, 1.0, 4.0, Absorption::none(1.5)).unwrap();
        let model = Model::new(&g, &m, 15, AbsorptionKind::ModifiedL).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1, 15);
        let mut data = InitialData::zero(&g);
        data.sigma0 = model.basis.mode(0).iter().map(|v| 0.01 * v).collect();
        let rep = viscosity_sweep(&model, &cfg, &SourceTerm::zero(), &data, &[1e-3, 1e-3], 1).unwrap();
        assert_eq!(rep.rows[0].distance_to_next, Some(0.0));
    }
}
