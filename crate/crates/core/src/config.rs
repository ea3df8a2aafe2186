//! JSON run configuration. All quantities are SI: metres, seconds, kg/m³,
//! m/s, Pa. Parsing rejects unknown keys and reports every semantic
//! violation with its field path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{RingParams, RingPreset};
use crate::grid::Grid;
use crate::media::{db_to_internal_alpha, default_tau_eta, Absorption, MediumFields, Phantom};
use crate::physics::{gaussian_profile, AbsorptionKind, Signal, SourceComponent, SourceTerm};
use crate::solver::{InitialData, Model, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    /// m.
    pub spacing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaSpec {
    /// Background density, kg/m³.
    pub rho0: f64,
    /// Background sound speed, m/s.
    pub c0: f64,
    #[serde(default)]
    pub b_over_a: f64,
    /// Relative modulation of ρ₀.
    #[serde(default = "constant_phantom")]
    pub rho0_phantom: Phantom,
    /// Relative modulation of c₀.
    #[serde(default = "constant_phantom")]
    pub c0_phantom: Phantom,
}

fn constant_phantom() -> Phantom {
    Phantom::Constant
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// A number, or `"auto"` for the default derived from c₀ and y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(Auto),
    Value(f64),
}

impl Default for AutoOr {
    fn default() -> Self {
        AutoOr::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorptionSpec {
    #[serde(default)]
    pub kind: AbsorptionKind,
    /// dB/(cm MHz^y); exclusive with `alpha0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0_db: Option<f64>,
    /// Np/m (rad/s)^−y.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    pub y: f64,
    #[serde(default)]
    pub tau: AutoOr,
    #[serde(default)]
    pub eta: AutoOr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// Pa s.
    #[serde(default)]
    pub mu: f64,
    pub dt: f64,
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
}

fn default_picard_tol() -> f64 {
    SolverConfig::new(1.0, 1.0, 1).picard_tol
}

fn default_picard_max_iters() -> usize {
    SolverConfig::new(1.0, 1.0, 1).picard_max_iters
}

fn default_cg_tol() -> f64 {
    SolverConfig::new(1.0, 1.0, 1).cg_tol
}

/// Gaussian force-potential source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub center: Vec<f64>,
    /// Standard deviation, m.
    pub width: f64,
    /// Potential amplitude in Pa.
    pub signal: Signal,
}

/// Gaussian initial relative density, shifted to zero mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "desk")]
    pub preset: RingPreset,
    /// Fields replacing the preset's values.
    #[serde(default)]
    pub overrides: serde_json::Map<String, serde_json::Value>,
}

fn desk() -> RingPreset {
    RingPreset::Desk
}

impl ExperimentSpec {
    pub fn ring_params(&self) -> Result<RingParams> {
        let mut v = serde_json::to_value(RingParams::preset(self.preset)).map_err(|e| Error::validation(e.to_string()))?;
        let obj = v.as_object_mut().expect("struct serializes to an object");
        for (k, val) in &self.overrides {
            obj.insert(k.clone(), val.clone());
        }
        serde_json::from_value(v).map_err(|e| Error::validation(format!("experiment.overrides: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Pa s, descending.
    pub mus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub media: MediaSpec,
    pub absorption: AbsorptionSpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    /// Probe positions, m.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    /// Store every `stride`-th state.
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_output")]
    pub output: String,
    /// Added to the seed of every random phantom.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_output() -> String {
    "out".into()
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(vec![format!(
            "syntax error at line {}, column {}: {e}",
            e.line(),
            e.column()
        )])
    })?;
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(vec![format!("{path}: {}", e.into_inner())])
    })?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

fn finite_pos(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dims.clone(), self.grid.spacing.clone())
    }

    /// Every semantic violation, prefixed by its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let g = &self.grid;
        if g.dims.is_empty() || g.dims.len() > 3 {
            v.push(format!("grid.dims: need 1 to 3 axes, got {}", g.dims.len()));
        }
        if g.dims.len() != g.spacing.len() {
            v.push("grid.spacing: length must match grid.dims".into());
        }
        if g.dims.iter().any(|&n| n < 2) {
            v.push("grid.dims: every axis needs at least 2 cells".into());
        }
        if !g.spacing.iter().all(|&h| finite_pos(h)) {
            v.push("grid.spacing: must be positive".into());
        }
        let grid = self.grid().ok();
        let ndim = g.dims.len();

        let m = &self.media;
        if !finite_pos(m.rho0) {
            v.push(format!("media.rho0: must be positive, got {}", m.rho0));
        }
        if !finite_pos(m.c0) {
            v.push(format!("media.c0: must be positive, got {}", m.c0));
        }
        if !(m.b_over_a.is_finite() && m.b_over_a >= 0.0) {
            v.push(format!("media.b_over_a: must be >= 0, got {}", m.b_over_a));
        }
        for (name, p) in [("media.rho0_phantom", &m.rho0_phantom), ("media.c0_phantom", &m.c0_phantom)] {
            if p.amplitude().abs() >= 1.0 {
                v.push(format!("{name}: relative amplitude must be below 1 in magnitude"));
            }
            if let Some(grid) = &grid {
                if let Err(e) = p.shape(grid) {
                    v.push(format!("{name}: {e}"));
                }
            }
        }

        let a = &self.absorption;
        if !(a.y > 1.0 && a.y < 3.0) {
            v.push(format!("absorption.y: y out of (1,3), got {}", a.y));
        }
        match (a.alpha0_db, a.alpha0) {
            (Some(_), Some(_)) => v.push("absorption: give alpha0_db or alpha0, not both".into()),
            (Some(x), None) | (None, Some(x)) if !(x.is_finite() && x >= 0.0) => {
                v.push(format!("absorption.alpha0: must be >= 0, got {x}"))
            }
            _ => {}
        }
        if let AutoOr::Value(t) = a.tau {
            if !finite_pos(t) {
                v.push(format!("absorption.tau: must be positive, got {t}"));
            }
        }
        if let AutoOr::Value(e) = a.eta {
            if !e.is_finite() {
                v.push("absorption.eta: must be finite".into());
            }
        }
        if a.y == 2.0 && self.alpha0_set() && (a.tau == AutoOr::default() || a.eta == AutoOr::default()) {
            v.push("absorption: y = 2 has no automatic tau/eta; give both explicitly".into());
        }

        let solver = self.solver_config();
        v.extend(solver.violations().into_iter().map(|s| format!("solver.{s}")));
        if let Some(grid) = &grid {
            if self.solver.n_modes >= grid.len() {
                v.push(format!(
                    "solver.n_modes: must be below the cell count {}",
                    grid.len()
                ));
            }
            if self.stride == 0 || (solver.violations().is_empty() && solver.steps() % self.stride != 0) {
                v.push(format!("stride: must divide the step count, got {}", self.stride));
            }
            for (i, s) in self.sources.iter().enumerate() {
                if s.center.len() != ndim || !grid.contains(&s.center) {
                    v.push(format!("sources[{i}].center: outside the domain"));
                }
                if !finite_pos(s.width) {
                    v.push(format!("sources[{i}].width: must be positive"));
                }
                let single = SourceTerm::single(vec![0.0; grid.len()], s.signal.clone());
                if let Err(e) = single.check(grid, self.solver.t_end) {
                    v.push(format!("sources[{i}].signal: {e}"));
                }
            }
            for (i, p) in self.probes.iter().enumerate() {
                if p.len() != ndim || !grid.contains(p) {
                    v.push(format!("probes[{i}]: outside the domain"));
                }
            }
            if let Some(init) = &self.initial {
                if init.center.len() != ndim || !finite_pos(init.width) || !init.amplitude.is_finite() {
                    v.push("initial: needs a center in the domain, positive width and finite amplitude".into());
                }
            }
        }
        if let Some(e) = &self.experiment {
            if let Err(err) = e.ring_params() {
                v.push(err.to_string());
            }
        }
        if let Some(s) = &self.sweep {
            if s.mus.is_empty() || s.mus.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                v.push("sweep.mus: need a nonempty list of positive values".into());
            }
            if s.mus.windows(2).any(|w| w[1] >= w[0]) {
                v.push("sweep.mus: must be strictly descending".into());
            }
        }
        v
    }

    fn alpha0_set(&self) -> bool {
        self.absorption.alpha0_db.or(self.absorption.alpha0).is_some_and(|a| a > 0.0)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            mu: s.mu,
            dt: s.dt,
            t_end: s.t_end,
            n_modes: s.n_modes,
            picard_tol: s.picard_tol,
            picard_max_iters: s.picard_max_iters,
            linear_mode: s.linear_mode,
            cg_tol: s.cg_tol,
            absorption: self.absorption.kind,
        }
    }

    fn seeded(&self, p: &Phantom) -> Phantom {
        match p {
            Phantom::RandomSmooth { amplitude, max_mode, seed } => Phantom::RandomSmooth {
                amplitude: *amplitude,
                max_mode: *max_mode,
                seed: seed.wrapping_add(self.seed),
            },
            other => other.clone(),
        }
    }

    pub fn media(&self, grid: &Grid) -> Result<MediumFields> {
        let a = &self.absorption;
        let alpha0 = match (a.alpha0_db, a.alpha0) {
            (Some(db), _) => db_to_internal_alpha(db, a.y)?,
            (None, Some(x)) => x,
            (None, None) => 0.0,
        };
        let c_field = self.seeded(&self.media.c0_phantom).field(grid, self.media.c0)?;
        let (tau, eta) = if alpha0 > 0.0 {
            let c_ref = c_field.iter().sum::<f64>() / c_field.len() as f64;
            let auto = || default_tau_eta(c_ref, a.y);
            let tau = match a.tau {
                AutoOr::Value(t) => t,
                AutoOr::Auto(_) => auto()?.tau,
            };
            let eta = match a.eta {
                AutoOr::Value(e) => e,
                AutoOr::Auto(_) => auto()?.eta,
            };
            (tau, eta)
        } else {
            let none = Absorption::none(a.y);
            (none.tau, none.eta)
        };
        let m = MediumFields {
            rho0: self.seeded(&self.media.rho0_phantom).field(grid, self.media.rho0)?,
            c0sq: c_field.iter().map(|c| c * c).collect(),
            b_over_a: vec![self.media.b_over_a; grid.len()],
            absorption: Absorption { alpha0, y: a.y, tau, eta },
        };
        m.check(grid)?;
        Ok(m)
    }

    pub fn source(&self, grid: &Grid) -> SourceTerm {
        SourceTerm {
            components: self
                .sources
                .iter()
                .map(|s| SourceComponent {
                    profile: gaussian_profile(grid, &s.center, s.width),
                    signal: s.signal.clone(),
                })
                .collect(),
        }
    }

    pub fn initial_data(&self, grid: &Grid) -> InitialData {
        let mut d = InitialData::zero(grid);
        if let Some(init) = &self.initial {
            d.sigma0 = gaussian_profile(grid, &init.center, init.width)
                .into_iter()
                .map(|v| init.amplitude * v)
                .collect();
            // σ has zero mean (mass conservation), so the bump is centered.
            crate::grid::subtract_mean(&mut d.sigma0);
        }
        d
    }

    pub fn probe_cells(&self, grid: &Grid) -> Result<Vec<usize>> {
        self.probes
            .iter()
            .map(|p| grid.locate(p).ok_or_else(|| Error::validation(format!("probe {p:?} outside the grid"))))
            .collect()
    }

    /// Grid, media, model and run inputs ready for the solver.
    pub fn build(&self) -> Result<Setup> {
        let grid = self.grid()?;
        let media = self.media(&grid)?;
        let model = Model::new(&grid, &media, self.solver.n_modes, self.absorption.kind)?;
        Ok(Setup {
            solver: self.solver_config(),
            source: self.source(&grid),
            data: self.initial_data(&grid),
            probes: self.probe_cells(&grid)?,
            grid,
            media,
            model,
        })
    }
}

#[derive(Debug)]
pub struct Setup {
    pub grid: Grid,
    pub media: MediumFields,
    pub model: Model,
    pub solver: SolverConfig,
    pub source: SourceTerm,
    pub data: InitialData,
    pub probes: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"dims": [16, 16], "spacing": [1e-3, 1e-3]},
        "media": {"rho0": 1000, "c0": 1500},
        "absorption": {"y": 1.5},
        "solver": {"dt": 1e-7, "t_end": 1e-6, "n_modes": 40},
        "sources": [{"center": [8e-3, 8e-3], "width": 1e-3,
                     "signal": {"kind": "tone", "amplitude": 1e5, "frequency": 2.5e5}}]
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.stride, 1);
        assert_eq!(c.output, "out");
        assert_eq!(c.absorption.kind, AbsorptionKind::ModifiedL);
        assert_eq!(c.absorption.tau, AutoOr::default());
        assert_eq!(c.solver.picard_tol, 1e-10);
        let echoed = c.to_json();
        assert!(echoed.contains("\"picard_max_iters\": 50"));
        assert_eq!(parse_config(&echoed).unwrap(), c);
        let setup = c.build().unwrap();
        assert_eq!(setup.solver.steps(), 10);
    }

    #[test]
    fn y_out_of_range_is_named() {
        let text = MINIMAL.replace("\"y\": 1.5", "\"y\": 3.5");
        match parse_config(&text) {
            Err(Error::Config(v)) => assert!(v.iter().any(|s| s.contains("y out of (1,3)")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let text = MINIMAL
            .replace("\"y\": 1.5", "\"y\": 0.5")
            .replace("\"rho0\": 1000", "\"rho0\": -1")
            .replace("\"dt\": 1e-7", "\"dt\": -1");
        match parse_config(&text) {
            Err(Error::Config(v)) => {
                assert!(v.iter().any(|s| s.starts_with("absorption.y")));
                assert!(v.iter().any(|s| s.starts_with("media.rho0")));
                assert!(v.iter().any(|s| s.starts_with("solver.")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_syntax_errors() {
        let text = MINIMAL.replace("\"c0\": 1500", "\"c0\": 1500, \"colour\": 3");
        match parse_config(&text) {
            Err(Error::Config(v)) => assert!(v[0].contains("media") && v[0].contains("colour"), "{v:?}"),
            other => panic!("{other:?}"),
        }
        match parse_config("{\n  \"grid\": [1,\n}") {
            Err(Error::Config(v)) => assert!(v[0].contains("line 3"), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_overrides_apply() {
        let e = ExperimentSpec {
            preset: RingPreset::Desk,
            overrides: serde_json::from_str(r#"{"steps": 10}"#).unwrap(),
        };
        assert_eq!(e.ring_params().unwrap().steps, 10);
        let bad = ExperimentSpec {
            preset: RingPreset::Desk,
            overrides: serde_json::from_str(r#"{"stepz": 10}"#).unwrap(),
        };
        assert!(bad.ring_params().is_err());
    }

    #[test]
    fn auto_tau_eta_match_the_media_defaults() {
        let text = MINIMAL.replace("\"y\": 1.5", "\"y\": 1.5, \"alpha0_db\": 0.5");
        let c = parse_config(&text).unwrap();
        let m = c.media(&c.grid().unwrap()).unwrap();
        assert!((m.absorption.tau - 38.72983346207417).abs() < 1e-9);
        assert!((m.absorption.eta - 58094.75019311126).abs() < 1e-6);
        assert_eq!(m.absorption.alpha0, 3.6549410507852274e-10);
    }
}
