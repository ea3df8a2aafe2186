use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kwk_core::config::{parse_config, RunConfig, Setup};
use kwk_core::diagnostics::{self, RitzStability};
use kwk_core::experiments::{self, RingPreset};
use kwk_core::media::{self, DEFAULT_R};
use kwk_core::physics::SourceComponent;
use kwk_core::{io, solver, Error, Result, SourceTerm};
use serde_json::{json, Value};

const DEFAULT_CONFIG: &str = include_str!("../default_config.json");

#[derive(Parser)]
#[command(name = "kwk", version, about = "Nonlinear ultrasound with fractional power-law absorption")]
struct Cli {
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write the trajectory and energy report.
    Simulate { config: PathBuf },
    /// Synthetic imaging experiments.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCmd,
    },
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        which: SweepCmd,
    },
    /// Numerical invariant checks.
    Check {
        #[command(subcommand)]
        which: CheckCmd,
    },
    /// Unit conversions.
    Convert {
        #[command(subcommand)]
        which: ConvertCmd,
    },
    /// Print the bundled default configuration.
    DefaultConfig,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Ring-array data matrices and singular values, linear and nonlinear.
    Ring { config: Option<PathBuf> },
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Vanishing-viscosity sweep over the config's `sweep.mus`.
    Viscosity { config: PathBuf },
}

#[derive(Subcommand)]
enum CheckCmd {
    /// Sandwich, projection stability, superposition and identity refinement.
    Invariants { config: Option<PathBuf> },
}

#[derive(Subcommand)]
enum ConvertCmd {
    /// dB/(cm MHz^y) to Np/m (rad/s)^-y.
    Alpha {
        #[arg(long, allow_hyphen_values = true)]
        db: f64,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            if cli.json {
                println!("{}", json!({ "ok": false, "error": e.to_string() }));
            }
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
        Err(Failure::Checks(summary)) => {
            eprintln!("error: at least one invariant check failed");
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            }
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Error(Error),
    Checks(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn dispatch(cli: &Cli) -> std::result::Result<Value, Failure> {
    let quiet = cli.json;
    match &cli.cmd {
        Cmd::Simulate { config } => {
            let cfg = load(Some(config))?;
            Ok(simulate(&cfg, &out_dir(cli, &cfg), quiet)?)
        }
        Cmd::Experiment { which: ExperimentCmd::Ring { config } } => {
            let cfg = load(config.as_deref())?;
            Ok(ring(&cfg, &out_dir(cli, &cfg), quiet)?)
        }
        Cmd::Sweep { which: SweepCmd::Viscosity { config } } => {
            let cfg = load(Some(config))?;
            Ok(sweep(&cfg, &out_dir(cli, &cfg), quiet)?)
        }
        Cmd::Check { which: CheckCmd::Invariants { config } } => {
            let cfg = load(config.as_deref())?;
            let summary = check(&cfg, quiet)?;
            if summary["ok"] == json!(true) {
                Ok(summary)
            } else {
                Err(Failure::Checks(summary))
            }
        }
        Cmd::Convert { which: ConvertCmd::Alpha { db, y } } => {
            let a = media::db_to_internal_alpha(*db, *y)?;
            if !quiet {
                if a == 0.0 {
                    println!("0");
                } else {
                    println!("{a:e}");
                }
            }
            Ok(json!({ "ok": true, "alpha_db": db, "y": y, "alpha0": a }))
        }
        Cmd::DefaultConfig => {
            if !quiet {
                print!("{DEFAULT_CONFIG}");
            }
            Ok(serde_json::from_str(DEFAULT_CONFIG).expect("bundled config is valid JSON"))
        }
    }
}

fn load(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => parse_config(DEFAULT_CONFIG),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output))
}

fn prepare(dir: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    io::ensure_dir(dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    io::write_metadata(dir, command)
}

fn simulate(cfg: &RunConfig, dir: &Path, quiet: bool) -> Result<Value> {
    let Setup { grid, media, model, solver: sc, source, data, probes } = cfg.build()?;
    prepare(dir, cfg, "simulate")?;
    let traj = solver::run(&model, &sc, &source, &data, &probes, cfg.stride)?;
    let report = diagnostics::energy_report(&model, &sc, &source, &traj, DEFAULT_R);
    let small = diagnostics::smallness_monitor(&model, &sc, &traj, DEFAULT_R);
    io::write_energy_csv(&dir.join("energy.csv"), &report)?;
    io::write_probe_csv(&dir.join("probes.csv"), &traj.times, &traj.traces)?;
    let snaps = dir.join("snapshots");
    io::ensure_dir(&snaps)?;
    for (i, s) in traj.states.iter().enumerate() {
        io::write_snapshot(&snaps, &format!("sigma_{i:05}"), "sigma", &grid, s.t, &s.sigma_grid(&model))?;
        io::write_snapshot(&snaps, &format!("p_{i:05}"), "p", &grid, s.t, &s.p_grid(&model))?;
    }
    let validity = media::validate_media(&media, &grid, media.absorption.y)?;
    let summary = json!({
        "ok": true,
        "command": "simulate",
        "steps": sc.steps(),
        "stored_states": traj.states.len(),
        "retries": traj.retries,
        "max_picard_iterations": traj.picard_iterations.iter().max(),
        "config_hash": traj.config_hash,
        "media_hash": traj.media_hash,
        "energy_sup": report.energy_sup(),
        "identity_residual_integral": report.integrated_residual(),
        "smallness_sup": small.sup,
        "smallness_first_violation": small.first_violation,
        "media_validity": validity,
    });
    io::write_json(&dir.join("summary.json"), &summary)?;
    if !quiet {
        println!(
            "simulated {} steps; energy sup {:.6e}; smallness sup {:.4} (r = {DEFAULT_R}); output in {}",
            sc.steps(),
            report.energy_sup(),
            small.sup,
            dir.display()
        );
    }
    Ok(summary)
}

fn ring(cfg: &RunConfig, dir: &Path, quiet: bool) -> Result<Value> {
    let spec = cfg.experiment.clone().unwrap_or(kwk_core::config::ExperimentSpec {
        preset: RingPreset::Desk,
        overrides: Default::default(),
    });
    let params = spec.ring_params()?;
    let exp = experiments::build_ring_experiment(&params)?;
    prepare(dir, cfg, "experiment ring")?;
    let mut summary = json!({ "ok": true, "command": "experiment ring", "rows": experiments::row_count(&exp.plan) });
    for (name, linear) in [("linear", true), ("nonlinear", false)] {
        let m = experiments::run_experiment(&exp, linear)?;
        let mat = m.to_matrix();
        let raw: Vec<f64> = {
            let mut s: Vec<f64> = mat.clone().singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        };
        let norm = experiments::svd_spectrum(&mat)?;
        io::write_traces_csv(&dir.join(format!("traces_{name}.csv")), &m)?;
        io::write_singular_values_csv(&dir.join(format!("singular_values_{name}.csv")), &raw)?;
        let s29 = norm.get(28).copied();
        if !quiet {
            println!("{name}: {} rows, sigma29/sigma1 = {}", m.rows.len(), s29.map_or("n/a".into(), |v| format!("{v:.3e}")));
        }
        summary[name] = json!({ "sigma29_over_sigma1": s29, "normalized": norm });
    }
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn sweep(cfg: &RunConfig, dir: &Path, quiet: bool) -> Result<Value> {
    let mus = cfg
        .sweep
        .as_ref()
        .map(|s| s.mus.clone())
        .unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4, 1e-5]);
    let setup = cfg.build()?;
    prepare(dir, cfg, "sweep viscosity")?;
    let rep = experiments::viscosity_sweep(&setup.model, &setup.solver, &setup.source, &setup.data, &mus, cfg.stride)?;
    io::write_sweep_csv(&dir.join("sweep_report.csv"), &rep)?;
    let summary = json!({
        "ok": true,
        "command": "sweep viscosity",
        "distances_decrease": rep.distances_decrease(),
        "energy_variation": rep.energy_variation,
        "report": rep,
    });
    io::write_json(&dir.join("summary.json"), &summary)?;
    if !quiet {
        for r in &rep.rows {
            println!("mu = {:.1e}: distance to mu=0 {:.4e}, energy sup {:.6e}", r.mu, r.distance_to_inviscid, r.energy_sup);
        }
        println!("energy sup variation {:.3e}", rep.energy_variation);
    }
    Ok(summary)
}

fn check_entry(name: &str, pass: bool, detail: Value) -> Value {
    json!({ "name": name, "pass": pass, "detail": detail })
}

/// Mirror image of every source profile through the domain center.
fn reflected(source: &SourceTerm) -> SourceTerm {
    SourceTerm {
        components: source
            .components
            .iter()
            .map(|c| SourceComponent {
                profile: c.profile.iter().rev().copied().collect(),
                signal: c.signal.clone(),
            })
            .collect(),
    }
}

fn check(cfg: &RunConfig, quiet: bool) -> Result<Value> {
    let setup = cfg.build()?;
    let Setup { grid, media, model, solver: sc, source, data, probes } = &setup;
    let mut checks = Vec::new();

    if grid.len() <= 2048 {
        let k = 50.min(grid.len() - 1);
        let rep = diagnostics::check_eigen_sandwich(grid, &media.rho0, k, 1.0)?;
        checks.push(check_entry("eigen_sandwich", rep.all_pass(), json!({ "k_max": k })));
    } else {
        checks.push(check_entry("eigen_sandwich", true, json!({ "skipped": "grid too large for dense eigensolves" })));
    }

    let batch = diagnostics::projection_stability_batch(model, 20, cfg.seed)?;
    let worst: Vec<f64> = (0..3)
        .map(|i| batch.iter().map(|r| r.ratios[i] / r.bounds[i]).fold(0.0, f64::max))
        .collect();
    checks.push(check_entry(
        "projection_stability",
        batch.iter().all(RitzStability::holds),
        json!({ "inputs": batch.len(), "worst_ratio_over_bound": worst }),
    ));

    let short = |steps: usize| {
        let mut c = sc.clone();
        c.t_end = c.dt * steps.min(c.steps()) as f64;
        c
    };
    if source.is_zero() {
        checks.push(check_entry("superposition", true, json!({ "skipped": "no sources" })));
    } else {
        let mut lin = short(60);
        lin.linear_mode = true;
        let probe_cells: Vec<usize> = if probes.is_empty() { (0..grid.len()).step_by(7).collect() } else { probes.clone() };
        let defect = diagnostics::superposition_defect(model, &lin, source, &reflected(source), &probe_cells)?;
        checks.push(check_entry("superposition", defect <= 1e-8, json!({ "relative_defect": defect, "tolerance": 1e-8 })));
    }

    let levels = diagnostics::identity_refinement(model, &short(40), source, data, 3)?;
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0] / w[1]).collect();
    let trivial = levels.iter().all(|&r| r < 1e-300);
    checks.push(check_entry(
        "identity_refinement",
        trivial || ratios.iter().all(|r| (r - 2.0).abs() <= 0.3),
        json!({ "integrated_residuals": levels, "ratios": ratios }),
    ));

    let ok = checks.iter().all(|c| c["pass"] == json!(true));
    if !quiet {
        for c in &checks {
            println!("{} {}", if c["pass"] == json!(true) { "PASS" } else { "FAIL" }, c["name"].as_str().unwrap_or(""));
        }
    }
    Ok(json!({ "ok": ok, "command": "check invariants", "checks": checks }))
}
