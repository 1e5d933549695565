//! Command-line front end: `run`, `xi` and `verify`.
//!
//! Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on
//! usage or configuration errors.

pub mod config;
pub mod svg;
pub mod verify;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::control::xi_estimate;
use crate::sim::{field_csv, run_pair_on, Preset, Setup, SimError};

pub use config::{parse, ConfigError, Experiment};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vortctl", version, about = "Feedback stabilization of 2D vorticity flows with finitely many actuators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the target and the free/controlled/observer state.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every n-th time step in the CSV files.
        #[arg(long)]
        stride: Option<usize>,
        /// Also render snapshots as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Tabulate the Poincare-like constant over the `xi.M` list.
    Xi {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Verify {
        /// Inject a fault to confirm that the checks detect it.
        #[arg(long, value_parser = ["gram"])]
        inject_fault: Option<String>,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::config(e),
            _ => Failure::runtime(e),
        }
    }
}

fn load(path: &Path) -> Result<Experiment, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::write(dir.join(name), contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn out_dir(flag: Option<PathBuf>, exp: &Experiment) -> Result<PathBuf, Failure> {
    let dir = flag.or_else(|| exp.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// `vortctl run`: writes `run.csv`, `report.txt`, `mesh.txt`, and when
/// applicable `controls.csv`, `family.csv`, `error_vs_exact.csv` and
/// per-snapshot field dumps.
pub fn cmd_run(config: &Path, out: Option<PathBuf>, stride: Option<usize>, svg_flag: bool) -> Result<String, Failure> {
    let exp = load(config)?;
    let stride = match stride {
        Some(0) => return Err(Failure::config("--stride must be at least 1")),
        Some(s) => s,
        None => exp.stride,
    };
    let dir = out_dir(out, &exp)?;
    let cfg = &exp.sim;
    let setup = Setup::for_config(cfg)?;
    let run = run_pair_on(cfg, &setup)?;

    write(&dir, "run.csv", &run.run_csv(stride))?;
    write(&dir, "mesh.txt", &setup.space.mesh().to_text())?;
    if let Some(f) = &setup.family {
        write(&dir, "family.csv", &f.layout().to_csv())?;
        write(&dir, "controls.csv", &run.controls_csv(stride))?;
    }
    if matches!(cfg.preset, Preset::Example2(_)) {
        write(&dir, "error_vs_exact.csv", &run.exact_error_csv(stride))?;
    }
    for (k, snap) in run.snapshots.iter().enumerate() {
        let fields: [(&str, &Vec<f64>); 5] = [("w", &snap.w), ("wt", &snap.wt), ("z", &snap.z), ("psi_z", &snap.psi_z), ("psi_ctrl", &snap.psi_ctrl)];
        for (name, field) in fields {
            write(&dir, &format!("snapshot_{k:03}_{name}.csv"), &field_csv(&setup.space, field))?;
            if svg_flag || exp.svg {
                let title = format!("{name} t={:.4}", snap.t);
                write(&dir, &format!("snapshot_{k:03}_{name}.svg"), &svg::render(&setup.space, field, 480.0, &title))?;
            }
        }
    }

    let mut report = String::new();
    writeln!(report, "preset {}", cfg.preset.name()).unwrap();
    if let Preset::Example2(v) = cfg.preset {
        writeln!(report, "example2_forcing {v:?}").unwrap();
    }
    writeln!(report, "mode {}", cfg.mode).unwrap();
    writeln!(report, "nodes {}", setup.space.dim()).unwrap();
    writeln!(report, "triangles {}", setup.space.mesh().num_triangles()).unwrap();
    writeln!(report, "mesh_level {}", cfg.level).unwrap();
    writeln!(report, "nu {:e}", cfg.nu).unwrap();
    writeln!(report, "dt {:e}", cfg.dt).unwrap();
    writeln!(report, "t_end {}", cfg.t_end).unwrap();
    writeln!(report, "M {}", cfg.actuators.m).unwrap();
    writeln!(report, "M_sigma {}", setup.family.as_ref().map_or(0, |f| f.count())).unwrap();
    writeln!(report, "lambda {}", cfg.lambda).unwrap();
    writeln!(report, "feedback_scheme {}", cfg.scheme).unwrap();
    match run.decay() {
        Ok(fit) => {
            writeln!(report, "decay_rate {:.6}", fit.rate).unwrap();
            writeln!(report, "fit_window {:.4} {:.4}", fit.t_start, fit.t_end).unwrap();
            writeln!(report, "fit_samples {}", fit.samples).unwrap();
            writeln!(report, "floor_reached {}", fit.floor_reached).unwrap();
            writeln!(report, "log_min_ratio {:.4}", fit.log_min_ratio).unwrap();
        }
        Err(e) => writeln!(report, "decay_rate unavailable ({e})").unwrap(),
    }
    if let Some(e) = run.max_target_error() {
        writeln!(report, "max_target_error_vs_exact {e:.6e}").unwrap();
    }
    write(&dir, "report.txt", &report)?;
    Ok(report)
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("VORTCTL_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Failure::config(format!("VORTCTL_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Failure::config("VORTCTL_THREADS must be a positive integer"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(Failure::runtime)
}

/// `vortctl xi`: the table `M,M_sigma,xi`, also written to `xi.csv`.
pub fn cmd_xi(config: &Path, out: Option<PathBuf>) -> Result<String, Failure> {
    let exp = load(config)?;
    if exp.xi_m.is_empty() {
        return Err(Failure::config("xi.M lists no values"));
    }
    let dir = out_dir(out, &exp)?;
    let cfg = &exp.sim;
    let rows: Vec<Result<(usize, usize, f64), Failure>> = thread_pool()?.install(|| {
        exp.xi_m
            .par_iter()
            .map(|&m| {
                let spec = crate::sim::ActuatorSpec { m, ..cfg.actuators };
                let setup = Setup::build(&cfg.domain, cfg.mesh_h, cfg.level, &spec)?;
                let xi = xi_estimate(setup.family.as_ref(), &setup.space).map_err(SimError::from)?;
                Ok((m, setup.family.as_ref().map_or(0, |f| f.count()), xi))
            })
            .collect()
    });
    let mut table = String::from("M,M_sigma,xi\n");
    for r in rows {
        let (m, ms, xi) = r?;
        writeln!(table, "{m},{ms},{xi:.16e}").unwrap();
    }
    write(&dir, "xi.csv", &table)?;
    Ok(table)
}

/// `vortctl verify`: one line per check; fails if any check fails.
pub fn cmd_verify(inject_fault: Option<&str>) -> Result<String, Failure> {
    let faults = verify::Faults { gram: inject_fault == Some("gram") };
    let results = verify::run_checks(faults);
    let mut report = String::new();
    for r in &results {
        writeln!(report, "{r}").unwrap();
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    writeln!(report, "{} checks, {} failed", results.len(), failed).unwrap();
    if failed > 0 {
        print!("{report}");
        Err(Failure::runtime(format!("{failed} of {} checks failed", results.len())))
    } else {
        Ok(report)
    }
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run { config, out, stride, svg } => cmd_run(&config, out, stride, svg),
        Command::Xi { config, out } => cmd_xi(&config, out),
        Command::Verify { inject_fault } => cmd_verify(inject_fault.as_deref()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message.trim_end());
            f.code
        }
    }
}
