//! `thzloc`: batch experiments for position/orientation error bounds.
//!
//! Exit codes: 0 success, 1 failed validation check, 2 configuration or usage
//! error, 3 single pose not localizable, 4 I/O or evaluation failure.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use thzloc_core::coverage::{coverage_ccdf, orientation_field, position_field};
use thzloc_core::scenario::PRESET_NAMES;
use thzloc_core::validation::{validate_scenario, Fault};
use thzloc_core::{
    evaluate_pose, BoundResult, ConfigError, CrbError, EulerAngles, GridAxis, Metric, Pose, Scenario, ScenarioConfig,
};

use output::{Output, RunReport};

#[derive(Debug, Parser)]
#[command(
    name = "thzloc",
    version,
    about = "Position and orientation error bounds for multi-subarray THz terminals"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: planar-2bs … cuboidal-4bs.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// PEB/OEB of a single UE pose, as JSON.
    Bounds {
        /// UE position "x,y,z" in meters (default: `ue.position_m`).
        #[arg(long, value_name = "X,Y,Z", allow_hyphen_values = true)]
        position: Option<Triple>,
        /// UE orientation "alpha,beta,gamma" in degrees (default: `ue.orientation_deg`).
        #[arg(long, value_name = "A,B,G", allow_hyphen_values = true)]
        orientation: Option<Triple>,
    },
    /// Bounds over a horizontal position grid, as CSV.
    Map {
        /// Grid "min,max,step" in meters, used for both x and y.
        #[arg(long, default_value = "-10,10,1", allow_hyphen_values = true)]
        grid: GridAxis,
        /// UE orientation "alpha,beta,gamma" in degrees.
        #[arg(long, default_value = "0,-90,45", allow_hyphen_values = true)]
        orientation: Triple,
        /// UE height in meters.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        z: f64,
    },
    /// Bounds over a (beta, gamma) orientation grid, as CSV.
    OrientSweep {
        /// UE position "x,y,z" in meters.
        #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
        position: Triple,
        /// Grid step in degrees over [0, 360] for both angles.
        #[arg(long, default_value_t = 5.0, conflicts_with = "grid")]
        step: f64,
        /// Explicit grid "min,max,step" in degrees, used for both angles.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<GridAxis>,
        /// Fixed alpha in degrees.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
    },
    /// Empirical CCDF of PEB or OEB over random poses, as CSV.
    Coverage {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value = "peb")]
        metric: Metric,
    },
    /// Finite-difference and manifold self-checks on the scenario.
    Validate {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Deliberately corrupt the inputs to confirm the checks can fail.
        #[arg(long, hide = true, value_name = "KIND")]
        inject_fault: Option<FaultKind>,
    },
    /// Print a built-in scenario as a TOML file.
    Preset {
        /// Preset name; lists the available names when omitted.
        name: Option<String>,
    },
}

#[derive(Debug, Clone, Copy)]
struct Triple([f64; 3]);

impl FromStr for Triple {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [a, b, c] if parts.iter().all(|v| v.is_finite()) => Ok(Triple([*a, *b, *c])),
            [_, _, _] => Err("values must be finite".into()),
            _ => Err(format!("expected three comma-separated numbers, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum FaultKind {
    Rotation,
}

impl FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rotation" => Ok(FaultKind::Rotation),
            other => Err(format!("unknown fault `{other}` (expected rotation)")),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Evaluation(CrbError),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) | Failure::Evaluation(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
            Failure::Evaluation(e) => write!(f, "evaluation failed: {e}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<CrbError> for Failure {
    fn from(e: CrbError) -> Self {
        Failure::Evaluation(e)
    }
}

fn load_config(global: &Global) -> Result<ScenarioConfig, Failure> {
    let mut config = match (&global.config, &global.preset) {
        (Some(path), _) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            thzloc_core::parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => thzloc_core::preset(name)?,
        (None, None) => {
            return Err(Failure::Config(
                "no scenario given; pass --config PATH or --preset NAME".into(),
            ))
        }
    };
    if let Some(seed) = global.seed {
        config.sim.seed = seed;
    }
    Ok(config)
}

/// Everything a command needs about the scenario it runs on.
struct Loaded {
    config: ScenarioConfig,
    scenario: Scenario,
    hash: String,
}

fn load(global: &Global) -> Result<Loaded, Failure> {
    let config = load_config(global)?;
    let scenario = config.build()?;
    let hash = config.hash();
    Ok(Loaded { config, scenario, hash })
}

#[derive(Serialize)]
struct BoundsReport<'a> {
    version: &'static str,
    seed: u64,
    scenario_hash: &'a str,
    position_m: [f64; 3],
    orientation_deg: [f64; 3],
    #[serde(flatten)]
    result: &'a BoundResult,
}

fn run(cli: &Cli, report: &mut RunReport) -> Result<u8, Failure> {
    let global = &cli.global;
    let mut out = Output::open(global.out.as_deref())?;
    match &cli.command {
        Command::Preset { name } => {
            match name {
                Some(name) => out.write_str(&thzloc_core::preset(name)?.to_toml())?,
                None => out.write_str(&(PRESET_NAMES.join("\n") + "\n"))?,
            }
            out.finish(report)?;
            Ok(0)
        }
        Command::Bounds { position, orientation } => {
            let loaded = load(global)?;
            report.scenario(&loaded.hash, loaded.scenario.seed);
            let ue_cfg = &loaded.config.ue;
            let position = position
                .map(|t| t.0)
                .or(ue_cfg.position_m)
                .ok_or_else(|| Failure::Config("no UE position; pass --position or set ue.position_m".into()))?;
            let orientation = orientation.map(|t| t.0).or(ue_cfg.orientation_deg).ok_or_else(|| {
                Failure::Config("no UE orientation; pass --orientation or set ue.orientation_deg".into())
            })?;
            let ue = Pose::from_euler(position, EulerAngles::from(orientation));
            let seed = thzloc_core::coverage::cell_seed(loaded.scenario.seed, 0);
            let result = evaluate_pose(&loaded.scenario, &ue, seed)?;
            let body = BoundsReport {
                version: env!("CARGO_PKG_VERSION"),
                seed: loaded.scenario.seed,
                scenario_hash: &loaded.hash,
                position_m: position,
                orientation_deg: orientation,
                result: &result,
            };
            let json = serde_json::to_string_pretty(&body).expect("bound report serializes");
            out.write_str(&(json + "\n"))?;
            out.finish(report)?;
            Ok(if result.is_localizable() { 0 } else { 3 })
        }
        Command::Map { grid, orientation, z } => {
            let loaded = load(global)?;
            report.scenario(&loaded.hash, loaded.scenario.seed);
            let angles = EulerAngles::from(orientation.0);
            let field = position_field(&loaded.scenario, angles, *z, grid, grid, loaded.scenario.seed)?;
            let mut csv = output::csv_preamble("map", loaded.scenario.seed, &loaded.hash);
            csv.push_str("x_m,y_m,peb_m,oeb_deg,classification,D\n");
            for (y, x, r) in field.iter() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    output::num(x),
                    output::num(y),
                    output::opt(r.peb_m),
                    output::opt(r.oeb_deg),
                    r.classification,
                    r.num_paths
                ));
            }
            out.write_str(&csv)?;
            out.finish(report)?;
            Ok(0)
        }
        Command::OrientSweep {
            position,
            step,
            grid,
            alpha,
        } => {
            let loaded = load(global)?;
            report.scenario(&loaded.hash, loaded.scenario.seed);
            let axis = match grid {
                Some(g) => *g,
                None => GridAxis::new(0.0, 360.0, *step).map_err(Failure::Config)?,
            };
            let field = orientation_field(&loaded.scenario, position.0, &axis, &axis, *alpha, loaded.scenario.seed)?;
            let mut csv = output::csv_preamble("orient-sweep", loaded.scenario.seed, &loaded.hash);
            csv.push_str("beta_deg,gamma_deg,peb_m,oeb_deg,classification\n");
            for (beta, gamma, r) in field.iter() {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    output::num(beta),
                    output::num(gamma),
                    output::opt(r.peb_m),
                    output::opt(r.oeb_deg),
                    r.classification
                ));
            }
            out.write_str(&csv)?;
            out.finish(report)?;
            Ok(0)
        }
        Command::Coverage { trials, metric } => {
            if *trials == 0 {
                return Err(Failure::Config("--trials must be at least 1".into()));
            }
            let loaded = load(global)?;
            report.scenario(&loaded.hash, loaded.scenario.seed);
            let s = &loaded.scenario;
            let curve = coverage_ccdf(
                s,
                &s.distribution,
                *trials,
                *metric,
                &metric.default_thresholds(),
                s.seed,
            )?;
            let mut csv = output::csv_preamble("coverage", s.seed, &loaded.hash);
            csv.push_str("threshold,exceedance\n");
            for (t, e) in curve.thresholds.iter().zip(&curve.exceedance) {
                csv.push_str(&format!("{},{}\n", output::num(*t), output::num(*e)));
            }
            csv.push_str(&format!(
                "# outage_fraction={},trials={}\n",
                output::num(curve.outage_fraction),
                curve.trials
            ));
            out.write_str(&csv)?;
            out.finish(report)?;
            Ok(0)
        }
        Command::Validate { trials, inject_fault } => {
            let loaded = load(global)?;
            report.scenario(&loaded.hash, loaded.scenario.seed);
            let fault = match inject_fault {
                Some(FaultKind::Rotation) => Fault::CorruptRotation,
                None => Fault::None,
            };
            let result = validate_scenario(&loaded.scenario, *trials, loaded.scenario.seed, fault);
            let mut text = String::new();
            for c in &result.checks {
                text.push_str(&format!(
                    "{} {}: max_residual={:e} tolerance={:e} samples={}{}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_residual,
                    c.tolerance,
                    c.samples,
                    if c.detail.is_empty() {
                        String::new()
                    } else {
                        format!(" ({})", c.detail)
                    }
                ));
            }
            out.write_str(&text)?;
            out.finish(report)?;
            Ok(if result.passed() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let started = Instant::now();
    let mut report = RunReport::new(std::env::args().collect());
    let code = match run(&cli, &mut report) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {failure}");
            return ExitCode::from(failure.exit_code());
        }
    };
    report.elapsed_s = started.elapsed().as_secs_f64();
    eprintln!("{}", serde_json::to_string(&report).expect("run report serializes"));
    ExitCode::from(code)
}
