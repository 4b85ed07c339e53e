//! Command-line front end: propagation, single-case detection, Monte Carlo
//! campaigns, robustness sweeps, and confidence-curve export. All outputs
//! are data files written atomically (temp file + rename); exit code 0 on
//! success, 1 on a detection-pipeline failure, 2 on usage or configuration
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cdmi_core::dynamics::propagate;
use cdmi_core::harness::{
    build_scenario, detect, run_mc, run_one, run_sweep, runs_to_csv, sensitivity_report,
    McSummary, OneRunCase, RunMode, Scenario, ScenarioConfig, SweepParam,
};
use cdmi_core::indicator::{threshold_sweep, DetectionReport, CURVE_CSV_HEADER};
use cdmi_core::observation::ObservationFile;
use cdmi_core::StateVec;

#[derive(Parser)]
#[command(
    name = "cdmi",
    about = "Confidence-dominance maneuver detection for cislunar angles-only tracking",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario configuration (JSON). Defaults reproduce the standard
    /// single-epoch test case.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set poly_order=3. Repeatable;
    /// values are parsed as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use the three-epoch variant of the standard scenario as the base.
    #[arg(long)]
    three_epoch: bool,
    /// Runge-Kutta coefficient family (recorded in outputs).
    #[arg(long)]
    rk_set: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate a state through the rotating-frame dynamics.
    Propagate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Initial state x,y,z,vx,vy,vz (nd); defaults to the target apolune.
        #[arg(long, value_delimiter = ',', num_args = 6)]
        state: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long)]
        t1: f64,
        /// Output JSON path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one detection case.
    Detect {
        #[command(flatten)]
        config: ConfigArgs,
        /// onerun-nonmaneuver | onerun-maneuver | custom
        #[arg(long, default_value = "onerun-nonmaneuver")]
        case: String,
        /// single | integrated-dense | integrated-adaptive
        #[arg(long, default_value = "integrated-adaptive")]
        mode: String,
        /// State confidence level; required by --mode single, rejected
        /// otherwise.
        #[arg(long)]
        alpha_x: Option<f64>,
        /// Observations to test (JSON file) instead of synthesizing them;
        /// only valid with --case custom.
        #[arg(long)]
        obs_file: Option<PathBuf>,
        /// Custom initial estimated error (nd), 6 values.
        #[arg(long, value_delimiter = ',', num_args = 6)]
        init_error: Option<Vec<f64>>,
        /// Custom impulse (nd), 3 values.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        dv: Option<Vec<f64>>,
        /// Custom measurement noises (rad), 2 per epoch.
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo campaign: each run evaluates a ballistic and a
    /// maneuvering case with shared draws.
    Mc {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 300)]
        runs: u64,
        /// Impulse magnitude of the maneuvering class (m/s).
        #[arg(long, default_value_t = 1.0)]
        dv_ms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "integrated-adaptive")]
        mode: String,
        #[arg(long)]
        alpha_x: Option<f64>,
        /// Worker threads (default: all cores). Output is identical for any
        /// value.
        #[arg(long)]
        jobs: Option<usize>,
        /// Summary JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Per-run records CSV path.
        #[arg(long)]
        runs_csv: Option<PathBuf>,
        /// Per-run sensitivity (impulse vs most sensitive direction) CSV.
        #[arg(long)]
        sensitivity_csv: Option<PathBuf>,
        /// Evaluate detection accuracy at these thresholds and write a CSV.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        thresholds_csv: Option<PathBuf>,
    },
    /// Robustness sweep: one campaign per parameter value.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// dv | p0-scale-exp | r-scale-exp
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        /// Impulse magnitude (m/s) for the scale sweeps.
        #[arg(long, default_value_t = 1.0)]
        dv_ms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "integrated-adaptive")]
        mode: String,
        #[arg(long)]
        alpha_x: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the confidence curve of one case as CSV.
    Curve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "onerun-nonmaneuver")]
        case: String,
        /// integrated-dense | integrated-adaptive (which sampler produces
        /// the curve).
        #[arg(long, default_value = "integrated-dense")]
        mode: String,
        /// Identifier for the case_id column.
        #[arg(long, default_value = "case")]
        case_id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors carrying their process exit code.
enum CliError {
    Usage(String),
    Pipeline(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Pipeline(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn pipeline<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Pipeline(e.to_string())
}

fn load_config(args: &ConfigArgs) -> Result<ScenarioConfig, CliError> {
    let base = if args.three_epoch {
        ScenarioConfig::three_epoch()
    } else {
        ScenarioConfig::default()
    };
    let mut value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            // parse onto the defaults: missing keys keep their standard values
            let file_value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let mut merged = serde_json::to_value(&base).expect("config serializes");
            let obj = merged
                .as_object_mut()
                .expect("config serializes to an object");
            match file_value {
                serde_json::Value::Object(map) => {
                    for (k, v) in map {
                        if !obj.contains_key(&k) {
                            return Err(usage(format!(
                                "{}: unknown configuration key {k:?}",
                                path.display()
                            )));
                        }
                        obj.insert(k, v);
                    }
                }
                _ => return Err(usage(format!("{}: expected a JSON object", path.display()))),
            }
            merged
        }
        None => serde_json::to_value(&base).expect("config serializes"),
    };

    for pair in &args.overrides {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("override {pair:?} is not KEY=VALUE")))?;
        let obj = value.as_object_mut().expect("object");
        if !obj.contains_key(key) {
            return Err(usage(format!("unknown configuration key {key:?}")));
        }
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .map_err(|e| usage(format!("override {key}: value {raw:?} is not JSON: {e}")))?;
        obj.insert(key.to_string(), parsed);
    }

    let mut config: ScenarioConfig =
        serde_json::from_value(value).map_err(|e| usage(format!("configuration: {e}")))?;
    if let Some(rk) = &args.rk_set {
        config.rk_set = rk.clone();
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn parse_mode(mode: &str, alpha_x: Option<f64>) -> Result<RunMode, CliError> {
    match mode {
        "single" => {
            let a = alpha_x.ok_or_else(|| usage("--mode single requires --alpha-x"))?;
            if !(0.0..=1.0).contains(&a) {
                return Err(usage(format!("--alpha-x {a} outside [0, 1]")));
            }
            Ok(RunMode::Single(a))
        }
        "integrated-dense" | "integrated-adaptive" => {
            if alpha_x.is_some() {
                return Err(usage("--alpha-x is only valid with --mode single"));
            }
            Ok(if mode == "integrated-dense" {
                RunMode::IntegratedDense
            } else {
                RunMode::IntegratedAdaptive
            })
        }
        other => Err(usage(format!(
            "unknown mode {other:?} (single | integrated-dense | integrated-adaptive)"
        ))),
    }
}

fn parse_case(
    name: &str,
    init_error: &Option<Vec<f64>>,
    dv: &Option<Vec<f64>>,
    noise: &Option<Vec<f64>>,
) -> Result<Option<OneRunCase>, CliError> {
    match name {
        "custom" => {
            if init_error.is_none() && dv.is_none() && noise.is_none() {
                return Ok(None); // caller must supply --obs-file
            }
            let init_error: [f64; 6] = init_error
                .clone()
                .unwrap_or_else(|| vec![0.0; 6])
                .try_into()
                .map_err(|_| usage("--init-error needs 6 values"))?;
            let dv: [f64; 3] = dv
                .clone()
                .unwrap_or_else(|| vec![0.0; 3])
                .try_into()
                .map_err(|_| usage("--dv needs 3 values"))?;
            let noise = noise.clone().unwrap_or_default();
            if noise.len() % 2 != 0 {
                return Err(usage("--noise needs 2 values per epoch"));
            }
            let noises = noise.chunks(2).map(|c| [c[0], c[1]]).collect();
            Ok(Some(OneRunCase::Custom {
                init_error,
                dv,
                noises,
            }))
        }
        other => OneRunCase::parse(other).map(Some).ok_or_else(|| {
            usage(format!(
                "unknown case {other:?} (onerun-nonmaneuver | onerun-maneuver | custom)"
            ))
        }),
    }
}

/// Write atomically: temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)
        .map_err(|e| pipeline(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| pipeline(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(pipeline)?;
    match out {
        Some(path) => write_atomic(path, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PropagateOutput {
    config: ScenarioConfig,
    t0: f64,
    t1: f64,
    initial_state_nd: [f64; 6],
    final_state_nd: [f64; 6],
}

#[derive(Serialize)]
struct DetectOutput {
    config: ScenarioConfig,
    case: String,
    report: DetectionReport,
}

#[derive(Serialize)]
struct SweepOutput {
    param: SweepParam,
    points: Vec<cdmi_core::harness::SweepPoint>,
}

fn build(config: &ScenarioConfig) -> Result<Scenario, CliError> {
    build_scenario(config).map_err(pipeline)
}

fn print_timings(summary: &McSummary) {
    eprintln!(
        "campaign: {} runs x 2 classes, {} failed; accuracy non-maneuver {:.4}, maneuver {:.4}, overall {:.4}",
        summary.runs,
        summary.failed_runs,
        summary.accuracy_non_maneuver,
        summary.accuracy_maneuver,
        summary.accuracy_overall
    );
    eprintln!(
        "timing: expansion {:.2}s, mean {:.3}s / median {:.3}s per class-run, total {:.2}s",
        summary.timing.expansion_s,
        summary.timing.mean_run_s,
        summary.timing.median_run_s,
        summary.timing.total_s
    );
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Propagate {
            config,
            state,
            t0,
            t1,
            out,
        } => {
            let cfg = load_config(&config)?;
            let s0: [f64; 6] = match state {
                Some(v) => v.try_into().map_err(|_| usage("--state needs 6 values"))?,
                None => cfg.target_apolune_nd,
            };
            let s1 = propagate(
                &StateVec::from_row_slice(&s0),
                t0,
                t1,
                &cfg.params(),
                cfg.tolerances(),
            )
            .map_err(pipeline)?;
            emit(
                &out,
                &PropagateOutput {
                    config: cfg,
                    t0,
                    t1,
                    initial_state_nd: s0,
                    final_state_nd: [s1[0], s1[1], s1[2], s1[3], s1[4], s1[5]],
                },
            )
        }
        Command::Detect {
            config,
            case,
            mode,
            alpha_x,
            obs_file,
            init_error,
            dv,
            noise,
            out,
        } => {
            let cfg = load_config(&config)?;
            let run_mode = parse_mode(&mode, alpha_x)?;
            let parsed_case = parse_case(&case, &init_error, &dv, &noise)?;
            let scenario = build(&cfg)?;
            let report = match (&parsed_case, &obs_file) {
                (Some(c), None) => run_one(&scenario, c, run_mode).map_err(pipeline)?,
                (None, Some(path)) | (Some(OneRunCase::Custom { .. }), Some(path)) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                    let file: ObservationFile = serde_json::from_str(&text)
                        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    let obs = file.into_set().map_err(usage)?;
                    if obs.len() != scenario.epochs.len() {
                        return Err(usage(format!(
                            "{} observations supplied for a {}-epoch scenario",
                            obs.len(),
                            scenario.epochs.len()
                        )));
                    }
                    detect(&scenario, &obs, run_mode).map_err(pipeline)?
                }
                (None, None) => {
                    return Err(usage(
                        "--case custom requires --obs-file or --init-error/--dv/--noise",
                    ));
                }
                (Some(_), Some(_)) => {
                    return Err(usage("--obs-file conflicts with a named synthetic case"));
                }
            };
            emit(
                &out,
                &DetectOutput {
                    config: cfg,
                    case,
                    report,
                },
            )
        }
        Command::Mc {
            config,
            runs,
            dv_ms,
            seed,
            mode,
            alpha_x,
            jobs,
            out,
            runs_csv,
            sensitivity_csv,
            thresholds,
            thresholds_csv,
        } => {
            let cfg = load_config(&config)?;
            let run_mode = parse_mode(&mode, alpha_x)?;
            let scenario = build(&cfg)?;
            let summary = run_mc(&scenario, runs, dv_ms, seed, run_mode, jobs).map_err(pipeline)?;
            print_timings(&summary);
            let json = serde_json::to_string_pretty(&summary).map_err(pipeline)?;
            write_atomic(&out, &json)?;
            if let Some(path) = runs_csv {
                write_atomic(&path, &runs_to_csv(&summary))?;
            }
            if let Some(path) = sensitivity_csv {
                let rows = sensitivity_report(&summary, &scenario).map_err(pipeline)?;
                let mut text = String::from("run_id,separation_angle_rad,detected\n");
                for r in rows {
                    text.push_str(&format!(
                        "{},{:.16e},{}\n",
                        r.run_id, r.separation_angle_rad, r.detected
                    ));
                }
                write_atomic(&path, &text)?;
            }
            if let Some(ts) = thresholds {
                let records: Vec<(bool, f64)> = summary
                    .records
                    .iter()
                    .filter(|r| r.failure.is_none())
                    .map(|r| (r.class == cdmi_core::harness::CaseClass::Maneuver, r.p))
                    .collect();
                let table = threshold_sweep(&records, &ts);
                let path =
                    thresholds_csv.unwrap_or_else(|| out.with_file_name("thresholds.csv"));
                let mut text = String::from(
                    "threshold,accuracy_non_maneuver,accuracy_maneuver,accuracy_overall\n",
                );
                for row in table {
                    text.push_str(&format!(
                        "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                        row.threshold,
                        row.accuracy_non_maneuver,
                        row.accuracy_maneuver,
                        row.accuracy_overall
                    ));
                }
                write_atomic(&path, &text)?;
            }
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            runs,
            dv_ms,
            seed,
            mode,
            alpha_x,
            jobs,
            out,
        } => {
            let cfg = load_config(&config)?;
            let run_mode = parse_mode(&mode, alpha_x)?;
            let sweep_param = SweepParam::parse(&param)
                .ok_or_else(|| usage(format!("unknown sweep parameter {param:?}")))?;
            let points = run_sweep(
                &cfg,
                sweep_param,
                &values,
                runs,
                dv_ms,
                seed,
                run_mode,
                jobs,
            )
            .map_err(pipeline)?;
            for p in &points {
                eprintln!(
                    "value {:+.3}: non-maneuver {:.4}, maneuver {:.4}, overall {:.4}",
                    p.value,
                    p.summary.accuracy_non_maneuver,
                    p.summary.accuracy_maneuver,
                    p.summary.accuracy_overall
                );
            }
            let json = serde_json::to_string_pretty(&SweepOutput {
                param: sweep_param,
                points,
            })
            .map_err(pipeline)?;
            write_atomic(&out, &json)
        }
        Command::Curve {
            config,
            case,
            mode,
            case_id,
            out,
        } => {
            let cfg = load_config(&config)?;
            let run_mode = parse_mode(&mode, None)?;
            let parsed_case = parse_case(&case, &None, &None, &None)?
                .ok_or_else(|| usage("curve export needs a named case"))?;
            let scenario = build(&cfg)?;
            let report = run_one(&scenario, &parsed_case, run_mode).map_err(pipeline)?;
            let mut text = String::from(CURVE_CSV_HEADER);
            text.push('\n');
            text.push_str(&report.curve.to_csv_rows(&case_id));
            write_atomic(&out, &text)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
