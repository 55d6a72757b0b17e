use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edrsim::calibrate::{calibrate, CalibrationError, CalibrationRequest};
use edrsim::engine::sweep::{assign_seeds, expand_grid, sweep};
use edrsim::engine::{run, ConfigError, MetricsReport, SimConfig, SimError};
use edrsim::profile::{builtin_profile, LatencyDist, BUILTIN_PROFILES};

/// Discrete-event simulator of edge data repositories with LSH-based
/// computation reuse and bucket orchestration.
#[derive(Parser)]
#[command(name = "edrsim", version)]
struct Cli {
    /// Log orchestration plans and progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set strategy=CPU_USAGE`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Workload seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OutArgs {
    /// CSV output path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Directory for CSV output when --out is not given.
    #[arg(long, env = "EDRSIM_OUT_DIR", value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, write its metrics CSV and print a summary.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run many experiments. A single config expands to the profile's rates
    /// crossed with every strategy.
    Sweep {
        /// Config files; repeatable.
        #[arg(long, value_name = "PATH")]
        config: Vec<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Master seed for the per-run seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel runs; defaults to the number of processors.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check a config without running it.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the built-in dataset profiles.
    Profiles,
    /// Find the vector-mode noise scale that matches a profile's reusability.
    Calibrate {
        #[arg(long, default_value = "TrafficDetection")]
        profile: String,
        #[arg(long, default_value_t = 0.6)]
        threshold: f64,
        /// Reusability to aim for; defaults to the profile's measured value.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        clusters: usize,
        #[arg(long, default_value_t = 32)]
        dimension: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Where to write the config fragment.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn load(args: &ConfigArgs) -> Result<SimConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => SimConfig::from_path(p)?,
        None => SimConfig::default(),
    };
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    cfg.apply_overrides(&overrides)?;
    cfg.resolve()?;
    Ok(cfg)
}

fn out_path(out: &OutArgs, default_name: &str) -> PathBuf {
    match (&out.out, &out.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join(default_name),
        (None, None) => PathBuf::from(default_name),
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::Input(format!("cannot write `{}`: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(s: &str) {
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

fn csv_bytes(reports: &[&MetricsReport]) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        r.write_csv(&mut buf, i == 0)
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    Ok(buf)
}

fn cmd_run(cfg: ConfigArgs, out: OutArgs, verbose: bool) -> Result<(), Failure> {
    let mut config = load(&cfg)?;
    config.output.log_plans |= verbose;
    let report = run(&config)?;
    let path = out_path(&out, &format!("{}.csv", config.output.run_id));
    write_atomic(&path, &csv_bytes(&[&report])?)?;
    emit(&format!("{}{:<22}{}\n", report.summary(), "csv", path.display()));
    Ok(())
}

fn cmd_sweep(
    paths: Vec<PathBuf>,
    set: Vec<String>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: OutArgs,
    verbose: bool,
) -> Result<(), Failure> {
    let mut bases = Vec::new();
    if paths.is_empty() {
        bases.push(load(&ConfigArgs { config: None, set: set.clone(), seed })?);
    }
    for p in &paths {
        bases.push(load(&ConfigArgs {
            config: Some(p.clone()),
            set: set.clone(),
            seed,
        })?);
    }
    let mut configs = if bases.len() == 1 {
        expand_grid(&bases[0])?
    } else {
        let master = bases[0].workload.seed;
        assign_seeds(&mut bases, master);
        bases
    };
    for c in &mut configs {
        c.output.log_plans |= verbose;
    }
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = sweep(&configs, workers);

    let mut ok = Vec::new();
    let mut table = String::new();
    writeln!(table, "{:<40}{:>14}{:>10}{:>8}{:>12}", "run_id", "throughput", "hit_rate", "calls", "unprocessed").unwrap();
    let mut worst: Option<Failure> = None;
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(rep) => {
                writeln!(
                    table,
                    "{:<40}{:>14.2}{:>10.4}{:>8}{:>12}",
                    rep.run_id,
                    rep.mean_throughput(),
                    rep.hit_rate(),
                    rep.orchestration_calls,
                    rep.unprocessed_at_end
                )
                .unwrap();
                ok.push(rep);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", c.output.run_id);
                let f = Failure::from(e);
                worst = match (worst, f) {
                    (Some(Failure::Internal(m)), _) | (_, Failure::Internal(m)) => Some(Failure::Internal(m)),
                    (_, f) => Some(f),
                };
            }
        }
    }
    let path = out_path(&out, "sweep.csv");
    let refs: Vec<&MetricsReport> = ok.iter().collect();
    write_atomic(&path, &csv_bytes(&refs)?)?;
    emit(&format!("{table}{:<22}{}\n", "csv", path.display()));
    match worst {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn fmt_latency(d: &LatencyDist) -> String {
    match d {
        LatencyDist::Lognormal { median_ms, p95_ms } => format!("lognormal median {median_ms} p95 {p95_ms}"),
        LatencyDist::Deterministic { ms } => format!("deterministic {ms}"),
        LatencyDist::Empirical { samples_ms } => format!("empirical {} samples", samples_ms.len()),
    }
}

fn cmd_profiles() {
    let mut s = String::new();
    for name in BUILTIN_PROFILES {
        let p = builtin_profile(name).expect("built-in profile");
        for row in &p.rows {
            writeln!(s, "{} {} {}", p.name, row.threshold, row.reusability).unwrap();
        }
        let lsh: Vec<String> = p.rows.iter().map(|r| r.lsh_search_ms.to_string()).collect();
        writeln!(s, "{} lsh_ms {}", p.name, lsh.join(" ")).unwrap();
        let rates: Vec<String> = p.rates_reqs_per_s.iter().map(|r| r.to_string()).collect();
        writeln!(s, "{} rates {}", p.name, rates.join(" ")).unwrap();
        writeln!(s, "{} process_ms {}", p.name, fmt_latency(&p.process_time)).unwrap();
        writeln!(s, "{} reuse_fetch_ms {}", p.name, fmt_latency(&p.reuse_fetch)).unwrap();
    }
    emit(&s);
}

fn real_main(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Command::Run { cfg, out } => cmd_run(cfg, out, cli.verbose),
        Command::Sweep {
            config,
            set,
            seed,
            workers,
            out,
        } => cmd_sweep(config, set, seed, workers, out, cli.verbose),
        Command::Validate { cfg } => {
            load(&cfg)?;
            emit("ok\n");
            Ok(())
        }
        Command::Profiles => {
            cmd_profiles();
            Ok(())
        }
        Command::Calibrate {
            profile,
            threshold,
            target,
            samples,
            clusters,
            dimension,
            seed,
            out,
        } => {
            let req = CalibrationRequest {
                profile,
                threshold,
                target,
                samples,
                cluster_count: clusters,
                dimension,
                seed,
                ..CalibrationRequest::default()
            };
            let rep = calibrate(&req).map_err(|e| match e {
                CalibrationError::Invalid(m) => Failure::Input(m),
                e @ CalibrationError::NonConvergence { .. } => Failure::Internal(e.to_string()),
            })?;
            let fragment = rep.toml_fragment();
            if let Some(path) = out {
                write_atomic(&path, fragment.as_bytes())?;
            }
            emit(&fragment);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
