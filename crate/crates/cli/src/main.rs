use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phononmem::analysis::{fit_gaussian_dip, fit_half_life, read_points_csv, write_fit_csv};
use phononmem::coincidence::{
    analyze_peaks, delay_histogram, g2_from_counts, tally_from_stream, write_histogram_csv, write_tally_csv,
};
use phononmem::model::{load_config_file, ExperimentConfig, ScenarioId};
use phononmem::montecarlo::{read_tag_stream, simulate, write_tag_stream, SimOptions, Sink};
use phononmem::scenario::{run_with_manifest, EngineKind, Manifest, Scenario, REFERENCE_PULSES};
use phononmem::Error;
use serde_json::json;

const WORKERS_ENV: &str = "PHONONMEM_WORKERS";

/// Diamond phonon memory simulator.
#[derive(Parser)]
#[command(name = "phononmem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario sweep and write its CSV plus a run manifest.
    Run(RunArgs),
    /// Simulate pulses and write the detector time tags.
    Simulate(SimulateArgs),
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "manifest")]
    scenario: Option<ScenarioId>,
    /// `key = value` configuration; the calibrated defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "analytic")]
    engine: EngineKind,
    /// Pulses per grid point. Required for montecarlo; analytic error bars use it as the budget.
    #[arg(long, value_parser = parse_count)]
    pulses: Option<u64>,
    #[arg(long, default_value = "1", value_parser = parse_count)]
    seed: u64,
    /// Comma-separated sweep grid overriding the scenario default.
    #[arg(long, value_delimiter = ',', value_parser = parse_float)]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Re-run exactly what a previous manifest records; other inputs are ignored.
    #[arg(long, conflicts_with_all = ["scenario", "config", "pulses", "grid"])]
    manifest: Option<PathBuf>,
    /// Where to write the manifest; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_count)]
    pulses: u64,
    #[arg(long, default_value = "1", value_parser = parse_count)]
    seed: u64,
    #[arg(long)]
    tags: PathBuf,
}

#[derive(Subcommand)]
enum Analyze {
    /// Triggered g² from a time-tag file.
    G2 {
        #[arg(long)]
        tags: PathBuf,
        #[arg(long, value_parser = parse_float)]
        window_ps: f64,
        /// Signal delay relative to the herald.
        #[arg(long, default_value = "0", value_parser = parse_float, allow_negative_numbers = true)]
        delay_ps: f64,
        /// Also write the tally as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Herald-to-signal delay histogram; CSV to `--out` or stdout.
    Histogram {
        #[arg(long)]
        tags: PathBuf,
        #[arg(long, value_parser = parse_float)]
        bin_ps: f64,
        #[arg(long, value_parser = parse_float)]
        range_ns: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gaussian dip fit to `(delay_fs, transmission)` CSV rows.
    FitDip {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exponential half-life fit to `(tau_ps, rate)` CSV rows.
    FitDecay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_float(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

/// Non-negative integer, also in scientific notation (`1e9`, `6.0E12`).
fn parse_count(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v = parse_float(s)?;
    if v < 0.0 || v.fract() != 0.0 || v >= 18_446_744_073_709_551_616.0 {
        return Err(format!("`{s}` is not a non-negative integer"));
    }
    Ok(v as u64)
}

fn workers() -> Result<usize, Error> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match parse_count(&v) {
            Ok(n) if n >= 1 => Ok(n as usize),
            _ => Err(Error::Domain {
                key: WORKERS_ENV.into(),
                message: format!("`{v}` is not a positive integer"),
            }),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), load_config_file)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(args: RunArgs) -> Result<(), Error> {
    let (cfg, scenario) = match &args.manifest {
        Some(path) => {
            let m: Manifest = serde_json::from_reader(File::open(path)?)?;
            m.inputs()?
        }
        None => {
            let cfg = config(args.config.as_deref())?;
            let id = args.scenario.expect("clap enforces --scenario");
            let pulses = match (args.engine, args.pulses) {
                (_, Some(n)) => n,
                (EngineKind::Analytic, None) => REFERENCE_PULSES,
                (EngineKind::MonteCarlo, None) => {
                    return Err(Error::Domain {
                        key: "pulses".into(),
                        message: "montecarlo needs an explicit --pulses budget".into(),
                    })
                }
            };
            let mut s = Scenario::new(id, &cfg, args.engine, pulses, args.seed);
            if let Some(grid) = args.grid {
                s.grid = grid;
            }
            (cfg, s)
        }
    };
    let opts = SimOptions::with_workers(workers()?);
    let (out, manifest) = run_with_manifest(&cfg, &scenario, &opts)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    out.write_csv(&mut w)?;
    w.flush()?;
    let manifest_path = args.manifest_out.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    let mut w = BufWriter::new(File::create(&manifest_path)?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    log::info!(
        "{} ({}) with {} rows in {:.3} s",
        manifest.scenario,
        manifest.engine,
        out.rows.len(),
        manifest.wall_time_s
    );
    Ok(())
}

fn simulate_tags(args: SimulateArgs) -> Result<(), Error> {
    let cfg = config(args.config.as_deref())?;
    let report = simulate(
        &cfg,
        args.pulses,
        args.seed,
        Sink::TimeTags,
        &SimOptions::with_workers(workers()?),
    )?;
    let tags = report.tags.unwrap_or_default();
    write_tag_stream(&tags, cfg.laser.period_fs(), &args.tags)?;
    let t = &report.tallies;
    println!(
        "{}",
        json!({
            "pulses": t.pulses,
            "tags": tags.len(),
            "singles": t.singles,
            "n_h1": t.n_h1,
            "n_h2": t.n_h2,
            "n_h12": t.n_h12,
            "wall_time_s": report.wall_time_s,
        })
    );
    Ok(())
}

fn analyze(cmd: Analyze) -> Result<(), Error> {
    match cmd {
        Analyze::G2 {
            tags,
            window_ps,
            delay_ps,
            out,
        } => {
            let (stream, _) = read_tag_stream(&tags)?;
            let t = tally_from_stream(&stream, window_ps, delay_ps)?;
            if let Some(path) = out {
                write_tally_csv(&t, BufWriter::new(File::create(path)?))?;
            }
            let (g2, sigma) = g2_from_counts(&t)?;
            let mut record = serde_json::to_value(t)?;
            record["g2"] = json!(g2);
            record["sigma"] = json!(sigma);
            println!("{record}");
        }
        Analyze::Histogram {
            tags,
            bin_ps,
            range_ns,
            out,
        } => {
            let (stream, period_fs) = read_tag_stream(&tags)?;
            let hist = delay_histogram(&stream, bin_ps, range_ns)?;
            let to_stdout = out.is_none();
            write_histogram_csv(&hist, output(out.as_deref())?)?;
            if !to_stdout {
                match analyze_peaks(&hist, period_fs as f64 / 1e6) {
                    Ok(p) => println!("{}", serde_json::to_string(&p)?),
                    Err(e) => log::warn!("peak analysis skipped: {e}"),
                }
            }
        }
        Analyze::FitDip { input, out } => {
            let fit = fit_gaussian_dip(&read_points_csv(File::open(input)?)?)?;
            write_fit_csv(["depth", "fwhm_fs", "center_fs"], &fit.fit, output(out.as_deref())?)?;
        }
        Analyze::FitDecay { input, out } => {
            let fit = fit_half_life(&read_points_csv(File::open(input)?)?)?;
            write_fit_csv(
                ["amplitude", "half_life_ps", "offset"],
                &fit.fit,
                output(out.as_deref())?,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Simulate(args) => simulate_tags(args),
        Command::Analyze(cmd) => analyze(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(if matches!(e, Error::ConfigNotFound(_)) { 2 } else { 1 })
        }
    }
}
