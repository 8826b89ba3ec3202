use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};

use mtsbench::dataset::{load_dataset, CsvOptions, LoadOptions, SplitRatios};
use mtsbench::heterogeneity::{profile, IndistinguishabilityParams, ProfileConfig};
use mtsbench::report::{load_gap_rows, profile_table, render_gap, ReportTable, TableFormat};
use mtsbench::runner::{
    evaluate_run_dir, load_configured_dataset, read_result, run_on_dataset, sweep_history_length, write_run,
    ExperimentConfig,
};
use mtsbench::{Error, ErrorClass, Result};

/// Benchmark harness for multivariate time series forecasting.
#[derive(Parser)]
#[command(name = "mtsbench", version)]
struct Cli {
    /// Seed for every stochastic step; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where result directories and profile JSON are written.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Treat the first CSV row as a header.
    #[arg(long, global = true)]
    has_header: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spatial and temporal heterogeneity of one or more datasets.
    Profile(ProfileArgs),
    /// Train and evaluate from a config file.
    Train(TrainArgs),
    /// Re-evaluate a saved result directory from its checkpoint.
    Evaluate { result_dir: PathBuf },
    /// Tabulate results listed in a manifest (or a JSON table).
    Report {
        manifest: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Compare reported values against reproduced ones.
    Gap {
        /// CSV with columns metric, reported and optionally reproduced, label.
        reported: PathBuf,
        /// Result directory supplying reproduced values.
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long, default_value_t = 12)]
    history: usize,
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0.9)]
    e_u: f64,
    #[arg(long, default_value_t = 0.5)]
    e_l: f64,
    #[arg(long, default_value_t = 0.01)]
    r1_threshold: f64,
    #[arg(long, default_value_t = 0.2)]
    r2_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    strength_threshold: f64,
    #[arg(long, default_value_t = 3.0)]
    drift_multiplier: f64,
    /// Candidate periods in steps, comma separated (default: daily and weekly).
    #[arg(long, value_delimiter = ',')]
    periods: Vec<usize>,
    /// Drift summary window in steps (default: one day).
    #[arg(long, default_value_t = 0)]
    drift_window: usize,
    /// Sampling interval in seconds.
    #[arg(long, default_value_t = 3600)]
    frequency: u64,
    #[arg(long)]
    start_time: Option<String>,
    #[arg(long, default_value_t = 0)]
    skip_columns: usize,
    #[arg(long, default_value = "NaN")]
    sentinel: String,
    /// Truncate each dataset to this many steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    /// Sweep the history length over these values and keep the best on validation.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Profile(args) => cmd_profile(&cli, args),
        Command::Train(args) => cmd_train(&cli, args),
        Command::Evaluate { result_dir } => cmd_evaluate(result_dir),
        Command::Report { manifest, format } => {
            let table = ReportTable::load(manifest)?;
            print!("{}", table.render(format.parse()?)?);
            Ok(())
        }
        Command::Gap {
            reported,
            result,
            format,
        } => {
            let format: TableFormat = format.parse()?;
            let rows = load_gap_rows(reported, result.as_deref())?;
            print!("{}", render_gap(&rows, format)?);
            Ok(())
        }
    }
}

fn parse_time(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map_err(|_| Error::Config(format!("invalid start time {s:?}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_profile(cli: &Cli, args: &ProfileArgs) -> Result<()> {
    if args.e_l >= args.e_u {
        return Err(Error::Config(format!(
            "lower threshold {} must be below upper threshold {}",
            args.e_l, args.e_u
        )));
    }
    let mut opts = LoadOptions {
        csv: CsvOptions {
            has_header: cli.has_header,
            sentinel: args.sentinel.clone(),
            skip_columns: args.skip_columns,
        },
        frequency: args.frequency,
        ..LoadOptions::default()
    };
    if let Some(s) = &args.start_time {
        opts.start_time = parse_time(s)?;
    }
    let cfg = ProfileConfig {
        pairs: IndistinguishabilityParams {
            history: args.history,
            horizon: args.horizon,
            e_u: args.e_u,
            e_l: args.e_l,
            stride: args.stride,
        },
        candidate_periods: args.periods.clone(),
        drift_window: args.drift_window,
        split: None::<SplitRatios>,
        r1_threshold: args.r1_threshold,
        r2_threshold: args.r2_threshold,
        strength_threshold: args.strength_threshold,
        drift_multiplier: args.drift_multiplier,
        seed: cli.seed.unwrap_or(0),
    };
    let mut profiles = Vec::new();
    for path in &args.datasets {
        let mut ds = load_dataset(path, &opts)?;
        if let Some(n) = args.max_steps.filter(|&n| n < ds.n_steps()) {
            ds = ds.truncated(n);
        }
        let p = profile(&ds, &cfg)?;
        if let Some(dir) = &cli.output_dir {
            let json = serde_json::to_string_pretty(&p).map_err(|e| Error::Report(e.to_string()))?;
            write_text(&dir.join(format!("profile_{}.json", p.dataset)), &(json + "\n"))?;
        }
        profiles.push(p);
    }
    if args.json {
        let json = serde_json::to_string_pretty(&profiles).map_err(|e| Error::Report(e.to_string()))?;
        println!("{json}");
    } else {
        print!("{}", profile_table(&profiles));
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if cli.has_header {
        cfg.dataset.has_header = true;
    }
    cfg.validate()?;
    let dataset = load_configured_dataset(&cfg)?;

    if args.sweep.is_empty() {
        let run = run_on_dataset(dataset, &cfg)?;
        let dir = write_run(&run, &cfg.output_dir, &cfg.run_label())?;
        print_summary(&dir)?;
        return Ok(());
    }
    let sweep = sweep_history_length(&dataset, &cfg, &args.sweep)?;
    for (i, run) in sweep.runs.iter().enumerate() {
        let mut c = cfg.clone();
        c.model.history = run.result.history;
        let name = match &cfg.run_name {
            Some(base) => format!("{base}_p{}", run.result.history),
            None => c.run_label(),
        };
        let dir = write_run(run, &cfg.output_dir, &name)?;
        let marker = if i == sweep.best { "  <- best" } else { "" };
        println!(
            "history {:>4}  val_mae {:.6}  {}{marker}",
            run.result.history,
            run.result.val_mae,
            dir.display()
        );
    }
    let best = sweep.best_run();
    println!("{}", serde_json::to_string_pretty(&best.result.test_metrics).map_err(|e| Error::Report(e.to_string()))?);
    Ok(())
}

fn print_summary(dir: &Path) -> Result<()> {
    let result = read_result(dir)?;
    println!("{}", dir.display());
    println!(
        "{}",
        serde_json::to_string_pretty(&result.test_metrics).map_err(|e| Error::Report(e.to_string()))?
    );
    Ok(())
}

fn cmd_evaluate(dir: &Path) -> Result<()> {
    let report = evaluate_run_dir(dir)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Report(e.to_string()))?);
    let stored = read_result(dir)?.test_metrics;
    if stored != report {
        eprintln!("warning: re-evaluated metrics differ from the stored result");
    }
    Ok(())
}
