use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdnlb::harness::{
    compare_to_dir, emit_fcurve, run_one, validate_config, HarnessError, RunSummary,
    ScenarioConfig, ScenarioFile,
};

#[derive(Parser)]
#[command(
    name = "sdnlb",
    version,
    about = "SDN load-balancer simulator and scheduler comparison"
)]
struct Cli {
    /// Print the default testbed scenario as TOML and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one scheduler.
    Run(RunArgs),
    /// Run round-robin, greedy and variance on the same seeds.
    Compare(RunArgs),
    /// Check a scenario file and report every problem.
    Validate { config: PathBuf },
    /// Print the default testbed scenario as TOML.
    PrintDefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; the built-in default when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Single seed, or the first seed when combined with --seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// round-robin, greedy or variance.
    #[arg(long)]
    scheduler: Option<String>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
}

enum Failure {
    Validation(String),
    Run(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } | HarnessError::Parse(_) | HarnessError::Validation(_) => {
                Failure::Validation(e.to_string())
            }
            HarnessError::Run { .. } | HarnessError::Output { .. } => Failure::Run(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        _ if cli.print_default_config => print_default(),
        None | Some(Command::PrintDefaultConfig) => print_default(),
        Some(Command::Validate { config }) => validate_config(&config)
            .map(|c| {
                println!(
                    "{}: valid ({} seeds, scheduler {})",
                    config.display(),
                    c.seeds.len(),
                    c.scheduler()
                );
            })
            .map_err(Failure::from),
        Some(Command::Run(args)) => load(&args).and_then(|cfg| run(&cfg, &args)),
        Some(Command::Compare(args)) => load(&args).and_then(|cfg| compare(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn print_default() -> Result<(), Failure> {
    let text = ScenarioFile::testbed().to_toml();
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
            Err(Failure::Run(format!("cannot write to stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn load(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", p.display())))?;
            ScenarioFile::from_toml(&text)?
        }
        None => ScenarioFile::testbed(),
    };
    if let Some(s) = &args.scheduler {
        file.vserver.scheduler = s.clone();
    }
    if let Some(d) = args.duration {
        file.workload.duration_s = d;
    }
    match (args.seed, args.seeds) {
        (Some(s), None) => file.seeds = vec![s],
        (start, Some(n)) => {
            let start = start.unwrap_or(1);
            file.seeds = (start..start + n).collect();
        }
        (None, None) => {}
    }
    if let Some(out) = &args.out {
        file.out_dir = out.clone();
    }
    Ok(file.resolve()?)
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Run(format!("cannot write {}: {e}", path.display()))
}

fn run(cfg: &ScenarioConfig, args: &RunArgs) -> Result<(), Failure> {
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let kind = cfg.scheduler();
    let report = run_one(cfg, seed, kind)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(io_failure(out))?;

    let path = out.join("events.jsonl");
    let f = fs::File::create(&path).map_err(io_failure(&path))?;
    report
        .log
        .write_jsonl(BufWriter::new(f))
        .map_err(io_failure(&path))?;

    let path = out.join("timeseries.csv");
    let f = fs::File::create(&path).map_err(io_failure(&path))?;
    report
        .write_timeseries_csv(BufWriter::new(f))
        .map_err(io_failure(&path))?;

    let path = out.join("fcurve.csv");
    let f = fs::File::create(&path).map_err(io_failure(&path))?;
    for w in
        emit_fcurve(BufWriter::new(f), &[(kind, &report.f_series)]).map_err(io_failure(&path))?
    {
        eprintln!("warning: {w}");
    }

    let summary = RunSummary::from_report(&report);
    let path = out.join("report.json");
    let f = fs::File::create(&path).map_err(io_failure(&path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &summary)
        .map_err(io::Error::from)
        .and_then(|_| w.write_all(b"\n"))
        .map_err(io_failure(&path))?;

    println!(
        "{} seed {seed} {kind}: generated {} served {} lost {} in-flight {} | mean latency {:.3}s p99 {:.3}s | avg F {:.3} | peak/trough {:.3}",
        cfg.name,
        summary.generated,
        summary.served,
        summary.lost,
        summary.in_flight,
        summary.mean_latency_s,
        summary.p99_latency_s,
        summary.time_avg_f,
        summary.peak_trough_ratio,
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn compare(cfg: &ScenarioConfig) -> Result<(), Failure> {
    let (cmp, warnings) = compare_to_dir(cfg, &cfg.out_dir)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    println!("{} over {} seeds", cmp.scenario, cmp.seeds.len());
    println!(
        "{:<12} {:>8} {:>6} {:>10} {:>10} {:>10} {:>11}",
        "scheduler", "served", "lost", "mean_lat", "p99_lat", "avg_F", "peak/trough"
    );
    for s in &cmp.schedulers {
        println!(
            "{:<12} {:>8} {:>6} {:>10.3} {:>10.3} {:>10.3} {:>11.3}",
            s.name.name(),
            s.served,
            s.lost,
            s.mean_latency_s,
            s.p99_latency_s,
            s.time_avg_f,
            s.peak_trough_ratio
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
