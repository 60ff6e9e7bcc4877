use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use idlewave::analysis::{analyze, trace_threshold, Direction, Estimator, FrontQuery};
use idlewave::experiment::{
    load_timeline, run_compare, run_simulate, run_sweep, ExperimentConfig, SweepConfig, Verdict,
};
use idlewave::{predict_speed, Phase, Timeline};

#[derive(Parser)]
#[command(
    name = "idlewave",
    version,
    about = "Idle-wave simulator and analytic model"
)]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress tables on stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write timeline.csv, timeline.json and meta.json.
    Simulate { config: PathBuf },
    /// Print the analytic prediction as JSON.
    Predict { config: PathBuf },
    /// Extract wave metrics from a CSV or JSON trace.
    Analyze {
        trace: PathBuf,
        /// Injection rank; defaults to the rank carrying the first delay.
        #[arg(long)]
        origin: Option<usize>,
        /// Wave-edge threshold in seconds.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum, default_value_t = DirectionArg::Auto)]
        direction: DirectionArg,
        /// Front ranks dropped before fitting the speed.
        #[arg(long, default_value_t = 0)]
        discard: usize,
        #[arg(long, value_enum, default_value_t = EstimatorArg::LeastSquares)]
        estimator: EstimatorArg,
    },
    /// Simulate, measure and compare against the prediction.
    Compare { config: PathBuf },
    /// Run every cell of a parameter sweep.
    Sweep { sweep: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Auto,
    Up,
    Down,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    LeastSquares,
    TheilSen,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn first_delay_rank(t: &Timeline) -> Option<usize> {
    (0..t.num_ranks())
        .filter_map(|r| {
            t.rank(r)
                .iter()
                .find(|i| i.phase == Phase::InjectedDelay)
                .map(|i| (i.start_s, r))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r)| r)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(config, cli.seed)?;
            let dir = out_dir(cli, Some(&cfg));
            let meta = run_simulate(&cfg, &dir)?;
            if !cli.quiet {
                println!("ranks       {}", meta.num_ranks);
                println!("iterations  {}", meta.iterations);
                println!("runtime     {:.6} s", meta.end_time_s);
                if let Some(n) = &meta.noise {
                    println!("noise       {} {:.3}%", n.family, 100.0 * n.realized_power);
                }
                println!("config      {}", meta.config_hash);
                println!("wrote       {}", dir.display());
            }
            Ok(true)
        }
        Command::Predict { config } => {
            let cfg = load_config(config, cli.seed)?;
            let (sim, _) = cfg.to_sim_config()?;
            println!("{}", serde_json::to_string_pretty(&predict_speed(&sim)?)?);
            Ok(true)
        }
        Command::Analyze {
            trace,
            origin,
            threshold,
            direction,
            discard,
            estimator,
        } => {
            let timeline = load_timeline(trace)?;
            let origin = origin.or_else(|| first_delay_rank(&timeline)).unwrap_or(0);
            let mut q = FrontQuery::new(
                origin,
                threshold.unwrap_or_else(|| trace_threshold(&timeline, origin)),
            );
            q.direction = match direction {
                DirectionArg::Auto => Direction::Auto,
                DirectionArg::Up => Direction::Up,
                DirectionArg::Down => Direction::Down,
            };
            let est = match estimator {
                EstimatorArg::LeastSquares => Estimator::LeastSquares,
                EstimatorArg::TheilSen => Estimator::TheilSen,
            };
            let metrics = analyze(&timeline, &q, *discard, est)?;
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| trace.parent().unwrap_or(Path::new(".")).to_path_buf());
            std::fs::create_dir_all(&dir)?;
            write_json(&dir.join("metrics.json"), &metrics)?;
            let csv_path = dir.join("metrics.csv");
            metrics.write_csv(std::fs::File::create(&csv_path)?)?;
            if !cli.quiet {
                println!("origin      {origin}");
                println!("threshold   {:.3e} s", metrics.threshold_s);
                println!("front       {} ranks", metrics.front.len());
                println!(
                    "speed       {:.4} ranks/s (r2 {:.4})",
                    metrics.speed_ranks_per_s, metrics.r_squared
                );
                println!("decay       {:.3e} s/rank", metrics.decay_rate_s_per_rank);
                println!("survival    {:.4} s", metrics.survival_time_s);
            }
            Ok(true)
        }
        Command::Compare { config } => {
            let cfg = load_config(config, cli.seed)?;
            let report = run_compare(&cfg)?;
            let dir = out_dir(cli, Some(&cfg));
            std::fs::create_dir_all(&dir)?;
            write_json(&dir.join("report.json"), &report)?;
            if !cli.quiet {
                print!("{}", report.table());
            }
            Ok(report.verdict == Verdict::Pass)
        }
        Command::Sweep { sweep } => {
            let (mut sc, mut base) = SweepConfig::load(sweep)?;
            if let Some(s) = cli.seed {
                base["seed"] = s.into();
                sc.base = base.clone();
            }
            let dir = out_dir(cli, None);
            let reports = run_sweep(&sc, &base, &dir)?;
            if !cli.quiet {
                for r in &reports {
                    let status = match (&r.report, &r.error) {
                        (Some(rep), _) => format!("{:?}", rep.verdict).to_uppercase(),
                        (None, Some(e)) => format!("ERROR {e}"),
                        _ => "?".into(),
                    };
                    let cell: Vec<String> = r
                        .assignments
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect();
                    println!("{}  {}  {status}", r.cell, cell.join(" "));
                }
                println!("wrote {}", dir.join("aggregate.csv").display());
            }
            Ok(reports.iter().all(|r| r.verdict() == Some(Verdict::Pass)))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
