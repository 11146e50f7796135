use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbrtune::agents::TransportKind;
use bbrtune::harness::{self, plot, HarnessError, MetricsReport, Policy, ScenarioSpec, TrainOptions};
use bbrtune::netsim::TraceLog;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bbrtune", version, about = "Train and evaluate PPO-tuned BBR on a simulated bottleneck")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy on a scenario's workload.
    Train {
        #[command(flatten)]
        common: Common,
        /// PPO iterations (default: the scenario's `train.iterations`).
        #[arg(long)]
        iters: Option<u64>,
    },
    /// Run a scenario once under a checkpoint or the vanilla baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Compare two metric reports (A is the baseline).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write comparison.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG charts from an eval output directory.
    Plot {
        /// Directory holding report.csv and trace.csv.
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scenario file utilities.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Parse and check a scenario file.
    Validate { path: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    transport: Option<Transport>,
    #[arg(long)]
    agents: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Mem,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Vanilla,
}

impl Common {
    fn load(&self) -> Result<ScenarioSpec, HarnessError> {
        let mut spec = ScenarioSpec::load(&self.scenario)?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(t) = self.transport {
            spec.agents.transport = match t {
                Transport::Mem => TransportKind::Mem,
                Transport::Tcp => TransportKind::Tcp,
            };
        }
        if let Some(n) = self.agents {
            spec.agents.agents = n;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Train { common, iters } => {
            let spec = common.load()?;
            let iterations = iters.unwrap_or(spec.train.iterations);
            let out = harness::train(
                &spec,
                &TrainOptions {
                    iterations,
                    out: Some(common.out.clone()),
                },
            )?;
            let last = out.stats.last().map_or(f64::NAN, |s| s[0].mean_reward);
            println!(
                "trained {iterations} iterations, final mean reward {last:.4}, wrote {}",
                common.out.display()
            );
        }
        Cmd::Eval {
            common,
            checkpoint,
            baseline,
        } => {
            let spec = common.load()?;
            let policy = match (checkpoint, baseline) {
                (Some(p), _) => Policy::load(&p)?,
                (None, Some(Baseline::Vanilla)) => Policy::Vanilla,
                (None, None) => return Err(HarnessError::Config("need --checkpoint or --baseline".into())),
            };
            let out = harness::eval(&spec, &policy, Some(&common.out))?;
            let r = &out.report;
            println!(
                "{} on {} seed {}: accuracy {:.4}, peak rtt {:.1} ms, median convergence {:.2} s",
                r.policy,
                r.scenario,
                r.seed,
                r.accuracy,
                r.peak_rtt_ms,
                r.median_convergence_s()
            );
        }
        Cmd::Compare { a, b, out } => {
            let c = harness::compare(&read_report(&a)?, &read_report(&b)?)?;
            print!("{}", c.to_text());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("comparison.csv"), c.to_csv_string())?;
            }
        }
        Cmd::Plot { dir, out } => {
            let report = read_report(&dir.join("report.csv"))?;
            let f = std::fs::File::open(dir.join("trace.csv"))?;
            let trace = TraceLog::read_csv(f)?;
            let paths = plot::emit_plots(&report, &trace, out.as_deref().unwrap_or(&dir))?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Cmd::Scenario {
            cmd: ScenarioCmd::Validate { path },
        } => {
            let spec = ScenarioSpec::load(&path)?;
            println!("{}: ok ({})", spec.name, spec.config_hash());
        }
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<MetricsReport, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    MetricsReport::read_csv(f)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
