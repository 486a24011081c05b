use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wsnkm::harness::{self, Experiment, Overrides, SweepParams};
use wsnkm::metrics::Format;
use wsnkm::SimTime;

#[derive(Parser)]
#[command(
    name = "wsnkm",
    version,
    about = "Sensor network key management simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        until: Option<SimTime>,
        #[arg(long)]
        snr_threshold: Option<f64>,
        /// Run the invariant suite; exit 1 if any check fails.
        #[arg(long)]
        check: bool,
    },
    /// Sweep an experiment over node counts and seeds.
    Sweep {
        /// pairwise_time, individual_time, scalability, energy or detection
        experiment: String,
        #[command(flatten)]
        common: Common,
        /// Repetitions per grid point.
        #[arg(long, default_value_t = 10)]
        reps: u64,
    },
    /// Summarize a results directory and write plot data.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Erasure deadline in ticks (microseconds).
    #[arg(long)]
    tmin: Option<SimTime>,
    /// Self-check period in ticks.
    #[arg(long)]
    tp: Option<SimTime>,
    #[arg(long)]
    p_detect: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            common,
            until,
            snr_threshold,
            check,
        } => {
            let overrides = Overrides {
                seed: common.seed,
                until,
                snr_threshold,
                t_min: common.tmin,
                t_p: common.tp,
                p_detect: common.p_detect,
            };
            match harness::cmd_run(
                &scenario,
                &overrides,
                &common.out,
                common.format.into(),
                check,
            ) {
                Ok(outcome) => {
                    let r = &outcome.summary.result;
                    println!(
                        "n={} seed={} success_rate={:.3} max_msgs={} energy={:.0}",
                        r.n, r.seed, r.success_rate, r.max_msgs, r.energy_units
                    );
                    for e in &outcome.detection.entries {
                        println!(
                            "compromise node={} at={} help_latency_us={} coverage={:.3} rekey_complete={}",
                            e.victim,
                            e.compromised_at,
                            e.help_latency().map_or("none".into(), |v| v.to_string()),
                            e.coverage(),
                            e.rekey_complete
                        );
                    }
                    println!("trace: {}", outcome.trace_path.display());
                    println!("results: {}", outcome.results_path.display());
                    for f in &outcome.failures {
                        eprintln!("check failed: {f}");
                    }
                    outcome.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Sweep {
            experiment,
            common,
            reps,
        } => {
            let run = || -> Result<(), harness::HarnessError> {
                let exp: Experiment = experiment.parse()?;
                let mut params = SweepParams {
                    reps,
                    ..SweepParams::default()
                };
                if let Some(s) = common.seed {
                    params.base_seed = s;
                }
                if let Some(t) = common.tmin {
                    params.protocol.t_min = t;
                    params.protocol.hello_jitter = t / 10;
                }
                if let Some(t) = common.tp {
                    params.protocol.t_p = t;
                    params.protocol.block_duration = 10 * t;
                    params.t_p = vec![t];
                }
                if let Some(p) = common.p_detect {
                    params.protocol.p_detect = p;
                    params.p_detect = vec![p];
                }
                let (path, rows) =
                    harness::cmd_sweep(exp, &params, &common.out, common.format.into())?;
                println!("{} rows written to {}", rows.len(), path.display());
                Ok(())
            };
            match run() {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Report { dir } => match harness::cmd_report(&dir) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
