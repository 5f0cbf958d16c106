use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oadfl::config::{env_overrides, Config, Override};
use oadfl::error::{CliError, Result};
use oadfl::experiment::{self, RunOptions};
use oadfl::formats;
use oadfl_core::convergence::ErrorStats;

/// Decentralized learning over simulated MIMO over-the-air gossip.
#[derive(Debug, Parser)]
#[command(name = "oadfl", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    optimize_every: Option<usize>,
    /// Extra `section.key=value` overrides, applied last.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One training run; exits 2 if any round fell back to an old design.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        scheme: Option<String>,
        /// Pre-generate all channels into this file and replay them.
        #[arg(long, conflicts_with = "replay_channels")]
        dump_channels: Option<PathBuf>,
        #[arg(long)]
        replay_channels: Option<PathBuf>,
        /// Record every transmitted frame.
        #[arg(long)]
        dump_frames: Option<PathBuf>,
    },
    /// One run per axis value, seed and scheme; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Comma-separated scheme ids, replacing `sweep.schemes`.
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<String>,
    },
    /// Schemes side by side on shared seeds and channels.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Comma-separated scheme ids, replacing `compare.schemes`.
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<String>,
    },
    /// Writes the configured topology as an edge list.
    GenTopology {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Prints the convergence-bound right-hand side.
    EvalBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        delta: f64,
        /// Initial loss; defaults to the configured task's.
        #[arg(long)]
        f0: Option<f64>,
        /// Expected ‖E‖²_F per round.
        #[arg(long, default_value_t = 0.0)]
        fro: f64,
        /// Expected ‖E𝟙‖² per round.
        #[arg(long, default_value_t = 0.0)]
        ones: f64,
    },
    /// Monte Carlo check of the closed-form error expectations.
    Selftest {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 200_000)]
        draws: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Tolerance in Monte Carlo standard errors.
        #[arg(long, default_value_t = 3.0)]
        k: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common, extra: Vec<Override>) -> Result<Config> {
    let env = env_overrides(std::env::vars())?;
    let mut flags = Vec::new();
    if let Some(s) = common.seed {
        flags.push(Override::new("run", "seed", s as i64));
    }
    if let Some(k) = common.optimize_every {
        flags.push(Override::new("run", "optimize_every", k as i64));
    }
    flags.extend(extra);
    for s in &common.set {
        flags.push(Override::parse_assignment(s)?);
    }
    Config::load(common.config.as_deref(), &env, &flags)
}

fn scheme_list(section: &str, ids: &[String]) -> Vec<Override> {
    if ids.is_empty() {
        return Vec::new();
    }
    let list = toml::Value::Array(ids.iter().cloned().map(toml::Value::String).collect());
    vec![Override::new(section, "schemes", list)]
}

fn flagged(rounds: Vec<usize>) -> Result<()> {
    if rounds.is_empty() {
        Ok(())
    } else {
        Err(CliError::Flagged(rounds))
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            common,
            out_dir,
            scheme,
            dump_channels,
            replay_channels,
            dump_frames,
        } => {
            let extra = scheme.map(|s| Override::new("scheme", "id", s)).into_iter().collect();
            let cfg = load(&common, extra)?;
            let opts = RunOptions {
                dump_channels,
                replay_channels,
                dump_frames,
            };
            let run = experiment::run_one(&cfg, &cfg.scheme.id, &out_dir, &opts)?;
            if let Some(s) = run.summary() {
                println!(
                    "{}: final avg loss {:.6e}, min loss {:.6e}, agreement {:.3e}, mean nmse {:.2} dB",
                    run.manifest.scheme, s.final_avg_loss, s.final_min_loss, s.final_agreement, s.mean_nmse_db
                );
            }
            println!("wrote {}", run.metrics_path().display());
            flagged(run.manifest.flagged_rounds)
        }
        Command::Sweep { common, out_dir, scheme } => {
            let cfg = load(&common, scheme_list("sweep", &scheme))?;
            let report = experiment::sweep(&cfg, &cfg.sweep_schemes()?, &out_dir)?;
            println!(
                "{} cells over {} = {:?}; wrote {}",
                report.cells.len(),
                report.axis.name(),
                cfg.sweep.values,
                out_dir.join("sweep.csv").display()
            );
            flagged(report.flagged())
        }
        Command::Compare { common, out_dir, scheme } => {
            let cfg = load(&common, scheme_list("compare", &scheme))?;
            let report = experiment::compare(&cfg, &cfg.compare_schemes()?, &out_dir)?;
            for (k, label) in report.labels.iter().enumerate() {
                let losses: Vec<f64> = report
                    .runs
                    .iter()
                    .filter_map(|cell| cell[k].summary().map(|s| s.final_avg_loss))
                    .collect();
                let (mean, se) = oadfl::records::mean_stderr(&losses);
                println!("{label:>14}: final avg loss {mean:.6e} ± {se:.2e} over {} seeds", losses.len());
            }
            println!("wrote {}", out_dir.join("compare.csv").display());
            flagged(report.flagged())
        }
        Command::GenTopology { common, output } => {
            let cfg = load(&common, Vec::new())?;
            let g = experiment::gen_topology(&cfg)?;
            formats::write_edge_list(&output, &g)?;
            println!(
                "{} devices, {} edges, sparsity {:.3}; wrote {}",
                g.num_devices(),
                g.num_edges(),
                g.sparsity(),
                output.display()
            );
            Ok(())
        }
        Command::EvalBound {
            common,
            delta,
            f0,
            fro,
            ones,
        } => {
            let cfg = load(&common, Vec::new())?;
            let errors = ErrorStats {
                fro_expect: fro,
                ones_expect: ones,
            };
            println!("{}", experiment::eval_bound(&cfg, delta, f0, errors)?);
            Ok(())
        }
        Command::Selftest {
            instances,
            draws,
            dim,
            k,
            seed,
        } => {
            let cases = experiment::selftest(instances, dim, draws, k, seed)?;
            let mut failed = 0;
            for (n, c) in cases.iter().enumerate() {
                let mc = &c.monte_carlo;
                println!(
                    "{} instance {n:2} (M={}, N={}, {:>2} dB): fro {:.5e} vs {:.5e} ± {:.1e}, ones {:.5e} vs {:.5e} ± {:.1e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.devices,
                    c.antennas,
                    c.snr_db,
                    c.closed.fro_expect,
                    mc.fro_mean,
                    mc.fro_stderr,
                    c.closed.ones_expect,
                    mc.ones_mean,
                    mc.ones_stderr
                );
                failed += usize::from(!c.pass);
            }
            if failed > 0 {
                return Err(CliError::Usage(format!("{failed} of {} instances disagree", cases.len())));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Flagged(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
