use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lmagent::harness::{self, Config};
use lmagent::ExecMode;

#[derive(Parser)]
#[command(name = "lmagent", version, about = "Language-model policies finetuned with PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set ppo.actor_lr=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory; defaults to a fresh name under the runs root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build corpus and vocabulary and pretrain the base language model.
    Pretrain(ConfigArgs),
    /// Train one method on one task.
    Train(ConfigArgs),
    /// Evaluate a finished run.
    Eval {
        run: PathBuf,
        /// Task to evaluate on; the run's own task by default.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Take the most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sequential: bool,
    },
    /// Test finetuned and untuned agents on the unseen tasks.
    Generalize {
        /// Language-model run trained on food_preparation.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Language-model run trained on entertainment, for the Food
        /// Preparation crossover column.
        #[arg(long)]
        entertainment_checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Show per-token and per-action probabilities in one state.
    Explain {
        /// Pretraining run or language-model training run.
        run: PathBuf,
        #[arg(long)]
        task: String,
        /// Comma-separated action keys replayed from reset.
        #[arg(long, value_delimiter = ',')]
        trace: Vec<String>,
        /// Print one JSON record per action instead of a table.
        #[arg(long)]
        jsonl: bool,
    },
    /// List methods, training tasks and unseen tasks.
    ListTasks,
}

fn exec(sequential: bool) -> ExecMode {
    if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::default()
    }
}

fn run_dir(out: Option<PathBuf>, stem: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        harness::runs_root().join(format!("{stem}-{stamp}"))
    })
}

fn load(args: &ConfigArgs) -> lmagent::Result<Config> {
    Config::load(args.config.as_deref(), &args.overrides)
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pretrain(args) => {
            let cfg = load(&args)?;
            let dir = run_dir(args.out, "pretrain");
            let report = harness::run_pretrain(&cfg, &dir, cfg.ppo.exec)?;
            eprintln!("pretrained model written to {}", dir.display());
            print_json(&report)?;
        }
        Command::Train(args) => {
            let cfg = load(&args)?;
            let stem = format!("{}-{}-s{}", cfg.run.method.as_str(), cfg.run.task, cfg.ppo.seed);
            let dir = run_dir(args.out, &stem);
            let report = harness::run_train(&cfg, &dir)?;
            eprintln!("run written to {}", dir.display());
            print_json(&report)?;
        }
        Command::Eval { run, task, episodes, greedy, seed, sequential } => {
            let s = harness::run_eval(&run, task.as_deref(), episodes, greedy, seed, exec(sequential))?;
            print_json(&s)?;
        }
        Command::Generalize { checkpoint, entertainment_checkpoint, episodes, greedy, seed, json, sequential } => {
            let r = harness::run_generalize(
                &checkpoint,
                entertainment_checkpoint.as_deref(),
                episodes,
                greedy,
                seed,
                exec(sequential),
            )?;
            println!("Final success rate\n{}", r.success_table());
            println!("Discounted return (mean±std)\n{}", r.return_table());
            if let Some(p) = json {
                write_json(&p, &r)?;
            }
        }
        Command::Explain { run, task, trace, jsonl } => {
            let e = harness::run_explain(&run, &task, &trace)?;
            if jsonl {
                print!("{}", e.to_jsonl()?);
            } else {
                print!("{}", e.to_table());
            }
        }
        Command::ListTasks => print!("{}", harness::list_tasks()?),
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<lmagent::Error>().is_some_and(|e| e.is_config());
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}
