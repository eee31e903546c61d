use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use incrlearn::bench::with_threads;
use incrlearn::cli::{self, CommandOutput, RunConfig};
use incrlearn::data::SyntheticSpec;
use incrlearn::Result;

#[derive(Parser)]
#[command(name = "incrlearn", version, about = "Class-incremental learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the incremental benchmark for one or more strategies.
    Run(RunArgs),
    /// Average incremental accuracy over a list of memory budgets.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated budgets, ascending.
        #[arg(long)]
        k_values: Option<String>,
    },
    /// Validate a checkpoint and print its contents.
    Inspect {
        checkpoint: PathBuf,
    },
    /// Write a synthetic dataset as a delimited file.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        modes: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one batch of classes on top of a checkpoint.
    Learn {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated labels of the new classes.
        #[arg(long)]
        classes: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Strategy name, or several separated by commas.
    #[arg(long)]
    strategy: Option<String>,
    /// `toy-ibench`, `synthetic`, or a delimited file path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    memory_k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    plot: bool,
    /// Also write per-step wall times to timing.csv.
    #[arg(long)]
    timing: bool,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let flags: [(&str, Option<String>); 8] = [
            ("strategy", self.strategy.clone()),
            ("dataset", self.dataset.clone()),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("repeats", self.repeats.map(|v| v.to_string())),
            ("memory_k", self.memory_k.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.set {
            let text = kv.replace(';', "\n");
            cfg.apply_text(&text)?;
        }
        cfg.plot |= self.plot;
        cfg.timing |= self.timing;
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<CommandOutput> {
    match command {
        Command::Run(args) => cli::cmd_run(&args.resolve()?),
        Command::Sweep { run, k_values } => {
            let mut cfg = run.resolve()?;
            if let Some(k) = k_values {
                cfg.set("k_values", &k)?;
            }
            cli::cmd_sweep(&cfg)
        }
        Command::Inspect { checkpoint } => cli::cmd_inspect(checkpoint),
        Command::GenData {
            out,
            classes,
            dim,
            modes,
            separation,
            noise,
            train,
            test,
            seed,
        } => cli::cmd_gen_data(
            &SyntheticSpec {
                classes,
                dim,
                modes_per_class: modes,
                separation,
                noise,
                train_per_class: train,
                test_per_class: test,
                seed,
            },
            out,
        ),
        Command::Learn { run, checkpoint, classes } => {
            let cfg = run.resolve()?;
            let labels: Vec<String> = classes.split(',').map(|s| s.trim().to_string()).collect();
            cli::cmd_learn(&cfg, &checkpoint, &labels)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let result = cli::threads_from_env().and_then(|threads| with_threads(threads, || execute(args.command))?);
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            eprint!("{}", out.stderr);
            if out.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
