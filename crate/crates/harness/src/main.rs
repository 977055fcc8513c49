use std::path::{Path, PathBuf};
use std::process::ExitCode;

use batchrl::agents::Algorithm;
use batchrl::data::save_dataset;
use batchrl::mdp::make_env;
use batchrl_harness::{
    batch_from_policy, behavioral_policy, emit_plot_data, load_behavioral, oracle_return,
    run_benchmark_suite, run_experiment, save_behavioral, ExperimentConfig, HarnessError, Result,
    SuiteConfig, DATASET_FILE, RETURN_WINDOW,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "batchrl", version, about = "Offline RL on small MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the behavioral DQN and write behavioral.toml to --out.
    TrainBehavioral(Common),
    /// Roll the behavioral policy into a batch and write dataset.bin to --out.
    ///
    /// Reuses --out/behavioral.toml when present.
    Generate(Common),
    /// Train one algorithm offline over every configured seed.
    Train(Common),
    /// Train several algorithms on one shared batch per env and rank them.
    Suite(Common),
    /// Write per-run plot series under <DIR>/plots.
    PlotData {
        /// Directory holding run outputs (searched recursively).
        dir: PathBuf,
        /// Clamp displayed value estimates to [-clip, clip].
        #[arg(long, default_value_t = 100.0)]
        clip: f64,
        /// Disable clamping of displayed value estimates.
        #[arg(long, conflicts_with = "clip")]
        no_clip: bool,
        #[arg(long, default_value_t = RETURN_WINDOW)]
        window: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file whose keys mirror the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run seed for `train`/`suite`, batch seed for `generate`, training
    /// seed for `train-behavioral`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(env) = &self.env {
            cfg.env = env.clone();
        }
        if let Some(algo) = self.algo {
            cfg.algorithm = algo;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(t) = self.iterations {
            cfg.iterations = t;
        }
        if let Some(i) = self.eval_interval {
            cfg.eval_interval = i;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }

    fn suite(&self) -> Result<SuiteConfig> {
        let mut cfg = match &self.config {
            Some(path) => SuiteConfig::load(path)?,
            None => SuiteConfig::default(),
        };
        if let Some(env) = &self.env {
            cfg.envs = vec![env.clone()];
        }
        if let Some(algo) = self.algo {
            cfg.algorithms = vec![algo];
        }
        if self.dataset.is_some() {
            return Err(HarnessError::Config(
                "suite generates its own batches; --dataset is not accepted".into(),
            ));
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(t) = self.iterations {
            cfg.iterations = t;
        }
        if let Some(i) = self.eval_interval {
            cfg.eval_interval = i;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn train_behavioral(args: &Common) -> Result<()> {
    let mut cfg = args.experiment()?;
    if let Some(s) = args.seed {
        cfg.generation.behavioral_seed = s;
    }
    cfg.generation.validate()?;
    let env = make_env(&cfg.env)?;
    let policy = behavioral_policy(&env, &cfg.generation)?;
    save_behavioral(&cfg.output_dir, &env, &policy)?;
    println!(
        "{}: greedy return {:.4}, noisy return {:.4}, oracle {:.4}",
        env.name(),
        policy.greedy_return(&env)?,
        policy.reference_return(&env)?,
        oracle_return(&env)?
    );
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn generate(args: &Common) -> Result<()> {
    let mut cfg = args.experiment()?;
    if let Some(s) = args.seed {
        cfg.generation.seed = s;
    }
    cfg.generation.validate()?;
    let env = make_env(&cfg.env)?;
    let dir = &cfg.output_dir;
    let policy = if dir.join(batchrl_harness::BEHAVIORAL_FILE).is_file() {
        println!("using behavioral policy from {}", dir.display());
        load_behavioral(dir, &env)?
    } else {
        let policy = behavioral_policy(&env, &cfg.generation)?;
        save_behavioral(dir, &env, &policy)?;
        policy
    };
    let ds = batch_from_policy(&env, &policy, &cfg.generation)?;
    let path = dir.join(DATASET_FILE);
    save_dataset(&ds, &path)?;
    println!("wrote {} transitions to {}", ds.len(), path.display());
    Ok(())
}

fn train(args: &Common) -> Result<()> {
    let mut cfg = args.experiment()?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    let report = run_experiment(&cfg)?;
    println!(
        "{} on {}: final windowed return {:.4} ± {:.4} (oracle {:.4})",
        report.algorithm,
        report.env,
        report.final_windowed_return(RETURN_WINDOW),
        report.final_windowed_return_std(RETURN_WINDOW),
        oracle_return(&make_env(&report.env)?)?
    );
    for s in &report.seeds {
        if let Some(at) = s.diverged_at {
            println!(
                "seed {} diverged at iteration {at}; last finite value estimate {}",
                s.seed, s.last_finite_value_estimate
            );
        }
    }
    println!("wrote {}", report.output_dir.display());
    Ok(())
}

fn suite(args: &Common) -> Result<()> {
    let cfg = args.suite()?;
    let report = run_benchmark_suite(&cfg)?;
    print!("{}", report.table());
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn plot_data(dir: &Path, clip: Option<f64>, window: usize) -> Result<()> {
    for path in emit_plot_data(dir, window, clip)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainBehavioral(a) => train_behavioral(a),
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Suite(a) => suite(a),
        Command::PlotData {
            dir,
            clip,
            no_clip,
            window,
        } => plot_data(dir, (!no_clip).then_some(*clip), *window),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
