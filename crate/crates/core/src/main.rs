use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use llmser::pipeline::{PipelineConfig, Runner, Stage, TrainMode};
use llmser::synthetic::{generate, SyntheticConfig};
use llmser::Error;

#[derive(Parser)]
#[command(name = "llmser", version, about = "Pseudo-prior augmentation for sequential recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set augment.num_pseudo=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    no_ccg: bool,
    #[arg(long)]
    no_snf: bool,
    #[arg(long)]
    no_arv: bool,
    #[arg(long)]
    no_rcs: bool,
    #[arg(long)]
    no_reason: bool,
    #[arg(long)]
    no_wd: bool,
    /// Also write per-group metrics as CSV.
    #[arg(long)]
    emit_csv: bool,
    #[arg(long)]
    min_interactions: Option<usize>,
}

#[derive(Args, Clone)]
struct ModeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "llmser", value_parser = ["none", "llmser"])]
    mode: String,
}

#[derive(Subcommand)]
enum Command {
    Ingest(Common),
    Stats(Common),
    PretrainCcg(Common),
    PretrainRcs(Common),
    Augment(Common),
    Validate(Common),
    Train(ModeArgs),
    Evaluate(ModeArgs),
    /// All stages for both modes, then a comparison table.
    Run(Common),
    /// Write a synthetic dataset with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        users: usize,
        /// Probability of stepping to the next item of the user's topic.
        #[arg(long)]
        p_next: Option<f64>,
        /// Probability of jumping to a random item of the user's topic.
        #[arg(long)]
        p_topic: Option<f64>,
    },
}

enum Failure {
    Config(Error),
    Stage(Error),
}

fn load(c: &Common) -> Result<PipelineConfig, Failure> {
    let mut sets = c.set.clone();
    let flags = [
        (c.no_ccg, "ablation.no_ccg=true"),
        (c.no_snf, "ablation.no_snf=true"),
        (c.no_arv, "ablation.no_arv=true"),
        (c.no_rcs, "ablation.no_rcs=true"),
        (c.no_reason, "ablation.no_reason=true"),
        (c.no_wd, "ablation.no_wd=true"),
        (c.emit_csv, "eval.emit_csv=true"),
    ];
    sets.extend(flags.iter().filter(|(on, _)| *on).map(|(_, s)| s.to_string()));
    if let Some(m) = c.min_interactions {
        sets.push(format!("data.min_interactions={m}"));
    }
    PipelineConfig::load(&c.config, &sets).map_err(Failure::Config)
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) => Failure::Config(e),
        other => Failure::Stage(other),
    }
}

fn stage(c: &Common, stage: Stage, mode: TrainMode) -> Result<(), Failure> {
    let runner = Runner::new(load(c)?).map_err(Failure::Config)?;
    runner.run_stage(stage, mode).map_err(classify)?;
    if stage == Stage::Evaluate {
        println!("{}", std::fs::read_to_string(runner.artifacts.metrics(mode)).unwrap_or_default());
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    let llm = TrainMode::Llmser;
    match cmd {
        Command::Ingest(c) => stage(&c, Stage::Ingest, llm),
        Command::Stats(c) => stage(&c, Stage::Stats, llm),
        Command::PretrainCcg(c) => stage(&c, Stage::PretrainCcg, llm),
        Command::PretrainRcs(c) => stage(&c, Stage::PretrainRcs, llm),
        Command::Augment(c) => stage(&c, Stage::Augment, llm),
        Command::Validate(c) => stage(&c, Stage::Validate, llm),
        Command::Train(m) => stage(&m.common, Stage::Train, m.mode.parse().map_err(Failure::Config)?),
        Command::Evaluate(m) => stage(&m.common, Stage::Evaluate, m.mode.parse().map_err(Failure::Config)?),
        Command::Run(c) => {
            let runner = Runner::new(load(&c)?).map_err(Failure::Config)?;
            let cmp = runner.run_pipeline().map_err(classify)?;
            print!("{cmp}");
            Ok(())
        }
        Command::Synth {
            out,
            seed,
            users,
            p_next,
            p_topic,
        } => {
            let d = SyntheticConfig::default();
            let cfg = SyntheticConfig {
                seed,
                num_users: users,
                p_next: p_next.unwrap_or(d.p_next),
                p_topic: p_topic.unwrap_or(d.p_topic),
                ..d
            };
            let data = generate(&cfg).map_err(Failure::Config)?;
            data.write(&out).map_err(Failure::Stage)?;
            println!("wrote {} items and {} interactions to {}", data.items.len(), data.interactions.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
