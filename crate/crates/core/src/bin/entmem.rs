use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use entmem::generator::PromptKind;
use entmem::pipeline::{ExperimentConfig, Pipeline, StageOutcome, STAGES};
use entmem::synth::{synthesize, SynthConfig};
use entmem::training::Setup;
use entmem::Error;

/// Memorization audit pipeline for small masked language models.
#[derive(Parser)]
#[command(name = "entmem", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory; overrides the config and ENTMEM_WORKDIR.
    #[arg(long, global = true, env = "ENTMEM_WORKDIR")]
    workdir: Option<PathBuf>,
    /// Worker threads for generation and scanning.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Replaces the fine-tuning and generation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus, pre-training text, prompts, gazetteer and canaries.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        docs: usize,
        #[arg(long, default_value_t = 3000)]
        pretrain_docs: usize,
        #[arg(long, default_value_t = 500)]
        public_docs: usize,
        #[arg(long, default_value_t = 7)]
        data_seed: u64,
    },
    /// Split the corpus and plant canaries.
    Prepare,
    TokenizerTrain,
    Pretrain,
    Finetune {
        /// Defaults to every fine-tuned setup in the config.
        #[arg(long)]
        setup: Option<Setup>,
    },
    Generate {
        #[arg(long)]
        setup: Option<Setup>,
        #[arg(long)]
        prompt: Option<PromptKind>,
    },
    Audit {
        #[arg(long)]
        setup: Option<Setup>,
        #[arg(long)]
        prompt: Option<PromptKind>,
    },
    Report,
    RunAll {
        /// Stop after this stage.
        #[arg(long)]
        stage: Option<String>,
    },
}

fn fail(code: u8, stage: &str, err: &Error) -> ExitCode {
    let record = json!({"error": {"stage": stage, "kind": err.kind(), "message": err.to_string()}});
    eprintln!("{record}");
    ExitCode::from(code)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::config("--config is required for this command"))?;
    if !path.is_file() {
        return Err(Error::config(format!("config file {} not found", path.display())));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seeds.finetune = s;
        cfg.seeds.generate = s;
    }
    Ok(cfg)
}

fn selected<T: Copy + PartialEq>(all: &[T], one: Option<T>) -> Vec<T> {
    match one {
        Some(x) => vec![x],
        None => all.to_vec(),
    }
}

fn run(p: &mut Pipeline, command: &Command) -> Result<(), (String, Error)> {
    let at = |stage: &str| {
        let stage = stage.to_string();
        move |e| (stage.clone(), e)
    };
    let setups = p.config.generate.setups.clone();
    let prompts = p.config.generate.prompts.clone();
    let tuned: Vec<Setup> = setups.iter().copied().filter(|&s| s != Setup::Base).collect();
    match command {
        Command::Synth { .. } => unreachable!("handled before config loading"),
        Command::Prepare => p.prepare().map(drop).map_err(at("prepare")),
        Command::TokenizerTrain => p.tokenizer().map(drop).map_err(at("tokenizer")),
        Command::Pretrain => p.pretrain().map(drop).map_err(at("pretrain")),
        Command::Finetune { setup } => {
            let list = match setup {
                Some(s) => vec![*s],
                None => tuned,
            };
            for s in list {
                p.finetune(s).map_err(at(&format!("finetune:{s}")))?;
            }
            Ok(())
        }
        Command::Generate { setup, prompt } => {
            for s in selected(&setups, *setup) {
                for k in selected(&prompts, *prompt) {
                    p.generate(s, k).map_err(at(&format!("generate:{s}:{k}")))?;
                }
            }
            Ok(())
        }
        Command::Audit { setup, prompt } => {
            p.entities().map_err(at("entities"))?;
            for s in selected(&setups, *setup) {
                for k in selected(&prompts, *prompt) {
                    p.audit(s, k).map_err(at(&format!("audit:{s}:{k}")))?;
                }
            }
            Ok(())
        }
        Command::Report => p.report().map(drop).map_err(at("report")),
        Command::RunAll { stage } => p.run_all(stage.as_deref()).map_err(at("run-all")),
    }
}

fn synth(out: &Path, docs: [usize; 3], seed: u64) -> Result<(), Error> {
    let cfg = SynthConfig {
        n_docs: docs[0],
        n_pretrain_docs: docs[1],
        n_public_docs: docs[2],
        seed,
        ..SynthConfig::default()
    };
    synthesize(&cfg)?.write(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": {"stage": "setup", "kind": "config", "message": e.to_string()}}));
            return ExitCode::from(2);
        }
        #[cfg(not(feature = "parallel"))]
        let _ = n;
    }
    if let Command::Synth {
        out,
        docs,
        pretrain_docs,
        public_docs,
        data_seed,
    } = &cli.command
    {
        return match synth(out, [*docs, *pretrain_docs, *public_docs], *data_seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(1, "synth", &e),
        };
    }
    if let Command::RunAll { stage: Some(s) } = &cli.command {
        if !STAGES.contains(&s.as_str()) {
            return fail(2, "config", &Error::config(format!("unknown stage {s:?}; expected one of {}", STAGES.join(", "))));
        }
    }
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(2, "config", &e),
    };
    let mut pipeline = match Pipeline::new(config) {
        Ok(p) => p,
        Err(e) => return fail(2, "config", &e),
    };
    if let Command::Finetune { setup: Some(Setup::Dp) } = cli.command {
        if let Err(e) = pipeline.config.require_dp() {
            return fail(2, "config", &e);
        }
    }
    match run(&mut pipeline, &cli.command) {
        Ok(()) => {
            let stages: Vec<_> = pipeline
                .log
                .iter()
                .map(|(name, o)| json!({"stage": name, "outcome": if *o == StageOutcome::Ran { "ran" } else { "skipped" }}))
                .collect();
            println!("{}", json!({ "stages": stages }));
            ExitCode::SUCCESS
        }
        Err((stage, e)) => fail(1, &stage, &e),
    }
}
