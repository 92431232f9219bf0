use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dgu_core::pipeline::{self, RunConfig};
use dgu_core::training::Ablation;
use dgu_core::Error;

/// Diffusion-GAN unsupervised phoneme recognition, one stage per subcommand.
#[derive(Debug, Parser)]
#[command(name = "dgu", version)]
struct Cli {
    /// key = value configuration file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory shared by all stages.
    #[arg(long, global = true, value_name = "DIR", default_value = "dgu-out")]
    out: PathBuf,

    /// Switches off one component for `train`: no_bert, no_length, no_tdisc or no_unet.
    #[arg(long, global = true, value_name = "NAME")]
    ablate: Vec<Ablation>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic audio splits, text corpus and manifest.
    GenData,
    /// Masked phoneme language model on the text corpus.
    TrainLm,
    /// Length-guided pseudo references for every training utterance.
    SampleRefs,
    /// Adversarial training with checkpoint selection.
    Train,
    /// PER of the selected checkpoint against the random-decode baseline.
    Evaluate {
        /// Weight file to evaluate instead of the selected checkpoint.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Full model and each single ablation, with a comparison table.
    Ablate,
}

fn threads() -> Result<usize, Error> {
    match std::env::var("DGU_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("DGU_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    cfg.validate()?;
    if !cli.ablate.is_empty() && !matches!(cli.command, Command::Train) {
        return Err(Error::Config("--ablate only applies to the train subcommand".into()));
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData => {
            let s = pipeline::cmd_gen_data(&cfg, out)?;
            let counts: Vec<String> = s.utterances.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("gen-data {} text={}", counts.join(" "), s.text_sentences);
        }
        Command::TrainLm => {
            let s = pipeline::cmd_train_lm(&cfg, out)?;
            println!(
                "train-lm heldout_nll_initial={:.6} heldout_nll_final={:.6}",
                s.heldout_nll_initial, s.heldout_nll_final
            );
        }
        Command::SampleRefs => {
            let s = pipeline::cmd_sample_refs(&cfg, out, threads()?)?;
            println!(
                "sample-refs utterances={} entries={} length_mismatches={}",
                s.utterances, s.entries, s.length_mismatches
            );
        }
        Command::Train => {
            let s = pipeline::cmd_train(&cfg, out, &cli.ablate, threads()?)?;
            println!(
                "train steps={} metrics_rows={} selected_step={} selected={}",
                s.steps,
                s.metrics_rows,
                s.selected_step,
                s.selected_file.display()
            );
        }
        Command::Evaluate { checkpoint } => {
            for r in pipeline::cmd_evaluate(&cfg, out, checkpoint.as_deref())? {
                println!(
                    "evaluate split={} per={:.6} baseline_per={:.6} utterances={}",
                    r.split, r.per, r.baseline_per, r.utterances
                );
            }
        }
        Command::Ablate => {
            for r in pipeline::cmd_ablate(&cfg, out, threads()?)? {
                println!(
                    "ablate variant={} selected_step={} dev_per={:.6}",
                    r.variant, r.selected_step, r.dev_per
                );
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error kind=usage message={}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let path = match &e {
                Error::MissingArtifact(p) => format!(" path={}", p.display()),
                _ => String::new(),
            };
            eprintln!("error kind={}{path} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
