//! Command-line interface.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use layoutdiff::catalog::AssetCatalog;
use layoutdiff::checkpoint::Checkpoint;
use layoutdiff::evaluate::{evaluate, EvalConfig, EvalMode};
use layoutdiff::scene::{
    generate_toy_dataset, read_dataset, read_vocabulary, write_dataset, write_vocabulary,
    SceneRecord,
};
use layoutdiff::train::train;
use serde::Serialize;

use crate::api::{
    CompleteRequest, GenerateRequest, RearrangeRequest, ServiceState, SseSelectRequest,
};
use crate::config::RunConfig;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CATALOG_FILE: &str = "catalog.json";
pub const HISTORY_FILE: &str = "history.json";
pub const REPORT_FILE: &str = "report.json";
pub const INPUTS_FILE: &str = "inputs.jsonl";
pub const OUTPUTS_FILE: &str = "outputs.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "layoutdiff",
    version,
    about = "Train and sample diffusion models of indoor layouts"
)]
pub struct Cli {
    /// JSON file with `training`, `denoiser`, `sampler`, `sse`, `rules` or `evaluation` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a denoiser and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Sample a layout for a floor and a category list.
    Generate(GenerateArgs),
    /// Add objects to a scene, keeping the existing ones fixed.
    Complete(CompleteArgs),
    /// Tidy a perturbed scene with dimensions held fixed.
    Rearrange(RearrangeArgs),
    /// Rank candidate category sets by self score evaluation.
    SseSelect(SseSelectArgs),
    /// Compute bounding metrics of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Write a procedural dataset, its vocabulary and an asset catalog.
    MakeToyData(MakeToyDataArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON-lines scenes.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to `vocab.json` next to the dataset.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON array of `[x, z]` floor vertices in meters.
    #[arg(long)]
    pub floor: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub categories: Vec<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene JSON.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long = "add", value_delimiter = ',', required = true)]
    pub added: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RearrangeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Starting noise level, floor-normalized units.
    #[arg(long, default_value_t = 0.25)]
    pub magnitude: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SseSelectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub floor: PathBuf,
    /// JSON array of arrays of category names.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Monte Carlo trials per candidate.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Generation,
    Rearrangement,
    Completion,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Generation => EvalMode::Generation,
            ModeArg::Rearrangement => EvalMode::Rearrangement,
            ModeArg::Completion => EvalMode::Completion,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference scenes, JSON lines.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Generation)]
    pub mode: ModeArg,
    /// Directory for the report and the scenes it was computed from.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeToyDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub scenes: usize,
    /// Size of the held-out split written to `test.jsonl`.
    #[arg(long, default_value_t = 100)]
    pub test_scenes: usize,
    #[arg(long, default_value_t = 20)]
    pub assets_per_category: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Asset catalog enabling `/retrieve`.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn state(
    cfg: &RunConfig,
    checkpoint: &Path,
    catalog: Option<AssetCatalog>,
) -> Result<ServiceState> {
    Ok(ServiceState::new(
        load_checkpoint(checkpoint)?,
        catalog,
        cfg.sampler.clone(),
        cfg.sse.clone(),
    )?)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = Some(cli.seed);
    match cli.command {
        Command::Train(a) => run_train(&cfg, cli.seed, &a),
        Command::Generate(a) => {
            let s = state(&cfg, &a.checkpoint, None)?;
            let resp = s.generate(GenerateRequest {
                floor: read_json(&a.floor)?,
                categories: a.categories,
                seed,
                sampler: None,
            })?;
            emit(a.out.as_deref(), &resp)
        }
        Command::Complete(a) => {
            let s = state(&cfg, &a.checkpoint, None)?;
            let resp = s.complete(CompleteRequest {
                scene: read_json::<SceneRecord>(&a.scene)?,
                added_categories: a.added,
                seed,
            })?;
            emit(a.out.as_deref(), &resp)
        }
        Command::Rearrange(a) => {
            let s = state(&cfg, &a.checkpoint, None)?;
            let resp = s.rearrange(RearrangeRequest {
                scene: read_json(&a.scene)?,
                magnitude: a.magnitude,
                seed,
            })?;
            emit(a.out.as_deref(), &resp)
        }
        Command::SseSelect(a) => {
            let s = state(&cfg, &a.checkpoint, None)?;
            let resp = s.sse_select(SseSelectRequest {
                floor: read_json(&a.floor)?,
                candidates: read_json(&a.candidates)?,
                t_sse: a.trials,
                seed,
            })?;
            emit(a.out.as_deref(), &resp)
        }
        Command::Evaluate(a) => run_evaluate(&cfg, cli.seed, &a),
        Command::MakeToyData(a) => run_make_toy_data(&cfg, cli.seed, &a),
        Command::Serve(a) => {
            let catalog = a
                .catalog
                .as_deref()
                .map(|p| {
                    AssetCatalog::read(p)
                        .with_context(|| format!("reading catalog {}", p.display()))
                })
                .transpose()?;
            let s = Arc::new(state(&cfg, &a.checkpoint, catalog)?);
            tokio::runtime::Runtime::new()?.block_on(crate::server::serve(s, &a.bind))?;
            Ok(())
        }
    }
}

fn run_train(cfg: &RunConfig, seed: u64, a: &TrainArgs) -> Result<()> {
    let vocab_path = a.vocab.clone().unwrap_or_else(|| {
        a.dataset
            .parent()
            .unwrap_or(Path::new("."))
            .join(VOCAB_FILE)
    });
    let vocab = read_vocabulary(&vocab_path)
        .with_context(|| format!("reading {}", vocab_path.display()))?;
    let scenes = read_dataset(&a.dataset, &vocab)?;
    if scenes.is_empty() {
        bail!("{} holds no scenes", a.dataset.display());
    }
    let training = layoutdiff::train::TrainingConfig {
        seed,
        ..cfg.training.clone()
    };
    let net = cfg.denoiser(vocab.len())?;
    log::info!(
        "training on {} scenes, {} parameters",
        scenes.len(),
        layoutdiff::nn::param_count(&net)?
    );
    let outcome = train(&scenes, net, &training, |l| {
        log::info!(
            "epoch {} lr {:.3e} train {:.5} validation {:.5}",
            l.epoch,
            l.learning_rate,
            l.train_loss,
            l.validation_loss
        )
    })?;
    let best = &outcome.history[outcome.best_epoch];
    log::info!(
        "best epoch {} validation {:.5}",
        outcome.best_epoch,
        best.validation_loss
    );
    let ck = Checkpoint::new(
        outcome.model,
        vocab,
        training,
        outcome.best_epoch,
        best.validation_loss,
    )?;
    ck.save(&a.out)?;
    write_json(&a.out.join(HISTORY_FILE), &outcome.history)
}

fn run_evaluate(cfg: &RunConfig, seed: u64, a: &EvaluateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let scenes = read_dataset(&a.dataset, &ck.vocabulary)?;
    let eval = EvalConfig {
        mode: a.mode.into(),
        seed,
        ..cfg.evaluation.clone().unwrap_or_else(|| EvalConfig {
            sampler: cfg.sampler.clone(),
            ..EvalConfig::default()
        })
    };
    let result = evaluate(&ck.model, &scenes, &eval)?;
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(REPORT_FILE), &result.report)?;
    write_dataset(&a.out.join(INPUTS_FILE), &result.inputs, &ck.vocabulary)?;
    write_dataset(&a.out.join(OUTPUTS_FILE), &result.outputs, &ck.vocabulary)?;
    log::info!("{}", serde_json::to_string(&result.report)?);
    Ok(())
}

fn run_make_toy_data(cfg: &RunConfig, seed: u64, a: &MakeToyDataArgs) -> Result<()> {
    let rules = cfg.rules.clone().unwrap_or_default();
    let vocab = rules.vocabulary()?;
    std::fs::create_dir_all(&a.out)?;
    let train_scenes = generate_toy_dataset(&rules, a.scenes, seed)?;
    write_dataset(&a.out.join(DATASET_FILE), &train_scenes, &vocab)?;
    if a.test_scenes > 0 {
        let test = generate_toy_dataset(&rules, a.test_scenes, seed.wrapping_add(1) ^ 0x7e57)?;
        write_dataset(&a.out.join(TEST_FILE), &test, &vocab)?;
    }
    write_vocabulary(&a.out.join(VOCAB_FILE), &vocab)?;
    AssetCatalog::synthetic(&rules, a.assets_per_category, seed)?
        .write(&a.out.join(CATALOG_FILE))?;
    Ok(())
}
