use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use csg_core::data::{write_labeled_csv, AgentTrack, SyntheticConfig};
use csg_core::eval::{evaluate, EvalReport};
use csg_core::tensor::{Dtype, Real};
use csg_core::train::{prepare_scenes, train, EpochMetrics, TrainError};
use csg_core::Execution;
use serde::Serialize;

use crate::catalog::SceneCatalog;
use crate::config::{load_datasets, RunConfig};
use crate::model::{with_checkpoint, LoadedModel};
use crate::server::{serve, AppState};
use crate::simulate::{simulate, SimulationMeta, SimulationRequest};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "csg",
    version,
    about = "Speed-conditioned trajectory GAN: train, evaluate, simulate, serve"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Best-of-K ADE/FDE per dataset file, as mean and variance over seeds.
    Evaluate(EvaluateArgs),
    /// Run one simulation request and write the samples as CSV.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON simulation request.
        #[arg(long)]
        request: PathBuf,
        /// Output CSV; a `.meta.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dataset: DatasetArgs,
    },
    /// Serve the HTTP/JSON API.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[command(flatten)]
        dataset: DatasetArgs,
    },
    /// Write synthetic scenes as labeled CSV, one file per regime.
    Generate {
        /// TOML with `obs_len`, `pred_len` and `[regimes.<name>]` tables.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of trajectory files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Run seeds: `1,2,3`, `0..20` (end exclusive) or a mix.
    // Spelled out so clap parses one list-valued argument rather than a
    // repeated one.
    #[arg(long, default_value = "0", value_parser = parse_seeds)]
    pub seeds: std::vec::Vec<u64>,
    #[arg(long, default_value = "eval_report.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory of trajectory files whose scenes can be referenced by id.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

/// Parses `1,2,3`, `0..20` or combinations such as `1,5..8`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (
                a.trim().parse().map_err(|_| format!("bad range start in {part:?}"))?,
                b.trim().parse().map_err(|_| format!("bad range end in {part:?}"))?,
            );
            if a >= b {
                return Err(format!("empty seed range {part:?}"));
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?);
        }
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Simulate {
            checkpoint,
            request,
            out,
            dataset,
        } => cmd_simulate(&checkpoint, &request, &out, &dataset),
        Command::Serve {
            checkpoint,
            bind,
            dataset,
        } => cmd_serve(&checkpoint, &bind, &dataset),
        Command::Generate {
            config,
            scenes,
            seed,
            out,
        } => cmd_generate(&config, scenes, seed, &out),
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::EmptyDataset | TrainError::Data(_) => CliError::usage(e),
        _ => CliError::runtime(e),
    }
}

pub fn cmd_train(config_path: &Path) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let (train_scenes, val_scenes) = config.scenes()?;
    println!(
        "training on {} scenes ({} validation), {} epochs, {}",
        train_scenes.len(),
        val_scenes.len(),
        config.train.epochs,
        config.dtype
    );
    let progress = |m: &EpochMetrics| {
        let val = m.val_ade.map(|v| format!("  val_ade {v:.4}")).unwrap_or_default();
        println!(
            "epoch {:>4}  d_loss {:.4}  g_adv {:.4}  l2 {:.5}  l1 {:.4}{val}",
            m.epoch, m.d_loss, m.g_adv, m.l2, m.l1
        );
    };
    let dir = Some(config.output_dir.as_path());
    let (model, train_cfg) = (config.model.clone(), &config.train);
    let checksum =
        match config.dtype()? {
            Dtype::F32 => train::<f32>(&train_scenes, &val_scenes, model, train_cfg, dir, progress)
                .map(|o| o.checkpoint.checksum()),
            Dtype::F64 => train::<f64>(&train_scenes, &val_scenes, model, train_cfg, dir, progress)
                .map(|o| o.checkpoint.checksum()),
        }
        .map_err(train_error)?;
    println!("wrote {}", config.output_dir.join("model.ckpt").display());
    println!("sha256 {checksum}");
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    if args.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    if args.stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let model = LoadedModel::load(&args.checkpoint)?;
    let config = model.config();
    let datasets = load_datasets(&args.data, config.obs_len, config.pred_len, args.stride)?;
    let report = with_checkpoint!(model, c => evaluate_datasets(c, &datasets, args))?;
    print!("{report}");
    std::fs::write(&args.out, report.to_csv())
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn evaluate_datasets<T: Real>(
    ckpt: &csg_core::train::Checkpoint<T>,
    datasets: &[(String, Vec<csg_core::data::Scene>)],
    args: &EvaluateArgs,
) -> Result<EvalReport, CliError> {
    let vocab = &ckpt.model.config.vocabulary;
    let mut rows = Vec::new();
    for (name, scenes) in datasets {
        if scenes.is_empty() {
            eprintln!("skipping {name}: no complete scene windows");
            continue;
        }
        let xs = prepare_scenes::<T>(scenes, &ckpt.scaler, vocab, Execution::Parallel)
            .map_err(|e| CliError::usage(format!("{name}: {e}")))?;
        let row = evaluate(
            &ckpt.model.generator,
            name,
            &xs,
            args.k,
            &args.seeds,
            Execution::Parallel,
        )
        .map_err(|e| CliError::runtime(format!("{name}: {e}")))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::usage(format!(
            "no test scenes of {} frames under {}",
            ckpt.model.config.total_len(),
            args.data.display()
        )));
    }
    Ok(EvalReport { rows })
}

/// Per-sample summary written next to the CSV.
#[derive(Serialize)]
struct Sidecar<'a> {
    request: &'a SimulationRequest,
    meta: &'a SimulationMeta,
    samples: Vec<SampleSummary>,
}

#[derive(Serialize)]
struct SampleSummary {
    k: usize,
    seed: u64,
    speed_compliance: f64,
    collision_pct: Vec<f64>,
    ade: Option<f64>,
    fde: Option<f64>,
    forecast_speeds: BTreeMap<u64, Vec<f64>>,
    used_speeds: BTreeMap<u64, Vec<f64>>,
}

/// `out` with its extension replaced by `meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn load_catalog(dataset: &DatasetArgs, model: &LoadedModel) -> Result<Option<SceneCatalog>, CliError> {
    if dataset.stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let config = model.config();
    dataset
        .data
        .as_deref()
        .map(|dir| SceneCatalog::load(dir, config.obs_len, config.pred_len, dataset.stride))
        .transpose()
}

pub fn cmd_simulate(checkpoint: &Path, request: &Path, out: &Path, dataset: &DatasetArgs) -> Result<(), CliError> {
    let model = LoadedModel::load(checkpoint)?;
    let text = std::fs::read_to_string(request)
        .map_err(|e| CliError::usage(format!("cannot read request {}: {e}", request.display())))?;
    let request: SimulationRequest =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid request: {e}")))?;
    let catalog = load_catalog(dataset, &model)?;
    let result =
        simulate(&model, catalog.as_ref(), &request).map_err(|e| CliError::usage(format!("invalid request: {e}")))?;

    let write = |path: &Path, text: String| {
        std::fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
    };
    write(out, result.to_csv())?;
    let sidecar = Sidecar {
        request: &request,
        meta: &result.meta,
        samples: result
            .samples
            .iter()
            .map(|s| SampleSummary {
                k: s.k,
                seed: s.seed,
                speed_compliance: s.speed_compliance,
                collision_pct: s.collision_pct.clone(),
                ade: s.ade,
                fde: s.fde,
                forecast_speeds: s
                    .agents
                    .iter()
                    .map(|a| (a.agent_id, a.forecast_speeds.clone()))
                    .collect(),
                used_speeds: s.agents.iter().map(|a| (a.agent_id, a.used_speeds.clone())).collect(),
            })
            .collect(),
    };
    let meta_path = sidecar_path(out);
    write(
        &meta_path,
        serde_json::to_string_pretty(&sidecar).expect("serialisable"),
    )?;
    println!(
        "wrote {} samples to {} and {}",
        result.samples.len(),
        out.display(),
        meta_path.display()
    );
    Ok(())
}

pub fn cmd_serve(checkpoint: &Path, bind: &str, dataset: &DatasetArgs) -> Result<(), CliError> {
    let model = LoadedModel::load(checkpoint)?;
    let catalog = load_catalog(dataset, &model)?;
    if let Some(c) = &catalog {
        println!("mounted {} scenes", c.len());
    }
    println!("serving checkpoint {}", model.id());
    serve(AppState::new(model, checkpoint.to_path_buf(), catalog), bind)
}

pub fn cmd_generate(config: &Path, scenes: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let config = SyntheticConfig::load(config).map_err(CliError::usage)?;
    let generated = csg_core::data::generate_synthetic(&config, scenes, seed).map_err(CliError::usage)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    // Scenes of one regime go into one file, shifted apart in frames and
    // agent ids so that windowing recovers them one by one.
    let mut per_regime: BTreeMap<&str, Vec<AgentTrack>> = BTreeMap::new();
    for scene in &generated {
        let tracks = per_regime.entry(&scene.source).or_default();
        let offset = tracks.iter().flat_map(|t| t.frames.last()).max().map_or(0, |f| f + 1);
        let index = (tracks.len() / scene.num_agents().max(1)) as u64;
        tracks.extend(scene.tracks.iter().map(|t| AgentTrack {
            agent_id: index * 1000 + t.agent_id,
            frames: t.frames.iter().map(|f| f + offset).collect(),
            ..t.clone()
        }));
    }
    for (name, tracks) in &per_regime {
        let path = out.join(format!("{name}.csv"));
        std::fs::write(&path, write_labeled_csv(&[(None, tracks)]))
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
