use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tripletmine::eval::{IdentityEmbedder, VerificationSet};
use tripletmine::mining::{mine, MiningConfig, Strategy};
use tripletmine::model::{read_checkpoint, write_checkpoint, Checkpoint};
use tripletmine::trainer::{finetune, pretrain, TrainReport};
use tripletmine::{pairwise_squared_distances, EmbedderParams, LabeledDataset};

mod config;

use config::{ConfigError, MethodName, RunConfig, SweepKind};

#[derive(Parser)]
#[command(name = "tripletmine", version, about = "Triplet-loss metric learning with hard example mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Softmax pretraining; writes a checkpoint and a report.
    Pretrain(RunArgs),
    /// Triplet-loss finetuning from a pretrained checkpoint.
    Finetune(FinetuneArgs),
    /// Mine triplets from a feature CSV.
    Mine(MineArgs),
    /// Verification accuracy of a checkpoint on the held-out pairs.
    Eval(EvalArgs),
    /// Strategy, P×K or mining-method comparison across seeds.
    Bench(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    #[arg(long)]
    pool_window: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// Initial checkpoint, overriding `finetune.checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Start from random parameters instead of a pretrained checkpoint.
    #[arg(long)]
    from_scratch: bool,
}

#[derive(Args)]
struct MineArgs {
    /// `label,x_0,...` CSV of embedded features, one batch.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "min_max")]
    strategy: Strategy,
    #[arg(long, default_value_t = tripletmine::trainer::DEFAULT_MARGIN)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Round index for the random strategy's draws.
    #[arg(long, default_value_t = 0)]
    round: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to evaluate; the raw normalized inputs when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSON result file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Mine(args) => cmd_mine(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn read_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml(&text, path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Read, override from flags, validate, and echo the effective config into
/// the output directory.
fn load_config(args: &RunArgs, edit: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = read_config(&args.config, args.seed)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    edit(&mut cfg);
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating output directory {}", cfg.out_dir.display()))?;
    let echo = cfg.out_dir.join("config.toml");
    std::fs::write(&echo, cfg.to_toml()).with_context(|| format!("writing {}", echo.display()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Summary<'a, M> {
    command: &'a str,
    config: &'a RunConfig,
    metrics: M,
}

fn write_summary<M: Serialize>(path: &Path, command: &str, config: &RunConfig, metrics: M) -> Result<()> {
    let summary = Summary {
        command,
        config,
        metrics,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(report: &TrainReport, path: &Path) -> Result<()> {
    report.write_csv(path).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct PretrainMetrics {
    train_accuracy: f64,
    final_loss: Option<f64>,
    verif_acc: Option<f64>,
}

fn cmd_pretrain(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args, |c| {
        if let Some(lr) = args.lr {
            c.pretrain.lr = lr;
        }
    })?;
    let (train, eval) = cfg.load_data()?;
    let ckpt = cfg.pretrain_checkpoint_path();
    let out = pretrain(&train, &cfg.pretrain_config(Some(ckpt.clone())), eval.as_ref())?;
    write_report(&out.report, &cfg.out_dir.join("pretrain_report.csv"))?;
    let verif_acc = eval.as_ref().map(|e| e.accuracy(&out.params)).transpose()?;
    log::info!(
        "pretrain done: train accuracy {:.4}, verification {verif_acc:?}, checkpoint {}",
        out.train_accuracy,
        ckpt.display()
    );
    write_summary(
        &cfg.out_dir.join("pretrain_summary.json"),
        "pretrain",
        &cfg,
        PretrainMetrics {
            train_accuracy: out.train_accuracy,
            final_loss: out.report.last().map(|r| r.loss),
            verif_acc,
        },
    )
}

#[derive(Serialize)]
struct FinetuneMetrics {
    initial: String,
    initial_verif_acc: Option<f64>,
    verif_acc: Option<f64>,
    final_loss: Option<f64>,
    final_active_fraction: Option<f64>,
    mean_triplets_per_step: f64,
}

fn initial_params(cfg: &RunConfig, input_dim: usize) -> Result<(EmbedderParams, String)> {
    if cfg.finetune.from_scratch {
        let params = cfg.model_config().init(input_dim, cfg.seed)?;
        return Ok((params, "scratch".to_string()));
    }
    let path = cfg.finetune_initial_path();
    if !path.is_file() {
        return Err(ConfigError::new(format!(
            "pretrained checkpoint not found: {}. Triplet finetuning starts from a softmax-pretrained \
             model; run `tripletmine pretrain` first or pass --from-scratch",
            path.display()
        ))
        .into());
    }
    let ckpt = read_checkpoint(&path)?;
    if ckpt.embedder.input_dim() != input_dim {
        return Err(ConfigError::new(format!(
            "checkpoint {} expects {}-dimensional inputs, data has {input_dim}",
            path.display(),
            ckpt.embedder.input_dim()
        ))
        .into());
    }
    Ok((ckpt.embedder, path.display().to_string()))
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let cfg = load_config(&args.run, |c| {
        let f = &mut c.finetune;
        if let Some(lr) = args.run.lr {
            f.lr = lr;
        }
        if let Some(s) = args.strategy {
            f.strategy = s;
        }
        if let Some(m) = args.method {
            f.method = m;
        }
        if let Some(w) = args.pool_window {
            f.pool_window = w;
        }
        if let Some(m) = args.margin {
            f.margin = m;
        }
        if let Some(p) = &args.checkpoint {
            f.checkpoint = Some(p.clone());
        }
        f.from_scratch |= args.from_scratch;
    })?;
    let (train, eval) = cfg.load_data()?;
    let (initial, source) = initial_params(&cfg, train.dim())?;
    let initial_verif_acc = eval.as_ref().map(|e| e.accuracy(&initial)).transpose()?;
    let ft = cfg.finetune_config()?;
    log::info!(
        "finetune: strategy {} method {} from {source}",
        ft.mining.strategy,
        cfg.finetune.method.as_str()
    );
    let out = finetune(&train, &ft, initial, eval.as_ref())?;
    write_report(&out.report, &cfg.out_dir.join("finetune_report.csv"))?;
    write_checkpoint(
        &cfg.out_dir.join("finetune.ckpt"),
        &Checkpoint {
            embedder: out.params.clone(),
            head: None,
        },
    )?;
    let records = &out.report.records;
    let mean_triplets = records.iter().map(|r| r.mean_triplets).sum::<f64>() / records.len().max(1) as f64;
    log::info!("finetune done: mean triplets per step {mean_triplets:.2}");
    write_summary(
        &cfg.out_dir.join("finetune_summary.json"),
        "finetune",
        &cfg,
        FinetuneMetrics {
            initial: source,
            initial_verif_acc,
            verif_acc: out.report.final_accuracy(),
            final_loss: out.report.last().map(|r| r.loss),
            final_active_fraction: out.report.last().and_then(|r| r.active_fraction),
            mean_triplets_per_step: mean_triplets,
        },
    )
}

fn cmd_mine(args: MineArgs) -> Result<()> {
    let cfg = MiningConfig::new(args.strategy, args.margin, args.seed).map_err(|e| ConfigError::new(e.to_string()))?;
    if !args.features.is_file() {
        return Err(ConfigError::new(format!("feature file not found: {}", args.features.display())).into());
    }
    let batch = LabeledDataset::load_csv(&args.features)?;
    let features = tripletmine::FeatureMatrix::new(batch.inputs().to_owned())?;
    let m = pairwise_squared_distances(&features);
    let triplets = mine(&m, batch.labels(), &cfg, args.round)?;
    log::info!("{} triplets mined with {}", triplets.len(), args.strategy);
    let mut text = String::from("anchor,positive,negative\n");
    for t in &triplets {
        text.push_str(&format!("{},{},{}\n", t.anchor, t.positive, t.negative));
    }
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalResult {
    checkpoint: Option<String>,
    pairs: usize,
    folds: usize,
    accuracy: f64,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = read_config(&args.config, args.seed)?;
    cfg.validate()?;
    let (_, eval) = cfg.load_data()?;
    let eval = eval.ok_or_else(|| ConfigError::new("eval needs held-out data"))?;
    let accuracy = match &args.checkpoint {
        Some(path) => {
            if !path.is_file() {
                return Err(ConfigError::new(format!("checkpoint not found: {}", path.display())).into());
            }
            eval.accuracy(&read_checkpoint(path)?.embedder)?
        }
        None => eval.accuracy(&IdentityEmbedder)?,
    };
    let result = EvalResult {
        checkpoint: args.checkpoint.as_ref().map(|p| p.display().to_string()),
        pairs: eval.protocol.pairs.len(),
        folds: eval.protocol.folds,
        accuracy,
    };
    let mut json = serde_json::to_string_pretty(&result)?;
    json.push('\n');
    match &args.out {
        Some(path) => std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

struct BenchRow {
    seed: u64,
    strategy: Strategy,
    method: MethodName,
    persons: usize,
    per_person: usize,
    accuracy: f64,
    baseline: f64,
}

fn bench_cells(cfg: &RunConfig) -> Result<Vec<RunConfig>> {
    let b = &cfg.bench;
    if b.seeds.is_empty() || b.cells() == 0 {
        return Err(ConfigError::new(format!(
            "bench: empty sweep (sweep = {:?}, {} seeds, {} cells)",
            b.sweep,
            b.seeds.len(),
            b.cells()
        ))
        .into());
    }
    let cells: Vec<RunConfig> = match b.sweep {
        SweepKind::Strategies => b
            .strategies
            .iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.finetune.strategy = s;
                c
            })
            .collect(),
        SweepKind::Methods => b
            .methods
            .iter()
            .map(|&m| {
                let mut c = cfg.clone();
                c.finetune.method = m;
                c
            })
            .collect(),
        SweepKind::Pk => {
            let size = b.pk[0][0] * b.pk[0][1];
            if let Some(bad) = b.pk.iter().find(|[p, k]| p * k != size) {
                return Err(ConfigError::new(format!(
                    "bench: P×K combos must share one batch size, {}×{} != {size}",
                    bad[0], bad[1]
                ))
                .into());
            }
            b.pk.iter()
                .map(|&[p, k]| {
                    let mut c = cfg.clone();
                    c.finetune.persons = p;
                    c.finetune.per_person = k;
                    c
                })
                .collect()
        }
    };
    for c in &cells {
        c.validate()?;
    }
    Ok(cells)
}

#[derive(Serialize)]
struct BenchCellMean {
    strategy: Strategy,
    method: &'static str,
    persons: usize,
    per_person: usize,
    mean_accuracy: f64,
}

#[derive(Serialize)]
struct BenchMetrics {
    rows: usize,
    mean_baseline: f64,
    cells: Vec<BenchCellMean>,
}

fn cmd_bench(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args, |c| {
        if let Some(lr) = args.lr {
            c.finetune.lr = lr;
        }
    })?;
    let cells = bench_cells(&cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.bench.seeds {
        let seeded = RunConfig { seed, ..cfg.clone() };
        let (train, eval) = seeded.load_data()?;
        let eval: VerificationSet = eval.ok_or_else(|| ConfigError::new("bench needs held-out data"))?;
        let pre = pretrain(&train, &seeded.pretrain_config(None), None)?;
        let baseline = eval.accuracy(&pre.params)?;
        log::info!("bench seed {seed}: pretrain baseline {baseline:.4}");
        for cell in &cells {
            let cell = RunConfig { seed, ..cell.clone() };
            let ft = cell.finetune_config()?;
            let start = if cell.finetune.from_scratch {
                cell.model_config().init(train.dim(), seed)?
            } else {
                pre.params.clone()
            };
            let out = finetune(&train, &ft, start, None)?;
            let accuracy = eval.accuracy(&out.params)?;
            log::info!(
                "bench seed {seed}: {} {} {}x{} -> {accuracy:.4}",
                ft.mining.strategy,
                cell.finetune.method.as_str(),
                ft.pk.persons,
                ft.pk.per_person
            );
            rows.push(BenchRow {
                seed,
                strategy: ft.mining.strategy,
                method: cell.finetune.method,
                persons: ft.pk.persons,
                per_person: ft.pk.per_person,
                accuracy,
                baseline,
            });
        }
    }

    let mut csv = String::from("seed,strategy,method,persons,per_person,accuracy,baseline\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed,
            r.strategy,
            r.method.as_str(),
            r.persons,
            r.per_person,
            r.accuracy,
            r.baseline
        ));
    }
    let path = cfg.out_dir.join("bench.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;

    let seeds = cfg.bench.seeds.len() as f64;
    let per_cell = cells.len();
    let means = cells
        .iter()
        .enumerate()
        .map(|(i, c)| BenchCellMean {
            strategy: c.finetune.strategy,
            method: c.finetune.method.as_str(),
            persons: c.finetune.persons,
            per_person: c.finetune.per_person,
            mean_accuracy: rows.iter().skip(i).step_by(per_cell).map(|r| r.accuracy).sum::<f64>() / seeds,
        })
        .collect();
    let mean_baseline = rows.iter().step_by(per_cell).map(|r| r.baseline).sum::<f64>() / seeds;
    write_summary(
        &cfg.out_dir.join("bench_summary.json"),
        "bench",
        &cfg,
        BenchMetrics {
            rows: rows.len(),
            mean_baseline,
            cells: means,
        },
    )
}
