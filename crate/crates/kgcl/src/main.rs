//! Command-line interface: schema extraction, the two training phases,
//! evaluation, and data exports.

use clap::{Args, Parser, Subcommand};
use kgcl::encoders::{
    load_structure_embeddings, pretrain_structure_embeddings, write_embedding_table, ModelParams,
};
use kgcl::error::{Error, Result};
use kgcl::eval::{evaluate, export_embeddings, export_score_histogram, EmbeddingView};
use kgcl::graph::{build_graph, load_entity_types, load_triples, read_split, split_edges, write_split, EdgeSplit, KnowledgeGraph};
use kgcl::schema::{schema_from_graph, write_schema};
use kgcl::training::{
    finetune, load_checkpoint, pretrain, save_checkpoint, Checkpoint, TrainConfig,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "kgcl",
    version,
    about = "Schema-aware contrastive learning for knowledge-graph link prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key-value config file (one `key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Triples file: one `head \t relation \t tail` per line.
    #[arg(long)]
    triples: PathBuf,
    /// Entity-type file: one `entity \t type` per line.
    #[arg(long)]
    types: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Count typed triples, threshold them, and write the schema as TSV.
    BuildSchema {
        #[command(flatten)]
        common: Common,
        /// Frequency threshold, overriding the config.
        #[arg(long)]
        alpha: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train structure-view embeddings (skip-gram over random walks).
    PretrainStructure {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pre-training; writes a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Pre-trained structure embedding file; trained in-process when
        /// absent.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a checkpoint on the training split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with train/valid/test/negatives TSVs; derived from the
        /// seed when absent, written there when the directory is new.
        #[arg(long)]
        split_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score held-out positives against their frozen negatives.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split_dir: Option<PathBuf>,
        /// Which held-out part to score.
        #[arg(long, default_value = "test")]
        split: String,
        /// Classification threshold, overriding the config.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export structure- or context-view embeddings as TSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `structure` or `context`.
        #[arg(long)]
        which: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the held-out score histogram as CSV.
    ExportHistogram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split_dir: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: split, schema, structure embeddings, pre-train,
    /// fine-tune, evaluate, and export everything into a directory.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_graph(common: &Common) -> Result<KnowledgeGraph> {
    let table = load_triples(&common.triples)?;
    let types = load_entity_types(&common.types)?;
    build_graph(table, &types)
}

/// Load a split from `split_dir` when its files exist; otherwise derive it
/// deterministically from the config and write it there if a directory was
/// named.
fn obtain_split(
    graph: &KnowledgeGraph,
    cfg: &TrainConfig,
    split_dir: Option<&Path>,
) -> Result<EdgeSplit> {
    if let Some(dir) = split_dir {
        if dir.join("train.tsv").exists() {
            return read_split(graph, dir);
        }
    }
    let split = split_edges(
        graph,
        (cfg.train_ratio, cfg.valid_ratio, cfg.test_ratio),
        cfg.seed,
    )?;
    if let Some(dir) = split_dir {
        write_split(graph, &split, dir)?;
    }
    Ok(split)
}

fn split_part<'a>(split: &'a EdgeSplit, which: &str) -> Result<(&'a [kgcl::Triple], &'a [kgcl::Triple])> {
    match which {
        "valid" => Ok((&split.valid, split.valid_negatives())),
        "test" => Ok((&split.test, split.test_negatives())),
        other => Err(Error::Config(format!(
            "unknown split {other:?}; expected valid|test"
        ))),
    }
}

/// Effective config when a checkpoint is in play: an explicit `--config`
/// wins (its dimensions must match the stored parameters), else the
/// checkpoint's own config, with CLI seed applied last.
fn checkpoint_config(ckpt: &Checkpoint, common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let cfg = TrainConfig::from_file(path)?;
            if cfg.dim != ckpt.params.dim
                || cfg.proj_dim != ckpt.params.proj_dim
                || cfg.heads != ckpt.params.heads
                || cfg.layers != ckpt.params.num_layers()
            {
                return Err(Error::Config(
                    "config dimensions do not match the checkpoint parameters".into(),
                ));
            }
            cfg
        }
        None => ckpt.config.clone(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn initial_params(
    graph: &KnowledgeGraph,
    cfg: &TrainConfig,
    embeddings: Option<&Path>,
) -> Result<ModelParams> {
    let mut params = ModelParams::init(
        graph.entity_count(),
        graph.relation_count(),
        cfg.dim,
        cfg.proj_dim,
        cfg.layers,
        cfg.heads,
        cfg.seed,
    )?;
    params.entity_table = match embeddings {
        Some(path) => load_structure_embeddings(path, graph, cfg.dim)?,
        None => {
            log::info!("training structure embeddings in-process");
            pretrain_structure_embeddings(graph, &cfg.structure, cfg.seed)
        }
    };
    Ok(params)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildSchema {
            common,
            alpha,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            let graph = load_graph(&common)?;
            let schema = schema_from_graph(&graph, cfg.alpha)?;
            write_schema(&graph, &schema, &out)?;
            println!(
                "schema: {} members at alpha {} ({} entities, {} relations, {} types)",
                schema.len(),
                cfg.alpha,
                graph.entity_count(),
                graph.relation_count(),
                graph.type_count()
            );
            Ok(())
        }
        Command::PretrainStructure { common, out } => {
            let cfg = load_config(&common)?;
            let graph = load_graph(&common)?;
            let table = pretrain_structure_embeddings(&graph, &cfg.structure, cfg.seed);
            write_embedding_table(&graph, &table, &out)?;
            println!("wrote {} x {} structure embeddings", graph.entity_count(), cfg.structure.dim);
            Ok(())
        }
        Command::Pretrain {
            common,
            embeddings,
            out,
        } => {
            let cfg = load_config(&common)?;
            let graph = load_graph(&common)?;
            let schema = schema_from_graph(&graph, cfg.alpha)?;
            let params = initial_params(&graph, &cfg, embeddings.as_deref())?;
            let (params, report) = if cfg.disable_pretrain {
                log::info!("pre-training disabled by config; storing initial parameters");
                (params, Default::default())
            } else {
                pretrain(&graph, &schema, params, &cfg)?
            };
            save_checkpoint(&out, &Checkpoint::new(cfg, params, report.batches))?;
            println!(
                "pre-training done: {} batches, final loss {:.6}",
                report.batches,
                report.epoch_losses.last().copied().unwrap_or(0.0)
            );
            Ok(())
        }
        Command::Finetune {
            common,
            checkpoint,
            split_dir,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let cfg = checkpoint_config(&ckpt, &common)?;
            let graph = load_graph(&common)?;
            let split = obtain_split(&graph, &cfg, split_dir.as_deref())?;
            let (params, report) = finetune(&graph, ckpt.params, &split.train, &cfg)?;
            save_checkpoint(&out, &Checkpoint::new(cfg, params, ckpt.pretrain_batches))?;
            println!(
                "fine-tuning done: {} train triples, {} skipped, final loss {:.6}",
                split.train.len(),
                report.skipped_triples,
                report.epoch_losses.last().copied().unwrap_or(0.0)
            );
            Ok(())
        }
        Command::Evaluate {
            common,
            checkpoint,
            split_dir,
            split,
            threshold,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut cfg = checkpoint_config(&ckpt, &common)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            let graph = load_graph(&common)?;
            let edge_split = obtain_split(&graph, &cfg, split_dir.as_deref())?;
            let (positives, negatives) = split_part(&edge_split, &split)?;
            let report = evaluate(&ckpt.params, &graph, positives, negatives, &cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json)?;
            }
            Ok(())
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            which,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let cfg = checkpoint_config(&ckpt, &common)?;
            let graph = load_graph(&common)?;
            let view: EmbeddingView = which.parse()?;
            export_embeddings(&ckpt.params, &graph, view, &cfg, &out)?;
            println!("wrote {which} embeddings for {} entities", graph.entity_count());
            Ok(())
        }
        Command::ExportHistogram {
            common,
            checkpoint,
            split_dir,
            split,
            bins,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let cfg = checkpoint_config(&ckpt, &common)?;
            let graph = load_graph(&common)?;
            let edge_split = obtain_split(&graph, &cfg, split_dir.as_deref())?;
            let (positives, negatives) = split_part(&edge_split, &split)?;
            let report = evaluate(&ckpt.params, &graph, positives, negatives, &cfg)?;
            export_score_histogram(&report.scores, &report.labels, bins, &out)?;
            println!("wrote {bins}-bin histogram over {} scores", report.scores.len());
            Ok(())
        }
        Command::RunAll { common, out_dir } => run_all(&common, &out_dir),
    }
}

fn run_all(common: &Common, out_dir: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    std::fs::create_dir_all(out_dir)?;
    let graph = load_graph(common)?;
    log::info!(
        "graph: {} entities, {} relations, {} types, {} triples",
        graph.entity_count(),
        graph.relation_count(),
        graph.type_count(),
        graph.triples().len()
    );

    let split = obtain_split(&graph, &cfg, Some(&out_dir.join("split")))?;
    let schema = schema_from_graph(&graph, cfg.alpha)?;
    write_schema(&graph, &schema, out_dir.join("schema.tsv"))?;
    log::info!("schema: {} members at alpha {}", schema.len(), cfg.alpha);

    let mut params = initial_params(&graph, &cfg, None)?;
    write_embedding_table(&graph, &params.entity_table, out_dir.join("structure.tsv"))?;

    let mut pretrain_batches = 0;
    if cfg.disable_pretrain {
        log::info!("pre-training disabled; fine-tuning from structure embeddings");
    } else {
        let (p, report) = pretrain(&graph, &schema, params, &cfg)?;
        params = p;
        pretrain_batches = report.batches;
        save_checkpoint(
            out_dir.join("pretrained.json"),
            &Checkpoint::new(cfg.clone(), params.clone(), pretrain_batches),
        )?;
    }

    let (params, ft_report) = finetune(&graph, params, &split.train, &cfg)?;
    save_checkpoint(
        out_dir.join("finetuned.json"),
        &Checkpoint::new(cfg.clone(), params.clone(), pretrain_batches),
    )?;
    log::info!("fine-tuning skipped {} triples", ft_report.skipped_triples);

    let mut metrics = serde_json::Map::new();
    for (name, positives, negatives) in [
        ("valid", &split.valid[..], split.valid_negatives()),
        ("test", &split.test[..], split.test_negatives()),
    ] {
        if positives.is_empty() {
            continue;
        }
        let report = evaluate(&params, &graph, positives, negatives, &cfg)?;
        if name == "test" {
            export_score_histogram(
                &report.scores,
                &report.labels,
                20,
                out_dir.join("histogram.csv"),
            )?;
        }
        metrics.insert(name.to_string(), serde_json::to_value(&report)?);
    }
    export_embeddings(&params, &graph, EmbeddingView::Structure, &cfg, out_dir.join("structure_final.tsv"))?;
    export_embeddings(&params, &graph, EmbeddingView::Context, &cfg, out_dir.join("context_final.tsv"))?;

    let json = serde_json::to_string_pretty(&serde_json::Value::Object(metrics))?;
    std::fs::write(out_dir.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}
