//! Scratch tuning harness for the planted-schema benchmark (not shipped).

use kgcl::encoders::{pretrain_structure_embeddings, ModelParams};
use kgcl::eval::evaluate;
use kgcl::graph::split_edges;
use kgcl::schema::schema_from_graph;
use kgcl::synth::{planted_schema_graph, PlantedConfig};
use kgcl::training::{finetune, pretrain, TrainConfig};
use std::time::Instant;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn bench_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.dim = 32;
    cfg.proj_dim = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.tau = 0.8;
    cfg.lambda = 0.5;
    cfg.batch_pretrain = 32;
    cfg.batch_finetune = 64;
    cfg.epochs_pretrain = env_or("PT_EPOCHS", 10);
    cfg.epochs_finetune = env_or("FT_EPOCHS", 10);
    cfg.lr_pretrain = env_or("PT_LR", 3e-3);
    cfg.lr_finetune = env_or("FT_LR", 3e-3);
    cfg.max_nodes = 6;
    cfg.walk_length = 20;
    cfg.alpha = 1;
    cfg.seed = seed;
    cfg.structure.dim = 32;
    cfg.structure.walks_per_node = env_or("S_WALKS", 10);
    cfg.structure.walk_length = env_or("S_LEN", 40);
    cfg.structure.epochs = env_or("S_EPOCHS", 3);
    cfg
}

fn run(tag: &str, seed: u64, mutate: &dyn Fn(&mut TrainConfig)) -> (f64, f64) {
    let mut cfg = bench_config(seed);
    mutate(&mut cfg);
    let graph = planted_schema_graph(&PlantedConfig::default(), seed);
    let split = split_edges(&graph, (0.8, 0.1, 0.1), seed).unwrap();
    let schema = schema_from_graph(&graph, cfg.alpha).unwrap();
    let mut params = ModelParams::init(
        graph.entity_count(),
        graph.relation_count(),
        cfg.dim,
        cfg.proj_dim,
        cfg.layers,
        cfg.heads,
        cfg.seed,
    )
    .unwrap();
    params.entity_table = pretrain_structure_embeddings(&graph, &cfg.structure, cfg.seed);
    let t0 = Instant::now();
    let params = if cfg.disable_pretrain {
        params
    } else {
        pretrain(&graph, &schema, params, &cfg).unwrap().0
    };
    let t1 = t0.elapsed();
    if std::env::var("PRE_EVAL").is_ok() {
        let pre = evaluate(&params, &graph, &split.test, split.test_negatives(), &cfg).unwrap();
        eprintln!("{tag} seed {seed}: PRE-FT auc {:.4} f1 {:.4}", pre.auc_roc, pre.micro_f1);
    }
    let (params, ft) = finetune(&graph, params, &split.train, &cfg).unwrap();
    let t2 = t0.elapsed();
    let report = evaluate(&params, &graph, &split.test, split.test_negatives(), &cfg).unwrap();
    eprintln!(
        "{tag} seed {seed}: pretrain {:.1?} finetune {:.1?} skipped {} auc {:.4} f1 {:.4}",
        t1,
        t2 - t1,
        ft.skipped_triples,
        report.auc_roc,
        report.micro_f1
    );
    (report.auc_roc, report.micro_f1)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("full");
    let seeds = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3u64);
    for seed in 0..seeds {
        match mode {
            "full" => run("full", seed, &|_| {}),
            "nopt" => run("nopt", seed, &|c| c.disable_pretrain = true),
            "ctx" => run("ctx ", seed, &|c| c.disable_global = true),
            "glob" => run("glob", seed, &|c| c.disable_contextual = true),
            "rel" => run("rel ", seed, &|c| {
                c.negative_mode = kgcl::training::NegativeMode::Relation
            }),
            other => panic!("unknown mode {other}"),
        };
    }
}
