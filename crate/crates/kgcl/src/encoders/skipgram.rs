//! Structure-view embeddings: skip-gram with negative sampling over uniform
//! random walks (the random-walk option for the global entity encoder).

use crate::graph::KnowledgeGraph;
use crate::tensor::{sigmoid_scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureConfig {
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            dim: 128,
            walks_per_node: 10,
            walk_length: 80,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

/// Train structure-view entity embeddings; deterministic under `seed`.
/// With zero epochs the table equals its random initialization.
pub fn pretrain_structure_embeddings(
    graph: &KnowledgeGraph,
    cfg: &StructureConfig,
    seed: u64,
) -> Tensor {
    let n = graph.entity_count();
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // word2vec-style init: input vectors small uniform, output vectors zero.
    let mut table: Vec<f64> = (0..n * d)
        .map(|_| (rng.random::<f64>() - 0.5) / d as f64)
        .collect();
    let mut context: Vec<f64> = vec![0.0; n * d];

    let mut order: Vec<usize> = (0..n).collect();
    let mut walk: Vec<usize> = Vec::with_capacity(cfg.walk_length);
    let mut acc = vec![0.0; d];

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &start in &order {
            for _ in 0..cfg.walks_per_node {
                walk.clear();
                walk.push(start);
                let mut current = start;
                for _ in 1..cfg.walk_length {
                    let edges = graph.neighbors(current);
                    if edges.is_empty() {
                        break;
                    }
                    current = edges[rng.random_range(0..edges.len())].neighbor;
                    walk.push(current);
                }
                for i in 0..walk.len() {
                    let center = walk[i];
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window).min(walk.len() - 1);
                    for j in lo..=hi {
                        if j == i || walk[j] == center {
                            continue;
                        }
                        train_pair(
                            &mut table,
                            &mut context,
                            center,
                            walk[j],
                            d,
                            n,
                            cfg,
                            &mut rng,
                            &mut acc,
                        );
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, d], table).expect("structure table shape")
}

#[allow(clippy::too_many_arguments)]
fn train_pair<R: Rng>(
    table: &mut [f64],
    context: &mut [f64],
    center: usize,
    target: usize,
    d: usize,
    n: usize,
    cfg: &StructureConfig,
    rng: &mut R,
    acc: &mut [f64],
) {
    acc.fill(0.0);
    let center_off = center * d;
    for k in 0..=cfg.negatives {
        let (sample, label) = if k == 0 {
            (target, 1.0)
        } else {
            let s = rng.random_range(0..n);
            if s == target {
                continue;
            }
            (s, 0.0)
        };
        let sample_off = sample * d;
        let mut f = 0.0;
        for i in 0..d {
            f += table[center_off + i] * context[sample_off + i];
        }
        let g = (label - sigmoid_scalar(f)) * cfg.lr;
        for i in 0..d {
            acc[i] += g * context[sample_off + i];
            context[sample_off + i] += g * table[center_off + i];
        }
    }
    for i in 0..d {
        table[center_off + i] += acc[i];
    }
}
