//! Structure-view and context-view entity encoders.
//!
//! The context-view encoder runs `k` stacked translation layers
//! `H^{i+1} = Enc(W_sc H^i A^i + H^i)` where `A^i` is a multi-head
//! attention matrix over the subgraph nodes and `Enc` is an affine map
//! followed by ELU. Per-node context embeddings are the elementwise mean of
//! the layer outputs, which keeps the context view in the same `d`-space as
//! the structure view so one projection head can serve both.

mod skipgram;

pub use skipgram::{pretrain_structure_embeddings, StructureConfig};

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::tensor::{Tape, Tensor, VarId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Non-parameterized entity-relation composition.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    Subtract,
    Multiply,
    Correlate,
}

impl std::str::FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subtract" => Ok(Composition::Subtract),
            "multiply" => Ok(Composition::Multiply),
            "correlate" => Ok(Composition::Correlate),
            other => Err(Error::Config(format!(
                "unknown composition {other:?}; expected subtract|multiply|correlate"
            ))),
        }
    }
}

/// Weights of one contextual translation layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerParams {
    /// `[d, d]` translation weight.
    pub w_sc: Tensor,
    /// Per-head `[d, d/heads]` query maps.
    pub attn_q: Vec<Tensor>,
    /// Per-head `[d, d/heads]` key maps.
    pub attn_k: Vec<Tensor>,
    /// `[d, d]` affine weight of the Enc MLP.
    pub enc_w: Tensor,
    /// `[d]` affine bias of the Enc MLP.
    pub enc_b: Tensor,
}

/// Shared two-layer projection head used by both views.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Every trained tensor of the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    /// `[|E|, d]` structure-view entity embeddings.
    pub entity_table: Tensor,
    /// `[|R|, d]` relation embeddings.
    pub relation_table: Tensor,
    pub layers: Vec<LayerParams>,
    pub proj: ProjParams,
    pub dim: usize,
    pub proj_dim: usize,
    pub heads: usize,
}

impl ModelParams {
    /// Random initialization; the entity table is typically overwritten by
    /// structure pre-training before use.
    pub fn init(
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        proj_dim: usize,
        num_layers: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "embedding dim {dim} must be divisible by heads {heads}"
            )));
        }
        if num_layers == 0 {
            return Err(Error::Config("need at least one translation layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_dim = dim / heads;
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            // The translation branch starts small so the residual path (and
            // with it the input embedding geometry) dominates at init.
            let mut w_sc = xavier(&mut rng, dim, dim);
            for v in w_sc.data_mut() {
                *v *= 0.2;
            }
            layers.push(LayerParams {
                w_sc,
                attn_q: (0..heads).map(|_| xavier(&mut rng, dim, head_dim)).collect(),
                attn_k: (0..heads).map(|_| xavier(&mut rng, dim, head_dim)).collect(),
                enc_w: near_identity(&mut rng, dim),
                enc_b: Tensor::zeros(&[dim]),
            });
        }
        let proj = ProjParams {
            w1: xavier(&mut rng, dim, proj_dim),
            b1: Tensor::zeros(&[proj_dim]),
            w2: xavier(&mut rng, proj_dim, proj_dim),
            b2: Tensor::zeros(&[proj_dim]),
        };
        let scale = 1.0 / (dim as f64).sqrt();
        Ok(ModelParams {
            entity_table: uniform(&mut rng, &[entity_count, dim], scale),
            relation_table: uniform(&mut rng, &[relation_count, dim], scale),
            layers,
            proj,
            dim,
            proj_dim,
            heads,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// All parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = vec![&self.entity_table, &self.relation_table];
        for l in &self.layers {
            out.push(&l.w_sc);
            out.extend(l.attn_q.iter());
            out.extend(l.attn_k.iter());
            out.push(&l.enc_w);
            out.push(&l.enc_b);
        }
        out.extend([&self.proj.w1, &self.proj.b1, &self.proj.w2, &self.proj.b2]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.entity_table, &mut self.relation_table];
        for l in &mut self.layers {
            out.push(&mut l.w_sc);
            out.extend(l.attn_q.iter_mut());
            out.extend(l.attn_k.iter_mut());
            out.push(&mut l.enc_w);
            out.push(&mut l.enc_b);
        }
        out.extend([
            &mut self.proj.w1,
            &mut self.proj.b1,
            &mut self.proj.w2,
            &mut self.proj.b2,
        ]);
        out
    }

    /// Rebuild a structurally identical parameter set from a flat tensor
    /// list in canonical order (used by gradient checking).
    pub fn with_tensors(&self, tensors: &[Tensor]) -> Result<Self> {
        if tensors.len() != self.tensors().len() {
            return Err(Error::Shape {
                op: "with_tensors",
                details: format!("expected {} tensors, got {}", self.tensors().len(), tensors.len()),
            });
        }
        let mut params = self.clone();
        for (dst, src) in params.tensors_mut().into_iter().zip(tensors) {
            *dst = src.clone();
        }
        Ok(params)
    }

    /// Register every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let ids: Vec<VarId> = self.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        ParamVars::from_leaf_ids(self, &ids)
    }
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
    Tensor::new(shape.to_vec(), data).expect("uniform init shape")
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, &[rows, cols], limit)
}

/// Identity plus small noise: keeps the residual path informative at
/// initialization while staying trainable.
fn near_identity<R: Rng>(rng: &mut R, dim: usize) -> Tensor {
    let mut t = uniform(rng, &[dim, dim], 0.05);
    for i in 0..dim {
        t.data_mut()[i * dim + i] += 1.0;
    }
    t
}

/// Tape handles to one layer's weights.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub w_sc: VarId,
    pub attn_q: Vec<VarId>,
    pub attn_k: Vec<VarId>,
    pub enc_w: VarId,
    pub enc_b: VarId,
}

#[derive(Clone, Debug)]
pub struct ProjVars {
    pub w1: VarId,
    pub b1: VarId,
    pub w2: VarId,
    pub b2: VarId,
}

/// Tape handles to every model parameter, in the same canonical order as
/// [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub entity_table: VarId,
    pub relation_table: VarId,
    pub layers: Vec<LayerVars>,
    pub proj: ProjVars,
    pub heads: usize,
    all: Vec<VarId>,
}

impl ParamVars {
    /// Reassemble structured handles from leaf ids in canonical order.
    pub fn from_leaf_ids(template: &ModelParams, ids: &[VarId]) -> ParamVars {
        let heads = template.heads;
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("leaf id list matches template");
        let entity_table = next();
        let relation_table = next();
        let mut layers = Vec::with_capacity(template.layers.len());
        for _ in 0..template.layers.len() {
            let w_sc = next();
            let attn_q: Vec<VarId> = (0..heads).map(|_| next()).collect();
            let attn_k: Vec<VarId> = (0..heads).map(|_| next()).collect();
            layers.push(LayerVars {
                w_sc,
                attn_q,
                attn_k,
                enc_w: next(),
                enc_b: next(),
            });
        }
        let proj = ProjVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        ParamVars {
            entity_table,
            relation_table,
            layers,
            proj,
            heads,
            all: ids.to_vec(),
        }
    }

    pub fn all(&self) -> &[VarId] {
        &self.all
    }
}

/// Handles to one encoded context.
#[derive(Clone, Debug)]
pub struct ContextVars {
    /// `[N, d]` context-view embeddings, one row per subgraph node.
    pub nodes: VarId,
    /// Per-layer `[N, N]` attention matrices.
    pub attention: Vec<VarId>,
}

/// Mean-over-heads scaled dot-product attention over node embeddings.
///
/// `h_rows` is `[N, d]`; the result is a row-stochastic `[N, N]` matrix.
pub fn attention_matrix(
    tape: &mut Tape,
    h_rows: VarId,
    layer: &LayerVars,
    heads: usize,
) -> Result<VarId> {
    let d = tape.value(h_rows).shape()[1];
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.matmul(h_rows, layer.attn_q[h])?;
        let k = tape.matmul(h_rows, layer.attn_k[h])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, scale)?;
        per_head.push(tape.softmax_rows(scaled)?);
    }
    tape.mean_vars(&per_head)
}

/// One translation layer: `Enc(W_sc H A + H)` with `H` in `[d, N]`
/// orientation and `Enc` an affine map plus ELU.
pub fn contextual_translation(
    tape: &mut Tape,
    h_cols: VarId,
    attention: VarId,
    layer: &LayerVars,
) -> Result<VarId> {
    let translated = tape.matmul(layer.w_sc, h_cols)?;
    let mixed = tape.matmul(translated, attention)?;
    let residual = tape.add(mixed, h_cols)?;
    let affine = tape.matmul(layer.enc_w, residual)?;
    let biased = tape.add_col_bias(affine, layer.enc_b)?;
    tape.elu(biased)
}

/// Run the stacked translation layers over initial node embeddings
/// (`[N, d]`, one row per node) and aggregate layer outputs by elementwise
/// mean into per-node context embeddings.
pub fn encode_context(
    tape: &mut Tape,
    h0_rows: VarId,
    layers: &[LayerVars],
    heads: usize,
) -> Result<ContextVars> {
    let mut h_rows = h0_rows;
    let mut outputs = Vec::with_capacity(layers.len());
    let mut attention = Vec::with_capacity(layers.len());
    for layer in layers {
        let attn = attention_matrix(tape, h_rows, layer, heads)?;
        let h_cols = tape.transpose(h_rows)?;
        let out_cols = contextual_translation(tape, h_cols, attn, layer)?;
        h_rows = tape.transpose(out_cols)?;
        outputs.push(h_rows);
        attention.push(attn);
    }
    let nodes = tape.mean_vars(&outputs)?;
    Ok(ContextVars { nodes, attention })
}

/// Shared projection head: `W2 elu(W1 x + b1) + b2` on a `[d]` vector.
pub fn project(tape: &mut Tape, x: VarId, proj: &ProjVars) -> Result<VarId> {
    let d = tape.value(x).len();
    let dp = tape.value(proj.b1).len();
    let row = tape.reshape(x, &[1, d])?;
    let hidden = tape.matmul(row, proj.w1)?;
    let b1 = tape.reshape(proj.b1, &[1, dp])?;
    let hidden = tape.add(hidden, b1)?;
    let hidden = tape.elu(hidden)?;
    let out = tape.matmul(hidden, proj.w2)?;
    let b2 = tape.reshape(proj.b2, &[1, dp])?;
    let out = tape.add(out, b2)?;
    tape.reshape(out, &[dp])
}

/// Merge an entity embedding with a relation embedding.
pub fn compose(tape: &mut Tape, h: VarId, z: VarId, op: Composition) -> Result<VarId> {
    match op {
        Composition::Subtract => tape.sub(h, z),
        Composition::Multiply => tape.mul(h, z),
        Composition::Correlate => tape.cyclic_correlation(h, z),
    }
}

/// Value-level context encoding (fresh tape, forward only).
pub fn encode_context_values(
    params: &ModelParams,
    h0: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let h0v = tape.leaf(h0.clone());
    let ctx = encode_context(&mut tape, h0v, &pv.layers, params.heads)?;
    let nodes = tape.value(ctx.nodes).clone();
    let attn = ctx.attention.iter().map(|&a| tape.value(a).clone()).collect();
    Ok((nodes, attn))
}

/// Read an embedding file (`entity \t v1 v2 ... vd` rows) into a table
/// aligned with the graph's dense entity ids. Every graph entity must be
/// covered at the expected dimension; unknown entities are ignored.
pub fn load_structure_embeddings(
    path: impl AsRef<Path>,
    graph: &KnowledgeGraph,
    dim: usize,
) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut table = Tensor::zeros(&[graph.entity_count(), dim]);
    let mut covered = vec![false; graph.entity_count()];
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "expected 'entity \\t values'".into(),
        })?;
        let Some(id) = graph.entity_id(name) else {
            continue;
        };
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad float {v:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Validation(format!(
                "embedding for {name:?} has dimension {}, expected {dim}",
                values.len()
            )));
        }
        table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
        covered[id] = true;
    }
    if let Some(missing) = covered.iter().position(|&c| !c) {
        return Err(Error::Validation(format!(
            "embedding file misses entity {:?}",
            graph.entity_name(missing)
        )));
    }
    Ok(table)
}

/// Write an embedding table in the import format.
pub fn write_embedding_table(
    graph: &KnowledgeGraph,
    table: &Tensor,
    path: impl AsRef<Path>,
) -> Result<()> {
    let dim = table.shape()[1];
    let mut out = String::new();
    for e in 0..graph.entity_count() {
        let _ = write!(out, "{}", graph.entity_name(e));
        for (i, v) in table.data()[e * dim..(e + 1) * dim].iter().enumerate() {
            let sep = if i == 0 { '\t' } else { ' ' };
            let _ = write!(out, "{sep}{v}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::toy_graph;

    fn tiny_params(dim: usize, heads: usize, layers: usize, seed: u64) -> ModelParams {
        ModelParams::init(6, 3, dim, dim, layers, heads, seed).unwrap()
    }

    fn zeroed_layer(params: &mut ModelParams) {
        for l in &mut params.layers {
            l.w_sc = Tensor::zeros(l.w_sc.shape());
            let d = l.enc_b.len();
            let mut eye = Tensor::zeros(&[d, d]);
            for i in 0..d {
                eye.data_mut()[i * d + i] = 1.0;
            }
            l.enc_w = eye;
            l.enc_b = Tensor::zeros(&[d]);
        }
    }

    #[test]
    fn attention_singleton_is_one() {
        let params = tiny_params(4, 2, 1, 0);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let h = tape.leaf(Tensor::new(vec![1, 4], vec![0.3, -0.1, 0.7, 0.2]).unwrap());
        let a = attention_matrix(&mut tape, h, &pv.layers[0], 2).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0]);
    }

    #[test]
    fn attention_identical_rows_are_uniform() {
        let params = tiny_params(4, 2, 1, 1);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let row = [0.4, -0.2, 0.9, 0.1];
        let h = tape
            .leaf(Tensor::from_rows(&[&row, &row, &row]).unwrap());
        let a = attention_matrix(&mut tape, h, &pv.layers[0], 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((tape.value(a).at(i, j) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_two_nodes_matches_hand_arithmetic() {
        // d = 2, one head, hand-set Q/K maps.
        let mut params = tiny_params(2, 1, 1, 2);
        params.layers[0].attn_q[0] = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        params.layers[0].attn_k[0] = Tensor::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let h = [[1.0, 0.0], [0.0, 2.0]];
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let hv = tape.leaf(Tensor::from_rows(&[&h[0], &h[1]]).unwrap());
        let a = attention_matrix(&mut tape, hv, &pv.layers[0], 1).unwrap();
        // Q = H, K = 0.5 H; scores = Q K^T / sqrt(2).
        let s = 0.5 / 2f64.sqrt();
        let scores = [[s * 1.0, 0.0], [0.0, s * 4.0]];
        for i in 0..2 {
            let m = scores[i][0].max(scores[i][1]);
            let e0 = (scores[i][0] - m).exp();
            let e1 = (scores[i][1] - m).exp();
            let sum = e0 + e1;
            assert!((tape.value(a).at(i, 0) - e0 / sum).abs() < 1e-9);
            assert!((tape.value(a).at(i, 1) - e1 / sum).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_rows_always_sum_to_one() {
        for seed in 0..5 {
            let params = tiny_params(8, 4, 2, seed);
            let mut tape = Tape::new();
            let pv = params.bind(&mut tape);
            let h = tape.rows(pv.entity_table, &[0, 1, 2, 3]).unwrap();
            for layer in &pv.layers {
                let a = attention_matrix(&mut tape, h, layer, 4).unwrap();
                let v = tape.value(a);
                for i in 0..4 {
                    let sum: f64 = v.row(i).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    assert!(v.row(i).iter().all(|&x| x > 0.0 && x < 1.0));
                }
            }
        }
    }

    #[test]
    fn translation_residual_only_path_is_identity() {
        let mut params = tiny_params(3, 1, 1, 3);
        zeroed_layer(&mut params);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        // Nonnegative H keeps ELU in its linear region.
        let h = tape.leaf(Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.0, 0.5, 1.2, 0.3]).unwrap());
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        let out = contextual_translation(&mut tape, h, a, &pv.layers[0]).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(h).data());
    }

    #[test]
    fn translation_single_node_hand_arithmetic() {
        // d = 1: everything is scalar arithmetic.
        let mut params = ModelParams::init(2, 1, 1, 1, 1, 1, 4).unwrap();
        params.layers[0].w_sc = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        params.layers[0].enc_w = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        params.layers[0].enc_b = Tensor::vector(&[0.25]);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let h = tape.leaf(Tensor::new(vec![1, 1], vec![0.5]).unwrap());
        let a = tape.leaf(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let out = contextual_translation(&mut tape, h, a, &pv.layers[0]).unwrap();
        // Enc(2*0.5*1 + 0.5) = elu(3*1.5 + 0.25) = 4.75 (positive region).
        assert!((tape.value(out).data()[0] - 4.75).abs() < 1e-9);
    }

    #[test]
    fn translation_uniform_attention_keeps_equal_columns_equal() {
        let params = tiny_params(2, 1, 1, 5);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let h = tape.leaf(Tensor::new(vec![2, 3], vec![0.7, 0.7, 0.7, -0.2, -0.2, -0.2]).unwrap());
        let third = 1.0 / 3.0;
        let a = tape.leaf(Tensor::new(vec![3, 3], vec![third; 9]).unwrap());
        let out = contextual_translation(&mut tape, h, a, &pv.layers[0]).unwrap();
        let v = tape.value(out);
        for i in 0..2 {
            assert!((v.at(i, 0) - v.at(i, 1)).abs() < 1e-12);
            assert!((v.at(i, 1) - v.at(i, 2)).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_context_single_layer_equals_its_output() {
        let params = tiny_params(4, 2, 1, 6);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let h0 = tape.rows(pv.entity_table, &[0, 1, 2]).unwrap();
        let ctx = encode_context(&mut tape, h0, &pv.layers, 2).unwrap();
        // With k = 1 the mean over layer outputs is the single output.
        let attn = attention_matrix(&mut tape, h0, &pv.layers[0], 2).unwrap();
        let h_cols = tape.transpose(h0).unwrap();
        let out_cols = contextual_translation(&mut tape, h_cols, attn, &pv.layers[0]).unwrap();
        let expect = tape.transpose(out_cols).unwrap();
        let (a, b) = (tape.value(ctx.nodes).clone(), tape.value(expect).clone());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_context_collapses_to_input_when_layers_are_inert() {
        let mut params = tiny_params(3, 1, 3, 7);
        zeroed_layer(&mut params);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let h0 = tape.leaf(Tensor::new(vec![2, 3], vec![0.5, 0.1, 0.9, 0.2, 0.0, 0.4]).unwrap());
        let ctx = encode_context(&mut tape, h0, &pv.layers, 1).unwrap();
        // Mean of k identical layer outputs; equal up to summation rounding.
        for (a, b) in tape.value(ctx.nodes).data().iter().zip(tape.value(h0).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_context_is_permutation_equivariant() {
        let params = tiny_params(4, 2, 2, 8);
        let rows = [
            [0.5, -0.1, 0.3, 0.9],
            [-0.7, 0.2, 0.0, 0.1],
            [0.4, 0.4, -0.3, 0.6],
        ];
        let h_a = Tensor::from_rows(&[&rows[0], &rows[1], &rows[2]]).unwrap();
        let h_b = Tensor::from_rows(&[&rows[2], &rows[0], &rows[1]]).unwrap();
        let (out_a, _) = encode_context_values(&params, &h_a).unwrap();
        let (out_b, _) = encode_context_values(&params, &h_b).unwrap();
        // Row i of the permuted input maps to the same vector.
        for (orig, perm) in [(0usize, 1usize), (1, 2), (2, 0)] {
            for j in 0..4 {
                assert!((out_a.at(orig, j) - out_b.at(perm, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn toy_anchor_context_regression() {
        // Golden values pinned from the first verified run (gradient-checked
        // encoder, fixed seed).
        let g = toy_graph();
        let params = ModelParams::init(g.entity_count(), g.relation_count(), 4, 4, 2, 2, 42)
            .unwrap();
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let a1 = g.entity_id("a1").unwrap();
        let sub = crate::subgraph::full_graph_subgraph(&g, a1);
        let h0 = tape.rows(pv.entity_table, &sub.nodes).unwrap();
        let ctx = encode_context(&mut tape, h0, &pv.layers, 2).unwrap();
        let anchor = tape.value(ctx.nodes).row(0).to_vec();
        for (a, e) in anchor.iter().zip(TOY_CONTEXT_GOLDEN) {
            assert!((a - e).abs() < 1e-9, "got {anchor:?}");
        }
    }

    const TOY_CONTEXT_GOLDEN: [f64; 4] = [
        -0.13214364343353835,
        -0.3283800520481704,
        -0.014123454822002834,
        0.4309585951125251,
    ];

    #[test]
    fn project_zero_weights_give_zero() {
        let mut params = tiny_params(3, 1, 1, 9);
        params.proj = ProjParams {
            w1: Tensor::zeros(&[3, 3]),
            b1: Tensor::zeros(&[3]),
            w2: Tensor::zeros(&[3, 3]),
            b2: Tensor::zeros(&[3]),
        };
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(&[1.0, -2.0, 3.0]));
        let p = project(&mut tape, x, &pv.proj).unwrap();
        assert_eq!(tape.value(p).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn project_hand_weights() {
        let mut params = tiny_params(2, 1, 1, 10);
        params.proj = ProjParams {
            w1: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            b1: Tensor::vector(&[0.5, -3.0]),
            w2: Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap(),
            b2: Tensor::vector(&[0.1, 0.1]),
        };
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(&[1.0, 1.0]));
        let p = project(&mut tape, x, &pv.proj).unwrap();
        // hidden = elu([1.5, -2]) = [1.5, e^-2 - 1]; out = 2*hidden + 0.1.
        let expect = [3.1, 2.0 * ((-2.0f64).exp() - 1.0) + 0.1];
        for (a, e) in tape.value(p).data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_weights_are_shared_between_views() {
        let params = tiny_params(4, 2, 1, 11);
        let h = Tensor::vector(&[0.3, -0.5, 0.7, 0.2]);
        let c = Tensor::vector(&[-0.1, 0.6, 0.4, -0.8]);
        let run = |p: &ModelParams| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let pv = p.bind(&mut tape);
            let hv = tape.leaf(h.clone());
            let cv = tape.leaf(c.clone());
            let ph = project(&mut tape, hv, &pv.proj).unwrap();
            let pc = project(&mut tape, cv, &pv.proj).unwrap();
            (tape.value(ph).data().to_vec(), tape.value(pc).data().to_vec())
        };
        let (h0, c0) = run(&params);
        let mut perturbed = params.clone();
        perturbed.proj.w1.data_mut()[0] += 0.25;
        let (h1, c1) = run(&perturbed);
        assert_ne!(h0, h1);
        assert_ne!(c0, c1);
    }

    #[test]
    fn compose_identities() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::vector(&[0.5, -1.5, 2.0]));
        let ones = tape.leaf(Tensor::vector(&[1.0, 1.0, 1.0]));
        let m = compose(&mut tape, h, ones, Composition::Multiply).unwrap();
        assert_eq!(tape.value(m).data(), tape.value(h).data());

        let s = compose(&mut tape, h, h, Composition::Subtract).unwrap();
        assert_eq!(tape.value(s).data(), &[0.0, 0.0, 0.0]);

        let a = tape.leaf(Tensor::vector(&[1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(&[3.0, 4.0]));
        let c = compose(&mut tape, a, b, Composition::Correlate).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0, 10.0]);
    }

    #[test]
    fn unknown_composition_is_a_config_error() {
        assert!("circular".parse::<Composition>().is_err());
        assert_eq!("multiply".parse::<Composition>().unwrap(), Composition::Multiply);
    }

    #[test]
    fn embedding_file_round_trip() {
        let g = toy_graph();
        let params = ModelParams::init(g.entity_count(), 2, 4, 4, 1, 1, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        write_embedding_table(&g, &params.entity_table, &path).unwrap();
        let loaded = load_structure_embeddings(&path, &g, 4).unwrap();
        assert_eq!(loaded, params.entity_table);
    }

    #[test]
    fn embedding_file_missing_entity_is_named() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        std::fs::write(&path, "a1\t1 2 3 4\na2\t1 2 3 4\nb1\t1 2 3 4\nb2\t1 2 3 4\n").unwrap();
        let err = load_structure_embeddings(&path, &g, 4).unwrap_err();
        assert!(err.to_string().contains("c1"), "got {err}");
    }

    #[test]
    fn embedding_file_wrong_dimension() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        std::fs::write(&path, "a1\t1 2 3\n").unwrap();
        let err = load_structure_embeddings(&path, &g, 4).unwrap_err();
        assert!(err.to_string().contains("dimension 3"), "got {err}");
    }

    #[test]
    fn encoder_gradients_pass_finite_differences() {
        let params = tiny_params(4, 2, 2, 13);
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let err = crate::tensor::check_gradients(
            |tape, ids| {
                let pv = ParamVars::from_leaf_ids(&params, ids);
                let h0 = tape.rows(pv.entity_table, &[0, 2, 4])?;
                let ctx = encode_context(tape, h0, &pv.layers, 2)?;
                let anchor = tape.row(ctx.nodes, 0)?;
                let other = tape.row(ctx.nodes, 2)?;
                let p = project(tape, anchor, &pv.proj)?;
                let q = project(tape, other, &pv.proj)?;
                let cos = tape.cosine(p, q)?;
                let z = tape.row(pv.relation_table, 1)?;
                let composed = compose(tape, anchor, z, Composition::Correlate)?;
                let d = tape.dot(composed, other)?;
                let s = tape.sigmoid(d)?;
                tape.add(cos, s)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }
}
