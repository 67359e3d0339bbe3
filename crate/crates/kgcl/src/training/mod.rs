//! The two training phases: contrastive pre-training over anchor contexts
//! and per-triple fine-tuning for link prediction.

mod config;
mod losses;

pub use config::{NegativeMode, TrainConfig};
pub use losses::{
    contextual_loss, finetune_loss, global_loss, joint_pretrain_loss, mean_scalars, triple_score,
    AnchorLosses, LOG_CLAMP,
};

use crate::encoders::{compose, encode_context, project, ModelParams, ParamVars};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::sampling::{
    self, corrupt_triple, push_prebatch, AnchorRecord, CorruptionSide, NegativeSource,
    PreBatchQueue,
};
use crate::schema::{context_schema, schema_key, SchemaKey, SchemaTensor};
use crate::subgraph::{
    random_walk_context, shortest_path_context, shortest_path_context_masked, ContextSubgraph,
};
use crate::tensor::{AdamState, Gradients, Tape, Tensor, VarId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Everything known about one anchor before encoding: its walk context, the
/// projected context schema, and the realized positive set.
#[derive(Debug, Clone)]
pub struct PreparedAnchor {
    pub entity: usize,
    pub subgraph: ContextSubgraph,
    pub schema_key: SchemaKey,
    pub types: Vec<usize>,
    pub positives: Vec<usize>,
}

/// Build the walk context and schema projection for one anchor.
pub fn prepare_anchor<R: Rng>(
    graph: &KnowledgeGraph,
    schema: &SchemaTensor,
    entity: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PreparedAnchor> {
    let subgraph = random_walk_context(graph, entity, cfg.max_nodes, cfg.walk_length, rng)?;
    let cs = context_schema(graph, schema, &subgraph);
    Ok(PreparedAnchor {
        entity,
        types: graph.types_of(entity).to_vec(),
        positives: sampling::positives(&subgraph, entity),
        schema_key: schema_key(&cs),
        subgraph,
    })
}

/// Order anchors into a batch stream. With bucketing on, anchors are grouped
/// by schema key and interleaved in small blocks so a batch contains both
/// same-schema pairs (intra-schema negatives) and different-schema anchors
/// (inter-schema negatives).
fn batch_stream<R: Rng>(prepared: &[PreparedAnchor], bucketing: bool, rng: &mut R) -> Vec<usize> {
    if !bucketing {
        return (0..prepared.len()).collect();
    }
    const BLOCK: usize = 4;
    let mut buckets: BTreeMap<&SchemaKey, Vec<usize>> = BTreeMap::new();
    for (i, pa) in prepared.iter().enumerate() {
        buckets.entry(&pa.schema_key).or_default().push(i);
    }
    let mut bucket_list: Vec<Vec<usize>> = buckets.into_values().collect();
    bucket_list.shuffle(rng);
    let mut cursors = vec![0usize; bucket_list.len()];
    let mut stream = Vec::with_capacity(prepared.len());
    loop {
        let mut progressed = false;
        for (b, bucket) in bucket_list.iter().enumerate() {
            let c = cursors[b];
            if c < bucket.len() {
                let end = (c + BLOCK).min(bucket.len());
                stream.extend_from_slice(&bucket[c..end]);
                cursors[b] = end;
                progressed = true;
            }
        }
        if !progressed {
            return stream;
        }
    }
}

struct EncodedAnchor {
    anchor_var: VarId,
    positive_vars: Vec<VarId>,
}

/// Encode a batch of anchors on the tape and build the per-anchor
/// contrastive losses plus detached records for the queue.
///
/// `relation_negatives` must be given exactly when the config selects
/// relation-level sampling; those negatives are consumed as structure-view
/// embeddings at both levels. The builder is deterministic in the inputs,
/// so gradient checks can re-run it under perturbed parameters.
pub fn build_pretrain_batch(
    tape: &mut Tape,
    pv: &ParamVars,
    prepared: &[PreparedAnchor],
    queue: &PreBatchQueue,
    relation_negatives: Option<&[Vec<usize>]>,
    cfg: &TrainConfig,
    batch_index: u64,
) -> Result<(Vec<AnchorLosses>, Vec<AnchorRecord>)> {
    // Encode every anchor's context.
    let mut encoded = Vec::with_capacity(prepared.len());
    for pa in prepared {
        let h0 = tape.rows(pv.entity_table, &pa.subgraph.nodes)?;
        let ctx = encode_context(tape, h0, &pv.layers, cfg.heads)?;
        let anchor_var = tape.row(ctx.nodes, 0)?;
        let positive_vars = pa
            .positives
            .iter()
            .map(|&p| {
                let idx = pa
                    .subgraph
                    .node_index(p)
                    .expect("positives are induced-subgraph tails");
                tape.row(ctx.nodes, idx)
            })
            .collect::<Result<Vec<_>>>()?;
        encoded.push(EncodedAnchor {
            anchor_var,
            positive_vars,
        });
    }

    // Detached records: these are what the queue stores and what the
    // samplers inspect.
    let records: Vec<AnchorRecord> = prepared
        .iter()
        .zip(&encoded)
        .map(|(pa, ea)| AnchorRecord {
            entity: pa.entity,
            schema_key: pa.schema_key.clone(),
            types: pa.types.clone(),
            positives: pa.positives.clone(),
            positive_embeddings: ea
                .positive_vars
                .iter()
                .map(|&v| tape.value(v).data().to_vec())
                .collect(),
            context_embedding: tape.value(ea.anchor_var).data().to_vec(),
            context_entities: pa.subgraph.nodes.clone(),
            batch_index,
        })
        .collect();

    let mut per_anchor = Vec::with_capacity(prepared.len());
    for (i, ea) in encoded.iter().enumerate() {
        let contextual = if cfg.disable_contextual {
            None
        } else {
            let neg_vars: Vec<VarId> = match relation_negatives {
                None => {
                    let intra = sampling::intra_schema_negatives(
                        &records,
                        queue,
                        i,
                        cfg.k1,
                        cfg.type_match,
                    );
                    intra
                        .iter()
                        .map(|neg| match neg.source {
                            NegativeSource::CurrentBatch { anchor, pos } => {
                                Ok(encoded[anchor].positive_vars[pos])
                            }
                            NegativeSource::Queue { .. } => {
                                Ok(tape.leaf(Tensor::vector(&neg.embedding)))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                Some(plans) => plans[i]
                    .iter()
                    .take(cfg.k1)
                    .map(|&e| tape.row(pv.entity_table, e))
                    .collect::<Result<Vec<_>>>()?,
            };
            Some(contextual_loss(
                tape,
                ea.anchor_var,
                &ea.positive_vars,
                &neg_vars,
                cfg.tau,
            )?)
        };

        let global = if cfg.disable_global {
            None
        } else {
            let anchor_proj = project(tape, ea.anchor_var, &pv.proj)?;
            let positive_projs = ea
                .positive_vars
                .iter()
                .map(|&p| project(tape, p, &pv.proj))
                .collect::<Result<Vec<_>>>()?;
            let neg_entities: Vec<usize> = match relation_negatives {
                None => sampling::inter_schema_negatives(&records, i, cfg.k2)
                    .iter()
                    .map(|n| n.entity)
                    .collect(),
                Some(plans) => plans[i].iter().take(cfg.k2).copied().collect(),
            };
            let neg_projs = neg_entities
                .iter()
                .map(|&e| {
                    let h = tape.row(pv.entity_table, e)?;
                    project(tape, h, &pv.proj)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(global_loss(
                tape,
                anchor_proj,
                &positive_projs,
                &neg_projs,
                cfg.tau,
            )?)
        };

        per_anchor.push(AnchorLosses { contextual, global });
    }
    Ok((per_anchor, records))
}

/// Relation-level negative plan for each anchor in a batch: type-matched
/// non-neighbors of the anchor, types taken from its positives.
fn relation_plans<R: Rng>(
    graph: &KnowledgeGraph,
    prepared: &[PreparedAnchor],
    cap: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    prepared
        .iter()
        .map(|pa| {
            let mut target_types: Vec<usize> = pa
                .positives
                .iter()
                .flat_map(|&p| graph.types_of(p).iter().copied())
                .collect();
            target_types.sort_unstable();
            target_types.dedup();
            let mut out = Vec::new();
            for ty in target_types {
                out.extend(sampling::relation_level_negatives(
                    graph, pa.entity, ty, cap, rng,
                ));
            }
            out.sort_unstable();
            out.dedup();
            out.truncate(cap);
            out
        })
        .collect()
}

fn apply_adam(
    params: &mut ModelParams,
    pv: &ParamVars,
    grads: &Gradients,
    adam: &mut AdamState,
    lr: f64,
    freeze_structure: bool,
) -> Result<()> {
    let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let gs: Vec<Tensor> = pv
        .all()
        .iter()
        .zip(&shapes)
        .map(|(&id, shape)| grads.get_or_zeros(id, shape))
        .collect();
    let mut tensors = params.tensors_mut();
    if freeze_structure {
        adam.step(&mut tensors[1..], &gs[1..], lr)
    } else {
        adam.step(&mut tensors, &gs, lr)
    }
}

/// Summary of one pre-training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    /// Anchors whose realized positive set was empty, summed over epochs.
    pub skipped_anchors: usize,
    pub batches: u64,
}

/// Contrastive pre-training. Per epoch: shuffle anchors (entities with at
/// least one outgoing edge), rebuild walk contexts, form (optionally
/// schema-bucketed) batches, minimize the joint loss with Adam, and push
/// each batch into the pre-batch queue. Deterministic under the config seed.
pub fn pretrain(
    graph: &KnowledgeGraph,
    schema: &SchemaTensor,
    mut params: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, PretrainReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let candidates: Vec<usize> = (0..graph.entity_count())
        .filter(|&e| graph.neighbors(e).iter().any(|edge| edge.outgoing))
        .collect();
    let mut report = PretrainReport::default();
    if candidates.is_empty() {
        log::warn!("no entity has outgoing edges; pre-training is a no-op");
        return Ok((params, report));
    }

    let freeze = cfg.freeze_structure;
    let mut adam = {
        let tensors = params.tensors();
        let tracked = if freeze { &tensors[1..] } else { &tensors[..] };
        AdamState::new(tracked)
    };
    let mut queue = PreBatchQueue::new(cfg.queue_batches);
    let mut batch_index = 0u64;

    for epoch in 0..cfg.epochs_pretrain {
        let mut order = candidates.clone();
        order.shuffle(&mut rng);
        let mut prepared = Vec::with_capacity(order.len());
        for &e in &order {
            let pa = prepare_anchor(graph, schema, e, cfg, &mut rng)?;
            if pa.positives.is_empty() {
                report.skipped_anchors += 1;
            } else {
                prepared.push(pa);
            }
        }
        if prepared.is_empty() {
            log::warn!("epoch {epoch}: every anchor was skipped (no positives)");
            report.epoch_losses.push(0.0);
            continue;
        }
        let stream = batch_stream(&prepared, cfg.schema_bucketing, &mut rng);
        let prepared: Vec<PreparedAnchor> = stream.into_iter().map(|i| prepared[i].clone()).collect();

        let mut epoch_loss = 0.0;
        let mut batches_in_epoch = 0usize;
        for chunk in prepared.chunks(cfg.batch_pretrain) {
            let plans = match cfg.negative_mode {
                NegativeMode::Schema => None,
                NegativeMode::Relation => {
                    Some(relation_plans(graph, chunk, cfg.k1.max(cfg.k2), &mut rng))
                }
            };
            let mut tape = Tape::new();
            let pv = params.bind(&mut tape);
            let (per_anchor, records) = build_pretrain_batch(
                &mut tape,
                &pv,
                chunk,
                &queue,
                plans.as_deref(),
                cfg,
                batch_index,
            )?;
            let joint = joint_pretrain_loss(&mut tape, &per_anchor, cfg.lambda)?;
            epoch_loss += tape.value(joint).item()?;
            let grads = tape.backward(joint)?;
            apply_adam(&mut params, &pv, &grads, &mut adam, cfg.lr_pretrain, freeze)?;
            push_prebatch(&mut queue, records);
            batch_index += 1;
            batches_in_epoch += 1;
        }
        let mean = epoch_loss / batches_in_epoch.max(1) as f64;
        log::info!("pretrain epoch {epoch}: joint loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    report.batches = batch_index;
    Ok((params, report))
}

/// One fine-tuning example: a positive triple with its pair context and the
/// corruptions it is contrasted against.
#[derive(Debug, Clone)]
pub struct TriplePair {
    pub positive: Triple,
    pub positive_context: ContextSubgraph,
    pub negatives: Vec<(Triple, ContextSubgraph)>,
}

/// Score one triple through its pair context: compose the head (or every
/// node) with the relation embedding, encode, and apply the sigmoid of the
/// head/tail dot product.
pub fn pair_probability(
    tape: &mut Tape,
    pv: &ParamVars,
    context: &ContextSubgraph,
    triple: Triple,
    cfg: &TrainConfig,
) -> Result<VarId> {
    let z = tape.row(pv.relation_table, triple.rel)?;
    let mut rows = Vec::with_capacity(context.nodes.len());
    for &node in &context.nodes {
        let h = tape.row(pv.entity_table, node)?;
        let h = if node == triple.head || cfg.compose_all_nodes {
            compose(tape, h, z, cfg.composition)?
        } else {
            h
        };
        rows.push(h);
    }
    let h0 = tape.stack_rows(&rows)?;
    let ctx = encode_context(tape, h0, &pv.layers, cfg.heads)?;
    let c_s = tape.row(ctx.nodes, 0)?;
    let o_idx = context.node_index(triple.tail).ok_or_else(|| {
        Error::Precondition("pair context does not contain the tail entity".into())
    })?;
    let c_o = tape.row(ctx.nodes, o_idx)?;
    triple_score(tape, c_s, c_o)
}

/// Build the fine-tune loss for a batch of prepared pairs.
pub fn build_finetune_loss(
    tape: &mut Tape,
    pv: &ParamVars,
    pairs: &[TriplePair],
    cfg: &TrainConfig,
) -> Result<VarId> {
    let mut positive_scores = Vec::with_capacity(pairs.len());
    let mut negative_scores = Vec::new();
    for pair in pairs {
        positive_scores.push(pair_probability(
            tape,
            pv,
            &pair.positive_context,
            pair.positive,
            cfg,
        )?);
        for (neg, ctx) in &pair.negatives {
            negative_scores.push(pair_probability(tape, pv, ctx, *neg, cfg)?);
        }
    }
    finetune_loss(tape, &positive_scores, &negative_scores)
}

/// Summary of one fine-tuning run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epoch_losses: Vec<f64>,
    /// Triples dropped because no valid corruption existed (or the triple
    /// was a self-loop), summed over epochs.
    pub skipped_triples: usize,
}

/// Prepare the context pair for one training triple; `None` skips it.
fn prepare_pair<R: Rng>(
    graph: &KnowledgeGraph,
    triple: Triple,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<TriplePair>> {
    if triple.head == triple.tail {
        return Ok(None);
    }
    let positive_context = shortest_path_context(graph, triple.head, triple.tail, cfg.max_nodes)?;
    let mut negatives = Vec::with_capacity(cfg.finetune_negatives);
    for _ in 0..cfg.finetune_negatives {
        match corrupt_triple(graph, triple, CorruptionSide::Either, rng) {
            Ok(neg) if neg.head != neg.tail => {
                let ctx = shortest_path_context(graph, neg.head, neg.tail, cfg.max_nodes)?;
                negatives.push((neg, ctx));
            }
            Ok(_) => {}
            Err(Error::NoCorruptionCandidate(..)) => {}
            Err(e) => return Err(e),
        }
    }
    if negatives.is_empty() && cfg.finetune_negatives > 0 {
        return Ok(None);
    }
    Ok(Some(TriplePair {
        positive: triple,
        positive_context,
        negatives,
    }))
}

/// Fine-tune on individual triples: per positive, a shortest-path pair
/// context scored against `finetune_negatives` fresh type-preserving
/// corruptions, minimizing the negative log-likelihood with Adam.
pub fn finetune(
    graph: &KnowledgeGraph,
    mut params: ModelParams,
    train: &[Triple],
    cfg: &TrainConfig,
) -> Result<(ModelParams, FinetuneReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let mut adam = AdamState::new(&params.tensors());
    let mut report = FinetuneReport::default();

    for epoch in 0..cfg.epochs_finetune {
        let mut order = train.to_vec();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut examples = 0usize;
        for chunk in order.chunks(cfg.batch_finetune) {
            let mut pairs = Vec::with_capacity(chunk.len());
            for &t in chunk {
                match prepare_pair(graph, t, cfg, &mut rng)? {
                    Some(pair) => pairs.push(pair),
                    None => report.skipped_triples += 1,
                }
            }
            if pairs.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let pv = params.bind(&mut tape);
            let loss = build_finetune_loss(&mut tape, &pv, &pairs, cfg)?;
            epoch_loss += tape.value(loss).item()?;
            examples += pairs.len();
            let grads = tape.backward(loss)?;
            apply_adam(&mut params, &pv, &grads, &mut adam, cfg.lr_finetune, false)?;
        }
        let mean = epoch_loss / examples.max(1) as f64;
        log::info!("finetune epoch {epoch}: loss per example {mean:.6}");
        report.epoch_losses.push(mean);
    }
    Ok((params, report))
}

/// Value-level triple scoring through the fine-tune path (fresh forward
/// tape; used by evaluation and exports).
pub fn score_triple(
    params: &ModelParams,
    graph: &KnowledgeGraph,
    triple: Triple,
    cfg: &TrainConfig,
) -> Result<f64> {
    let context = shortest_path_context(graph, triple.head, triple.tail, cfg.max_nodes)?;
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let score = pair_probability(&mut tape, &pv, &context, triple, cfg)?;
    tape.value(score).item()
}

const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model state: parameters, the config that produced them, and
/// the pre-training batch counter.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub pretrain_batches: u64,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: ModelParams, pretrain_batches: u64) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            params,
            pretrain_batches,
        }
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer(std::io::BufWriter::new(file), ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = std::fs::File::open(path.as_ref())?;
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!(
            "checkpoint version {} unsupported (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    Ok(ckpt)
}
