//! Positive and negative sample construction for contrastive pre-training,
//! plus type-preserving triple corruption.
//!
//! Intra-schema negatives come from anchors that share both context schema
//! and entity types; inter-schema negatives come from context entities of
//! anchors whose schema differs. A FIFO queue of previous batches enlarges
//! the intra-schema pool with stale-by-design embedding snapshots.

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::schema::SchemaKey;
use crate::subgraph::ContextSubgraph;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{HashSet, VecDeque};

/// How the intra-schema type condition `t_i = t_s` is read for multi-typed
/// entities.
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TypeMatch {
    /// Equal type sets (the conservative default).
    Strict,
    /// Any shared type.
    Overlap,
}

/// Everything the negative samplers need to know about one embedded anchor.
///
/// Embeddings are plain values: queue entries deliberately keep the
/// parameters they were computed with.
#[derive(Debug, Clone)]
pub struct AnchorRecord {
    pub entity: usize,
    pub schema_key: SchemaKey,
    /// Sorted type ids of the anchor entity.
    pub types: Vec<usize>,
    /// Positive entities (context tails of the anchor), anchor excluded.
    pub positives: Vec<usize>,
    /// Context-view embedding per positive, aligned with `positives`.
    pub positive_embeddings: Vec<Vec<f64>>,
    /// The anchor's own context-view embedding.
    pub context_embedding: Vec<f64>,
    /// All entities of the anchor's context subgraph.
    pub context_entities: Vec<usize>,
    /// Index of the batch this record was embedded in.
    pub batch_index: u64,
}

impl AnchorRecord {
    fn type_condition(&self, other: &Self, mode: TypeMatch) -> bool {
        match mode {
            TypeMatch::Strict => self.types == other.types,
            TypeMatch::Overlap => {
                // Both lists are sorted.
                let (mut i, mut j) = (0, 0);
                while i < self.types.len() && j < other.types.len() {
                    match self.types[i].cmp(&other.types[j]) {
                        std::cmp::Ordering::Equal => return true,
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                    }
                }
                false
            }
        }
    }
}

/// FIFO ring of the last `capacity` batches of anchor records.
#[derive(Debug, Default, Clone)]
pub struct PreBatchQueue {
    batches: VecDeque<Vec<AnchorRecord>>,
    capacity: usize,
}

impl PreBatchQueue {
    pub fn new(capacity: usize) -> Self {
        PreBatchQueue {
            batches: VecDeque::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Batches newest-first.
    pub fn batches(&self) -> impl Iterator<Item = &Vec<AnchorRecord>> {
        self.batches.iter().rev()
    }
}

/// Append a batch, evicting the oldest batch beyond capacity. A zero
/// capacity queue stays empty (the no-pre-batch ablation).
pub fn push_prebatch(queue: &mut PreBatchQueue, records: Vec<AnchorRecord>) {
    if queue.capacity == 0 {
        return;
    }
    queue.batches.push_back(records);
    while queue.batches.len() > queue.capacity {
        queue.batches.pop_front();
    }
}

/// Positive samples of an anchor: tails of subgraph triples headed by the
/// anchor, the anchor itself excluded. Sorted and deduplicated.
pub fn positives(subgraph: &ContextSubgraph, s: usize) -> Vec<usize> {
    let mut out: Vec<usize> = subgraph
        .triples()
        .iter()
        .filter(|t| t.head == s && t.tail != s)
        .map(|t| t.tail)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Where an intra-schema negative was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSource {
    /// `batch[anchor].positives[pos]` of the current batch.
    CurrentBatch { anchor: usize, pos: usize },
    /// A queued batch, `age` = 0 for the newest.
    Queue { age: usize, anchor: usize, pos: usize },
}

/// One intra-schema negative sample with its provenance.
#[derive(Debug, Clone)]
pub struct IntraNegative {
    pub entity: usize,
    pub embedding: Vec<f64>,
    pub batch_index: u64,
    pub source: NegativeSource,
}

/// Intra-schema negatives of `batch[anchor_idx]`: positives of every other
/// anchor (current batch first, then queued batches newest-first) whose
/// context schema key and type condition match. Entities that are positives
/// of the anchor itself are never emitted. Truncated to `cap`.
pub fn intra_schema_negatives(
    batch: &[AnchorRecord],
    queue: &PreBatchQueue,
    anchor_idx: usize,
    cap: usize,
    type_match: TypeMatch,
) -> Vec<IntraNegative> {
    let anchor = &batch[anchor_idx];
    let own_positives: HashSet<usize> = anchor.positives.iter().copied().collect();
    let mut out = Vec::new();

    collect_intra(
        anchor,
        &own_positives,
        batch,
        Some(anchor_idx),
        cap,
        type_match,
        |a, p| NegativeSource::CurrentBatch { anchor: a, pos: p },
        &mut out,
    );
    for (age, records) in queue.batches().enumerate() {
        if out.len() >= cap {
            break;
        }
        collect_intra(
            anchor,
            &own_positives,
            records,
            None,
            cap,
            type_match,
            |a, p| NegativeSource::Queue { age, anchor: a, pos: p },
            &mut out,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn collect_intra(
    anchor: &AnchorRecord,
    own_positives: &HashSet<usize>,
    records: &[AnchorRecord],
    skip_idx: Option<usize>,
    cap: usize,
    type_match: TypeMatch,
    mut source_of: impl FnMut(usize, usize) -> NegativeSource,
    out: &mut Vec<IntraNegative>,
) {
    for (i, rec) in records.iter().enumerate() {
        if Some(i) == skip_idx {
            continue;
        }
        if rec.schema_key != anchor.schema_key || !anchor.type_condition(rec, type_match) {
            continue;
        }
        for (p, &entity) in rec.positives.iter().enumerate() {
            if out.len() >= cap {
                return;
            }
            if own_positives.contains(&entity) {
                continue;
            }
            out.push(IntraNegative {
                entity,
                embedding: rec.positive_embeddings[p].clone(),
                batch_index: rec.batch_index,
                source: source_of(i, p),
            });
        }
    }
}

/// One inter-schema negative: a context entity of a schema-mismatched
/// anchor, consumed by the global loss as a structure-view embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterNegative {
    pub entity: usize,
    /// Index of the contributing anchor in the current batch.
    pub source_anchor: usize,
}

/// Inter-schema negatives of `batch[anchor_idx]`: the union of context
/// entities of current-batch anchors with a different schema key, excluding
/// the anchor and its positives, deduplicated, truncated to `cap`.
pub fn inter_schema_negatives(
    batch: &[AnchorRecord],
    anchor_idx: usize,
    cap: usize,
) -> Vec<InterNegative> {
    let anchor = &batch[anchor_idx];
    let mut excluded: HashSet<usize> = anchor.positives.iter().copied().collect();
    excluded.insert(anchor.entity);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in batch.iter().enumerate() {
        if i == anchor_idx || rec.schema_key == anchor.schema_key {
            continue;
        }
        for &entity in &rec.context_entities {
            if out.len() >= cap {
                return out;
            }
            if excluded.contains(&entity) || !seen.insert(entity) {
                continue;
            }
            out.push(InterNegative {
                entity,
                source_anchor: i,
            });
        }
    }
    out
}

/// Relation-level negatives (the simpler sampling strategy used for
/// comparison): entities of the given type with no directed edge from `s`,
/// uniformly subsampled to `cap`.
pub fn relation_level_negatives<R: Rng>(
    graph: &KnowledgeGraph,
    s: usize,
    o_type: usize,
    cap: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut candidates: Vec<usize> = graph
        .entities_of_type(o_type)
        .iter()
        .copied()
        .filter(|&v| v != s && !graph.has_edge(s, v))
        .collect();
    if candidates.len() > cap {
        candidates.shuffle(rng);
        candidates.truncate(cap);
        candidates.sort_unstable();
    }
    candidates
}

/// Which endpoint a corruption replaces.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CorruptionSide {
    Head,
    Tail,
    Either,
}

/// Replace one endpoint by a uniformly sampled entity sharing at least one
/// type with the original, such that the corrupted triple is absent from
/// the graph. The other side is tried before giving up.
pub fn corrupt_triple<R: Rng>(
    graph: &KnowledgeGraph,
    triple: Triple,
    side: CorruptionSide,
    rng: &mut R,
) -> Result<Triple> {
    let first_tail = match side {
        CorruptionSide::Tail => true,
        CorruptionSide::Head => false,
        CorruptionSide::Either => rng.random_range(0..2) == 0,
    };
    for tail_side in [first_tail, !first_tail] {
        if let Some(t) = corrupt_one_side(graph, triple, tail_side, rng) {
            return Ok(t);
        }
    }
    let (h, r, t) = graph.triple_names(&triple);
    Err(Error::NoCorruptionCandidate(h, r, t))
}

fn corrupt_one_side<R: Rng>(
    graph: &KnowledgeGraph,
    triple: Triple,
    tail_side: bool,
    rng: &mut R,
) -> Option<Triple> {
    let original = if tail_side { triple.tail } else { triple.head };
    let mut pool: Vec<usize> = Vec::new();
    for &ty in graph.types_of(original) {
        pool.extend_from_slice(graph.entities_of_type(ty));
    }
    pool.sort_unstable();
    pool.dedup();
    let candidates: Vec<usize> = pool
        .into_iter()
        .filter(|&v| {
            let candidate = if tail_side {
                Triple::new(triple.head, triple.rel, v)
            } else {
                Triple::new(v, triple.rel, triple.tail)
            };
            !graph.contains_triple(&candidate)
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let v = candidates[rng.random_range(0..candidates.len())];
    Some(if tail_side {
        Triple::new(triple.head, triple.rel, v)
    } else {
        Triple::new(v, triple.rel, triple.tail)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subgraph::full_graph_subgraph;
    use crate::synth::toy_graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(entity: usize, key: &[u8], types: &[usize], positives: &[usize]) -> AnchorRecord {
        record_with_context(entity, key, types, positives, &[])
    }

    fn record_with_context(
        entity: usize,
        key: &[u8],
        types: &[usize],
        positives: &[usize],
        context: &[usize],
    ) -> AnchorRecord {
        AnchorRecord {
            entity,
            schema_key: SchemaKey::from_raw_bytes(key.to_vec()),
            types: types.to_vec(),
            positives: positives.to_vec(),
            positive_embeddings: positives.iter().map(|&p| vec![p as f64, 1.0]).collect(),
            context_embedding: vec![entity as f64, 0.5],
            context_entities: if context.is_empty() {
                let mut c = vec![entity];
                c.extend_from_slice(positives);
                c
            } else {
                context.to_vec()
            },
            batch_index: 0,
        }
    }

    #[test]
    fn toy_positives_by_hand() {
        let g = toy_graph();
        let a1 = g.entity_id("a1").unwrap();
        let sub = full_graph_subgraph(&g, a1);
        let ps = positives(&sub, a1);
        let mut expect = vec![g.entity_id("b1").unwrap(), g.entity_id("b2").unwrap()];
        expect.sort_unstable();
        assert_eq!(ps, expect);
    }

    #[test]
    fn isolated_anchor_has_no_positives() {
        let g = toy_graph();
        let sub = ContextSubgraph::induced(&g, crate::subgraph::Anchor::Entity(0), vec![0]);
        assert!(positives(&sub, 0).is_empty());
    }

    #[test]
    fn self_loops_are_excluded_from_positives() {
        use crate::graph::{build_graph, TripleTable};
        use std::collections::{BTreeMap, BTreeSet};
        let table = TripleTable::from_raw([("s", "r", "s")]);
        let mut types = BTreeMap::new();
        types.insert("s".to_string(), BTreeSet::from(["T".to_string()]));
        let g = build_graph(table, &types).unwrap();
        let sub = full_graph_subgraph(&g, 0);
        assert!(positives(&sub, 0).is_empty());
    }

    #[test]
    fn collision_rule_empties_toy_batch() {
        // Anchors a1 (positives {b1, b2}) and a2 (positives {b1}) share key
        // and type; a2's only positive is also a positive of a1.
        let batch = vec![
            record(0, b"k", &[0], &[2, 3]),
            record(1, b"k", &[0], &[2]),
        ];
        let queue = PreBatchQueue::new(2);
        let negs = intra_schema_negatives(&batch, &queue, 0, 512, TypeMatch::Strict);
        assert!(negs.is_empty());
        // The reverse direction does produce a negative (b2 for a2).
        let negs = intra_schema_negatives(&batch, &queue, 1, 512, TypeMatch::Strict);
        assert_eq!(negs.len(), 1);
        assert_eq!(negs[0].entity, 3);
    }

    #[test]
    fn schema_mismatch_blocks_current_batch() {
        let batch = vec![
            record(0, b"k", &[0], &[2]),
            record(4, b"", &[0], &[5]),
        ];
        let queue = PreBatchQueue::new(2);
        let negs = intra_schema_negatives(&batch, &queue, 0, 512, TypeMatch::Strict);
        assert!(negs.is_empty());
    }

    #[test]
    fn queue_contributes_matching_priors() {
        let batch = vec![record(0, b"k", &[0], &[2])];
        let mut queue = PreBatchQueue::new(2);
        let mut prior = record(7, b"k", &[0], &[9]);
        prior.batch_index = 41;
        push_prebatch(&mut queue, vec![prior]);
        let negs = intra_schema_negatives(&batch, &queue, 0, 512, TypeMatch::Strict);
        assert_eq!(negs.len(), 1);
        assert_eq!(negs[0].entity, 9);
        assert_eq!(negs[0].batch_index, 41);
        assert!(matches!(negs[0].source, NegativeSource::Queue { age: 0, .. }));
    }

    #[test]
    fn type_mismatch_blocks_even_with_equal_keys() {
        let batch = vec![
            record(0, b"k", &[0], &[2]),
            record(1, b"k", &[1], &[3]),
        ];
        let queue = PreBatchQueue::new(0);
        assert!(intra_schema_negatives(&batch, &queue, 0, 512, TypeMatch::Strict).is_empty());
        // Overlap mode with a shared type does match.
        let batch = vec![
            record(0, b"k", &[0, 1], &[2]),
            record(1, b"k", &[1], &[3]),
        ];
        assert_eq!(
            intra_schema_negatives(&batch, &queue, 0, 512, TypeMatch::Overlap).len(),
            1
        );
    }

    #[test]
    fn caps_are_respected() {
        let batch = vec![
            record(0, b"k", &[0], &[2]),
            record(1, b"k", &[0], &[10, 11, 12, 13]),
        ];
        let queue = PreBatchQueue::new(0);
        let negs = intra_schema_negatives(&batch, &queue, 0, 3, TypeMatch::Strict);
        assert_eq!(negs.len(), 3);
    }

    #[test]
    fn singleton_batch_has_no_inter_negatives() {
        let batch = vec![record(0, b"k", &[0], &[2])];
        assert!(inter_schema_negatives(&batch, 0, 512).is_empty());
    }

    #[test]
    fn inter_negatives_come_from_mismatched_anchors() {
        let batch = vec![
            record_with_context(0, b"k", &[0], &[2], &[0, 2]),
            record_with_context(4, b"", &[2], &[5], &[4, 5, 2, 0]),
        ];
        let negs = inter_schema_negatives(&batch, 0, 512);
        // 2 is a positive of anchor 0 and 0 is the anchor itself; only 4
        // and 5 survive.
        let entities: Vec<usize> = negs.iter().map(|n| n.entity).collect();
        assert_eq!(entities, vec![4, 5]);
    }

    #[test]
    fn equal_keys_give_no_inter_negatives() {
        let batch = vec![
            record(0, b"k", &[0], &[2]),
            record(1, b"k", &[0], &[3]),
        ];
        assert!(inter_schema_negatives(&batch, 0, 512).is_empty());
    }

    #[test]
    fn fifo_eviction() {
        let mut queue = PreBatchQueue::new(2);
        for i in 0..3u64 {
            let mut r = record(i as usize, b"k", &[0], &[]);
            r.batch_index = i;
            push_prebatch(&mut queue, vec![r]);
        }
        let indices: Vec<u64> = queue.batches().map(|b| b[0].batch_index).collect();
        // Newest first; batch 0 evicted.
        assert_eq!(indices, vec![2, 1]);
    }

    #[test]
    fn zero_capacity_queue_stays_empty() {
        let mut queue = PreBatchQueue::new(0);
        push_prebatch(&mut queue, vec![record(0, b"k", &[0], &[])]);
        assert!(queue.is_empty());
    }

    #[test]
    fn queued_records_are_bitwise_snapshots() {
        let mut queue = PreBatchQueue::new(1);
        let rec = record(0, b"k", &[0], &[1]);
        let emb = rec.positive_embeddings.clone();
        push_prebatch(&mut queue, vec![rec]);
        let stored = &queue.batches().next().unwrap()[0];
        assert_eq!(stored.positive_embeddings, emb);
    }

    #[test]
    fn relation_negatives_on_toy_graph() {
        let g = toy_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a1 = g.entity_id("a1").unwrap();
        let b2 = g.entity_id("b2").unwrap();
        let ty_b = g.type_id("B").unwrap();
        let ty_c = g.type_id("C").unwrap();
        // a1 already points at every B entity.
        assert!(relation_level_negatives(&g, a1, ty_b, 512, &mut rng).is_empty());
        // b2 has no edge to c1.
        assert_eq!(
            relation_level_negatives(&g, b2, ty_c, 512, &mut rng),
            vec![g.entity_id("c1").unwrap()]
        );
    }

    #[test]
    fn relation_negatives_respect_cap_deterministically() {
        let g = toy_graph();
        let a2 = g.entity_id("a2").unwrap();
        let ty_b = g.type_id("B").unwrap();
        // a2 -> b1 exists, b2 does not: pool is {b2}; cap 0 empties it.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(relation_level_negatives(&g, a2, ty_b, 0, &mut rng).is_empty());
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            relation_level_negatives(&g, a2, ty_b, 1, &mut r1),
            relation_level_negatives(&g, a2, ty_b, 1, &mut r2)
        );
    }

    #[test]
    fn corruption_on_toy_graph() {
        let g = toy_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Triple::new(
            g.entity_id("a2").unwrap(),
            g.relation_id("r2").unwrap(),
            g.entity_id("c1").unwrap(),
        );
        let corrupted = corrupt_triple(&g, t, CorruptionSide::Head, &mut rng).unwrap();
        assert_eq!(corrupted.head, g.entity_id("a1").unwrap());
        assert!(!g.contains_triple(&corrupted));
    }

    #[test]
    fn saturated_triple_has_no_corruption() {
        let g = toy_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Triple::new(
            g.entity_id("a1").unwrap(),
            g.relation_id("r1").unwrap(),
            g.entity_id("b1").unwrap(),
        );
        let err = corrupt_triple(&g, t, CorruptionSide::Tail, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NoCorruptionCandidate(..)));
    }

    #[test]
    fn lone_types_never_corrupt() {
        use crate::graph::{build_graph, TripleTable};
        use std::collections::{BTreeMap, BTreeSet};
        let table = TripleTable::from_raw([("x", "r", "y")]);
        let mut types = BTreeMap::new();
        types.insert("x".to_string(), BTreeSet::from(["X".to_string()]));
        types.insert("y".to_string(), BTreeSet::from(["Y".to_string()]));
        let g = build_graph(table, &types).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = g.triples()[0];
        assert!(corrupt_triple(&g, t, CorruptionSide::Either, &mut rng).is_err());
    }
}
