//! Synthetic graphs for tests and benchmarks.
//!
//! The planted-schema generator produces graphs whose edges follow a small
//! set of typed patterns, with hidden group structure inside each pattern so
//! that held-out links are genuinely predictable from training edges.

use crate::graph::{build_graph, KnowledgeGraph, TripleTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// The five-triple toy graph used across unit tests:
/// entities `a1,a2:A`, `b1,b2:B`, `c1:C`; relations `r1,r2`.
pub fn toy_graph() -> KnowledgeGraph {
    build_graph(toy_table(), &toy_types()).expect("toy fixture is well typed")
}

pub fn toy_table() -> TripleTable {
    TripleTable::from_raw([
        ("a1", "r1", "b1"),
        ("a2", "r1", "b1"),
        ("a1", "r1", "b2"),
        ("a2", "r2", "c1"),
        ("b1", "r2", "c1"),
    ])
}

pub fn toy_types() -> BTreeMap<String, BTreeSet<String>> {
    let mut map = BTreeMap::new();
    for (e, t) in [("a1", "A"), ("a2", "A"), ("b1", "B"), ("b2", "B"), ("c1", "C")] {
        map.insert(e.to_string(), BTreeSet::from([t.to_string()]));
    }
    map
}

/// Two disconnected triangles sharing one entity type; used to sanity-check
/// structure embeddings.
pub fn two_triangles() -> KnowledgeGraph {
    let raw = [
        ("p0", "r", "p1"),
        ("p1", "r", "p2"),
        ("p2", "r", "p0"),
        ("q0", "r", "q1"),
        ("q1", "r", "q2"),
        ("q2", "r", "q0"),
    ];
    let mut types = BTreeMap::new();
    for e in ["p0", "p1", "p2", "q0", "q1", "q2"] {
        types.insert(e.to_string(), BTreeSet::from(["T".to_string()]));
    }
    build_graph(TripleTable::from_raw(raw), &types).expect("triangles are well typed")
}

/// Parameters of the planted-schema benchmark graph.
#[derive(Clone, Debug)]
pub struct PlantedConfig {
    /// Entities per type (types are named `T0..`).
    pub entities_per_type: usize,
    pub num_types: usize,
    /// Typed patterns `(head_type, relation, tail_type)`; relations are
    /// named `r0..` and each appears in exactly one pattern.
    pub patterns: Vec<(usize, usize)>,
    /// Hidden groups per type; each head group links to exactly one tail
    /// group under each pattern.
    pub groups_per_type: usize,
    /// Edges sampled per pattern.
    pub edges_per_pattern: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        // Four types, six patterns of which two pairs overlap on the same
        // type pair under different relations, so some corruptions land on
        // adjacent pairs and stay hard.
        PlantedConfig {
            entities_per_type: 50,
            num_types: 4,
            patterns: vec![(0, 1), (0, 1), (1, 2), (1, 2), (2, 3), (0, 3)],
            groups_per_type: 5,
            edges_per_pattern: 250,
        }
    }
}

/// Generate a typed KG whose edges follow the planted patterns.
///
/// Inside each pattern, entities are divided into hidden groups and each
/// head group is wired to a single tail group (a per-relation permutation),
/// at roughly 50% density. Link prediction on held-out edges is therefore
/// learnable: most type-preserving corruptions land outside the allowed
/// group.
pub fn planted_schema_graph(cfg: &PlantedConfig, seed: u64) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = |ty: usize, i: usize| format!("t{ty}e{i}");

    let mut raw: Vec<(String, String, String)> = Vec::new();
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    let groups = cfg.groups_per_type.max(1);
    let group_size = cfg.entities_per_type / groups;

    for (rel, &(ht, tt)) in cfg.patterns.iter().enumerate() {
        // Random bijection between head groups and tail groups.
        let mut target: Vec<usize> = (0..groups).collect();
        target.shuffle(&mut rng);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < cfg.edges_per_pattern && attempts < cfg.edges_per_pattern * 40 {
            attempts += 1;
            let hg = rng.random_range(0..groups);
            let tg = target[hg];
            let hi = hg * group_size + rng.random_range(0..group_size);
            let ti = tg * group_size + rng.random_range(0..group_size);
            if seen.insert((ht * cfg.entities_per_type + hi, rel, tt * cfg.entities_per_type + ti)) {
                raw.push((name(ht, hi), format!("r{rel}"), name(tt, ti)));
                placed += 1;
            }
        }
    }

    let mut types = BTreeMap::new();
    for ty in 0..cfg.num_types {
        for i in 0..cfg.entities_per_type {
            types.insert(name(ty, i), BTreeSet::from([format!("T{ty}")]));
        }
    }
    let table = TripleTable::from_raw(raw.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));
    build_graph(table, &types).expect("planted graph is well typed")
}

/// Uniformly random typed graph for oracle tests: `n` entities over
/// `num_types` types (1 to `max_types_per_entity` types each), `m` triples.
pub fn random_typed_graph(
    n: usize,
    num_types: usize,
    max_types_per_entity: usize,
    num_relations: usize,
    m: usize,
    seed: u64,
) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = BTreeMap::new();
    for i in 0..n {
        let k = rng.random_range(1..=max_types_per_entity.max(1));
        let mut set = BTreeSet::new();
        for _ in 0..k {
            set.insert(format!("T{}", rng.random_range(0..num_types)));
        }
        types.insert(format!("e{i}"), set);
    }
    let mut raw = Vec::with_capacity(m);
    for _ in 0..m {
        let h = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        let r = rng.random_range(0..num_relations);
        raw.push((format!("e{h}"), format!("r{r}"), format!("e{t}")));
    }
    // Ensure every entity exists in the graph even if never drawn.
    let table = TripleTable::from_raw(raw.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));
    build_graph(table, &types).expect("random graph is well typed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_graph_shape() {
        let g = toy_graph();
        assert_eq!(g.entity_count(), 5);
        assert_eq!(g.relation_count(), 2);
        assert_eq!(g.type_count(), 3);
        assert_eq!(g.triples().len(), 5);
    }

    #[test]
    fn planted_graph_edges_follow_patterns() {
        let cfg = PlantedConfig::default();
        let g = planted_schema_graph(&cfg, 0);
        assert!(g.triples().len() > 1000);
        for t in g.triples() {
            let rel: usize = g.relation_name(t.rel)[1..].parse().unwrap();
            let (ht, tt) = cfg.patterns[rel];
            assert_eq!(g.type_name(g.types_of(t.head)[0]), format!("T{ht}"));
            assert_eq!(g.type_name(g.types_of(t.tail)[0]), format!("T{tt}"));
        }
    }

    #[test]
    fn planted_graph_is_deterministic() {
        let cfg = PlantedConfig::default();
        let a = planted_schema_graph(&cfg, 7);
        let b = planted_schema_graph(&cfg, 7);
        assert_eq!(a.triples(), b.triples());
    }
}
