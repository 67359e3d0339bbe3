//! Type-level schema extraction and context-schema projection.
//!
//! A schema member is a `(head_type, relation, tail_type)` pattern whose
//! frequency over typed triples reaches a threshold. Multi-typed entities
//! contribute one count per type combination. The tensor is stored sparsely;
//! boolean membership semantics are preserved.

use crate::error::Result;
use crate::graph::KnowledgeGraph;
use crate::subgraph::ContextSubgraph;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// `(head_type, relation, tail_type)` over dense ids.
pub type TypedTriple = (usize, usize, usize);

/// Sparse boolean tensor over typed triples with the counts that produced it.
#[derive(Debug, Clone)]
pub struct SchemaTensor {
    membership: BTreeSet<TypedTriple>,
    frequency: BTreeMap<TypedTriple, u64>,
    alpha: u64,
}

impl SchemaTensor {
    pub fn contains(&self, t: &TypedTriple) -> bool {
        self.membership.contains(t)
    }

    pub fn members(&self) -> impl Iterator<Item = &TypedTriple> {
        self.membership.iter()
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn frequency(&self, t: &TypedTriple) -> u64 {
        self.frequency.get(t).copied().unwrap_or(0)
    }
}

/// Typed-triple projection of one context subgraph, already intersected
/// with the global schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSchema {
    typed_triples: BTreeSet<TypedTriple>,
}

impl ContextSchema {
    pub fn typed_triples(&self) -> &BTreeSet<TypedTriple> {
        &self.typed_triples
    }

    pub fn is_empty(&self) -> bool {
        self.typed_triples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.typed_triples.len()
    }
}

/// Canonical digest of a typed-triple set; equal sets yield byte-identical
/// keys. The empty set maps to the empty byte string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SchemaKey(Vec<u8>);

impl SchemaKey {
    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    /// Test-only escape hatch for building distinct keys directly.
    #[cfg(test)]
    pub(crate) fn from_raw_bytes(bytes: Vec<u8>) -> Self {
        SchemaKey(bytes)
    }
}

/// Count every typed combination of every triple.
///
/// For a triple `(s, r, o)`, each pair in `types(s) x types(o)` contributes
/// one count to `(t_s, r, t_o)`.
pub fn count_typed_triples(graph: &KnowledgeGraph) -> BTreeMap<TypedTriple, u64> {
    let mut counts: BTreeMap<TypedTriple, u64> = BTreeMap::new();
    for t in graph.triples() {
        for &ts in graph.types_of(t.head) {
            for &to in graph.types_of(t.tail) {
                *counts.entry((ts, t.rel, to)).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Keep typed triples whose frequency reaches `alpha`.
pub fn build_schema(frequency: BTreeMap<TypedTriple, u64>, alpha: u64) -> Result<SchemaTensor> {
    if alpha == 0 {
        return Err(crate::error::Error::Precondition(
            "schema threshold alpha must be at least 1".into(),
        ));
    }
    let membership = frequency
        .iter()
        .filter(|(_, &c)| c >= alpha)
        .map(|(&t, _)| t)
        .collect();
    Ok(SchemaTensor {
        membership,
        frequency,
        alpha,
    })
}

/// Convenience: count and threshold in one step.
pub fn schema_from_graph(graph: &KnowledgeGraph, alpha: u64) -> Result<SchemaTensor> {
    build_schema(count_typed_triples(graph), alpha)
}

/// Project a subgraph to typed triples and intersect with the schema.
pub fn context_schema(
    graph: &KnowledgeGraph,
    schema: &SchemaTensor,
    subgraph: &ContextSubgraph,
) -> ContextSchema {
    let mut typed_triples = BTreeSet::new();
    for t in subgraph.triples() {
        for &ts in graph.types_of(t.head) {
            for &to in graph.types_of(t.tail) {
                let tt = (ts, t.rel, to);
                if schema.contains(&tt) {
                    typed_triples.insert(tt);
                }
            }
        }
    }
    ContextSchema { typed_triples }
}

/// Order-insensitive canonical digest of a context schema.
pub fn schema_key(cs: &ContextSchema) -> SchemaKey {
    let mut bytes = Vec::with_capacity(cs.typed_triples.len() * 24);
    // BTreeSet iteration is already sorted and deduplicated.
    for &(a, b, c) in &cs.typed_triples {
        bytes.extend_from_slice(&(a as u64).to_le_bytes());
        bytes.extend_from_slice(&(b as u64).to_le_bytes());
        bytes.extend_from_slice(&(c as u64).to_le_bytes());
    }
    SchemaKey(bytes)
}

/// Write the schema as sorted `head_type \t relation \t tail_type \t count`
/// rows for inspection and reuse.
pub fn write_schema(graph: &KnowledgeGraph, schema: &SchemaTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut rows: Vec<(String, String, String, u64)> = schema
        .members()
        .map(|t| {
            (
                graph.type_name(t.0).to_string(),
                graph.relation_name(t.1).to_string(),
                graph.type_name(t.2).to_string(),
                schema.frequency(t),
            )
        })
        .collect();
    rows.sort();
    let mut out = String::new();
    for (h, r, t, c) in rows {
        let _ = writeln!(out, "{h}\t{r}\t{t}\t{c}");
    }
    fs::write(path, out)?;
    Ok(())
}
