//! Context-subgraph generation: random walks for pre-training anchors and
//! shortest paths for fine-tuning entity pairs.
//!
//! Walks treat edges as undirected for reachability; the induced triple set
//! keeps triple direction. Node counts never exceed `max_nodes`.

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use rand::Rng;
use std::collections::{BTreeSet, HashSet, VecDeque};

/// What the subgraph was generated around.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Anchor {
    Entity(usize),
    Pair(usize, usize),
}

/// A node set around an anchor with the graph triples induced on it.
///
/// `nodes` are distinct, anchor first. `triples` is exactly the set of graph
/// triples with both endpoints in `nodes`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSubgraph {
    pub anchor: Anchor,
    pub nodes: Vec<usize>,
    triples: Vec<Triple>,
}

impl ContextSubgraph {
    /// Build from an explicit node list, inducing the triples.
    pub fn induced(graph: &KnowledgeGraph, anchor: Anchor, nodes: Vec<usize>) -> Self {
        let triples = induced_triples(graph, &nodes);
        ContextSubgraph {
            anchor,
            nodes,
            triples,
        }
    }

    /// The triples of the graph contained in this subgraph.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Position of an entity in `nodes`.
    pub fn node_index(&self, entity: usize) -> Option<usize> {
        self.nodes.iter().position(|&n| n == entity)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn induced_triples(graph: &KnowledgeGraph, nodes: &[usize]) -> Vec<Triple> {
    let node_set: HashSet<usize> = nodes.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &u in nodes {
        for edge in graph.neighbors(u) {
            if edge.outgoing && node_set.contains(&edge.neighbor) {
                out.insert(Triple::new(u, edge.rel, edge.neighbor));
            }
        }
    }
    out.into_iter().collect()
}

/// Accessor mirroring the subgraph's induced triple set.
pub fn subgraph_triples(subgraph: &ContextSubgraph) -> &[Triple] {
    subgraph.triples()
}

/// Context of a single anchor: the first `max_nodes` distinct entities
/// visited by an undirected uniform random walk of at most `walk_length`
/// steps, plus the induced triples.
///
/// An isolated anchor yields a single-node subgraph with no triples. The
/// result is a pure function of `(graph, s, max_nodes, walk_length)` and the
/// RNG state.
pub fn random_walk_context<R: Rng>(
    graph: &KnowledgeGraph,
    s: usize,
    max_nodes: usize,
    walk_length: usize,
    rng: &mut R,
) -> Result<ContextSubgraph> {
    if s >= graph.entity_count() {
        return Err(Error::Precondition(format!("entity {s} does not exist")));
    }
    if max_nodes < 2 {
        return Err(Error::Precondition("max_nodes must be at least 2".into()));
    }
    let mut nodes = vec![s];
    let mut seen: HashSet<usize> = HashSet::from([s]);
    let mut current = s;
    for _ in 0..walk_length {
        if nodes.len() >= max_nodes {
            break;
        }
        let edges = graph.neighbors(current);
        if edges.is_empty() {
            break;
        }
        let next = edges[rng.random_range(0..edges.len())].neighbor;
        if seen.insert(next) {
            nodes.push(next);
        }
        current = next;
    }
    Ok(ContextSubgraph::induced(graph, Anchor::Entity(s), nodes))
}

/// Context of an entity pair: one breadth-first shortest undirected path
/// from `s` to `o`, ties broken toward smaller entity ids.
///
/// When the path exceeds `max_nodes`, interior nodes are dropped from the
/// far end but `s` and `o` are always kept. A disconnected pair falls back
/// to the two-node subgraph without error.
pub fn shortest_path_context(
    graph: &KnowledgeGraph,
    s: usize,
    o: usize,
    max_nodes: usize,
) -> Result<ContextSubgraph> {
    shortest_path_context_masked(graph, s, o, max_nodes, None)
}

/// [`shortest_path_context`] with one labeled edge hidden from the path
/// search. Fine-tuning masks the triple being scored so training pairs see
/// the same context distribution as held-out pairs (whose edge is absent);
/// the induced triple set is not filtered.
pub fn shortest_path_context_masked(
    graph: &KnowledgeGraph,
    s: usize,
    o: usize,
    max_nodes: usize,
    masked: Option<Triple>,
) -> Result<ContextSubgraph> {
    if s == o {
        return Err(Error::Precondition(format!(
            "pair context needs distinct entities, got {s} twice"
        )));
    }
    if s >= graph.entity_count() || o >= graph.entity_count() {
        return Err(Error::Precondition("pair entity does not exist".into()));
    }
    if max_nodes < 2 {
        return Err(Error::Precondition("max_nodes must be at least 2".into()));
    }

    let nodes = match bfs_path(graph, s, o, masked) {
        Some(mut path) => {
            if path.len() > max_nodes {
                // Keep the source-side prefix and the target.
                let o_node = *path.last().expect("path is non-empty");
                path.truncate(max_nodes - 1);
                path.push(o_node);
            }
            path
        }
        None => vec![s, o],
    };
    Ok(ContextSubgraph::induced(graph, Anchor::Pair(s, o), nodes))
}

/// BFS distances from `s`, then backtrack from `o` picking the smallest-id
/// predecessor at every step.
fn bfs_path(
    graph: &KnowledgeGraph,
    s: usize,
    o: usize,
    masked: Option<Triple>,
) -> Option<Vec<usize>> {
    // The labeled triple behind an adjacency entry of `owner`.
    let edge_triple = |owner: usize, e: &crate::graph::AdjEdge| -> Triple {
        if e.outgoing {
            Triple::new(owner, e.rel, e.neighbor)
        } else {
            Triple::new(e.neighbor, e.rel, owner)
        }
    };
    let open = |owner: usize, e: &crate::graph::AdjEdge| -> bool {
        masked != Some(edge_triple(owner, e))
    };
    let mut dist: Vec<u32> = vec![u32::MAX; graph.entity_count()];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        if u == o {
            break;
        }
        for edge in graph.neighbors(u) {
            let v = edge.neighbor;
            if dist[v] == u32::MAX && open(u, edge) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    if dist[o] == u32::MAX {
        return None;
    }
    let mut path = vec![o];
    let mut current = o;
    while current != s {
        let want = dist[current] - 1;
        let prev = graph
            .neighbors(current)
            .iter()
            .filter(|e| dist[e.neighbor] == want && open(current, e))
            .map(|e| e.neighbor)
            .min()
            .expect("BFS predecessor exists");
        path.push(prev);
        current = prev;
    }
    path.reverse();
    Some(path)
}

/// The whole graph as one subgraph around an anchor (test and export helper).
pub fn full_graph_subgraph(graph: &KnowledgeGraph, anchor: usize) -> ContextSubgraph {
    let mut nodes = vec![anchor];
    nodes.extend((0..graph.entity_count()).filter(|&e| e != anchor));
    ContextSubgraph::induced(graph, Anchor::Entity(anchor), nodes)
}
