//! Knowledge-graph loading, indexing, and edge splitting.
//!
//! String identifiers from data files are interned to dense integer ids in
//! first-seen order; every downstream module works on integers. The graph is
//! immutable once built and safe to share across threads.

use crate::error::{Error, Result};
use crate::sampling::{corrupt_triple, CorruptionSide};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// A directed, labeled edge `(head, relation, tail)` over dense ids.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Triple { head, rel, tail }
    }
}

/// One incident edge in an adjacency list. `outgoing` is true when the owner
/// of the list is the head of the underlying triple.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AdjEdge {
    pub rel: usize,
    pub neighbor: usize,
    pub outgoing: bool,
}

/// Interns strings to dense ids in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Triples with entity/relation identifiers already interned.
#[derive(Debug, Default, Clone)]
pub struct TripleTable {
    pub entities: Interner,
    pub relations: Interner,
    pub triples: Vec<Triple>,
}

impl TripleTable {
    /// Intern an in-memory triple list (same path the file loader takes).
    pub fn from_raw<'a, I>(raw: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut table = TripleTable::default();
        for (h, r, t) in raw {
            let head = table.entities.intern(h);
            let rel = table.relations.intern(r);
            let tail = table.entities.intern(t);
            table.triples.push(Triple::new(head, rel, tail));
        }
        table
    }
}

/// Read a triples file: one `head \t relation \t tail` per line.
///
/// Empty lines are skipped; any other field count is a parse error naming
/// the line. Identifiers are interned in first-seen order.
pub fn load_triples(path: impl AsRef<Path>) -> Result<TripleTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut table = TripleTable::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let head = table.entities.intern(fields[0]);
        let rel = table.relations.intern(fields[1]);
        let tail = table.entities.intern(fields[2]);
        table.triples.push(Triple::new(head, rel, tail));
    }
    Ok(table)
}

/// Read an entity-type file: one `entity \t type` per line, entities may
/// repeat to carry multiple types. The result may cover a superset of the
/// graph's entities.
pub fn load_entity_types(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 2 tab-separated fields, got {}", fields.len()),
            });
        }
        map.entry(fields[0].to_string())
            .or_default()
            .insert(fields[1].to_string());
    }
    Ok(map)
}

/// The immutable substrate every other module reads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    types: Interner,
    triples: Vec<Triple>,
    /// entity id -> sorted, non-empty type id list
    type_map: Vec<Vec<usize>>,
    adjacency: Vec<Vec<AdjEdge>>,
    triple_set: HashSet<Triple>,
    /// type id -> sorted entity ids carrying that type
    type_members: Vec<Vec<usize>>,
    /// (head, tail) pairs with at least one directed edge
    out_pairs: HashSet<(usize, usize)>,
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, id: usize) -> &str {
        self.entities.name(id)
    }

    pub fn relation_name(&self, id: usize) -> &str {
        self.relations.name(id)
    }

    pub fn type_name(&self, id: usize) -> &str {
        self.types.name(id)
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entities.get(name)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.get(name)
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.types.get(name)
    }

    /// Sorted type ids of an entity; never empty.
    pub fn types_of(&self, entity: usize) -> &[usize] {
        &self.type_map[entity]
    }

    /// All incident edges (both directions).
    pub fn neighbors(&self, entity: usize) -> &[AdjEdge] {
        &self.adjacency[entity]
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    /// Sorted entities carrying the given type.
    pub fn entities_of_type(&self, ty: usize) -> &[usize] {
        &self.type_members[ty]
    }

    /// True when any directed edge `head -> tail` exists under any relation.
    pub fn has_edge(&self, head: usize, tail: usize) -> bool {
        self.out_pairs.contains(&(head, tail))
    }

    /// Render a triple back to its string form.
    pub fn triple_names(&self, t: &Triple) -> (String, String, String) {
        (
            self.entity_name(t.head).to_string(),
            self.relation_name(t.rel).to_string(),
            self.entity_name(t.tail).to_string(),
        )
    }

    /// A graph over the same entity/relation/type universe containing only
    /// the given triples (all ids stay valid). Used to restrict context
    /// generation and training to the train split.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Result<KnowledgeGraph> {
        for t in &triples {
            if t.head >= self.entity_count()
                || t.tail >= self.entity_count()
                || t.rel >= self.relation_count()
            {
                return Err(Error::Validation(format!(
                    "triple ({}, {}, {}) is outside this graph's id space",
                    t.head, t.rel, t.tail
                )));
            }
        }
        let mut adjacency: Vec<Vec<AdjEdge>> = vec![Vec::new(); self.entity_count()];
        let mut triple_set = HashSet::with_capacity(triples.len());
        let mut out_pairs = HashSet::with_capacity(triples.len());
        for t in &triples {
            adjacency[t.head].push(AdjEdge {
                rel: t.rel,
                neighbor: t.tail,
                outgoing: true,
            });
            adjacency[t.tail].push(AdjEdge {
                rel: t.rel,
                neighbor: t.head,
                outgoing: false,
            });
            triple_set.insert(*t);
            out_pairs.insert((t.head, t.tail));
        }
        Ok(KnowledgeGraph {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            types: self.types.clone(),
            triples,
            type_map: self.type_map.clone(),
            adjacency,
            triple_set,
            type_members: self.type_members.clone(),
            out_pairs,
        })
    }
}

/// Build the indexed graph from interned triples and a string-keyed type map.
///
/// Entities appearing only in the type map are kept as isolated graph
/// entities; a triple entity missing from the type map is a hard error.
pub fn build_graph(
    table: TripleTable,
    raw_types: &BTreeMap<String, BTreeSet<String>>,
) -> Result<KnowledgeGraph> {
    let TripleTable {
        mut entities,
        relations,
        triples,
    } = table;

    // Type-file-only entities (sorted by name via the BTreeMap) come after
    // all triple entities so triple ids stay dense and stable.
    for name in raw_types.keys() {
        entities.intern(name);
    }

    let mut types = Interner::default();
    let mut type_map: Vec<Vec<usize>> = vec![Vec::new(); entities.len()];
    let mut missing: Vec<String> = Vec::new();
    for id in 0..entities.len() {
        let name = entities.name(id).to_string();
        match raw_types.get(&name) {
            Some(set) if !set.is_empty() => {
                let mut ids: Vec<usize> = set.iter().map(|t| types.intern(t)).collect();
                ids.sort_unstable();
                ids.dedup();
                type_map[id] = ids;
            }
            _ => missing.push(name),
        }
    }
    if !missing.is_empty() {
        let shown = missing.iter().take(8).cloned().collect::<Vec<_>>().join(", ");
        let more = if missing.len() > 8 {
            format!(" (+{} more)", missing.len() - 8)
        } else {
            String::new()
        };
        return Err(Error::Validation(format!(
            "{} entities have no type: {shown}{more}",
            missing.len()
        )));
    }

    let mut adjacency: Vec<Vec<AdjEdge>> = vec![Vec::new(); entities.len()];
    let mut triple_set = HashSet::with_capacity(triples.len());
    let mut out_pairs = HashSet::with_capacity(triples.len());
    for t in &triples {
        adjacency[t.head].push(AdjEdge {
            rel: t.rel,
            neighbor: t.tail,
            outgoing: true,
        });
        adjacency[t.tail].push(AdjEdge {
            rel: t.rel,
            neighbor: t.head,
            outgoing: false,
        });
        triple_set.insert(*t);
        out_pairs.insert((t.head, t.tail));
    }

    let mut type_members: Vec<Vec<usize>> = vec![Vec::new(); types.len()];
    for (entity, tys) in type_map.iter().enumerate() {
        for &ty in tys {
            type_members[ty].push(entity);
        }
    }

    Ok(KnowledgeGraph {
        entities,
        relations,
        types,
        triples,
        type_map,
        adjacency,
        triple_set,
        type_members,
        out_pairs,
    })
}

/// Train/valid/test partition with frozen evaluation negatives.
///
/// `eval_negatives` pairs 1:1 with `valid` followed by `test`; it never
/// intersects the graph's triple set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub eval_negatives: Vec<Triple>,
    /// Positives moved back into train because no corruption existed.
    pub resampled_to_train: usize,
}

impl EdgeSplit {
    pub fn valid_negatives(&self) -> &[Triple] {
        &self.eval_negatives[..self.valid.len()]
    }

    pub fn test_negatives(&self) -> &[Triple] {
        &self.eval_negatives[self.valid.len()..]
    }
}

/// Deterministically split the graph's distinct triples.
///
/// Each valid/test positive is paired with one type-preserving corruption
/// that does not occur anywhere in the graph. A positive admitting no
/// corruption is resampled into train and counted.
pub fn split_edges(
    graph: &KnowledgeGraph,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<EdgeSplit> {
    let (rt, rv, rs) = ratios;
    if !(0.0..=1.0).contains(&rt) || !(0.0..=1.0).contains(&rv) || !(0.0..=1.0).contains(&rs) {
        return Err(Error::Precondition("split ratios must lie in [0, 1]".into()));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    if graph.triples().is_empty() {
        return Err(Error::Precondition("cannot split an empty graph".into()));
    }

    // Splits operate on the distinct triple set so they can be disjoint even
    // when the input file contained duplicates.
    let mut pool: Vec<Triple> = {
        let mut set: Vec<Triple> = graph.triple_set.iter().copied().collect();
        set.sort_unstable();
        set
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let n = pool.len();
    let n_train = ((n as f64) * rt).floor() as usize;
    let n_valid = ((n as f64) * rv).floor() as usize;
    let n_valid = n_valid.min(n - n_train);

    let mut train: Vec<Triple> = pool[..n_train].to_vec();
    let valid_candidates: Vec<Triple> = pool[n_train..n_train + n_valid].to_vec();
    let test_candidates: Vec<Triple> = pool[n_train + n_valid..].to_vec();

    let mut resampled = 0usize;
    let pair_up = |candidates: Vec<Triple>,
                       rng: &mut ChaCha8Rng,
                       train: &mut Vec<Triple>,
                       resampled: &mut usize|
     -> (Vec<Triple>, Vec<Triple>) {
        let mut kept = Vec::with_capacity(candidates.len());
        let mut negatives = Vec::with_capacity(candidates.len());
        for pos in candidates {
            match corrupt_triple(graph, pos, CorruptionSide::Either, rng) {
                Ok(neg) => {
                    kept.push(pos);
                    negatives.push(neg);
                }
                Err(Error::NoCorruptionCandidate(..)) => {
                    train.push(pos);
                    *resampled += 1;
                }
                Err(e) => {
                    // Only the no-candidate case is recoverable.
                    panic!("unexpected corruption failure: {e}");
                }
            }
        }
        (kept, negatives)
    };

    let (valid, mut negatives) = pair_up(valid_candidates, &mut rng, &mut train, &mut resampled);
    let (test, test_negs) = pair_up(test_candidates, &mut rng, &mut train, &mut resampled);
    negatives.extend(test_negs);

    Ok(EdgeSplit {
        train,
        valid,
        test,
        eval_negatives: negatives,
        resampled_to_train: resampled,
    })
}

/// Serialize triples in the input file format.
pub fn format_triples(graph: &KnowledgeGraph, triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        let (h, r, ta) = graph.triple_names(t);
        let _ = writeln!(out, "{h}\t{r}\t{ta}");
    }
    out
}

/// Write the three split files plus the negatives file into `dir`.
pub fn write_split(graph: &KnowledgeGraph, split: &EdgeSplit, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("train.tsv"), format_triples(graph, &split.train))?;
    fs::write(dir.join("valid.tsv"), format_triples(graph, &split.valid))?;
    fs::write(dir.join("test.tsv"), format_triples(graph, &split.test))?;
    fs::write(
        dir.join("negatives.tsv"),
        format_triples(graph, &split.eval_negatives),
    )?;
    Ok(())
}

/// Load a split previously written by [`write_split`], resolving names
/// against the given graph.
pub fn read_split(graph: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<EdgeSplit> {
    let dir = dir.as_ref();
    let read = |file: &str| -> Result<Vec<Triple>> {
        let path = dir.join(file);
        let text = fs::read_to_string(&path)?;
        let mut triples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let lookup = |name: &str| {
                graph.entity_id(name).ok_or_else(|| {
                    Error::Validation(format!("unknown entity {name:?} in split file {file}"))
                })
            };
            let rel = graph
                .relation_id(fields[1])
                .ok_or_else(|| Error::Validation(format!("unknown relation {:?}", fields[1])))?;
            triples.push(Triple::new(lookup(fields[0])?, rel, lookup(fields[2])?));
        }
        Ok(triples)
    };
    let (train, valid, test) = (read("train.tsv")?, read("valid.tsv")?, read("test.tsv")?);
    let eval_negatives = read("negatives.tsv")?;
    if eval_negatives.len() != valid.len() + test.len() {
        return Err(Error::Validation(format!(
            "negatives file holds {} triples, expected {} (|valid| + |test|)",
            eval_negatives.len(),
            valid.len() + test.len()
        )));
    }
    Ok(EdgeSplit {
        train,
        valid,
        test,
        eval_negatives,
        resampled_to_train: 0,
    })
}
