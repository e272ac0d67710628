//! Directed subword relation graph construction.
//!
//! Two rules populate the edge set:
//!  - within each entity, adjacent subwords are connected in both directions;
//!  - each dependency whose head or dependent word touches an entity span
//!    contributes directed edges from every subword of the head word to every
//!    subword of the dependent word.
//!
//! Nodes incident to at least one edge form the key-token set used to build
//! contrastive examples. Self-loops never appear here; the graph encoder adds
//! them internally.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizedText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Anatomy,
    Observation,
    AnatomyModifier,
    ObservationModifier,
}

impl EntityType {
    pub fn is_modifier(self) -> bool {
        matches!(self, EntityType::AnatomyModifier | EntityType::ObservationModifier)
    }
}

/// Word-index span `[start, end)` with one of the four clinical entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
}

/// One dependency-tree edge between word indices. `head = -1` marks the root
/// attachment and is skipped during graph construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub head: i64,
    pub dep: usize,
    pub rel: String,
}

/// Which dependency edges contribute to the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyScope {
    /// Only dependencies with at least one endpoint inside an entity span.
    #[default]
    EntityTouching,
    /// The whole tree.
    All,
}

/// Direction of the emitted dependency edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyDirection {
    /// Head word subwords point at dependent word subwords.
    #[default]
    HeadToDep,
    DepToHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphConfig {
    pub dependency_scope: DependencyScope,
    pub dependency_direction: DependencyDirection,
}

/// Directed subword graph: node count, deduplicated edge set, and the sorted
/// key-token index set (nodes with at least one incident edge).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationGraph {
    pub n: usize,
    pub edges: BTreeSet<(u32, u32)>,
    pub key: Vec<u32>,
}

impl RelationGraph {
    pub fn empty(n: usize) -> Self {
        RelationGraph {
            n,
            edges: BTreeSet::new(),
            key: Vec::new(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted, deduplicated edge list.
    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        self.edges.iter().copied().collect()
    }

    pub fn is_key(&self, node: usize) -> bool {
        self.key.binary_search(&(node as u32)).is_ok()
    }
}

/// Sorted unique node indices incident to at least one edge.
pub fn key_token_indices(graph: &RelationGraph) -> Vec<u32> {
    let mut set = BTreeSet::new();
    for &(s, t) in &graph.edges {
        set.insert(s);
        set.insert(t);
    }
    set.into_iter().collect()
}

fn validate_annotations(
    n_words: usize,
    entities: &[EntityAnnotation],
    dependencies: &[DependencyEdge],
) -> Result<()> {
    for (i, e) in entities.iter().enumerate() {
        if e.start >= e.end || e.end > n_words {
            return Err(Error::AnnotationOutOfRange {
                kind: "entity",
                index: i,
                detail: format!("span [{}, {}) against {} words", e.start, e.end, n_words),
            });
        }
    }
    for (i, d) in dependencies.iter().enumerate() {
        if d.dep >= n_words {
            return Err(Error::AnnotationOutOfRange {
                kind: "dependency",
                index: i,
                detail: format!("dependent {} against {} words", d.dep, n_words),
            });
        }
        if d.head >= 0 {
            let h = d.head as usize;
            if h >= n_words {
                return Err(Error::AnnotationOutOfRange {
                    kind: "dependency",
                    index: i,
                    detail: format!("head {} against {} words", h, n_words),
                });
            }
            if h == d.dep {
                return Err(Error::AnnotationOutOfRange {
                    kind: "dependency",
                    index: i,
                    detail: format!("head equals dependent ({h})"),
                });
            }
        }
    }
    Ok(())
}

/// Build the relation graph for one tokenized findings section.
pub fn build_relation_graph(
    tokenized: &TokenizedText,
    entities: &[EntityAnnotation],
    dependencies: &[DependencyEdge],
    config: &GraphConfig,
) -> Result<RelationGraph> {
    let n_words = tokenized.n_words();
    validate_annotations(n_words, entities, dependencies)?;
    let n = tokenized.n_subwords();
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();

    // Entity rule: adjacent subwords inside the entity span, both directions.
    for e in entities {
        let (s, t) = tokenized.subword_range(e.start, e.end);
        for i in s..t.saturating_sub(1) {
            edges.insert((i as u32, (i + 1) as u32));
            edges.insert(((i + 1) as u32, i as u32));
        }
    }

    // Dependency rule: all subwords of the head word to all subwords of the
    // dependent word, in the configured direction.
    let in_entity = |w: usize| entities.iter().any(|e| e.start <= w && w < e.end);
    for d in dependencies {
        if d.head < 0 {
            continue;
        }
        let head = d.head as usize;
        if config.dependency_scope == DependencyScope::EntityTouching
            && !in_entity(head)
            && !in_entity(d.dep)
        {
            continue;
        }
        let (from, to) = match config.dependency_direction {
            DependencyDirection::HeadToDep => (head, d.dep),
            DependencyDirection::DepToHead => (d.dep, head),
        };
        let (fs, fe) = tokenized.subword_range(from, from + 1);
        let (ts, te) = tokenized.subword_range(to, to + 1);
        for u in fs..fe {
            for v in ts..te {
                if u != v {
                    edges.insert((u as u32, v as u32));
                }
            }
        }
    }

    let mut graph = RelationGraph {
        n,
        edges,
        key: Vec::new(),
    };
    graph.key = key_token_indices(&graph);
    debug_assert!(graph.key.iter().all(|&k| (k as usize) < n));
    Ok(graph)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Render the graph in DOT: one node line per subword labeled with its
/// string, one line per directed edge, key nodes filled.
pub fn export_dot(graph: &RelationGraph, tokenized: &TokenizedText) -> String {
    let mut out = String::from("digraph relation_graph {\n");
    for i in 0..graph.n {
        let label = dot_escape(&tokenized.pieces[i]);
        if graph.is_key(i) {
            out.push_str(&format!(
                "  n{i} [label=\"{label}\", style=filled, fillcolor=lightblue];\n"
            ));
        } else {
            out.push_str(&format!("  n{i} [label=\"{label}\"];\n"));
        }
    }
    for &(s, t) in &graph.edges {
        out.push_str(&format!("  n{s} -> n{t};\n"));
    }
    out.push_str("}\n");
    out
}

/// JSON shape used for test fixtures: `{"n":, "edges": [[s,t],...], "key": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<(u32, u32)>,
    pub key: Vec<u32>,
}

impl RelationGraph {
    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n,
            edges: self.edge_list(),
            key: self.key.clone(),
        }
    }

    pub fn from_json(j: &GraphJson) -> Self {
        RelationGraph {
            n: j.n,
            edges: j.edges.iter().copied().collect(),
            key: j.key.clone(),
        }
    }
}
