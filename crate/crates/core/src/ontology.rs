//! The ontology as a directed subsumption graph.
//!
//! Concepts are read from a JSON-lines file and direct subsumptions from a
//! `parent<TAB>child` file. The graph is immutable once loaded; placing a new
//! concept produces a new [`Ontology`] value.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved child marker for leaf placements. Never a concept id.
pub const NULL_SENTINEL: &str = "NULL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OntologyError {
    #[error("invalid concept id {0:?}")]
    InvalidId(String),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("duplicate concept id {0}")]
    DuplicateConcept(ConceptId),
    #[error("concept {0} has an empty label")]
    EmptyLabel(ConceptId),
    #[error("self-loop on {0}")]
    SelfLoop(ConceptId),
    #[error("dangling id {id} on {file} line {line}")]
    Dangling { file: &'static str, line: usize, id: String },
    #[error("malformed {file} line {line}: {message}")]
    Malformed { file: &'static str, line: usize, message: String },
    #[error("complex concept {0} has neither a verbalization nor an operator tree")]
    MissingVerbalization(ConceptId),
    #[error("edge endpoint {0} does not exist")]
    DanglingEdge(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for OntologyError {
    fn from(e: io::Error) -> Self {
        OntologyError::Io(e.to_string())
    }
}

pub type Result<T, E = OntologyError> = std::result::Result<T, E>;

/// Opaque concept identifier, e.g. an IRI or a SNOMED CT code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id == NULL_SENTINEL || id.contains(['\t', '\n', '\r']) {
            return Err(OntologyError::InvalidId(id));
        }
        Ok(ConceptId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ConceptId {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self> {
        ConceptId::new(s)
    }
}

impl TryFrom<&str> for ConceptId {
    type Error = OntologyError;
    fn try_from(s: &str) -> Result<Self> {
        ConceptId::new(s)
    }
}

impl From<ConceptId> for String {
    fn from(id: ConceptId) -> String {
        id.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Child side of an edge. `Null` orders after every concept id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeChild {
    Concept(ConceptId),
    Null,
}

impl EdgeChild {
    pub fn concept(&self) -> Option<&ConceptId> {
        match self {
            EdgeChild::Concept(c) => Some(c),
            EdgeChild::Null => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, EdgeChild::Null)
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == NULL_SENTINEL {
            Ok(EdgeChild::Null)
        } else {
            ConceptId::new(s).map(EdgeChild::Concept)
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            EdgeChild::Concept(c) => c.as_str(),
            EdgeChild::Null => NULL_SENTINEL,
        }
    }
}

impl fmt::Display for EdgeChild {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A candidate insertion slot `parent -> child`. The new concept goes below
/// `parent` and above `child`; a `Null` child means a leaf placement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(String, String)", into = "(String, String)")]
pub struct Edge {
    pub parent: ConceptId,
    pub child: EdgeChild,
}

impl Edge {
    pub fn new(parent: ConceptId, child: EdgeChild) -> Result<Self> {
        if child.concept() == Some(&parent) {
            return Err(OntologyError::SelfLoop(parent));
        }
        Ok(Edge { parent, child })
    }

    /// `parent -> child` for two concepts. Panics on a self-edge; use
    /// [`Edge::new`] for unchecked input.
    pub fn between(parent: &ConceptId, child: &ConceptId) -> Self {
        assert_ne!(parent, child, "self-edge");
        Edge { parent: parent.clone(), child: EdgeChild::Concept(child.clone()) }
    }

    pub fn leaf(parent: &ConceptId) -> Self {
        Edge { parent: parent.clone(), child: EdgeChild::Null }
    }

    pub fn is_leaf(&self) -> bool {
        self.child.is_null()
    }

    pub fn parse(parent: &str, child: &str) -> Result<Self> {
        Edge::new(ConceptId::new(parent)?, EdgeChild::parse(child)?)
    }
}

impl TryFrom<(String, String)> for Edge {
    type Error = OntologyError;
    fn try_from((p, c): (String, String)) -> Result<Self> {
        Edge::parse(&p, &c)
    }
}

impl From<Edge> for (String, String) {
    fn from(e: Edge) -> Self {
        (e.parent.0, e.child.as_str().to_string())
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.parent, self.child)
    }
}

/// Structured form of a complex concept: existential restrictions and
/// conjunctions over named atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorTree {
    Atom(String),
    Some { role: String, filler: Box<OperatorTree> },
    And(Vec<OperatorTree>),
}

impl OperatorTree {
    /// Manchester-style rendering: `r some C`, `A and B`. Non-atomic operands
    /// are parenthesised.
    pub fn render(&self) -> String {
        match self {
            OperatorTree::Atom(name) => name.clone(),
            OperatorTree::Some { role, filler } => format!("{role} some {}", filler.operand()),
            OperatorTree::And(parts) => {
                parts.iter().map(OperatorTree::operand).collect::<Vec<_>>().join(" and ")
            }
        }
    }

    fn operand(&self) -> String {
        match self {
            OperatorTree::Atom(name) => name.clone(),
            other => format!("({})", other.render()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: ConceptId,
    pub label: String,
    #[serde(default)]
    pub complex: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalization: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_tree: Option<OperatorTree>,
}

impl Concept {
    pub fn atomic(id: &str, label: &str) -> Result<Self> {
        Ok(Concept {
            id: ConceptId::new(id)?,
            label: label.to_string(),
            complex: false,
            verbalization: None,
            operator_tree: None,
        })
    }
}

/// Text used for a concept in prompts, indexes and embeddings.
///
/// Atomic concepts use their label. Complex concepts use a stored
/// verbalization when present, otherwise the rendered operator tree.
pub fn verbalize(concept: &Concept) -> Result<String> {
    if !concept.complex {
        return Ok(concept.label.clone());
    }
    if let Some(text) = &concept.verbalization {
        return Ok(text.clone());
    }
    concept
        .operator_tree
        .as_ref()
        .map(OperatorTree::render)
        .ok_or_else(|| OntologyError::MissingVerbalization(concept.id.clone()))
}

/// Non-fatal findings raised while building an ontology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    ComplexChild { parent: ConceptId, child: ConceptId },
    Cycle { concepts_on_cycles: usize },
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadWarning::ComplexChild { parent, child } => {
                write!(f, "complex concept {child} appears as a child of {parent}")
            }
            LoadWarning::Cycle { concepts_on_cycles } => {
                write!(f, "subsumption graph has cycles through {concepts_on_cycles} concepts")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub concepts: usize,
    pub complex: usize,
    pub subsumptions: usize,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ontology {
    concepts: BTreeMap<ConceptId, Concept>,
    parents: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
    children: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
}

impl Ontology {
    /// Builds an ontology from concepts and direct `(parent, child)` pairs.
    /// Repeated pairs collapse.
    pub fn from_parts<C, S>(concepts: C, subsumptions: S) -> Result<(Ontology, LoadReport)>
    where
        C: IntoIterator<Item = Concept>,
        S: IntoIterator<Item = (ConceptId, ConceptId)>,
    {
        let mut onto = Ontology::default();
        for concept in concepts {
            onto.add_concept(concept)?;
        }
        for (parent, child) in subsumptions {
            for id in [&parent, &child] {
                if !onto.concepts.contains_key(id) {
                    return Err(OntologyError::Dangling {
                        file: "subsumptions",
                        line: 0,
                        id: id.to_string(),
                    });
                }
            }
            onto.add_subsumption(parent, child)?;
        }
        let report = onto.report();
        Ok((onto, report))
    }

    fn add_concept(&mut self, concept: Concept) -> Result<()> {
        if concept.label.is_empty() {
            return Err(OntologyError::EmptyLabel(concept.id));
        }
        if concept.complex && concept.verbalization.is_none() && concept.operator_tree.is_none() {
            return Err(OntologyError::MissingVerbalization(concept.id));
        }
        if self.concepts.contains_key(&concept.id) {
            return Err(OntologyError::DuplicateConcept(concept.id));
        }
        self.parents.insert(concept.id.clone(), BTreeSet::new());
        self.children.insert(concept.id.clone(), BTreeSet::new());
        self.concepts.insert(concept.id.clone(), concept);
        Ok(())
    }

    fn add_subsumption(&mut self, parent: ConceptId, child: ConceptId) -> Result<()> {
        if parent == child {
            return Err(OntologyError::SelfLoop(parent));
        }
        self.children.get_mut(&parent).expect("known parent").insert(child.clone());
        self.parents.get_mut(&child).expect("known child").insert(parent);
        Ok(())
    }

    /// Counts and structural warnings for the current graph.
    pub fn report(&self) -> LoadReport {
        let mut warnings = Vec::new();
        for (child, parents) in &self.parents {
            if self.concepts[child].complex {
                for parent in parents {
                    warnings.push(LoadWarning::ComplexChild {
                        parent: parent.clone(),
                        child: child.clone(),
                    });
                }
            }
        }
        let on_cycles = self.concepts_on_cycles();
        if on_cycles > 0 {
            warnings.push(LoadWarning::Cycle { concepts_on_cycles: on_cycles });
        }
        LoadReport {
            concepts: self.concepts.len(),
            complex: self.concepts.values().filter(|c| c.complex).count(),
            subsumptions: self.subsumption_count(),
            warnings,
        }
    }

    // Kahn's algorithm; whatever is never released sits on or below a cycle.
    fn concepts_on_cycles(&self) -> usize {
        let mut indegree: BTreeMap<&ConceptId, usize> =
            self.parents.iter().map(|(c, ps)| (c, ps.len())).collect();
        let mut queue: VecDeque<&ConceptId> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(c, _)| *c).collect();
        let mut released = 0;
        while let Some(c) = queue.pop_front() {
            released += 1;
            for child in &self.children[c] {
                let d = indegree.get_mut(child).expect("known child");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(child);
                }
            }
        }
        self.concepts.len() - released
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn subsumption_count(&self) -> usize {
        self.children.values().map(BTreeSet::len).sum()
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.concepts.contains_key(id)
    }

    pub fn concept(&self, id: &ConceptId) -> Result<&Concept> {
        self.concepts.get(id).ok_or_else(|| OntologyError::UnknownConcept(id.clone()))
    }

    /// Concepts in id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> + '_ {
        self.concepts.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ConceptId> + '_ {
        self.concepts.keys()
    }

    /// Direct `(parent, child)` pairs in sorted order.
    pub fn subsumptions(&self) -> impl Iterator<Item = (&ConceptId, &ConceptId)> + '_ {
        self.children.iter().flat_map(|(p, cs)| cs.iter().map(move |c| (p, c)))
    }

    pub fn parents(&self, id: &ConceptId) -> Result<&BTreeSet<ConceptId>> {
        self.parents.get(id).ok_or_else(|| OntologyError::UnknownConcept(id.clone()))
    }

    pub fn children(&self, id: &ConceptId) -> Result<&BTreeSet<ConceptId>> {
        self.children.get(id).ok_or_else(|| OntologyError::UnknownConcept(id.clone()))
    }

    pub fn is_leaf(&self, id: &ConceptId) -> Result<bool> {
        Ok(self.children(id)?.is_empty())
    }

    pub fn verbalize(&self, id: &ConceptId) -> Result<String> {
        verbalize(self.concept(id)?)
    }

    /// Prompt/serialization text for an edge's child, `NULL` for leaves.
    pub fn child_text(&self, child: &EdgeChild) -> Result<String> {
        match child {
            EdgeChild::Concept(c) => self.verbalize(c),
            EdgeChild::Null => Ok(NULL_SENTINEL.to_string()),
        }
    }

    /// Checks that both endpoints of `edge` exist.
    pub fn check_edge(&self, edge: &Edge) -> Result<()> {
        if !self.contains(&edge.parent) {
            return Err(OntologyError::DanglingEdge(edge.parent.to_string()));
        }
        if let EdgeChild::Concept(c) = &edge.child {
            if !self.contains(c) {
                return Err(OntologyError::DanglingEdge(c.to_string()));
            }
        }
        Ok(())
    }

    /// All one-hop edges, all two-hop edges `G -> D` with `G -> X -> D`, and
    /// `L -> NULL` for every leaf `L`. Sorted, without duplicates.
    pub fn enumerate_edge_space(&self) -> Vec<Edge> {
        let mut edges = BTreeSet::new();
        for (id, kids) in &self.children {
            if kids.is_empty() {
                edges.insert(Edge::leaf(id));
            }
            for kid in kids {
                edges.insert(Edge::between(id, kid));
                for grandkid in &self.children[kid] {
                    if grandkid != id {
                        edges.insert(Edge::between(id, grandkid));
                    }
                }
            }
        }
        edges.into_iter().collect()
    }

    /// Returns a new version with `concept` placed into `edges`.
    ///
    /// Each `P -> C` adds `P ⊒ new` and, for a concept child, `new ⊒ C`.
    /// Existing subsumptions are kept, including a direct `P -> C` that the
    /// new concept now sits between.
    pub fn insert_placement(&self, concept: Concept, edges: &BTreeSet<Edge>) -> Result<Ontology> {
        for edge in edges {
            self.check_edge(edge)?;
        }
        let mut next = self.clone();
        let id = concept.id.clone();
        next.add_concept(concept)?;
        for edge in edges {
            next.add_subsumption(edge.parent.clone(), id.clone())?;
            if let EdgeChild::Concept(c) = &edge.child {
                next.add_subsumption(id.clone(), c.clone())?;
            }
        }
        Ok(next)
    }

    /// Writes concepts as JSON lines in id order.
    pub fn write_concepts<W: Write>(&self, mut out: W) -> Result<()> {
        for concept in self.concepts.values() {
            let line = serde_json::to_string(concept).expect("concept serializes");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Writes `parent<TAB>child` lines sorted by parent then child.
    pub fn write_subsumptions<W: Write>(&self, mut out: W) -> Result<()> {
        for (p, c) in self.subsumptions() {
            writeln!(out, "{p}\t{c}")?;
        }
        Ok(())
    }
}

/// Reads the concept and subsumption files. Blank lines are skipped; errors
/// carry 1-based line numbers.
pub fn load_ontology<C: BufRead, S: BufRead>(concepts: C, subsumptions: S) -> Result<(Ontology, LoadReport)> {
    let mut onto = Ontology::default();
    for (i, line) in concepts.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let concept: Concept = serde_json::from_str(&line).map_err(|e| OntologyError::Malformed {
            file: "concepts",
            line: i + 1,
            message: e.to_string(),
        })?;
        onto.add_concept(concept)?;
    }
    for (i, line) in subsumptions.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: &str| OntologyError::Malformed {
            file: "subsumptions",
            line: i + 1,
            message: message.to_string(),
        };
        let mut fields = line.split('\t');
        let (Some(p), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected parent<TAB>child"));
        };
        let p = ConceptId::new(p).map_err(|e| malformed(&e.to_string()))?;
        let c = ConceptId::new(c).map_err(|e| malformed(&e.to_string()))?;
        for id in [&p, &c] {
            if !onto.contains(id) {
                return Err(OntologyError::Dangling { file: "subsumptions", line: i + 1, id: id.to_string() });
            }
        }
        if p == c {
            return Err(malformed("self-loop"));
        }
        onto.add_subsumption(p, c)?;
    }
    let report = onto.report();
    Ok((onto, report))
}
