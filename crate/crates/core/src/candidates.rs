//! Edge formation, enrichment and scoring: turns search results into a
//! top-k slate of candidate edges for one mention.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    cosine, dot_score, rank_by, serialize_edge, serialize_mention, ContextualMention, EmbeddingError,
    EmbeddingVector, SerializationBudget, TextEmbedder,
};
use crate::lexical::{InvertedIndex, LexicalError, Tokenizer};
use crate::ontology::{ConceptId, Edge, EdgeChild, Ontology, OntologyError};
use crate::parallel::map_ordered;

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error("k must be even and at least 2, got {0}")]
    InvalidK(usize),
    #[error("leaf edge {0} has no mean score; route it through the leaf rule")]
    LeafEdgeWithMeanScorer(Edge),
}

pub type Result<T, E = CandidateError> = std::result::Result<T, E>;

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeOrigin {
    SeedConceptFormed,
    SeedEdge,
    Enriched,
    LeafEnriched,
}

impl EdgeOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeOrigin::SeedConceptFormed => "seed-concept-formed",
            EdgeOrigin::SeedEdge => "seed-edge",
            EdgeOrigin::Enriched => "enriched",
            EdgeOrigin::LeafEnriched => "leaf-enriched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "(String, String, f64, EdgeOrigin)", try_from = "(String, String, f64, EdgeOrigin)")]
pub struct ScoredEdge {
    pub edge: Edge,
    pub score: f64,
    pub origin: EdgeOrigin,
}

impl From<ScoredEdge> for (String, String, f64, EdgeOrigin) {
    fn from(s: ScoredEdge) -> Self {
        let (p, c) = s.edge.into();
        (p, c, s.score, s.origin)
    }
}

impl TryFrom<(String, String, f64, EdgeOrigin)> for ScoredEdge {
    type Error = OntologyError;
    fn try_from((p, c, score, origin): (String, String, f64, EdgeOrigin)) -> Result<Self, OntologyError> {
        Ok(ScoredEdge { edge: Edge::parse(&p, &c)?, score, origin })
    }
}

/// Slate order: score descending, then parent id, then child id with
/// `NULL` after concrete children.
pub fn slate_order(a: &ScoredEdge, b: &ScoredEdge) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.edge.cmp(&b.edge))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSlate {
    pub mention: ContextualMention,
    pub k: usize,
    pub edges: Vec<ScoredEdge>,
}

impl CandidateSlate {
    pub fn edge_list(&self) -> Vec<Edge> {
        self.edges.iter().map(|s| s.edge.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }
}

/// One-hop edges through `a`, two-hop edges across `a`, and `a -> NULL`.
pub fn form_edges(o: &Ontology, a: &ConceptId) -> Result<BTreeSet<Edge>> {
    let parents = o.parents(a)?;
    let children = o.children(a)?;
    let mut edges = BTreeSet::new();
    for p in parents {
        edges.insert(Edge::between(p, a));
    }
    for c in children {
        edges.insert(Edge::between(a, c));
        for p in parents {
            if p != c {
                edges.insert(Edge::between(p, c));
            }
        }
    }
    edges.insert(Edge::leaf(a));
    Ok(edges)
}

/// Expands every seed one hop up (parents of its parent) and one hop down
/// (children of its child), and adds leaf edges for the parent-side
/// concepts of non-leaf seeds. A leaf seed only expands upwards.
pub fn enrich_edges<'a, I>(o: &Ontology, seeds: I) -> Result<BTreeSet<Edge>>
where
    I: IntoIterator<Item = &'a Edge>,
{
    let mut out = BTreeSet::new();
    for seed in seeds {
        o.check_edge(seed)?;
        let mut uppers: Vec<&ConceptId> = vec![&seed.parent];
        uppers.extend(o.parents(&seed.parent)?);
        match &seed.child {
            EdgeChild::Null => {
                for p in uppers {
                    out.insert(Edge::leaf(p));
                }
            }
            EdgeChild::Concept(c) => {
                let mut lowers: Vec<&ConceptId> = vec![c];
                lowers.extend(o.children(c)?);
                for p in &uppers {
                    for l in &lowers {
                        if p != l {
                            out.insert(Edge::between(p, l));
                        }
                    }
                    out.insert(Edge::leaf(p));
                }
            }
        }
    }
    Ok(out)
}

/// When the top seed concept is a leaf, lifts every leaf edge above every
/// non-leaf edge. Leaf scores are shifted to start `epsilon` above the
/// current maximum, so their order among themselves is kept. The result is
/// sorted in slate order.
pub fn apply_leaf_rule(
    o: &Ontology,
    top_seed_concept: &ConceptId,
    mut scored: Vec<ScoredEdge>,
    epsilon: f64,
) -> Result<Vec<ScoredEdge>> {
    if o.is_leaf(top_seed_concept)? && !scored.is_empty() {
        let max = scored.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
        let min_leaf = scored.iter().filter(|s| s.edge.is_leaf()).map(|s| s.score).fold(f64::INFINITY, f64::min);
        for s in scored.iter_mut().filter(|s| s.edge.is_leaf()) {
            s.score = max + epsilon + (s.score - min_leaf);
        }
    }
    scored.sort_by(slate_order);
    Ok(scored)
}

/// Scoring formula used to rank edges for a mention.
pub enum EdgeScorer<'a> {
    /// Mean cosine similarity of the mention to parent and child.
    FixedCosineMean { ontology: &'a Ontology, embedder: &'a dyn TextEmbedder },
    /// Dot product of the serialized mention and serialized edge vectors.
    DotProduct {
        ontology: &'a Ontology,
        embedder: &'a dyn TextEmbedder,
        budget: SerializationBudget,
        with_context: bool,
    },
    /// Mean idf similarity of the mention to parent and child.
    LexicalIdfMean { index: &'a InvertedIndex, tokenizer: &'a Tokenizer },
}

impl EdgeScorer<'_> {
    /// Scores a batch of edges. Under the mean scorers a leaf edge, which
    /// has no child similarity, gets its parent similarity.
    pub fn score_all(&self, m: &ContextualMention, edges: &[Edge]) -> Result<Vec<f64>> {
        match self {
            EdgeScorer::LexicalIdfMean { index, tokenizer } => {
                let mention_tokens = tokenizer.token_set(&m.mention);
                let sim = |id: &ConceptId| -> Result<f64> {
                    let tokens = index.token_set(id).ok_or_else(|| LexicalError::UnknownConcept(id.clone()))?;
                    Ok(mention_tokens.intersection(tokens).map(|t| index.idf(t)).sum())
                };
                edges
                    .iter()
                    .map(|e| {
                        let sp = sim(&e.parent)?;
                        Ok(match &e.child {
                            EdgeChild::Concept(c) => (sp + sim(c)?) / 2.0,
                            EdgeChild::Null => sp,
                        })
                    })
                    .collect()
            }
            EdgeScorer::FixedCosineMean { ontology, embedder } => {
                let mut ids: BTreeSet<&ConceptId> = BTreeSet::new();
                for e in edges {
                    ids.insert(&e.parent);
                    if let Some(c) = e.child.concept() {
                        ids.insert(c);
                    }
                }
                let ids: Vec<&ConceptId> = ids.into_iter().collect();
                let mut texts = vec![m.mention.clone()];
                for id in &ids {
                    texts.push(ontology.verbalize(id)?);
                }
                let vectors = embedder.embed_texts(&texts)?;
                let mv = &vectors[0];
                let sims: BTreeMap<&ConceptId, f64> = ids
                    .iter()
                    .zip(&vectors[1..])
                    .map(|(id, v)| Ok((*id, cosine(mv, v)?)))
                    .collect::<Result<_>>()?;
                Ok(edges
                    .iter()
                    .map(|e| match &e.child {
                        EdgeChild::Concept(c) => (sims[&e.parent] + sims[c]) / 2.0,
                        EdgeChild::Null => sims[&e.parent],
                    })
                    .collect())
            }
            EdgeScorer::DotProduct { ontology, embedder, budget, with_context } => {
                let mut texts = vec![serialize_mention(m, budget.context, *with_context)];
                for e in edges {
                    texts.push(serialize_edge(ontology, e, budget.concept)?);
                }
                let vectors = embedder.embed_texts(&texts)?;
                vectors[1..].iter().map(|v| Ok(dot_score(&vectors[0], v)?)).collect()
            }
        }
    }
}

/// Score of one edge. The mean scorers reject leaf edges.
pub fn score_edge(scorer: &EdgeScorer<'_>, m: &ContextualMention, e: &Edge) -> Result<f64> {
    if e.is_leaf() && !matches!(scorer, EdgeScorer::DotProduct { .. }) {
        return Err(CandidateError::LeafEdgeWithMeanScorer(e.clone()));
    }
    Ok(scorer.score_all(m, std::slice::from_ref(e))?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Lexical,
    #[serde(alias = "fixed")]
    FixedEmbedding,
    #[serde(alias = "biencoder")]
    EdgeBiencoder,
}

impl std::str::FromStr for SearchMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lexical" => Ok(SearchMethod::Lexical),
            "fixed" | "fixed-embedding" => Ok(SearchMethod::FixedEmbedding),
            "biencoder" | "edge-biencoder" => Ok(SearchMethod::EdgeBiencoder),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

impl std::fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMethod::Lexical => "lexical",
            SearchMethod::FixedEmbedding => "fixed",
            SearchMethod::EdgeBiencoder => "biencoder",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    pub budget: SerializationBudget,
    /// Bi-encoder mentions carry their contexts; concept search never does.
    pub with_context: bool,
    /// Cap on seed concepts consumed during edge formation.
    pub max_seed_concepts: usize,
    pub leaf_epsilon: f64,
}

impl Default for CandidateParams {
    fn default() -> Self {
        CandidateParams {
            budget: SerializationBudget::default(),
            with_context: true,
            max_seed_concepts: 50,
            leaf_epsilon: 1e-6,
        }
    }
}

enum Backend<'a> {
    Lexical { index: &'a InvertedIndex, tokenizer: &'a Tokenizer },
    Fixed { embedder: &'a dyn TextEmbedder, concepts: Vec<(ConceptId, EmbeddingVector)> },
    Biencoder { embedder: &'a dyn TextEmbedder, edges: Vec<(Edge, EmbeddingVector)> },
}

/// Runs search → formation/enrichment → ranking for mentions against one
/// ontology version. Construction precomputes the concept or edge vectors
/// the search step scans.
pub struct CandidateGenerator<'a> {
    ontology: &'a Ontology,
    backend: Backend<'a>,
    params: CandidateParams,
}

impl<'a> CandidateGenerator<'a> {
    pub fn lexical(
        ontology: &'a Ontology,
        index: &'a InvertedIndex,
        tokenizer: &'a Tokenizer,
        params: CandidateParams,
    ) -> Self {
        CandidateGenerator { ontology, backend: Backend::Lexical { index, tokenizer }, params }
    }

    pub fn fixed(ontology: &'a Ontology, embedder: &'a dyn TextEmbedder, params: CandidateParams) -> Result<Self> {
        let ids: Vec<ConceptId> = ontology.ids().cloned().collect();
        let texts = ids.iter().map(|id| ontology.verbalize(id)).collect::<Result<Vec<_>, _>>()?;
        let vectors = embedder.embed_texts(&texts)?;
        let concepts = ids.into_iter().zip(vectors).collect();
        Ok(CandidateGenerator { ontology, backend: Backend::Fixed { embedder, concepts }, params })
    }

    /// `edge_space` narrows the edges scanned for seeds; by default the
    /// whole enumerated edge space is scanned.
    pub fn biencoder(
        ontology: &'a Ontology,
        embedder: &'a dyn TextEmbedder,
        params: CandidateParams,
        edge_space: Option<Vec<Edge>>,
    ) -> Result<Self> {
        let edges = edge_space.unwrap_or_else(|| ontology.enumerate_edge_space());
        let texts = edges
            .iter()
            .map(|e| serialize_edge(ontology, e, params.budget.concept))
            .collect::<Result<Vec<_>, _>>()?;
        let vectors = embedder.embed_texts(&texts)?;
        let edges = edges.into_iter().zip(vectors).collect();
        Ok(CandidateGenerator { ontology, backend: Backend::Biencoder { embedder, edges }, params })
    }

    pub fn method(&self) -> SearchMethod {
        match self.backend {
            Backend::Lexical { .. } => SearchMethod::Lexical,
            Backend::Fixed { .. } => SearchMethod::FixedEmbedding,
            Backend::Biencoder { .. } => SearchMethod::EdgeBiencoder,
        }
    }

    pub fn ontology(&self) -> &Ontology {
        self.ontology
    }

    pub fn params(&self) -> &CandidateParams {
        &self.params
    }

    pub fn scorer(&self) -> EdgeScorer<'_> {
        match &self.backend {
            Backend::Lexical { index, tokenizer } => EdgeScorer::LexicalIdfMean { index, tokenizer },
            Backend::Fixed { embedder, .. } => EdgeScorer::FixedCosineMean { ontology: self.ontology, embedder: *embedder },
            Backend::Biencoder { embedder, .. } => EdgeScorer::DotProduct {
                ontology: self.ontology,
                embedder: *embedder,
                budget: self.params.budget,
                with_context: self.params.with_context,
            },
        }
    }

    /// Ranked seed concepts for the concept-search methods.
    pub fn search_concepts(&self, m: &ContextualMention) -> Result<Vec<(ConceptId, f64)>> {
        let top_n = self.params.max_seed_concepts;
        match &self.backend {
            Backend::Lexical { index, tokenizer } => Ok(index.search(tokenizer, &m.mention, top_n)),
            Backend::Fixed { embedder, concepts } => {
                let mv = embedder.embed_texts(std::slice::from_ref(&m.mention))?.remove(0);
                Ok(rank_by(&mv, concepts.iter().map(|(id, v)| (id.clone(), v.clone())), top_n, cosine)?)
            }
            Backend::Biencoder { .. } => Ok(Vec::new()),
        }
    }

    /// Top `top_n` edges of the scanned edge space by dot score.
    pub fn search_edges(&self, m: &ContextualMention, top_n: usize) -> Result<Vec<(Edge, f64)>> {
        let Backend::Biencoder { embedder, edges } = &self.backend else {
            return Ok(Vec::new());
        };
        let text = serialize_mention(m, self.params.budget.context, self.params.with_context);
        let mv = embedder.embed_texts(&[text])?.remove(0);
        let mut ranked = Vec::with_capacity(edges.len());
        for (e, v) in edges {
            ranked.push((e, dot_score(&mv, v)?));
        }
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(top_n);
        Ok(ranked.into_iter().map(|(e, s)| (e.clone(), s)).collect())
    }

    /// Top-`k` slate for one mention, enriched from `k/2` seed edges.
    pub fn generate(&self, m: &ContextualMention, k: usize) -> Result<CandidateSlate> {
        if k < 2 || k % 2 != 0 {
            return Err(CandidateError::InvalidK(k));
        }
        let half = k / 2;
        let scorer = self.scorer();
        let (seeds, top_concept) = match self.backend {
            Backend::Biencoder { .. } => {
                let seeds: Vec<ScoredEdge> = self
                    .search_edges(m, half)?
                    .into_iter()
                    .map(|(edge, score)| ScoredEdge { edge, score, origin: EdgeOrigin::SeedEdge })
                    .collect();
                (seeds, None)
            }
            _ => {
                let concepts = self.search_concepts(m)?;
                let Some((top, _)) = concepts.first() else {
                    return Ok(CandidateSlate { mention: m.clone(), k, edges: Vec::new() });
                };
                let mut formed = BTreeSet::new();
                for (c, _) in &concepts {
                    formed.extend(form_edges(self.ontology, c)?);
                    if formed.len() >= half {
                        break;
                    }
                }
                let formed: Vec<Edge> = formed.into_iter().collect();
                let scores = scorer.score_all(m, &formed)?;
                let scored = formed
                    .into_iter()
                    .zip(scores)
                    .map(|(edge, score)| ScoredEdge { edge, score, origin: EdgeOrigin::SeedConceptFormed })
                    .collect();
                let mut ranked = apply_leaf_rule(self.ontology, top, scored, self.params.leaf_epsilon)?;
                ranked.truncate(half);
                (ranked, Some(top.clone()))
            }
        };

        let seed_origin: BTreeMap<&Edge, EdgeOrigin> = seeds.iter().map(|s| (&s.edge, s.origin)).collect();
        let enriched: Vec<Edge> = enrich_edges(self.ontology, seeds.iter().map(|s| &s.edge))?.into_iter().collect();
        let scores = scorer.score_all(m, &enriched)?;
        let scored: Vec<ScoredEdge> = enriched
            .into_iter()
            .zip(scores)
            .map(|(edge, score)| {
                let origin = seed_origin.get(&edge).copied().unwrap_or(if edge.is_leaf() {
                    EdgeOrigin::LeafEnriched
                } else {
                    EdgeOrigin::Enriched
                });
                ScoredEdge { edge, score, origin }
            })
            .collect();
        let mut ranked = match &top_concept {
            Some(top) => apply_leaf_rule(self.ontology, top, scored, self.params.leaf_epsilon)?,
            None => {
                let mut s = scored;
                s.sort_by(slate_order);
                s
            }
        };
        ranked.truncate(k);
        Ok(CandidateSlate { mention: m.clone(), k, edges: ranked })
    }

    /// Slates for many mentions on up to `workers` threads; output order
    /// follows input order.
    pub fn generate_batch(&self, mentions: &[ContextualMention], k: usize, workers: usize) -> Vec<Result<CandidateSlate>>
    where
        Self: Sync,
    {
        map_ordered(mentions, workers, |m| self.generate(m, k))
    }
}
