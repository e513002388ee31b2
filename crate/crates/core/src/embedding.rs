//! Embedding representations of mentions, concepts and edges.
//!
//! Vectors come from an external encoder behind [`EmbeddingProvider`]; this
//! module owns the text layouts fed to it, the similarity functions used for
//! ranking, a keyed vector store, and the bi-encoder training loss as a pure
//! function.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{ConceptId, Edge, EdgeChild, Ontology, OntologyError};
use crate::parallel::map_ordered;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MENTION_START: &str = "[M_s]";
pub const MENTION_END: &str = "[M_e]";
pub const PARENT_TAG: &str = "[P-TAG]";
pub const CHILD_TAG: &str = "[C-TAG]";
pub const NULL_TOKEN: &str = "[NULL]";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite vector entry")]
    NonFinite,
    #[error("no vector stored for key {0:?}")]
    MissingKey(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("store line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

fn same_dim(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch { expected: u.dim(), found: v.dim() });
    }
    Ok(())
}

pub fn dot_score(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    same_dim(u, v)?;
    Ok(u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum())
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    same_dim(u, v)?;
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot_score(u, v)? / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossConfig {
    pub margin: f64,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        TripletLossConfig { margin: 0.2 }
    }
}

/// Max-margin triplet loss of one mention against its gold edge and the
/// other edges of its batch: `Σ_neg max(0, α − s(m, gold) + s(m, neg))`.
pub fn triplet_loss(
    mention: &EmbeddingVector,
    gold: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    cfg: TripletLossConfig,
) -> Result<f64> {
    let positive = dot_score(mention, gold)?;
    let mut loss = 0.0;
    for neg in negatives {
        loss += (cfg.margin - positive + dot_score(mention, neg)?).max(0.0);
    }
    Ok(loss)
}

/// A mention with its surrounding text. Contexts may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualMention {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub mention: String,
    #[serde(default)]
    pub context_left: String,
    #[serde(default)]
    pub context_right: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_edges: Option<Vec<Edge>>,
}

impl ContextualMention {
    pub fn new(mention: &str) -> Self {
        ContextualMention {
            id: None,
            mention: mention.to_string(),
            context_left: String::new(),
            context_right: String::new(),
            gold_edges: None,
        }
    }

    pub fn with_context(mut self, left: &str, right: &str) -> Self {
        self.context_left = left.to_string();
        self.context_right = right.to_string();
        self
    }

    pub fn with_gold(mut self, gold: Vec<Edge>) -> Self {
        self.gold_edges = Some(gold);
        self
    }
}

/// Sequence-length budgets, counted in whitespace tokens including markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializationBudget {
    pub context: usize,
    pub concept: usize,
}

impl Default for SerializationBudget {
    fn default() -> Self {
        SerializationBudget { context: 32, concept: 128 }
    }
}

// How many tokens of the left and right parts fit in `room`: the left part
// gets at least half (or whatever the right leaves over).
fn split_room(room: usize, left: usize, right: usize) -> (usize, usize) {
    let half = room / 2;
    let keep_left = left.min(half.max(room.saturating_sub(right)));
    let keep_right = right.min(room - keep_left);
    (keep_left, keep_right)
}

/// `[CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP]`.
///
/// The left context loses tokens from its start and the right context from
/// its end until the whole sequence fits `max_tokens`. The mention itself is
/// never cut.
pub fn serialize_mention(m: &ContextualMention, max_tokens: usize, with_context: bool) -> String {
    let mention: Vec<&str> = m.mention.split_whitespace().collect();
    let (left, right): (Vec<&str>, Vec<&str>) = if with_context {
        (m.context_left.split_whitespace().collect(), m.context_right.split_whitespace().collect())
    } else {
        (Vec::new(), Vec::new())
    };
    let room = max_tokens.saturating_sub(4 + mention.len());
    let (keep_left, keep_right) = split_room(room, left.len(), right.len());

    let mut parts: Vec<&str> = Vec::with_capacity(max_tokens.max(8));
    parts.push(CLS);
    parts.extend(&left[left.len() - keep_left..]);
    parts.push(MENTION_START);
    parts.extend(&mention);
    parts.push(MENTION_END);
    parts.extend(&right[..keep_right]);
    parts.push(SEP);
    parts.join(" ")
}

/// Edge text layout around pre-verbalized endpoint texts.
pub fn serialize_edge_texts(parent: &str, child: Option<&str>, max_tokens: usize) -> String {
    let parent: Vec<&str> = parent.split_whitespace().collect();
    let child: Vec<&str> = child.map(|c| c.split_whitespace().collect()).unwrap_or_default();
    let fixed = 4 + usize::from(child.is_empty());
    let room = max_tokens.saturating_sub(fixed);
    let (keep_p, keep_c) = split_room(room, parent.len(), child.len());

    let mut parts: Vec<&str> = vec![CLS];
    parts.extend(&parent[..keep_p]);
    parts.push(PARENT_TAG);
    if child.is_empty() {
        parts.push(NULL_TOKEN);
    } else {
        parts.extend(&child[..keep_c]);
    }
    parts.push(CHILD_TAG);
    parts.push(SEP);
    parts.join(" ")
}

/// `[CLS] parent [P-TAG] child-or-[NULL] [C-TAG] [SEP]`, endpoint texts
/// verbalized and cut from their ends to fit `max_tokens`.
pub fn serialize_edge(o: &Ontology, e: &Edge, max_tokens: usize) -> Result<String> {
    let parent = o.verbalize(&e.parent)?;
    let child = match &e.child {
        EdgeChild::Concept(c) => Some(o.verbalize(c)?),
        EdgeChild::Null => None,
    };
    Ok(serialize_edge_texts(&parent, child.as_deref(), max_tokens))
}

/// Keyed vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts a vector. The first insert into a zero-dimension store fixes
    /// its dimension.
    pub fn insert(&mut self, key: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        if self.dim == 0 && self.entries.is_empty() {
            self.dim = v.dim();
        }
        if v.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, found: v.dim() });
        }
        self.entries.insert(key.into(), v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn require(&self, key: &str) -> Result<&EmbeddingVector> {
        self.get(key).ok_or_else(|| EmbeddingError::MissingKey(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: EmbeddingStore) -> Result<()> {
        for (k, v) in other.entries {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// `dim=<d>` header, then `key<TAB>v1,v2,...` per line in key order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dim={}", self.dim)?;
        for (k, v) in &self.entries {
            if k.contains(['\t', '\n', '\r']) {
                return Err(EmbeddingError::Protocol(format!("key {k:?} contains a tab or newline")));
            }
            let values: Vec<String> = v.0.iter().map(f64::to_string).collect();
            writeln!(out, "{k}\t{}", values.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let dim = header
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .ok_or_else(|| EmbeddingError::Parse { line: 1, message: format!("bad header {header:?}") })?;
        let mut store = EmbeddingStore::new(dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| EmbeddingError::Parse { line: lineno, message };
            let (key, values) = line.split_once('\t').ok_or_else(|| parse_err("missing tab".into()))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let v = EmbeddingVector::new(values).map_err(|e| parse_err(e.to_string()))?;
            if v.dim() != dim {
                return Err(parse_err(format!("expected {dim} values, found {}", v.dim())));
            }
            store.entries.insert(key.to_string(), v);
        }
        Ok(store)
    }
}

/// Anything that can turn texts into vectors: a fixed store or a caching
/// provider client.
pub trait TextEmbedder: Sync {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

impl TextEmbedder for EmbeddingStore {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.require(t).cloned()).collect()
    }
}

/// Wire request to an embedding provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

/// Wire response; `vectors` is parallel to the request's `texts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Transport to an encoder. Implementations report retryable failures as
/// [`EmbeddingError::Transport`].
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderEndpoint {
    pub locator: String,
    pub model: String,
    pub timeout: Duration,
    pub retry_budget: u32,
}

impl EmbeddingProviderEndpoint {
    pub fn new(locator: &str, model: &str) -> Self {
        EmbeddingProviderEndpoint {
            locator: locator.to_string(),
            model: model.to_string(),
            timeout: Duration::from_secs(30),
            retry_budget: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(EmbeddingError::InvalidEndpoint("timeout must be positive".into()));
        }
        if self.locator.is_empty() {
            return Err(EmbeddingError::InvalidEndpoint("empty locator".into()));
        }
        Ok(())
    }
}

/// Batched, retrying, caching front end over an [`EmbeddingProvider`].
pub struct EmbeddingClient {
    endpoint: EmbeddingProviderEndpoint,
    provider: Box<dyn EmbeddingProvider>,
    cache: RwLock<EmbeddingStore>,
    batch_size: usize,
    parallelism: usize,
}

impl EmbeddingClient {
    pub fn new(endpoint: EmbeddingProviderEndpoint, provider: Box<dyn EmbeddingProvider>) -> Result<Self> {
        endpoint.validate()?;
        Ok(EmbeddingClient {
            endpoint,
            provider,
            cache: RwLock::new(EmbeddingStore::default()),
            batch_size: 64,
            parallelism: 1,
        })
    }

    pub fn with_batching(mut self, batch_size: usize, parallelism: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.parallelism = parallelism.max(1);
        self
    }

    /// Seeds the cache, e.g. from a store written by an earlier run.
    pub fn with_cache(self, store: EmbeddingStore) -> Self {
        *self.cache.write().expect("cache lock") = store;
        self
    }

    pub fn endpoint(&self) -> &EmbeddingProviderEndpoint {
        &self.endpoint
    }

    pub fn cache_snapshot(&self) -> EmbeddingStore {
        self.cache.read().expect("cache lock").clone()
    }

    fn call_with_retry(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let request = EmbedRequest { model: self.endpoint.model.clone(), texts: texts.to_vec() };
        let mut attempt = 0;
        let response = loop {
            match self.provider.embed(&request) {
                Ok(r) => break r,
                Err(EmbeddingError::Transport(_)) if attempt < self.endpoint.retry_budget => attempt += 1,
                Err(e) => return Err(e),
            }
        };
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::Protocol(format!(
                "{} vectors returned for {} texts",
                response.vectors.len(),
                texts.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != response.dim {
                    return Err(EmbeddingError::DimensionMismatch { expected: response.dim, found: v.len() });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

impl TextEmbedder for EmbeddingClient {
    /// One vector per text, in order. Texts already cached are not sent.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let missing: Vec<String> = {
            let cache = self.cache.read().expect("cache lock");
            let mut seen = std::collections::BTreeSet::new();
            texts.iter().filter(|t| cache.get(t).is_none() && seen.insert(t.as_str())).cloned().collect()
        };
        if !missing.is_empty() {
            let batches: Vec<&[String]> = missing.chunks(self.batch_size).collect();
            let results = map_ordered(&batches, self.parallelism, |batch| self.call_with_retry(batch));
            let mut cache = self.cache.write().expect("cache lock");
            for (batch, vectors) in batches.iter().zip(results) {
                for (text, v) in batch.iter().zip(vectors?) {
                    cache.insert(text.clone(), v)?;
                }
            }
        }
        let cache = self.cache.read().expect("cache lock");
        texts.iter().map(|t| cache.require(t).cloned()).collect()
    }
}

/// Ranks `(key, vector)` candidates by `score(query, vector)` descending,
/// ties by key ascending.
pub fn rank_by<K, F>(
    query: &EmbeddingVector,
    candidates: impl IntoIterator<Item = (K, EmbeddingVector)>,
    top_n: usize,
    score: F,
) -> Result<Vec<(K, f64)>>
where
    K: Ord,
    F: Fn(&EmbeddingVector, &EmbeddingVector) -> Result<f64>,
{
    let mut ranked = candidates
        .into_iter()
        .map(|(k, v)| Ok((k, score(query, &v)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    Ok(ranked)
}

/// Nearest concepts by cosine similarity.
pub fn search_concepts_embedding(
    store: &EmbeddingStore,
    mention_key: &str,
    concept_keys: &[(ConceptId, String)],
    top_n: usize,
) -> Result<Vec<(ConceptId, f64)>> {
    let query = store.require(mention_key)?;
    let candidates = concept_keys
        .iter()
        .map(|(id, key)| Ok((id.clone(), store.require(key)?.clone())))
        .collect::<Result<Vec<_>>>()?;
    rank_by(query, candidates, top_n, cosine)
}

/// Nearest edges by dot product.
pub fn search_edges_embedding(
    store: &EmbeddingStore,
    mention_key: &str,
    edge_keys: &[(Edge, String)],
    top_n: usize,
) -> Result<Vec<(Edge, f64)>> {
    let query = store.require(mention_key)?;
    let candidates = edge_keys
        .iter()
        .map(|(e, key)| Ok((e.clone(), store.require(key)?.clone())))
        .collect::<Result<Vec<_>>>()?;
    rank_by(query, candidates, top_n, dot_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Concept;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - 0.707_106_781_186_547_6).abs() < 1e-6);
        assert!(matches!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(EmbeddingError::ZeroNorm)));
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dot_cases() {
        assert_eq!(dot_score(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let unit = v(&[0.6, 0.8]);
        assert!((dot_score(&unit, &unit).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(dot_score(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert!(dot_score(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(EmbeddingVector::new(vec![f64::NAN]), Err(EmbeddingError::NonFinite)));
    }

    #[test]
    fn triplet_hinge_cases() {
        // unit mention; dot products equal the second coordinate choices below
        let m = v(&[1.0, 0.0]);
        let gold = v(&[1.0, 0.0]);
        let cfg = TripletLossConfig::default();
        assert_eq!(cfg.margin, 0.2);
        let loss = triplet_loss(&m, &gold, &[v(&[0.5, 0.0])], cfg).unwrap();
        assert_eq!(loss, 0.0);
        let loss = triplet_loss(&m, &gold, &[v(&[0.9, 0.0])], cfg).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);
        assert_eq!(triplet_loss(&m, &gold, &[], cfg).unwrap(), 0.0);
    }

    #[test]
    fn mention_layout_without_context() {
        let m = ContextualMention::new("CKD").with_context("ignored left", "ignored right");
        assert_eq!(serialize_mention(&m, 32, false), "[CLS] [M_s] CKD [M_e] [SEP]");
        assert_eq!(serialize_mention(&ContextualMention::new("CKD"), 32, true), "[CLS] [M_s] CKD [M_e] [SEP]");
    }

    #[test]
    fn mention_layout_with_context() {
        let m = ContextualMention::new("parathyroid carcinomas").with_context(
            "Our aim was to verify the occurrence of selected mutations of the EZH2 and ZFX genes in an Italian cohort of 23 sporadic",
            ", 12 atypical and 45 typical adenomas.",
        );
        let s = serialize_mention(&m, 512, true);
        assert!(s.contains("23 sporadic [M_s] parathyroid carcinomas [M_e] , 12 atypical"));
        assert!(s.starts_with("[CLS] Our aim"));
        assert!(s.ends_with("adenomas. [SEP]"));
    }

    #[test]
    fn mention_budget_truncates_far_ends() {
        let left: Vec<String> = (0..40).map(|i| format!("l{i}")).collect();
        let right: Vec<String> = (0..40).map(|i| format!("r{i}")).collect();
        let m = ContextualMention::new("target").with_context(&left.join(" "), &right.join(" "));
        let s = serialize_mention(&m, 32, true);
        let tokens: Vec<&str> = s.split_whitespace().collect();
        assert_eq!(tokens.len(), 32);
        // 32 - 4 markers - 1 mention = 27: 13 left, 14 right
        assert_eq!(tokens[1], "l27");
        assert_eq!(tokens[13], "l39");
        assert_eq!(tokens[14], "[M_s]");
        assert_eq!(tokens[30], "r13");

        // short right context hands its room to the left
        let m = ContextualMention::new("target").with_context(&left.join(" "), "r0");
        let tokens: Vec<String> = serialize_mention(&m, 32, true).split_whitespace().map(String::from).collect();
        assert_eq!(tokens.len(), 32);
        assert_eq!(tokens[1], "l14");
    }

    fn toy() -> Ontology {
        let concepts = vec![
            Concept::atomic("a", "Disease").unwrap(),
            Concept::atomic("b", "Kidney disease").unwrap(),
            Concept {
                complex: true,
                verbalization: None,
                operator_tree: Some(crate::ontology::OperatorTree::Some {
                    role: "DueTo".into(),
                    filler: Box::new(crate::ontology::OperatorTree::Atom("Disease".into())),
                }),
                ..Concept::atomic("x", "x").unwrap()
            },
        ];
        let id = |s: &str| ConceptId::new(s).unwrap();
        Ontology::from_parts(concepts, [(id("a"), id("b")), (id("x"), id("b"))]).unwrap().0
    }

    #[test]
    fn edge_layouts() {
        let o = toy();
        let id = |s: &str| ConceptId::new(s).unwrap();
        assert_eq!(
            serialize_edge(&o, &Edge::between(&id("a"), &id("b")), 128).unwrap(),
            "[CLS] Disease [P-TAG] Kidney disease [C-TAG] [SEP]"
        );
        assert_eq!(
            serialize_edge(&o, &Edge::leaf(&id("a")), 128).unwrap(),
            "[CLS] Disease [P-TAG] [NULL] [C-TAG] [SEP]"
        );
        assert_eq!(
            serialize_edge(&o, &Edge::between(&id("x"), &id("b")), 128).unwrap(),
            "[CLS] DueTo some Disease [P-TAG] Kidney disease [C-TAG] [SEP]"
        );
        assert!(serialize_edge(&o, &Edge::leaf(&id("zz")), 128).is_err());
        let capped = serialize_edge_texts(&"p ".repeat(100), Some(&"c ".repeat(100)), 128);
        assert_eq!(capped.split_whitespace().count(), 128);
    }

    #[test]
    fn store_file_round_trip() {
        let mut store = EmbeddingStore::new(2);
        store.insert("b key", v(&[0.1, -2.5])).unwrap();
        store.insert("a", v(&[1.0, 1e-17])).unwrap();
        assert!(store.insert("bad", v(&[1.0])).is_err());
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dim=2\na\t1,"));
        let back = EmbeddingStore::read(buf.as_slice()).unwrap();
        assert_eq!(back, store);
        assert!(EmbeddingStore::read("dim=2\nk\t1,2,3\n".as_bytes()).is_err());
        assert!(EmbeddingStore::read("nope\n".as_bytes()).is_err());
    }

    struct CountingProvider {
        calls: Arc<AtomicUsize>,
        extra: bool,
        fail_first: AtomicUsize,
    }

    impl EmbeddingProvider for CountingProvider {
        fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail_first.load(Ordering::SeqCst) > 0 {
                self.fail_first.fetch_sub(1, Ordering::SeqCst);
                return Err(EmbeddingError::Transport("flaky".into()));
            }
            let mut vectors: Vec<Vec<f64>> = request.texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect();
            if self.extra {
                vectors.push(vec![0.0, 0.0]);
            }
            Ok(EmbedResponse { dim: 2, vectors })
        }
    }

    fn client(extra: bool, fail_first: usize) -> (EmbeddingClient, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let provider = CountingProvider { calls: calls.clone(), extra, fail_first: AtomicUsize::new(fail_first) };
        let c = EmbeddingClient::new(EmbeddingProviderEndpoint::new("mock:", "m"), Box::new(provider)).unwrap();
        (c, calls)
    }

    #[test]
    fn client_caches_and_preserves_order() {
        let (c, calls) = client(false, 0);
        let texts = vec!["abc".to_string(), "".to_string()];
        let first = c.embed_texts(&texts).unwrap();
        assert_eq!(first, vec![v(&[3.0, 1.0]), v(&[0.0, 1.0])]);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let second = c.embed_texts(&texts).unwrap();
        assert_eq!(second, first);
        assert_eq!(calls.load(Ordering::SeqCst), 1, "second identical request hits the cache");
    }

    #[test]
    fn client_rejects_extra_vectors() {
        let (c, _) = client(true, 0);
        assert!(matches!(
            c.embed_texts(&["a".to_string(), "b".to_string()]),
            Err(EmbeddingError::Protocol(_))
        ));
    }

    #[test]
    fn client_retries_transport_failures() {
        let (c, calls) = client(false, 2);
        assert!(c.embed_texts(&["a".to_string()]).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        let (c, _) = client(false, 3);
        assert!(matches!(c.embed_texts(&["a".to_string()]), Err(EmbeddingError::Transport(_))));
    }

    #[test]
    fn client_batches_in_parallel() {
        let (c, calls) = client(false, 0);
        let c = c.with_batching(3, 4);
        let texts: Vec<String> = (0..10).map(|i| "x".repeat(i)).collect();
        let out = c.embed_texts(&texts).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out[7], v(&[7.0, 1.0]));
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn endpoint_timeout_must_be_positive() {
        let mut ep = EmbeddingProviderEndpoint::new("x", "m");
        ep.timeout = Duration::ZERO;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn concept_search_cases() {
        let mut store = EmbeddingStore::new(2);
        store.insert("m", v(&[1.0, 0.0])).unwrap();
        store.insert("c1", v(&[0.0, 1.0])).unwrap();
        store.insert("c2", v(&[2.0, 0.0])).unwrap();
        let id = |s: &str| ConceptId::new(s).unwrap();
        let one = search_concepts_embedding(&store, "m", &[(id("c1"), "c1".into())], 5).unwrap();
        assert_eq!(one.len(), 1);
        let both = search_concepts_embedding(&store, "m", &[(id("c1"), "c1".into()), (id("c2"), "c2".into())], 5).unwrap();
        assert_eq!(both[0], (id("c2"), 1.0));
        assert!(search_concepts_embedding(&store, "m", &[(id("c3"), "zz".into())], 5).is_err());
    }
}
