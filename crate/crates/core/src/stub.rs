//! Deterministic in-process providers for tests, demos and offline runs.
//!
//! Locators use the form `stub:<name>?key=value&...`.

use std::collections::BTreeMap;

use crate::embedding::{EmbedRequest, EmbedResponse, EmbeddingError, EmbeddingProvider, SEP};
use crate::selection::{
    CompletionProvider, CompletionRequest, CompletionResponse, ScoreRequest, ScoreResponse, SelectionError,
    SelectionScorer, ARROW,
};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lowercased alphanumeric words, with `[MARKER]` tokens dropped.
pub fn content_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| !(t.starts_with('[') && t.ends_with(']')))
        .flat_map(|t| t.split(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag-of-words random projection: each word maps to a fixed pseudo-random
/// direction and a text is the normalised sum of its words. Texts sharing
/// words get high cosine and dot scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: 64, seed: 0 }
    }
}

impl HashingEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut words = content_words(text);
        if words.is_empty() {
            words.push(String::new());
        }
        let mut acc = vec![0.0; self.dim];
        for w in &words {
            let mut state = fnv1a(w.as_bytes()) ^ self.seed;
            for slot in acc.iter_mut() {
                // uniform in [-1, 1)
                *slot += (splitmix64(&mut state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        acc
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, EmbeddingError> {
        Ok(EmbedResponse { dim: self.dim, vectors: request.texts.iter().map(|t| self.vector(t)).collect() })
    }
}

/// Splits `stub:name?k=v&k2=v2` into its name and parameters.
pub fn parse_stub_locator(locator: &str) -> Option<(String, BTreeMap<String, String>)> {
    let rest = locator.strip_prefix("stub:")?;
    let (name, query) = rest.split_once('?').unwrap_or((rest, ""));
    let params = query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (k.to_string(), v.to_string())
        })
        .collect();
    Some((name.to_string(), params))
}

/// `stub:hash?dim=D&seed=S` → [`HashingEmbedder`].
pub fn embedding_provider_from_locator(locator: &str) -> Result<Option<HashingEmbedder>, EmbeddingError> {
    let Some((name, params)) = parse_stub_locator(locator) else {
        return Ok(None);
    };
    if name != "hash" {
        return Err(EmbeddingError::InvalidEndpoint(format!("unknown stub embedder {name:?}")));
    }
    let get = |key: &str, default: u64| -> Result<u64, EmbeddingError> {
        params.get(key).map_or(Ok(default), |v| {
            v.parse().map_err(|_| EmbeddingError::InvalidEndpoint(format!("bad {key}={v}")))
        })
    };
    let dim = get("dim", 64)? as usize;
    if dim == 0 {
        return Err(EmbeddingError::InvalidEndpoint("dim must be positive".into()));
    }
    Ok(Some(HashingEmbedder { dim, seed: get("seed", 0)? }))
}

fn overlap(a: &[String], b: &[String]) -> f64 {
    let a: std::collections::BTreeSet<&String> = a.iter().collect();
    let b: std::collections::BTreeSet<&String> = b.iter().collect();
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

/// Cross-encoder stand-in: Dice overlap between the mention part and the
/// edge part of each row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapScorer;

impl OverlapScorer {
    pub fn row_score(row: &str) -> f64 {
        let (mention, edge) = row.split_once(SEP).unwrap_or((row, ""));
        overlap(&content_words(mention), &content_words(edge))
    }
}

impl SelectionScorer for OverlapScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, SelectionError> {
        Ok(ScoreResponse { scores: request.rows.iter().map(|r| Self::row_score(r)).collect() })
    }
}

/// LLM stand-in: answers with the options whose parent shares words with
/// the starred mention, best overlap first, or `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapLlm {
    pub max_answers: usize,
}

impl Default for OverlapLlm {
    fn default() -> Self {
        OverlapLlm { max_answers: 3 }
    }
}

impl OverlapLlm {
    pub fn answer(&self, prompt: &str) -> String {
        let mention = prompt
            .lines()
            .skip_while(|l| !l.starts_with("mention in context:"))
            .nth(1)
            .and_then(|l| l.split('*').nth(1))
            .unwrap_or("");
        let mention = content_words(mention);
        let mut scored: Vec<(f64, usize)> = prompt
            .lines()
            .skip_while(|l| !l.starts_with("options:"))
            .skip(1)
            .filter_map(|l| {
                let (num, rest) = l.split_once('.')?;
                let i: usize = num.parse().ok()?;
                let parent = rest.split(ARROW).next().unwrap_or("");
                Some((overlap(&mention, &content_words(parent)), i))
            })
            .filter(|(s, _)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(self.max_answers);
        if scored.is_empty() {
            "None".to_string()
        } else {
            scored.iter().map(|(_, i)| i.to_string()).collect::<Vec<_>>().join(",")
        }
    }
}

impl CompletionProvider for OverlapLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, SelectionError> {
        Ok(CompletionResponse { text: self.answer(&request.prompt) })
    }
}

/// `stub:overlap` → [`OverlapScorer`].
pub fn scorer_from_locator(locator: &str) -> Result<Option<OverlapScorer>, SelectionError> {
    match parse_stub_locator(locator) {
        None => Ok(None),
        Some((name, _)) if name == "overlap" => Ok(Some(OverlapScorer)),
        Some((name, _)) => Err(SelectionError::InvalidEndpoint(format!("unknown stub scorer {name:?}"))),
    }
}

/// `stub:overlap?max=N` → [`OverlapLlm`].
pub fn llm_from_locator(locator: &str) -> Result<Option<OverlapLlm>, SelectionError> {
    match parse_stub_locator(locator) {
        None => Ok(None),
        Some((name, params)) if name == "overlap" => {
            let max_answers = match params.get("max") {
                Some(v) => v.parse().map_err(|_| SelectionError::InvalidEndpoint(format!("bad max={v}")))?,
                None => 3,
            };
            Ok(Some(OverlapLlm { max_answers }))
        }
        Some((name, _)) => Err(SelectionError::InvalidEndpoint(format!("unknown stub llm {name:?}"))),
    }
}
