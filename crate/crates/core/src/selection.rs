//! Final edge selection over a candidate slate: cross-encoder rows and loss,
//! LLM prompts, explanation templates and response parsing.
//!
//! Option numbers are slate positions everywhere in this module, so prompt
//! options, cross rows and parsed answers share one indexing.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{slate_order, CandidateSlate};
use crate::embedding::{serialize_edge, serialize_mention, ContextualMention, EmbeddingError, SerializationBudget};
use crate::eval::PlacementDataset;
use crate::lexical::Tokenizer;
use crate::ontology::{Edge, Ontology, OntologyError};

pub const INSTRUCTION: &str = "Can you identify the correct ontological edges for the given mention (marked with *) based on the context? The ontological edge consists of a pair where the left concept represents the parent of the mention, and the right concept represents the child of the mention. If the mention is a leaf node, the right side of the edges will be NULL. If the context is not relevant to the options, make your decision solely based on the mention itself. There may be multiple correct options. Please answer briefly using option numbers, separated by commas. If none of the options is correct, please answer None.";

pub const ARROW: &str = "→";
pub const RESPONSE_HEADER: &str = "### Response:";
pub const EXPLANATION_HEADER: &str = "### Explanation:";
const FINAL_ANSWERS: &str = "the final answers are";

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("empty slate")]
    EmptySlate,
    #[error("empty input")]
    EmptyInput,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scorer returned {got} scores for {expected} rows")]
    CountMismatch { expected: usize, got: usize },
    #[error("prompt has {tokens} tokens, budget is {limit}")]
    OverBudget { tokens: usize, limit: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("no parseable answer in response")]
    ParseFailure,
    #[error("mention {0} has no gold edges")]
    MissingGold(usize),
    #[error("{mentions} mentions but {slates} slates")]
    Misaligned { mentions: usize, slates: usize },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub type Result<T, E = SelectionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossInputRow {
    pub text: String,
    pub candidate_index: usize,
}

/// `[CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP] parent [P-TAG] child [C-TAG] [SEP]`
/// for every slate entry, in slate order.
pub fn build_cross_rows(o: &Ontology, slate: &CandidateSlate, budget: SerializationBudget) -> Result<Vec<CrossInputRow>> {
    if slate.is_empty() {
        return Err(SelectionError::EmptySlate);
    }
    let mention = serialize_mention(&slate.mention, budget.context, true);
    slate
        .edges
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let edge = serialize_edge(o, &s.edge, budget.concept)?;
            let edge = edge.strip_prefix("[CLS] ").unwrap_or(&edge);
            Ok(CrossInputRow { text: format!("{mention} {edge}"), candidate_index: i })
        })
        .collect()
}

/// Summed sigmoid binary cross-entropy, evaluated as
/// `max(s, 0) - s·y + ln(1 + e^{-|s|})` so large scores stay finite.
pub fn bce_multilabel_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SelectionError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| s.max(0.0) - if y { s } else { 0.0 } + (-s.abs()).exp().ln_1p())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Transport to a cross-encoder that returns one score per row.
pub trait SelectionScorer: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionScorerEndpoint {
    pub locator: String,
    pub model: String,
    pub timeout: Duration,
}

impl SelectionScorerEndpoint {
    pub fn new(locator: &str, model: &str) -> Self {
        SelectionScorerEndpoint { locator: locator.to_string(), model: model.to_string(), timeout: Duration::from_secs(60) }
    }
}

/// Re-ranks the slate by the scorer's output; each edge keeps its origin
/// and takes the returned score.
pub fn select_scored(
    endpoint: &SelectionScorerEndpoint,
    scorer: &dyn SelectionScorer,
    slate: &CandidateSlate,
    rows: &[CrossInputRow],
) -> Result<CandidateSlate> {
    if rows.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let request = ScoreRequest { model: endpoint.model.clone(), rows: rows.iter().map(|r| r.text.clone()).collect() };
    let response = scorer.score(&request)?;
    if response.scores.len() != rows.len() || rows.len() != slate.len() {
        return Err(SelectionError::CountMismatch { expected: slate.len(), got: response.scores.len() });
    }
    if let Some(bad) = response.scores.iter().find(|s| !s.is_finite()) {
        return Err(SelectionError::Protocol(format!("non-finite score {bad}")));
    }
    let mut out = slate.clone();
    for row in rows {
        let s = out.edges.get_mut(row.candidate_index).ok_or(SelectionError::CountMismatch {
            expected: slate.len(),
            got: response.scores.len(),
        })?;
        s.score = response.scores[row.candidate_index];
    }
    out.edges.sort_by(slate_order);
    Ok(out)
}

/// The mention wrapped in asterisks inside its contexts.
pub fn mention_in_context(m: &ContextualMention) -> String {
    let mut line = String::new();
    let left = m.context_left.trim();
    if !left.is_empty() {
        line.push_str(left);
        line.push(' ');
    }
    line.push('*');
    line.push_str(m.mention.trim());
    line.push('*');
    let right = m.context_right.trim();
    if let Some(first) = right.chars().next() {
        if !first.is_ascii_punctuation() {
            line.push(' ');
        }
        line.push_str(right);
    }
    line
}

/// `parent → child` texts, `NULL` for leaf children.
pub fn option_texts(o: &Ontology, slate: &CandidateSlate) -> Result<Vec<String>> {
    slate
        .edges
        .iter()
        .map(|s| Ok(format!("{} {ARROW} {}", o.verbalize(&s.edge.parent)?, o.child_text(&s.edge.child)?)))
        .collect()
}

/// A prompt input with optional training-side annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Instruction, mention in context and numbered options.
    pub input_section: String,
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_option_indices: Option<BTreeSet<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl PromptBundle {
    /// Input followed by the response headline the model completes.
    pub fn zero_shot_prompt(&self) -> String {
        format!("{}\n{RESPONSE_HEADER}\n", self.input_section)
    }

    /// Input followed by the explanation headline, for explanation-tuned
    /// models.
    pub fn explained_prompt(&self) -> String {
        format!("{}\n{EXPLANATION_HEADER}\n", self.input_section)
    }

    /// Full training text: input, explanation and response sections.
    pub fn training_text(&self) -> Option<String> {
        let explanation = self.explanation.as_ref()?;
        let response = self.response.as_ref()?;
        Some(format!(
            "{}\n{EXPLANATION_HEADER}\n{explanation}\n\n{RESPONSE_HEADER}\n{response}",
            self.input_section
        ))
    }
}

/// Token limit checked before a prompt is sent. Counting uses the lexical
/// tokenizer, so the usable budget keeps a safety margin below the model's.
pub struct TokenBudget<'a> {
    pub tokenizer: &'a Tokenizer,
    pub max_tokens: usize,
    pub margin: f64,
}

impl<'a> TokenBudget<'a> {
    pub fn new(tokenizer: &'a Tokenizer, max_tokens: usize) -> Self {
        TokenBudget { tokenizer, max_tokens, margin: 0.05 }
    }

    pub fn limit(&self) -> usize {
        (self.max_tokens as f64 * (1.0 - self.margin)).floor() as usize
    }

    pub fn count(&self, text: &str) -> usize {
        self.tokenizer.tokenize(text).len()
    }

    pub fn check(&self, text: &str) -> Result<usize> {
        let tokens = self.count(text);
        if tokens > self.limit() {
            return Err(SelectionError::OverBudget { tokens, limit: self.limit() });
        }
        Ok(tokens)
    }
}

/// Zero-shot prompt for the slate's mention. Byte-stable for equal inputs.
pub fn build_zero_shot_prompt(o: &Ontology, slate: &CandidateSlate, budget: Option<&TokenBudget<'_>>) -> Result<PromptBundle> {
    if slate.is_empty() {
        return Err(SelectionError::EmptySlate);
    }
    let options = option_texts(o, slate)?;
    let mut input = format!(
        "### Input:\n{INSTRUCTION}\n\nmention in context:\n{}\n\noptions:\n",
        mention_in_context(&slate.mention)
    );
    for (i, text) in options.iter().enumerate() {
        input.push_str(&format!("{i}.{text}\n"));
    }
    let bundle = PromptBundle { input_section: input, options, gold_option_indices: None, explanation: None, response: None };
    if let Some(budget) = budget {
        budget.check(&bundle.zero_shot_prompt())?;
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOptions {
    /// Distinct in-range option numbers in the order they were written.
    pub indices: Vec<usize>,
    pub out_of_range: usize,
    /// The model answered None.
    pub none: bool,
}

impl ParsedOptions {
    pub fn set(&self) -> BTreeSet<usize> {
        self.indices.iter().copied().collect()
    }
}

fn parse_answer_line(line: &str, k: usize) -> Result<ParsedOptions> {
    let trimmed = line.trim().trim_matches(|c: char| c == '*' || c == '.' || c.is_whitespace());
    if trimmed.len() >= 4 && trimmed[..4].eq_ignore_ascii_case("none") {
        return Ok(ParsedOptions { none: true, ..ParsedOptions::default() });
    }
    let mut parsed = ParsedOptions::default();
    let mut found = false;
    for run in line.split(|c: char| !c.is_ascii_digit()).filter(|r| !r.is_empty()) {
        found = true;
        match run.parse::<usize>() {
            Ok(i) if i < k => {
                if !parsed.indices.contains(&i) {
                    parsed.indices.push(i);
                }
            }
            _ => parsed.out_of_range += 1,
        }
    }
    if found {
        Ok(parsed)
    } else {
        Err(SelectionError::ParseFailure)
    }
}

/// Option numbers from a short answer such as `2,8` or `None`, read from
/// the first non-blank line.
pub fn parse_option_response(text: &str, k: usize) -> Result<ParsedOptions> {
    let line = text.lines().find(|l| !l.trim().is_empty()).ok_or(SelectionError::ParseFailure)?;
    parse_answer_line(line, k)
}

fn find_ignore_case(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().rfind(&needle.to_ascii_lowercase())
}

/// Option numbers from an explanation-style completion: the response
/// section if present and parseable, otherwise the final-answers clause.
pub fn parse_explained_response(text: &str, k: usize) -> Result<ParsedOptions> {
    if let Some(at) = text.find(RESPONSE_HEADER) {
        if let Ok(parsed) = parse_option_response(&text[at + RESPONSE_HEADER.len()..], k) {
            return Ok(parsed);
        }
    }
    if let Some(at) = find_ignore_case(text, FINAL_ANSWERS) {
        let rest = &text[at + FINAL_ANSWERS.len()..];
        let clause = rest.lines().next().unwrap_or("");
        let end = clause.find(". ").unwrap_or(clause.len());
        return parse_answer_line(&clause[..end], k);
    }
    Err(SelectionError::ParseFailure)
}

/// Parses either a short answer or an explanation-style completion.
pub fn parse_any_response(text: &str, k: usize) -> Result<ParsedOptions> {
    if text.contains(RESPONSE_HEADER) || find_ignore_case(text, FINAL_ANSWERS).is_some() {
        parse_explained_response(text, k)
    } else {
        parse_option_response(text, k)
    }
}

fn list_or_none<I: IntoIterator<Item = String>>(items: I) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "None".to_string()
    } else {
        v.join(", ")
    }
}

fn dedup_in_order(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

/// Option numbers of the slate entries that are gold edges, ascending.
pub fn gold_option_indices(slate: &CandidateSlate, gold: &BTreeSet<Edge>) -> BTreeSet<usize> {
    slate.edges.iter().enumerate().filter(|(_, s)| gold.contains(&s.edge)).map(|(i, _)| i).collect()
}

/// Reasoning trace from candidate parents, to gold parents, to the options
/// they narrow to, to gold children, to the final option numbers.
pub fn build_explanation(o: &Ontology, slate: &CandidateSlate, gold: &BTreeSet<Edge>) -> Result<String> {
    let gold_parents: BTreeSet<_> = gold.iter().map(|e| &e.parent).collect();
    let answers = gold_option_indices(slate, gold);

    let parents = dedup_in_order(
        slate.edges.iter().map(|s| o.verbalize(&s.edge.parent)).collect::<Result<Vec<_>, _>>()?,
    );
    let correct_parents = dedup_in_order(
        slate
            .edges
            .iter()
            .filter(|s| gold_parents.contains(&s.edge.parent))
            .map(|s| o.verbalize(&s.edge.parent))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let narrowed: Vec<usize> = (0..slate.len()).filter(|i| gold_parents.contains(&slate.edges[*i].edge.parent)).collect();
    let children = dedup_in_order(
        narrowed.iter().map(|i| o.child_text(&slate.edges[*i].edge.child)).collect::<Result<Vec<_>, _>>()?,
    );
    let correct_children = dedup_in_order(
        narrowed
            .iter()
            .filter(|i| answers.contains(i))
            .map(|i| o.child_text(&slate.edges[*i].edge.child))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let mention = slate.mention.mention.trim();
    Ok(format!(
        "From the parents in the options above, including {}, the correct parents of the mention, {mention}, include {}. \
Thus the options are narrowed down to {}. From the children in the narrowed options, including {}, the correct children \
of the mention, {mention}, include {}. Thus, the final answers are {}.",
        list_or_none(parents),
        list_or_none(correct_parents),
        list_or_none(narrowed.iter().map(usize::to_string)),
        list_or_none(children),
        list_or_none(correct_children),
        list_or_none(answers.iter().map(usize::to_string)),
    ))
}

/// Short-answer form of a set of option numbers: `3,7` or `None`.
pub fn format_response(indices: &BTreeSet<usize>) -> String {
    if indices.is_empty() {
        "None".to_string()
    } else {
        indices.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpoint {
    pub locator: String,
    pub model: String,
    pub max_input_tokens: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub timeout: Duration,
}

impl LlmEndpoint {
    pub fn new(locator: &str, model: &str) -> Self {
        LlmEndpoint {
            locator: locator.to_string(),
            model: model.to_string(),
            max_input_tokens: 4096,
            max_new_tokens: 256,
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSelection {
    pub slate: CandidateSlate,
    /// Option numbers of the original slate, in generation order.
    pub selected: Vec<usize>,
    pub answered_none: bool,
    pub out_of_range: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub raw_response: String,
}

/// Prompts the model with the slate and moves the options it names to the
/// front, in the order generated. Unnamed options follow in their prior
/// order. A None answer or an unparseable response leaves the slate as is.
pub fn select_llm(
    endpoint: &LlmEndpoint,
    provider: &dyn CompletionProvider,
    tokenizer: &Tokenizer,
    o: &Ontology,
    slate: &CandidateSlate,
) -> Result<LlmSelection> {
    let budget = TokenBudget::new(tokenizer, endpoint.max_input_tokens);
    let bundle = build_zero_shot_prompt(o, slate, Some(&budget))?;
    let request = CompletionRequest {
        model: endpoint.model.clone(),
        prompt: bundle.zero_shot_prompt(),
        max_new_tokens: endpoint.max_new_tokens,
        temperature: endpoint.temperature,
    };
    let raw = provider.complete(&request)?.text;
    let mut result = LlmSelection {
        slate: slate.clone(),
        selected: Vec::new(),
        answered_none: false,
        out_of_range: 0,
        failure: None,
        raw_response: raw.clone(),
    };
    match parse_any_response(&raw, slate.len()) {
        Ok(parsed) => {
            result.answered_none = parsed.none;
            result.out_of_range = parsed.out_of_range;
            let chosen: BTreeSet<usize> = parsed.set();
            let mut edges: Vec<_> = parsed.indices.iter().map(|i| slate.edges[*i].clone()).collect();
            edges.extend(slate.edges.iter().enumerate().filter(|(i, _)| !chosen.contains(i)).map(|(_, s)| s.clone()));
            result.slate.edges = edges;
            result.selected = parsed.indices;
        }
        Err(e) => result.failure = Some(e.to_string()),
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention_id: Option<String>,
    pub text: String,
    pub response: String,
}

/// One explanation-tuning record per mention, pairing dataset mentions
/// with their slates by position.
pub fn emit_instruction_tuning_corpus(
    o: &Ontology,
    dataset: &PlacementDataset,
    slates: &[CandidateSlate],
) -> Result<Vec<TuningRecord>> {
    if dataset.mentions.len() != slates.len() {
        return Err(SelectionError::Misaligned { mentions: dataset.mentions.len(), slates: slates.len() });
    }
    let mut out = Vec::with_capacity(slates.len());
    for (i, (m, slate)) in dataset.mentions.iter().zip(slates).enumerate() {
        let gold: BTreeSet<Edge> = m.gold_edges.as_ref().ok_or(SelectionError::MissingGold(i))?.iter().cloned().collect();
        let mut slate = slate.clone();
        slate.mention = m.clone();
        let mut bundle = build_zero_shot_prompt(o, &slate, None)?;
        let gold_idx = gold_option_indices(&slate, &gold);
        bundle.explanation = Some(build_explanation(o, &slate, &gold)?);
        bundle.response = Some(format_response(&gold_idx));
        bundle.gold_option_indices = Some(gold_idx);
        out.push(TuningRecord {
            mention_id: m.id.clone(),
            text: bundle.training_text().expect("explanation and response set"),
            response: bundle.response.clone().unwrap_or_default(),
        });
    }
    Ok(out)
}
