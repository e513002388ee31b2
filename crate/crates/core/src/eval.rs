//! Placement datasets, insertion-rate metrics and the benchmark harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::candidates::{CandidateError, CandidateGenerator, CandidateSlate};
use crate::embedding::ContextualMention;
use crate::ontology::{Edge, Ontology, NULL_SENTINEL};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("dataset line {line}: gold edge {edge} is not resolvable in the ontology")]
    DanglingGold { line: usize, edge: String },
    #[error("no records to evaluate")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train-inKB")]
    TrainInKb,
    #[serde(rename = "valid-inKB")]
    ValidInKb,
    #[serde(rename = "valid-outKB")]
    ValidOutKb,
    #[serde(rename = "test-outKB")]
    TestOutKb,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainInKb => "train-inKB",
            Split::ValidInKb => "valid-inKB",
            Split::ValidOutKb => "valid-outKB",
            Split::TestOutKb => "test-outKB",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Split::TrainInKb, Split::ValidInKb, Split::ValidOutKb, Split::TestOutKb]
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub mentions: Vec<ContextualMention>,
}

impl PlacementDataset {
    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    /// Number of mention-edge pairs.
    pub fn pair_count(&self) -> usize {
        self.mentions.iter().map(|m| m.gold_edges.as_ref().map_or(0, Vec::len)).sum()
    }
}

/// Reads one JSON record per line. Every record needs at least one gold
/// edge and every gold endpoint must exist in `o`.
pub fn load_dataset<R: BufRead>(reader: R, o: &Ontology, split: Option<Split>) -> Result<PlacementDataset> {
    let mut mentions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ContextualMention =
            serde_json::from_str(&line).map_err(|e| EvalError::Malformed { line: line_no, message: e.to_string() })?;
        check_mention(&m, o, line_no)?;
        mentions.push(m);
    }
    Ok(PlacementDataset { split, mentions })
}

fn check_mention(m: &ContextualMention, o: &Ontology, line: usize) -> Result<()> {
    if m.mention.trim().is_empty() {
        return Err(EvalError::Malformed { line, message: "empty mention".into() });
    }
    let gold = m.gold_edges.as_deref().unwrap_or_default();
    if gold.is_empty() {
        return Err(EvalError::Malformed { line, message: "no gold edges".into() });
    }
    for e in gold {
        if o.check_edge(e).is_err() {
            return Err(EvalError::DanglingGold { line, edge: e.to_string() });
        }
    }
    Ok(())
}

/// Writes the canonical line-delimited form read by [`load_dataset`].
pub fn write_dataset<W: std::io::Write>(d: &PlacementDataset, mut out: W) -> std::io::Result<()> {
    for m in &d.mentions {
        writeln!(out, "{}", serde_json::to_string(m).expect("mention serializes"))?;
    }
    Ok(())
}

fn field<'a>(v: &'a Value, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| v.get(*n))
}

fn strip_prefix_id(raw: &str, prefix: Option<&str>) -> String {
    let raw = raw.trim();
    match prefix {
        Some(p) => raw.strip_prefix(p).unwrap_or(raw).to_string(),
        None => raw.to_string(),
    }
}

fn adapt_edge(v: &Value, prefix: Option<&str>) -> Option<(String, String)> {
    match v {
        Value::Array(pair) if pair.len() == 2 => {
            Some((strip_prefix_id(pair[0].as_str()?, prefix), strip_prefix_id(pair[1].as_str()?, prefix)))
        }
        Value::String(s) => {
            let (p, c) = s.split_once("->").or_else(|| s.split_once('\t'))?;
            Some((strip_prefix_id(p, prefix), strip_prefix_id(c, prefix)))
        }
        Value::Object(_) => {
            let p = field(v, &["parent", "p"])?.as_str()?;
            let c = field(v, &["child", "c"]).and_then(Value::as_str).unwrap_or(NULL_SENTINEL);
            Some((strip_prefix_id(p, prefix), strip_prefix_id(c, prefix)))
        }
        _ => None,
    }
}

/// Converts one record of a published MM-S14 style release into a
/// canonical mention. Accepts the common field spellings for mention,
/// contexts and edges, edges as `P -> C` strings, pairs or objects, and
/// strips an optional id prefix such as `SCTID:`.
pub fn adapt_release_record(v: &Value, id_prefix: Option<&str>) -> Result<ContextualMention, String> {
    let text = |names: &[&str]| field(v, names).and_then(Value::as_str).unwrap_or("").to_string();
    let mention = text(&["mention", "mention_name", "name"]);
    if mention.is_empty() {
        return Err("record has no mention".into());
    }
    let edges_value = field(v, &["gold_edges", "edges", "parent_child_pairs", "labels"]).ok_or("record has no edges")?;
    let items = edges_value.as_array().ok_or("edges are not a list")?;
    let mut gold = Vec::new();
    for item in items {
        let (p, c) = adapt_edge(item, id_prefix).ok_or_else(|| format!("unreadable edge {item}"))?;
        let c = if c.eq_ignore_ascii_case("null") || c.is_empty() { NULL_SENTINEL.to_string() } else { c };
        let e = Edge::parse(&p, &c).map_err(|e| e.to_string())?;
        if !gold.contains(&e) {
            gold.push(e);
        }
    }
    let mut m = ContextualMention::new(&mention).with_context(
        &text(&["context_left", "context_l", "left_context"]),
        &text(&["context_right", "context_r", "right_context"]),
    );
    m.id = field(v, &["id", "mention_id"]).map(|i| match i {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    });
    Ok(m.with_gold(gold))
}

/// Predictions and gold labels of one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    /// Ranked predictions without duplicates.
    pub predicted: Vec<Edge>,
    pub gold: BTreeSet<Edge>,
}

impl PredictionRecord {
    /// Drops repeated predictions, keeping first occurrences.
    pub fn new(index: usize, predicted: impl IntoIterator<Item = Edge>, gold: impl IntoIterator<Item = Edge>) -> Self {
        let mut seen = BTreeSet::new();
        let predicted = predicted.into_iter().filter(|e| seen.insert(e.clone())).collect();
        PredictionRecord { index, predicted, gold: gold.into_iter().collect() }
    }

    fn hits_any(&self, k: usize) -> bool {
        self.predicted.iter().take(k).any(|e| self.gold.contains(e))
    }

    fn hits_all(&self, k: usize) -> bool {
        let top: BTreeSet<&Edge> = self.predicted.iter().take(k).collect();
        self.gold.iter().all(|e| top.contains(e))
    }

    /// Leaf mentions have only `NULL`-child gold edges; everything else,
    /// including mixed gold sets, is non-leaf.
    pub fn subset(&self) -> Subset {
        if !self.gold.is_empty() && self.gold.iter().all(Edge::is_leaf) {
            Subset::Leaf
        } else {
            Subset::Nonleaf
        }
    }
}

fn rate(records: &[&PredictionRecord], hit: impl Fn(&PredictionRecord) -> bool) -> Result<f64> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records.iter().filter(|r| hit(r)).count() as f64 / records.len() as f64)
}

/// Fraction of mentions with at least one gold edge among the predictions.
pub fn inr_any(records: &[PredictionRecord]) -> Result<f64> {
    rate(&records.iter().collect::<Vec<_>>(), |r| r.hits_any(usize::MAX))
}

/// Fraction of mentions whose predictions contain every gold edge.
pub fn inr_all(records: &[PredictionRecord]) -> Result<f64> {
    rate(&records.iter().collect::<Vec<_>>(), |r| r.hits_all(usize::MAX))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Leaf,
    Nonleaf,
}

impl Subset {
    pub const EVERY: [Subset; 3] = [Subset::All, Subset::Leaf, Subset::Nonleaf];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Leaf => "leaf",
            Subset::Nonleaf => "nonleaf",
        }
    }

    fn admits(self, r: &PredictionRecord) -> bool {
        self == Subset::All || r.subset() == self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub any: f64,
    pub all: f64,
}

/// Both rates over the mentions of `subset`, each prediction list cut to
/// its first `k` entries. `None` when the subset has no mentions.
pub fn inr_at_k(records: &[PredictionRecord], k: usize, subset: Subset) -> Result<Option<Rates>> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let chosen: Vec<&PredictionRecord> = records.iter().filter(|r| subset.admits(r)).collect();
    if chosen.is_empty() {
        return Ok(None);
    }
    Ok(Some(Rates { any: rate(&chosen, |r| r.hits_any(k))?, all: rate(&chosen, |r| r.hits_all(k))? }))
}

pub fn subset_counts(records: &[PredictionRecord]) -> BTreeMap<Subset, usize> {
    Subset::EVERY.iter().map(|s| (*s, records.iter().filter(|r| s.admits(r)).count())).collect()
}

/// One report line: a setting evaluated at one cut-off on one subset, with
/// a value per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: String,
    pub at_k: usize,
    pub subset: Subset,
    pub counts: Vec<usize>,
    pub rates: Vec<Option<Rates>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub splits: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Mentions per split whose pipeline run failed and were scored as
    /// empty predictions.
    pub failures: Vec<usize>,
}

/// Percentage with one decimal.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

fn slash<T>(values: &[T], f: impl Fn(&T) -> String) -> String {
    values.iter().map(f).collect::<Vec<_>>().join(" / ")
}

impl EvaluationReport {
    /// Adds rows for every subset at cut-off `at_k`, one records list per
    /// split in `self.splits` order.
    pub fn add_setting(&mut self, setting: &str, at_k: usize, per_split: &[Vec<PredictionRecord>]) -> Result<()> {
        for subset in Subset::EVERY {
            let mut counts = Vec::new();
            let mut rates = Vec::new();
            for records in per_split {
                counts.push(subset_counts(records)[&subset]);
                rates.push(inr_at_k(records, at_k, subset)?);
            }
            self.rows.push(ReportRow { setting: setting.to_string(), at_k, subset, counts, rates });
        }
        Ok(())
    }

    fn cells(&self, row: &ReportRow) -> [String; 3] {
        let rate = |f: fn(&Rates) -> f64| slash(&row.rates, |r| r.as_ref().map_or("-".to_string(), |r| percent(f(r))));
        [slash(&row.counts, usize::to_string), rate(|r| r.any), rate(|r| r.all)]
    }

    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} ({})\n", self.method, self.splits.join(" / "));
        out.push_str("| setting | @k | subset | mentions | InR_any | InR_all |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for row in &self.rows {
            let [n, any, all] = self.cells(row);
            let _ = writeln!(out, "| {} | {} | {} | {n} | {any} | {all} |", row.setting, row.at_k, row.subset.as_str());
        }
        let _ = writeln!(out, "\nfailed mentions: {}", slash(&self.failures, usize::to_string));
        out
    }

    pub fn render_tsv(&self) -> String {
        let mut out = String::from("method\tsetting\tat_k\tsubset\tmentions\tInR_any\tInR_all\n");
        for row in &self.rows {
            let [n, any, all] = self.cells(row);
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{n}\t{any}\t{all}", self.method, row.setting, row.at_k, row.subset.as_str());
        }
        out
    }

    /// Markdown unless `path` ends in `.tsv`.
    pub fn render_for_path(&self, path: &str) -> String {
        if path.ends_with(".tsv") {
            self.render_tsv()
        } else {
            self.render_markdown()
        }
    }
}

/// Optional selection step applied to every slate.
pub trait SlateSelector: Sync {
    fn select(&self, slate: CandidateSlate) -> Result<CandidateSlate, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub method: String,
    /// Slate sizes to generate.
    pub ks: Vec<usize>,
    /// Cut-offs to report per slate size; empty means the slate size.
    pub at_ks: Vec<usize>,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub report: EvaluationReport,
    /// Final slates by split, then slate size, then mention.
    pub slates: Vec<Vec<Vec<Option<CandidateSlate>>>>,
}

/// Runs candidate generation (and selection, if given) for each split and
/// slate size and collects the metric table. A mention whose run fails is
/// scored with no predictions.
pub fn run_benchmark(
    generator: &CandidateGenerator<'_>,
    splits: &[(String, &PlacementDataset)],
    config: &BenchmarkConfig,
    selector: Option<&dyn SlateSelector>,
) -> Result<BenchmarkOutput> {
    if splits.is_empty() || splits.iter().any(|(_, d)| d.is_empty()) {
        return Err(EvalError::Empty);
    }
    let mut report = EvaluationReport {
        method: config.method.clone(),
        splits: splits.iter().map(|(n, _)| n.clone()).collect(),
        rows: Vec::new(),
        failures: vec![0; splits.len()],
    };
    let mut all_slates = vec![Vec::new(); splits.len()];
    for &k in &config.ks {
        let mut per_split = Vec::new();
        for (si, (_, dataset)) in splits.iter().enumerate() {
            let results = generator.generate_batch(&dataset.mentions, k, config.workers);
            let mut records = Vec::with_capacity(results.len());
            let mut slates = Vec::with_capacity(results.len());
            for (i, (m, result)) in dataset.mentions.iter().zip(results).enumerate() {
                let result = result.map_err(|e| e.to_string()).and_then(|s| match selector {
                    Some(sel) => sel.select(s),
                    None => Ok(s),
                });
                let gold = m.gold_edges.clone().unwrap_or_default();
                match result {
                    Ok(slate) => {
                        records.push(PredictionRecord::new(i, slate.edge_list(), gold));
                        slates.push(Some(slate));
                    }
                    Err(_) => {
                        report.failures[si] += 1;
                        records.push(PredictionRecord::new(i, Vec::new(), gold));
                        slates.push(None);
                    }
                }
            }
            per_split.push(records);
            all_slates[si].push(slates);
        }
        let at_ks = if config.at_ks.is_empty() { vec![k] } else { config.at_ks.clone() };
        for at in at_ks {
            report.add_setting(&format!("k={k}"), at, &per_split)?;
        }
    }
    Ok(BenchmarkOutput { report, slates: all_slates })
}
