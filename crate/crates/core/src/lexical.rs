//! Inverted-index concept search scored by summed inverse document frequency.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{verbalize, Concept, ConceptId, OntologyError};

/// Word-boundary marker used by sentencepiece-style vocabularies.
pub const WORD_MARKER: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("cannot build an index over an empty concept list")]
    EmptyCorpus,
    #[error("concept {0} is not indexed")]
    UnknownConcept(ConceptId),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    GreedyLongestMatch,
    Whitespace,
}

/// Deterministic subword tokenizer. Text is lowercased before splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr")]
pub struct Tokenizer {
    mode: TokenizerMode,
    vocabulary: BTreeSet<String>,
    word_markers: bool,
    #[serde(skip)]
    longest: usize,
}

#[derive(Deserialize)]
struct TokenizerRepr {
    mode: TokenizerMode,
    vocabulary: BTreeSet<String>,
    word_markers: bool,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        let mut tok = Tokenizer { mode: r.mode, vocabulary: r.vocabulary, word_markers: r.word_markers, longest: 0 };
        tok.refresh();
        tok
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::whitespace()
    }
}

impl Tokenizer {
    pub fn whitespace() -> Self {
        Tokenizer {
            mode: TokenizerMode::Whitespace,
            vocabulary: BTreeSet::new(),
            word_markers: false,
            longest: 0,
        }
    }

    /// Greedy longest-match tokenizer over `units`. When any unit starts
    /// with `▁`, every word is prefixed with the marker before matching.
    pub fn greedy<I, S>(units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let vocabulary: BTreeSet<String> = units
            .into_iter()
            .map(|u| u.as_ref().to_lowercase())
            .filter(|u| !u.is_empty())
            .collect();
        let word_markers = vocabulary.iter().any(|u| u.starts_with(WORD_MARKER));
        let mut tok = Tokenizer { mode: TokenizerMode::GreedyLongestMatch, vocabulary, word_markers, longest: 0 };
        tok.refresh();
        tok
    }

    /// Reads one unit per line. A tab-separated second column (e.g. a
    /// sentencepiece score) is ignored.
    pub fn from_vocab_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut units = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let unit = line.split('\t').next().unwrap_or_default();
            if !unit.is_empty() {
                units.push(unit.to_string());
            }
        }
        Ok(Tokenizer::greedy(units))
    }

    fn refresh(&mut self) {
        self.longest = self.vocabulary.iter().map(|u| u.chars().count()).max().unwrap_or(0);
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lowered = text.to_lowercase();
        match self.mode {
            TokenizerMode::Whitespace => lowered.split_whitespace().map(str::to_string).collect(),
            TokenizerMode::GreedyLongestMatch => {
                let mut out = Vec::new();
                for word in lowered.split_whitespace() {
                    let mut chars: Vec<char> = Vec::with_capacity(word.len() + 1);
                    if self.word_markers {
                        chars.push(WORD_MARKER);
                    }
                    chars.extend(word.chars());
                    self.greedy_word(&chars, &mut out);
                }
                out
            }
        }
    }

    fn greedy_word(&self, chars: &[char], out: &mut Vec<String>) {
        let mut start = 0;
        let longest = self.longest;
        while start < chars.len() {
            let max_end = chars.len().min(start + longest.max(1));
            let mut matched = None;
            for end in (start + 1..=max_end).rev() {
                let piece: String = chars[start..end].iter().collect();
                if self.vocabulary.contains(&piece) {
                    matched = Some((end, piece));
                    break;
                }
            }
            let (end, piece) = matched.unwrap_or_else(|| (start + 1, chars[start].to_string()));
            out.push(piece);
            start = end;
        }
    }

    /// Inverse of [`Tokenizer::tokenize`] up to case and whitespace runs.
    pub fn detokenize(&self, tokens: &[String]) -> String {
        match self.mode {
            TokenizerMode::Whitespace => tokens.join(" "),
            TokenizerMode::GreedyLongestMatch => {
                let joined: String = tokens.concat();
                if self.word_markers {
                    joined.replace(WORD_MARKER, " ").trim_start().to_string()
                } else {
                    joined
                }
            }
        }
    }

    pub fn token_set(&self, text: &str) -> BTreeSet<String> {
        self.tokenize(text).into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

/// Token → concepts postings over verbalized concept text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, BTreeSet<ConceptId>>,
    token_sets: BTreeMap<ConceptId, BTreeSet<String>>,
    corpus_size: usize,
    #[serde(default)]
    log_base: LogBase,
}

impl InvertedIndex {
    pub fn build<'a, I>(concepts: I, tok: &Tokenizer) -> Result<Self, LexicalError>
    where
        I: IntoIterator<Item = &'a Concept>,
    {
        let mut postings: BTreeMap<String, BTreeSet<ConceptId>> = BTreeMap::new();
        let mut token_sets = BTreeMap::new();
        for concept in concepts {
            let tokens = tok.token_set(&verbalize(concept)?);
            for t in &tokens {
                postings.entry(t.clone()).or_default().insert(concept.id.clone());
            }
            token_sets.insert(concept.id.clone(), tokens);
        }
        if token_sets.is_empty() {
            return Err(LexicalError::EmptyCorpus);
        }
        let corpus_size = token_sets.len();
        Ok(InvertedIndex { postings, token_sets, corpus_size, log_base: LogBase::Natural })
    }

    pub fn with_log_base(mut self, base: LogBase) -> Self {
        self.log_base = base;
        self
    }

    pub fn log_base(&self) -> LogBase {
        self.log_base
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn postings(&self, token: &str) -> Option<&BTreeSet<ConceptId>> {
        self.postings.get(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.postings.keys().map(String::as_str)
    }

    pub fn token_set(&self, id: &ConceptId) -> Option<&BTreeSet<String>> {
        self.token_sets.get(id)
    }

    /// `log(|D| / |I[t]|)`, zero for tokens absent from the index.
    pub fn idf(&self, token: &str) -> f64 {
        match self.postings.get(token) {
            Some(ids) => self.log_base.log(self.corpus_size as f64 / ids.len() as f64),
            None => 0.0,
        }
    }

    /// Sum of idf over the tokens shared by the mention and the concept.
    pub fn idf_similarity(&self, tok: &Tokenizer, mention: &str, id: &ConceptId) -> Result<f64, LexicalError> {
        let concept_tokens = self.token_sets.get(id).ok_or_else(|| LexicalError::UnknownConcept(id.clone()))?;
        let mention_tokens = tok.token_set(mention);
        Ok(mention_tokens.intersection(concept_tokens).map(|t| self.idf(t)).sum())
    }

    /// Concepts with a positive score, best first; ties by id.
    pub fn search(&self, tok: &Tokenizer, mention: &str, top_n: usize) -> Vec<(ConceptId, f64)> {
        let mut scores: HashMap<&ConceptId, f64> = HashMap::new();
        // Same token order as `idf_similarity`, so sums agree bit for bit.
        for token in tok.token_set(mention) {
            if let Some(ids) = self.postings.get(&token) {
                let idf = self.idf(&token);
                for id in ids {
                    *scores.entry(id).or_insert(0.0) += idf;
                }
            }
        }
        let mut ranked: Vec<(ConceptId, f64)> =
            scores.into_iter().filter(|(_, s)| *s > 0.0).map(|(id, s)| (id.clone(), s)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_n);
        ranked
    }
}

/// Serialized form written by `index build`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFile {
    pub tokenizer: Tokenizer,
    pub index: InvertedIndex,
}

impl IndexFile {
    pub fn into_parts(self) -> (Tokenizer, InvertedIndex) {
        (self.tokenizer, self.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concepts(labels: &[(&str, &str)]) -> Vec<Concept> {
        labels.iter().map(|(id, l)| Concept::atomic(id, l).unwrap()).collect()
    }

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    #[test]
    fn whitespace_tokenizer_round_trips_modulo_case() {
        let tok = Tokenizer::whitespace();
        let tokens = tok.tokenize("Heart Disease of  the Valve");
        assert_eq!(tokens, vec!["heart", "disease", "of", "the", "valve"]);
        assert_eq!(tok.detokenize(&tokens), "heart disease of the valve");
    }

    #[test]
    fn greedy_longest_match_prefers_longer_units() {
        let tok = Tokenizer::greedy(["▁heart", "▁hear", "▁dis", "ease", "▁disease", "s"]);
        assert_eq!(tok.tokenize("Heart diseases"), vec!["▁heart", "▁disease", "s"]);
        assert_eq!(tok.detokenize(&tok.tokenize("heart diseases")), "heart diseases");
        // unknown characters fall back to single-character pieces
        assert_eq!(tok.tokenize("hx"), vec!["▁", "h", "x"]);
    }

    #[test]
    fn greedy_without_markers() {
        let tok = Tokenizer::greedy(["neo", "plasm", "neoplasm"]);
        assert_eq!(tok.tokenize("neoplasm"), vec!["neoplasm"]);
        assert_eq!(tok.tokenize("neoplasms"), vec!["neoplasm", "s"]);
    }

    #[test]
    fn tokenizer_survives_serde() {
        let tok = Tokenizer::greedy(["▁heart", "▁disease"]);
        let back: Tokenizer = serde_json::from_str(&serde_json::to_string(&tok).unwrap()).unwrap();
        assert_eq!(back.tokenize("heart disease"), vec!["▁heart", "▁disease"]);
    }

    #[test]
    fn vocab_reader_ignores_score_column() {
        let vocab = "▁heart\t-3.2\n▁disease\t-4.0\n\n";
        let tok = Tokenizer::from_vocab_reader(vocab.as_bytes()).unwrap();
        assert_eq!(tok.vocabulary_len(), 2);
        assert_eq!(tok.tokenize("heart disease"), vec!["▁heart", "▁disease"]);
    }

    #[test]
    fn single_concept_index() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[("c", "heart disease")]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap();
        assert_eq!(idx.corpus_size(), 1);
        assert_eq!(idx.postings("heart").unwrap(), &BTreeSet::from([cid("c")]));
        assert_eq!(idx.postings("disease").unwrap(), &BTreeSet::from([cid("c")]));
        assert_eq!(idx.tokens().count(), 2);
    }

    #[test]
    fn shared_token_has_two_postings() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[("a", "heart disease"), ("b", "lung disease")]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap();
        assert_eq!(idx.postings("disease").unwrap().len(), 2);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            InvertedIndex::build(&Vec::<Concept>::new(), &Tokenizer::whitespace()),
            Err(LexicalError::EmptyCorpus)
        ));
    }

    #[test]
    fn idf_similarity_cases() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[("a", "heart disease"), ("b", "lung disease")]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap();
        // shared token: ln(2/2) = 0
        assert_eq!(idx.idf_similarity(&tok, "disease", &cid("a")).unwrap(), 0.0);
        // unique token: ln 2
        let s = idx.idf_similarity(&tok, "heart", &cid("a")).unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-12);
        // disjoint
        assert_eq!(idx.idf_similarity(&tok, "kidney", &cid("a")).unwrap(), 0.0);
        assert!(matches!(idx.idf_similarity(&tok, "x", &cid("zz")), Err(LexicalError::UnknownConcept(_))));
    }

    #[test]
    fn log_base_knob() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[("a", "heart disease"), ("b", "lung disease")]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap().with_log_base(LogBase::Two);
        assert!((idx.idf_similarity(&tok, "heart", &cid("a")).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn search_ranks_exact_label_first() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[
            ("a", "chronic kidney disease"),
            ("b", "kidney disease"),
            ("c", "heart disease"),
            ("d", "chronic pain"),
        ]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap();
        let hits = idx.search(&tok, "chronic kidney disease", 10);
        assert_eq!(hits[0].0, cid("a"));
        assert!(hits.iter().all(|(_, s)| *s > 0.0));
    }

    #[test]
    fn search_with_only_common_token_is_empty() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[("a", "heart disease"), ("b", "lung disease")]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap();
        assert!(idx.search(&tok, "disease", 5).is_empty());
    }

    #[test]
    fn search_tie_break_by_id() {
        let tok = Tokenizer::whitespace();
        let cs = concepts(&[("b", "alpha x"), ("a", "alpha y"), ("c", "beta")]);
        let idx = InvertedIndex::build(&cs, &tok).unwrap();
        let hits = idx.search(&tok, "alpha", 5);
        assert_eq!(hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(idx.search(&tok, "alpha", 1).len(), 1);
    }
}
