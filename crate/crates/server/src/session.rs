//! Curation sessions: a working ontology that terminologists grow one
//! accepted placement at a time, with an append-only decision log.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use ontoplace_core::candidates::{CandidateError, CandidateParams};
use ontoplace_core::embedding::TextEmbedder;
use ontoplace_core::eval::{run_benchmark, BenchmarkConfig, EvalError, EvaluationReport};
use ontoplace_core::ontology::OntologyError;
use ontoplace_core::{
    CandidateGenerator, CandidateSlate, Concept, ConceptId, ContextualMention, Edge, InvertedIndex, Ontology,
    PlacementDataset, SearchMethod, Tokenizer,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown mention {0}")]
    UnknownMention(String),
    #[error("mention {0} is not pending")]
    NotPending(String),
    #[error("slate version {slate_version} is stale; ontology is at version {current}")]
    StaleSlate { slate_version: u64, current: u64 },
    #[error("no slate has been fetched for mention {0} at this version")]
    NoSlate(String),
    #[error("edge {0} is not in the latest slate; mark it manual to add it anyway")]
    NotInSlate(String),
    #[error("no edges chosen")]
    NoEdges,
    #[error("method {0} needs an embedding provider")]
    MethodUnavailable(SearchMethod),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("decision log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Accept { concept: Concept, edges: Vec<Edge>, manual: bool },
    Skip,
}

/// One log entry. `version` is the ontology version after the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub seq: u64,
    pub mention_id: String,
    #[serde(flatten)]
    pub action: Action,
    pub version: u64,
    pub timestamp: u64,
    pub who: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedSlate {
    pub slate_version: u64,
    pub method: SearchMethod,
    pub slate: CandidateSlate,
}

/// What a terminologist sends to accept a placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptRequest {
    pub edges: Vec<Edge>,
    pub slate_version: u64,
    /// Allows edges that were not on the latest slate.
    #[serde(default)]
    pub manual: bool,
    #[serde(default)]
    pub who: Option<String>,
    /// Id for the new concept; defaults to `new:<mention id>`.
    #[serde(default)]
    pub concept_id: Option<String>,
}

struct Working {
    version: u64,
    ontology: Arc<Ontology>,
    index: Arc<InvertedIndex>,
    queue: VecDeque<String>,
    log: Vec<Decision>,
}

/// Shared embedder for the embedding-based methods.
pub type SharedEmbedder = Arc<dyn TextEmbedder + Send + Sync>;

pub struct CurationSession {
    id: String,
    base: Arc<Ontology>,
    mentions: BTreeMap<String, ContextualMention>,
    order: Vec<String>,
    tokenizer: Tokenizer,
    embedder: Option<SharedEmbedder>,
    params: CandidateParams,
    working: RwLock<Working>,
    // latest slate per mention, with the version it was computed against
    slates: Mutex<HashMap<String, (u64, BTreeSet<Edge>)>>,
    store: Option<LogStore>,
}

fn mention_key(i: usize, m: &ContextualMention) -> String {
    m.id.clone().unwrap_or_else(|| format!("m{i}"))
}

/// Session keys of a dataset's mentions in queue order: the mention id, or
/// `m<position>` when it has none.
pub fn mention_keys(dataset: &PlacementDataset) -> Vec<String> {
    dataset.mentions.iter().enumerate().map(|(i, m)| mention_key(i, m)).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn build_index(o: &Ontology, tok: &Tokenizer) -> Result<InvertedIndex> {
    InvertedIndex::build(o.concepts(), tok).map_err(|e| SessionError::Candidates(e.into()))
}

impl CurationSession {
    /// A session at version 0 over `base`, with every mention of `dataset`
    /// pending. Mentions without an id are keyed `m<position>`.
    pub fn new(id: &str, base: Ontology, dataset: &PlacementDataset, tokenizer: Tokenizer) -> Result<Self> {
        let mut mentions = BTreeMap::new();
        let mut order = Vec::new();
        for (i, m) in dataset.mentions.iter().enumerate() {
            let key = mention_key(i, m);
            let mut m = m.clone();
            m.id = Some(key.clone());
            order.push(key.clone());
            mentions.insert(key, m);
        }
        let index = build_index(&base, &tokenizer)?;
        let base = Arc::new(base);
        Ok(CurationSession {
            id: id.to_string(),
            working: RwLock::new(Working {
                version: 0,
                ontology: base.clone(),
                index: Arc::new(index),
                queue: order.iter().cloned().collect(),
                log: Vec::new(),
            }),
            base,
            mentions,
            order,
            tokenizer,
            embedder: None,
            params: CandidateParams::default(),
            slates: Mutex::new(HashMap::new()),
            store: None,
        })
    }

    pub fn with_embedder(mut self, embedder: SharedEmbedder) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_params(mut self, params: CandidateParams) -> Self {
        self.params = params;
        self
    }

    /// Persists decisions under `dir`, first replaying any log already
    /// there. A snapshot of the working ontology is written every
    /// `snapshot_every` accepted placements.
    pub fn with_persistence(mut self, dir: &Path, snapshot_every: u64) -> Result<Self> {
        let store = LogStore::open(dir, snapshot_every)?;
        let log = store.read_log()?;
        if !log.is_empty() {
            let replayed = replay(&self.base, &self.order, &log)?;
            let index = build_index(&replayed.ontology, &self.tokenizer)?;
            let mut w = self.working.write().expect("session lock");
            w.version = replayed.version;
            w.ontology = Arc::new(replayed.ontology);
            w.index = Arc::new(index);
            w.queue = replayed.queue;
            w.log = log;
        }
        self.store = Some(store);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn version(&self) -> u64 {
        self.working.read().expect("session lock").version
    }

    pub fn ontology(&self) -> Arc<Ontology> {
        self.working.read().expect("session lock").ontology.clone()
    }

    pub fn base(&self) -> &Ontology {
        &self.base
    }

    pub fn mention_order(&self) -> &[String] {
        &self.order
    }

    /// Pending mentions in queue order.
    pub fn pending(&self) -> Vec<ContextualMention> {
        let w = self.working.read().expect("session lock");
        w.queue.iter().map(|k| self.mentions[k].clone()).collect()
    }

    pub fn log(&self) -> Vec<Decision> {
        self.working.read().expect("session lock").log.clone()
    }

    fn generator<'a>(
        &'a self,
        ontology: &'a Ontology,
        index: &'a InvertedIndex,
        method: SearchMethod,
    ) -> Result<CandidateGenerator<'a>> {
        let embedder = || -> Result<&'a (dyn TextEmbedder + Send + Sync)> {
            self.embedder.as_deref().ok_or(SessionError::MethodUnavailable(method))
        };
        Ok(match method {
            SearchMethod::Lexical => CandidateGenerator::lexical(ontology, index, &self.tokenizer, self.params),
            SearchMethod::FixedEmbedding => CandidateGenerator::fixed(ontology, embedder()?, self.params)?,
            SearchMethod::EdgeBiencoder => CandidateGenerator::biencoder(ontology, embedder()?, self.params, None)?,
        })
    }

    /// Slate for a pending mention against the current working ontology.
    /// Never changes the version.
    pub fn get_candidates(&self, mention_id: &str, k: usize, method: SearchMethod) -> Result<VersionedSlate> {
        let m = self.mentions.get(mention_id).ok_or_else(|| SessionError::UnknownMention(mention_id.into()))?;
        let w = self.working.read().expect("session lock");
        if !w.queue.iter().any(|q| q == mention_id) {
            return Err(SessionError::NotPending(mention_id.into()));
        }
        let slate = self.generator(&w.ontology, &w.index, method)?.generate(m, k)?;
        self.slates
            .lock()
            .expect("slate lock")
            .insert(mention_id.to_string(), (w.version, slate.edges.iter().map(|s| s.edge.clone()).collect()));
        Ok(VersionedSlate { slate_version: w.version, method, slate })
    }

    /// Places the mention into the chosen edges and returns the new
    /// version. Accepts are serialized; one computed against an older
    /// version is refused.
    pub fn accept_placement(&self, mention_id: &str, request: &AcceptRequest) -> Result<u64> {
        let m = self.mentions.get(mention_id).ok_or_else(|| SessionError::UnknownMention(mention_id.into()))?;
        let mut w = self.working.write().expect("session lock");
        let pos = w.queue.iter().position(|q| q == mention_id).ok_or_else(|| SessionError::NotPending(mention_id.into()))?;
        if request.slate_version != w.version {
            return Err(SessionError::StaleSlate { slate_version: request.slate_version, current: w.version });
        }
        if request.edges.is_empty() {
            return Err(SessionError::NoEdges);
        }
        if !request.manual {
            let slates = self.slates.lock().expect("slate lock");
            let (at, offered) = slates
                .get(mention_id)
                .filter(|(at, _)| *at == w.version)
                .ok_or_else(|| SessionError::NoSlate(mention_id.into()))?;
            debug_assert_eq!(*at, w.version);
            if let Some(e) = request.edges.iter().find(|e| !offered.contains(e)) {
                return Err(SessionError::NotInSlate(e.to_string()));
            }
        }
        let concept_id = request.concept_id.clone().unwrap_or_else(|| format!("new:{mention_id}"));
        let concept = Concept::atomic(ConceptId::new(concept_id)?.as_str(), m.mention.trim())?;
        let edges: BTreeSet<Edge> = request.edges.iter().cloned().collect();
        let next = w.ontology.insert_placement(concept.clone(), &edges)?;
        let index = build_index(&next, &self.tokenizer)?;

        let decision = Decision {
            seq: w.log.len() as u64,
            mention_id: mention_id.to_string(),
            action: Action::Accept { concept, edges: edges.into_iter().collect(), manual: request.manual },
            version: w.version + 1,
            timestamp: now(),
            who: request.who.clone().unwrap_or_else(|| "anonymous".into()),
        };
        if let Some(store) = &self.store {
            store.append(&decision)?;
            if decision.version % store.snapshot_every == 0 {
                store.snapshot(decision.version, &next)?;
            }
        }
        w.version += 1;
        w.ontology = Arc::new(next);
        w.index = Arc::new(index);
        w.queue.remove(pos);
        w.log.push(decision);
        Ok(w.version)
    }

    /// Moves a pending mention to the back of the queue.
    pub fn skip_mention(&self, mention_id: &str, who: Option<&str>) -> Result<Vec<String>> {
        if !self.mentions.contains_key(mention_id) {
            return Err(SessionError::UnknownMention(mention_id.into()));
        }
        let mut w = self.working.write().expect("session lock");
        let pos = w.queue.iter().position(|q| q == mention_id).ok_or_else(|| SessionError::NotPending(mention_id.into()))?;
        let decision = Decision {
            seq: w.log.len() as u64,
            mention_id: mention_id.to_string(),
            action: Action::Skip,
            version: w.version,
            timestamp: now(),
            who: who.unwrap_or("anonymous").to_string(),
        };
        if let Some(store) = &self.store {
            store.append(&decision)?;
        }
        let key = w.queue.remove(pos).expect("position in range");
        w.queue.push_back(key);
        w.log.push(decision);
        Ok(w.queue.iter().cloned().collect())
    }

    /// Insertion rates of the current slates for pending mentions that
    /// carry gold edges.
    pub fn evaluate(&self, k: usize, method: SearchMethod) -> Result<EvaluationReport> {
        let w = self.working.read().expect("session lock");
        let mentions: Vec<ContextualMention> = w
            .queue
            .iter()
            .map(|q| &self.mentions[q])
            .filter(|m| m.gold_edges.as_ref().is_some_and(|g| !g.is_empty()))
            .cloned()
            .collect();
        let dataset = PlacementDataset { split: None, mentions };
        let generator = self.generator(&w.ontology, &w.index, method)?;
        let config = BenchmarkConfig { method: method.to_string(), ks: vec![k], at_ks: Vec::new(), workers: 1 };
        let name = format!("{}@v{}", self.id, w.version);
        Ok(run_benchmark(&generator, &[(name, &dataset)], &config, None)?.report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub ontology: Ontology,
    pub version: u64,
    pub queue: VecDeque<String>,
}

/// Rebuilds the working state by applying `log` to `base` from version 0.
pub fn replay(base: &Ontology, order: &[String], log: &[Decision]) -> Result<Replayed> {
    let mut ontology = base.clone();
    let mut version = 0;
    let mut queue: VecDeque<String> = order.iter().cloned().collect();
    for (i, d) in log.iter().enumerate() {
        let bad = |message: String| SessionError::Log { line: i + 1, message };
        let pos = queue
            .iter()
            .position(|q| *q == d.mention_id)
            .ok_or_else(|| bad(format!("mention {} is not pending", d.mention_id)))?;
        match &d.action {
            Action::Accept { concept, edges, .. } => {
                let edges: BTreeSet<Edge> = edges.iter().cloned().collect();
                ontology = ontology.insert_placement(concept.clone(), &edges)?;
                version += 1;
                queue.remove(pos);
            }
            Action::Skip => {
                let key = queue.remove(pos).expect("position in range");
                queue.push_back(key);
            }
        }
        if d.version != version {
            return Err(bad(format!("expected version {version}, log says {}", d.version)));
        }
    }
    Ok(Replayed { ontology, version, queue })
}

struct LogStore {
    dir: PathBuf,
    snapshot_every: u64,
    file: Mutex<File>,
}

impl LogStore {
    fn open(dir: &Path, snapshot_every: u64) -> Result<Self> {
        fs::create_dir_all(dir.join("snapshots"))?;
        let file = OpenOptions::new().create(true).append(true).open(dir.join("decisions.jsonl"))?;
        Ok(LogStore { dir: dir.to_path_buf(), snapshot_every: snapshot_every.max(1), file: Mutex::new(file) })
    }

    fn read_log(&self) -> Result<Vec<Decision>> {
        let reader = BufReader::new(File::open(self.dir.join("decisions.jsonl"))?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line).map_err(|e| SessionError::Log { line: i + 1, message: e.to_string() })?,
            );
        }
        Ok(out)
    }

    fn append(&self, d: &Decision) -> Result<()> {
        let mut file = self.file.lock().expect("log lock");
        writeln!(file, "{}", serde_json::to_string(d).expect("decision serializes"))?;
        file.sync_data()?;
        Ok(())
    }

    fn snapshot(&self, version: u64, o: &Ontology) -> Result<()> {
        let stem = self.dir.join("snapshots").join(format!("v{version:06}"));
        o.write_concepts(File::create(stem.with_extension("concepts.jsonl"))?)?;
        o.write_subsumptions(File::create(stem.with_extension("subsumptions.tsv"))?)?;
        Ok(())
    }
}
