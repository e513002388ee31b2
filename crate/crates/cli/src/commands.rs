//! Subcommand implementations.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ontoplace_core::candidates::CandidateParams;
use ontoplace_core::embedding::{EmbeddingClient, EmbeddingProviderEndpoint, SerializationBudget, TextEmbedder};
use ontoplace_core::eval::{adapt_release_record, load_dataset, run_benchmark, write_dataset, BenchmarkConfig, SlateSelector};
use ontoplace_core::lexical::{IndexFile, LogBase};
use ontoplace_core::selection::{
    build_cross_rows, emit_instruction_tuning_corpus, select_llm, select_scored, CompletionProvider, LlmEndpoint,
    LlmSelection, SelectionScorer, SelectionScorerEndpoint,
};
use ontoplace_core::{
    CandidateGenerator, CandidateSlate, EmbeddingStore, EvaluationReport, InvertedIndex, Ontology, PlacementDataset,
    PredictionRecord, SearchMethod, Tokenizer,
};
use ontoplace_server::{mention_keys, replay, CurationSession, Decision, Registry, SharedEmbedder};

use crate::config::{ConfigFile, Settings, EMBED_URL_ENV, LLM_URL_ENV, SCORER_URL_ENV};
use crate::io;
use crate::{
    AdaptArgs, CandidatesArgs, Cli, Command, EmbedArgs, EmbedCacheArgs, EvalArgs, ExportArgs, IndexBuildArgs,
    IndexCommand, IndexQueryArgs, IngestArgs, LogBaseArg, SearchArgs, SelectArgs, SelectMethod, SelectorArgs,
    ServeArgs, TuneCorpusArgs,
};

const DEFAULT_MODEL: &str = "default";
const DEFAULT_ADDR: &str = "127.0.0.1:8080";

struct Ctx {
    file: ConfigFile,
    workers: usize,
    seed: Option<u64>,
}

fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

impl Ctx {
    fn settings(&self) -> Settings<'_> {
        Settings { file: &self.file, env: &process_env }
    }

    fn embedding_client(&self, a: &EmbedArgs) -> Result<Option<EmbeddingClient>> {
        let s = self.settings();
        let Some(url) = s.string(a.embed_url.as_deref(), Some(EMBED_URL_ENV), "embed_url") else {
            return Ok(None);
        };
        let model = s.string(a.embed_model.as_deref(), None, "embed_model").unwrap_or_else(|| DEFAULT_MODEL.into());
        let locator = crate::http::seeded(&url, self.seed);
        let endpoint = EmbeddingProviderEndpoint::new(&locator, &model);
        let provider = crate::http::embedding_provider(&locator, endpoint.timeout)?;
        let mut client = EmbeddingClient::new(endpoint, provider)?.with_batching(64, self.workers);
        if let Some(path) = a.embed_cache.as_deref().filter(|p| p.exists()) {
            client = client.with_cache(read_store(path)?);
        }
        Ok(Some(client))
    }

    /// A provider client when one is configured, else the cache file alone.
    fn embedder(&self, a: &EmbedArgs) -> Result<Option<SharedEmbedder>> {
        if let Some(client) = self.embedding_client(a)? {
            return Ok(Some(Arc::new(client)));
        }
        match &a.embed_cache {
            Some(path) => Ok(Some(Arc::new(read_store(path)?))),
            None => Ok(None),
        }
    }
}

fn read_store(path: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::read(io::open(path)?).with_context(|| format!("reading embedding store {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let workers = {
        let s = Settings { file: &file, env: &process_env };
        s.parsed(cli.workers, "workers")?
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    let seed = Settings { file: &file, env: &process_env }.parsed(cli.seed, "seed")?;
    let ctx = Ctx { file, workers, seed };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Index(IndexCommand::Build(a)) => index_build(a),
        Command::Index(IndexCommand::Query(a)) => index_query(a),
        Command::EmbedCache(a) => embed_cache(&ctx, a),
        Command::Candidates(a) => candidates(&ctx, a),
        Command::Select(a) => select(&ctx, a),
        Command::TuneCorpus(a) => tune_corpus(a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Export(a) => export(a),
        Command::Adapt(a) => adapt(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (o, report) = io::load_ontology_files(&a.concepts, &a.subsumptions)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &a.out {
        io::write_ontology_dir(&o, out)?;
    }
    println!(
        "concepts={} complex={} subsumptions={} edge_space={} warnings={}",
        report.concepts,
        report.complex,
        report.subsumptions,
        o.enumerate_edge_space().len(),
        report.warnings.len()
    );
    Ok(())
}

fn index_build(a: IndexBuildArgs) -> Result<()> {
    let o = match (&a.concepts, &a.ontology) {
        (_, Some(dir)) => io::load_ontology_dir(dir)?,
        (Some(c), None) => {
            ontoplace_core::ontology::load_ontology(io::open(c)?, std::io::empty())
                .with_context(|| format!("loading {}", c.display()))?
                .0
        }
        (None, None) => bail!("--concepts or --ontology is required"),
    };
    let tokenizer = io::tokenizer(a.vocab.as_deref())?;
    let base = match a.log_base {
        LogBaseArg::Ln => LogBase::Natural,
        LogBaseArg::Log2 => LogBase::Two,
        LogBaseArg::Log10 => LogBase::Ten,
    };
    let index = InvertedIndex::build(o.concepts(), &tokenizer)?.with_log_base(base);
    let tokens = index.tokens().count();
    let file = IndexFile { tokenizer, index };
    let mut out = io::create(&a.out)?;
    serde_json::to_writer(&mut out, &file)?;
    out.flush()?;
    println!("concepts={} tokens={}", file.index.corpus_size(), tokens);
    Ok(())
}

fn index_query(a: IndexQueryArgs) -> Result<()> {
    if a.top == 0 {
        bail!("--top must be at least 1");
    }
    let (tokenizer, index) = io::read_index(&a.index)?.into_parts();
    for (rank, (id, score)) in index.search(&tokenizer, &a.mention, a.top).into_iter().enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, id, score);
    }
    Ok(())
}

/// Everything a generator borrows.
struct Resources {
    ontology: Ontology,
    tokenizer: Tokenizer,
    index: Option<InvertedIndex>,
    embedder: Option<SharedEmbedder>,
    params: CandidateParams,
}

impl Resources {
    fn load(ctx: &Ctx, ontology: Ontology, s: &SearchArgs) -> Result<Self> {
        let (tokenizer, index) = match (s.method, &s.index) {
            (_, Some(path)) => {
                let (t, i) = io::read_index(path)?.into_parts();
                (t, Some(i))
            }
            (SearchMethod::Lexical, None) => {
                let t = io::tokenizer(s.vocab.as_deref())?;
                let i = InvertedIndex::build(ontology.concepts(), &t)?;
                (t, Some(i))
            }
            _ => (io::tokenizer(s.vocab.as_deref())?, None),
        };
        let embedder = match s.method {
            SearchMethod::Lexical => None,
            _ => Some(ctx.embedder(&s.embed)?.ok_or_else(|| {
                anyhow!("method {} needs --embed-url, {EMBED_URL_ENV}, embed_url in the config, or --embed-cache", s.method)
            })?),
        };
        let params = CandidateParams { with_context: !s.no_context, ..CandidateParams::default() };
        Ok(Resources { ontology, tokenizer, index, embedder, params })
    }

    fn generator(&self, method: SearchMethod) -> Result<CandidateGenerator<'_>> {
        let embedder = || -> Result<&dyn TextEmbedder> {
            Ok(self.embedder.as_deref().ok_or_else(|| anyhow!("method {method} needs an embedder"))?)
        };
        Ok(match method {
            SearchMethod::Lexical => {
                let index = self.index.as_ref().ok_or_else(|| anyhow!("lexical search needs an index"))?;
                CandidateGenerator::lexical(&self.ontology, index, &self.tokenizer, self.params)
            }
            SearchMethod::FixedEmbedding => CandidateGenerator::fixed(&self.ontology, embedder()?, self.params)?,
            SearchMethod::EdgeBiencoder => CandidateGenerator::biencoder(&self.ontology, embedder()?, self.params, None)?,
        })
    }
}

fn embed_cache(ctx: &Ctx, a: EmbedCacheArgs) -> Result<()> {
    let o = io::load_ontology_dir(&a.ontology)?;
    let client = ctx
        .embedding_client(&a.embed)?
        .ok_or_else(|| anyhow!("embed-cache needs --embed-url, {EMBED_URL_ENV} or embed_url in the config"))?;
    let mut mentions = Vec::new();
    for path in &a.mentions {
        mentions.extend(io::read_mentions(path)?);
    }
    let params = CandidateParams { with_context: !a.no_context, ..CandidateParams::default() };
    for method in &a.methods {
        let g = match method {
            SearchMethod::FixedEmbedding => CandidateGenerator::fixed(&o, &client, params)?,
            SearchMethod::EdgeBiencoder => CandidateGenerator::biencoder(&o, &client, params, None)?,
            SearchMethod::Lexical => bail!("lexical search uses no embeddings"),
        };
        for (i, r) in g.generate_batch(&mentions, a.k, ctx.workers).into_iter().enumerate() {
            r.with_context(|| format!("mention {}", i + 1))?;
        }
    }
    let store = client.cache_snapshot();
    let mut out = io::create(&a.out)?;
    store.write(&mut out)?;
    out.flush()?;
    println!("entries={} dim={}", store.len(), store.dim());
    Ok(())
}

fn candidates(ctx: &Ctx, a: CandidatesArgs) -> Result<()> {
    let o = io::load_ontology_dir(&a.ontology)?;
    let mentions = io::read_mentions(&a.mentions)?;
    let res = Resources::load(ctx, o, &a.search)?;
    let g = res.generator(a.search.method)?;
    let slates = g
        .generate_batch(&mentions, a.k, ctx.workers)
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("mention {}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let n = io::write_jsonl(&a.out, &slates)?;
    println!("slates={n} k={} method={}", a.k, a.search.method);
    Ok(())
}

/// Selection step shared by `select` and `eval --select`.
enum Selector<'a> {
    Cross { o: &'a Ontology, endpoint: SelectionScorerEndpoint, scorer: Box<dyn SelectionScorer> },
    Llm { o: &'a Ontology, endpoint: LlmEndpoint, provider: Box<dyn CompletionProvider>, tokenizer: Tokenizer },
}

impl<'a> Selector<'a> {
    fn new(ctx: &Ctx, o: &'a Ontology, method: SelectMethod, a: &SelectorArgs) -> Result<Self> {
        let s = ctx.settings();
        let (env, key, model_key) = match method {
            SelectMethod::Cross => (SCORER_URL_ENV, "scorer_url", "scorer_model"),
            SelectMethod::Llm => (LLM_URL_ENV, "llm_url", "llm_model"),
        };
        let url = s
            .string(a.endpoint.as_deref(), Some(env), key)
            .ok_or_else(|| anyhow!("selection needs --endpoint, {env} or {key} in the config"))?;
        let model = s.string(a.model.as_deref(), None, model_key).unwrap_or_else(|| DEFAULT_MODEL.into());
        Ok(match method {
            SelectMethod::Cross => {
                let endpoint = SelectionScorerEndpoint::new(&url, &model);
                let scorer = crate::http::scorer(&url, endpoint.timeout)?;
                Selector::Cross { o, endpoint, scorer }
            }
            SelectMethod::Llm => {
                let mut endpoint = LlmEndpoint::new(&url, &model);
                if let Some(n) = s.parsed(a.max_input_tokens, "llm_max_input_tokens")? {
                    endpoint.max_input_tokens = n;
                }
                let provider = crate::http::completion(&url, endpoint.timeout)?;
                let tokenizer = io::tokenizer(a.prompt_vocab.as_deref())?;
                Selector::Llm { o, endpoint, provider, tokenizer }
            }
        })
    }

    fn cross(&self, slate: &CandidateSlate) -> Result<CandidateSlate> {
        let Selector::Cross { o, endpoint, scorer } = self else { unreachable!("cross on llm selector") };
        if slate.is_empty() {
            return Ok(slate.clone());
        }
        let rows = build_cross_rows(o, slate, SerializationBudget::default())?;
        Ok(select_scored(endpoint, scorer.as_ref(), slate, &rows)?)
    }

    fn llm(&self, slate: &CandidateSlate) -> Result<LlmSelection> {
        let Selector::Llm { o, endpoint, provider, tokenizer } = self else { unreachable!("llm on cross selector") };
        Ok(select_llm(endpoint, provider.as_ref(), tokenizer, o, slate)?)
    }
}

impl SlateSelector for Selector<'_> {
    fn select(&self, slate: CandidateSlate) -> std::result::Result<CandidateSlate, String> {
        let r = match self {
            Selector::Cross { .. } => self.cross(&slate),
            Selector::Llm { .. } if slate.is_empty() => Ok(slate),
            Selector::Llm { .. } => self.llm(&slate).map(|s| s.slate),
        };
        r.map_err(|e| format!("{e:#}"))
    }
}

fn select(ctx: &Ctx, a: SelectArgs) -> Result<()> {
    let o = io::load_ontology_dir(&a.ontology)?;
    let slates = io::read_slates(&a.slates)?;
    let selector = Selector::new(ctx, &o, a.method, &a.selector)?;
    let n = match a.method {
        SelectMethod::Cross => {
            let ranked = ontoplace_core::parallel::map_ordered(&slates, ctx.workers, |s| selector.cross(s));
            let ranked = ranked.into_iter().enumerate().map(|(i, r)| r.with_context(|| format!("slate {}", i + 1)));
            io::write_jsonl(&a.out, ranked.collect::<Result<Vec<_>>>()?)?
        }
        SelectMethod::Llm => {
            let ranked = ontoplace_core::parallel::map_ordered(&slates, ctx.workers, |s| {
                if s.is_empty() {
                    bail!("empty slate");
                }
                selector.llm(s)
            });
            let ranked = ranked.into_iter().enumerate().map(|(i, r)| r.with_context(|| format!("slate {}", i + 1)));
            io::write_jsonl(&a.out, ranked.collect::<Result<Vec<_>>>()?)?
        }
    };
    println!("selected={n} method={}", if a.method == SelectMethod::Cross { "cross" } else { "llm" });
    Ok(())
}

fn tune_corpus(a: TuneCorpusArgs) -> Result<()> {
    let o = io::load_ontology_dir(&a.ontology)?;
    let d = load_dataset(io::open(&a.dataset)?, &o, None)?;
    let slates = io::read_slates(&a.slates)?;
    let records = emit_instruction_tuning_corpus(&o, &d, &slates)?;
    let n = io::write_jsonl(&a.out, &records)?;
    println!("records={n}");
    Ok(())
}

fn report_from_slates(
    method: &str,
    splits: &[(String, PlacementDataset)],
    slate_files: &[std::path::PathBuf],
    at: &[usize],
) -> Result<EvaluationReport> {
    if slate_files.len() != splits.len() {
        bail!("{} slate files for {} datasets", slate_files.len(), splits.len());
    }
    let mut per_split = Vec::new();
    let mut ks = BTreeSet::new();
    for ((name, d), path) in splits.iter().zip(slate_files) {
        let slates = io::read_slates(path)?;
        if slates.len() != d.len() {
            bail!("{}: {} slates for {} mentions of {name}", path.display(), slates.len(), d.len());
        }
        let mut records = Vec::new();
        for (i, (m, s)) in d.mentions.iter().zip(&slates).enumerate() {
            if m.id.is_some() && s.mention.id.is_some() && m.id != s.mention.id {
                bail!("{}: slate {} is for {:?}, dataset has {:?}", path.display(), i + 1, s.mention.id, m.id);
            }
            ks.insert(s.k);
            records.push(PredictionRecord::new(i, s.edge_list(), m.gold_edges.clone().unwrap_or_default()));
        }
        per_split.push(records);
    }
    if ks.len() > 1 {
        bail!("slate files mix slate sizes {ks:?}");
    }
    let k = ks.into_iter().next().ok_or_else(|| anyhow!("no slates"))?;
    let mut report = EvaluationReport {
        method: method.to_string(),
        splits: splits.iter().map(|(n, _)| n.clone()).collect(),
        rows: Vec::new(),
        failures: vec![0; splits.len()],
    };
    for at_k in if at.is_empty() { vec![k] } else { at.to_vec() } {
        report.add_setting(&format!("k={k}"), at_k, &per_split)?;
    }
    Ok(report)
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let o = io::load_ontology_dir(&a.ontology)?;
    let splits = a.datasets.iter().map(|s| io::load_split(s, &o)).collect::<Result<Vec<_>>>()?;
    if a.at.contains(&0) {
        bail!("cut-offs must be at least 1");
    }
    let mut method = a.search.method.to_string();
    let report = if a.slates.is_empty() {
        let res = Resources::load(ctx, o.clone(), &a.search)?;
        let g = res.generator(a.search.method)?;
        let selector = a.select.map(|m| Selector::new(ctx, &o, m, &a.selector)).transpose()?;
        if let Some(m) = a.select {
            method.push_str(if m == SelectMethod::Cross { "+cross" } else { "+llm" });
        }
        let cfg = BenchmarkConfig { method, ks: a.k.clone(), at_ks: a.at.clone(), workers: ctx.workers };
        let refs: Vec<(String, &PlacementDataset)> = splits.iter().map(|(n, d)| (n.clone(), d)).collect();
        run_benchmark(&g, &refs, &cfg, selector.as_ref().map(|s| s as &dyn SlateSelector))?.report
    } else {
        report_from_slates("slates", &splits, &a.slates, &a.at)?
    };
    match &a.report {
        Some(path) => {
            let mut out = io::create(path)?;
            out.write_all(report.render_for_path(&path.to_string_lossy()).as_bytes())?;
            out.flush()?;
            println!("report={}", path.display());
        }
        None => print!("{}", report.render_markdown()),
    }
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let o = io::load_ontology_dir(&a.ontology)?;
    let tokenizer = io::tokenizer(a.vocab.as_deref())?;
    let embedder = ctx.embedder(&a.embed)?;
    let registry = Registry::default();
    for spec in &a.datasets {
        let (name, d) = io::load_split(spec, &o)?;
        let mut session = CurationSession::new(&name, o.clone(), &d, tokenizer.clone())?;
        if let Some(e) = &embedder {
            session = session.with_embedder(e.clone());
        }
        if let Some(dir) = &a.state_dir {
            session = session.with_persistence(&dir.join(&name), a.snapshot_every)?;
        }
        println!("session={name} mentions={} version={}", session.pending().len(), session.version());
        registry.insert(session);
    }
    let addr = ctx.settings().string(a.addr.as_deref(), None, "addr").unwrap_or_else(|| DEFAULT_ADDR.into());
    let addr: SocketAddr = addr.parse().with_context(|| format!("bad address {addr:?}"))?;
    println!("listening={addr}");
    std::io::stdout().flush()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(ontoplace_server::serve(addr, registry))?;
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let base = io::load_ontology_dir(&a.ontology)?;
    let (o, version) = match (&a.decisions, &a.dataset) {
        (Some(log), Some(dataset)) => {
            let d = load_dataset(io::open(dataset)?, &base, None)?;
            let decisions: Vec<Decision> = io::read_jsonl(log, |v| Ok(serde_json::from_value(v)?))?;
            let r = replay(&base, &mention_keys(&d), &decisions)?;
            (r.ontology, r.version)
        }
        _ => (base, 0),
    };
    io::write_ontology_dir(&o, &a.out)?;
    println!("concepts={} subsumptions={} version={version}", o.len(), o.subsumption_count());
    Ok(())
}

fn adapt(a: AdaptArgs) -> Result<()> {
    let mut text = String::new();
    io::open(&a.input)?.read_to_string(&mut text)?;
    let values: Vec<(usize, serde_json::Value)> = if text.trim_start().starts_with('[') {
        let all: Vec<serde_json::Value> = serde_json::from_str(&text).context("parsing JSON array")?;
        all.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| Ok((i + 1, serde_json::from_str(l).with_context(|| format!("line {}", i + 1))?)))
            .collect::<Result<_>>()?
    };
    let mentions = values
        .iter()
        .map(|(n, v)| adapt_release_record(v, a.id_prefix.as_deref()).map_err(|e| anyhow!("record {n}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    let d = PlacementDataset { split: None, mentions };
    let mut buf = Vec::new();
    write_dataset(&d, &mut buf)?;
    if let Some(dir) = &a.ontology {
        let o = io::load_ontology_dir(dir)?;
        load_dataset(buf.as_slice(), &o, None)?;
    }
    let mut out = io::create(&a.out)?;
    out.write_all(&buf)?;
    out.flush()?;
    println!("mentions={} pairs={}", d.len(), d.pair_count());
    Ok(())
}
