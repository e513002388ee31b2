//! Browser demo over the bundled toy ontology. Every export takes and
//! returns JSON strings so the page needs no generated bindings beyond
//! the wasm-bindgen glue.

use std::collections::BTreeSet;

use ontoplace_core::candidates::{enrich_edges, form_edges, CandidateParams};
use ontoplace_core::embedding::{EmbeddingClient, EmbeddingProviderEndpoint};
use ontoplace_core::ontology::load_ontology;
use ontoplace_core::selection::{build_explanation, build_zero_shot_prompt, parse_option_response};
use ontoplace_core::stub::{HashingEmbedder, OverlapLlm};
use ontoplace_core::{CandidateGenerator, CandidateSlate, ConceptId, ContextualMention, Edge, InvertedIndex, Ontology, Tokenizer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const CONCEPTS: &str = include_str!("../../../fixtures/toy/concepts.jsonl");
const SUBSUMPTIONS: &str = include_str!("../../../fixtures/toy/subsumptions.tsv");

struct Toy {
    ontology: Ontology,
    tokenizer: Tokenizer,
    index: InvertedIndex,
    embedder: EmbeddingClient,
}

impl Toy {
    fn load() -> Toy {
        let (ontology, _) = load_ontology(CONCEPTS.as_bytes(), SUBSUMPTIONS.as_bytes()).expect("bundled ontology");
        let tokenizer = Tokenizer::whitespace();
        let index = InvertedIndex::build(ontology.concepts(), &tokenizer).expect("bundled index");
        let embedder = EmbeddingClient::new(
            EmbeddingProviderEndpoint::new("stub:hash?dim=64", "stub"),
            Box::new(HashingEmbedder::default()),
        )
        .expect("stub embedder");
        Toy { ontology, tokenizer, index, embedder }
    }
}

thread_local! {
    static TOY: Toy = Toy::load();
}

#[derive(Deserialize)]
struct SlateRequest {
    mention: String,
    #[serde(default)]
    context_left: String,
    #[serde(default)]
    context_right: String,
    #[serde(default = "default_method")]
    method: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    gold: Vec<(String, String)>,
}

fn default_method() -> String {
    "lexical".into()
}

fn default_k() -> usize {
    10
}

#[derive(Serialize)]
struct Row {
    parent: String,
    child: String,
    text: String,
    score: f64,
    origin: String,
}

fn bad(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn slate_for(toy: &Toy, req: &SlateRequest) -> Result<CandidateSlate, String> {
    let m = ContextualMention::new(req.mention.trim()).with_context(&req.context_left, &req.context_right);
    if m.mention.is_empty() {
        return Err("mention is empty".into());
    }
    let params = CandidateParams::default();
    let generator = match req.method.as_str() {
        "lexical" => CandidateGenerator::lexical(&toy.ontology, &toy.index, &toy.tokenizer, params),
        "fixed" => CandidateGenerator::fixed(&toy.ontology, &toy.embedder, params).map_err(bad)?,
        "biencoder" => CandidateGenerator::biencoder(&toy.ontology, &toy.embedder, params, None).map_err(bad)?,
        other => return Err(format!("unknown method {other:?}")),
    };
    generator.generate(&m, req.k).map_err(bad)
}

fn edge_text(o: &Ontology, e: &Edge) -> Result<String, String> {
    let parent = o.verbalize(&e.parent).map_err(bad)?;
    let child = match e.child.concept() {
        Some(c) => o.verbalize(c).map_err(bad)?,
        None => "NULL".into(),
    };
    Ok(format!("{parent} → {child}"))
}

fn rows(o: &Ontology, slate: &CandidateSlate) -> Result<Vec<Row>, String> {
    slate
        .edges
        .iter()
        .map(|s| {
            let (parent, child) = s.edge.clone().into();
            Ok(Row { parent, child, text: edge_text(o, &s.edge)?, score: s.score, origin: format!("{:?}", s.origin) })
        })
        .collect()
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

/// Sorted concept list for the page's pickers.
pub fn concepts_json() -> String {
    TOY.with(|toy| {
        let list: Vec<Value> = toy
            .ontology
            .concepts()
            .map(|c| json!({ "id": c.id.as_str(), "label": toy.ontology.verbalize(&c.id).unwrap_or_default() }))
            .collect();
        Value::from(list).to_string()
    })
}

/// `{mention, context_left?, context_right?, method?, k?}` → ranked slate.
pub fn slate_json(request: &str) -> Result<String, String> {
    let req: SlateRequest = parse(request)?;
    TOY.with(|toy| {
        let slate = slate_for(toy, &req)?;
        Ok(json!({ "k": slate.k, "edges": rows(&toy.ontology, &slate)? }).to_string())
    })
}

/// Same request plus optional `gold` pairs → prompt, the overlap stub's
/// answer and, with gold, the explanation a tuning record would carry.
pub fn prompt_json(request: &str) -> Result<String, String> {
    let req: SlateRequest = parse(request)?;
    TOY.with(|toy| {
        let slate = slate_for(toy, &req)?;
        let bundle = build_zero_shot_prompt(&toy.ontology, &slate, None).map_err(bad)?;
        let prompt = bundle.zero_shot_prompt();
        let answer = OverlapLlm::default().answer(&prompt);
        let picked = parse_option_response(&answer, slate.len()).map_err(bad)?;
        let gold: BTreeSet<Edge> =
            req.gold.iter().map(|(p, c)| Edge::parse(p, c)).collect::<Result<_, _>>().map_err(bad)?;
        let explanation =
            if gold.is_empty() { None } else { Some(build_explanation(&toy.ontology, &slate, &gold).map_err(bad)?) };
        Ok(json!({
            "prompt": prompt,
            "answer": answer,
            "selected": picked.indices,
            "explanation": explanation,
        })
        .to_string())
    })
}

/// Edges formed around one concept, then enriched one hop further.
pub fn neighbourhood_json(concept: &str) -> Result<String, String> {
    TOY.with(|toy| {
        let o = &toy.ontology;
        let id = ConceptId::new(concept).map_err(bad)?;
        let formed = form_edges(o, &id).map_err(bad)?;
        let seeds: Vec<Edge> = formed.iter().cloned().collect();
        let enriched = enrich_edges(o, &seeds).map_err(bad)?;
        let texts = |edges: &mut dyn Iterator<Item = &Edge>| -> Result<Vec<String>, String> {
            edges.map(|e| edge_text(o, e)).collect()
        };
        let ids = |set: &BTreeSet<ConceptId>| set.iter().map(|c| c.as_str().to_string()).collect::<Vec<_>>();
        Ok(json!({
            "label": o.verbalize(&id).map_err(bad)?,
            "parents": ids(o.parents(&id).map_err(bad)?),
            "children": ids(o.children(&id).map_err(bad)?),
            "formed": texts(&mut formed.iter())?,
            "enriched": texts(&mut enriched.iter().filter(|e| !formed.contains(*e)))?,
        })
        .to_string())
    })
}

#[wasm_bindgen]
pub fn concepts() -> String {
    concepts_json()
}

#[wasm_bindgen]
pub fn slate(request: &str) -> Result<String, JsValue> {
    slate_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn prompt(request: &str) -> Result<String, JsValue> {
    prompt_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn neighbourhood(concept: &str) -> Result<String, JsValue> {
    neighbourhood_json(concept).map_err(|e| JsValue::from_str(&e))
}
