use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use ontoplace_core::candidates::CandidateParams;
use ontoplace_core::eval::load_dataset;
use ontoplace_core::ontology::load_ontology;
use ontoplace_core::{CandidateGenerator, ConceptId, Edge, InvertedIndex, Ontology, PlacementDataset, SearchMethod, Tokenizer};
use ontoplace_server::{replay, AcceptRequest, CurationSession, SessionError};

fn fixture(name: &str) -> BufReader<File> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy").join(name);
    BufReader::new(File::open(path).unwrap())
}

fn toy() -> (Ontology, PlacementDataset) {
    let (o, _) = load_ontology(fixture("concepts.jsonl"), fixture("subsumptions.tsv")).unwrap();
    let test = load_dataset(fixture("test.jsonl"), &o, None).unwrap();
    (o, test)
}

fn session() -> CurationSession {
    let (o, d) = toy();
    CurationSession::new("s1", o, &d, Tokenizer::whitespace()).unwrap()
}

fn accept(edges: Vec<Edge>, slate_version: u64) -> AcceptRequest {
    AcceptRequest { edges, slate_version, manual: false, who: Some("tester".into()), concept_id: None }
}

fn e(p: &str, c: &str) -> Edge {
    Edge::parse(p, c).unwrap()
}

#[test]
fn fresh_slate_matches_direct_generation() {
    let (o, d) = toy();
    let s = session();
    let tok = Tokenizer::whitespace();
    let index = InvertedIndex::build(o.concepts(), &tok).unwrap();
    let g = CandidateGenerator::lexical(&o, &index, &tok, CandidateParams::default());
    for m in &d.mentions {
        let id = m.id.clone().unwrap();
        let got = s.get_candidates(&id, 10, SearchMethod::Lexical).unwrap();
        assert_eq!(got.slate_version, 0);
        assert_eq!(got.slate.edges, g.generate(m, 10).unwrap().edges);
    }
    assert_eq!(s.version(), 0);
}

#[test]
fn accept_bumps_version_and_dequeues() {
    let s = session();
    let slate = s.get_candidates("t3", 10, SearchMethod::Lexical).unwrap();
    let top = slate.slate.edges[0].edge.clone();
    assert_eq!(s.accept_placement("t3", &accept(vec![top], 0)).unwrap(), 1);
    assert_eq!(s.version(), 1);
    assert!(s.pending().iter().all(|m| m.id.as_deref() != Some("t3")));
    assert!(s.ontology().contains(&ConceptId::new("new:t3").unwrap()));
    assert!(matches!(s.get_candidates("t3", 10, SearchMethod::Lexical), Err(SessionError::NotPending(_))));
}

#[test]
fn stale_slate_conflicts() {
    let s = session();
    let a = s.get_candidates("t3", 10, SearchMethod::Lexical).unwrap();
    let b = s.get_candidates("t5", 10, SearchMethod::Lexical).unwrap();
    s.accept_placement("t3", &accept(vec![a.slate.edges[0].edge.clone()], a.slate_version)).unwrap();
    let err = s.accept_placement("t5", &accept(vec![b.slate.edges[0].edge.clone()], b.slate_version)).unwrap_err();
    assert!(matches!(err, SessionError::StaleSlate { slate_version: 0, current: 1 }));
    // refetching against the new version succeeds
    let b2 = s.get_candidates("t5", 10, SearchMethod::Lexical).unwrap();
    assert_eq!(b2.slate_version, 1);
    s.accept_placement("t5", &accept(vec![b2.slate.edges[0].edge.clone()], 1)).unwrap();
}

#[test]
fn edges_must_come_from_the_slate_unless_manual() {
    let s = session();
    let err = s.accept_placement("t3", &accept(vec![e("D011", "D012")], 0)).unwrap_err();
    assert!(matches!(err, SessionError::NoSlate(_)));
    s.get_candidates("t3", 2, SearchMethod::Lexical).unwrap();
    let err = s.accept_placement("t3", &accept(vec![e("D060", "D061")], 0)).unwrap_err();
    assert!(matches!(err, SessionError::NotInSlate(_)));
    let mut manual = accept(vec![e("D060", "D061")], 0);
    manual.manual = true;
    assert_eq!(s.accept_placement("t3", &manual).unwrap(), 1);
    assert!(matches!(s.accept_placement("zz", &manual), Err(SessionError::UnknownMention(_))));
}

#[test]
fn accepted_concept_shows_up_in_later_slates() {
    let s = session();
    let first = s.get_candidates("t3", 10, SearchMethod::Lexical).unwrap();
    let chosen = e("D011", "D012");
    assert!(first.slate.edge_list().contains(&chosen));
    s.accept_placement("t3", &accept(vec![chosen], 0)).unwrap();
    let new_id = ConceptId::new("new:t3").unwrap();
    let o = s.ontology();
    assert!(o.parents(&new_id).unwrap().contains(&ConceptId::new("D011").unwrap()));
    assert!(o.children(&new_id).unwrap().contains(&ConceptId::new("D012").unwrap()));

    let later = s.get_candidates("t5", 50, SearchMethod::Lexical).unwrap();
    assert_eq!(later.slate_version, 1);
    let touches_new = later.slate.edges.iter().any(|x| x.edge.parent == new_id || x.edge.child.concept() == Some(&new_id));
    assert!(touches_new, "{:?}", later.slate.edge_list());
}

#[test]
fn multi_parent_placement() {
    let s = session();
    let slate = s.get_candidates("t4", 10, SearchMethod::Lexical).unwrap();
    let leafs: Vec<Edge> = slate.slate.edge_list().into_iter().filter(|x| x.is_leaf()).take(2).collect();
    assert_eq!(leafs.len(), 2);
    s.accept_placement("t4", &accept(leafs.clone(), 0)).unwrap();
    let o = s.ontology();
    let parents = o.parents(&ConceptId::new("new:t4").unwrap()).unwrap();
    for l in &leafs {
        assert!(parents.contains(&l.parent));
    }
}

#[test]
fn skip_reorders_queue() {
    let s = session();
    let before: Vec<String> = s.pending().iter().map(|m| m.id.clone().unwrap()).collect();
    let after = s.skip_mention(&before[0], None).unwrap();
    assert_eq!(after[..before.len() - 1], before[1..]);
    assert_eq!(after.last(), Some(&before[0]));
    assert!(matches!(s.skip_mention("nope", None), Err(SessionError::UnknownMention(_))));
    let slate = s.get_candidates(&before[0], 10, SearchMethod::Lexical).unwrap();
    s.accept_placement(&before[0], &accept(vec![slate.slate.edges[0].edge.clone()], 0)).unwrap();
    assert_eq!(s.version(), 1);
}

#[test]
fn log_replay_reconstructs_ontology() {
    let s = session();
    s.skip_mention("t1", None).unwrap();
    for mid in ["t3", "t2", "t5"] {
        let slate = s.get_candidates(mid, 10, SearchMethod::Lexical).unwrap();
        s.accept_placement(mid, &accept(vec![slate.slate.edges[0].edge.clone()], slate.slate_version)).unwrap();
    }
    let r = replay(s.base(), s.mention_order(), &s.log()).unwrap();
    assert_eq!(r.version, 3);
    assert_eq!(r.ontology, *s.ontology());
    let pending: Vec<String> = s.pending().iter().map(|m| m.id.clone().unwrap()).collect();
    assert_eq!(r.queue.into_iter().collect::<Vec<_>>(), pending);
}

#[test]
fn persisted_log_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let final_ontology = {
        let s = session().with_persistence(dir.path(), 2).unwrap();
        for mid in ["t3", "t5"] {
            let slate = s.get_candidates(mid, 10, SearchMethod::Lexical).unwrap();
            s.accept_placement(mid, &accept(vec![slate.slate.edges[0].edge.clone()], slate.slate_version)).unwrap();
        }
        s.skip_mention("t1", Some("a")).unwrap();
        s.ontology()
    };
    assert!(dir.path().join("snapshots/v000002.concepts.jsonl").exists());
    let reopened = session().with_persistence(dir.path(), 2).unwrap();
    assert_eq!(reopened.version(), 2);
    assert_eq!(*reopened.ontology(), *final_ontology);
    assert_eq!(reopened.log().len(), 3);
    assert_eq!(reopened.pending().last().unwrap().id.as_deref(), Some("t1"));
}

#[test]
fn concurrent_accepts_are_linearized() {
    let s = Arc::new(session());
    let ids = ["t1", "t2", "t3", "t4", "t5"];
    let slates: Vec<_> = ids.iter().map(|m| s.get_candidates(m, 10, SearchMethod::Lexical).unwrap()).collect();
    let handles: Vec<_> = ids
        .iter()
        .zip(slates)
        .map(|(mid, slate)| {
            let s = s.clone();
            let mid = mid.to_string();
            std::thread::spawn(move || s.accept_placement(&mid, &accept(vec![slate.slate.edges[0].edge.clone()], 0)))
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().filter_map(|r| r.as_ref().err()).all(|e| matches!(e, SessionError::StaleSlate { .. })));
    assert_eq!(s.version(), 1);
    assert_eq!(s.log().len(), 1);
}

#[test]
fn embedding_methods_need_an_embedder() {
    let s = session();
    assert!(matches!(s.get_candidates("t1", 10, SearchMethod::EdgeBiencoder), Err(SessionError::MethodUnavailable(_))));
    let (o, d) = toy();
    let provider = ontoplace_core::stub::HashingEmbedder::default();
    let client = ontoplace_core::embedding::EmbeddingClient::new(
        ontoplace_core::embedding::EmbeddingProviderEndpoint::new("stub:hash", "stub"),
        Box::new(provider),
    )
    .unwrap();
    let s = CurationSession::new("s2", o, &d, Tokenizer::whitespace()).unwrap().with_embedder(Arc::new(client));
    let slate = s.get_candidates("t1", 10, SearchMethod::EdgeBiencoder).unwrap();
    assert_eq!(slate.slate.len(), 10);
    let report = s.evaluate(10, SearchMethod::FixedEmbedding).unwrap();
    assert_eq!(report.rows.len(), 3);
}
