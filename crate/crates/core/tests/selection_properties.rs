//! Randomised properties of explanations, losses and scored selection.

use std::collections::BTreeSet;

use ontoplace_core::candidates::{CandidateSlate, EdgeOrigin, ScoredEdge};
use ontoplace_core::embedding::SerializationBudget;
use ontoplace_core::selection::{
    bce_multilabel_loss, build_cross_rows, build_explanation, build_zero_shot_prompt, format_response,
    gold_option_indices, parse_explained_response, select_scored, ScoreRequest, ScoreResponse, SelectionScorer,
    SelectionScorerEndpoint,
};
use ontoplace_core::{Concept, ContextualMention, Edge, Ontology};
use proptest::prelude::*;

const N: usize = 8;

fn ontology() -> Ontology {
    let concepts = (0..N).map(|i| Concept::atomic(&format!("c{i}"), &format!("concept number {i}")).unwrap());
    Ontology::from_parts(concepts, std::iter::empty()).unwrap().0
}

fn edge((p, c): (usize, Option<usize>)) -> Edge {
    match c {
        Some(c) => Edge::parse(&format!("c{p}"), &format!("c{c}")).unwrap(),
        None => Edge::parse(&format!("c{p}"), "NULL").unwrap(),
    }
}

fn raw_edge() -> impl Strategy<Value = (usize, Option<usize>)> {
    (0..N, proptest::option::of(0..N)).prop_filter("no self edges", |(p, c)| Some(*p) != *c)
}

fn slate_and_gold() -> impl Strategy<Value = (CandidateSlate, BTreeSet<Edge>)> {
    (
        proptest::collection::btree_set(raw_edge(), 1..20),
        proptest::collection::btree_set(raw_edge(), 1..6),
        any::<u64>(),
    )
        .prop_map(|(cands, gold, salt)| {
            let mut edges: Vec<Edge> = cands.into_iter().map(edge).collect();
            // deterministic shuffle so slate order is not sorted order
            edges.sort_by_key(|e| {
                let h = format!("{e}{salt}").bytes().fold(salt, |h, b| h.rotate_left(5) ^ u64::from(b));
                h
            });
            let k = edges.len() + edges.len() % 2;
            let edges = edges
                .into_iter()
                .enumerate()
                .map(|(i, edge)| ScoredEdge { edge, score: -(i as f64), origin: EdgeOrigin::Enriched })
                .collect();
            let slate = CandidateSlate { mention: ContextualMention::new("new mention"), k, edges };
            (slate, gold.into_iter().map(edge).collect())
        })
}

struct Oracle(BTreeSet<String>);
impl SelectionScorer for Oracle {
    fn score(&self, r: &ScoreRequest) -> ontoplace_core::selection::Result<ScoreResponse> {
        Ok(ScoreResponse { scores: r.rows.iter().map(|row| if self.0.contains(row) { 1.0 } else { -1.0 }).collect() })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn explanation_round_trip((slate, gold) in slate_and_gold()) {
        let o = ontology();
        let explanation = build_explanation(&o, &slate, &gold).unwrap();
        let want = gold_option_indices(&slate, &gold);
        let full = format!("### Explanation:\n{explanation}\n\n### Response:\n{}", format_response(&want));
        prop_assert_eq!(parse_explained_response(&full, slate.len()).unwrap().set(), want.clone());
        // the clause inside the explanation alone carries the same answer
        prop_assert_eq!(parse_explained_response(&explanation, slate.len()).unwrap().set(), want);
    }

    #[test]
    fn oracle_scorer_puts_gold_first((slate, gold) in slate_and_gold()) {
        let o = ontology();
        let rows = build_cross_rows(&o, &slate, SerializationBudget::default()).unwrap();
        let gold_rows = rows
            .iter()
            .filter(|r| gold.contains(&slate.edges[r.candidate_index].edge))
            .map(|r| r.text.clone())
            .collect();
        let ranked = select_scored(&SelectionScorerEndpoint::new("stub:oracle", "m"), &Oracle(gold_rows), &slate, &rows).unwrap();
        let flags: Vec<bool> = ranked.edges.iter().map(|s| gold.contains(&s.edge)).collect();
        let first_miss = flags.iter().position(|g| !g).unwrap_or(flags.len());
        prop_assert!(flags[first_miss..].iter().all(|g| !g));
        prop_assert_eq!(ranked.len(), slate.len());
    }

    #[test]
    fn prompt_options_share_slate_indexing((slate, _gold) in slate_and_gold()) {
        let o = ontology();
        let bundle = build_zero_shot_prompt(&o, &slate, None).unwrap();
        let rows = build_cross_rows(&o, &slate, SerializationBudget::default()).unwrap();
        prop_assert_eq!(bundle.options.len(), rows.len());
        for (i, (opt, row)) in bundle.options.iter().zip(&rows).enumerate() {
            prop_assert_eq!(row.candidate_index, i);
            let line = format!("\n{i}.{opt}\n");
            prop_assert!(bundle.input_section.contains(&line));
        }
        prop_assert_eq!(build_zero_shot_prompt(&o, &slate, None).unwrap(), bundle);
    }

    // Beyond |s| ≈ 15 the naive `1 - σ(s)` loses digits to cancellation, so
    // it stops being a trustworthy reference.
    #[test]
    fn bce_matches_naive_form(pairs in proptest::collection::vec((-15.0f64..15.0, any::<bool>()), 1..16)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let naive: f64 = pairs
            .iter()
            .map(|(s, y)| {
                let sig = 1.0 / (1.0 + (-s).exp());
                if *y { -sig.ln() } else { -(1.0 - sig).ln() }
            })
            .sum();
        prop_assume!(naive.is_finite());
        let got = bce_multilabel_loss(&scores, &labels).unwrap();
        prop_assert!((got - naive).abs() <= 1e-9 * naive.abs().max(1.0), "{got} vs {naive}");
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn bce_finite_for_large_scores(s in -500.0f64..500.0, y in any::<bool>()) {
        let l = bce_multilabel_loss(&[s], &[y]).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}

#[test]
fn bce_vanishes_on_confident_correct_scores() {
    let l = bce_multilabel_loss(&[60.0, -60.0], &[true, false]).unwrap();
    assert!(l < 1e-20);
    assert!((bce_multilabel_loss(&[0.0], &[true]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn gold_missing_from_slate_gives_none() {
    let o = ontology();
    let slate = CandidateSlate {
        mention: ContextualMention::new("x"),
        k: 2,
        edges: vec![ScoredEdge { edge: edge((0, Some(1))), score: 1.0, origin: EdgeOrigin::SeedEdge }],
    };
    let gold: BTreeSet<Edge> = [edge((2, None))].into();
    let text = build_explanation(&o, &slate, &gold).unwrap();
    assert!(text.ends_with("Thus, the final answers are None."));
    assert!(parse_explained_response(&text, 1).unwrap().none);
}

#[test]
fn two_gold_options_listed_ascending() {
    let o = ontology();
    let edges = [(0, Some(1)), (2, None), (0, None), (3, Some(4))];
    let slate = CandidateSlate {
        mention: ContextualMention::new("x"),
        k: 4,
        edges: edges
            .iter()
            .map(|r| ScoredEdge { edge: edge(*r), score: 0.0, origin: EdgeOrigin::Enriched })
            .collect(),
    };
    let gold: BTreeSet<Edge> = [edge((0, None)), edge((0, Some(1)))].into();
    let text = build_explanation(&o, &slate, &gold).unwrap();
    assert!(text.contains("narrowed down to 0, 2."));
    assert!(text.contains("including concept number 1, NULL, the correct children"));
    assert!(text.ends_with("the final answers are 0, 2."));
}
