//! Prompt, explanation and response formats reproduced on the published
//! parathyroid, TNBC and CKD examples.

use std::collections::BTreeSet;

use ontoplace_core::Edge;
use ontoplace_core::eval::PlacementDataset;
use ontoplace_core::selection::{
    build_explanation, build_zero_shot_prompt, emit_instruction_tuning_corpus, parse_explained_response,
    parse_option_response,
};

#[path = "support/published.rs"]
mod published;
use published::*;

#[test]
fn parathyroid_prompt_is_byte_exact() {
    let (o, s) = parathyroid();
    let bundle = build_zero_shot_prompt(&o, &s, None).unwrap();
    assert_eq!(bundle.zero_shot_prompt(), PARATHYROID_PROMPT);
    assert_eq!(bundle.options[8], "primary malignant neoplasm of parathyroid gland → NULL");
    assert_eq!(build_zero_shot_prompt(&o, &s, None).unwrap(), bundle);
}

#[test]
fn short_answers() {
    assert_eq!(parse_option_response("2,8", 10).unwrap().set(), BTreeSet::from([2, 8]));
    assert!(parse_option_response("None", 10).unwrap().set().is_empty());
}

#[test]
fn tnbc_explanation_and_tuning_record() {
    let (o, s) = tnbc();
    let gold: BTreeSet<Edge> = [e("malignant tumor of breast", "NULL")].into();
    assert_eq!(build_explanation(&o, &s, &gold).unwrap(), TNBC_EXPLANATION);

    let mention = s.mention.clone().with_gold(gold.into_iter().collect());
    let dataset = PlacementDataset { split: None, mentions: vec![mention] };
    let records = emit_instruction_tuning_corpus(&o, &dataset, std::slice::from_ref(&s)).unwrap();
    assert_eq!(records.len(), 1);
    let text = &records[0].text;
    assert!(text.starts_with("### Input:\n"));
    assert!(text.contains(&format!("\n### Explanation:\n{TNBC_EXPLANATION}\n\n### Response:\n7")));
    assert!(text.ends_with("### Response:\n7"));
    assert_eq!(records[0].response, "7");
}

#[test]
fn ckd_explained_output() {
    let parsed = parse_explained_response(CKD_OUTPUT, 10).unwrap();
    assert_eq!(parsed.indices, vec![3, 7, 5, 6, 8]);
    assert_eq!(parsed.set(), BTreeSet::from([3, 5, 6, 7, 8]));
    let clause_only = CKD_OUTPUT.split("\n\n### Response:").next().unwrap();
    assert_eq!(parse_explained_response(clause_only, 10).unwrap().indices, vec![3, 7, 5, 6, 8]);
}
