//! The worked prompt, explanation and response examples.
#![allow(dead_code)]

use ontoplace_core::candidates::{CandidateSlate, EdgeOrigin, ScoredEdge};
use ontoplace_core::{Concept, ContextualMention, Edge, Ontology};

/// Concepts are keyed by their own label with spaces replaced.
pub fn key(label: &str) -> String {
    label.replace(' ', "_")
}

pub fn onto(labels: &[&str]) -> Ontology {
    let concepts = labels.iter().map(|l| Concept::atomic(&key(l), l).unwrap());
    Ontology::from_parts(concepts, std::iter::empty()).unwrap().0
}

pub fn e(parent: &str, child: &str) -> Edge {
    let c = if child == "NULL" { "NULL".to_string() } else { key(child) };
    Edge::parse(&key(parent), &c).unwrap()
}

pub fn slate(m: ContextualMention, options: &[(&str, &str)]) -> CandidateSlate {
    let edges = options
        .iter()
        .enumerate()
        .map(|(i, (p, c))| ScoredEdge { edge: e(p, c), score: 1.0 - i as f64 / 10.0, origin: EdgeOrigin::Enriched })
        .collect();
    CandidateSlate { k: options.len(), mention: m, edges }
}

pub const PARATHYROID_PROMPT: &str = "### Input:
Can you identify the correct ontological edges for the given mention (marked with *) based on the context? The ontological edge consists of a pair where the left concept represents the parent of the mention, and the right concept represents the child of the mention. If the mention is a leaf node, the right side of the edges will be NULL. If the context is not relevant to the options, make your decision solely based on the mention itself. There may be multiple correct options. Please answer briefly using option numbers, separated by commas. If none of the options is correct, please answer None.

mention in context:
Our aim was to verify the occurrence of selected mutations of the EZH2 and ZFX genes in an Italian cohort of 23 sporadic *parathyroid carcinomas*, 12 atypical and 45 typical adenomas.

options:
0.primary malignant neoplasm → parathyroid carcinoma
1.malignant neoplastic disease → malignant tumor of parathyroid gland
2.malignant neoplastic disease → primary malignant neoplasm of parathyroid gland
3.neoplastic disease → primary malignant neoplasm
4.malignant neoplastic disease → parathyroid carcinoma
5.disorder of parathyroid gland → malignant tumor of parathyroid gland
6.malignant tumor of parathyroid gland → primary malignant neoplasm of parathyroid gland
7.parathyroid carcinoma → NULL
8.primary malignant neoplasm of parathyroid gland → NULL
9.malignant tumor of parathyroid gland → NULL

### Response:
";

pub fn parathyroid() -> (Ontology, CandidateSlate) {
    let o = onto(&[
        "primary malignant neoplasm",
        "parathyroid carcinoma",
        "malignant neoplastic disease",
        "malignant tumor of parathyroid gland",
        "primary malignant neoplasm of parathyroid gland",
        "neoplastic disease",
        "disorder of parathyroid gland",
    ]);
    let m = ContextualMention::new("parathyroid carcinomas").with_context(
        "Our aim was to verify the occurrence of selected mutations of the EZH2 and ZFX genes in an Italian cohort of 23 sporadic",
        ", 12 atypical and 45 typical adenomas.",
    );
    let s = slate(
        m,
        &[
            ("primary malignant neoplasm", "parathyroid carcinoma"),
            ("malignant neoplastic disease", "malignant tumor of parathyroid gland"),
            ("malignant neoplastic disease", "primary malignant neoplasm of parathyroid gland"),
            ("neoplastic disease", "primary malignant neoplasm"),
            ("malignant neoplastic disease", "parathyroid carcinoma"),
            ("disorder of parathyroid gland", "malignant tumor of parathyroid gland"),
            ("malignant tumor of parathyroid gland", "primary malignant neoplasm of parathyroid gland"),
            ("parathyroid carcinoma", "NULL"),
            ("primary malignant neoplasm of parathyroid gland", "NULL"),
            ("malignant tumor of parathyroid gland", "NULL"),
        ],
    );
    (o, s)
}

pub fn tnbc() -> (Ontology, CandidateSlate) {
    let o = onto(&[
        "malignant tumor of breast",
        "carcinoma of breast",
        "neoplasm of breast",
        "lobular carcinoma of breast",
        "mucinous carcinoma of breast",
        "malignant phyllodes tumor of breast",
        "cancer en cuirasse",
    ]);
    let s = slate(
        ContextualMention::new("TNBC"),
        &[
            ("malignant tumor of breast", "lobular carcinoma of breast"),
            ("carcinoma of breast", "lobular carcinoma of breast"),
            ("malignant tumor of breast", "mucinous carcinoma of breast"),
            ("carcinoma of breast", "cancer en cuirasse"),
            ("malignant tumor of breast", "malignant phyllodes tumor of breast"),
            ("malignant tumor of breast", "cancer en cuirasse"),
            ("neoplasm of breast", "malignant phyllodes tumor of breast"),
            ("malignant tumor of breast", "NULL"),
            ("carcinoma of breast", "NULL"),
            ("neoplasm of breast", "NULL"),
        ],
    );
    (o, s)
}

pub const TNBC_EXPLANATION: &str = "From the parents in the options above, including malignant tumor of breast, carcinoma of breast, neoplasm of breast, the correct parents of the mention, TNBC, include malignant tumor of breast. Thus the options are narrowed down to 0, 2, 4, 5, 7. From the children in the narrowed options, including lobular carcinoma of breast, mucinous carcinoma of breast, malignant phyllodes tumor of breast, cancer en cuirasse, NULL, the correct children of the mention, TNBC, include NULL. Thus, the final answers are 7.";

pub const CKD_OUTPUT: &str = "### Explanation:
From the parents in the options above, including renal impairment, kidney disease, disorder of the genitourinary system, the correct parents of the mention, CKD, include renal impairment, kidney disease, disorder of the genitourinary system. Thus the options are narrowed down to 0, 1, 2, 3, 7, 9, 4, 5, 6, 8. From the children in the narrowed options, including end stage renal disease, renal failure following molar and/or ectopic pregnancy, renal failure syndrome, chronic kidney disease due to hypertension, chronic renal failure syndrome, impaired renal function disorder, renal function impairment with growth failure, the correct children of the mention, CKD, include chronic kidney disease due to hypertension, chronic renal failure syndrome, impaired renal function disorder, renal function impairment with growth failure. Thus, the final answers are 3, 7, 5, 6, 8.

### Response:
3,7,5,6,8";
