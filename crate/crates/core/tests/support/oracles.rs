//! Independent transcriptions of the set, metric and idf definitions,
//! shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeSet;

use ontoplace_core::eval::Subset;
use ontoplace_core::{Concept, ConceptId, Edge, Ontology, PredictionRecord};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn name(i: usize) -> String {
    format!("c{i:03}")
}

pub fn id(i: usize) -> ConceptId {
    ConceptId::new(name(i)).unwrap()
}

pub fn build(n: usize, pairs: &[(usize, usize)]) -> Ontology {
    let concepts = (0..n).map(|i| Concept::atomic(&name(i), &format!("concept {i}")).unwrap());
    Ontology::from_parts(concepts, pairs.iter().map(|(p, c)| (id(*p), id(*c)))).unwrap().0
}

pub fn parents_of(pairs: &[(usize, usize)], a: usize) -> Vec<usize> {
    pairs.iter().filter(|(_, c)| *c == a).map(|(p, _)| *p).collect()
}

pub fn children_of(pairs: &[(usize, usize)], a: usize) -> Vec<usize> {
    pairs.iter().filter(|(p, _)| *p == a).map(|(_, c)| *c).collect()
}

pub fn edge(p: usize, c: Option<usize>) -> Edge {
    match c {
        Some(c) => Edge::between(&id(p), &id(c)),
        None => Edge::leaf(&id(p)),
    }
}

// S = {P_i -> A} ∪ {A -> C_j} ∪ {P_i -> C_j} ∪ {A -> NULL}
pub fn formed_oracle(pairs: &[(usize, usize)], a: usize) -> BTreeSet<Edge> {
    let ps = parents_of(pairs, a);
    let cs = children_of(pairs, a);
    let mut s = BTreeSet::new();
    for &p in &ps {
        s.insert(edge(p, Some(a)));
    }
    for &c in &cs {
        s.insert(edge(a, Some(c)));
    }
    for &p in &ps {
        for &c in &cs {
            if p != c {
                s.insert(edge(p, Some(c)));
            }
        }
    }
    s.insert(edge(a, None));
    s
}

// {P -> C} ∪ {P+ -> C} ∪ {P -> C-} ∪ {P+ -> C-} plus P -> NULL and P+ -> NULL;
// a leaf seed P -> NULL gives {P -> NULL} ∪ {P+ -> NULL}.
pub fn enriched_oracle(pairs: &[(usize, usize)], seeds: &[(usize, Option<usize>)]) -> BTreeSet<Edge> {
    let mut s = BTreeSet::new();
    for &(p, c) in seeds {
        let mut ups = vec![p];
        ups.extend(parents_of(pairs, p));
        match c {
            None => {
                for &u in &ups {
                    s.insert(edge(u, None));
                }
            }
            Some(c) => {
                let mut downs = vec![c];
                downs.extend(children_of(pairs, c));
                for &u in &ups {
                    for &d in &downs {
                        if u != d {
                            s.insert(edge(u, Some(d)));
                        }
                    }
                    s.insert(edge(u, None));
                }
            }
        }
    }
    s
}

pub fn edge_space_oracle(n: usize, pairs: &[(usize, usize)]) -> BTreeSet<Edge> {
    let has = |a: usize, b: usize| pairs.contains(&(a, b));
    let mut s = BTreeSet::new();
    for g in 0..n {
        if !pairs.iter().any(|(p, _)| *p == g) {
            s.insert(edge(g, None));
        }
        for x in 0..n {
            if !has(g, x) {
                continue;
            }
            s.insert(edge(g, Some(x)));
            for d in 0..n {
                if d != g && has(x, d) {
                    s.insert(edge(g, Some(d)));
                }
            }
        }
    }
    s
}

// Per record: (any hit in top k, all gold in top k), by nested loops.
pub fn brute(r: &PredictionRecord, k: usize) -> (bool, bool) {
    let mut top = Vec::new();
    for (i, e) in r.predicted.iter().enumerate() {
        if i < k {
            top.push(e);
        }
    }
    let mut any = false;
    for g in &r.gold {
        for z in &top {
            if *z == g {
                any = true;
            }
        }
    }
    let mut all = true;
    for g in &r.gold {
        let mut found = false;
        for z in &top {
            if *z == g {
                found = true;
            }
        }
        all &= found;
    }
    (any, all)
}

pub fn in_subset(r: &PredictionRecord, s: Subset) -> bool {
    let leaf = r.gold.iter().all(|e| e.child.is_null());
    match s {
        Subset::All => true,
        Subset::Leaf => leaf,
        Subset::Nonleaf => !leaf,
    }
}

pub const WORDS: &[&str] = &[
    "acute", "chronic", "renal", "kidney", "failure", "disease", "syndrome", "tumor", "malignant", "benign",
    "carcinoma", "breast", "lung", "heart", "hypertensive", "primary", "secondary", "neoplasm", "of", "the",
    "with", "due", "to", "stage", "infection", "viral", "bacterial", "lesion", "cyst", "injury", "arthritis",
    "psoriatic", "joint", "disorder", "cognitive", "mild", "severe", "congenital", "hepatic", "cardiac",
];

pub fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn scratch_similarity(labels: &[String], mention: &str, target: usize, base: f64) -> f64 {
    let tokens = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<BTreeSet<String>>();
    let docs: Vec<BTreeSet<String>> = labels.iter().map(|l| tokens(l)).collect();
    let shared: BTreeSet<String> = tokens(mention).intersection(&docs[target]).cloned().collect();
    shared
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            (docs.len() as f64 / df).ln() / base.ln()
        })
        .sum()
}
