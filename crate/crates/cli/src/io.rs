//! File helpers shared by the subcommands.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ontoplace_core::eval::{load_dataset, Split};
use ontoplace_core::lexical::IndexFile;
use ontoplace_core::ontology::{load_ontology, LoadReport};
use ontoplace_core::{CandidateSlate, ContextualMention, Ontology, PlacementDataset, Tokenizer};
use serde::Serialize;
use serde_json::Value;

pub const CONCEPTS_FILE: &str = "concepts.jsonl";
pub const SUBSUMPTIONS_FILE: &str = "subsumptions.tsv";

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn load_ontology_files(concepts: &Path, subsumptions: &Path) -> Result<(Ontology, LoadReport)> {
    load_ontology(open(concepts)?, open(subsumptions)?)
        .with_context(|| format!("loading {} and {}", concepts.display(), subsumptions.display()))
}

/// An ontology directory holds `concepts.jsonl` and `subsumptions.tsv`.
pub fn load_ontology_dir(dir: &Path) -> Result<Ontology> {
    Ok(load_ontology_files(&dir.join(CONCEPTS_FILE), &dir.join(SUBSUMPTIONS_FILE))?.0)
}

pub fn write_ontology_dir(o: &Ontology, dir: &Path) -> Result<()> {
    let mut c = create(&dir.join(CONCEPTS_FILE))?;
    o.write_concepts(&mut c)?;
    c.flush()?;
    let mut s = create(&dir.join(SUBSUMPTIONS_FILE))?;
    o.write_subsumptions(&mut s)?;
    s.flush()?;
    Ok(())
}

pub fn tokenizer(vocab: Option<&Path>) -> Result<Tokenizer> {
    match vocab {
        Some(p) => Tokenizer::from_vocab_reader(open(p)?).with_context(|| format!("reading vocabulary {}", p.display())),
        None => Ok(Tokenizer::whitespace()),
    }
}

pub fn read_index(path: &Path) -> Result<IndexFile> {
    serde_json::from_reader(open(path)?).with_context(|| format!("reading index {}", path.display()))
}

/// Non-blank lines of a JSONL file, parsed one by one with line numbers in
/// errors.
pub fn read_jsonl<T, F>(path: &Path, mut parse: F) -> Result<Vec<T>>
where
    F: FnMut(Value) -> Result<T>,
{
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(parse(value).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<usize> {
    let mut out = create(path)?;
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

pub fn read_mentions(path: &Path) -> Result<Vec<ContextualMention>> {
    read_jsonl(path, |v| Ok(serde_json::from_value(v)?))
}

/// Slate files hold slates, or selection records that carry one under
/// `slate`.
pub fn read_slates(path: &Path) -> Result<Vec<CandidateSlate>> {
    read_jsonl(path, |mut v| {
        let v = match v.get_mut("slate") {
            Some(inner) => inner.take(),
            None => v,
        };
        Ok(serde_json::from_value(v)?)
    })
}

/// `name=path`, or a bare path named after its file stem.
pub fn split_spec(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        Some(_) => bail!("bad dataset spec {spec:?}"),
        None => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("cannot name dataset {spec:?}"))?
                .to_string();
            Ok((name, path))
        }
    }
}

pub fn load_split(spec: &str, o: &Ontology) -> Result<(String, PlacementDataset)> {
    let (name, path) = split_spec(spec)?;
    let split = name.parse::<Split>().ok();
    let d = load_dataset(open(&path)?, o, split).with_context(|| format!("loading dataset {}", path.display()))?;
    Ok((name, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_specs() {
        assert_eq!(split_spec("valid=a/b.jsonl").unwrap(), ("valid".into(), PathBuf::from("a/b.jsonl")));
        assert_eq!(split_spec("data/test.jsonl").unwrap(), ("test".into(), PathBuf::from("data/test.jsonl")));
        assert!(split_spec("=x").is_err());
    }

    #[test]
    fn slate_records_unwrap_selection_wrappers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let slate = r#"{"mention":{"mention":"x"},"k":2,"edges":[["a","NULL",0.5,"seed-edge"]]}"#;
        std::fs::write(&p, format!("{slate}\n\n{{\"slate\":{slate},\"selected\":[]}}\n")).unwrap();
        let slates = read_slates(&p).unwrap();
        assert_eq!(slates.len(), 2);
        assert_eq!(slates[0], slates[1]);
        std::fs::write(&p, "{\"k\":1}\n").unwrap();
        let err = format!("{:#}", read_slates(&p).unwrap_err());
        assert!(err.contains("line 1"), "{err}");
    }
}
