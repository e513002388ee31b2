//! JSON-over-HTTP transports for the provider contracts, plus stub
//! dispatch for `stub:` locators.

use std::time::Duration;

use anyhow::{bail, Result};
use ontoplace_core::embedding::{EmbedRequest, EmbedResponse, EmbeddingError, EmbeddingProvider};
use ontoplace_core::selection::{
    CompletionProvider, CompletionRequest, CompletionResponse, ScoreRequest, ScoreResponse, SelectionError,
    SelectionScorer,
};
use ontoplace_core::stub;
use serde::de::DeserializeOwned;
use serde::Serialize;

struct JsonPost {
    url: String,
    client: reqwest::blocking::Client,
}

enum PostError {
    Transport(String),
    Protocol(String),
}

impl JsonPost {
    fn new(url: &str, timeout: Duration) -> Result<Self> {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            bail!("unsupported endpoint locator {url:?} (expected http(s):// or stub:)");
        }
        let client = reqwest::blocking::Client::builder().timeout(timeout).build()?;
        Ok(JsonPost { url: url.to_string(), client })
    }

    fn post<Q: Serialize, R: DeserializeOwned>(&self, body: &Q) -> std::result::Result<R, PostError> {
        let res = self.client.post(&self.url).json(body).send().map_err(|e| PostError::Transport(e.to_string()))?;
        let status = res.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(PostError::Transport(format!("{} from {}", status, self.url)));
        }
        if !status.is_success() {
            return Err(PostError::Protocol(format!("{} from {}", status, self.url)));
        }
        res.json().map_err(|e| PostError::Protocol(format!("bad response body: {e}")))
    }
}

pub struct HttpEmbedder(JsonPost);

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, EmbeddingError> {
        self.0.post(request).map_err(|e| match e {
            PostError::Transport(m) => EmbeddingError::Transport(m),
            PostError::Protocol(m) => EmbeddingError::Protocol(m),
        })
    }
}

pub struct HttpScorer(JsonPost);

impl SelectionScorer for HttpScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, SelectionError> {
        self.0.post(request).map_err(selection_error)
    }
}

pub struct HttpCompletion(JsonPost);

impl CompletionProvider for HttpCompletion {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, SelectionError> {
        self.0.post(request).map_err(selection_error)
    }
}

fn selection_error(e: PostError) -> SelectionError {
    match e {
        PostError::Transport(m) => SelectionError::Transport(m),
        PostError::Protocol(m) => SelectionError::Protocol(m),
    }
}

/// Adds `seed` to a `stub:` locator that does not set one.
pub fn seeded(locator: &str, seed: Option<u64>) -> String {
    match (stub::parse_stub_locator(locator), seed) {
        (Some((_, params)), Some(s)) if !params.contains_key("seed") => {
            let sep = if locator.contains('?') { '&' } else { '?' };
            format!("{locator}{sep}seed={s}")
        }
        _ => locator.to_string(),
    }
}

pub fn embedding_provider(locator: &str, timeout: Duration) -> Result<Box<dyn EmbeddingProvider>> {
    if let Some(p) = stub::embedding_provider_from_locator(locator)? {
        return Ok(Box::new(p));
    }
    Ok(Box::new(HttpEmbedder(JsonPost::new(locator, timeout)?)))
}

pub fn scorer(locator: &str, timeout: Duration) -> Result<Box<dyn SelectionScorer>> {
    if let Some(s) = stub::scorer_from_locator(locator)? {
        return Ok(Box::new(s));
    }
    Ok(Box::new(HttpScorer(JsonPost::new(locator, timeout)?)))
}

pub fn completion(locator: &str, timeout: Duration) -> Result<Box<dyn CompletionProvider>> {
    if let Some(l) = stub::llm_from_locator(locator)? {
        return Ok(Box::new(l));
    }
    Ok(Box::new(HttpCompletion(JsonPost::new(locator, timeout)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_added_only_when_missing() {
        assert_eq!(seeded("stub:hash", Some(7)), "stub:hash?seed=7");
        assert_eq!(seeded("stub:hash?dim=8", Some(7)), "stub:hash?dim=8&seed=7");
        assert_eq!(seeded("stub:hash?seed=1", Some(7)), "stub:hash?seed=1");
        assert_eq!(seeded("http://x/embed", Some(7)), "http://x/embed");
        assert_eq!(seeded("stub:hash", None), "stub:hash");
    }

    #[test]
    fn locators_dispatch() {
        let t = Duration::from_secs(1);
        assert!(embedding_provider("stub:hash?dim=4", t).is_ok());
        assert!(embedding_provider("stub:nope", t).is_err());
        assert!(embedding_provider("ftp://x", t).is_err());
        assert!(scorer("stub:overlap", t).is_ok());
        assert!(completion("stub:overlap?max=2", t).is_ok());
        assert!(completion("http://127.0.0.1:9/complete", t).is_ok());
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let p = embedding_provider("http://127.0.0.1:9/embed", Duration::from_millis(200)).unwrap();
        let err = p.embed(&EmbedRequest { model: "m".into(), texts: vec!["a".into()] }).unwrap_err();
        assert!(matches!(err, EmbeddingError::Transport(_)), "{err:?}");
    }
}
