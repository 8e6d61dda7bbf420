use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    validate_query, ContextualEmbeddingSequence, MaskedDistribution, MaskedLanguageModel,
    PassCounter, ProviderError, ProviderStats,
};
use crate::model::ClozeQuery;

/// Environment variable that overrides the configured backend with a remote
/// server URL.
pub const BACKEND_URL_ENV: &str = "REFLEX_BACKEND_URL";

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    /// Retries after the first attempt of an idempotent request.
    pub retries: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Deserialize)]
struct MetaResponse {
    mask_token: String,
    dimension: usize,
    #[serde(default)]
    max_length: Option<usize>,
}

#[derive(Serialize)]
struct TopkRequest<'a> {
    tokens: &'a [String],
    mask_index: usize,
    k: usize,
}

#[derive(Deserialize)]
struct TopkCandidate {
    token: String,
    prob: f64,
}

#[derive(Deserialize)]
struct TopkResponse {
    candidates: Vec<TopkCandidate>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for the model server's `/meta`, `/topk` and `/embed` endpoints.
#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    options: RemoteOptions,
    mask_token: String,
    dimension: usize,
    max_length: Option<usize>,
    counter: PassCounter,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl RemoteBackend {
    /// Connects and performs the `/meta` handshake.
    pub fn connect(base_url: &str, options: RemoteOptions) -> Result<Self, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(options.timeout))
            .build()
            .into();
        let mut backend = Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            options,
            mask_token: String::new(),
            dimension: 0,
            max_length: None,
            counter: PassCounter::default(),
        };
        let meta: MetaResponse = backend.request("meta", None::<&()>)?;
        if meta.dimension == 0 || meta.mask_token.is_empty() {
            return Err(ProviderError::Protocol("invalid /meta response".into()));
        }
        backend.mask_token = meta.mask_token;
        backend.dimension = meta.dimension;
        backend.max_length = meta.max_length;
        Ok(backend)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Maximum subword length advertised by the server, if any.
    pub fn max_length(&self) -> Option<usize> {
        self.max_length
    }

    fn request<B: Serialize, T: DeserializeOwned>(
        &self,
        endpoint: &str,
        body: Option<&B>,
    ) -> Result<T, ProviderError> {
        let url = format!("{}/{endpoint}", self.base_url);
        let mut delay = self.options.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.options.retries {
            if attempt > 0 {
                log::debug!("retrying {url} in {delay:?}: {last}");
                thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&url, body)? {
                Attempt::Done(value) => return Ok(value),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(ProviderError::BackendUnavailable(format!("{url}: {last}")))
    }

    fn attempt<B: Serialize, T: DeserializeOwned>(
        &self,
        url: &str,
        body: Option<&B>,
    ) -> Result<Attempt<T>, ProviderError> {
        let result = match body {
            Some(body) => self.agent.post(url).send_json(body),
            None => self.agent.get(url).call(),
        };
        let mut response = match result {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => response
                .body_mut()
                .read_json::<T>()
                .map(Attempt::Done)
                .map_err(|e| ProviderError::Protocol(format!("{url}: {e}"))),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}"))),
            400 | 413 | 422 => {
                let detail = response.body_mut().read_to_string().unwrap_or_default();
                Err(ProviderError::MalformedQuery(format!("{url}: HTTP {status} {detail}")))
            }
            _ => Err(ProviderError::Protocol(format!("{url}: unexpected HTTP {status}"))),
        }
    }
}

impl MaskedLanguageModel for RemoteBackend {
    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn topk_mask(&self, query: &ClozeQuery, k: usize) -> Result<MaskedDistribution, ProviderError> {
        validate_query(query, &self.mask_token, k)?;
        let request = TopkRequest {
            tokens: query.tokens(),
            mask_index: query.mask_index(),
            k,
        };
        let response: TopkResponse = self.request("topk", Some(&request))?;
        self.counter.record();
        let candidates = response.candidates.into_iter().map(|c| (c.token, c.prob)).collect();
        MaskedDistribution::from_candidates(candidates, k)
    }

    fn embed_sequence(&self, tokens: &[String]) -> Result<ContextualEmbeddingSequence, ProviderError> {
        if tokens.is_empty() {
            return Err(ProviderError::EmptySequence);
        }
        let response: EmbedResponse = self.request("embed", Some(&EmbedRequest { tokens }))?;
        self.counter.record();
        if response.vectors.len() != tokens.len() {
            return Err(ProviderError::Protocol(format!(
                "{} vectors for {} tokens",
                response.vectors.len(),
                tokens.len()
            )));
        }
        ContextualEmbeddingSequence::new(self.dimension, response.vectors)
    }

    fn stats(&self) -> ProviderStats {
        self.counter.stats()
    }

    fn reset_stats(&self) {
        self.counter.reset()
    }
}
