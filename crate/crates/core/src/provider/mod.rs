//! Masked language model providers.
//!
//! The engine talks to a model only through [`MaskedLanguageModel`]:
//! a top-k prediction for the masked object slot, and one contextual vector
//! per whitespace-level token. [`ReferenceBackend`] is a fully enumerable
//! stand-in used for verification; [`RemoteBackend`] speaks the JSON
//! protocol of the model server sidecar.

mod reference;
mod remote;

use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::Serialize;
use thiserror::Error;

use crate::model::ClozeQuery;

pub use reference::{ReferenceBackend, ReferenceFixture, REFERENCE_MASK_TOKEN};
pub use remote::{RemoteBackend, RemoteOptions, BACKEND_URL_ENV};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("cannot embed an empty sequence")]
    EmptySequence,
    #[error("backend protocol violation: {0}")]
    Protocol(String),
    #[error("invalid reference fixture: {0}")]
    InvalidFixture(String),
}

/// Top-k candidates for the masked slot, sorted by descending probability
/// with ties ordered lexicographically by token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskedDistribution {
    candidates: Vec<(String, f64)>,
}

impl MaskedDistribution {
    /// Sorts, validates and truncates to `k` candidates.
    pub fn from_candidates(
        mut candidates: Vec<(String, f64)>,
        k: usize,
    ) -> Result<Self, ProviderError> {
        for (token, p) in &candidates {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(ProviderError::Protocol(format!(
                    "probability {p} for {token:?} outside (0, 1]"
                )));
            }
        }
        candidates.sort_by(compare_candidates);
        candidates.truncate(k);
        let total: f64 = candidates.iter().map(|(_, p)| p).sum();
        if total > 1.0 + 1e-6 {
            return Err(ProviderError::Protocol(format!(
                "candidate probabilities sum to {total}"
            )));
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[(String, f64)] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

pub(crate) fn compare_candidates(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// One contextual vector per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEmbeddingSequence {
    dimension: usize,
    vectors: Vec<Vec<f64>>,
}

impl ContextualEmbeddingSequence {
    pub fn new(dimension: usize, vectors: Vec<Vec<f64>>) -> Result<Self, ProviderError> {
        if dimension == 0 {
            return Err(ProviderError::Protocol("zero embedding dimension".into()));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != dimension) {
            return Err(ProviderError::Protocol(format!(
                "vector of length {} where dimension is {dimension}",
                bad.len()
            )));
        }
        Ok(Self { dimension, vectors })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProviderStats {
    pub forward_passes: u64,
}

/// Atomic forward-pass counter shared by the backends.
#[derive(Debug, Default)]
pub struct PassCounter(AtomicU64);

impl PassCounter {
    pub fn record(&self) {
        self.0.fetch_add(1, AtomicOrdering::Relaxed);
    }

    pub fn stats(&self) -> ProviderStats {
        ProviderStats {
            forward_passes: self.0.load(AtomicOrdering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.0.store(0, AtomicOrdering::Relaxed);
    }
}

pub trait MaskedLanguageModel: Send + Sync {
    /// Reserved surface form of the mask token.
    fn mask_token(&self) -> &str;

    /// Distribution over whole tokens for the query's masked slot; one
    /// forward pass.
    fn topk_mask(&self, query: &ClozeQuery, k: usize) -> Result<MaskedDistribution, ProviderError>;

    /// Contextual vectors for `tokens`; one forward pass.
    fn embed_sequence(&self, tokens: &[String]) -> Result<ContextualEmbeddingSequence, ProviderError>;

    fn stats(&self) -> ProviderStats;

    fn reset_stats(&self);
}

/// Checks the preconditions shared by every backend's `topk_mask`.
pub(crate) fn validate_query(query: &ClozeQuery, mask: &str, k: usize) -> Result<(), ProviderError> {
    if k == 0 {
        return Err(ProviderError::MalformedQuery("k must be at least 1".into()));
    }
    let tokens = query.tokens();
    if query.mask_index() >= tokens.len() || tokens[query.mask_index()] != mask {
        return Err(ProviderError::MalformedQuery(format!(
            "position {} does not hold the mask token {mask:?}",
            query.mask_index()
        )));
    }
    let masks = tokens.iter().filter(|t| *t == mask).count();
    if masks != 1 {
        return Err(ProviderError::MalformedQuery(format!(
            "query contains {masks} mask tokens"
        )));
    }
    Ok(())
}
