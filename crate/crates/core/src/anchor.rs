//! Anchor token identification.
//!
//! The model's probability mass for the masked object slot is moved onto
//! positions of the context. For every proposal token `v` the query is
//! re-embedded with `v` in the object slot; the cosine between each context
//! position and the object slot, softmax-normalized over the context, says
//! how compatible that position is with `v`. A position's score is the
//! probability-weighted sum of its compatibilities and the anchor is the
//! highest scoring position. Only the top-k proposals are summed over, so
//! the procedure costs one prediction pass plus one embedding pass per
//! proposal.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{cosine, softmax};
use crate::model::{is_punctuation, ClozeQuery};
use crate::provider::{ContextualEmbeddingSequence, MaskedLanguageModel, ProviderError};
use crate::templating::fill_object;

pub const DEFAULT_TOP_K: usize = 16;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("every proposal token was punctuation")]
    EmptyProposal,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Top-k predictions with punctuation-only tokens removed. Probabilities are
/// left as predicted; the mass of removed tokens is dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalSet {
    candidates: Vec<(String, f64)>,
    filtered: usize,
}

impl ProposalSet {
    pub fn from_predictions(predictions: &[(String, f64)]) -> Result<Self, AnchorError> {
        let candidates: Vec<(String, f64)> =
            predictions.iter().filter(|(t, _)| !is_punctuation(t)).cloned().collect();
        if candidates.is_empty() {
            return Err(AnchorError::EmptyProposal);
        }
        Ok(Self {
            filtered: predictions.len() - candidates.len(),
            candidates,
        })
    }

    pub fn candidates(&self) -> &[(String, f64)] {
        &self.candidates
    }

    /// Number of predicted tokens removed as punctuation.
    pub fn filtered(&self) -> usize {
        self.filtered
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Multiplies every probability by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            candidates: self.candidates.iter().map(|(t, p)| (t.clone(), p * factor)).collect(),
            filtered: self.filtered,
        }
    }
}

/// Compatibility of every context position with one candidate token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityRow {
    pub candidate: String,
    /// Cosine between each context position and the object slot.
    pub unnormalized: Vec<f64>,
    /// Softmax of `unnormalized` over the context positions.
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorResult {
    pub position: usize,
    pub score: f64,
    /// Redistributed mass for every context position.
    pub z: Vec<f64>,
    pub proposals: ProposalSet,
    #[serde(skip)]
    pub rows: Vec<CompatibilityRow>,
}

pub fn propose(
    provider: &dyn MaskedLanguageModel,
    query: &ClozeQuery,
    k: usize,
) -> Result<ProposalSet, AnchorError> {
    let distribution = provider.topk_mask(query, k)?;
    ProposalSet::from_predictions(distribution.candidates())
}

/// Builds a row from the embeddings of `q(v)`.
pub fn row_from_embeddings(
    candidate: &str,
    query: &ClozeQuery,
    embeddings: &ContextualEmbeddingSequence,
) -> Result<CompatibilityRow, ProviderError> {
    if embeddings.len() != query.tokens().len() {
        return Err(ProviderError::Protocol(format!(
            "{} vectors for a {}-token query",
            embeddings.len(),
            query.tokens().len()
        )));
    }
    let vectors = embeddings.vectors();
    let object = &vectors[query.mask_index()];
    let unnormalized: Vec<f64> = vectors[..query.context_len()]
        .iter()
        .map(|v| cosine(v, object))
        .collect();
    let normalized = softmax(&unnormalized);
    Ok(CompatibilityRow {
        candidate: candidate.to_string(),
        unnormalized,
        normalized,
    })
}

/// One embedding pass over the query with `candidate` in the object slot.
pub fn compatibility(
    provider: &dyn MaskedLanguageModel,
    query: &ClozeQuery,
    candidate: &str,
) -> Result<CompatibilityRow, ProviderError> {
    let filled = fill_object(query, candidate);
    let embeddings = provider.embed_sequence(&filled)?;
    row_from_embeddings(candidate, query, &embeddings)
}

/// Probability-weighted compatibility per position and its argmax (lowest
/// index on ties). `rows` must be aligned with the proposal candidates.
pub fn select_anchor(proposals: &ProposalSet, rows: &[CompatibilityRow]) -> (usize, f64, Vec<f64>) {
    let positions = rows.first().map_or(0, |r| r.normalized.len());
    let mut z = vec![0.0; positions];
    for ((_, p), row) in proposals.candidates().iter().zip(rows) {
        for (zi, d) in z.iter_mut().zip(&row.normalized) {
            *zi += p * d;
        }
    }
    let mut best = 0;
    for (i, &value) in z.iter().enumerate() {
        if value > z[best] {
            best = i;
        }
    }
    (best, z.get(best).copied().unwrap_or(0.0), z)
}

/// Finds the anchor position for `query` using the top `k` predictions.
pub fn anchor(
    provider: &dyn MaskedLanguageModel,
    query: &ClozeQuery,
    k: usize,
) -> Result<AnchorResult, AnchorError> {
    let proposals = propose(provider, query, k)?;
    let rows = proposals
        .candidates()
        .par_iter()
        .map(|(v, _)| compatibility(provider, query, v))
        .collect::<Result<Vec<_>, _>>()?;
    let (position, score, z) = select_anchor(&proposals, &rows);
    Ok(AnchorResult {
        position,
        score,
        z,
        proposals,
        rows,
    })
}
