//! Context rejection.
//!
//! Each candidate context is scored by how well it covers the words of the
//! subject-filled template: for every template token, take the best cosine
//! similarity to any context token and average. Per relation, scores are
//! thresholded at `mean - lambda * stddev`; pairs at or below the threshold
//! are answered with "no answer".

use thiserror::Error;

use crate::embeddings::EmbeddingTable;
use crate::templating::FilledTemplate;

/// Score assigned when no template token has a vector. Always rejected.
pub const UNSCORABLE: f64 = f64::NEG_INFINITY;

/// Default grid for tuning lambda on a development split.
pub const LAMBDA_GRID: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RejectionError {
    #[error("no finite rejection scores to fit a threshold on")]
    EmptyScores,
    #[error("lambda must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionScore {
    pub pair_index: usize,
    pub value: f64,
}

impl RejectionScore {
    pub fn is_scorable(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RejectionThreshold {
    pub mean: f64,
    pub stddev: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl RejectionThreshold {
    pub fn new(mean: f64, stddev: f64, lambda: f64) -> Self {
        Self {
            mean,
            stddev,
            lambda,
            epsilon: mean - lambda * stddev,
        }
    }

    /// Same statistics, different lambda.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self::new(self.mean, self.stddev, lambda)
    }

    pub fn accepts(&self, score: f64) -> bool {
        score > self.epsilon
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
}

/// Mean over scorable template tokens of the max similarity to any scorable
/// context token. The object placeholder is not scored; out-of-vocabulary
/// tokens on either side are skipped.
pub fn score_pair(table: &EmbeddingTable, context: &[String], filled: &FilledTemplate) -> f64 {
    let context_tokens: Vec<&str> = context
        .iter()
        .map(String::as_str)
        .filter(|t| table.contains(t))
        .collect();

    if context_tokens.is_empty() {
        return UNSCORABLE;
    }

    let mut total = 0.0;
    let mut counted = 0usize;
    for token in filled.content_tokens() {
        if !table.contains(token) {
            continue;
        }
        let best = context_tokens
            .iter()
            .filter_map(|c| table.pmi_estimate(token, c))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
        counted += 1;
    }
    if counted == 0 {
        UNSCORABLE
    } else {
        total / counted as f64
    }
}

/// Population mean and standard deviation of the finite scores.
pub fn fit_threshold(scores: &[RejectionScore], lambda: f64) -> Result<RejectionThreshold, RejectionError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RejectionError::InvalidLambda(lambda));
    }
    let finite: Vec<f64> = scores.iter().filter(|s| s.is_scorable()).map(|s| s.value).collect();
    if finite.is_empty() {
        return Err(RejectionError::EmptyScores);
    }
    let n = finite.len() as f64;
    // shifted by the first value so constant inputs give exactly zero spread
    let shift = finite[0];
    let offset = finite.iter().map(|v| v - shift).sum::<f64>() / n;
    let mean = shift + offset;
    let variance = finite.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / n;
    Ok(RejectionThreshold::new(mean, variance.sqrt(), lambda))
}

/// Accepts pairs scoring strictly above epsilon.
pub fn partition(scores: &[RejectionScore], threshold: &RejectionThreshold) -> Partition {
    let mut out = Partition::default();
    for s in scores {
        if s.is_scorable() && threshold.accepts(s.value) {
            out.accepted.push(s.pair_index);
        } else {
            out.rejected.push(s.pair_index);
        }
    }
    out
}
