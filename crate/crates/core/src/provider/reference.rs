use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compare_candidates, validate_query, ContextualEmbeddingSequence, MaskedDistribution,
    MaskedLanguageModel, PassCounter, ProviderError, ProviderStats,
};
use crate::model::ClozeQuery;

pub const REFERENCE_MASK_TOKEN: &str = "[MASK]";

/// On-disk description of a reference backend.
///
/// ```json
/// {"dimension": 16, "seed": 7, "vocab": {"a": 2, "b": 1, "c": 1},
///  "vectors": {"a": [1, 0, 0, ...]}}
/// ```
///
/// `vocab` maps tokens to non-negative unigram weights; `vectors` optionally
/// pins the embedding of a token at every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
    pub vocab: BTreeMap<String, f64>,
    #[serde(default)]
    pub vectors: BTreeMap<String, Vec<f64>>,
}

/// Deterministic masked-LM stand-in.
///
/// Mask prediction returns the normalized unigram weights regardless of the
/// query. The contextual vector of a token is a pure function of the token
/// and the parity of its position: a seeded pseudo-random unit vector, unless
/// the fixture pins one.
#[derive(Debug)]
pub struct ReferenceBackend {
    dimension: usize,
    seed: u64,
    distribution: Vec<(String, f64)>,
    pinned: HashMap<String, Vec<f64>>,
    counter: PassCounter,
}

impl ReferenceBackend {
    pub fn new(fixture: ReferenceFixture) -> Result<Self, ProviderError> {
        if fixture.dimension == 0 {
            return Err(ProviderError::InvalidFixture("dimension must be positive".into()));
        }
        let mut total = 0.0;
        for (token, &w) in &fixture.vocab {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ProviderError::InvalidFixture(format!("weight {w} for {token:?}")));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(ProviderError::InvalidFixture("vocabulary has no mass".into()));
        }
        let mut distribution: Vec<(String, f64)> = fixture
            .vocab
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(t, w)| (t, w / total))
            .collect();
        distribution.sort_by(compare_candidates);

        let mut pinned = HashMap::new();
        for (token, v) in fixture.vectors {
            if v.len() != fixture.dimension {
                return Err(ProviderError::InvalidFixture(format!(
                    "pinned vector for {token:?} has length {}",
                    v.len()
                )));
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(ProviderError::InvalidFixture(format!(
                    "pinned vector for {token:?} is degenerate"
                )));
            }
            pinned.insert(token, v.into_iter().map(|x| x / n).collect());
        }

        Ok(Self {
            dimension: fixture.dimension,
            seed: fixture.seed,
            distribution,
            pinned,
            counter: PassCounter::default(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidFixture(format!("{}: {e}", path.display())))?;
        let fixture: ReferenceFixture = serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidFixture(format!("{}: {e}", path.display())))?;
        Self::new(fixture)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Tokens with non-zero mass, most probable first.
    pub fn distribution(&self) -> &[(String, f64)] {
        &self.distribution
    }

    /// Vector of `token` at a position with the given parity, without
    /// counting a forward pass.
    pub fn token_vector(&self, token: &str, parity: usize) -> Vec<f64> {
        if let Some(v) = self.pinned.get(token) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, token, parity % 2));
        let raw: Vec<f64> = (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            let mut unit = vec![0.0; self.dimension];
            unit[0] = 1.0;
            return unit;
        }
        raw.into_iter().map(|x| x / n).collect()
    }
}

/// FNV-1a over the token bytes, salted with seed and parity.
fn mix(seed: u64, token: &str, parity: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET ^ seed.rotate_left(17);
    for b in token.bytes().chain(std::iter::once(0xff)).chain(std::iter::once(parity as u8)) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

impl MaskedLanguageModel for ReferenceBackend {
    fn mask_token(&self) -> &str {
        REFERENCE_MASK_TOKEN
    }

    fn topk_mask(&self, query: &ClozeQuery, k: usize) -> Result<MaskedDistribution, ProviderError> {
        validate_query(query, REFERENCE_MASK_TOKEN, k)?;
        self.counter.record();
        MaskedDistribution::from_candidates(self.distribution.clone(), k)
    }

    fn embed_sequence(&self, tokens: &[String]) -> Result<ContextualEmbeddingSequence, ProviderError> {
        if tokens.is_empty() {
            return Err(ProviderError::EmptySequence);
        }
        self.counter.record();
        let vectors = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| self.token_vector(t, i % 2))
            .collect();
        ContextualEmbeddingSequence::new(self.dimension, vectors)
    }

    fn stats(&self) -> ProviderStats {
        self.counter.stats()
    }

    fn reset_stats(&self) {
        self.counter.reset()
    }
}
