//! Unsupervised relation extraction from a masked language model.
//!
//! Given a cloze template per relation and entity/context pairs, the engine
//! rejects contexts unlikely to express the relation, picks the context
//! token most compatible with the model's predictions for the masked
//! object, and optionally widens it to a covering entity mention.

pub mod anchor;
pub mod embeddings;
pub mod evaluation;
pub mod expansion;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod provider;
pub mod rejection;
pub mod templating;
