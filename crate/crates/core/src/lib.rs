//! Zero-resource cross-lingual named entity recognition.
//!
//! A source-language tagger is transferred to a target language in three
//! ways that the crate can combine:
//!
//! * **model transfer**: source and target embeddings are aligned with an
//!   orthogonal map, so a tagger trained on mapped source text reads target
//!   text directly;
//! * **data transfer**: the labeled source corpus is translated word by word
//!   into the target language and labels are copied across;
//! * **distillation**: teachers built from both transfers label unlabeled
//!   target text, and a student learns from their soft probabilities and
//!   voted hard labels.

pub mod align;
pub mod corpus;
pub mod embed;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod tagger;

pub use error::{Error, Result};
