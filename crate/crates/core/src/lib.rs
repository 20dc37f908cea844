//! Vowel-level speech depression detection.
//!
//! Utterances are cut into 250 ms vowel-labelled segments with a
//! vowel-dependent hop, a CNN with spatial pyramid pooling learns to
//! classify them, and its first fully connected layer becomes a fixed-size
//! utterance embedding. Windows of embeddings, augmented by perturbing
//! low-saliency utterances, train a 1-D depression CNN whose window
//! probabilities are soft-voted per speaker.

pub mod audio;
pub mod augment;
pub mod config;
pub mod corpus;
pub mod depression;
pub mod embed;
pub mod error;
pub mod eval;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod segment;
pub mod tensor;
pub mod vowel;

pub use error::{CheckpointError, Error, Result};
