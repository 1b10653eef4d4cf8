//! Emotion-aligned speech-to-music retrieval.
//!
//! Frozen speech and music features are projected by small MLP heads into a
//! joint space where cosine similarity ranks music for a speech query. Labels
//! from different emotion taxonomies are bridged through valence-arousal
//! coordinates.

// `!(x > 0.0)` deliberately rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod codec;
pub mod config;
pub mod data_io;
pub mod emotion_space;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod numerics;
pub mod objectives;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
