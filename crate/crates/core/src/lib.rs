//! Research toolkit for studying trigger-based backdoor attacks on
//! self-supervised image encoders, end to end: contrastive pre-training,
//! steganographic trigger generation, backdoor injection by encoder
//! fine-tuning, downstream evaluation, and input-screening defenses.

pub mod codec;
pub mod data;
pub mod error;
pub mod image;
pub mod nn;
pub mod ssl;
pub mod rng;

pub use error::{Error, Result};
