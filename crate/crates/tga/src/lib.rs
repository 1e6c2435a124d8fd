//! Adversarial fine-tuning of a toy dual-encoder image classifier with
//! text-guided attention, plus the attacks and metrics used to evaluate it.
//!
//! The crate is organized around the pipeline:
//! synthetic data ([`evalkit`]) → clean contrastive pre-training
//! ([`encoders`]) → adversarial fine-tuning with attention-alignment losses
//! ([`objectives`]) → robustness and attention-quality evaluation
//! ([`evalkit`], [`attacks`]), all built on a small reverse-mode autodiff
//! engine ([`tensor`]) and persisted through versioned binary formats
//! ([`io`]).

pub mod attacks;
pub mod attention;
pub mod cli;
pub mod diag;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod objectives;
pub mod tensor;

pub use error::{Error, Result};
