//! Toolkit for measuring how much a small masked language model memorizes
//! named entities from its fine-tuning data.
//!
//! The pipeline: ingest a corpus and plant canaries ([`corpus`]), train a
//! byte-level tokenizer ([`tokenizer`]), pre-train and fine-tune a tiny
//! encoder ([`model`], [`training`], [`dp`]), sample text by sequential mask
//! prediction ([`generator`]) and count exact entity matches ([`audit`]).
//! [`pipeline`] chains the stages behind a config file and a run ledger.

pub mod audit;
pub mod corpus;
pub mod dp;
pub mod error;
pub mod generator;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod text;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
