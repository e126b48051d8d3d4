//! Multi-dimensional summary refinement harness.
//!
//! The crate is organised around the life of a summary: it is loaded from a
//! corpus ([`corpus`]), split into sentences ([`segment`]), evaluated into
//! binary labels and scores ([`evaluator`]), turned into textual feedback
//! ([`feedback`]), refined by one of several pipelines ([`pipeline`]) and
//! finally aggregated into tables ([`stats`]). [`databuild`] assembles
//! reasoning datasets from the same pieces and [`experiment`] sweeps
//! pipelines, feedback tiers and order policies over a corpus.
//!
//! Every model call goes through the [`backend::ChatBackend`] trait, which has
//! HTTP, record/replay, scripted and simulated implementations.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod databuild;
pub mod evaluator;
pub mod experiment;
pub mod feedback;
pub mod json_repair;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod segment;
pub mod stats;
pub mod template;

pub use model::{
    Dimension, DimensionScores, Document, DocumentFormat, Fraction, KeyFactSet, SummaryRecord,
};
