//! Corpus curation and curriculum planning for language-model pretraining.
//!
//! The pipeline stages (`cleaning`, `filtering`, `dedup`, `mixture`,
//! `packing`) operate on [`corpus::Document`] records read from JSON Lines
//! shards. `calc` holds batch/step/schedule/throughput arithmetic and
//! `arena` analyzes pairwise preference battles.

pub mod arena;
pub mod calc;
pub mod cleaning;
pub mod cli;
pub mod corpus;
pub mod dedup;
pub mod filtering;
pub mod fixtures;
pub mod mixture;
pub mod packing;
pub mod pipeline;
pub mod seed;
