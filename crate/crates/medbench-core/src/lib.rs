//! Offline benchmark pipeline for structured extraction from clinical notes.
//!
//! A locally hosted model is asked to transcribe a doctor's note into a fixed
//! JSON shape — diagnoses plus ICD-10-CM codes — and every reply is scored
//! against hand-checked gold labels: JSON validity, transcription fidelity,
//! code correctness against the full catalog, and diagnosis recall.
//!
//! The crate is organised as a pipeline:
//!
//! * [`catalog`] — ICD-10-CM code grammar, normalization, and catalog loading.
//! * [`corpus`] — benchmark notes with gold diagnoses and codes.
//! * [`schema`] — the three response schemas, validation, and fence recovery.
//! * [`prompt`] — zero-shot / few-shot / retrieval prompt construction.
//! * [`retrieval`] — line chunking, lexical and embedding scoring, context assembly.
//! * [`client`] — blocking HTTP client for an Ollama-compatible backend,
//!   with a loopback-only egress guard.
//! * [`eval`] — per-response scoring and per-cell aggregation.
//! * [`similarity`] — difflib-compatible sequence similarity.
//! * [`report`] — CSV / Markdown / plot-data writers and the run log.
//! * [`runner`] — preflight plus the sequential experiment grid.
//! * [`config`] — TOML experiment configuration.
//! * [`mock`] — an in-process backend for tests.
//!
//! Everything runs against `localhost`: no request leaves the machine unless
//! the config explicitly opts out of the guard.

pub mod catalog;
pub mod client;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod mock;
pub mod prompt;
pub mod report;
pub mod retrieval;
pub mod runner;
pub mod schema;
pub mod similarity;
