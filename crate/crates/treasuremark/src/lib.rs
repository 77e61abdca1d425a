//! Tooling for training-time markers: a closed marker taxonomy, the
//! `<MARKER_LIST>` template format, deterministic and LLM-backed
//! annotation, reproducible marker dropout, training-dataset assembly,
//! inference-time marker injection/extraction and controllability metrics.

pub mod annotate;
pub mod config;
pub mod dataset;
pub mod dropout;
pub mod evalsuite;
pub mod inference;
pub mod llmclient;
pub mod markup;
pub mod taxonomy;

pub use taxonomy::{Category, Marker, MarkerList, MarkerValue};
