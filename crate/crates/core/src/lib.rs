//! Battery degradation modeling: unified cell data, feature extraction,
//! label annotation, data transforms, regression models and a
//! config-driven train/evaluate pipeline.

// Field names carry unit suffixes (`_in_V`, `_in_Ah`) that match the file format.
#![allow(non_snake_case)]

pub mod battery_data;
pub mod error;
pub mod features;
pub mod ingestion;
pub mod labels;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod registry;
pub mod splitters;
pub mod stats;
pub mod transforms;

pub use battery_data::{read_cell, validate, write_cell, CellRecord, CycleRecord, ProtocolStep, Violation};
pub use error::{Error, Result};
