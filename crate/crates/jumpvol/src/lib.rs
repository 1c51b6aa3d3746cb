//! File formats, ingestion and the command-line pipeline around
//! [`jumpvol_core`].

pub mod commands;
pub mod config;
pub mod formats;
pub mod ingest;
