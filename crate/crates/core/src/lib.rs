//! Intraday realized volatility measures, significant-jump detection, and
//! the asymmetric jump multiplicative error model (AJM) with its
//! announcement classification.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, ingestion
//! from CSV and the command-line driver live in the `jumpvol` crate.

#![no_std]
// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod ajm;
pub mod classify;
pub mod diurnal;
pub mod fit;
pub mod grid;
pub mod linalg;
pub mod measures;
pub mod optim;
pub mod panel;
pub mod special;
pub mod synth;
