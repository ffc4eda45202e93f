//! Shared-representation multimodal classification under missing text.
//!
//! The crate provides dense layers with exact gradients ([`tensor`]), the
//! shared-representation and fused-representation classifiers ([`model`]),
//! AdamW with a warmup/decay schedule ([`optim`]), embedding datasets with
//! stratified availability masking ([`data`]), classification and text
//! metrics ([`metrics`]), and the experiment harness ([`harness`]).

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
