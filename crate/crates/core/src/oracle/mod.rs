//! Cleartext references: exhaustive protocol tables and integer-only model inference.

pub mod brute;
pub mod reference;
pub mod stage;

pub use reference::{reference_infer, Inference};
