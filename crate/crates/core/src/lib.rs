//! Exact character sums over matrix groups over prime fields, and exhaustive
//! checks of equidistribution for the embeddings `A -> (A, A^{-1})`,
//! `A -> A` on GL_n and SL_n, and `A -> (A, C A^{-1})`.

pub mod charsum;
pub mod cli;
pub mod discrepancy;
pub mod embed;
pub mod error;
pub mod experiments;
pub mod fp_linalg;
pub mod group_enum;
pub mod region;

pub use error::{Error, Result};
