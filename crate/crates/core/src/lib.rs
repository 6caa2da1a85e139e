//! Error-correcting factorization of design matrices into ECOC coding
//! matrices, plus the analysis, decoding and evaluation around it.

pub mod classify;
pub mod data;
pub mod design;
pub mod ecf;
pub mod ecoc;
pub mod error;
pub mod linalg;
pub mod solver;

pub use error::{Error, Result};
