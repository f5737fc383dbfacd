//! Distributed-memory Helmholtz fast multipole (MLFMA) evaluation engine.
//!
//! Ranks are simulated in-process by [`spmd`]; all inter-rank data moves
//! through its point-to-point messaging so that the cost ledger sees every
//! message and byte.

pub mod complexity;
pub mod error;
pub mod kernel;
pub mod operators;
pub mod report;
pub mod sphere;
pub mod spmd;
pub mod traversal;
pub mod tree;

pub use error::{Error, Result};
