//! Discrete-time construction and verification of increasing families of
//! martingales that encode the conditional law of a random time.
//!
//! The crate is `no_std` (with `alloc`) and deterministic: every quantity is a
//! pure function of its inputs, so callers can parallelize freely.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod calculus;
pub mod coefficient;
pub mod error;
pub mod grid;
pub mod law;
pub mod measure;
pub mod oracle;
pub mod pair;
pub mod regularity;
pub mod path;
pub mod smooth;
pub mod solver;
pub mod tree;
pub mod zmodel;

pub use error::{Error, Result};
