#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distribution;
pub mod engine;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod rng;

pub use error::{MacError, Result};
pub use lattice::{make_mask, Edge, LatticeSpec, Mask};
pub use protocol::{Decompose, Protocol};
