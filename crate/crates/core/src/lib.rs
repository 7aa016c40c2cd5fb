//! Graphon mean field games on `[0,1]`-indexed populations.
//!
//! The crate solves the limit game by per-vertex HJB best responses and
//! particle McKean-Vlasov propagation under a Picard iteration, handles the
//! linear-quadratic case in closed form, and checks the limit strategies as
//! an epsilon-Nash equilibrium on finite networks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cli;
pub mod control;
pub mod error;
pub mod gmfg;
pub mod graphon;
pub mod grid;
pub mod io;
pub mod lq;
pub mod measure;
pub mod model;
pub mod popsim;
pub mod rng;

pub use error::{Error, Result};
