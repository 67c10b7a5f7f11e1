//! Hybrid projection solvers for large linear inverse problems.
//!
//! The crate pairs Golub-Kahan bidiagonalization with subspace recycling and
//! basis compression so that Tikhonov-regularized solutions can be computed
//! under a hard limit on the number of stored length-`N` vectors. The
//! regularization parameter is chosen automatically on the small projected
//! problem (GCV, weighted GCV, UPRE, discrepancy principle, or an oracle
//! "optimal" rule when the true solution is known).
//!
//! Everything here is `no_std` + `alloc`. File formats and the command line
//! live in the `hyrec` companion crate.
//!
//! Module map:
//!
//! * [`linops`]: matrix-free operators, stacking, materialization.
//! * [`problems`]: blur and parallel-beam tomography operators, phantoms, noise.
//! * [`gkb`]: standard bidiagonalization and LSQR iterates.
//! * [`recycle`]: the recycling bidiagonalization and its projected problem.
//! * [`projreg`]: regularized projected solves and parameter choice.
//! * [`compress`]: TSVD, solution-oriented, sparsity-enforcing and RBD compression.
//! * [`driver`]: HyBR, HyBR-recycle, multi-dataset workflows, storage costs.
//! * [`analysis`]: numerical checks of the structural identities and bounds.

#![no_std]
#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod compress;
pub mod driver;
mod error;
pub mod gkb;
pub mod linalg;
pub mod linops;
pub mod problems;
pub mod projreg;
pub mod recycle;
mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use linops::LinearOp;
pub use rng::NormalStream;
