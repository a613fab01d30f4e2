//! Learning with instance-dependent label noise through part-dependent
//! transition matrices.
//!
//! The crate is organised along the pipeline it implements:
//!
//! - [`dataio`]: datasets, CSV/IDX loaders, bundles on disk, train/validation splits.
//! - [`noisegen`]: synthetic instance-dependent label noise with recorded ground truth.
//! - [`simplexopt`]: projection onto the probability simplex and simplex-constrained
//!   least squares.
//! - [`parts`]: parts matrix `W` and simplex coefficients `h(x)` by alternating
//!   minimisation.
//! - [`anchors`]: anchor selection and anchor-row estimation from noisy posteriors.
//! - [`transition`]: part-dependent matrices, per-instance assembly, slack revision,
//!   approximation error.
//! - [`classifier`]: a small MLP with hand-written backprop and the corrected risks.
//! - [`harness`]: the end-to-end pipeline, sweeps, t-tests and reports.
//! - [`cli`]: the `ptd` command-line tool.

pub mod anchors;
pub mod classifier;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod noisegen;
pub mod parts;
pub mod rng;
pub mod simplexopt;
pub mod transition;

pub use error::{Error, Result};
