//! Combinatorial and stochastic machinery of the two-parameter
//! Poisson-Dirichlet diffusion.
//!
//! The crate is organized around the objects the diffusion's dual-process
//! picture is built from:
//!
//! - [`partitions`] — exact integer-partition combinatorics on the Kingman
//!   branching diagram (enumeration, `dim`, `χ`, path weights, the down
//!   chain, hypergeometric subsampling), all in big-integer / big-rational
//!   arithmetic.
//! - [`sampling`] — the Ewens-Pitman partition structure `M_n`, means and
//!   pointwise values of the (augmented) monomial symmetric functions on the
//!   closed simplex, the consistency condition, and the up / up-down kernels.
//! - [`dual_process`] — the block-counting death process (ill-conditioned
//!   alternating series with a precision ladder), partition-valued dual
//!   transition probabilities, path simulation, and the generator algebra on
//!   both sides of the duality.
//! - [`urns`] — samplers: stick-breaking, the generalized Pólya urn, the
//!   posterior frequency law given an observed configuration, Radon-Nikodym
//!   reweighting, and the split-urn coupling.
//! - [`transition`] — the diffusion's fixed-time transition law: kernel and
//!   density evaluation in spectral and mixture forms, the exact mixture
//!   sampler, and the Monte-Carlo-vs-exact verification harness.
//!
//! Distribution-level formulas are generic over [`scalar::Scalar`], so every
//! floating-point result has an exact rational twin available for tests.

pub mod dual_process;
pub mod error;
pub mod partitions;
pub mod sampling;
pub mod scalar;
pub mod transition;
pub mod urns;

pub use error::{Error, Result};
pub use partitions::Partition;
pub use sampling::{Frequencies, Params};
