//! L-lag couplings of Markov chains: unbiased estimators with control
//! variates, and total-variation bounds from meeting times.
//!
//! The crate is organized bottom-up:
//!
//! * [`coupling`] runs a lagged coupled pair until it meets and records the
//!   meeting time `tau` and the derived count `J_{k,L}`;
//! * [`kernels`] provides coupled kernels built on maximal couplings;
//! * [`estimators`] turns a trace into unbiased estimates of `E_pi[h]`;
//! * [`bounds`] computes the `E[J]` bound and the sharper median-based bound,
//!   exactly or from samples;
//! * [`oracle`] gives exact marginals, TV distances and meeting-time laws for
//!   small discrete chains;
//! * [`runner`] replicates all of the above in parallel with deterministic
//!   seeding, and [`report`] writes the results.
//!
//! ```
//! use lagcv::bounds::{geometric_new_bound, geometric_old_bound, GeometricSpec};
//!
//! let spec = GeometricSpec::new(0.2, 5, 2).unwrap();
//! assert!(geometric_new_bound(&spec) <= geometric_old_bound(&spec));
//! ```

pub mod bounds;
pub mod coupling;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod trace_io;

pub use error::{Error, Result};

// The README and guide snippets run as doc-tests, one module per file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/couplings.md")]
    mod couplings {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
