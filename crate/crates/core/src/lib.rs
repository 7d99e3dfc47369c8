//! Episodic task samplers, k-DPP sampling, Gram-volume task diversity and a
//! small meta-learning harness.

pub mod cli;
pub mod diversity;
pub mod dpp;
pub mod episodes;
pub mod error;
pub mod geometry;
pub mod learners;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/dpp.md")]
    mod dpp {}
    #[doc = include_str!("../../../book/src/diversity.md")]
    mod diversity {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
