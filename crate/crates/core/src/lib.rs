pub mod error;
pub mod estimators;
pub mod lattice;
pub mod models;
pub mod numerics;
pub mod proposals;
pub mod wce;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice-rules.md")]
    mod lattice_rules {}
    #[doc = include_str!("../../../book/src/kernels-and-cbc.md")]
    mod kernels_and_cbc {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/proposals.md")]
    mod proposals {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
