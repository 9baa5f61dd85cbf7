//! Compiles every code block in the book as a doctest, so `cargo test`
//! fails whenever a chapter drifts out of sync with the library. One module
//! per chapter keeps failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/rate-functions.md")]
pub mod rate_functions {}

#[doc = include_str!("../../../book/src/gradient-structures.md")]
pub mod gradient_structures {}

#[doc = include_str!("../../../book/src/lattice.md")]
pub mod lattice {}

#[doc = include_str!("../../../book/src/reaction-diffusion.md")]
pub mod reaction_diffusion {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
