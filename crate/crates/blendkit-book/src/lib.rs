//! Runs every code example in the guide (`book/`) as a doc-test, so the
//! published prose and the library cannot drift apart. Each module wraps
//! one chapter; the modules are empty because their documentation is the
//! chapter itself, included verbatim.
//!
//! `cargo test -p blendkit-book --doc` executes all guide snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/draws.md")]
pub mod draws {}

#[doc = include_str!("../../../book/src/elpd-loo.md")]
pub mod elpd_loo {}

#[doc = include_str!("../../../book/src/weights.md")]
pub mod weights {}

#[doc = include_str!("../../../book/src/bayesian-stacking.md")]
pub mod bayesian_stacking {}

#[doc = include_str!("../../../book/src/blending.md")]
pub mod blending {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
