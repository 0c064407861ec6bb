//! The guide's chapters, included as doc comments so their code blocks run
//! under `cargo test` (mdbook does not execute examples itself). One module
//! per chapter keeps doctest failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/methods.md")]
pub mod methods {}

#[doc = include_str!("../../../book/src/domains.md")]
pub mod domains {}

#[doc = include_str!("../../../book/src/policy-space.md")]
pub mod policy_space {}

#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
