//! The chapters of `book/` as doc comments, so `cargo test` runs every
//! snippet in the guide against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/radial.md")]
pub mod radial {}
#[doc = include_str!("../../../book/src/flux-plane.md")]
pub mod flux_plane {}
#[doc = include_str!("../../../book/src/liouville.md")]
pub mod liouville {}
#[doc = include_str!("../../../book/src/approximation.md")]
pub mod approximation {}
#[doc = include_str!("../../../book/src/linearized.md")]
pub mod linearized {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
