// SPDX-License-Identifier: Apache-2.0

// mdbook cannot test listings that depend on a workspace crate, so each
// chapter is included here as a module doc and `cargo test --doc` runs them.
// One module per chapter keeps failures traceable to their file.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/version-tree.md")]
pub mod version_tree {}
#[doc = include_str!("../../book/src/diff.md")]
pub mod diff {}
#[doc = include_str!("../../book/src/packages.md")]
pub mod packages {}
#[doc = include_str!("../../book/src/execution.md")]
pub mod execution {}
#[doc = include_str!("../../book/src/data-store.md")]
pub mod data_store {}
#[doc = include_str!("../../book/src/upgrades.md")]
pub mod upgrades {}
#[doc = include_str!("../../book/src/mashups.md")]
pub mod mashups {}
#[doc = include_str!("../../book/src/projects.md")]
pub mod projects {}
