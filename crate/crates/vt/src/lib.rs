// SPDX-License-Identifier: Apache-2.0

//! The `vt` command line and HTTP service.
//!
//! Both surfaces are thin adapters over [`project::Project`], which owns the
//! lock, HEAD and every persisted file. A mutation reached through either one
//! runs the same `Project` method, so a scripted session replayed through
//! both produces the same `project.vtj`.

pub mod cli;
pub mod error;
pub mod project;
pub mod server;

pub use error::{AppError, Kind};
pub use project::{Options, Project};
