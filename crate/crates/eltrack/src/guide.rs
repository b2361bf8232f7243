//! The narrative guide, mirrored from `book/` so that every Rust snippet in
//! the book compiles and runs under `cargo test --doc`.
//!
//! Render the standalone book with `mdbook build book` from the workspace
//! root; the chapters below are the same files.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/plant.md")]
pub mod plant_models {}

#[doc = include_str!("../../../book/src/feasibility.md")]
pub mod feasibility_algebra {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller_design {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation_engine {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod command_line {}
