//! Planning and simulated execution for distributed dense Tucker decomposition.
//!
//! * [`model`]: problem metadata, mode sets, TTM-trees and exact cardinalities.
//! * [`tree`]: heuristic TTM-trees, load evaluation and the optimal-tree DP.
//! * [`grid`]: processor grids, communication volume, optimal static and dynamic gridding.
//! * [`engine`]: dense tensors, TTM, Gram + EVD factor updates and HOOI sweeps.
//! * [`sim`]: block-distributed replay of a plan that measures moved elements.
//! * [`bench`]: benchmark generation and strategy comparison.

pub mod bench;
pub mod engine;
pub mod error;
pub mod grid;
pub mod model;
pub mod sim;
pub mod tree;

pub use error::{Error, Result};
pub use model::{node_cardinalities, validate_spec, validate_tree, Label, ModeSet, NodeId, ProblemSpec, TtmTree};
