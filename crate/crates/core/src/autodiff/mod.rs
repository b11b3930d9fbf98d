//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a Wengert tape: every operation appends a node whose
//! parents already exist, so node index order is a topological order and
//! [`Graph::backward`] simply walks the tape in reverse.

pub mod conv;
pub mod fft;
mod graph;
mod params;

pub use graph::{softplus, softplus_inverse, Gradients, Graph, Var};
pub use params::{BoundParams, ParamSet};
