//! Propensity-based formation-containment control of heterogeneous
//! leader/follower networks, learned from data.

pub mod error;
pub mod learning;
pub mod matops;
pub mod model_control;
pub mod observers;
pub mod propagation;
pub mod simulation;
pub mod topology;

pub use error::{PfccError, Result};
pub use matops::SymmetricMatrix;
pub use topology::{DirectedTopology, Edge, Node};
