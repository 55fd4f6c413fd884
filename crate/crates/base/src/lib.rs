//! Locational market clearing for token-flow service networks.
//!
//! A [`Scenario`] describes compute hubs, directed links and workload
//! classes. The [`clearing`] module turns it into a linear program, solves it
//! with the dense simplex in [`lp`], and maps the multipliers back into
//! locational prices, scarcity rents and congestion rents. [`pricing`] and
//! [`settlement`] analyse a cleared market; [`experiments`] bundles the
//! standard studies; [`io`] reads and writes scenario files and results.

pub mod clearing;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lp;
pub mod model;
pub mod pipeline;
pub mod pricing;
pub mod settlement;

pub use clearing::{ClearingResult, Formulation};
pub use error::{AnalysisError, ModelError};
pub use lp::{KktReport, LinearProgram, LpBuilder, LpSolution, LpStatus, Tolerances};
pub use model::{Arc, ArcSpec, LatencyBound, Node, Scenario, WorkloadClass};
