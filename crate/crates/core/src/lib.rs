//! Programmable wireless environment simulation: geometry, tile EM model,
//! the PWE graph, ray propagation, objectives and the KpConfig configurator.

pub mod configurator;
pub mod em_model;
pub mod geometry;
pub mod objectives;
pub mod propagation;
pub mod pwe_graph;
pub mod scenario_io;
