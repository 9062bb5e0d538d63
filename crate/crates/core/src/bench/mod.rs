//! Desk-scale experiments: data, agents and the run/report pipeline.

pub mod dataset;
pub mod experiment;
pub mod experts;
pub mod synthetic;
