//! Procedural false-belief gridworld scenarios and the attention-head
//! probing/steering toolkit that analyzes models on them.

pub mod gridworld;
pub mod perception;
pub mod scenario;
pub mod renderer;
pub mod annotator;
pub mod activation;
pub mod probe;
pub mod evalharness;
pub mod pipeline;
pub mod intervention;
