//! One-shot shortest-path prediction with an edge-aware graph attention
//! network, plus the exact-oracle data pipeline, training loop and
//! evaluation harness around it.

pub mod autodiff;
pub mod checkpoint;
pub mod datagen;
pub mod evaluator;
pub mod graph;
pub mod io;
pub mod model;
pub mod oracle;
pub mod trainer;
