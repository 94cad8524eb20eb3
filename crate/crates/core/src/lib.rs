pub mod cli;
pub mod data;
pub mod dists;
pub mod eval;
pub mod features;
pub mod graph;
pub mod models;
pub mod special;
