pub mod data;
pub mod eval;
pub mod geometry;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod partition;
pub mod reconstruct;
pub mod sampling;
pub mod train;
