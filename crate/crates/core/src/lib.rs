pub mod audit;
pub mod flow;
pub mod geometry;
pub mod mesh;
pub mod spectrum;
pub mod tracker;
