pub mod featmap;
pub mod geometry;
pub mod heatmap;
pub mod query;
pub mod blob;
pub mod providers;
pub mod audio;
pub mod posedb;
pub mod visloc;
pub mod plan;
pub mod instruct;
pub mod simharness;
