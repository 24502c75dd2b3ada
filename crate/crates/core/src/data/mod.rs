//! Synthetic scenes, image files and checkpoints.

pub mod checkpoint;
pub mod netpbm;
pub mod scene;

pub use netpbm::DepthRange;
pub use scene::{degrade, layout, render, scene_pool, synth_scene, DepthSample, Footprint, Primitive, SceneSpec, TextureRule};
