//! Shared fixtures for the criterion benchmarks.

use splatloc_core::scene::{synthesize_scene, SceneLayout, SceneRecipe};
use splatloc_core::{CameraPose, Intrinsics};

pub use splatloc_core as core;

/// Box-room scene sized for benchmarking, with its ring trajectory and a
/// matching camera.
pub fn bench_scene(
    primitive_count: usize,
    width: usize,
    height: usize,
) -> (splatloc_core::GaussianScene, Vec<CameraPose>, Intrinsics) {
    let recipe = SceneRecipe {
        layout: SceneLayout::TexturedBoxRoom,
        primitive_count,
        texture_frequency: 6.0,
        seed: 3,
    };
    let (scene, trajectory) = synthesize_scene(&recipe).expect("valid recipe");
    let k = Intrinsics::from_fov(width, height, 70.0);
    (scene, trajectory, k)
}
