//! Shared fixtures for the criterion benches.

use vpcalib::synthetic::{generate_scene, Scene, SceneSpec};

/// Noise-free scene with `n_vehicles` vehicles and default camera.
pub fn scene(n_vehicles: usize, noise_sigma_px: f64) -> Scene {
    let spec = SceneSpec { seed: 7, n_vehicles, noise_sigma_px, ..SceneSpec::default() };
    generate_scene(&spec, false).expect("default camera sees the road")
}
