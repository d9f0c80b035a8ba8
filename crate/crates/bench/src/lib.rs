//! Shared fixtures for the criterion benchmarks under `benches/`.

use tdbench_core::scenegen::{generate_scene, SceneConfig};
use tdbench_core::LabeledFrame;

/// One frame of the default scene, seeded like the acceptance corpus.
pub fn frame(seed: u64) -> LabeledFrame {
    generate_scene(&SceneConfig::default().with_seed(seed))
        .expect("default scene is valid")
        .frame
}
