//! Benchmark fixtures shared by the criterion targets: a partially
//! explored 10x10 map and a default calibration model.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use gazemap_core::calibration::CalibrationModel;
use gazemap_core::geometry::{Cell, GridGeometry};
use gazemap_core::map::{ScoreMode, SemanticMap};
use gazemap_core::simworld::{
    emulate_detections, generate_scene, generate_training_records, EmulatorConfig, SceneGenConfig,
};

pub const NUM_CLASSES: usize = 5;
pub const LEVELS: usize = 5;

/// A 10x10 map that has absorbed a few fixations of emulated detections,
/// plus the scene's target class and a trained model.
pub fn explored_fixture() -> (SemanticMap, CalibrationModel, usize) {
    let geometry = GridGeometry::new(640.0, 480.0, 10, 10).expect("valid grid");
    let emulator = EmulatorConfig::default_with(NUM_CLASSES, LEVELS).expect("valid emulator");
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let scene = generate_scene(&SceneGenConfig::default(), &mut rng).expect("valid scene");

    let records = generate_training_records(&emulator, 30_000, &mut rng);
    let model = CalibrationModel::train(&records, NUM_CLASSES, emulator.bins.clone())
        .expect("trainable model");

    let mut map = SemanticMap::init_uniform(geometry, NUM_CLASSES).expect("valid map");
    for cell in [Cell::new(2, 3), Cell::new(7, 1), Cell::new(5, 8)] {
        let detections = emulate_detections(&scene, cell, &geometry, &emulator, &mut rng);
        map.apply_detections(&detections, cell, ScoreMode::Raw, None)
            .expect("update");
    }
    (map, model, scene.target_class)
}
