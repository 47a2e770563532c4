//! Bayesian active perception over a foveated visual field.
//!
//! The crate maintains a grid of per-cell Dirichlet beliefs over object
//! classes (a semantic map), fuses detector scores across gaze fixations
//! with a moment-matching rule, optionally calibrates those scores against
//! an eccentricity-dependent observation model, and selects the next gaze
//! shift with predictive and non-predictive policies. A synthetic-scene
//! benchmark harness runs visual-search and scene-exploration campaigns
//! with deterministic seeding and CSV reporting.
//!
//! Module map:
//!
//! - [`dirichlet`] — density, moments, sampling, divergence, MLE fitting.
//! - [`geometry`] — grid cells, bounding boxes, overlap resolution.
//! - [`map`] — the semantic map and the fusion update.
//! - [`calibration`] — the foveal observation model.
//! - [`policy`] — gaze-selection policies under inhibition of return.
//! - [`simworld`] — synthetic scenes, the detector emulator, log replay.
//! - [`harness`] — trials, metrics, and aggregation.
//! - [`campaign`] — multi-scene experiment campaigns with CSV output.

pub mod calibration;
pub mod campaign;
pub mod dirichlet;
pub mod error;
pub mod geometry;
pub mod map;
pub mod harness;
pub mod policy;
pub mod simworld;

pub use calibration::{CalibrationModel, EccentricityBins, TrainingRecord};
pub use campaign::{
    run_explore_campaign, run_search_campaign, CampaignConfig, CampaignReport, TimingMode,
};
pub use dirichlet::{fit_mle, DirichletParams, MleFit, ScoreVector};
pub use error::{Error, Result};
pub use geometry::{cells_overlapped, BoundingBox, Cell, GridGeometry};
pub use harness::{
    aggregate_with_sem, cumulative_performance, run_explore_trial, run_search_trial,
    success_rate, ExploreResult, SearchResult, TrialConfig, TrialContext,
};
pub use map::{cell_posterior, kaplan_update, Detection, ScoreMode, SemanticMap};
pub use policy::{Acquisition, ExploreMetric, PolicyKind, SaliencyGrid};
pub use simworld::{
    emulate_detections, generate_scene, ground_truth_cells, load_detection_log, DetectionLog,
    EmulatorConfig, SceneGenConfig, SceneSpec,
};
