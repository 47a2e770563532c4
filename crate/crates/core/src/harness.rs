//! Trial runner and metrics: visual-search trials with Oracle termination,
//! exploration trials with success-rate tracking, aggregation with the
//! standard error of the mean, and per-iteration policy timing.
//!
//! Iteration accounting: iteration 1 is the initial fixation; a trial of
//! `I` iterations performs `I - 1` saccades. Policy wall times are
//! recorded per selection step only, excluding emulation and map updates.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationModel;
use crate::error::{Error, Result};
use crate::geometry::{Cell, GridGeometry};
use crate::map::{cell_posterior, ScoreMode, SemanticMap};
use crate::policy::{
    select_explore, select_random, select_saliency, select_search_nonpredictive,
    select_search_predictive, PolicyKind, SaliencyGrid,
};
use crate::simworld::{emulate_detections, ground_truth_cells, DetectionLog, EmulatorConfig, SceneSpec};

/// How the first fixation of a trial is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialFixation {
    /// Uniform over cells not overlapped by any target instance.
    RandomNonTarget,
    Fixed(Cell),
}

/// Per-trial configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialConfig {
    pub policy: PolicyKind,
    pub mode: ScoreMode,
    pub max_iterations: usize,
    pub repetitions: usize,
    pub initial_fixation: InitialFixation,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(policy: PolicyKind, mode: ScoreMode, seed: u64) -> Self {
        Self {
            policy,
            mode,
            max_iterations: 30,
            repetitions: 10,
            initial_fixation: InitialFixation::RandomNonTarget,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::input("max_iterations must be at least 1"));
        }
        if self.repetitions < 1 {
            return Err(Error::input("repetitions must be at least 1"));
        }
        Ok(())
    }
}

/// Shared read-only inputs of a trial.
#[derive(Clone, Copy)]
pub struct TrialContext<'a> {
    pub geometry: GridGeometry,
    pub num_classes: usize,
    pub emulator: Option<&'a EmulatorConfig>,
    pub log: Option<&'a DetectionLog>,
    pub model: Option<&'a CalibrationModel>,
    pub saliency: Option<&'a SaliencyGrid>,
}

impl<'a> TrialContext<'a> {
    fn validate(&self, scene: &SceneSpec, config: &TrialConfig) -> Result<()> {
        config.validate()?;
        if scene.max_class() > self.num_classes {
            return Err(Error::input(format!(
                "scene uses class {} but the trial models {} classes",
                scene.max_class(),
                self.num_classes
            )));
        }
        match (self.emulator, self.log) {
            (None, None) => {
                return Err(Error::input("a trial needs an emulator or a detection log"))
            }
            (Some(_), Some(_)) => {
                return Err(Error::input("provide either an emulator or a log, not both"))
            }
            _ => {}
        }
        if let Some(em) = self.emulator {
            if em.num_classes != self.num_classes {
                return Err(Error::input("emulator K does not match the trial"));
            }
        }
        if let Some(model) = self.model {
            if model.num_classes() != self.num_classes {
                return Err(Error::input("calibration model K does not match the trial"));
            }
        }
        let needs_model = config.mode == ScoreMode::Calibrated
            || matches!(
                config.policy,
                PolicyKind::SearchPredictive { .. } | PolicyKind::ExplorePredictive { .. }
            );
        if needs_model && self.model.is_none() {
            return Err(Error::input(
                "the chosen policy or score mode requires a calibration model",
            ));
        }
        if matches!(config.policy, PolicyKind::Saliency) && self.saliency.is_none() {
            return Err(Error::input("the saliency policy requires a saliency grid"));
        }
        Ok(())
    }

    fn detections_for<R: Rng + ?Sized>(
        &self,
        scene: &SceneSpec,
        fixation: Cell,
        rng: &mut R,
    ) -> Vec<crate::map::Detection> {
        if let Some(emulator) = self.emulator {
            emulate_detections(scene, fixation, &self.geometry, emulator, rng)
        } else {
            self.log
                .expect("validated")
                .detections_at(fixation)
                .to_vec()
        }
    }
}

/// Outcome of one search trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub found: bool,
    /// 1-based iteration of the terminating fixation.
    pub found_at: Option<usize>,
    pub path: Vec<Cell>,
    /// Wall seconds of each policy-selection step.
    pub policy_times: Vec<f64>,
}

impl SearchResult {
    /// Mean wall seconds per policy-selection step; 0 when the trial ended
    /// before any selection.
    pub fn time_per_iteration(&self) -> f64 {
        mean_or_zero(&self.policy_times)
    }
}

/// Outcome of one exploration trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreResult {
    /// `success_rates[s]` is the success rate after `s` saccades, i.e.
    /// after `s + 1` fixations have updated the map.
    pub success_rates: Vec<f64>,
    pub path: Vec<Cell>,
    pub policy_times: Vec<f64>,
}

impl ExploreResult {
    pub fn time_per_iteration(&self) -> f64 {
        mean_or_zero(&self.policy_times)
    }
}

fn mean_or_zero(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Uniform draw over cells free of target instances.
pub fn initial_fixation<R: Rng + ?Sized>(
    scene: &SceneSpec,
    geometry: &GridGeometry,
    rng: &mut R,
) -> Result<Cell> {
    let blocked = ground_truth_cells(scene, geometry, Some(scene.target_class));
    let eligible: Vec<Cell> = geometry.cells().filter(|c| !blocked.contains(c)).collect();
    if eligible.is_empty() {
        return Err(Error::input(
            "every cell contains a target instance; no legal initial fixation",
        ));
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}

fn select_next<R: Rng + ?Sized>(
    policy: PolicyKind,
    map: &SemanticMap,
    ctx: &TrialContext,
    rng: &mut R,
) -> Result<Cell> {
    match policy {
        PolicyKind::Random => select_random(map, rng),
        PolicyKind::Saliency => select_saliency(ctx.saliency.expect("validated"), map),
        PolicyKind::SearchNonPredictive { target } => select_search_nonpredictive(map, target),
        PolicyKind::SearchPredictive { target } => {
            select_search_predictive(map, target, ctx.model.expect("validated"))
        }
        PolicyKind::ExplorePredictive { metric, acquisition } => {
            select_explore(map, ctx.model.expect("validated"), metric, acquisition)
        }
    }
}

/// Runs one visual-search trial.
///
/// Loop per iteration: fixate, fuse the fixation's detections into the map
/// (which marks the cell visited), stop with `found = true` when the
/// fixation cell overlaps a target instance (the Oracle), otherwise select
/// the next cell. Exhausting the unvisited cells before the iteration cap
/// ends the trial with `found = false`.
pub fn run_search_trial(
    scene: &SceneSpec,
    ctx: &TrialContext,
    config: &TrialConfig,
) -> Result<SearchResult> {
    ctx.validate(scene, config)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut map = SemanticMap::init_uniform(ctx.geometry, ctx.num_classes)?;
    let target_cells = ground_truth_cells(scene, &ctx.geometry, Some(scene.target_class));

    let mut cell = match config.initial_fixation {
        InitialFixation::RandomNonTarget => initial_fixation(scene, &ctx.geometry, &mut rng)?,
        InitialFixation::Fixed(c) => {
            if !ctx.geometry.contains(c) {
                return Err(Error::input("fixed initial fixation outside the grid"));
            }
            c
        }
    };

    let mut result = SearchResult {
        found: false,
        found_at: None,
        path: Vec::new(),
        policy_times: Vec::new(),
    };
    for iteration in 1..=config.max_iterations {
        result.path.push(cell);
        let detections = ctx.detections_for(scene, cell, &mut rng);
        map.apply_detections(&detections, cell, config.mode, ctx.model)?;
        if target_cells.contains(&cell) {
            result.found = true;
            result.found_at = Some(iteration);
            break;
        }
        if iteration == config.max_iterations {
            break;
        }
        let start = Instant::now();
        let next = select_next(config.policy, &map, ctx, &mut rng);
        let elapsed = start.elapsed().as_secs_f64();
        match next {
            Ok(c) => {
                result.policy_times.push(elapsed);
                cell = c;
            }
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(result)
}

/// Runs one exploration trial: the same loop without the Oracle, recording
/// the success rate after every fixation.
pub fn run_explore_trial(
    scene: &SceneSpec,
    ctx: &TrialContext,
    config: &TrialConfig,
) -> Result<ExploreResult> {
    ctx.validate(scene, config)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut map = SemanticMap::init_uniform(ctx.geometry, ctx.num_classes)?;

    let mut cell = match config.initial_fixation {
        InitialFixation::RandomNonTarget => initial_fixation(scene, &ctx.geometry, &mut rng)?,
        InitialFixation::Fixed(c) => {
            if !ctx.geometry.contains(c) {
                return Err(Error::input("fixed initial fixation outside the grid"));
            }
            c
        }
    };

    let mut result = ExploreResult {
        success_rates: Vec::new(),
        path: Vec::new(),
        policy_times: Vec::new(),
    };
    for iteration in 1..=config.max_iterations {
        result.path.push(cell);
        let detections = ctx.detections_for(scene, cell, &mut rng);
        map.apply_detections(&detections, cell, config.mode, ctx.model)?;
        result.success_rates.push(success_rate(&map, scene)?);
        if iteration == config.max_iterations {
            break;
        }
        let start = Instant::now();
        let next = select_next(config.policy, &map, ctx, &mut rng);
        let elapsed = start.elapsed().as_secs_f64();
        match next {
            Ok(c) => {
                result.policy_times.push(elapsed);
                cell = c;
            }
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(result)
}

/// Fraction of ground-truth-object cells whose posterior argmax matches an
/// overlapping object's class. An argmax tie resolves to the background
/// class, so an untouched uniform cell never counts as correct.
pub fn success_rate(map: &SemanticMap, scene: &SceneSpec) -> Result<f64> {
    if scene.objects.is_empty() {
        return Err(Error::input("scene has no objects"));
    }
    let geometry = map.geometry();
    let mut classes_at: std::collections::BTreeMap<Cell, BTreeSet<usize>> =
        std::collections::BTreeMap::new();
    for obj in &scene.objects {
        for cell in crate::geometry::cells_overlapped(&obj.bbox, geometry) {
            classes_at.entry(cell).or_default().insert(obj.class);
        }
    }
    if classes_at.is_empty() {
        return Err(Error::input("no object overlaps the grid"));
    }
    let mut correct = 0usize;
    for (cell, classes) in &classes_at {
        let predicted = argmax_tie_to_background(cell_posterior(map.beta(*cell)).as_slice());
        if classes.contains(&predicted) {
            correct += 1;
        }
    }
    Ok(correct as f64 / classes_at.len() as f64)
}

fn argmax_tie_to_background(posterior: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    let mut ties = 0usize;
    for (k, &p) in posterior.iter().enumerate() {
        if p > best_value {
            best_value = p;
            best = k;
            ties = 1;
        } else if p == best_value {
            ties += 1;
        }
    }
    if ties > 1 {
        0
    } else {
        best
    }
}

/// Cumulative performance: `cp[t-1]` is the fraction of trials whose
/// target was found by iteration `t`, for `t = 1..=horizon`.
pub fn cumulative_performance(results: &[SearchResult], horizon: usize) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::input("no search results to aggregate"));
    }
    let n = results.len() as f64;
    let mut cp = vec![0.0; horizon];
    for r in results {
        if let Some(t) = r.found_at {
            for v in cp.iter_mut().skip(t.saturating_sub(1)) {
                *v += 1.0;
            }
        }
    }
    for v in &mut cp {
        *v /= n;
    }
    Ok(cp)
}

/// Pointwise mean and standard error of the mean over repetition curves.
/// Needs at least two curves of equal length.
pub fn aggregate_with_sem(curves: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if curves.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: curves.len(),
        });
    }
    let len = curves[0].len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::input("repetition curves have mismatched lengths"));
    }
    let r = curves.len() as f64;
    let mut mean = vec![0.0; len];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= r;
    }
    let mut sem = vec![0.0; len];
    for c in curves {
        for ((s, v), m) in sem.iter_mut().zip(c).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut sem {
        *s = (*s / (r - 1.0)).sqrt() / r.sqrt();
    }
    Ok((mean, sem))
}
