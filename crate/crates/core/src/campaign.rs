//! Multi-scene experiment campaigns: deterministic fan-out of trials over
//! scenes, repetitions, and campaign seeds, with CSV results and a JSON
//! manifest.
//!
//! One CSV is written per (policy, campaign seed) with one row per
//! iteration. Search campaigns report the cumulative performance; explore
//! campaigns report the per-saccade success rate (the `iteration` column
//! then counts saccades, starting at 0). Trial seeds derive as
//! `campaign_seed XOR trial_index` with `trial_index = scene * repetitions
//! + repetition`, so outputs are byte-identical across reruns and
//! independent of `--jobs`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationModel;
use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::harness::{
    aggregate_with_sem, cumulative_performance, run_explore_trial, run_search_trial,
    ExploreResult, InitialFixation, SearchResult, TrialConfig, TrialContext,
};
use crate::map::ScoreMode;
use crate::policy::{Acquisition, ExploreMetric, PolicyKind, SaliencyGrid};
use crate::simworld::{load_detection_log, DetectionLog, EmulatorConfig, SceneSpec};

/// Whether the `mean_time_s` column carries measured wall times or zeros.
/// Zeros make campaign outputs byte-identical across reruns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    #[default]
    Measured,
    Zero,
}

/// Which axis the SEM bands run over: the repetition restarts (default) or
/// the individual scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemScope {
    #[default]
    Repetition,
    Image,
}

/// A policy entry of a campaign config. The search target is not part of
/// the entry; each scene's own target class is injected at trial time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEntry {
    #[serde(flatten)]
    pub policy: CampaignPolicy,
    #[serde(default = "default_mode")]
    pub mode: ScoreMode,
    /// CSV file stem; derived from the kind and mode when omitted.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_mode() -> ScoreMode {
    ScoreMode::Raw
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CampaignPolicy {
    Random,
    Saliency,
    #[serde(rename = "search_nonpredictive")]
    SearchNonPredictive,
    SearchPredictive,
    ExplorePredictive {
        metric: ExploreMetric,
        /// Defaults to the metric's conventional pairing.
        #[serde(default)]
        acquisition: Option<Acquisition>,
    },
}

impl PolicyEntry {
    /// Unique name used for CSV files and reports.
    pub fn effective_name(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let mode = match self.mode {
            ScoreMode::Raw => "raw",
            ScoreMode::Calibrated => "calibrated",
        };
        match &self.policy {
            CampaignPolicy::Random => "random".into(),
            CampaignPolicy::Saliency => "saliency".into(),
            CampaignPolicy::SearchNonPredictive => format!("search_nonpredictive_{mode}"),
            CampaignPolicy::SearchPredictive => format!("search_predictive_{mode}"),
            CampaignPolicy::ExplorePredictive { metric, acquisition } => {
                let metric_name = match metric {
                    ExploreMetric::Kl => "kl",
                    ExploreMetric::Negentropy => "negentropy",
                    ExploreMetric::TwoPeaks => "two_peaks",
                };
                let acq = acquisition.unwrap_or(metric.default_acquisition());
                let acq_name = match acq {
                    Acquisition::SumExpected => "sum_expected",
                    Acquisition::ExpectedImprovement => "expected_improvement",
                };
                format!("explore_{metric_name}_{acq_name}_{mode}")
            }
        }
    }

    /// The concrete policy for one scene.
    pub fn resolve(&self, target: usize) -> PolicyKind {
        match &self.policy {
            CampaignPolicy::Random => PolicyKind::Random,
            CampaignPolicy::Saliency => PolicyKind::Saliency,
            CampaignPolicy::SearchNonPredictive => PolicyKind::SearchNonPredictive { target },
            CampaignPolicy::SearchPredictive => PolicyKind::SearchPredictive { target },
            CampaignPolicy::ExplorePredictive { metric, acquisition } => {
                PolicyKind::ExplorePredictive {
                    metric: *metric,
                    acquisition: acquisition.unwrap_or(metric.default_acquisition()),
                }
            }
        }
    }

    fn needs_model(&self) -> bool {
        self.mode == ScoreMode::Calibrated
            || matches!(
                self.policy,
                CampaignPolicy::SearchPredictive | CampaignPolicy::ExplorePredictive { .. }
            )
    }
}

/// Campaign configuration, normally loaded from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// Directory of scene JSON files (everything `*.json` except
    /// `manifest*`), processed in lexicographic order.
    pub scenes_dir: PathBuf,
    /// Per-scene detection logs `<scene stem>.jsonl`; replaces the
    /// emulator when set.
    #[serde(default)]
    pub logs_dir: Option<PathBuf>,
    pub policies: Vec<PolicyEntry>,
    pub num_classes: usize,
    #[serde(default = "default_grid")]
    pub grid_cols: usize,
    #[serde(default = "default_grid")]
    pub grid_rows: usize,
    /// Eccentricity levels of the default emulator when no emulator file
    /// is given.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub calibration_model: Option<PathBuf>,
    #[serde(default)]
    pub emulator: Option<PathBuf>,
    /// Per-scene saliency grids `<scene stem>.csv` or `.pgm`.
    #[serde(default)]
    pub saliency_dir: Option<PathBuf>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub timing: TimingMode,
    #[serde(default)]
    pub sem_scope: SemScope,
}

fn default_grid() -> usize {
    10
}
fn default_bins() -> usize {
    5
}
fn default_horizon() -> usize {
    30
}
fn default_repetitions() -> usize {
    10
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl CampaignConfig {
    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))
    }
}

/// Everything a campaign needs, loaded and validated before any trial
/// runs.
struct CampaignInputs {
    scenes: Vec<(String, SceneSpec)>,
    geometry: GridGeometry,
    emulator: Option<EmulatorConfig>,
    logs: BTreeMap<String, DetectionLog>,
    model: Option<CalibrationModel>,
    saliency: BTreeMap<String, SaliencyGrid>,
}

fn load_inputs(config: &CampaignConfig) -> Result<CampaignInputs> {
    if config.policies.is_empty() {
        return Err(Error::input("campaign has no policies"));
    }
    if config.horizon < 1 {
        return Err(Error::input("horizon must be at least 1"));
    }
    if config.repetitions < 1 {
        return Err(Error::input("repetitions must be at least 1"));
    }
    if config.seeds.is_empty() {
        return Err(Error::input("campaign needs at least one seed"));
    }
    match config.sem_scope {
        SemScope::Repetition if config.repetitions < 2 => {
            return Err(Error::input(
                "repetition-level SEM needs at least 2 repetitions",
            ));
        }
        _ => {}
    }
    let mut names = std::collections::BTreeSet::new();
    for p in &config.policies {
        if !names.insert(p.effective_name()) {
            return Err(Error::input(format!(
                "duplicate policy name {:?}",
                p.effective_name()
            )));
        }
    }

    let mut scenes = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&config.scenes_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && !p
                    .file_stem()
                    .is_some_and(|s| s.to_string_lossy().starts_with("manifest"))
        })
        .collect();
    entries.sort();
    for path in entries {
        let stem = path
            .file_stem()
            .expect("filtered on extension")
            .to_string_lossy()
            .into_owned();
        let scene = SceneSpec::read_json(&path)?;
        if scene.max_class() > config.num_classes {
            return Err(Error::input(format!(
                "{}: scene uses class {} but the campaign models {}",
                path.display(),
                scene.max_class(),
                config.num_classes
            )));
        }
        scenes.push((stem, scene));
    }
    if scenes.is_empty() {
        return Err(Error::input(format!(
            "no scene files in {}",
            config.scenes_dir.display()
        )));
    }
    if config.sem_scope == SemScope::Image && scenes.len() < 2 {
        return Err(Error::input("image-level SEM needs at least 2 scenes"));
    }
    let canvas = (scenes[0].1.canvas_width, scenes[0].1.canvas_height);
    for (name, scene) in &scenes {
        if (scene.canvas_width, scene.canvas_height) != canvas {
            return Err(Error::input(format!(
                "scene {name} has a different canvas than the first scene"
            )));
        }
    }
    let geometry = GridGeometry::new(canvas.0, canvas.1, config.grid_cols, config.grid_rows)?;

    let model = config
        .calibration_model
        .as_ref()
        .map(|p| CalibrationModel::read_json(p))
        .transpose()?;
    if let Some(m) = &model {
        if m.num_classes() != config.num_classes {
            return Err(Error::input("calibration model K does not match the campaign"));
        }
    }
    if model.is_none() {
        if let Some(p) = config.policies.iter().find(|p| p.needs_model()) {
            return Err(Error::input(format!(
                "policy {:?} needs a calibration model but none is configured",
                p.effective_name()
            )));
        }
    }

    let mut logs = BTreeMap::new();
    let emulator = if let Some(dir) = &config.logs_dir {
        for (stem, _) in &scenes {
            let path = dir.join(format!("{stem}.jsonl"));
            if !path.exists() {
                return Err(Error::input(format!(
                    "missing detection log {}",
                    path.display()
                )));
            }
            logs.insert(stem.clone(), load_detection_log(&path)?);
        }
        None
    } else {
        let emulator = match &config.emulator {
            Some(path) => EmulatorConfig::read_json(path)?,
            None => EmulatorConfig::default_with(config.num_classes, config.bins)?,
        };
        if emulator.num_classes != config.num_classes {
            return Err(Error::input("emulator K does not match the campaign"));
        }
        Some(emulator)
    };

    let mut saliency = BTreeMap::new();
    if config
        .policies
        .iter()
        .any(|p| matches!(p.policy, CampaignPolicy::Saliency))
    {
        let Some(dir) = &config.saliency_dir else {
            return Err(Error::input(
                "the saliency policy needs saliency_dir with per-scene grids",
            ));
        };
        for (stem, _) in &scenes {
            let csv = dir.join(format!("{stem}.csv"));
            let pgm = dir.join(format!("{stem}.pgm"));
            let grid = if csv.exists() {
                SaliencyGrid::from_csv_path(&csv)?
            } else if pgm.exists() {
                SaliencyGrid::from_pgm_path(&pgm, config.grid_cols, config.grid_rows)?
            } else {
                return Err(Error::input(format!(
                    "missing saliency grid for scene {stem} in {}",
                    dir.display()
                )));
            };
            if grid.cols() != config.grid_cols || grid.rows() != config.grid_rows {
                return Err(Error::input(format!(
                    "saliency grid for scene {stem} does not match the campaign grid"
                )));
            }
            saliency.insert(stem.clone(), grid);
        }
    }

    Ok(CampaignInputs {
        scenes,
        geometry,
        emulator,
        logs,
        model,
        saliency,
    })
}

/// Aggregated outcome of one (policy, campaign seed) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub policy: String,
    pub seed: u64,
    /// Mean cumulative performance (search) or mean success rate
    /// (explore), one entry per CSV row.
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    /// Per-row mean policy-selection seconds.
    pub mean_time_rows: Vec<f64>,
    /// Mean policy-selection seconds pooled over every selection of the
    /// run, regardless of timing mode.
    pub mean_policy_time_s: f64,
    pub csv_file: String,
}

impl RunReport {
    /// Search convenience: cumulative performance at a 1-based iteration.
    pub fn value_at_iteration(&self, t: usize) -> f64 {
        self.mean[t - 1]
    }

    /// Explore convenience: success rate after `s` saccades.
    pub fn value_at_saccade(&self, s: usize) -> f64 {
        self.mean[s]
    }
}

/// Outcome of a whole campaign.
#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub kind: CampaignKind,
    pub runs: Vec<RunReport>,
    pub manifest_file: String,
}

impl CampaignReport {
    pub fn run(&self, policy: &str, seed: u64) -> Option<&RunReport> {
        self.runs
            .iter()
            .find(|r| r.policy == policy && r.seed == seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    Search,
    Explore,
}

/// Loads and validates everything a campaign references without running
/// any trial. Campaign runners perform the same checks; this exists so
/// front ends can separate configuration errors from trial failures.
pub fn validate_campaign(config: &CampaignConfig) -> Result<()> {
    load_inputs(config).map(|_| ())
}

/// Runs a search campaign and writes one CSV per (policy, seed) plus
/// `manifest.json` into `out_dir`.
pub fn run_search_campaign(
    config: &CampaignConfig,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<CampaignReport> {
    run_campaign(config, out_dir, jobs, CampaignKind::Search)
}

/// Runs an exploration campaign; see [`run_search_campaign`].
pub fn run_explore_campaign(
    config: &CampaignConfig,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<CampaignReport> {
    run_campaign(config, out_dir, jobs, CampaignKind::Explore)
}

fn run_campaign(
    config: &CampaignConfig,
    out_dir: &Path,
    jobs: Option<usize>,
    kind: CampaignKind,
) -> Result<CampaignReport> {
    let inputs = load_inputs(config)?;
    std::fs::create_dir_all(out_dir)?;

    let pool = match jobs {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::input(format!("cannot build thread pool: {e}")))?,
        ),
        None => None,
    };
    let body = || -> Result<Vec<RunReport>> {
        let mut runs = Vec::new();
        for &seed in &config.seeds {
            for entry in &config.policies {
                runs.push(run_one(config, &inputs, entry, seed, kind, out_dir)?);
            }
        }
        Ok(runs)
    };
    let runs = match &pool {
        Some(p) => p.install(body),
        None => body(),
    }?;

    let manifest_path = out_dir.join("manifest.json");
    let manifest = Manifest {
        kind,
        config: config.clone(),
        scenes: inputs.scenes.iter().map(|(n, _)| n.clone()).collect(),
        policies: config
            .policies
            .iter()
            .map(|p| p.effective_name())
            .collect(),
        // File names, not paths, so reruns into different directories
        // produce identical manifests.
        csv_files: runs
            .iter()
            .map(|r| {
                Path::new(&r.csv_file)
                    .file_name()
                    .expect("csv files have names")
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    let mut f = std::fs::File::create(&manifest_path)?;
    f.write_all(
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::json("serializing manifest", e))?
            .as_bytes(),
    )?;
    f.write_all(b"\n")?;

    Ok(CampaignReport {
        kind,
        runs,
        manifest_file: manifest_path.to_string_lossy().into_owned(),
    })
}

#[derive(Serialize)]
struct Manifest {
    kind: CampaignKind,
    config: CampaignConfig,
    scenes: Vec<String>,
    policies: Vec<String>,
    csv_files: Vec<String>,
}

enum TrialOutcome {
    Search(SearchResult),
    Explore(ExploreResult),
}

fn run_one(
    config: &CampaignConfig,
    inputs: &CampaignInputs,
    entry: &PolicyEntry,
    seed: u64,
    kind: CampaignKind,
    out_dir: &Path,
) -> Result<RunReport> {
    let policy_name = entry.effective_name();
    let scenes = &inputs.scenes;
    let reps = config.repetitions;

    // Trial fan-out, order-independent of the thread count.
    let indices: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..reps).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<TrialOutcome> = indices
        .par_iter()
        .map(|&(scene_idx, rep)| {
            let (stem, scene) = &scenes[scene_idx];
            let trial_index = (scene_idx * reps + rep) as u64;
            let ctx = TrialContext {
                geometry: inputs.geometry,
                num_classes: config.num_classes,
                emulator: inputs.emulator.as_ref(),
                log: inputs.logs.get(stem.as_str()),
                model: inputs.model.as_ref(),
                saliency: inputs.saliency.get(stem.as_str()),
            };
            let trial = TrialConfig {
                policy: entry.resolve(scene.target_class),
                mode: entry.mode,
                max_iterations: config.horizon,
                repetitions: reps,
                initial_fixation: InitialFixation::RandomNonTarget,
                seed: seed ^ trial_index,
            };
            match kind {
                CampaignKind::Search => {
                    run_search_trial(scene, &ctx, &trial).map(TrialOutcome::Search)
                }
                CampaignKind::Explore => {
                    run_explore_trial(scene, &ctx, &trial).map(TrialOutcome::Explore)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    // Group curves by repetition (default) or by scene.
    let group_count = match config.sem_scope {
        SemScope::Repetition => reps,
        SemScope::Image => scenes.len(),
    };
    let group_of = |flat: usize| -> usize {
        let (scene_idx, rep) = indices[flat];
        match config.sem_scope {
            SemScope::Repetition => rep,
            SemScope::Image => scene_idx,
        }
    };

    let horizon = config.horizon;
    let curves: Vec<Vec<f64>> = match kind {
        CampaignKind::Search => {
            let mut grouped: Vec<Vec<SearchResult>> = vec![Vec::new(); group_count];
            for (flat, outcome) in outcomes.iter().enumerate() {
                let TrialOutcome::Search(r) = outcome else {
                    unreachable!()
                };
                grouped[group_of(flat)].push(r.clone());
            }
            grouped
                .iter()
                .map(|results| cumulative_performance(results, horizon))
                .collect::<Result<Vec<_>>>()?
        }
        CampaignKind::Explore => {
            let mut sums = vec![vec![0.0; horizon]; group_count];
            let mut counts = vec![0usize; group_count];
            for (flat, outcome) in outcomes.iter().enumerate() {
                let TrialOutcome::Explore(r) = outcome else {
                    unreachable!()
                };
                let g = group_of(flat);
                counts[g] += 1;
                for s in 0..horizon {
                    // Trials truncated by exhaustion hold their last rate.
                    let v = r
                        .success_rates
                        .get(s)
                        .or(r.success_rates.last())
                        .copied()
                        .unwrap_or(0.0);
                    sums[g][s] += v;
                }
            }
            sums.iter()
                .zip(&counts)
                .map(|(row, &c)| row.iter().map(|v| v / c.max(1) as f64).collect())
                .collect()
        }
    };
    let (mean, sem) = aggregate_with_sem(&curves)?;

    // Per-row and pooled policy-selection times.
    let mut row_sum = vec![0.0; horizon];
    let mut row_count = vec![0usize; horizon];
    let mut pooled_sum = 0.0;
    let mut pooled_count = 0usize;
    for outcome in &outcomes {
        let policy_times = match outcome {
            TrialOutcome::Search(r) => &r.policy_times,
            TrialOutcome::Explore(r) => &r.policy_times,
        };
        for (i, &t) in policy_times.iter().enumerate() {
            if i < horizon {
                row_sum[i] += t;
                row_count[i] += 1;
            }
            pooled_sum += t;
            pooled_count += 1;
        }
    }
    let mean_time_rows: Vec<f64> = match config.timing {
        TimingMode::Zero => vec![0.0; horizon],
        TimingMode::Measured => row_sum
            .iter()
            .zip(&row_count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect(),
    };
    let mean_policy_time_s = if pooled_count > 0 {
        pooled_sum / pooled_count as f64
    } else {
        0.0
    };

    let csv_name = format!("{policy_name}_seed{seed}.csv");
    let csv_path = out_dir.join(&csv_name);
    let value_column = match kind {
        CampaignKind::Search => "mean_cp",
        CampaignKind::Explore => "mean_success_rate",
    };
    let mut csv = String::new();
    csv.push_str(&format!("iteration,{value_column},sem,mean_time_s\n"));
    for i in 0..horizon {
        let iteration = match kind {
            // Search rows are 1-based iterations; explore rows count
            // saccades from 0.
            CampaignKind::Search => i + 1,
            CampaignKind::Explore => i,
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            iteration, mean[i], sem[i], mean_time_rows[i]
        ));
    }
    std::fs::write(&csv_path, csv)?;

    Ok(RunReport {
        policy: policy_name,
        seed,
        mean,
        sem,
        mean_time_rows,
        mean_policy_time_s,
        csv_file: csv_path.to_string_lossy().into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{generate_scene, SceneGenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn write_scenes(dir: &Path, count: usize, seed: u64) {
        let config = SceneGenConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for i in 0..count {
            let scene = generate_scene(&config, &mut rng).unwrap();
            scene
                .write_json(&dir.join(format!("scene_{i:03}.json")))
                .unwrap();
        }
    }

    fn base_config(scenes_dir: PathBuf) -> CampaignConfig {
        CampaignConfig {
            scenes_dir,
            logs_dir: None,
            policies: vec![PolicyEntry {
                policy: CampaignPolicy::Random,
                mode: ScoreMode::Raw,
                name: None,
            }],
            num_classes: 5,
            grid_cols: 10,
            grid_rows: 10,
            bins: 5,
            calibration_model: None,
            emulator: None,
            saliency_dir: None,
            horizon: 8,
            repetitions: 2,
            seeds: vec![0],
            timing: TimingMode::Zero,
            sem_scope: SemScope::Repetition,
        }
    }

    #[test]
    fn campaign_shape_contract() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        std::fs::create_dir(&scenes).unwrap();
        write_scenes(&scenes, 4, 1);
        let mut config = base_config(scenes);
        config.policies.push(PolicyEntry {
            policy: CampaignPolicy::SearchNonPredictive,
            mode: ScoreMode::Raw,
            name: None,
        });
        let out = dir.path().join("out");
        let report = run_search_campaign(&config, &out, None).unwrap();
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            assert_eq!(run.mean.len(), 8);
            let text = std::fs::read_to_string(&run.csv_file).unwrap();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines.len(), 9);
            assert_eq!(lines[0], "iteration,mean_cp,sem,mean_time_s");
            assert!(lines[1].starts_with("1,"));
        }
        assert!(out.join("manifest.json").exists());
    }

    #[test]
    fn campaign_is_deterministic_across_runs_and_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        std::fs::create_dir(&scenes).unwrap();
        write_scenes(&scenes, 3, 2);
        let config = base_config(scenes);

        let out1 = dir.path().join("out1");
        let out2 = dir.path().join("out2");
        let r1 = run_search_campaign(&config, &out1, None).unwrap();
        let r2 = run_search_campaign(&config, &out2, Some(4)).unwrap();
        for (a, b) in r1.runs.iter().zip(&r2.runs) {
            let ca = std::fs::read(&a.csv_file).unwrap();
            let cb = std::fs::read(&b.csv_file).unwrap();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn explore_campaign_rows_count_saccades() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        std::fs::create_dir(&scenes).unwrap();
        write_scenes(&scenes, 2, 3);
        let mut config = base_config(scenes);
        config.horizon = 5;
        let out = dir.path().join("out");
        let report = run_explore_campaign(&config, &out, None).unwrap();
        let text = std::fs::read_to_string(&report.runs[0].csv_file).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,mean_success_rate,sem,mean_time_s");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[5].starts_with("4,"));
    }

    #[test]
    fn calibrated_policy_without_model_fails_before_trials() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        std::fs::create_dir(&scenes).unwrap();
        write_scenes(&scenes, 2, 4);
        let mut config = base_config(scenes);
        config.policies = vec![PolicyEntry {
            policy: CampaignPolicy::SearchPredictive,
            mode: ScoreMode::Calibrated,
            name: None,
        }];
        let out = dir.path().join("out");
        let err = run_search_campaign(&config, &out, None);
        assert!(err.is_err());
        assert!(!out.join("manifest.json").exists());
    }

    #[test]
    fn policy_names_must_be_unique() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        std::fs::create_dir(&scenes).unwrap();
        write_scenes(&scenes, 2, 5);
        let mut config = base_config(scenes.clone());
        config.policies = vec![
            PolicyEntry {
                policy: CampaignPolicy::Random,
                mode: ScoreMode::Raw,
                name: Some("a".into()),
            },
            PolicyEntry {
                policy: CampaignPolicy::SearchNonPredictive,
                mode: ScoreMode::Raw,
                name: Some("a".into()),
            },
        ];
        assert!(run_search_campaign(&config, &dir.path().join("out"), None).is_err());
    }

    #[test]
    fn config_defaults_from_json() {
        let json = r#"{
            "scenes_dir": "/tmp/scenes",
            "policies": [{"kind": "random"}],
            "num_classes": 5
        }"#;
        let config: CampaignConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.grid_cols, 10);
        assert_eq!(config.horizon, 30);
        assert_eq!(config.repetitions, 10);
        assert_eq!(config.seeds, vec![0]);
        assert_eq!(config.timing, TimingMode::Measured);
        assert_eq!(config.policies[0].effective_name(), "random");
    }

    #[test]
    fn explore_policy_default_acquisition_pairing() {
        let json = r#"{"kind": "explore_predictive", "metric": "two_peaks", "mode": "calibrated"}"#;
        let entry: PolicyEntry = serde_json::from_str(json).unwrap();
        assert_eq!(
            entry.resolve(1),
            PolicyKind::ExplorePredictive {
                metric: ExploreMetric::TwoPeaks,
                acquisition: Acquisition::ExpectedImprovement,
            }
        );
        assert_eq!(
            entry.effective_name(),
            "explore_two_peaks_expected_improvement_calibrated"
        );
    }
}
