//! Synthetic scenes, a parametric foveal detector emulator, and ingestion
//! of recorded detection logs.
//!
//! The emulator stands in for a real object detector: per ground-truth
//! object it draws a detection with an eccentricity-dependent probability,
//! jitters the box, optionally confuses the class with a designated
//! look-alike, and samples the score vector from a per-(class, level)
//! Dirichlet table whose true-class mass decays toward the periphery.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{distance_level, EccentricityBins, TrainingRecord};
use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::geometry::{cells_overlapped, BoundingBox, Cell, GridGeometry};
use crate::map::Detection;

/// Largest fraction of the canvas a single target instance may cover.
pub const TARGET_AREA_CAP: f64 = 0.2;
/// Minimum number of object instances per scene.
pub const MIN_INSTANCES: usize = 8;

/// One ground-truth object. Class indices run 1..=K; the background class
/// 0 is never placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A synthetic scene: a canvas, ground-truth objects, and the class to
/// search for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneDoc", into = "SceneDoc")]
pub struct SceneSpec {
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub target_class: usize,
    pub objects: Vec<GroundTruthObject>,
}

#[derive(Serialize, Deserialize, Clone)]
struct SceneDoc {
    canvas: [f64; 2],
    target: usize,
    objects: Vec<GroundTruthObject>,
}

impl TryFrom<SceneDoc> for SceneSpec {
    type Error = Error;

    fn try_from(doc: SceneDoc) -> Result<Self> {
        let scene = SceneSpec {
            canvas_width: doc.canvas[0],
            canvas_height: doc.canvas[1],
            target_class: doc.target,
            objects: doc.objects,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<SceneSpec> for SceneDoc {
    fn from(s: SceneSpec) -> Self {
        SceneDoc {
            canvas: [s.canvas_width, s.canvas_height],
            target: s.target_class,
            objects: s.objects,
        }
    }
}

impl SceneSpec {
    /// Checks the scene invariants: at least [`MIN_INSTANCES`] objects, at
    /// least one target and one non-target instance, classes at least 1,
    /// boxes intersecting the canvas, and every target instance within
    /// [`TARGET_AREA_CAP`] of the canvas area.
    pub fn validate(&self) -> Result<()> {
        if !(self.canvas_width > 0.0 && self.canvas_height > 0.0) {
            return Err(Error::input("canvas dimensions must be positive"));
        }
        if self.objects.len() < MIN_INSTANCES {
            return Err(Error::input(format!(
                "scene has {} instances, need at least {MIN_INSTANCES}",
                self.objects.len()
            )));
        }
        if self.target_class == 0 {
            return Err(Error::input("target class must be an object class"));
        }
        let mut holds_target = false;
        let mut holds_other = false;
        let canvas_area = self.canvas_width * self.canvas_height;
        for obj in &self.objects {
            if obj.class == 0 {
                return Err(Error::input("background is never placed as an object"));
            }
            if obj
                .bbox
                .clipped(self.canvas_width, self.canvas_height)
                .is_none()
            {
                return Err(Error::input("object box lies outside the canvas"));
            }
            if obj.class == self.target_class {
                holds_target = true;
                if obj.bbox.area() > TARGET_AREA_CAP * canvas_area {
                    return Err(Error::input(format!(
                        "target instance covers {:.1}% of the canvas, cap is {:.0}%",
                        100.0 * obj.bbox.area() / canvas_area,
                        100.0 * TARGET_AREA_CAP
                    )));
                }
            } else {
                holds_other = true;
            }
        }
        if !holds_target {
            return Err(Error::input("scene has no target instance"));
        }
        if !holds_other {
            return Err(Error::input("scene has no non-target instance"));
        }
        Ok(())
    }

    /// Largest class index present in the scene.
    pub fn max_class(&self) -> usize {
        self.objects
            .iter()
            .map(|o| o.class)
            .max()
            .unwrap_or(0)
            .max(self.target_class)
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(&SceneDoc::from(self.clone()))
            .map_err(|e| Error::json("serializing scene", e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json_string()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))
    }
}

/// Knobs for scene generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneGenConfig {
    pub num_classes: usize,
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Area cap for target instances as a fraction of the canvas.
    pub target_area_cap: f64,
    /// Box side lengths as fractions of the canvas dimensions.
    pub min_box_fraction: f64,
    pub max_box_fraction: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            canvas_width: 640.0,
            canvas_height: 480.0,
            min_objects: MIN_INSTANCES,
            max_objects: 14,
            target_area_cap: TARGET_AREA_CAP,
            min_box_fraction: 0.06,
            max_box_fraction: 0.30,
        }
    }
}

const MAX_BOX_RETRIES: usize = 1000;

/// Generates a scene satisfying every [`SceneSpec`] invariant.
///
/// One instance of the target class and one non-target instance are always
/// placed; target boxes are rejection-sampled until the area cap holds.
/// Boxes may overlap.
pub fn generate_scene<R: Rng + ?Sized>(config: &SceneGenConfig, rng: &mut R) -> Result<SceneSpec> {
    if config.num_classes < 2 {
        return Err(Error::input("need at least two object classes"));
    }
    if config.min_objects < MIN_INSTANCES || config.max_objects < config.min_objects {
        return Err(Error::input(format!(
            "object count range must satisfy {MIN_INSTANCES} <= min <= max"
        )));
    }
    if !(config.target_area_cap > 0.0) || config.target_area_cap > TARGET_AREA_CAP {
        return Err(Error::input(format!(
            "target area cap must lie in (0, {TARGET_AREA_CAP}]"
        )));
    }
    if !(config.min_box_fraction > 0.0)
        || config.max_box_fraction < config.min_box_fraction
        || config.max_box_fraction > 1.0
    {
        return Err(Error::input("box fractions must satisfy 0 < min <= max <= 1"));
    }
    if config.canvas_width * config.min_box_fraction < 1.0
        || config.canvas_height * config.min_box_fraction < 1.0
    {
        return Err(Error::input("canvas too small for non-degenerate boxes"));
    }

    let count = rng.random_range(config.min_objects..=config.max_objects);
    let target = rng.random_range(1..=config.num_classes);

    let mut classes = Vec::with_capacity(count);
    classes.push(target);
    let mut other = rng.random_range(1..=config.num_classes - 1);
    if other >= target {
        other += 1;
    }
    classes.push(other);
    for _ in 2..count {
        classes.push(rng.random_range(1..=config.num_classes));
    }
    // Shuffle so the guaranteed instances are not always first.
    for i in (1..classes.len()).rev() {
        classes.swap(i, rng.random_range(0..=i));
    }

    let canvas_area = config.canvas_width * config.canvas_height;
    let mut objects = Vec::with_capacity(count);
    for class in classes {
        let mut tries = 0;
        let bbox = loop {
            let w = config.canvas_width
                * rng.random_range(config.min_box_fraction..=config.max_box_fraction);
            let h = config.canvas_height
                * rng.random_range(config.min_box_fraction..=config.max_box_fraction);
            if class != target || w * h <= config.target_area_cap * canvas_area {
                let left = rng.random_range(0.0..=config.canvas_width - w);
                let top = rng.random_range(0.0..=config.canvas_height - h);
                break BoundingBox::new(left, top, w, h)?;
            }
            tries += 1;
            if tries >= MAX_BOX_RETRIES {
                return Err(Error::input(
                    "could not satisfy the target area cap; box fractions too large",
                ));
            }
        };
        objects.push(GroundTruthObject { class, bbox });
    }

    let scene = SceneSpec {
        canvas_width: config.canvas_width,
        canvas_height: config.canvas_height,
        target_class: target,
        objects,
    };
    scene.validate()?;
    Ok(scene)
}

/// Union of grid cells overlapped by ground-truth boxes, optionally
/// restricted to one class.
pub fn ground_truth_cells(
    scene: &SceneSpec,
    geometry: &GridGeometry,
    class_filter: Option<usize>,
) -> BTreeSet<Cell> {
    scene
        .objects
        .iter()
        .filter(|o| class_filter.is_none_or(|c| o.class == c))
        .flat_map(|o| cells_overlapped(&o.bbox, geometry))
        .collect()
}

/// Parameters of the foveal detector emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmulatorDoc", into = "EmulatorDoc")]
pub struct EmulatorConfig {
    pub num_classes: usize,
    pub bins: EccentricityBins,
    /// Generative score tables indexed `[class][level]`.
    pub alpha_star: Vec<Vec<DirichletParams>>,
    /// Detection probability per level, non-increasing toward the
    /// periphery.
    pub detection_prob: Vec<f64>,
    /// Designated look-alike per object class (index 0 unused).
    pub confusable: Vec<usize>,
    /// Probability per level that a detection's scores are drawn from the
    /// look-alike's table instead of the true class's.
    pub confusion_prob: Vec<f64>,
    /// Standard deviation of the Gaussian box-center jitter, in pixels.
    pub jitter_std: f64,
    pub seed: u64,
}

/// Innermost-level mass the default tables place on the true class.
pub const DEFAULT_FOVEAL_MASS: f64 = 0.85;
/// Outermost-level mass the default tables place on the true class.
pub const DEFAULT_PERIPHERAL_MASS: f64 = 0.35;
/// Total concentration of every default table entry.
pub const DEFAULT_PRECISION: f64 = 30.0;
/// Mass floor granted to classes outside {true, look-alike, background}.
const OFF_CLASS_MASS: f64 = 0.01;

impl EmulatorConfig {
    /// The default emulator: `K` classes over `N` uniform levels. True-class
    /// mass decays linearly from [`DEFAULT_FOVEAL_MASS`] to
    /// [`DEFAULT_PERIPHERAL_MASS`], the remainder splits between background
    /// and the look-alike, detection probability falls from 1.0 to 0.6, and
    /// the confusion channel is off.
    pub fn default_with(num_classes: usize, num_levels: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::input("need at least two object classes"));
        }
        let bins = EccentricityBins::uniform(num_levels)?;
        let confusable: Vec<usize> = (0..=num_classes)
            .map(|k| if k == 0 { 0 } else { k % num_classes + 1 })
            .collect();
        let mut alpha_star = Vec::with_capacity(num_classes + 1);
        for k in 0..=num_classes {
            let mut row = Vec::with_capacity(num_levels);
            for d in 0..num_levels {
                let frac = if num_levels > 1 {
                    d as f64 / (num_levels - 1) as f64
                } else {
                    0.0
                };
                let true_mass = DEFAULT_FOVEAL_MASS
                    + (DEFAULT_PERIPHERAL_MASS - DEFAULT_FOVEAL_MASS) * frac;
                let mut mean = vec![0.0; num_classes + 1];
                mean[k] = true_mass;
                if k == 0 {
                    // Background detections spread the remainder uniformly
                    // over the object classes.
                    for m in mean.iter_mut().skip(1) {
                        *m = (1.0 - true_mass) / num_classes as f64;
                    }
                } else {
                    let off = (num_classes - 2) as f64 * OFF_CLASS_MASS;
                    let split = (1.0 - true_mass - off) / 2.0;
                    for (i, m) in mean.iter_mut().enumerate() {
                        if i == k {
                            continue;
                        } else if i == 0 || i == confusable[k] {
                            *m = split;
                        } else {
                            *m = OFF_CLASS_MASS;
                        }
                    }
                }
                row.push(DirichletParams::new(
                    mean.iter().map(|m| m * DEFAULT_PRECISION).collect(),
                )?);
            }
            alpha_star.push(row);
        }
        let detection_prob: Vec<f64> = (0..num_levels)
            .map(|d| {
                let frac = if num_levels > 1 {
                    d as f64 / (num_levels - 1) as f64
                } else {
                    0.0
                };
                1.0 - 0.4 * frac
            })
            .collect();
        Ok(Self {
            num_classes,
            bins,
            alpha_star,
            detection_prob,
            confusable,
            confusion_prob: vec![0.0; num_levels],
            jitter_std: 3.0,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.num_classes + 1;
        let levels = self.bins.num_levels();
        if self.alpha_star.len() != dim {
            return Err(Error::input("alpha tables do not match K"));
        }
        for row in &self.alpha_star {
            if row.len() != levels {
                return Err(Error::input("alpha tables do not match the level count"));
            }
            for a in row {
                if a.len() != dim {
                    return Err(Error::input("alpha entry has the wrong dimension"));
                }
            }
        }
        if self.detection_prob.len() != levels || self.confusion_prob.len() != levels {
            return Err(Error::input("per-level probabilities do not match the level count"));
        }
        if self
            .detection_prob
            .iter()
            .chain(&self.confusion_prob)
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::input("probabilities must lie in [0, 1]"));
        }
        if self
            .detection_prob
            .windows(2)
            .any(|w| w[1] > w[0])
        {
            return Err(Error::input(
                "detection probability must be non-increasing toward the periphery",
            ));
        }
        if self.confusable.len() != dim {
            return Err(Error::input("confusable table does not match K"));
        }
        for (k, &c) in self.confusable.iter().enumerate().skip(1) {
            if c == 0 || c > self.num_classes || c == k {
                return Err(Error::input(format!(
                    "class {k} needs a distinct object-class look-alike, got {c}"
                )));
            }
        }
        if !(self.jitter_std >= 0.0) || !self.jitter_std.is_finite() {
            return Err(Error::input("jitter std must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(
            serde_json::to_string_pretty(&EmulatorDoc::from(self.clone()))
                .map_err(|e| Error::json("serializing emulator config", e))?
                .as_bytes(),
        )?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))
    }
}

/// On-disk form with optional fields; anything missing takes the
/// documented default for the resolved `(K, N)`.
#[derive(Serialize, Deserialize, Clone)]
struct EmulatorDoc {
    #[serde(default)]
    num_classes: Option<usize>,
    #[serde(default)]
    num_levels: Option<usize>,
    #[serde(default)]
    alpha_star: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    detection_prob: Option<Vec<f64>>,
    #[serde(default)]
    confusable: Option<Vec<usize>>,
    #[serde(default)]
    confusion_prob: Option<Vec<f64>>,
    #[serde(default)]
    jitter_std: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

impl TryFrom<EmulatorDoc> for EmulatorConfig {
    type Error = Error;

    fn try_from(doc: EmulatorDoc) -> Result<Self> {
        let num_classes = doc.num_classes.unwrap_or(5);
        let num_levels = doc.num_levels.unwrap_or(5);
        let mut config = EmulatorConfig::default_with(num_classes, num_levels)?;
        if let Some(alpha) = doc.alpha_star {
            config.alpha_star = alpha
                .into_iter()
                .map(|row| row.into_iter().map(DirichletParams::new).collect())
                .collect::<Result<_>>()?;
        }
        if let Some(p) = doc.detection_prob {
            config.detection_prob = p;
        }
        if let Some(c) = doc.confusable {
            config.confusable = c;
        }
        if let Some(c) = doc.confusion_prob {
            config.confusion_prob = c;
        }
        if let Some(j) = doc.jitter_std {
            config.jitter_std = j;
        }
        if let Some(s) = doc.seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(config)
    }
}

impl From<EmulatorConfig> for EmulatorDoc {
    fn from(c: EmulatorConfig) -> Self {
        EmulatorDoc {
            num_classes: Some(c.num_classes),
            num_levels: Some(c.bins.num_levels()),
            alpha_star: Some(
                c.alpha_star
                    .iter()
                    .map(|row| row.iter().map(|a| a.as_slice().to_vec()).collect())
                    .collect(),
            ),
            detection_prob: Some(c.detection_prob),
            confusable: Some(c.confusable),
            confusion_prob: Some(c.confusion_prob),
            jitter_std: Some(c.jitter_std),
            seed: Some(c.seed),
        }
    }
}

/// Emulates one fixation: every ground-truth object is detected with the
/// probability of its distance level; detected boxes are jittered,
/// clipped to the canvas (dropped when they collapse), optionally class-
/// confused, and scored from the generative table.
pub fn emulate_detections<R: Rng + ?Sized>(
    scene: &SceneSpec,
    fixation: Cell,
    geometry: &GridGeometry,
    config: &EmulatorConfig,
    rng: &mut R,
) -> Vec<Detection> {
    let fovea = geometry.cell_center(fixation);
    let mut detections = Vec::new();
    for obj in &scene.objects {
        let level = distance_level(obj.bbox.center(), fovea, geometry, &config.bins);
        if !rng.random_bool(config.detection_prob[level]) {
            continue;
        }
        let bbox = if config.jitter_std > 0.0 {
            let normal = Normal::new(0.0, config.jitter_std).expect("validated std");
            let dx: f64 = normal.sample(rng);
            let dy: f64 = normal.sample(rng);
            BoundingBox {
                left: obj.bbox.left + dx,
                top: obj.bbox.top + dy,
                ..obj.bbox
            }
        } else {
            obj.bbox
        };
        let Some(bbox) = bbox.clipped(scene.canvas_width, scene.canvas_height) else {
            continue;
        };
        let confuse: f64 = rng.random();
        let emitted_class = if confuse < config.confusion_prob[level] {
            config.confusable[obj.class]
        } else {
            obj.class
        };
        let scores = config.alpha_star[emitted_class][level].sample(rng);
        detections.push(Detection { bbox, scores });
    }
    detections
}

/// Synthesizes labeled calibration records from the emulator's generative
/// tables, stratified uniformly over (class, level); the recorded distance
/// is drawn uniformly inside the level's annulus.
pub fn generate_training_records<R: Rng + ?Sized>(
    config: &EmulatorConfig,
    count: usize,
    rng: &mut R,
) -> Vec<TrainingRecord> {
    let levels = config.bins.num_levels();
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.random_range(0..=config.num_classes);
        let level = rng.random_range(0..levels);
        let lower = config.bins.lower_edge(level);
        let upper = config.bins.edges()[level];
        let distance = rng.random_range(lower..upper);
        let confuse: f64 = rng.random();
        let emitted_class = if class > 0 && confuse < config.confusion_prob[level] {
            config.confusable[class]
        } else {
            class
        };
        records.push(TrainingRecord {
            scores: config.alpha_star[emitted_class][level].sample(rng),
            true_class: class,
            distance,
        });
    }
    records
}

/// Writes training records as JSON lines.
pub fn write_training_records(path: &Path, records: &[TrainingRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json("serializing record", e))?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads training records from JSON lines.
pub fn read_training_records(path: &Path) -> Result<Vec<TrainingRecord>> {
    let f = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrainingRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(r);
    }
    Ok(records)
}

/// Recorded detections keyed by fixation cell, for replaying a real
/// detector's outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionLog {
    entries: BTreeMap<Cell, Vec<Detection>>,
}

impl DetectionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fixation: Cell, detections: Vec<Detection>) {
        self.entries.entry(fixation).or_default().extend(detections);
    }

    pub fn detections_at(&self, fixation: Cell) -> &[Detection] {
        self.entries.get(&fixation).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fixations(&self) -> impl Iterator<Item = Cell> + '_ {
        self.entries.keys().copied()
    }
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    fixation: (usize, usize),
    detections: Vec<LogDetection>,
}

#[derive(Serialize, Deserialize)]
struct LogDetection {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    scores: Vec<f64>,
}

/// Loads a detection log from JSON lines, one fixation per line. Score
/// vectors that do not sum to 1 are renormalized; vectors without positive
/// mass are rejected with the offending line number.
pub fn load_detection_log(path: &Path) -> Result<DetectionLog> {
    let f = std::fs::File::open(path)?;
    let mut log = DetectionLog::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let mut detections = Vec::with_capacity(parsed.detections.len());
        for d in parsed.detections {
            let scores = crate::dirichlet::ScoreVector::normalized(&d.scores).map_err(|e| {
                Error::MalformedRecord {
                    line: i + 1,
                    reason: e.to_string(),
                }
            })?;
            detections.push(Detection {
                bbox: d.bbox,
                scores,
            });
        }
        log.insert(Cell::new(parsed.fixation.0, parsed.fixation.1), detections);
    }
    Ok(log)
}

/// Writes a detection log as JSON lines, fixations in row-major order.
pub fn write_detection_log(path: &Path, log: &DetectionLog) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (cell, detections) in &log.entries {
        let line = LogLine {
            fixation: (cell.x, cell.y),
            detections: detections
                .iter()
                .map(|d| LogDetection {
                    bbox: d.bbox,
                    scores: d.scores.as_slice().to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&line).map_err(|e| Error::json("serializing log", e))?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
