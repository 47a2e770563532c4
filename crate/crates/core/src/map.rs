//! The world-fixed grid of Dirichlet beliefs: fusion of per-fixation
//! detections and inhibition-of-return bookkeeping.

use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{distance_level, CalibrationModel};
use crate::dirichlet::{DirichletParams, ScoreVector};
use crate::error::{Error, Result};
use crate::geometry::{cells_overlapped_with_threshold, BoundingBox, Cell, GridGeometry};

/// Initial concentration of every map cell.
pub const UNIFORM_BETA: f64 = 0.5;

/// Whether detections update the map with raw detector scores or with
/// scores calibrated by the foveal observation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Raw,
    Calibrated,
}

/// One detector output: a bounding box and a normalized score vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub scores: ScoreVector,
}

/// Moment-matching fusion of a categorical likelihood into a Dirichlet
/// prior.
///
/// The resulting mean equals the exact Bayes-fused posterior mean
/// `beta_i (1 + lambda_i / sum_j beta_j lambda_j) / (sum(beta) + 1)`.
/// The rule is homogeneous in `likelihood`: any positive rescaling leaves
/// the output unchanged.
pub fn kaplan_update(beta: &DirichletParams, likelihood: &[f64]) -> Result<DirichletParams> {
    if likelihood.len() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            actual: likelihood.len(),
        });
    }
    if likelihood.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::input(
            "likelihood components must be finite and nonnegative",
        ));
    }
    let weighted: f64 = beta
        .as_slice()
        .iter()
        .zip(likelihood)
        .map(|(b, l)| b * l)
        .sum();
    if weighted <= 0.0 {
        return Err(Error::input("likelihood must not be all zero"));
    }
    let min_l = likelihood.iter().copied().fold(f64::INFINITY, f64::min);
    let denom = 1.0 + min_l / weighted;
    let next: Vec<f64> = beta
        .as_slice()
        .iter()
        .zip(likelihood)
        .map(|(b, l)| b * (1.0 + l / weighted) / denom)
        .collect();
    DirichletParams::new(next)
}

/// Posterior class probabilities of a cell: with a single draw the
/// Dirichlet-compound multinomial reduces exactly to `beta_k / sum(beta)`.
pub fn cell_posterior(beta: &DirichletParams) -> ScoreVector {
    beta.mean()
}

/// X x Y grid of Dirichlet beliefs plus the visited-cell mask that backs
/// inhibition of return.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    geometry: GridGeometry,
    num_classes: usize,
    beta: Vec<DirichletParams>,
    visited: Vec<bool>,
    unvisited_count: usize,
    history: Vec<Cell>,
    min_overlap_fraction: f64,
}

impl SemanticMap {
    /// Fresh map with every cell set to the uniform prior
    /// `[UNIFORM_BETA; K+1]`, nothing visited, empty history.
    pub fn init_uniform(geometry: GridGeometry, num_classes: usize) -> Result<Self> {
        if num_classes < 1 {
            return Err(Error::input("need at least one object class"));
        }
        let beta0 = DirichletParams::symmetric(num_classes + 1, UNIFORM_BETA)?;
        Ok(Self {
            geometry,
            num_classes,
            beta: vec![beta0; geometry.num_cells()],
            visited: vec![false; geometry.num_cells()],
            unvisited_count: geometry.num_cells(),
            history: Vec::new(),
            min_overlap_fraction: 0.0,
        })
    }

    /// Sets the minimum box/cell overlap fraction required before a cell is
    /// updated. The default of 0 updates every cell with positive overlap.
    pub fn with_min_overlap_fraction(mut self, fraction: f64) -> Self {
        self.min_overlap_fraction = fraction;
        self
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn beta(&self, cell: Cell) -> &DirichletParams {
        &self.beta[self.geometry.index(cell)]
    }

    #[cfg(test)]
    pub(crate) fn beta_slice(&self) -> &[DirichletParams] {
        &self.beta
    }

    /// Replaces a cell's belief. The parameters must have `K + 1`
    /// components.
    pub fn set_beta(&mut self, cell: Cell, beta: DirichletParams) -> Result<()> {
        if beta.len() != self.num_classes + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes + 1,
                actual: beta.len(),
            });
        }
        let idx = self.geometry.index(cell);
        self.beta[idx] = beta;
        Ok(())
    }

    /// Posterior class probabilities of a cell.
    pub fn posterior(&self, cell: Cell) -> ScoreVector {
        cell_posterior(self.beta(cell))
    }

    pub fn visited(&self, cell: Cell) -> bool {
        self.visited[self.geometry.index(cell)]
    }

    /// Marks a cell visited and appends it to the fixation history
    /// (inhibition of return). The visited flag is idempotent.
    pub fn mark_visited(&mut self, cell: Cell) {
        let idx = self.geometry.index(cell);
        if !self.visited[idx] {
            self.visited[idx] = true;
            self.unvisited_count -= 1;
        }
        self.history.push(cell);
    }

    pub fn history(&self) -> &[Cell] {
        &self.history
    }

    /// Unvisited cells in row-major order.
    pub fn unvisited(&self) -> Vec<Cell> {
        self.geometry
            .cells()
            .filter(|&c| !self.visited(c))
            .collect()
    }

    pub fn unvisited_count(&self) -> usize {
        self.unvisited_count
    }

    pub fn all_visited(&self) -> bool {
        self.unvisited_count == 0
    }

    /// Fuses one fixation's detections into the map and marks the fixation
    /// cell visited.
    ///
    /// Detections are processed in input order; each updates every cell its
    /// box overlaps. In [`ScoreMode::Calibrated`] the detector scores are
    /// replaced by calibrated likelihoods for the detection's distance
    /// level before fusion.
    pub fn apply_detections(
        &mut self,
        detections: &[Detection],
        fixation: Cell,
        mode: ScoreMode,
        model: Option<&CalibrationModel>,
    ) -> Result<()> {
        if !self.geometry.contains(fixation) {
            return Err(Error::input(format!(
                "fixation ({}, {}) outside the grid",
                fixation.x, fixation.y
            )));
        }
        if mode == ScoreMode::Calibrated && model.is_none() {
            return Err(Error::input(
                "calibrated mode requires a calibration model",
            ));
        }
        let fovea = self.geometry.cell_center(fixation);
        for det in detections {
            let lambda: ScoreVector = match mode {
                ScoreMode::Raw => det.scores.clone(),
                ScoreMode::Calibrated => {
                    let model = model.expect("checked above");
                    let level =
                        distance_level(det.bbox.center(), fovea, &self.geometry, model.bins());
                    model.calibrate(&det.scores, level)?
                }
            };
            for cell in cells_overlapped_with_threshold(
                &det.bbox,
                &self.geometry,
                self.min_overlap_fraction,
            ) {
                let updated = kaplan_update(self.beta(cell), lambda.as_slice())?;
                self.set_beta(cell, updated);
            }
        }
        self.mark_visited(fixation);
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(&MapDoc::from(self))
            .map_err(|e| Error::json("serializing semantic map", e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json_string()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: MapDoc =
            serde_json::from_str(s).map_err(|e| Error::json("parsing semantic map", e))?;
        doc.try_into()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let doc: MapDoc = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
        doc.try_into()
    }
}

/// On-disk form: `{geometry, K, beta, visited, history}` with `beta` and
/// `visited` in row-major order.
#[derive(Serialize, Deserialize)]
struct MapDoc {
    geometry: GridGeometry,
    #[serde(rename = "K")]
    num_classes: usize,
    beta: Vec<Vec<f64>>,
    visited: Vec<bool>,
    history: Vec<Cell>,
}

impl From<&SemanticMap> for MapDoc {
    fn from(map: &SemanticMap) -> Self {
        Self {
            geometry: map.geometry,
            num_classes: map.num_classes,
            beta: map.beta.iter().map(|b| b.as_slice().to_vec()).collect(),
            visited: map.visited.clone(),
            history: map.history.clone(),
        }
    }
}

impl TryFrom<MapDoc> for SemanticMap {
    type Error = Error;

    fn try_from(doc: MapDoc) -> Result<Self> {
        let geometry = GridGeometry::new(
            doc.geometry.image_width,
            doc.geometry.image_height,
            doc.geometry.grid_cols,
            doc.geometry.grid_rows,
        )?;
        if doc.beta.len() != geometry.num_cells() || doc.visited.len() != geometry.num_cells() {
            return Err(Error::input("map arrays do not match the grid size"));
        }
        let beta = doc
            .beta
            .into_iter()
            .map(|b| {
                if b.len() != doc.num_classes + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: doc.num_classes + 1,
                        actual: b.len(),
                    });
                }
                DirichletParams::new(b)
            })
            .collect::<Result<Vec<_>>>()?;
        for cell in &doc.history {
            if !geometry.contains(*cell) {
                return Err(Error::input("history cell outside the grid"));
            }
        }
        let unvisited_count = doc.visited.iter().filter(|&&v| !v).count();
        Ok(Self {
            geometry,
            num_classes: doc.num_classes,
            beta,
            visited: doc.visited,
            unvisited_count,
            history: doc.history,
            min_overlap_fraction: 0.0,
        })
    }
}
