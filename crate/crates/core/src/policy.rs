//! Gaze-selection policies under inhibition of return: random and saliency
//! baselines, non-predictive and predictive target search, and predictive
//! exploration under three uncertainty metrics and two acquisition
//! functions.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{distance_level, CalibrationModel};
use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::map::{kaplan_update, SemanticMap, UNIFORM_BETA};
use crate::geometry::{Cell, GridGeometry};

/// Uncertainty metric driving predictive exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreMetric {
    /// Divergence of a cell's belief from the initial uniform prior.
    Kl,
    /// Negative classification entropy of the cell posterior.
    Negentropy,
    /// Gap between the two largest posterior components.
    TwoPeaks,
}

impl ExploreMetric {
    /// The acquisition function conventionally paired with the metric:
    /// two-peaks with expected improvement, the others with the summed
    /// expectation.
    pub fn default_acquisition(self) -> Acquisition {
        match self {
            ExploreMetric::TwoPeaks => Acquisition::ExpectedImprovement,
            _ => Acquisition::SumExpected,
        }
    }
}

/// How per-candidate predictions are scored during exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    /// Sum of the metric over every cell of the predicted map.
    SumExpected,
    /// Largest absolute per-cell change of the metric between the current
    /// and the predicted map.
    ExpectedImprovement,
}

/// A gaze-selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Saliency,
    #[serde(rename = "search_nonpredictive")]
    SearchNonPredictive {
        target: usize,
    },
    SearchPredictive {
        target: usize,
    },
    ExplorePredictive {
        metric: ExploreMetric,
        acquisition: Acquisition,
    },
}

/// Cell-aggregated saliency values over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid {
    cols: usize,
    rows: usize,
    values: Vec<f64>,
}

impl SaliencyGrid {
    pub fn new(cols: usize, rows: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 || rows == 0 || values.len() != cols * rows {
            return Err(Error::input("saliency grid dimensions do not match values"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("saliency values must be finite and nonnegative"));
        }
        Ok(Self { cols, rows, values })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn value(&self, cell: Cell) -> f64 {
        self.values[cell.y * self.cols + cell.x]
    }

    /// Reads a grid from CSV text: one line per grid row, `cols` values per
    /// line.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| Error::MalformedRecord {
                        line: i + 1,
                        reason: format!("bad saliency value {v:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::input("empty saliency CSV"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::input("ragged saliency CSV"));
        }
        let num_rows = rows.len();
        Self::new(cols, num_rows, rows.into_iter().flatten().collect())
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Reads an 8-bit grayscale PGM raster (P2 or P5) and aggregates it
    /// onto the grid by per-cell arithmetic mean of pixel intensities.
    pub fn from_pgm_path(path: &Path, cols: usize, rows: usize) -> Result<Self> {
        let data = std::fs::read(path)?;
        let (width, height, pixels) = parse_pgm(&data)?;
        if cols == 0 || rows == 0 || cols > width || rows > height {
            return Err(Error::input(format!(
                "cannot aggregate a {width}x{height} raster onto a {cols}x{rows} grid"
            )));
        }
        let mut sums = vec![0.0f64; cols * rows];
        let mut counts = vec![0u64; cols * rows];
        for py in 0..height {
            let gy = py * rows / height;
            for px in 0..width {
                let gx = px * cols / width;
                sums[gy * cols + gx] += pixels[py * width + px] as f64;
                counts[gy * cols + gx] += 1;
            }
        }
        let values = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| s / *c as f64)
            .collect();
        Self::new(cols, rows, values)
    }
}

fn parse_pgm(data: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // Skip whitespace and '#' comment lines.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::input("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };

    let magic = token()?;
    if magic != "P5" && magic != "P2" {
        return Err(Error::input(format!("unsupported PGM magic {magic:?}")));
    }
    let width: usize = token()?.parse().map_err(|_| Error::input("bad PGM width"))?;
    let height: usize = token()?.parse().map_err(|_| Error::input("bad PGM height"))?;
    let maxval: usize = token()?.parse().map_err(|_| Error::input("bad PGM maxval"))?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::input("only 8-bit grayscale PGM rasters are supported"));
    }
    let n = width * height;
    let pixels = if magic == "P5" {
        // Binary payload starts after exactly one whitespace byte.
        let start = pos + 1;
        if data.len() < start + n {
            return Err(Error::input("truncated PGM payload"));
        }
        data[start..start + n].to_vec()
    } else {
        let mut pixels = Vec::with_capacity(n);
        for _ in 0..n {
            let v: usize = token()?.parse().map_err(|_| Error::input("bad PGM pixel"))?;
            if v > maxval {
                return Err(Error::input("PGM pixel exceeds maxval"));
            }
            pixels.push(v as u8);
        }
        pixels
    };
    Ok((width, height, pixels))
}

/// Uniform draw over the unvisited cells.
pub fn select_random<R: Rng + ?Sized>(map: &SemanticMap, rng: &mut R) -> Result<Cell> {
    let remaining = map.unvisited_count();
    if remaining == 0 {
        return Err(Error::Exhausted);
    }
    let pick = rng.random_range(0..remaining);
    map.geometry()
        .cells()
        .filter(|&c| !map.visited(c))
        .nth(pick)
        .ok_or(Error::Exhausted)
}

/// Winner-take-all over the saliency grid restricted to unvisited cells;
/// ties break to the lowest row-major index.
pub fn select_saliency(grid: &SaliencyGrid, map: &SemanticMap) -> Result<Cell> {
    let geom = map.geometry();
    if grid.cols() != geom.grid_cols || grid.rows() != geom.grid_rows {
        return Err(Error::input(format!(
            "saliency grid is {}x{}, map grid is {}x{}",
            grid.cols(),
            grid.rows(),
            geom.grid_cols,
            geom.grid_rows
        )));
    }
    argmax_over_unvisited(map, |cell, _| grid.value(cell))
}

/// Argmax of the current target-class posterior over unvisited cells.
pub fn select_search_nonpredictive(map: &SemanticMap, target: usize) -> Result<Cell> {
    check_target(map, target)?;
    argmax_over_unvisited(map, |_, beta| beta.get(target) / beta.sum())
}

/// Simulates the expected map after fixating `candidate`: every cell is
/// updated with its expected detector scores at the cell-to-candidate
/// distance level. Fixation history and the visited mask are untouched.
pub fn predict_map(
    map: &SemanticMap,
    candidate: Cell,
    model: &CalibrationModel,
) -> Result<SemanticMap> {
    let geom = *map.geometry();
    if !geom.contains(candidate) {
        return Err(Error::input("candidate cell outside the grid"));
    }
    let fovea = geom.cell_center(candidate);
    let mut predicted = map.clone();
    for cell in geom.cells() {
        let level = distance_level(geom.cell_center(cell), fovea, &geom, model.bins());
        let beta = map.beta(cell);
        let expected = model.expected_scores(beta, level)?;
        predicted.set_beta(cell, kaplan_update(beta, expected.as_slice())?);
    }
    Ok(predicted)
}

/// Predictive target search: each unvisited candidate is scored by the
/// target posterior it would have after one update with its expected
/// foveal (innermost-level) scores; winner-take-all with row-major
/// tie-break.
pub fn select_search_predictive(
    map: &SemanticMap,
    target: usize,
    model: &CalibrationModel,
) -> Result<Cell> {
    check_target(map, target)?;
    let mut best: Option<(Cell, f64)> = None;
    for cell in map.geometry().cells() {
        if map.visited(cell) {
            continue;
        }
        let beta = map.beta(cell);
        let local = model.expected_local_scores(beta)?;
        let updated = kaplan_update(beta, local.as_slice())?;
        let score = updated.get(target) / updated.sum();
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((cell, score));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::Exhausted)
}

/// Uncertainty metric of one cell's belief.
pub fn metric_value(beta: &DirichletParams, metric: ExploreMetric) -> f64 {
    match metric {
        ExploreMetric::Kl => {
            let base = DirichletParams::symmetric(beta.len(), UNIFORM_BETA)
                .expect("valid uniform prior");
            beta.kl_divergence(&base).expect("equal lengths")
        }
        ExploreMetric::Negentropy => {
            let sum = beta.sum();
            beta.as_slice()
                .iter()
                .map(|&b| {
                    let p = b / sum;
                    if p > 0.0 {
                        p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum()
        }
        ExploreMetric::TwoPeaks => {
            let sum = beta.sum();
            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &b in beta.as_slice() {
                let p = b / sum;
                if p > top {
                    second = top;
                    top = p;
                } else if p > second {
                    second = p;
                }
            }
            top - second
        }
    }
}

/// Predictive exploration: every unvisited candidate is scored on its
/// predicted map ([`predict_map`]), either by the summed metric or by the
/// largest absolute per-cell improvement; winner-take-all with row-major
/// tie-break. The expectation is the plug-in kind: the metric is applied
/// to the expected map.
pub fn select_explore(
    map: &SemanticMap,
    model: &CalibrationModel,
    metric: ExploreMetric,
    acquisition: Acquisition,
) -> Result<Cell> {
    let geom = *map.geometry();
    let current: Vec<f64> = match acquisition {
        Acquisition::ExpectedImprovement => geom
            .cells()
            .map(|c| metric_value(map.beta(c), metric))
            .collect(),
        Acquisition::SumExpected => Vec::new(),
    };

    let mut best: Option<(Cell, f64)> = None;
    for candidate in geom.cells() {
        if map.visited(candidate) {
            continue;
        }
        let predicted = predict_map(map, candidate, model)?;
        let score = match acquisition {
            Acquisition::SumExpected => {
                // Summing in sorted order keeps symmetric candidates at
                // bitwise-equal scores, so exact ties break row-major.
                let mut vals: Vec<f64> = geom
                    .cells()
                    .map(|c| metric_value(predicted.beta(c), metric))
                    .collect();
                vals.sort_by(|a, b| a.total_cmp(b));
                vals.iter().sum::<f64>()
            }
            // The inner max runs over every cell, visited or not.
            Acquisition::ExpectedImprovement => geom
                .cells()
                .map(|c| (metric_value(predicted.beta(c), metric) - current[geom.index(c)]).abs())
                .fold(f64::NEG_INFINITY, f64::max),
        };
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((candidate, score));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::Exhausted)
}

fn check_target(map: &SemanticMap, target: usize) -> Result<()> {
    if target > map.num_classes() {
        return Err(Error::input(format!(
            "target class {target} out of range 0..={}",
            map.num_classes()
        )));
    }
    Ok(())
}

fn argmax_over_unvisited<F>(map: &SemanticMap, score: F) -> Result<Cell>
where
    F: Fn(Cell, &DirichletParams) -> f64,
{
    let mut best: Option<(Cell, f64)> = None;
    for cell in map.geometry().cells() {
        if map.visited(cell) {
            continue;
        }
        let s = score(cell, map.beta(cell));
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((cell, s));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::Exhausted)
}

/// Helper shared by the grids loaded from rasters: the geometry the grid
/// must agree with.
pub fn saliency_matches_geometry(grid: &SaliencyGrid, geometry: &GridGeometry) -> bool {
    grid.cols() == geometry.grid_cols && grid.rows() == geometry.grid_rows
}
