//! The foveal observation model: per-(class, eccentricity-level) Dirichlet
//! likelihoods, detector-score calibration, and expected-score prediction.

use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dirichlet::{fit_mle, DirichletParams, ScoreVector};
use crate::error::{Error, Result};
use crate::geometry::GridGeometry;

/// Minimum training samples for a (class, level) bin to be fitted on its
/// own; sparser bins fall back at lookup time.
pub const MIN_SAMPLES_PER_BIN: usize = 50;

/// Discretization of the focal distance into `N` levels.
///
/// Edges are upper bin bounds, strictly increasing, expressed as fractions
/// of the image half-diagonal; the last edge is 1.0. Normalized distances
/// beyond 1.0 (possible when the fovea sits off-center) fall into the last
/// level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccentricityBins {
    edges: Vec<f64>,
}

impl EccentricityBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::input("need at least one eccentricity level"));
        }
        let mut prev = 0.0;
        for &e in &edges {
            if !(e > prev) || !e.is_finite() {
                return Err(Error::input(
                    "bin edges must be strictly increasing in (0, 1]",
                ));
            }
            prev = e;
        }
        if edges.last() != Some(&1.0) {
            return Err(Error::input("the last bin edge must be 1.0"));
        }
        Ok(Self { edges })
    }

    /// `n` uniform levels over [0, 1].
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("need at least one eccentricity level"));
        }
        Self::new((1..=n).map(|i| i as f64 / n as f64).collect())
    }

    pub fn num_levels(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Lower edge of a level (0 for the innermost).
    pub fn lower_edge(&self, level: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            self.edges[level - 1]
        }
    }

    /// First level whose upper edge is at least `d`; distances above the
    /// last edge are clamped into the last level.
    pub fn level_for_normalized(&self, d: f64) -> usize {
        self.edges
            .iter()
            .position(|&e| e >= d)
            .unwrap_or(self.edges.len() - 1)
    }
}

/// Euclidean distance between two pixel points normalized by the image
/// half-diagonal.
pub fn normalized_distance(p: (f64, f64), q: (f64, f64), geometry: &GridGeometry) -> f64 {
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() / geometry.half_diagonal()
}

/// Eccentricity level of a detection: distance from the box center to the
/// fovea center, normalized by the half-diagonal and binned.
pub fn distance_level(
    box_center: (f64, f64),
    fovea_center: (f64, f64),
    geometry: &GridGeometry,
    bins: &EccentricityBins,
) -> usize {
    bins.level_for_normalized(normalized_distance(box_center, fovea_center, geometry))
}

/// One labeled detection used to train the observation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub scores: ScoreVector,
    pub true_class: usize,
    /// Normalized focal distance in [0, 1].
    pub distance: f64,
}

/// The trained foveal observation model: a `(K+1) x N` table of Dirichlet
/// likelihood parameters indexed by class and eccentricity level.
///
/// Entries with too few training samples are left unpopulated and resolve
/// through backoff: nearest populated level of the same class, then the
/// pooled per-class fit, then an error.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    num_classes: usize,
    bins: EccentricityBins,
    alpha: Vec<Vec<Option<DirichletParams>>>,
    counts: Vec<Vec<u64>>,
    global_alpha: Vec<Option<DirichletParams>>,
    // Backoff resolution and likelihood means, precomputed per (class, level).
    resolved: Vec<Vec<Option<DirichletParams>>>,
    resolved_mean: Vec<Vec<Option<Vec<f64>>>>,
}

impl CalibrationModel {
    /// Fits the model from labeled records partitioned by
    /// (true class, distance level), using [`MIN_SAMPLES_PER_BIN`].
    pub fn train(
        records: &[TrainingRecord],
        num_classes: usize,
        bins: EccentricityBins,
    ) -> Result<Self> {
        Self::train_with_min_samples(records, num_classes, bins, MIN_SAMPLES_PER_BIN)
    }

    /// Like [`CalibrationModel::train`] with an explicit sparsity cutoff.
    pub fn train_with_min_samples(
        records: &[TrainingRecord],
        num_classes: usize,
        bins: EccentricityBins,
        min_samples: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::input("no training records"));
        }
        let dim = num_classes + 1;
        let levels = bins.num_levels();
        let min_samples = min_samples.max(2);

        let mut partitions: Vec<Vec<Vec<ScoreVector>>> = vec![vec![Vec::new(); levels]; dim];
        let mut pooled: Vec<Vec<ScoreVector>> = vec![Vec::new(); dim];
        for (i, r) in records.iter().enumerate() {
            if r.true_class >= dim {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!("class {} out of range 0..={}", r.true_class, num_classes),
                });
            }
            if r.scores.len() != dim {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!("score vector has {} components, expected {dim}", r.scores.len()),
                });
            }
            if !(0.0..=1.0).contains(&r.distance) {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!("distance {} outside [0, 1]", r.distance),
                });
            }
            let level = bins.level_for_normalized(r.distance);
            partitions[r.true_class][level].push(r.scores.clone());
            pooled[r.true_class].push(r.scores.clone());
        }

        let mut alpha = vec![vec![None; levels]; dim];
        let mut counts = vec![vec![0u64; levels]; dim];
        for k in 0..dim {
            for d in 0..levels {
                let part = &partitions[k][d];
                counts[k][d] = part.len() as u64;
                if part.len() >= min_samples {
                    alpha[k][d] = Some(fit_mle(part)?.params);
                }
            }
        }
        let global_alpha = pooled
            .iter()
            .map(|part| {
                if part.len() >= min_samples {
                    fit_mle(part).map(|f| Some(f.params))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self::assemble(num_classes, bins, alpha, counts, global_alpha))
    }

    /// Builds a model directly from known parameter tables (no fitting).
    /// Useful for synthetic setups and tests.
    pub fn from_tables(
        num_classes: usize,
        bins: EccentricityBins,
        alpha: Vec<Vec<DirichletParams>>,
    ) -> Result<Self> {
        let dim = num_classes + 1;
        if alpha.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: alpha.len(),
            });
        }
        let levels = bins.num_levels();
        let mut table = vec![vec![None; levels]; dim];
        for (k, row) in alpha.into_iter().enumerate() {
            if row.len() != levels {
                return Err(Error::DimensionMismatch {
                    expected: levels,
                    actual: row.len(),
                });
            }
            for (d, a) in row.into_iter().enumerate() {
                if a.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: a.len(),
                    });
                }
                table[k][d] = Some(a);
            }
        }
        let counts = vec![vec![0u64; levels]; dim];
        Ok(Self::assemble(num_classes, bins, table, counts, vec![None; dim]))
    }

    fn assemble(
        num_classes: usize,
        bins: EccentricityBins,
        alpha: Vec<Vec<Option<DirichletParams>>>,
        counts: Vec<Vec<u64>>,
        global_alpha: Vec<Option<DirichletParams>>,
    ) -> Self {
        let dim = num_classes + 1;
        let levels = bins.num_levels();
        let mut resolved = vec![vec![None; levels]; dim];
        let mut resolved_mean = vec![vec![None; levels]; dim];
        for k in 0..dim {
            for d in 0..levels {
                let direct = alpha[k][d].clone();
                let fallback = direct
                    .or_else(|| nearest_populated(&alpha[k], d))
                    .or_else(|| global_alpha[k].clone());
                if let Some(a) = fallback {
                    resolved_mean[k][d] = Some(a.mean().as_slice().to_vec());
                    resolved[k][d] = Some(a);
                }
            }
        }
        Self {
            num_classes,
            bins,
            alpha,
            counts,
            global_alpha,
            resolved,
            resolved_mean,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn bins(&self) -> &EccentricityBins {
        &self.bins
    }

    /// The directly fitted entry for (class, level), if populated.
    pub fn alpha(&self, class: usize, level: usize) -> Option<&DirichletParams> {
        self.alpha[class][level].as_ref()
    }

    /// Training sample count per (class, level).
    pub fn count(&self, class: usize, level: usize) -> u64 {
        self.counts[class][level]
    }

    /// The entry used for (class, level) after backoff resolution.
    pub fn resolved_alpha(&self, class: usize, level: usize) -> Result<&DirichletParams> {
        self.resolved[class][level]
            .as_ref()
            .ok_or(Error::CalibrationUnavailable { class })
    }

    /// Whether (class, level) resolves through backoff rather than its own
    /// fitted entry.
    pub fn is_backed_off(&self, class: usize, level: usize) -> bool {
        self.alpha[class][level].is_none()
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.bins.num_levels() {
            return Err(Error::input(format!(
                "distance level {level} out of range 0..{}",
                self.bins.num_levels()
            )));
        }
        Ok(())
    }

    /// Calibrated scores: component `k` is proportional to the Dirichlet
    /// likelihood of `s` under the class-`k` parameters at `level`,
    /// normalized to sum to 1. Computed in log space with max subtraction.
    pub fn calibrate(&self, s: &ScoreVector, level: usize) -> Result<ScoreVector> {
        self.check_level(level)?;
        let dim = self.num_classes + 1;
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.len(),
            });
        }
        let mut log_lik = Vec::with_capacity(dim);
        for k in 0..dim {
            log_lik.push(self.resolved_alpha(k, level)?.log_pdf(s)?);
        }
        let max = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_lik.iter().map(|l| (l - max).exp()).collect();
        ScoreVector::normalized(&unnorm)
    }

    /// Expected detector scores for a cell with belief `beta` observed at
    /// `level`: the likelihood means weighted by the cell posterior.
    pub fn expected_scores(&self, beta: &DirichletParams, level: usize) -> Result<ScoreVector> {
        self.check_level(level)?;
        let dim = self.num_classes + 1;
        if beta.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: beta.len(),
            });
        }
        let beta_sum = beta.sum();
        let mut expected = vec![0.0; dim];
        for k in 0..dim {
            let mean = self.resolved_mean[k][level]
                .as_ref()
                .ok_or(Error::CalibrationUnavailable { class: k })?;
            let weight = beta.get(k) / beta_sum;
            for (e, m) in expected.iter_mut().zip(mean) {
                *e += weight * m;
            }
        }
        ScoreVector::normalized(&expected)
    }

    /// Expected detector scores at the innermost distance level.
    pub fn expected_local_scores(&self, beta: &DirichletParams) -> Result<ScoreVector> {
        self.expected_scores(beta, 0)
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(&ModelDoc::from(self))
            .map_err(|e| Error::json("serializing calibration model", e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json_string()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(s).map_err(|e| Error::json("parsing calibration model", e))?;
        doc.try_into()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let doc: ModelDoc = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
        doc.try_into()
    }
}

fn nearest_populated(row: &[Option<DirichletParams>], level: usize) -> Option<DirichletParams> {
    // Ties prefer the level closer to the fovea.
    (0..row.len())
        .filter(|&d| row[d].is_some())
        .min_by_key(|&d| (level.abs_diff(d), d))
        .and_then(|d| row[d].clone())
}

/// On-disk form: `{K, bins, alpha, counts, global_alpha}` with `alpha`
/// indexed `[class][level]`, null for unpopulated entries.
#[derive(Serialize, Deserialize)]
struct ModelDoc {
    #[serde(rename = "K")]
    num_classes: usize,
    bins: EccentricityBins,
    alpha: Vec<Vec<Option<Vec<f64>>>>,
    counts: Vec<Vec<u64>>,
    global_alpha: Vec<Option<Vec<f64>>>,
}

impl From<&CalibrationModel> for ModelDoc {
    fn from(m: &CalibrationModel) -> Self {
        Self {
            num_classes: m.num_classes,
            bins: m.bins.clone(),
            alpha: m
                .alpha
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|a| a.as_ref().map(|a| a.as_slice().to_vec()))
                        .collect()
                })
                .collect(),
            counts: m.counts.clone(),
            global_alpha: m
                .global_alpha
                .iter()
                .map(|a| a.as_ref().map(|a| a.as_slice().to_vec()))
                .collect(),
        }
    }
}

impl TryFrom<ModelDoc> for CalibrationModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let bins = EccentricityBins::new(doc.bins.edges)?;
        let dim = doc.num_classes + 1;
        let levels = bins.num_levels();
        if doc.alpha.len() != dim || doc.counts.len() != dim || doc.global_alpha.len() != dim {
            return Err(Error::input("alpha table does not match K"));
        }
        let parse_row = |row: Vec<Option<Vec<f64>>>| -> Result<Vec<Option<DirichletParams>>> {
            row.into_iter()
                .map(|a| a.map(DirichletParams::new).transpose())
                .collect()
        };
        let mut alpha = Vec::with_capacity(dim);
        for row in doc.alpha {
            if row.len() != levels {
                return Err(Error::input("alpha row does not match the bin count"));
            }
            alpha.push(parse_row(row)?);
        }
        let global_alpha = parse_row(doc.global_alpha)?;
        for row in &doc.counts {
            if row.len() != levels {
                return Err(Error::input("counts row does not match the bin count"));
            }
        }
        Ok(Self::assemble(
            doc.num_classes,
            bins,
            alpha,
            doc.counts,
            global_alpha,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::DirichletParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn dp(v: &[f64]) -> DirichletParams {
        DirichletParams::new(v.to_vec()).unwrap()
    }

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn geom() -> GridGeometry {
        GridGeometry::new(640.0, 480.0, 10, 10).unwrap()
    }

    #[test]
    fn bins_validation() {
        assert!(EccentricityBins::new(vec![0.5, 1.0]).is_ok());
        assert!(EccentricityBins::new(vec![]).is_err());
        assert!(EccentricityBins::new(vec![0.5, 0.5, 1.0]).is_err());
        assert!(EccentricityBins::new(vec![0.5, 0.9]).is_err());
    }

    #[test]
    fn uniform_bins_levels() {
        let bins = EccentricityBins::uniform(5).unwrap();
        assert_eq!(bins.edges(), &[0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(bins.level_for_normalized(0.0), 0);
        assert_eq!(bins.level_for_normalized(0.5), 2);
        assert_eq!(bins.level_for_normalized(1.0), 4);
        // Beyond the half-diagonal: clamped into the outermost level.
        assert_eq!(bins.level_for_normalized(1.7), 4);
    }

    #[test]
    fn distance_level_examples() {
        let g = geom();
        let bins = EccentricityBins::uniform(5).unwrap();
        let center = (g.image_width / 2.0, g.image_height / 2.0);
        // Box center at the fovea center.
        assert_eq!(distance_level(center, center, &g, &bins), 0);
        // Box center at the image corner, fovea at the image center.
        assert_eq!(distance_level((0.0, 0.0), center, &g, &bins), 4);
    }

    #[test]
    fn calibrate_two_class_example() {
        let bins = EccentricityBins::uniform(1).unwrap();
        let model = CalibrationModel::from_tables(
            1,
            bins,
            vec![vec![dp(&[5.0, 1.0])], vec![dp(&[1.0, 5.0])]],
        )
        .unwrap();
        let out = model.calibrate(&sv(&[0.8, 0.2]), 0).unwrap();
        // Log-likelihood gap is 4 ln 4, so the posterior is 256/257.
        assert!((out.get(0) - 256.0 / 257.0).abs() < 1e-9);
        assert!((out.get(1) - 1.0 / 257.0).abs() < 1e-9);

        // Swapping class roles swaps the output.
        let swapped = CalibrationModel::from_tables(
            1,
            EccentricityBins::uniform(1).unwrap(),
            vec![vec![dp(&[1.0, 5.0])], vec![dp(&[5.0, 1.0])]],
        )
        .unwrap();
        let out2 = swapped.calibrate(&sv(&[0.8, 0.2]), 0).unwrap();
        assert!((out2.get(0) - out.get(1)).abs() < 1e-12);
        assert!((out2.get(1) - out.get(0)).abs() < 1e-12);
    }

    #[test]
    fn calibrate_identical_alphas_is_uniform() {
        let bins = EccentricityBins::uniform(2).unwrap();
        let a = dp(&[3.0, 2.0, 1.0]);
        let model = CalibrationModel::from_tables(
            2,
            bins,
            vec![
                vec![a.clone(), a.clone()],
                vec![a.clone(), a.clone()],
                vec![a.clone(), a],
            ],
        )
        .unwrap();
        let out = model.calibrate(&sv(&[0.6, 0.3, 0.1]), 1).unwrap();
        for k in 0..3 {
            assert!((out.get(k) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_scores_endpoints() {
        let bins = EccentricityBins::uniform(2).unwrap();
        let a0 = dp(&[8.0, 1.0, 1.0]);
        let a1 = dp(&[1.0, 8.0, 1.0]);
        let a2 = dp(&[1.0, 1.0, 8.0]);
        let model = CalibrationModel::from_tables(
            2,
            bins,
            vec![
                vec![a0.clone(), a0.clone()],
                vec![a1.clone(), a1.clone()],
                vec![a2.clone(), a2.clone()],
            ],
        )
        .unwrap();

        // Dominant beta on class 1: expected scores approach mean(a1).
        let beta = dp(&[0.5, 1e6, 0.5]);
        let out = model.expected_scores(&beta, 0).unwrap();
        let target = a1.mean();
        for k in 0..3 {
            assert!((out.get(k) - target.get(k)).abs() < 1e-5);
        }

        // Uniform beta over two classes: arithmetic mean of the two means.
        let bins = EccentricityBins::uniform(1).unwrap();
        let b0 = dp(&[6.0, 2.0]);
        let b1 = dp(&[2.0, 6.0]);
        let model2 =
            CalibrationModel::from_tables(1, bins, vec![vec![b0.clone()], vec![b1.clone()]])
                .unwrap();
        let out2 = model2.expected_scores(&dp(&[1.0, 1.0]), 0).unwrap();
        for k in 0..2 {
            let avg = 0.5 * (b0.mean().get(k) + b1.mean().get(k));
            assert!((out2.get(k) - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_scores_matches_monte_carlo() {
        let bins = EccentricityBins::uniform(2).unwrap();
        let table = vec![
            vec![dp(&[6.0, 1.0, 2.0]), dp(&[4.0, 2.0, 2.0])],
            vec![dp(&[1.0, 7.0, 1.0]), dp(&[2.0, 5.0, 2.0])],
            vec![dp(&[1.5, 1.5, 6.0]), dp(&[2.0, 2.0, 5.0])],
        ];
        let model = CalibrationModel::from_tables(2, bins, table.clone()).unwrap();
        let beta = dp(&[0.9, 2.1, 0.4]);
        let level = 1;
        let expected = model.expected_scores(&beta, level).unwrap();

        // Generative oracle: sample a class from the cell posterior, then a
        // score vector from that class's likelihood.
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let posterior = beta.mean();
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let u: f64 = rand::Rng::random(&mut rng);
            let mut k = 0;
            let mut cum = 0.0;
            for (i, &p) in posterior.as_slice().iter().enumerate() {
                cum += p;
                if u <= cum {
                    k = i;
                    break;
                }
            }
            let s = table[k][level].sample(&mut rng);
            for (a, &x) in acc.iter_mut().zip(s.as_slice()) {
                *a += x;
            }
        }
        for k in 0..3 {
            let emp = acc[k] / n as f64;
            assert!(
                (emp - expected.get(k)).abs() < 0.01,
                "component {k}: {emp} vs {}",
                expected.get(k)
            );
        }
    }

    #[test]
    fn expected_local_scores_is_level_zero() {
        let bins = EccentricityBins::uniform(3).unwrap();
        let a = dp(&[4.0, 2.0]);
        let b = dp(&[2.0, 4.0]);
        let model = CalibrationModel::from_tables(
            1,
            bins,
            vec![vec![a.clone(), b.clone(), a.clone()], vec![b.clone(), a, b]],
        )
        .unwrap();
        let beta = dp(&[1.3, 0.6]);
        assert_eq!(
            model.expected_local_scores(&beta).unwrap(),
            model.expected_scores(&beta, 0).unwrap()
        );
    }

    #[test]
    fn train_recovers_generating_tables() {
        // Closed-loop generative oracle: synthesize records from known
        // alpha tables, refit, compare.
        let bins = EccentricityBins::uniform(2).unwrap();
        let truth = [
            [dp(&[9.0, 2.0, 2.0]), dp(&[5.0, 3.0, 3.0])],
            [dp(&[2.0, 9.0, 2.0]), dp(&[3.0, 5.0, 3.0])],
            [dp(&[2.0, 2.0, 9.0]), dp(&[3.0, 3.0, 5.0])],
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let mut records = Vec::new();
        for k in 0..3usize {
            for d in 0..2usize {
                for _ in 0..10_000 {
                    records.push(TrainingRecord {
                        scores: truth[k][d].sample(&mut rng),
                        true_class: k,
                        distance: if d == 0 { 0.25 } else { 0.75 },
                    });
                }
            }
        }
        let model = CalibrationModel::train(&records, 2, bins).unwrap();
        for k in 0..3 {
            for d in 0..2 {
                let fitted = model.alpha(k, d).expect("populated");
                for i in 0..3 {
                    let rel = (fitted.get(i) - truth[k][d].get(i)).abs() / truth[k][d].get(i);
                    assert!(rel < 0.05, "class {k} level {d} component {i}: {rel}");
                }
            }
        }
    }

    #[test]
    fn train_is_deterministic() {
        let bins = EccentricityBins::uniform(2).unwrap();
        let truth = dp(&[4.0, 2.0, 1.0]);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let records: Vec<TrainingRecord> = (0..200)
            .map(|i| TrainingRecord {
                scores: truth.sample(&mut rng),
                true_class: i % 3,
                distance: 0.3,
            })
            .collect();
        let m1 = CalibrationModel::train_with_min_samples(&records, 2, bins.clone(), 10).unwrap();
        let m2 = CalibrationModel::train_with_min_samples(&records, 2, bins, 10).unwrap();
        assert_eq!(m1.to_json_string().unwrap(), m2.to_json_string().unwrap());
    }

    #[test]
    fn train_flags_sparse_bins_and_backs_off() {
        let bins = EccentricityBins::uniform(3).unwrap();
        let truth = dp(&[5.0, 2.0]);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        // All records of class 0 at level 0 only.
        let records: Vec<TrainingRecord> = (0..100)
            .map(|_| TrainingRecord {
                scores: truth.sample(&mut rng),
                true_class: 0,
                distance: 0.1,
            })
            .collect();
        let model =
            CalibrationModel::train_with_min_samples(&records, 1, bins, 10).unwrap();
        assert!(model.alpha(0, 0).is_some());
        assert!(model.alpha(0, 1).is_none());
        assert!(model.alpha(0, 2).is_none());
        assert!(model.is_backed_off(0, 2));
        // Levels 1 and 2 resolve to the level-0 fit for class 0.
        assert_eq!(
            model.resolved_alpha(0, 2).unwrap(),
            model.alpha(0, 0).unwrap()
        );
        // Class 1 never observed: no entry at any backoff.
        assert!(matches!(
            model.resolved_alpha(1, 0),
            Err(Error::CalibrationUnavailable { class: 1 })
        ));
        assert!(model.calibrate(&sv(&[0.5, 0.5]), 0).is_err());
    }

    #[test]
    fn train_rejects_empty_and_bad_records() {
        let bins = EccentricityBins::uniform(2).unwrap();
        assert!(CalibrationModel::train(&[], 1, bins.clone()).is_err());
        let bad = TrainingRecord {
            scores: sv(&[0.5, 0.5]),
            true_class: 7,
            distance: 0.5,
        };
        assert!(CalibrationModel::train(&[bad], 1, bins).is_err());
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let bins = EccentricityBins::uniform(2).unwrap();
        let truth = dp(&[4.0, 2.0, 1.0]);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let records: Vec<TrainingRecord> = (0..600)
            .map(|i| TrainingRecord {
                scores: truth.sample(&mut rng),
                true_class: i % 3,
                distance: if i % 2 == 0 { 0.2 } else { 0.9 },
            })
            .collect();
        let model = CalibrationModel::train_with_min_samples(&records, 2, bins, 10).unwrap();
        let json = model.to_json_string().unwrap();
        let restored = CalibrationModel::from_json_str(&json).unwrap();
        assert_eq!(model, restored);
        assert_eq!(json, restored.to_json_string().unwrap());
    }
}
