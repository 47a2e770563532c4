//! Dirichlet distribution kernel: density, moments, sampling, divergence,
//! and maximum-likelihood fitting.
//!
//! Everything downstream (map fusion, score calibration, gaze policies)
//! reduces to operations on `DirichletParams` over `K+1` classes, where
//! class 0 is the background class.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Floor applied to score components before any logarithm is taken.
///
/// Detectors emit exact zeros, and the Dirichlet density diverges on the
/// simplex boundary; clamping and renormalizing keeps the log-domain
/// arithmetic bounded.
pub const SCORE_CLAMP: f64 = 1e-6;

/// Tolerance on `sum(scores) - 1` accepted by [`ScoreVector::new`].
pub const SCORE_SUM_TOL: f64 = 1e-9;

/// A normalized categorical confidence vector over `K+1` classes.
///
/// Components are nonnegative and sum to 1 within [`SCORE_SUM_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector {
    scores: Vec<f64>,
}

impl ScoreVector {
    /// Validates and wraps a score vector.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidScores(format!(
                "need at least 2 components, got {}",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidScores(
                "components must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOL {
            return Err(Error::InvalidScores(format!(
                "components sum to {sum}, expected 1"
            )));
        }
        Ok(Self { scores })
    }

    /// Builds a score vector from raw nonnegative values by dividing each
    /// component by the total. Errors if the total is not positive.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::InvalidScores(format!(
                "need at least 2 components, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidScores(
                "components must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidScores(
                "components must have positive total mass".into(),
            ));
        }
        Ok(Self {
            scores: raw.iter().map(|s| s / sum).collect(),
        })
    }

    /// One-hot vector on `index` out of `len` components.
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if len < 2 || index >= len {
            return Err(Error::InvalidScores(format!(
                "one-hot index {index} out of range for length {len}"
            )));
        }
        let mut scores = vec![0.0; len];
        scores[index] = 1.0;
        Ok(Self { scores })
    }

    /// Clamps every component to at least `floor` and renormalizes.
    pub fn clamped(&self, floor: f64) -> Self {
        let raw: Vec<f64> = self.scores.iter().map(|s| s.max(floor)).collect();
        let sum: f64 = raw.iter().sum();
        Self {
            scores: raw.iter().map(|s| s / sum).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, k: usize) -> f64 {
        self.scores[k]
    }
}

/// Concentration parameters of a Dirichlet distribution over `K+1` classes.
///
/// Houses both the per-cell map state and the per-(class, distance)
/// likelihood models. Every component is finite and strictly positive and
/// the length is at least 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirichletParams {
    concentration: Vec<f64>,
}

impl DirichletParams {
    /// Validates and wraps a concentration vector.
    pub fn new(concentration: Vec<f64>) -> Result<Self> {
        if concentration.len() < 2 {
            return Err(Error::InvalidConcentration);
        }
        if concentration.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::InvalidConcentration);
        }
        Ok(Self { concentration })
    }

    /// Symmetric Dirichlet with all components equal to `value`.
    pub fn symmetric(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.concentration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concentration.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.concentration
    }

    pub fn get(&self, k: usize) -> f64 {
        self.concentration[k]
    }

    /// Total concentration.
    pub fn sum(&self) -> f64 {
        self.concentration.iter().sum()
    }

    /// Expected value of the class distribution: `a_k / sum(a)`.
    pub fn mean(&self) -> ScoreVector {
        let sum = self.sum();
        ScoreVector {
            scores: self.concentration.iter().map(|a| a / sum).collect(),
        }
    }

    /// Log of the Dirichlet density evaluated at `s`.
    ///
    /// `s` is clamped to [`SCORE_CLAMP`] and renormalized before the
    /// logarithms are taken.
    pub fn log_pdf(&self, s: &ScoreVector) -> Result<f64> {
        if s.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: s.len(),
            });
        }
        let s = s.clamped(SCORE_CLAMP);
        let mut log_norm = ln_gamma(self.sum());
        let mut log_kernel = 0.0;
        for (&a, &x) in self.concentration.iter().zip(s.as_slice()) {
            log_norm -= ln_gamma(a);
            log_kernel += (a - 1.0) * x.ln();
        }
        Ok(log_norm + log_kernel)
    }

    /// Covariance matrix of a single categorical draw at the mean:
    /// diagonal `p_i(1-p_i)`, off-diagonal `-p_i p_j`. Rows sum to zero.
    pub fn categorical_covariance(&self) -> Vec<Vec<f64>> {
        let p = self.mean();
        let p = p.as_slice();
        let n = p.len();
        let mut cov = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                cov[i][j] = if i == j {
                    p[i] * (1.0 - p[i])
                } else {
                    -p[i] * p[j]
                };
            }
        }
        cov
    }

    /// Kullback-Leibler divergence `D_KL(Dir(self) || Dir(other))` in nats,
    /// via the standard closed form in log-gamma and digamma terms.
    pub fn kl_divergence(&self, other: &DirichletParams) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        let a_sum = self.sum();
        let b_sum = other.sum();
        let psi_a_sum = digamma(a_sum);
        let mut kl = ln_gamma(a_sum) - ln_gamma(b_sum);
        for (&a, &b) in self.concentration.iter().zip(other.as_slice()) {
            kl += ln_gamma(b) - ln_gamma(a);
            kl += (a - b) * (digamma(a) - psi_a_sum);
        }
        Ok(kl.max(0.0))
    }

    /// Draws one sample from the distribution via normalized Gamma variates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScoreVector {
        let mut draws = Vec::with_capacity(self.len());
        let mut total = 0.0;
        for &a in &self.concentration {
            let g = Gamma::new(a, 1.0).expect("valid shape by invariant");
            let x: f64 = g.sample(rng);
            total += x;
            draws.push(x);
        }
        if total <= 0.0 {
            // All gamma draws underflowed (only reachable for tiny
            // concentrations); fall back to the mean.
            return self.mean();
        }
        ScoreVector {
            scores: draws.iter().map(|x| x / total).collect(),
        }
    }
}

/// Result of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: DirichletParams,
    /// False when the iteration cap was hit before the tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Mean per-sample log-likelihood after each iteration, starting with
    /// the initial guess.
    pub log_likelihood: Vec<f64>,
}

/// Relative parameter-change tolerance for [`fit_mle`].
pub const MLE_TOL: f64 = 1e-7;
/// Iteration cap for [`fit_mle`].
pub const MLE_MAX_ITERS: usize = 1000;

/// Fits Dirichlet concentration parameters to `samples` by the Minka
/// fixed-point iteration.
///
/// Samples are clamped to [`SCORE_CLAMP`] and renormalized before the
/// log statistics are accumulated. The initial guess is moment-matched.
/// Iteration stops when the relative infinity-norm parameter change drops
/// below [`MLE_TOL`] or after [`MLE_MAX_ITERS`] iterations; in the latter
/// case the current estimate is returned with `converged = false`.
pub fn fit_mle(samples: &[ScoreVector]) -> Result<MleFit> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let dim = samples[0].len();
    for s in samples {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.len(),
            });
        }
    }

    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut mean_sq = vec![0.0; dim];
    let mut mean_log = vec![0.0; dim];
    for s in samples {
        let c = s.clamped(SCORE_CLAMP);
        for (k, &x) in c.as_slice().iter().enumerate() {
            mean[k] += x;
            mean_sq[k] += x * x;
            mean_log[k] += x.ln();
        }
    }
    for k in 0..dim {
        mean[k] /= n;
        mean_sq[k] /= n;
        mean_log[k] /= n;
    }

    let mut alpha = moment_match_init(&mean, &mean_sq);
    let ll = |a: &[f64]| -> f64 {
        let sum: f64 = a.iter().sum();
        let mut v = ln_gamma(sum);
        for (k, &ak) in a.iter().enumerate() {
            v += -ln_gamma(ak) + (ak - 1.0) * mean_log[k];
        }
        v
    };

    let mut trace = vec![ll(&alpha)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..MLE_MAX_ITERS {
        iterations += 1;
        let psi_sum = digamma(alpha.iter().sum());
        let mut next = Vec::with_capacity(dim);
        let mut max_rel = 0.0f64;
        for k in 0..dim {
            let a = inverse_digamma(psi_sum + mean_log[k]);
            max_rel = max_rel.max((a - alpha[k]).abs() / alpha[k].max(f64::MIN_POSITIVE));
            next.push(a);
        }
        alpha = next;
        trace.push(ll(&alpha));
        if max_rel < MLE_TOL {
            converged = true;
            break;
        }
    }

    Ok(MleFit {
        params: DirichletParams::new(alpha)?,
        converged,
        iterations,
        log_likelihood: trace,
    })
}

/// Moment-matching initial guess: the precision is estimated per component
/// from `E[x](1-E[x])/Var[x] - 1` and the median of the usable estimates is
/// kept.
fn moment_match_init(mean: &[f64], mean_sq: &[f64]) -> Vec<f64> {
    let mut precisions: Vec<f64> = mean
        .iter()
        .zip(mean_sq)
        .filter_map(|(&m, &m2)| {
            let var = m2 - m * m;
            if var > 1e-12 {
                let s = m * (1.0 - m) / var - 1.0;
                (s > 0.0).then_some(s)
            } else {
                None
            }
        })
        .collect();
    let precision = if precisions.is_empty() {
        1.0
    } else {
        precisions.sort_by(|a, b| a.total_cmp(b));
        precisions[precisions.len() / 2]
    };
    mean.iter()
        .map(|&m| (m * precision).max(1e-8))
        .collect()
}

/// Trigamma function via the recurrence `psi'(x) = psi'(x+1) + 1/x^2` and
/// the asymptotic series for large arguments.
pub(crate) fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut value = 0.0;
    let mut x = x;
    while x < 10.0 {
        value += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    value
        + inv * (1.0 + inv / 2.0)
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

/// Inverse of the digamma function by Newton iteration from Minka's
/// starting point.
pub(crate) fn inverse_digamma(y: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + EULER_GAMMA)
    };
    for _ in 0..8 {
        let f = digamma(x) - y;
        if f.abs() < 1e-13 {
            break;
        }
        let step = f / trigamma(x);
        x -= step;
        if x <= 0.0 {
            x = f64::MIN_POSITIVE.max(x + step * 0.5);
        }
    }
    x
}
