//! Cross-module invariants: algebraic identities of the fusion rule,
//! policy/IOR contracts, calibration output validity, and quadrature
//! checks that need the test-side oracles.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use gazemap_core::calibration::{CalibrationModel, EccentricityBins};
use gazemap_core::dirichlet::{DirichletParams, ScoreVector};
use gazemap_core::geometry::{Cell, GridGeometry};
use gazemap_core::harness::{cumulative_performance, SearchResult};
use gazemap_core::map::{kaplan_update, SemanticMap};
use gazemap_core::policy::{
    select_random, select_search_nonpredictive, select_search_predictive, Acquisition,
    ExploreMetric,
};

fn dp(v: &[f64]) -> DirichletParams {
    DirichletParams::new(v.to_vec()).unwrap()
}

fn concentration(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..8.0, len..=len)
}

fn likelihood(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len..=len)
        .prop_filter("not all zero", |v| v.iter().sum::<f64>() > 1e-3)
}

proptest! {
    // The fused mean has the closed form
    // beta_i (1 + lambda_i / sum_j beta_j lambda_j) / (sum(beta) + 1),
    // an algebraic route independent of the update's own arithmetic.
    #[test]
    fn kaplan_mean_matches_closed_form(
        (beta, lambda) in (2usize..=4)
            .prop_flat_map(|n| (concentration(n), likelihood(n)))
    ) {
        let b = dp(&beta);
        let updated = kaplan_update(&b, &lambda).unwrap();
        let mean = updated.mean();
        let weighted: f64 = beta.iter().zip(&lambda).map(|(b, l)| b * l).sum();
        let total: f64 = beta.iter().sum();
        for i in 0..beta.len() {
            let expected = beta[i] * (1.0 + lambda[i] / weighted) / (total + 1.0);
            prop_assert!((mean.get(i) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn kaplan_is_scale_invariant_in_likelihood(
        (beta, lambda, scale) in (2usize..=4)
            .prop_flat_map(|n| (concentration(n), likelihood(n), 1e-3f64..1e3))
    ) {
        let b = dp(&beta);
        let a = kaplan_update(&b, &lambda).unwrap();
        let scaled: Vec<f64> = lambda.iter().map(|l| l * scale).collect();
        let c = kaplan_update(&b, &scaled).unwrap();
        for i in 0..beta.len() {
            prop_assert!((a.get(i) - c.get(i)).abs() < 1e-9 * a.get(i).max(1.0));
        }
    }

    #[test]
    fn kaplan_sum_identity(
        (beta, lambda) in (2usize..=4)
            .prop_flat_map(|n| (concentration(n), likelihood(n)))
    ) {
        let b = dp(&beta);
        let updated = kaplan_update(&b, &lambda).unwrap();
        let weighted: f64 = beta.iter().zip(&lambda).map(|(b, l)| b * l).sum();
        let min_l = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        let total: f64 = beta.iter().sum();
        let expected = (total + 1.0) / (1.0 + min_l / weighted);
        prop_assert!((updated.sum() - expected).abs() < 1e-9 * expected);
    }

    // Sampled vectors always satisfy the score invariants.
    #[test]
    fn samples_are_valid_scores(beta in (2usize..=6).prop_flat_map(concentration), seed in any::<u64>()) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let s = dp(&beta).sample(&mut rng);
        prop_assert!(ScoreVector::new(s.as_slice().to_vec()).is_ok());
    }

    // Marked cells and the fixation history stay in lockstep.
    #[test]
    fn visited_iff_in_history(marks in prop::collection::vec((0usize..4, 0usize..3), 0..20)) {
        let g = GridGeometry::new(64.0, 48.0, 4, 3).unwrap();
        let mut map = SemanticMap::init_uniform(g, 2).unwrap();
        for (x, y) in marks {
            map.mark_visited(Cell::new(x, y));
        }
        for cell in g.cells() {
            prop_assert_eq!(map.visited(cell), map.history().contains(&cell));
        }
        prop_assert_eq!(map.unvisited_count(), map.unvisited().len());
    }

    // Every selection policy returns an unvisited cell.
    #[test]
    fn selections_respect_ior(
        mask in prop::collection::vec(any::<bool>(), 12),
        betas in prop::collection::vec(concentration(3), 12),
        seed in any::<u64>(),
    ) {
        let g = GridGeometry::new(64.0, 48.0, 4, 3).unwrap();
        let mut map = SemanticMap::init_uniform(g, 2).unwrap();
        for (i, cell) in g.cells().enumerate() {
            map.set_beta_for_test(cell, dp(&betas[i]));
            if mask[i] {
                map.mark_visited(cell);
            }
        }
        let any_unvisited = mask.iter().any(|v| !v);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let picks = [
            select_random(&map, &mut rng),
            select_search_nonpredictive(&map, 1),
        ];
        for pick in picks {
            match pick {
                Ok(cell) => prop_assert!(!map.visited(cell) && any_unvisited),
                Err(gazemap_core::Error::Exhausted) => prop_assert!(!any_unvisited),
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }

    // Cumulative performance is non-decreasing and bounded in [0, 1].
    #[test]
    fn cumulative_performance_is_monotone(
        found in prop::collection::vec(prop::option::of(1usize..40), 1..30),
        horizon in 1usize..40,
    ) {
        let results: Vec<SearchResult> = found
            .into_iter()
            .map(|found_at| SearchResult {
                found: found_at.is_some(),
                found_at,
                path: Vec::new(),
                policy_times: Vec::new(),
            })
            .collect();
        let cp = cumulative_performance(&results, horizon).unwrap();
        prop_assert_eq!(cp.len(), horizon);
        let mut prev = 0.0;
        for v in cp {
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= prev);
            prev = v;
        }
    }
}

/// A small well-separated model for calibration properties.
fn separated_model(levels: usize) -> CalibrationModel {
    let bins = EccentricityBins::uniform(levels).unwrap();
    let table: Vec<Vec<DirichletParams>> = (0..3)
        .map(|k| {
            (0..levels)
                .map(|d| {
                    let peak = 20.0 - 4.0 * d as f64;
                    let mut v = vec![2.0; 3];
                    v[k] = peak;
                    dp(&v)
                })
                .collect()
        })
        .collect();
    CalibrationModel::from_tables(2, bins, table).unwrap()
}

proptest! {
    // Calibrated scores are a valid categorical distribution.
    #[test]
    fn calibrate_outputs_valid_scores(
        raw in prop::collection::vec(1e-9f64..1.0, 3..=3),
        level in 0usize..2,
    ) {
        let model = separated_model(2);
        let s = ScoreVector::normalized(&raw).unwrap();
        let out = model.calibrate(&s, level).unwrap();
        prop_assert!(ScoreVector::new(out.as_slice().to_vec()).is_ok());
    }

    // Expected scores stay inside the convex hull of the per-class
    // likelihood means (componentwise between the min and max).
    #[test]
    fn expected_scores_in_convex_hull(beta in concentration(3), level in 0usize..2) {
        let model = separated_model(2);
        let b = dp(&beta);
        let out = model.expected_scores(&b, level).unwrap();
        for i in 0..3 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 0..3 {
                let m = model.alpha(k, level).unwrap().mean();
                lo = lo.min(m.get(i));
                hi = hi.max(m.get(i));
            }
            prop_assert!(out.get(i) >= lo - 1e-12 && out.get(i) <= hi + 1e-12);
        }
    }
}

// Adding a common constant to every class log-density leaves the
// calibrated scores unchanged: the normalization absorbs it.
#[test]
fn calibration_normalization_absorbs_common_factors() {
    let model = separated_model(2);
    let s = ScoreVector::normalized(&[0.2, 0.5, 0.3]).unwrap();
    let out = model.calibrate(&s, 0).unwrap();

    let log_liks: Vec<f64> = (0..3)
        .map(|k| model.alpha(k, 0).unwrap().log_pdf(&s).unwrap())
        .collect();
    for shift in [-40.0, 0.0, 55.5] {
        let shifted: Vec<f64> = log_liks.iter().map(|l| (l + shift - 60.0).exp()).collect();
        let renorm = ScoreVector::normalized(&shifted).unwrap();
        for k in 0..3 {
            assert!((renorm.get(k) - out.get(k)).abs() < 1e-12);
        }
    }
}

// The clamped density still integrates to 1 for interior-mass parameters,
// now with fractional exponents via the tanh-sinh oracle.
#[test]
fn log_pdf_integrates_to_one_fractional_params() {
    let quad = common::TanhSinh::new(5, 3.9);
    for alpha in [[2.5, 1.7], [1.2, 4.8], [3.3, 3.3], [1.05, 2.71]] {
        let a = dp(&alpha);
        let integral = quad.integrate(|n| {
            let s = ScoreVector::new(vec![n.t, 1.0 - n.t]).unwrap();
            a.log_pdf(&s).unwrap().exp()
        });
        assert!(
            (integral - 1.0).abs() < 1e-6,
            "alpha {alpha:?}: integral {integral}"
        );
    }
}

// The tanh-sinh oracle itself reproduces Beta normalization and moments.
#[test]
fn quadrature_oracle_self_checks() {
    let quad = common::TanhSinh::new(5, 3.9);
    for alpha in [[0.4, 0.7], [1.0, 1.0], [5.5, 2.2]] {
        let ln_c = common::ln_dirichlet_const(&alpha);
        let norm = quad.integrate(|n| {
            (ln_c + (alpha[0] - 1.0) * n.ln_t + (alpha[1] - 1.0) * n.ln_1mt).exp()
        });
        assert!((norm - 1.0).abs() < 1e-9, "alpha {alpha:?}: {norm}");
        let mean = quad.integrate(|n| {
            n.t * (ln_c + (alpha[0] - 1.0) * n.ln_t + (alpha[1] - 1.0) * n.ln_1mt).exp()
        });
        let expected = alpha[0] / (alpha[0] + alpha[1]);
        assert!((mean - expected).abs() < 1e-9);
    }
}

// Fused-mean quadrature agrees with the analytic two-component case.
#[test]
fn quadrature_fused_mean_known_case() {
    // beta = [1, 1], lambda = [1, 0]: posterior ~ p0, mean [2/3, 1/3].
    let (mean, norm) = common::fused_posterior_mean_quadrature(&[1.0, 1.0], &[1.0, 0.0]);
    assert!((norm - 1.0).abs() < 1e-9);
    assert!((mean[0] - 2.0 / 3.0).abs() < 1e-9);
    assert!((mean[1] - 1.0 / 3.0).abs() < 1e-9);
}

// Predictive selection never returns a visited cell on randomized maps.
#[test]
fn predictive_selection_respects_ior_randomized() {
    let model = separated_model(3);
    let g = GridGeometry::new(64.0, 48.0, 4, 3).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    for _ in 0..200 {
        let mut map = SemanticMap::init_uniform(g, 2).unwrap();
        let mut any_unvisited = false;
        for cell in g.cells() {
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..6.0)).collect();
            map.set_beta_for_test(cell, dp(&beta));
            if rng.random_bool(0.5) {
                map.mark_visited(cell);
            } else {
                any_unvisited = true;
            }
        }
        match select_search_predictive(&map, 1, &model) {
            Ok(cell) => assert!(!map.visited(cell) && any_unvisited),
            Err(gazemap_core::Error::Exhausted) => assert!(!any_unvisited),
            Err(e) => panic!("unexpected error {e}"),
        }
        match gazemap_core::policy::select_explore(
            &map,
            &model,
            ExploreMetric::Negentropy,
            Acquisition::SumExpected,
        ) {
            Ok(cell) => assert!(!map.visited(cell) && any_unvisited),
            Err(gazemap_core::Error::Exhausted) => assert!(!any_unvisited),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
