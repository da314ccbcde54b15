//! Property tests for the metric and cohort layers.

use proptest::prelude::*;
use rand_distr::{Distribution, Normal};
use twindrop::cohort::{induce_bias, pc1, principal_components, standardize, standin_cohort, BiasConfig, RowRole, StandinConfig};
use twindrop::metrics::{
    bootstrap_mean_ci, conformal_adjust, reliability_and_ece, roc_auc, spearman, IntervalSet, DEFAULT_LEVELS,
};
use twindrop::nn::{Matrix, RngStream};

fn distinct(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::hash_set(-1000i32..1000, len).prop_map(|s| s.into_iter().map(|v| v as f64 / 100.0).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spearman_ignores_monotone_transforms(u in distinct(30), e in distinct(30)) {
        let base = spearman(&u, &e).unwrap();
        let exp: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let cube: Vec<f64> = e.iter().map(|v| v * v * v).collect();
        prop_assert!((spearman(&exp, &e).unwrap() - base).abs() < 1e-12);
        prop_assert!((spearman(&u, &cube).unwrap() - base).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn auc_of_negated_scores_is_the_complement(
        scores in prop::collection::vec(-5.0f64..5.0, 20),
        labels in prop::collection::vec(any::<bool>(), 20),
    ) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = roc_auc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((a + roc_auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ece_lies_in_unit_interval(
        rows in prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0, -3.0f64..3.0), 1..60),
    ) {
        let (mean, rest): (Vec<f64>, Vec<(f64, f64)>) = rows.into_iter().map(|(m, s, t)| (m, (s, t))).unzip();
        let (sd, target): (Vec<f64>, Vec<f64>) = rest.into_iter().unzip();
        let set = IntervalSet::gaussian(mean, sd, target).unwrap();
        let (curve, ece) = reliability_and_ece(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&ece));
        prop_assert!(curve.iter().all(|c| (0.0..=1.0).contains(&c.empirical)));
        prop_assert!(curve.windows(2).all(|w| w[0].empirical <= w[1].empirical));
    }

    #[test]
    fn standardization_is_idempotent(
        data in prop::collection::vec(-50.0f64..50.0, 60),
    ) {
        let x = Matrix::from_vec(20, 3, data).unwrap();
        let (once, kept, _, _) = standardize(&x);
        prop_assume!(kept.len() == 3);
        let (twice, _, _, _) = standardize(&once);
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn heteroscedastic(n: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut mean = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let m: f64 = 2.0 * rng.uniform() - 1.0;
        let s = 0.2 + rng.uniform();
        // True spread is 1.7x the reported sd: miscalibrated on purpose.
        mean.push(m);
        sd.push(s);
        target.push(m + 1.7 * s * std.sample(rng));
    }
    (mean, sd, target)
}

/// Mean coverage over the repetitions must reach nominal − 0.02; single
/// repetitions get a looser bound since one n = 2000 fold has a coverage
/// sd of about 0.016 at q = 0.5.
#[test]
fn conformal_coverage_holds_on_exchangeable_data() {
    let levels = [0.5, 0.8, 0.9];
    let reps = 10;
    let mut total = [0.0; 3];
    for rep in 0..reps {
        let mut rng = RngStream::with_stream(41, rep);
        let (m, s, t) = heteroscedastic(2000, &mut rng);
        let cal = IntervalSet::gaussian_with_levels(m, s, t, levels.to_vec()).unwrap();
        let (m, s, t) = heteroscedastic(2000, &mut rng);
        let test = IntervalSet::gaussian_with_levels(m, s, t, levels.to_vec()).unwrap();
        let (adjusted, _) = conformal_adjust(&cal, &test).unwrap();
        for (i, q) in levels.iter().enumerate() {
            let cov = adjusted.coverage(i);
            assert!(cov >= q - 0.06, "rep {rep} level {q}: coverage {cov}");
            total[i] += cov;
        }
    }
    for (i, q) in levels.iter().enumerate() {
        let mean = total[i] / reps as f64;
        assert!(mean >= q - 0.02, "level {q}: mean coverage {mean}");
    }
}

#[test]
fn default_grid_is_a_decile_ladder() {
    assert_eq!(DEFAULT_LEVELS.len(), 9);
    assert!((DEFAULT_LEVELS[0] - 0.1).abs() < 1e-12 && (DEFAULT_LEVELS[8] - 0.9).abs() < 1e-12);
}

#[test]
fn bootstrap_width_scales_as_inverse_root_n() {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut rng = RngStream::new(8);
    let small: Vec<f64> = (0..400).map(|_| std.sample(&mut rng)).collect();
    let large: Vec<f64> = (0..1600).map(|_| std.sample(&mut rng)).collect();
    let w_small = bootstrap_mean_ci(&small, 1000, 0.05, &mut rng.fork()).unwrap().width();
    let w_large = bootstrap_mean_ci(&large, 1000, 0.05, &mut rng.fork()).unwrap().width();
    let ratio = w_small / w_large;
    assert!((ratio - 2.0).abs() < 0.4, "width ratio {ratio}");
}

fn random_unit(p: usize, rng: &mut RngStream) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..p).map(|_| std.sample(rng)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

fn projected_variance(x: &Matrix, dir: &[f64]) -> f64 {
    let s: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
    twindrop::metrics::population_variance(&s)
}

#[test]
fn pc1_beats_random_directions_on_the_stand_in_cohort() {
    let table = standin_cohort(&StandinConfig::default()).unwrap();
    let pc = pc1(&table.covariates).unwrap();
    let best = projected_variance(&table.covariates, &pc.direction);
    assert!((twindrop::metrics::population_variance(&pc.scores) - best).abs() < 1e-9);
    let mut rng = RngStream::new(77);
    for _ in 0..100 {
        let d = random_unit(table.covariates.cols(), &mut rng);
        assert!(projected_variance(&table.covariates, &d) <= best + 1e-12);
    }
}

#[test]
fn later_components_are_orthogonal_and_smaller() {
    let table = standin_cohort(&StandinConfig::default()).unwrap();
    let comps = principal_components(&table.covariates, 3).unwrap();
    for w in comps.windows(2) {
        assert!(w[0].eigenvalue >= w[1].eigenvalue);
        let dot: f64 = w[0].direction.iter().zip(&w[1].direction).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-8);
    }
}

#[test]
fn keep_indicator_is_anti_correlated_with_the_score() {
    let cfg = BiasConfig::default();
    let mut rng = RngStream::new(5);
    let std = Normal::new(0.0, 1.5).unwrap();
    let scores: Vec<f64> = (0..10_000).map(|_| std.sample(&mut rng)).collect();
    let kept: Vec<f64> = scores
        .iter()
        .map(|&s| f64::from(u8::from(rng.uniform() < cfg.keep_probability(s))))
        .collect();
    assert!(spearman(&scores, &kept).unwrap() < 0.0);
    for w in [-3.0f64, -1.0, 0.0, 0.5, 2.0, 4.0].windows(2) {
        assert!(cfg.keep_probability(w[0]) >= cfg.keep_probability(w[1]));
    }
}

#[test]
fn biased_split_keeps_lower_scores_on_a_large_cohort() {
    let table = standin_cohort(&StandinConfig { n: 10_000, ..StandinConfig::default() }).unwrap();
    let split = induce_bias(&table, &BiasConfig::default()).unwrap();
    let eligible: Vec<_> = split.manifest.iter().filter(|r| r.role != RowRole::Test).collect();
    let scores: Vec<f64> = eligible.iter().map(|r| r.pc_score).collect();
    let kept: Vec<f64> = eligible.iter().map(|r| f64::from(u8::from(r.kept))).collect();
    assert!(spearman(&scores, &kept).unwrap() < 0.0);
    let test_flags = split.test.ood.as_ref().expect("test fold carries flags");
    assert_eq!(test_flags.len(), split.test_index.len());
}
