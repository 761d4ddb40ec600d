use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwsgd::simulate::*;
use rwsgd::*;

fn small_cell(n: u64, mu: f64, reps: u64) -> ScenarioConfig {
    ScenarioConfig {
        replicates: 100,
        burn_in: 200,
        repetitions: reps,
        ..ScenarioConfig::new(ModelKind::LeastSquares, n, 4, 2, mu)
    }
}

#[test]
fn identical_configs_reproduce_bitwise() {
    let cfg = small_cell(500, 0.1, 6);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario_sequential(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn aggregate_ignores_repetition_order() {
    let cfg = small_cell(400, 0.1, 12);
    let outcomes: Vec<_> = (0..12).map(|r| run_repetition(&cfg, r).unwrap()).collect();
    let reference = aggregate(&cfg, outcomes.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let mut shuffled = outcomes.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(aggregate(&cfg, shuffled).unwrap(), reference);
    }
}

#[test]
fn coverage_is_near_nominal() {
    let reps = 200;
    let report = run_scenario(&small_cell(4000, 0.1, reps)).unwrap();
    let band = 3.0 * (0.05f64 * 0.95 / reps as f64).sqrt();
    for (j, c) in report.rw_coverage.iter().enumerate() {
        assert!((c - 0.95).abs() <= band, "coordinate {}: coverage {c}", j + 1);
    }
}

#[test]
fn doubling_n_shrinks_empirical_se_by_root_two() {
    let a = run_scenario(&small_cell(4000, 0.1, 200)).unwrap();
    let b = run_scenario(&small_cell(8000, 0.1, 200)).unwrap();
    for j in 0..4 {
        let ratio = b.empirical_se[j] / a.empirical_se[j];
        let target = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ratio / target - 1.0).abs() <= 0.2, "coordinate {}: ratio {ratio}", j + 1);
    }
}

#[test]
fn zero_signal_estimates_centre_on_zero() {
    let reps = 200;
    let report = run_scenario(&small_cell(2000, 0.0, reps)).unwrap();
    for j in 0..4 {
        let limit = 4.0 * report.empirical_se[j] / (reps as f64).sqrt();
        assert!(report.estimate_mean[j].abs() <= limit, "coordinate {}", j + 1);
    }
}
