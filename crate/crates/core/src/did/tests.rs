use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::glm::DesignMatrix;
use crate::simgen::{generate_panel, true_effect, SimConfig};

fn two_by_two(means: [f64; 4], per_cell: usize) -> DidSample {
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut t = Vec::new();
    for cell in Cell::ALL {
        for k in 0..per_cell {
            // Symmetric spread keeps the cell mean exact.
            let spread = k as f64 - (per_cell - 1) as f64 / 2.0;
            y.push(means[cell.index()] + spread);
            d.push(cell.d());
            t.push(cell.t());
        }
    }
    DidSample::from_cells(y, d, t).unwrap()
}

/// Sample with season dummies and uneven cell sizes per season.
fn seasonal_sample(seed: u64, seasons: i32) -> DidSample {
    seasonal_sample_sized(seed, seasons, 3..9)
}

fn seasonal_sample_sized(seed: u64, seasons: i32, sizes: std::ops::Range<usize>) -> DidSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut t = Vec::new();
    let mut season = Vec::new();
    for s in 0..seasons {
        for cell in Cell::ALL {
            let n = rng.random_range(sizes.clone());
            for _ in 0..n {
                y.push(rng.random_range(50.0..150.0));
                d.push(cell.d());
                t.push(cell.t());
                season.push(s);
            }
        }
    }
    let columns = (1..seasons)
        .map(|s| {
            let col = season.iter().map(|&x| f64::from(u8::from(x == s))).collect();
            (format!("season_{s}"), col)
        })
        .collect();
    let x = DesignMatrix::from_columns(y.len(), columns).unwrap();
    let mut sample = DidSample::new(y, d, t, x).unwrap();
    sample.season = season;
    sample
}

/// Within-season DiD weighted by treated-post counts, computed by direct
/// enumeration.
fn saturated_oracle(sample: &DidSample) -> f64 {
    let seasons: std::collections::BTreeSet<i32> = sample.season.iter().copied().collect();
    let n11 = sample.cell_counts()[0] as f64;
    let mut atet = 0.0;
    for s in seasons {
        let rows: Vec<usize> = (0..sample.len()).filter(|&i| sample.season[i] == s).collect();
        let sub = sample.subset(&rows);
        atet += sub.cell_counts()[0] as f64 / n11 * means_did(&sub);
    }
    atet
}

fn no_trim() -> IpwOptions {
    IpwOptions {
        trim_threshold: 1.0,
        trim_target: TrimTarget::Comparison,
    }
}

#[test]
fn textbook_two_by_two() {
    let s = two_by_two([10.0, 6.0, 5.0, 4.0], 5);
    let ipw = estimate_ipw_did(&s, &IpwOptions::default()).unwrap();
    assert!((ipw.atet - 3.0).abs() < 1e-12);
    let ols = estimate_ols_did(&s).unwrap();
    assert!((ols.atet - 3.0).abs() < 1e-10);
    assert!((means_did(&s) - 3.0).abs() < 1e-12);
}

#[test]
fn saturated_seasons_match_oracle() {
    for seed in 0..5 {
        let s = seasonal_sample(seed, 4);
        let got = estimate_ipw_did(&s, &no_trim()).unwrap().atet;
        let want = saturated_oracle(&s);
        assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn estimators_agree_without_covariates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut t = Vec::new();
    for cell in Cell::ALL {
        for _ in 0..rng.random_range(5..15) {
            y.push(rng.random_range(0.0..10.0));
            d.push(cell.d());
            t.push(cell.t());
        }
    }
    let s = DidSample::from_cells(y, d, t).unwrap();
    let ipw = estimate_ipw_did(&s, &IpwOptions::default()).unwrap().atet;
    let ols = estimate_ols_did(&s).unwrap().atet;
    let m = means_did(&s);
    assert!((ipw - m).abs() < 1e-10);
    assert!((ols - m).abs() < 1e-10);
}

#[test]
fn weights_normalize_within_cells() {
    let s = seasonal_sample(11, 3);
    let detail = ipw_did_detail(&s, &IpwOptions::default()).unwrap();
    let cells = s.cell_indices();
    for cell in Cell::ALL {
        let total: f64 = cells[cell.index()]
            .iter()
            .filter(|&&i| detail.retained[i])
            .map(|&i| detail.weights[i])
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{cell}: {total}");
    }
}

#[test]
fn lower_threshold_trims_at_least_as_much() {
    // One season dominated by treated-post rows produces extreme scores.
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut t = Vec::new();
    let mut season = Vec::new();
    for s in 0..2 {
        for cell in Cell::ALL {
            let n = if s == 1 && cell == Cell::TreatedPost { 40 } else { 2 + s as usize };
            for k in 0..n {
                y.push(k as f64);
                d.push(cell.d());
                t.push(cell.t());
                season.push(s);
            }
        }
    }
    let col: Vec<f64> = season.iter().map(|&s| f64::from(s)).collect();
    let x = DesignMatrix::from_columns(y.len(), vec![("season_1".into(), col)]).unwrap();
    let s = DidSample::new(y, d, t, x).unwrap();
    let mut last = 0;
    for thr in [1.0, 0.99, 0.95, 0.9] {
        let opts = IpwOptions {
            trim_threshold: thr,
            trim_target: TrimTarget::Comparison,
        };
        let e = estimate_ipw_did(&s, &opts).unwrap();
        assert!(e.trimmed() >= last);
        last = e.trimmed();
    }
    assert!(last > 0);
    assert_eq!(estimate_ipw_did(&s, &no_trim()).unwrap().trimmed(), 0);
}

#[test]
fn bootstrap_is_deterministic() {
    let s = seasonal_sample_sized(5, 3, 15..25);
    let mut task = EstimationTask::new(
        SeriesSelector::new("p", Quality::Organic, "CH"),
        SeriesSelector::new("p", Quality::Organic, "DE"),
        Outcome::Level,
    );
    task.bootstrap_reps = 49;
    task.seed = 17;
    let a = estimate_ipw_with_bootstrap(&s, &task, Execution::Parallel).unwrap();
    let b = estimate_ipw_with_bootstrap(&s, &task, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    task.seed = 18;
    let c = estimate_ipw_with_bootstrap(&s, &task, Execution::Sequential).unwrap();
    assert_ne!(a.se(), c.se());
}

#[test]
fn empty_and_small_cells_are_reported() {
    let s = DidSample::from_cells(vec![1.0, 2.0, 3.0], vec![true, true, false], vec![true, false, true]).unwrap();
    assert_eq!(s.check_cells(1), Err(DidError::EmptyCell(Cell::ControlPre)));
    assert!(DidError::EmptyCell(Cell::ControlPre).is_infeasible());
    let s = two_by_two([1.0, 2.0, 3.0, 4.0], 2);
    assert_eq!(
        s.check_cells(4),
        Err(DidError::TooFewObservations {
            cell: Cell::TreatedPost,
            n: 2,
            min: 4
        })
    );
    assert_eq!(DidError::EmptyCell(Cell::TreatedPre).status_code(), "empty_cell(D=1,T=0)");
}

#[test]
fn invalid_trim_is_rejected() {
    let mut task = EstimationTask::new(
        SeriesSelector::new("p", Quality::Organic, "CH"),
        SeriesSelector::new("p", Quality::Organic, "DE"),
        Outcome::Level,
    );
    task.trim_threshold = 1.5;
    assert!(matches!(task.validate(), Err(DidError::InvalidTask(_))));
}

fn sim_task(cfg: &SimConfig, outcome: Outcome) -> EstimationTask {
    let mut task = EstimationTask::new(
        SeriesSelector::new(cfg.product.clone(), cfg.quality, cfg.treated_country.clone()),
        SeriesSelector::new(cfg.product.clone(), cfg.quality, cfg.control_country.clone()),
        outcome,
    );
    task.bootstrap_reps = 0;
    task
}

#[test]
fn noise_free_panel_recovers_effect() {
    let cfg = SimConfig {
        noise_sd: 0.0,
        true_atet: 12.5,
        ..SimConfig::default()
    };
    let sim = generate_panel(&cfg).unwrap();
    let panel = sim.merged();
    let task = sim_task(&cfg, Outcome::Level);
    let sample = build_sample(&task, &panel, &sim.calendar).unwrap();
    let e = estimate_ipw_did(&sample, &task.ipw_options()).unwrap();
    assert!((e.atet - true_effect(&cfg).unwrap()).abs() < 1e-9, "{}", e.atet);

    let mut boot = task.clone();
    boot.bootstrap_reps = 29;
    boot.seed = 1;
    let e = estimate_ipw_with_bootstrap(&sample, &boot, Execution::Sequential).unwrap();
    assert!(e.se().unwrap() < 1e-9);
}

#[test]
fn volatility_sample_builds() {
    let cfg = SimConfig::default();
    let sim = generate_panel(&cfg).unwrap();
    let task = sim_task(&cfg, Outcome::Volatility);
    let sample = build_sample(&task, &sim.merged(), &sim.calendar).unwrap();
    assert!(sample.y.iter().all(|v| *v >= 0.0));
    assert!(estimate_ipw_did(&sample, &task.ipw_options()).is_ok());
}

proptest! {
    #[test]
    fn shifting_treated_post_shifts_estimate(seed in 0u64..200, shift in -50.0f64..50.0) {
        let s = seasonal_sample(seed, 3);
        let base = estimate_ipw_did(&s, &no_trim()).unwrap().atet;
        let mut shifted = s.clone();
        for i in 0..shifted.len() {
            if shifted.cell(i) == Cell::TreatedPost {
                shifted.y[i] += shift;
            }
        }
        let moved = estimate_ipw_did(&shifted, &no_trim()).unwrap().atet;
        prop_assert!((moved - base - shift).abs() < 1e-9);
    }

    #[test]
    fn common_shift_leaves_estimate(seed in 0u64..200, shift in -50.0f64..50.0) {
        let s = seasonal_sample(seed, 3);
        let base = estimate_ipw_did(&s, &no_trim()).unwrap().atet;
        let mut shifted = s.clone();
        for v in &mut shifted.y {
            *v += shift;
        }
        let moved = estimate_ipw_did(&shifted, &no_trim()).unwrap().atet;
        prop_assert!((moved - base).abs() < 1e-9);
    }
}
