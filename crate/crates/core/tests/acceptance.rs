//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! budget. Exits non-zero if any criterion outside `KNOWN_UNATTAINABLE` fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seasonal_did::calendar::PhaseLabel;
use seasonal_did::diagnostics::{heterogeneity_regression, join_effects_attributes, pretrend_placebo};
use seasonal_did::did::{
    build_sample, estimate_ipw_did, estimate_ipw_with_bootstrap, estimate_ols_did, ipw_did_detail,
    means_did, prepare_outcomes, Cell, DidSample, EstimationTask, IpwOptions,
    SeriesSelector, TrimTarget,
};
use seasonal_did::exec::{map_indexed, Execution};
use seasonal_did::glm::{fit_logistic, fit_ols, logistic_log_likelihood, logistic_score, DesignMatrix};
use seasonal_did::io::{read_attributes, read_effects};
use seasonal_did::panel::{apply_boundary_exclusion, label_observations, Panel, PriceObservation};
use seasonal_did::simgen::{generate_panel, true_effect, SimConfig};
use seasonal_did::transforms::compute_volatility;
use seasonal_did::Outcome;

/// Criteria that cannot be met from the material shipped with the repo; see
/// the README. They still run and report FAIL.
const KNOWN_UNATTAINABLE: [u8; 1] = [9];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn task_for(cfg: &SimConfig, outcome: Outcome) -> EstimationTask {
    let mut t = EstimationTask::new(
        SeriesSelector::new(cfg.product.clone(), cfg.quality, cfg.treated_country.clone()),
        SeriesSelector::new(cfg.product.clone(), cfg.quality, cfg.control_country.clone()),
        outcome,
    );
    t.bootstrap_reps = 0;
    t
}

fn random_cells(rng: &mut ChaCha8Rng, sizes: std::ops::Range<usize>) -> DidSample {
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut t = Vec::new();
    for cell in Cell::ALL {
        for _ in 0..rng.random_range(sizes.clone()) {
            y.push(rng.random_range(-100.0..100.0));
            d.push(cell.d());
            t.push(cell.t());
        }
    }
    DidSample::from_cells(y, d, t).unwrap()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = random_cells(&mut rng, 1..12);
        let m = means_did(&s);
        let ipw = estimate_ipw_did(&s, &IpwOptions::default()).unwrap().atet;
        let ols = estimate_ols_did(&s).unwrap().atet;
        worst = worst.max((ipw - m).abs()).max((ols - m).abs());
    }
    verdict(worst < 1e-10, format!("max |IPW - means|, |OLS - means| = {worst:.2e} over 100 samples"))
}

/// Within-season DiD weighted by each season's share of treated-post rows.
fn stratum_oracle(s: &DidSample) -> f64 {
    let mut by: BTreeMap<i32, ([f64; 4], [usize; 4])> = BTreeMap::new();
    for i in 0..s.len() {
        let e = by.entry(s.season[i]).or_default();
        e.0[s.cell(i).index()] += s.y[i];
        e.1[s.cell(i).index()] += 1;
    }
    let n11: usize = by.values().map(|(_, n)| n[0]).sum();
    by.values()
        .map(|(sum, n)| {
            let m: Vec<f64> = (0..4).map(|c| sum[c] / n[c] as f64).collect();
            n[0] as f64 / n11 as f64 * ((m[0] - m[1]) - (m[2] - m[3]))
        })
        .sum()
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut max_strata = 0;
    while done < 50 {
        let cfg = SimConfig {
            n_seasons: rng.random_range(1..=6),
            missing_week_prob: rng.random_range(0.0..0.4),
            true_atet: rng.random_range(-30.0..30.0),
            trend_divergence: rng.random_range(-1.0..1.0),
            noise_sd: 3.0,
            seed: rng.random(),
            ..SimConfig::default()
        };
        let sim = generate_panel(&cfg).unwrap();
        let mut task = task_for(&cfg, Outcome::Level);
        task.min_cell_size = 1;
        let Ok(sample) = build_sample(&task, &sim.merged(), &sim.calendar) else {
            continue;
        };
        let opts = IpwOptions {
            trim_threshold: 1.0,
            trim_target: TrimTarget::Comparison,
        };
        let got = estimate_ipw_did(&sample, &opts).unwrap().atet;
        worst = worst.max((got - stratum_oracle(&sample)).abs());
        max_strata = max_strata.max(sample.season.iter().collect::<BTreeSet<_>>().len());
        done += 1;
    }
    verdict(
        worst < 1e-8,
        format!("max |IPW - oracle| = {worst:.2e} over 50 panels (up to {max_strata} strata)"),
    )
}

fn large_config() -> SimConfig {
    SimConfig {
        n_seasons: 25,
        first_week: 8,
        weeks_per_season: 40,
        protected_window: (12, 27),
        true_atet: 20.0,
        noise_sd: 4.0,
        ..SimConfig::default()
    }
}

fn criterion_3() -> Verdict {
    let base = large_config();
    let task = task_for(&base, Outcome::Level);
    let estimates: Vec<(f64, usize)> = map_indexed(200, Execution::Parallel, |r| {
        let cfg = SimConfig {
            seed: 3000 + r as u64,
            ..base.clone()
        };
        let sim = generate_panel(&cfg).unwrap();
        let sample = build_sample(&task, &sim.merged(), &sim.calendar).unwrap();
        (estimate_ipw_did(&sample, &task.ipw_options()).unwrap().atet, sample.len())
    });
    let mean = estimates.iter().map(|e| e.0).sum::<f64>() / estimates.len() as f64;
    let n_obs = estimates[0].1;

    let exact_cfg = SimConfig {
        noise_sd: 0.0,
        ..base.clone()
    };
    let sim = generate_panel(&exact_cfg).unwrap();
    let sample = build_sample(&task, &sim.merged(), &sim.calendar).unwrap();
    let exact = estimate_ipw_did(&sample, &task.ipw_options()).unwrap().atet;
    let exact_err = (exact - true_effect(&exact_cfg).unwrap()).abs();
    verdict(
        (mean - 20.0).abs() <= 0.5 && exact_err < 1e-9,
        format!("mean over 200 reps = {mean:.4} (~{n_obs} obs each); noise-free error = {exact_err:.2e}"),
    )
}

fn criterion_4() -> Verdict {
    let base = SimConfig::default();
    let truth = true_effect(&base).unwrap();
    let mut task = task_for(&base, Outcome::Level);
    task.bootstrap_reps = 199;
    let covered: Vec<Option<bool>> = map_indexed(300, Execution::Parallel, |r| {
        let cfg = SimConfig {
            seed: 4000 + r as u64,
            ..base.clone()
        };
        let sim = generate_panel(&cfg).unwrap();
        let sample = build_sample(&task, &sim.merged(), &sim.calendar).ok()?;
        let mut t = task.clone();
        t.seed = r as u64;
        let e = estimate_ipw_with_bootstrap(&sample, &t, Execution::Sequential).ok()?;
        let (lo, hi) = e.inference?.ci_normal;
        Some(lo <= truth && truth <= hi)
    });
    let failed = covered.iter().filter(|c| c.is_none()).count();
    let hits = covered.iter().filter(|c| **c == Some(true)).count();
    let rate = hits as f64 / 300.0;
    verdict(
        failed == 0 && (0.90..=0.98).contains(&rate),
        format!("coverage {rate:.3} ({hits}/300), {failed} replications failed"),
    )
}

fn rejection_rate(divergence: f64, seed0: u64) -> (f64, usize) {
    let base = SimConfig {
        trend_divergence: divergence,
        ..SimConfig::default()
    };
    let mut task = task_for(&base, Outcome::Level);
    task.bootstrap_reps = 199;
    let results: Vec<Option<bool>> = map_indexed(500, Execution::Parallel, |r| {
        let cfg = SimConfig {
            seed: seed0 + r as u64,
            ..base.clone()
        };
        let sim = generate_panel(&cfg).unwrap();
        let mut t = task.clone();
        t.seed = r as u64;
        let e = pretrend_placebo(&t, &sim.merged(), &sim.calendar, Execution::Sequential).ok()?;
        Some(e.p_value()? < 0.10)
    });
    let failed = results.iter().filter(|r| r.is_none()).count();
    let rejected = results.iter().filter(|r| **r == Some(true)).count();
    (rejected as f64 / 500.0, failed)
}

fn criterion_5() -> Verdict {
    let (size, f0) = rejection_rate(0.0, 5000);
    let (power, f1) = rejection_rate(3.0, 6000);
    verdict(
        f0 + f1 == 0 && (0.05..=0.16).contains(&size) && power > 0.80,
        format!("rejection at 10%: {size:.3} under common trends, {power:.3} under divergence 3/week"),
    )
}

fn rescale(panel: &Panel, rate: f64) -> Panel {
    Panel::new(
        panel
            .observations()
            .iter()
            .map(|o| PriceObservation {
                price: o.price * rate,
                ..o.clone()
            })
            .collect(),
    )
    .unwrap()
}

fn criterion_6() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    // Mean 100 in every (season, product, quality, country) cell.
    let cfg = SimConfig {
        missing_week_prob: 0.15,
        seed: 61,
        ..SimConfig::default()
    };
    let sim = generate_panel(&cfg).unwrap();
    let panel = sim.merged();
    let task = task_for(&cfg, Outcome::Level);
    let prepared = prepare_outcomes(&task, &panel, &sim.calendar).unwrap();
    let mut cells: BTreeMap<(i32, String), Vec<f64>> = BTreeMap::new();
    for o in prepared.treated.iter().chain(&prepared.control) {
        cells.entry((o.season.index, o.series.to_string())).or_default().push(o.value);
    }
    let worst_mean = cells
        .values()
        .map(|v| (v.iter().sum::<f64>() / v.len() as f64 - 100.0).abs())
        .fold(0.0, f64::max);
    pass &= worst_mean < 1e-9;
    notes.push(format!("mean-100 max error {worst_mean:.1e} over {} cells", cells.len()));

    // Volatility under currency rescaling.
    let vtask = task_for(&cfg, Outcome::Volatility);
    let values = |p: &Panel| -> Vec<f64> {
        let prep = prepare_outcomes(&vtask, p, &sim.calendar).unwrap();
        prep.treated.iter().chain(&prep.control).map(|o| o.value).collect()
    };
    let base = values(&panel);
    let exact = [0.5, 2.0, 1024.0]
        .iter()
        .all(|&k| values(&rescale(&panel, k)) == base);
    let mut worst_rel = 0.0f64;
    for k in [0.9213, 1.08, 137.5] {
        for (a, b) in values(&rescale(&panel, k)).iter().zip(&base) {
            worst_rel = worst_rel.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    pass &= exact && worst_rel < 1e-14;
    notes.push(format!(
        "volatility bit-identical under power-of-two rates: {exact}; other rates max diff {worst_rel:.1e} relative to 1 + value"
    ));

    // No volatility observation spans a phase transition.
    let mut checked = 0;
    let mut spanning = 0;
    let mut boundary_weeks = 0;
    for seed in 0..20 {
        let cfg = SimConfig {
            missing_week_prob: 0.1,
            seed,
            ..SimConfig::default()
        };
        let sim = generate_panel(&cfg).unwrap();
        let labeled = label_observations(sim.treated.observations(), &sim.calendar, &cfg.product).unwrap();
        boundary_weeks += labeled.iter().filter(|o| o.phase == PhaseLabel::Boundary).count();
        let phase_of: BTreeMap<_, _> = labeled.iter().map(|o| (o.week, o.phase)).collect();
        let vol = compute_volatility(&apply_boundary_exclusion(&labeled, Outcome::Volatility));
        for o in &vol.observations {
            checked += 1;
            let prev = phase_of.get(&o.week.pred());
            if o.phase == PhaseLabel::Boundary || prev != Some(&o.phase) {
                spanning += 1;
            }
        }
    }
    pass &= spanning == 0 && boundary_weeks > 0;
    notes.push(format!(
        "{spanning} of {checked} volatility values span a transition ({boundary_weeks} boundary weeks seen)"
    ));
    verdict(pass, notes.join("; "))
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut samples = 0;
    let mut with_trimming = 0;
    let mut violations = 0;
    while samples < 100 {
        let seasons = rng.random_range(2..5);
        let mut y = Vec::new();
        let mut d = Vec::new();
        let mut t = Vec::new();
        let mut season = Vec::new();
        for s in 0..seasons {
            for cell in Cell::ALL {
                let n = if cell == Cell::TreatedPost {
                    rng.random_range(1..80)
                } else {
                    rng.random_range(1..8)
                };
                for _ in 0..n {
                    y.push(rng.random_range(0.0..10.0));
                    d.push(cell.d());
                    t.push(cell.t());
                    season.push(s);
                }
            }
        }
        let cols = (1..seasons)
            .map(|s| (format!("season_{s}"), season.iter().map(|&x| f64::from(u8::from(x == s))).collect()))
            .collect();
        let x = DesignMatrix::from_columns(y.len(), cols).unwrap();
        let sample = DidSample::new(y, d, t, x).unwrap();
        let run = |thr| {
            ipw_did_detail(
                &sample,
                &IpwOptions {
                    trim_threshold: thr,
                    trim_target: TrimTarget::Comparison,
                },
            )
        };
        let (Ok(loose), Ok(tight)) = (run(0.99), run(0.95)) else {
            continue;
        };
        samples += 1;
        if tight.retained.iter().any(|r| !r) {
            with_trimming += 1;
        }
        if tight.retained.iter().zip(&loose.retained).any(|(t, l)| *t && !*l) {
            violations += 1;
        }
    }
    verdict(
        violations == 0 && with_trimming > 0,
        format!("{violations} violations over 100 samples ({with_trimming} trimmed at 0.95)"),
    )
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

/// Solves X'X b = X'y by Gauss-Jordan elimination in exact arithmetic.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut a = vec![vec![BigRational::zero(); k + 1]; k];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += rat(row[i]) * rat(row[j]);
            }
            a[i][k] += rat(row[i]) * rat(yi);
        }
    }
    for col in 0..k {
        let p = (col..k).find(|&r| !a[r][col].is_zero()).unwrap();
        a.swap(col, p);
        let inv = BigRational::one() / a[col][col].clone();
        for j in col..=k {
            a[col][j] = a[col][j].clone() * inv.clone();
        }
        for r in 0..k {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for j in col..=k {
                    let delta = f.clone() * a[col][j].clone();
                    a[r][j] -= delta;
                }
            }
        }
    }
    a.iter().map(|r| r[k].to_f64().unwrap()).collect()
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);

    // Single-coefficient logit against a refined grid search of the likelihood.
    let mut worst_grid = 0.0f64;
    for _ in 0..20 {
        let n = 60;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<bool> = xs
            .iter()
            .map(|&x| rng.random::<f64>() < 1.0 / (1.0 + (-0.8 * x).exp()))
            .collect();
        let design = DesignMatrix::from_columns(n, vec![("x".into(), xs)]).unwrap();
        let Ok(fit) = fit_logistic(&design, &ys) else {
            continue;
        };
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        let mut best = 0.0;
        for _ in 0..30 {
            let step = (hi - lo) / 200.0;
            best = (0..=200)
                .map(|i| lo + step * i as f64)
                .max_by(|a, b| {
                    logistic_log_likelihood(design.matrix(), &ys, &[*a])
                        .total_cmp(&logistic_log_likelihood(design.matrix(), &ys, &[*b]))
                })
                .unwrap();
            lo = best - 2.0 * step;
            hi = best + 2.0 * step;
        }
        worst_grid = worst_grid.max((fit.coefficients[0] - best).abs());
    }

    // Analytic score against central differences.
    let mut worst_score = 0.0f64;
    for _ in 0..20 {
        let n = 50;
        let cols = (0..3)
            .map(|j| (format!("x{j}"), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let design = DesignMatrix::from_columns(n, cols).unwrap().with_intercept();
        let ys: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let score = logistic_score(design.matrix(), &ys, &beta);
        for j in 0..4 {
            let h = 1e-5;
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (logistic_log_likelihood(design.matrix(), &ys, &up)
                - logistic_log_likelihood(design.matrix(), &ys, &dn))
                / (2.0 * h);
            worst_score = worst_score.max((fd - score[j]).abs() / score[j].abs().max(1e-3));
        }
    }

    // OLS against exact normal equations.
    let mut worst_ols = 0.0f64;
    for _ in 0..20 {
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                vec![
                    1.0,
                    f64::from(rng.random_range(-20..20)),
                    f64::from(rng.random_range(0..2)),
                    rng.random_range(-5.0..5.0),
                ]
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let cols = (1..4)
            .map(|j| (format!("x{j}"), rows.iter().map(|r| r[j]).collect()))
            .collect();
        let design = DesignMatrix::from_columns(n, cols).unwrap().with_intercept();
        let fit = fit_ols(&design, &y).unwrap();
        let want = normal_equations(&rows, &y);
        for (name, w) in ["(intercept)", "x1", "x2", "x3"].iter().zip(&want) {
            worst_ols = worst_ols.max((fit.coefficient(name).unwrap() - w).abs());
        }
    }
    verdict(
        worst_grid < 1e-6 && worst_score < 1e-4 && worst_ols < 1e-8,
        format!(
            "logit vs grid {worst_grid:.1e}; score vs finite differences rel {worst_score:.1e}; OLS vs normal equations {worst_ols:.1e}"
        ),
    )
}

fn criterion_9() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let effects_path = dir.join("published_effects.csv");
    let attrs_path = dir.join("published_attributes.csv");
    let effects = read_effects(std::fs::File::open(&effects_path).unwrap(), "published_effects.csv").unwrap();
    let attrs = read_attributes(std::fs::File::open(&attrs_path).unwrap(), "published_attributes.csv").unwrap();
    let rows = join_effects_attributes(&effects, &attrs, "ipw");
    let cols = heterogeneity_regression(&rows);
    let pooled = &cols[0];
    let n_level = pooled.n_effects;
    let n_complete = n_level - pooled.n_missing;
    match &pooled.fit {
        Ok(fit) => {
            let b = fit.coefficient("conventional").unwrap_or(f64::NAN);
            let se = fit.standard_error("conventional").unwrap_or(f64::NAN);
            verdict(
                (b - 16.8435).abs() <= 0.01 && (se - 8.4514).abs() <= 0.01,
                format!("conventional = {b:.4} (SE {se:.4}) on {n_complete} effects; published 16.8435 (8.4514) on 72"),
            )
        }
        Err(e) => verdict(
            false,
            format!(
                "{n_level} transcribed level effects (published n = 72), {n_complete} with complete attributes; regression not estimable: {e}. \
                 Storability, market share, days of protection and harvest pattern are not published per product"
            ),
        ),
    }
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_seasonal-did");
    let sim_dir = tmp.path().join("sim");
    let status = Command::new(bin)
        .args(["simulate", "--seed", "10", "--out"])
        .arg(&sim_dir)
        .output()
        .unwrap();
    if !status.status.success() {
        return verdict(false, format!("simulate failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let config = tmp.path().join(format!("run_{run}.toml"));
        std::fs::write(
            &config,
            format!(
                "prices = \"sim/prices.csv\"\ncalendar = \"sim/calendar.csv\"\noutput_dir = \"out_{run}\"\nseed = 99\nbootstrap_reps = 49\ntrim = [0.95, 0.99]\ntasks = \"all-pairs\"\n"
            ),
        )
        .unwrap();
        let out = Command::new(bin).arg("run").arg("--config").arg(&config).output().unwrap();
        if !out.status.success() {
            return verdict(false, format!("run failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        outputs.push(std::fs::read(tmp.path().join(format!("out_{run}/effects.csv"))).unwrap());
    }
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    verdict(
        outputs[0] == outputs[1] && rows > 0,
        format!("two runs, {rows} effect rows, byte-identical: {}", outputs[0] == outputs[1]),
    )
}

fn main() {
    // Criteria are run in order; each reports its wall time against its budget.
    let criteria: [(u8, fn() -> Verdict, Option<Duration>); 10] = [
        (1, criterion_1, Some(Duration::from_secs(5))),
        (2, criterion_2, Some(Duration::from_secs(10))),
        (3, criterion_3, Some(Duration::from_secs(120))),
        (4, criterion_4, Some(Duration::from_secs(300))),
        (5, criterion_5, Some(Duration::from_secs(180))),
        (6, criterion_6, None),
        (7, criterion_7, None),
        (8, criterion_8, None),
        (9, criterion_9, None),
        (10, criterion_10, None),
    ];
    let only: Option<u8> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut unexpected = Vec::new();
    for (id, run, budget) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = v.pass && in_time;
        let budget_note = budget.map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
        println!(
            "criterion {id:>2}: {} [{:.1}s{budget_note}] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            v.detail
        );
        if !pass && !KNOWN_UNATTAINABLE.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
