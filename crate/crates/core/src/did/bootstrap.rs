use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::{map_indexed, Execution};
use crate::stats::{quantile_sorted, sample_sd, two_sided_p, Z_975};

use super::{DidError, DidSample};

/// Replicate failures above this share make the bootstrap unusable.
pub const MAX_FAILED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: f64,
    pub p_value: f64,
    pub ci_normal: (f64, f64),
    pub ci_percentile: (f64, f64),
    pub reps_ok: usize,
    pub reps_failed: usize,
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
}

/// Row indices per (season, D, T) stratum in a fixed order.
fn strata(sample: &DidSample) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<(i32, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..sample.len() {
        map.entry((sample.season[i], sample.cell(i).index())).or_default().push(i);
    }
    map.into_values().collect()
}

/// Resamples rows with replacement inside each (season, D, T) stratum, so
/// every replicate keeps the per-season cell sizes of the original sample.
fn resample(sample: &DidSample, strata: &[Vec<usize>], seed: u64, replicate: usize) -> DidSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    let mut rows = Vec::with_capacity(sample.len());
    for stratum in strata {
        for _ in 0..stratum.len() {
            rows.push(stratum[rng.random_range(0..stratum.len())]);
        }
    }
    sample.subset(&rows)
}

/// Stratified nonparametric bootstrap of `estimator`. Replicate `r` draws from
/// its own stream of the seeded generator, so results do not depend on
/// scheduling. Failed replicates are skipped and counted.
pub fn bootstrap_se<F>(
    sample: &DidSample,
    point: f64,
    estimator: F,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<BootstrapResult, DidError>
where
    F: Fn(&DidSample) -> Result<f64, DidError> + Sync + Send,
{
    if reps < 2 {
        return Err(DidError::InvalidTask("bootstrap needs at least 2 replicates".into()));
    }
    let strata = strata(sample);
    let outcomes = map_indexed(reps, exec, |r| estimator(&resample(sample, &strata, seed, r)));
    let replicates: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    let failed = reps - replicates.len();
    if failed as f64 > MAX_FAILED_SHARE * reps as f64 || replicates.len() < 2 {
        return Err(DidError::BootstrapDegenerate { failed, reps });
    }
    let se = sample_sd(&replicates);
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        se,
        p_value: two_sided_p(point, se),
        ci_normal: (point - Z_975 * se, point + Z_975 * se),
        ci_percentile: (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975)),
        reps_ok: replicates.len(),
        reps_failed: failed,
        replicates,
    })
}
