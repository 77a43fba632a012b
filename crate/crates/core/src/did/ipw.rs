use crate::glm::fit_logistic;

use super::{Cell, DidError, DidSample, EffectEstimate, Method, TrimTarget};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpwOptions {
    pub trim_threshold: f64,
    pub trim_target: TrimTarget,
}

impl Default for IpwOptions {
    fn default() -> Self {
        IpwOptions {
            trim_threshold: super::DEFAULT_TRIM,
            trim_target: TrimTarget::Comparison,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpwDetail {
    pub atet: f64,
    /// Normalized weight per row: sums to 1 within each retained cell.
    pub weights: Vec<f64>,
    pub retained: Vec<bool>,
    /// Pairwise propensity of belonging to (D=1,T=1) for comparison rows;
    /// the largest score across the three fits for treated-post rows.
    pub scores: Vec<f64>,
    pub n_by_cell: [usize; 4],
    pub n_trimmed_by_cell: [usize; 4],
}

/// Reweights each comparison cell toward the covariate distribution of the
/// treated-post cell with odds `p / (1 - p)` from a pairwise logit, after
/// dropping observations whose score exceeds the trim threshold.
pub fn ipw_did_detail(sample: &DidSample, opts: &IpwOptions) -> Result<IpwDetail, DidError> {
    sample.check_cells(1)?;
    let cells = sample.cell_indices();
    let treated_post = &cells[Cell::TreatedPost.index()];
    let n = sample.len();
    let mut scores = vec![0.0f64; n];
    let mut retained = vec![true; n];
    let mut weights = vec![0.0; n];
    let mut n_trimmed = [0usize; 4];

    for group in Cell::COMPARISONS {
        let group_rows = &cells[group.index()];
        let rows: Vec<usize> = treated_post.iter().chain(group_rows).copied().collect();
        let is_treated_post: Vec<bool> = rows.iter().map(|&i| sample.cell(i) == Cell::TreatedPost).collect();
        let x = sample.x.select_rows(&rows).with_intercept();
        let fit = fit_logistic(&x, &is_treated_post)
            .map_err(|source| DidError::Propensity { group, source })?;
        if !fit.converged {
            return Err(DidError::NotConverged(group));
        }
        for (&row, &p) in rows.iter().zip(&fit.fitted) {
            if sample.cell(row) == Cell::TreatedPost {
                scores[row] = scores[row].max(p);
            } else {
                scores[row] = p;
            }
        }
        if opts.trim_target == TrimTarget::Comparison {
            for &row in group_rows {
                if scores[row] > opts.trim_threshold {
                    retained[row] = false;
                    n_trimmed[group.index()] += 1;
                }
            }
        }
    }
    if opts.trim_target == TrimTarget::TreatedPost {
        for &row in treated_post {
            if scores[row] > opts.trim_threshold {
                retained[row] = false;
                n_trimmed[Cell::TreatedPost.index()] += 1;
            }
        }
    }

    for cell in Cell::ALL {
        let kept: Vec<usize> = cells[cell.index()].iter().copied().filter(|&i| retained[i]).collect();
        if kept.is_empty() {
            return Err(DidError::TrimExhausted(cell));
        }
        if cell == Cell::TreatedPost {
            let w = 1.0 / kept.len() as f64;
            for i in kept {
                weights[i] = w;
            }
        } else {
            let odds: Vec<f64> = kept.iter().map(|&i| scores[i] / (1.0 - scores[i])).collect();
            let total: f64 = odds.iter().sum();
            for (&i, o) in kept.iter().zip(odds) {
                weights[i] = o / total;
            }
        }
    }

    let mut wmeans = [0.0; 4];
    for i in 0..n {
        if retained[i] {
            wmeans[sample.cell(i).index()] += weights[i] * sample.y[i];
        }
    }
    let atet = (wmeans[0] - wmeans[1]) - (wmeans[2] - wmeans[3]);
    Ok(IpwDetail {
        atet,
        weights,
        retained,
        scores,
        n_by_cell: sample.cell_counts(),
        n_trimmed_by_cell: n_trimmed,
    })
}

/// IPW-DiD point estimate without inference; see [`super::estimate_ipw_with_bootstrap`].
pub fn estimate_ipw_did(sample: &DidSample, opts: &IpwOptions) -> Result<EffectEstimate, DidError> {
    let detail = ipw_did_detail(sample, opts)?;
    Ok(EffectEstimate {
        atet: detail.atet,
        inference: None,
        n_by_cell: detail.n_by_cell,
        n_trimmed_by_cell: detail.n_trimmed_by_cell,
        method: Method::Ipw,
    })
}
