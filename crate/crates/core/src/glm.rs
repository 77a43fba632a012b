//! Logistic regression by iteratively reweighted least squares and ordinary
//! least squares with classical standard errors.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const INTERCEPT: &str = "(intercept)";

/// Newton/IRLS stops once no coefficient moves by more than this.
pub const LOGIT_TOLERANCE: f64 = 1e-8;
pub const LOGIT_MAX_ITER: usize = 100;
/// Any coefficient larger than this in absolute value signals separation.
pub const SEPARATION_COEF: f64 = 30.0;
/// Fitted probabilities this close to 0 or 1 signal separation.
pub const SEPARATION_FITTED: f64 = 1e-10;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("design has {rows} rows but the response has {len} entries")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("{n} observations are not enough for {k} regressors")]
    InsufficientRows { n: usize, k: usize },
    #[error("binary outcome has a single class")]
    DegenerateOutcome,
    #[error("perfect separation on columns [{}]", columns.join(", "))]
    Separation { columns: Vec<String> },
    #[error("rank-deficient design: collinear [{}], pruned [{}]", collinear.join(", "), dropped.join(", "))]
    RankDeficient {
        collinear: Vec<String>,
        dropped: Vec<String>,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateName(String),
    #[error("non-finite value in design or response")]
    NonFinite,
}

/// Named regressors stored column-major, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, data: DMatrix<f64>) -> Result<Self, GlmError> {
        assert_eq!(names.len(), data.ncols(), "one name per column");
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(GlmError::DuplicateName(n.clone()));
            }
        }
        Ok(DesignMatrix { names, data })
    }

    pub fn from_columns(nrows: usize, columns: Vec<(String, Vec<f64>)>) -> Result<Self, GlmError> {
        let mut data = DMatrix::zeros(nrows, columns.len());
        let mut names = Vec::with_capacity(columns.len());
        for (j, (name, col)) in columns.into_iter().enumerate() {
            if col.len() != nrows {
                return Err(GlmError::DimensionMismatch {
                    rows: nrows,
                    len: col.len(),
                });
            }
            data.column_mut(j).copy_from_slice(&col);
            names.push(name);
        }
        DesignMatrix::new(names, data)
    }

    pub fn empty(nrows: usize) -> Self {
        DesignMatrix {
            names: Vec::new(),
            data: DMatrix::zeros(nrows, 0),
        }
    }

    /// Prepends an intercept column (no-op if one is present).
    pub fn with_intercept(&self) -> Self {
        if self.has_intercept() {
            return self.clone();
        }
        let n = self.nrows();
        let mut data = DMatrix::zeros(n, self.ncols() + 1);
        data.column_mut(0).fill(1.0);
        data.columns_mut(1, self.ncols()).copy_from(&self.data);
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(self.names.iter().cloned());
        DesignMatrix { names, data }
    }

    pub fn has_intercept(&self) -> bool {
        self.names.iter().any(|n| n == INTERCEPT)
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.data.column(j).iter().copied().collect())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        DesignMatrix {
            names: self.names.clone(),
            data: self.data.select_rows(rows),
        }
    }

    /// Appends the columns of `other` (same row count).
    pub fn hstack(&self, other: &DesignMatrix) -> Result<Self, GlmError> {
        assert_eq!(self.nrows(), other.nrows());
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut data = DMatrix::zeros(self.nrows(), self.ncols() + other.ncols());
        data.columns_mut(0, self.ncols()).copy_from(&self.data);
        data.columns_mut(self.ncols(), other.ncols()).copy_from(&other.data);
        DesignMatrix::new(names, data)
    }

    /// Drops constant columns (other than the intercept; with an intercept
    /// present every other constant column is collinear with it; without one
    /// only all-zero columns go) and exact duplicates of earlier columns.
    /// Returns the pruned design and the names dropped.
    pub fn prune(&self) -> (DesignMatrix, Vec<String>) {
        let has_intercept = self.has_intercept();
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..self.ncols() {
            let col = self.data.column(j);
            let name = &self.names[j];
            if name != INTERCEPT {
                let first = col[0];
                let constant = col.iter().all(|&v| v == first);
                if constant && (has_intercept || first == 0.0) {
                    dropped.push(name.clone());
                    continue;
                }
            }
            if keep.iter().any(|&k: &usize| self.data.column(k) == col) {
                dropped.push(name.clone());
                continue;
            }
            keep.push(j);
        }
        let data = self.data.select_columns(&keep);
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        (DesignMatrix { names, data }, dropped)
    }

    /// Columns that are (numerically) linear combinations of earlier ones.
    fn collinear_columns(&self) -> Vec<String> {
        if self.ncols() == 0 {
            return Vec::new();
        }
        let mut scaled = self.data.clone();
        for mut col in scaled.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        let r = scaled.qr().r();
        (0..self.ncols())
            .filter(|&j| j >= r.nrows() || r[(j, j)].abs() < RANK_TOL)
            .map(|j| self.names[j].clone())
            .collect()
    }

    fn checked(&self, len: usize) -> Result<(DesignMatrix, Vec<String>), GlmError> {
        if self.nrows() != len {
            return Err(GlmError::DimensionMismatch {
                rows: self.nrows(),
                len,
            });
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite);
        }
        let (pruned, dropped) = self.prune();
        let collinear = pruned.collinear_columns();
        if !collinear.is_empty() {
            return Err(GlmError::RankDeficient { collinear, dropped });
        }
        Ok((pruned, dropped))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Names of the columns actually fitted (after pruning).
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Columns removed before fitting (constant or duplicated).
    pub dropped: Vec<String>,
    pub log_likelihood: Option<f64>,
    pub r_squared: Option<f64>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.coefficients[j])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.standard_errors[j])
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood of `beta` on `x`.
pub fn logistic_log_likelihood(x: &DMatrix<f64>, y: &[bool], beta: &[f64]) -> f64 {
    let eta = x * DVector::from_column_slice(beta);
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) computed without overflow.
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            if yi {
                e - softplus
            } else {
                -softplus
            }
        })
        .sum()
}

/// Gradient of the Bernoulli log-likelihood: `X'(y - p)`.
pub fn logistic_score(x: &DMatrix<f64>, y: &[bool], beta: &[f64]) -> Vec<f64> {
    let eta = x * DVector::from_column_slice(beta);
    let resid = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y).map(|(&e, &yi)| f64::from(u8::from(yi)) - sigmoid(e)),
    );
    (x.transpose() * resid).iter().copied().collect()
}

/// Maximum-likelihood logit fit.
pub fn fit_logistic(x: &DesignMatrix, y: &[bool]) -> Result<FitResult, GlmError> {
    let (design, dropped) = x.checked(y.len())?;
    let (n, k) = (design.nrows(), design.ncols());
    if n < k {
        return Err(GlmError::InsufficientRows { n, k });
    }
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(GlmError::DegenerateOutcome);
    }
    let xm = design.matrix();
    let yv = DVector::from_iterator(n, y.iter().map(|&v| f64::from(u8::from(v))));

    let mut beta = DVector::zeros(k);
    if let Some(j) = design.names.iter().position(|s| s == INTERCEPT) {
        let share = ones as f64 / n as f64;
        beta[j] = (share / (1.0 - share)).ln();
    }

    let separation = |beta: &DVector<f64>, p: &DVector<f64>| -> Option<GlmError> {
        let mut columns: Vec<String> = (0..k)
            .filter(|&j| beta[j].abs() > SEPARATION_COEF)
            .map(|j| design.names[j].clone())
            .collect();
        let pinned = p
            .iter()
            .any(|&pi| pi < SEPARATION_FITTED || pi > 1.0 - SEPARATION_FITTED);
        if columns.is_empty() && pinned {
            // Name the covariates driving the fit; the intercept only when alone.
            let candidates: Vec<usize> = (0..k).filter(|&j| design.names[j] != INTERCEPT).collect();
            let candidates = if candidates.is_empty() { (0..k).collect() } else { candidates };
            let max = candidates.iter().fold(0.0f64, |m, &j| m.max(beta[j].abs()));
            columns = candidates
                .into_iter()
                .filter(|&j| beta[j].abs() >= 0.5 * max)
                .map(|j| design.names[j].clone())
                .collect();
        }
        (!columns.is_empty()).then_some(GlmError::Separation { columns })
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut p = DVector::zeros(n);
    while iterations < LOGIT_MAX_ITER {
        iterations += 1;
        let eta = xm * &beta;
        p = eta.map(sigmoid);
        let w = p.map(|pi| pi * (1.0 - pi));
        let mut xw = xm.clone();
        for (mut col_w, col) in xw.column_iter_mut().zip(xm.column_iter()) {
            col_w.copy_from(&col.component_mul(&w));
        }
        let info = xm.transpose() * &xw;
        let score = xm.transpose() * (&yv - &p);
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                return Err(separation(&beta, &p).unwrap_or(GlmError::RankDeficient {
                    collinear: design.names.clone(),
                    dropped,
                }))
            }
        };
        beta += &step;
        let eta = xm * &beta;
        p = eta.map(sigmoid);
        if let Some(err) = separation(&beta, &p) {
            return Err(err);
        }
        if step.amax() < LOGIT_TOLERANCE {
            converged = true;
            break;
        }
    }

    let w = p.map(|pi| pi * (1.0 - pi));
    let mut xw = xm.clone();
    for (mut col_w, col) in xw.column_iter_mut().zip(xm.column_iter()) {
        col_w.copy_from(&col.component_mul(&w));
    }
    let info = xm.transpose() * &xw;
    let standard_errors = match info.try_inverse() {
        Some(inv) => (0..k).map(|j| inv[(j, j)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; k],
    };
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let log_likelihood = logistic_log_likelihood(xm, y, &coefficients);
    Ok(FitResult {
        names: design.names,
        coefficients,
        standard_errors,
        fitted: p.iter().copied().collect(),
        converged,
        iterations,
        dropped,
        log_likelihood: Some(log_likelihood),
        r_squared: None,
    })
}

/// Least squares through a Householder QR decomposition, with classical
/// standard errors from `s^2 (X'X)^-1`, `s^2 = RSS / (n - k)`.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<FitResult, GlmError> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite);
    }
    let (design, dropped) = x.checked(y.len())?;
    let (n, k) = (design.nrows(), design.ncols());
    if n <= k {
        return Err(GlmError::InsufficientRows { n, k });
    }
    let xm = design.matrix();
    let yv = DVector::from_column_slice(y);
    let qr = xm.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| GlmError::RankDeficient {
            collinear: design.names.clone(),
            dropped: dropped.clone(),
        })?;
    let fitted = xm * &beta;
    let resid = &yv - &fitted;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - k) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .expect("R is non-singular after the rank check");
    let cov_unscaled = &r_inv * r_inv.transpose();
    let standard_errors = (0..k).map(|j| (sigma2 * cov_unscaled[(j, j)]).sqrt()).collect();
    let r_squared = design.has_intercept().then(|| {
        let mean = yv.mean();
        let tss: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
        if tss > 0.0 {
            1.0 - rss / tss
        } else {
            1.0
        }
    });
    Ok(FitResult {
        names: design.names,
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        fitted: fitted.iter().copied().collect(),
        converged: true,
        iterations: 1,
        dropped,
        log_likelihood: None,
        r_squared,
    })
}
