//! Small descriptive and inferential helpers.

use statrs::distribution::{ContinuousCDF, Normal};

/// 97.5% quantile of the standard normal.
pub const Z_975: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided p-value of `estimate / se` against the standard normal.
pub fn two_sided_p(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / se).abs();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).clamp(0.0, 1.0)
}
