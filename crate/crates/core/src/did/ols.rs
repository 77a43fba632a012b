use crate::glm::{fit_ols, DesignMatrix};
use crate::stats::{two_sided_p, Z_975};

use super::{DidError, DidSample, EffectEstimate, Inference, Method};

pub const INTERACTION: &str = "D:T";

/// OLS of Y on intercept, D, T, D*T and the sample covariates; the ATET is the
/// interaction coefficient with its classical standard error.
pub fn estimate_ols_did(sample: &DidSample) -> Result<EffectEstimate, DidError> {
    sample.check_cells(1)?;
    let n = sample.len();
    let as_f = |b: &bool| f64::from(u8::from(*b));
    let d: Vec<f64> = sample.d.iter().map(as_f).collect();
    let t: Vec<f64> = sample.t.iter().map(as_f).collect();
    let dt: Vec<f64> = d.iter().zip(&t).map(|(a, b)| a * b).collect();
    let base = DesignMatrix::from_columns(
        n,
        vec![("D".into(), d), ("T".into(), t), (INTERACTION.into(), dt)],
    )
    .map_err(DidError::Ols)?
    .with_intercept();
    let design = base.hstack(&sample.x).map_err(DidError::Ols)?;
    let fit = fit_ols(&design, &sample.y).map_err(DidError::Ols)?;
    let atet = fit.coefficient(INTERACTION).expect("interaction is never pruned with four cells");
    let se = fit.standard_error(INTERACTION).expect("interaction present");
    Ok(EffectEstimate {
        atet,
        inference: Some(Inference {
            se,
            p_value: two_sided_p(atet, se),
            ci_normal: (atet - Z_975 * se, atet + Z_975 * se),
            ci_percentile: None,
            reps: 0,
            failed_reps: 0,
        }),
        n_by_cell: sample.cell_counts(),
        n_trimmed_by_cell: [0; 4],
        method: Method::Ols,
    })
}
