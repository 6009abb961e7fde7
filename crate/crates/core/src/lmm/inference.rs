//! Likelihood-ratio tests, ICC, marginal R² and variance inflation factors.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::design::{Design, RandomStructure};
use super::reml::{FittedModel, Method};
use crate::error::{Error, Result};
use crate::stats::{chi2_sf, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrtResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Compares a nested model against a fuller one fitted on the same rows.
///
/// REML likelihoods are only comparable between models with the same fixed
/// effects, so models that differ in fixed effects must both be ML fits.
pub fn likelihood_ratio_test(nested: &FittedModel, full: &FittedModel) -> Result<LrtResult> {
    if nested.rows_fingerprint != full.rows_fingerprint || nested.n_obs != full.n_obs {
        return Err(Error::InvalidInput("models were fitted on different rows".into()));
    }
    if nested.method != full.method {
        return Err(Error::InvalidSpec("models were fitted by different methods".into()));
    }
    if !nested.columns.iter().all(|c| full.columns.contains(c)) {
        return Err(Error::NotNested("fixed effects are not a subset".into()));
    }
    if nested.random == RandomStructure::InterceptAndSlopeOnT && full.random == RandomStructure::InterceptOnly {
        return Err(Error::NotNested("random effects are not a subset".into()));
    }
    if nested.columns.len() != full.columns.len() && full.method == Method::Reml {
        return Err(Error::InvalidSpec("fixed effects differ: refit both models by ML".into()));
    }
    let df = full.n_params - nested.n_params;
    let chi2 = (2.0 * (full.loglik - nested.loglik)).max(0.0);
    let p_value = if df == 0 { 1.0 } else { chi2_sf(chi2, df as f64) };
    Ok(LrtResult { chi2, df, p_value })
}

/// Share of variance between subjects, from an intercept-only fit.
pub fn icc(fit: &FittedModel) -> Result<f64> {
    if fit.random != RandomStructure::InterceptOnly {
        return Err(Error::InvalidSpec("ICC requires an intercept-only random structure".into()));
    }
    let su = fit.sigma[(0, 0)];
    let total = su + fit.sigma2;
    if !(total > 0.0) {
        return Err(Error::Numerical("zero total variance".into()));
    }
    Ok(su / total)
}

/// Random-effect variance of a row at the mean of T: `z' Sigma z`, `z = (1, mean T)`.
pub fn random_variance_at_mean(fit: &FittedModel) -> f64 {
    let s = &fit.sigma;
    match fit.slope_mean {
        Some(t) if s.nrows() == 2 => s[(0, 0)] + 2.0 * t * s[(0, 1)] + t * t * s[(1, 1)],
        _ => s[(0, 0)],
    }
}

/// var(X b) / (var(X b) + z' Sigma z + sigma2), z evaluated at the mean of T.
pub fn marginal_r2(fit: &FittedModel, x: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != fit.beta.len() {
        return Err(Error::InvalidInput("X does not match the fitted columns".into()));
    }
    let fitted = x * DVector::from_column_slice(&fit.beta);
    let vf = if fitted.len() > 1 { sample_variance(fitted.as_slice()) } else { 0.0 };
    let total = vf + random_variance_at_mean(fit) + fit.sigma2;
    if !(total > 0.0) {
        return Err(Error::Numerical("zero total variance".into()));
    }
    Ok(vf / total)
}

/// Variance inflation factor of each predictor column (no intercept column
/// in `x`; one is added to every auxiliary regression). A column that is an
/// exact linear combination of the others, or constant, gets +infinity.
pub fn vif(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, k) = x.shape();
    if k < 2 {
        return Err(Error::InvalidInput("VIF needs at least two predictors".into()));
    }
    (0..k)
        .map(|j| {
            let target = x.column(j).into_owned();
            let mean = target.mean();
            let tss: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
            if !(tss > 0.0) {
                return Ok(f64::INFINITY);
            }
            let mut others = DMatrix::from_element(n, k, 1.0);
            let mut c = 1;
            for i in (0..k).filter(|&i| i != j) {
                others.set_column(c, &x.column(i));
                c += 1;
            }
            let svd = others.clone().svd(true, true);
            let coef = svd
                .solve(&target, 1e-12 * svd.singular_values.max())
                .map_err(|e| Error::Numerical(e.to_string()))?;
            let resid = &target - &others * coef;
            let rss = resid.norm_squared();
            Ok(if rss / tss < 1e-13 { f64::INFINITY } else { tss / rss })
        })
        .collect()
}

/// VIFs of every non-intercept column of a design, by column name.
pub fn design_vif(design: &Design) -> Result<Vec<(String, f64)>> {
    let keep: Vec<usize> = (0..design.columns.len())
        .filter(|&j| design.columns[j] != "(Intercept)")
        .collect();
    let x = design.x.select_columns(&keep);
    let v = vif(&x)?;
    Ok(keep.into_iter().map(|j| design.columns[j].clone()).zip(v).collect())
}
