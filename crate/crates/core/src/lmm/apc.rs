//! Side-by-side fits of the three age/period parameterizations.

use rayon::prelude::*;
use serde::Serialize;

use super::design::{build_design_frame, build_prediction_design, complete_rows, ApcMode, ModelSpec, Term, APC_VARIABLES};
use super::frame::ModelFrame;
use super::inference::design_vif;
use super::reml::{fit, FitOptions, FittedModel, Method};
use crate::error::Result;
use crate::pairing::ComparisonTable;

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
}

impl Coefficient {
    fn of(fit: &FittedModel, name: &str) -> Coefficient {
        let (beta, se, p_value) = fit.coef(name).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        Coefficient {
            name: name.to_string(),
            beta,
            se,
            p_value,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApcRow {
    pub mode: ApcMode,
    pub n_obs: usize,
    /// SHA-256 over the outcome vector in canonical row order.
    pub outcome_checksum: String,
    pub loglik: f64,
    pub aic: f64,
    pub delta_aic: f64,
    pub age: Coefficient,
    pub temporal: Coefficient,
    pub converged: bool,
    pub boundary: bool,
    #[serde(skip)]
    pub fit: FittedModel,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApcReport {
    pub method: Method,
    pub rows: Vec<ApcRow>,
    /// Rows dropped so that every parameterization sees the same data.
    pub n_dropped: usize,
    /// VIFs of the three-variable model (A_gallery, A_probe, T); diagnostic
    /// only, the model itself is not identified and is never fitted.
    pub overidentified_vif: Vec<(String, f64)>,
}

impl ApcReport {
    pub fn row(&self, mode: ApcMode) -> Option<&ApcRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

fn without_apc_terms(spec: &ModelSpec) -> Vec<Term> {
    spec.fixed_terms
        .iter()
        .filter(|t| !matches!(t, Term::Continuous(v) if APC_VARIABLES.contains(&v.as_str())))
        .cloned()
        .collect()
}

fn with_leading(spec: &ModelSpec, vars: &[&str]) -> ModelSpec {
    let mut s = spec.clone();
    s.apc_mode = None;
    s.fixed_terms = vars
        .iter()
        .map(|v| Term::Continuous(v.to_string()))
        .chain(without_apc_terms(spec))
        .collect();
    s
}

pub fn compare_apc(table: &ComparisonTable, base: &ModelSpec) -> Result<ApcReport> {
    compare_apc_frame(&ModelFrame::from_table(table, &base.outcome)?, base)
}

/// Fits every parameterization by ML (AIC is only comparable across
/// different fixed effects under ML) on the rows complete for all of them.
pub fn compare_apc_frame(frame: &ModelFrame, base: &ModelSpec) -> Result<ApcReport> {
    let all = with_leading(base, &APC_VARIABLES);
    let keep = complete_rows(frame, &all)?;
    let n_dropped = frame.len() - keep.len();
    let frame = frame.subset(&keep);

    let method = Method::Ml;
    let fits: Vec<(ApcMode, super::design::Design, FittedModel)> = ApcMode::ALL
        .par_iter()
        .map(|&mode| {
            let mut spec = base.clone();
            spec.apc_mode = Some(mode);
            spec.fixed_terms = without_apc_terms(base);
            let design = build_design_frame(&frame, &spec)?;
            let fitted = fit(&design, &FitOptions { method, ..Default::default() })?;
            Ok((mode, design, fitted))
        })
        .collect::<Result<_>>()?;

    let best = fits.iter().map(|(_, _, f)| f.aic).fold(f64::INFINITY, f64::min);
    let rows = fits
        .into_iter()
        .map(|(mode, design, f)| {
            let (age, temporal) = mode.variables();
            let bytes: Vec<u8> = design.y.iter().flat_map(|v| v.to_le_bytes()).collect();
            ApcRow {
                mode,
                n_obs: f.n_obs,
                outcome_checksum: super::sha256_hex(&bytes),
                loglik: f.loglik,
                aic: f.aic,
                delta_aic: f.aic - best,
                age: Coefficient::of(&f, age),
                temporal: Coefficient::of(&f, temporal),
                converged: f.converged,
                boundary: f.boundary,
                fit: f,
            }
        })
        .collect();

    let over = with_leading(base, &["A_gallery", "A_probe", "T"]);
    let overidentified_vif = design_vif(&build_prediction_design(&frame, &over)?)?;
    Ok(ApcReport {
        method,
        rows,
        n_dropped,
        overidentified_vif,
    })
}
