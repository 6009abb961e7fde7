//! Plain-text fit reports.

use std::fmt::Write;

use super::apc::ApcReport;
use super::reml::FittedModel;

/// One fitted model with the companion statistics shown next to it.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub label: String,
    pub fit: FittedModel,
    /// From the intercept-only companion fit.
    pub icc: Option<f64>,
    pub marginal_r2: Option<f64>,
}

pub fn format_p(p: f64) -> String {
    if p.is_nan() {
        "NA".into()
    } else if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.digits$}"))
}

/// Fixed-effect table (one beta/SE/p block per model), then variance
/// components, fit statistics and convergence diagnostics.
pub fn render_fits(models: &[FitSummary]) -> String {
    let mut out = String::new();
    let mut predictors: Vec<&str> = Vec::new();
    for m in models {
        for c in &m.fit.columns {
            if !predictors.contains(&c.as_str()) {
                predictors.push(c);
            }
        }
    }
    let w = predictors.iter().map(|p| p.len()).max().unwrap_or(9).max(24);

    let _ = write!(out, "{:<w$}", "Predictor");
    for m in models {
        let _ = write!(out, " | {:^34}", m.label);
    }
    out.push('\n');
    let _ = write!(out, "{:<w$}", "");
    for _ in models {
        let _ = write!(out, " | {:>12} {:>12} {:>8}", "beta", "SE", "p");
    }
    out.push('\n');
    for p in &predictors {
        let _ = write!(out, "{p:<w$}");
        for m in models {
            match m.fit.coef(p) {
                Some((b, se, pv)) => {
                    let _ = write!(out, " | {b:>12.4} {se:>12.4} {:>8}", format_p(pv));
                }
                None => {
                    let _ = write!(out, " | {:>12} {:>12} {:>8}", "", "", "");
                }
            }
        }
        out.push('\n');
    }

    let rows: Vec<(&str, Box<dyn Fn(&FitSummary) -> String>)> = vec![
        ("var(intercept)", Box::new(|m| format!("{:.4}", m.fit.sigma[(0, 0)]))),
        (
            "var(slope T)",
            Box::new(|m| opt((m.fit.sigma.nrows() == 2).then(|| m.fit.sigma[(1, 1)]), 6)),
        ),
        ("corr(intercept, slope)", Box::new(|m| opt(m.fit.random_correlation(), 3))),
        ("residual variance", Box::new(|m| format!("{:.4}", m.fit.sigma2))),
        ("ICC (intercept-only fit)", Box::new(|m| opt(m.icc, 3))),
        ("marginal R2", Box::new(|m| opt(m.marginal_r2, 3))),
        ("log-likelihood", Box::new(|m| format!("{:.3}", m.fit.loglik))),
        ("AIC", Box::new(|m| format!("{:.3}", m.fit.aic))),
        ("method", Box::new(|m| format!("{:?}", m.fit.method).to_uppercase())),
        ("observations", Box::new(|m| m.fit.n_obs.to_string())),
        ("subjects", Box::new(|m| m.fit.n_subjects.to_string())),
        ("rows dropped (missing)", Box::new(|m| m.fit.n_dropped.to_string())),
        ("parameters", Box::new(|m| m.fit.n_params.to_string())),
        ("converged", Box::new(|m| m.fit.converged.to_string())),
        ("iterations", Box::new(|m| m.fit.iterations.to_string())),
        ("gradient norm", Box::new(|m| format!("{:.2e}", m.fit.gradient_norm))),
        ("boundary estimate", Box::new(|m| m.fit.boundary.to_string())),
        ("local optimum check", Box::new(|m| m.fit.local_check_passed.to_string())),
        ("standardized outcome", Box::new(|m| m.fit.standardized.to_string())),
    ];
    out.push('\n');
    for (name, f) in &rows {
        let _ = write!(out, "{name:<w$}");
        for m in models {
            let _ = write!(out, " | {:>34}", f(m));
        }
        out.push('\n');
    }
    out.push_str("\nmarginal R2 = var(Xb) / (var(Xb) + z' Sigma z + sigma2), z = (1, mean T)\n");
    out
}

pub fn render_apc(report: &ApcReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>8} {:>14} {:>12} {:>8} {:>11} {:>10} {:>9} {:>8} {:>10} {:>9} {:>8}",
        "parameterization", "n", "loglik", "AIC", "dAIC", "age var", "beta", "SE", "p", "time var", "beta", "p"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<22} {:>8} {:>14.3} {:>12.3} {:>8.3} {:>11} {:>10.4} {:>9.4} {:>8} {:>10} {:>9.4} {:>8}",
            r.mode.label(),
            r.n_obs,
            r.loglik,
            r.aic,
            r.delta_aic,
            r.age.name,
            r.age.beta,
            r.age.se,
            format_p(r.age.p_value),
            r.temporal.name,
            r.temporal.beta,
            format_p(r.temporal.p_value),
        );
    }
    let _ = writeln!(out, "\nfits by {:?}; rows dropped for missing values: {}", report.method, report.n_dropped);
    out.push_str("overidentified model (A_gallery + A_probe + T), diagnostic only, VIF:\n");
    for (name, v) in &report.overidentified_vif {
        let _ = writeln!(out, "  {name:<20} {v:>14.2}");
    }
    out
}
