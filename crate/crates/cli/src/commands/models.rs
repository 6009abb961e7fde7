use std::collections::BTreeMap;
use std::fmt::Write;

use permanence::lmm::design::{build_prediction_design, complete_rows};
use permanence::lmm::frame::AGE_GROUPS;
use permanence::lmm::report::{format_p, render_apc, render_fits, FitSummary};
use permanence::lmm::{
    build_design_frame, fit_ml, fit_reml, icc, likelihood_ratio_test, marginal_r2, ApcReport, Design, FittedModel,
    LrtResult, ModelFrame, ModelSpec, RandomStructure, Term,
};
use permanence::lmm::apc::compare_apc_frame;
use permanence::model::PairKind;
use permanence::pairing::ComparisonTable;
use permanence::validation::{kfold_subject_cv_frame, residual_diagnostics, CvReport, DiagnosticsReport};
use rayon::prelude::*;

use super::load_pairs;
use crate::config::{Loaded, ModelEntry};
use crate::error::{CliError, CliResult};
use crate::output::{num, Run, Table};

pub(crate) const TRAJECTORY_FILE: &str = "trajectories.csv";
const QQ_POINTS: usize = 1000;

fn model_frame(table: &ComparisonTable, entry: &ModelEntry) -> permanence::Result<ModelFrame> {
    let sub = table.filtered(Some(PairKind::Genuine), entry.eye());
    match &entry.matcher {
        Some(m) => ModelFrame::from_table(&sub, m),
        None => {
            let names: Vec<&str> = entry.stack.iter().map(String::as_str).collect();
            ModelFrame::stacked(&sub, &names, entry.scope)
        }
    }
}

fn with_random(spec: &ModelSpec, random: RandomStructure) -> ModelSpec {
    ModelSpec { random, ..spec.clone() }
}

/// The same model without its temporal variable, for a likelihood-ratio test
/// of aging. `None` when the model has no APC parameterization.
fn without_temporal(spec: &ModelSpec) -> Option<ModelSpec> {
    let mode = spec.apc_mode?;
    let (age, _) = mode.variables();
    let mut fixed = vec![Term::Continuous(age.into())];
    fixed.extend(spec.fixed_terms.iter().cloned());
    Some(ModelSpec {
        apc_mode: None,
        fixed_terms: fixed,
        ..spec.clone()
    })
}

struct LmmOutcome {
    name: String,
    fit: FittedModel,
    icc: Option<f64>,
    r2: f64,
    lrts: Vec<(&'static str, LrtResult)>,
    diagnostics: DiagnosticsReport,
    trajectories: Vec<(usize, f64, f64, f64)>,
}

fn run_model(cfg: &Loaded, table: &ComparisonTable, entry: &ModelEntry) -> permanence::Result<LmmOutcome> {
    let spec = entry.spec();
    let frame = model_frame(table, entry)?;
    let design = build_design_frame(&frame, &spec)?;
    let fit = fit_reml(&design)?;
    let r2 = marginal_r2(&fit, &design.x)?;

    let mut lrts = Vec::new();
    let icc_value = match spec.random {
        RandomStructure::InterceptOnly => Some(icc(&fit)?),
        RandomStructure::InterceptAndSlopeOnT => {
            let ri = fit_reml(&build_design_frame(&frame, &with_random(&spec, RandomStructure::InterceptOnly))?)?;
            lrts.push(("random slope on T", likelihood_ratio_test(&ri, &fit)?));
            Some(icc(&ri)?)
        }
    };
    if let Some(reduced) = without_temporal(&spec) {
        let full_ml = fit_ml(&design)?;
        let reduced_ml = fit_ml(&build_design_frame(&frame, &reduced)?)?;
        lrts.push(("temporal fixed effect", likelihood_ratio_test(&reduced_ml, &full_ml)?));
    }
    let diagnostics = residual_diagnostics(&fit, &design, cfg.config.seed)?;
    let trajectories = trajectories(&frame, &spec, &design, &fit)?;
    Ok(LmmOutcome {
        name: entry.name.clone(),
        fit,
        icc: icc_value,
        r2,
        lrts,
        diagnostics,
        trajectories,
    })
}

/// Population-level predictions over elapsed time for each enrollment-age
/// group, holding the other numeric covariates at their means and other
/// factors at their first level. Rows: (age group, group mean age, T, y).
fn trajectories(
    frame: &ModelFrame,
    spec: &ModelSpec,
    design: &Design,
    fit: &FittedModel,
) -> permanence::Result<Vec<(usize, f64, f64, f64)>> {
    let rows = complete_rows(frame, spec)?;
    let col_mean = |v: &[f64]| rows.iter().map(|&i| v[i]).sum::<f64>() / rows.len() as f64;
    let ages = &frame.numeric["A_gallery"];
    let t_max = rows.iter().map(|&i| frame.numeric["T"][i]).fold(0.0, f64::max);
    let group_codes = &frame.factors["age_group"].codes;

    let mut pred = ModelFrame {
        outcome_name: frame.outcome_name.clone(),
        outcome: Vec::new(),
        numeric: frame.numeric.keys().map(|k| (k.clone(), Vec::new())).collect(),
        factors: frame.factors.clone(),
        groups: Vec::new(),
        row_keys: Vec::new(),
        standardization: frame.standardization,
    };
    for f in pred.factors.values_mut() {
        f.codes.clear();
    }
    let means: BTreeMap<&str, f64> = frame.numeric.iter().map(|(k, v)| (k.as_str(), col_mean(v))).collect();
    let mut group_age = BTreeMap::new();
    for g in 0..AGE_GROUPS.len() {
        let members: Vec<f64> = rows.iter().filter(|&&i| group_codes[i] == g).map(|&i| ages[i]).collect();
        if members.is_empty() {
            continue;
        }
        let a = members.iter().sum::<f64>() / members.len() as f64;
        group_age.insert(g, a);
        let mut t = 0.0;
        while t <= t_max + 1e-9 {
            for (name, col) in pred.numeric.iter_mut() {
                col.push(match name.as_str() {
                    "A_gallery" => a,
                    "T" => t,
                    "delta_A" => t / 12.0,
                    "A_probe" => a + t / 12.0,
                    other => means[other],
                });
            }
            for (fname, f) in pred.factors.iter_mut() {
                f.codes.push(if fname == "age_group" { g } else { 0 });
            }
            pred.outcome.push(0.0);
            pred.groups.push("trajectory".into());
            pred.row_keys.push(format!("{g}|{t:08.2}"));
            t += 6.0;
        }
    }
    let pd = build_prediction_design(&pred, spec)?;
    let y = fit.predict(&pd.x);
    let scale = |v: f64| if design.standardized { v * design.outcome_sd + design.outcome_mean } else { v };
    Ok(pd
        .row_keys
        .iter()
        .zip(y.iter())
        .map(|(key, &v)| {
            let (g, t) = key.split_once('|').expect("row key");
            let g: usize = g.parse().expect("row key");
            (g, group_age[&g], t.parse().expect("row key"), scale(v))
        })
        .collect())
}

fn thin_qq(qq: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if qq.len() <= QQ_POINTS {
        return qq.to_vec();
    }
    let step = qq.len().div_ceil(QQ_POINTS);
    let mut out: Vec<(f64, f64)> = qq.iter().step_by(step).copied().collect();
    if (qq.len() - 1) % step != 0 {
        out.push(*qq.last().expect("non-empty"));
    }
    out
}

fn models<'a>(cfg: &'a Loaded, names: &[String]) -> CliResult<Vec<&'a ModelEntry>> {
    let all = &cfg.config.models;
    if all.is_empty() {
        return Err(CliError::config("no [[models]] configured"));
    }
    Ok(if names.is_empty() {
        all.iter().collect()
    } else {
        all.iter().filter(|e| names.contains(&e.name)).collect()
    })
}

pub fn lmm(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "lmm")?;
    let table = load_pairs(&mut run)?;
    let entries = models(cfg, &[])?;
    let results: Vec<permanence::Result<LmmOutcome>> =
        entries.par_iter().map(|e| run_model(cfg, &table, e)).collect();
    let mut outcomes = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        outcomes.push(r.map_err(|err| {
            let mut c = CliError::from(err);
            c.message = format!("model `{}`: {}", e.name, c.message);
            c
        })?);
    }
    outcomes.sort_by(|a, b| a.name.cmp(&b.name));

    let mut fixed = Table::new(&["model", "predictor", "beta", "se", "z", "p_value"]);
    let mut var = Table::new(&[
        "model",
        "n_obs",
        "n_subjects",
        "n_dropped",
        "var_intercept",
        "var_slope",
        "cov_intercept_slope",
        "corr_intercept_slope",
        "sigma2",
        "icc",
        "marginal_r2",
        "loglik",
        "aic",
        "converged",
        "iterations",
        "boundary",
        "local_check_passed",
    ]);
    let mut lrt = Table::new(&["model", "test", "chi2", "df", "p_value"]);
    let mut diag = Table::new(&["model", "n", "n_tested", "subsampled", "shapiro_w", "shapiro_p"]);
    let mut qq = Table::new(&["model", "sample_quantile", "normal_quantile"]);
    let mut traj = Table::new(&["model", "age_group", "mean_enrollment_age", "T_months", "predicted"]);
    let mut summaries = Vec::new();
    let mut s = String::new();

    for o in &outcomes {
        let f = &o.fit;
        for (j, c) in f.columns.iter().enumerate() {
            fixed.row(&[o.name.clone(), c.clone(), num(f.beta[j]), num(f.se[j]), num(f.z_stats[j]), num(f.p_values[j])]);
        }
        let slope = f.sigma.nrows() > 1;
        let na = || "NA".to_string();
        var.row(&[
            o.name.clone(),
            f.n_obs.to_string(),
            f.n_subjects.to_string(),
            f.n_dropped.to_string(),
            num(f.sigma[(0, 0)]),
            if slope { num(f.sigma[(1, 1)]) } else { na() },
            if slope { num(f.sigma[(0, 1)]) } else { na() },
            f.random_correlation().map(num).unwrap_or_else(na),
            num(f.sigma2),
            o.icc.map(num).unwrap_or_else(na),
            num(o.r2),
            num(f.loglik),
            num(f.aic),
            f.converged.to_string(),
            f.iterations.to_string(),
            f.boundary.to_string(),
            f.local_check_passed.to_string(),
        ]);
        for (test, r) in &o.lrts {
            lrt.row(&[o.name.clone(), test.to_string(), num(r.chi2), r.df.to_string(), num(r.p_value)]);
        }
        let d = &o.diagnostics;
        diag.row(&[
            o.name.clone(),
            d.n.to_string(),
            d.n_tested.to_string(),
            d.subsampled.to_string(),
            num(d.shapiro_w),
            num(d.shapiro_p),
        ]);
        for (a, b) in thin_qq(&d.qq) {
            qq.row(&[o.name.clone(), num(a), num(b)]);
        }
        for &(g, a, t, y) in &o.trajectories {
            traj.row(&[o.name.clone(), AGE_GROUPS[g].into(), num(a), num(t), num(y)]);
        }
        summaries.push(FitSummary {
            label: o.name.clone(),
            fit: o.fit.clone(),
            icc: o.icc,
            marginal_r2: Some(o.r2),
        });
        let _ = writeln!(
            s,
            "{}: {} rows / {} subjects, loglik {:.2}, converged {}, boundary {}",
            o.name, f.n_obs, f.n_subjects, f.loglik, f.converged, f.boundary
        );
        for (test, r) in &o.lrts {
            let _ = writeln!(s, "  LRT {test}: chi2 {:.3}, df {}, p {}", r.chi2, r.df, format_p(r.p_value));
        }
        let _ = writeln!(s, "  Shapiro-Wilk W {:.4} (p {})", d.shapiro_w, format_p(d.shapiro_p));
    }
    run.write_table("fixed_effects.csv", fixed)?;
    run.write_table("variance_components.csv", var)?;
    run.write_table("lrt.csv", lrt)?;
    run.write_table("residual_diagnostics.csv", diag)?;
    run.write_table("residual_qq.csv", qq)?;
    run.write_table(TRAJECTORY_FILE, traj)?;
    run.write("lmm_report.txt", render_fits(&summaries).as_bytes())?;
    run.finish(&s)
}

pub fn apc(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "apc")?;
    let table = load_pairs(&mut run)?;
    let entries: Vec<&ModelEntry> = models(cfg, &[])?.into_iter().filter(|e| e.apc_mode.is_some()).collect();
    if entries.is_empty() {
        return Err(CliError::config("apc needs at least one model with `apc_mode`"));
    }
    let mut reports: Vec<(String, ApcReport)> = Vec::new();
    for e in entries {
        let frame = model_frame(&table, e)?;
        let rep = compare_apc_frame(&frame, &e.spec()).map_err(|err| {
            let mut c = CliError::from(err);
            c.message = format!("model `{}`: {}", e.name, c.message);
            c
        })?;
        reports.push((e.name.clone(), rep));
    }
    reports.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Table::new(&[
        "model",
        "parameterization",
        "n_obs",
        "outcome_sha256",
        "loglik",
        "aic",
        "delta_aic",
        "age_variable",
        "age_beta",
        "age_se",
        "age_p",
        "temporal_variable",
        "temporal_beta",
        "temporal_se",
        "temporal_p",
        "converged",
        "boundary",
    ]);
    let mut vif = Table::new(&["model", "predictor", "vif"]);
    let mut text = String::new();
    let mut s = String::new();
    for (name, rep) in &reports {
        for r in &rep.rows {
            out.row(&[
                name.clone(),
                r.mode.label().into(),
                r.n_obs.to_string(),
                r.outcome_checksum.clone(),
                num(r.loglik),
                num(r.aic),
                num(r.delta_aic),
                r.age.name.clone(),
                num(r.age.beta),
                num(r.age.se),
                num(r.age.p_value),
                r.temporal.name.clone(),
                num(r.temporal.beta),
                num(r.temporal.se),
                num(r.temporal.p_value),
                r.converged.to_string(),
                r.boundary.to_string(),
            ]);
        }
        for (p, v) in &rep.overidentified_vif {
            vif.row(&[name.clone(), p.clone(), num(*v)]);
        }
        let _ = writeln!(text, "== {name}\n{}", render_apc(rep));
        let best = rep
            .rows
            .iter()
            .min_by(|a, b| a.aic.total_cmp(&b.aic))
            .map(|r| r.mode.label())
            .unwrap_or("NA");
        let _ = writeln!(s, "{name}: {} rows dropped for completeness; lowest AIC: {best}", rep.n_dropped);
        for r in &rep.rows {
            let _ = writeln!(
                s,
                "  {:<22} {} = {:.4} (p {}), {} = {:.4} (p {})",
                r.mode.label(),
                r.age.name,
                r.age.beta,
                format_p(r.age.p_value),
                r.temporal.name,
                r.temporal.beta,
                format_p(r.temporal.p_value)
            );
        }
    }
    run.write_table("apc.csv", out)?;
    run.write_table("apc_vif.csv", vif)?;
    run.write("apc_report.txt", text.as_bytes())?;
    run.finish(&s)
}

pub fn cv(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "cv")?;
    let table = load_pairs(&mut run)?;
    let entries = models(cfg, &cfg.config.cv.models)?;
    let k = cfg.config.cv.k;
    let seed = cfg.config.seed;

    let mut results: Vec<(String, CvReport, f64)> = Vec::new();
    for e in entries {
        let wrap = |err: permanence::Error| {
            let mut c = CliError::from(err);
            c.message = format!("model `{}`: {}", e.name, c.message);
            c
        };
        let frame = model_frame(&table, e).map_err(wrap)?;
        let spec = e.spec();
        let rep = kfold_subject_cv_frame(&frame, &spec, k, seed).map_err(wrap)?;
        let design = build_design_frame(&frame, &spec).map_err(wrap)?;
        let fit = fit_reml(&design).map_err(wrap)?;
        let r2 = marginal_r2(&fit, &design.x).map_err(wrap)?;
        results.push((e.name.clone(), rep, r2));
    }
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut folds = Table::new(&["model", "fold", "n_test_subjects", "n_test_rows", "oos_r2", "rmse"]);
    let mut summary = Table::new(&["model", "k", "seed", "mean_oos_r2", "mean_rmse", "within_sample_marginal_r2"]);
    let mut assign = Table::new(&["model", "subject_id", "fold"]);
    let mut s = String::new();
    for (name, rep, r2) in &results {
        for f in &rep.per_fold {
            folds.row(&[
                name.clone(),
                f.fold.to_string(),
                f.n_test_subjects.to_string(),
                f.n_test_rows.to_string(),
                num(f.oos_r2),
                num(f.rmse),
            ]);
        }
        for (subj, fold) in &rep.assignment {
            assign.row(&[name.clone(), subj.clone(), fold.to_string()]);
        }
        summary.row(&[
            name.clone(),
            rep.k.to_string(),
            rep.seed.to_string(),
            num(rep.mean_oos_r2),
            num(rep.mean_rmse),
            num(*r2),
        ]);
        let _ = writeln!(
            s,
            "{name}: {k}-fold subject CV, mean out-of-sample R2 {:.4} (within-sample marginal R2 {:.4}), mean RMSE {:.4}",
            rep.mean_oos_r2, r2, rep.mean_rmse
        );
    }
    run.write_table("cv_folds.csv", folds)?;
    run.write_table("cv.csv", summary)?;
    run.write_table("cv_assignment.csv", assign)?;
    run.finish(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use permanence::lmm::ApcMode;

    #[test]
    fn temporal_reduction_keeps_the_age_variable() {
        let spec = ModelSpec::new(
            "similarity",
            Some(ApcMode::GalleryAgePlusDeltaA),
            &["DC"],
            RandomStructure::InterceptAndSlopeOnT,
        )
        .unwrap();
        let r = without_temporal(&spec).unwrap();
        assert_eq!(r.apc_mode, None);
        assert_eq!(r.fixed_terms[0], Term::Continuous("A_gallery".into()));
        assert_eq!(r.fixed_terms.len(), 2);
        let none = ModelSpec::new("similarity", None, &["DC"], RandomStructure::InterceptOnly).unwrap();
        assert!(without_temporal(&none).is_none());
    }

    #[test]
    fn qq_thinning_keeps_extremes() {
        let qq: Vec<(f64, f64)> = (0..2503).map(|i| (i as f64, i as f64)).collect();
        let t = thin_qq(&qq);
        assert!(t.len() <= QQ_POINTS + 1);
        assert_eq!(t[0], qq[0]);
        assert_eq!(*t.last().unwrap(), qq[2502]);
    }
}
