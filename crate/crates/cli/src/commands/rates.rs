use std::fmt::Write;

use permanence::metrics::{
    calibrate_threshold, det_curve, failure_analysis, fnmr_by_interval, fuse_and_rule, Agreement, Calibration, CiMethod,
    DetCurve, DetPoint, FailureKind, IntervalStat,
};
use permanence::model::{Eye, PairKind};
use permanence::pairing::ComparisonTable;
use rayon::prelude::*;

use super::{eye_label, load_pairs, EYE_STRATA};
use crate::config::Loaded;
use crate::error::CliResult;
use crate::output::{num, opt, Run, Table};

/// Threshold of `matcher`: fixed in config, calibrated to a target FMR, or the
/// profile default. Returns the threshold and where it came from.
pub(crate) fn resolve_threshold(cfg: &Loaded, table: &ComparisonTable, matcher: &str) -> CliResult<(f64, String)> {
    match cfg.config.thresholds.get(matcher) {
        Some(rule) if rule.threshold.is_some() => Ok((rule.threshold.unwrap(), "fixed".into())),
        Some(rule) => {
            let target = rule.target_fmr.expect("validated rule");
            let c = calibrate_threshold(table, matcher, target)?;
            Ok((c.threshold, format!("calibrated to FMR {target}")))
        }
        None => Ok((table.profile(matcher)?.default_threshold, "profile default".into())),
    }
}

fn thresholds(cfg: &Loaded, table: &ComparisonTable) -> CliResult<Vec<(String, f64, String)>> {
    cfg.config
        .profiles()
        .iter()
        .map(|p| resolve_threshold(cfg, table, &p.name).map(|(t, src)| (p.name.clone(), t, src)))
        .collect()
}

pub fn calibrate(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "calibrate")?;
    let table = load_pairs(&mut run)?;
    let items: Vec<(String, f64, Option<Eye>)> = cfg
        .config
        .profiles()
        .iter()
        .flat_map(|p| {
            let target = cfg
                .config
                .thresholds
                .get(&p.name)
                .and_then(|r| r.target_fmr)
                .unwrap_or(cfg.config.metrics.target_fmr);
            EYE_STRATA.iter().map(move |&e| (p.name.clone(), target, e))
        })
        .collect();
    let results: Vec<permanence::Result<Calibration>> = items
        .par_iter()
        .map(|(m, target, eye)| calibrate_threshold(&table.filtered(None, *eye), m, *target))
        .collect();

    let mut out = Table::new(&["matcher", "eye", "target_fmr", "threshold", "fmr", "fnmr"]);
    let mut s = String::new();
    for ((m, target, eye), res) in items.iter().zip(results) {
        let c = res?;
        out.row(&[m.clone(), eye_label(*eye).into(), num(*target), num(c.threshold), num(c.fmr), num(c.fnmr)]);
        let _ = writeln!(
            s,
            "{m} [{}]: threshold {} at FMR {:.3e} (target {target}), FNMR {:.4}",
            eye_label(*eye),
            num(c.threshold),
            c.fmr,
            c.fnmr
        );
    }
    run.write_table("calibration.csv", out)?;
    run.finish(&s)
}

fn ci_label(m: CiMethod) -> &'static str {
    match m {
        CiMethod::Wilson => "wilson",
        CiMethod::RuleOfThree => "rule_of_three",
    }
}

pub(crate) const FNMR_FILE: &str = "fnmr_intervals.csv";

pub fn fnmr(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "fnmr")?;
    let table = load_pairs(&mut run)?;
    let m = &cfg.config.metrics;
    let items: Vec<(String, f64, String, Option<Eye>)> = thresholds(cfg, &table)?
        .into_iter()
        .flat_map(|(name, t, src)| EYE_STRATA.iter().map(move |&e| (name.clone(), t, src.clone(), e)))
        .collect();
    let results: Vec<permanence::Result<Vec<IntervalStat>>> = items
        .par_iter()
        .map(|(name, t, _, eye)| {
            fnmr_by_interval(&table.filtered(None, *eye), name, *t, m.interval_bin_months, m.confidence)
        })
        .collect();

    let mut out = Table::new(&[
        "matcher",
        "eye",
        "threshold",
        "interval_months",
        "n_genuine",
        "n_false_nonmatch",
        "fnmr",
        "ci_low",
        "ci_high",
        "ci_method",
    ]);
    let mut s = String::new();
    let _ = writeln!(s, "interval FNMR, bins of {} months, {}% intervals", m.interval_bin_months, 100.0 * m.confidence);
    for ((name, t, src, eye), res) in items.iter().zip(results) {
        let stats = res?;
        let (n, k) = stats.iter().fold((0, 0), |(n, k), b| (n + b.n_genuine, k + b.n_false_nonmatch));
        let _ = writeln!(
            s,
            "{name} [{}] threshold {} ({src}): overall FNMR {} ({k}/{n}) over {} bin(s)",
            eye_label(*eye),
            num(*t),
            if n > 0 { format!("{:.4}", k as f64 / n as f64) } else { "NA".into() },
            stats.len()
        );
        for b in stats {
            out.row(&[
                name.clone(),
                eye_label(*eye).into(),
                num(*t),
                b.interval_months.to_string(),
                b.n_genuine.to_string(),
                b.n_false_nonmatch.to_string(),
                num(b.fnmr),
                num(b.ci_low),
                num(b.ci_high),
                ci_label(b.ci_method).into(),
            ]);
        }
    }
    run.write_table(FNMR_FILE, out)?;
    run.finish(&s)
}

pub(crate) const DET_FILE: &str = "det_points.csv";

/// Drops points that are visually indistinguishable from the last kept one
/// on log-FMR / linear-FNMR axes. The first and last points are kept.
fn thin(points: &[DetPoint]) -> Vec<DetPoint> {
    let mut out: Vec<DetPoint> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let keep = match out.last() {
            None => true,
            Some(_) if i + 1 == points.len() => true,
            Some(q) => {
                let lf = |x: f64| x.max(1e-9).log10();
                (lf(p.fmr) - lf(q.fmr)).abs() >= 0.01 || (p.fnmr - q.fnmr).abs() >= 0.001
            }
        };
        if keep {
            out.push(*p);
        }
    }
    out
}

pub fn det(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "det")?;
    let table = load_pairs(&mut run)?;
    let items: Vec<(String, Option<Eye>)> = cfg
        .config
        .profiles()
        .iter()
        .flat_map(|p| EYE_STRATA.iter().map(move |&e| (p.name.clone(), e)))
        .collect();
    let results: Vec<permanence::Result<DetCurve>> = items
        .par_iter()
        .map(|(name, eye)| det_curve(&table.filtered(None, *eye), name))
        .collect();

    let mut points = Table::new(&["matcher", "eye", "threshold", "fmr", "fnmr"]);
    let mut summary = Table::new(&["matcher", "eye", "n_genuine", "n_impostor", "n_points", "eer", "auc"]);
    let mut s = String::new();
    for ((name, eye), res) in items.iter().zip(results) {
        let curve = res?;
        let sub = table.filtered(None, *eye);
        let (ng, ni) = (sub.of_kind(PairKind::Genuine).count(), sub.of_kind(PairKind::Impostor).count());
        summary.row(&[
            name.clone(),
            eye_label(*eye).into(),
            ng.to_string(),
            ni.to_string(),
            curve.points.len().to_string(),
            num(curve.eer),
            num(curve.auc),
        ]);
        let _ = writeln!(s, "{name} [{}]: EER {:.5}, AUC {:.6}", eye_label(*eye), curve.eer, curve.auc);
        for p in thin(&curve.points) {
            points.row(&[name.clone(), eye_label(*eye).into(), num(p.threshold), num(p.fmr), num(p.fnmr)]);
        }
    }
    run.write_table(DET_FILE, points)?;
    run.write_table("det_summary.csv", summary)?;
    run.finish(&s)
}

fn kind_label(k: FailureKind) -> &'static str {
    match k {
        FailureKind::AOnly => "a_only",
        FailureKind::BOnly => "b_only",
        FailureKind::Both => "both",
    }
}

pub fn failures(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "failures")?;
    let table = load_pairs(&mut run)?;
    let (a, b) = cfg.config.fusion_pair()?;
    let (ta, _) = resolve_threshold(cfg, &table, &a)?;
    let (tb, _) = resolve_threshold(cfg, &table, &b)?;
    let rep = failure_analysis(&table, &a, ta, &b, tb, cfg.config.metrics.failures_min_quality)?;

    let mut cats = Table::new(&["category", "n_pairs", "n_subjects", "share_below_quality_cut"]);
    let mut corr = Table::new(&["category", "score", "covariate", "r", "p_value"]);
    let mut s = String::new();
    let _ = writeln!(s, "failure analysis: {a} (A, threshold {}) vs {b} (B, threshold {})", num(ta), num(tb));
    let _ = writeln!(
        s,
        "  {} genuine pairs from {} subjects; {} subject(s) ({:.1}%) with a failure",
        rep.n_genuine,
        rep.n_cohort_subjects,
        rep.n_failure_subjects,
        100.0 * rep.failure_subject_fraction
    );
    for c in &rep.categories {
        cats.row(&[
            kind_label(c.kind).into(),
            c.n_pairs.to_string(),
            c.n_subjects.to_string(),
            opt(c.below_quality_cut),
        ]);
        let _ = writeln!(
            s,
            "  {}: {} pair(s), {} subject(s), below quality {}: {}",
            kind_label(c.kind),
            c.n_pairs,
            c.n_subjects,
            rep.min_quality_cut,
            opt(c.below_quality_cut)
        );
        for e in &c.correlations {
            corr.row(&[kind_label(c.kind).into(), e.score.clone(), e.covariate.into(), opt(e.r), opt(e.p_value)]);
        }
    }
    run.write_table("failures.csv", cats)?;
    run.write_table("failure_correlations.csv", corr)?;
    run.finish(&s)
}

pub fn fuse(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "fuse")?;
    let table = load_pairs(&mut run)?;
    let (a, b) = cfg.config.fusion_pair()?;
    let (ta, _) = resolve_threshold(cfg, &table, &a)?;
    let (tb, _) = resolve_threshold(cfg, &table, &b)?;

    let mut out = Table::new(&[
        "eye", "kind", "n", "both", "a_only", "b_only", "neither", "rate_a", "rate_b", "rate_fused",
    ]);
    let mut s = String::new();
    let _ = writeln!(s, "AND-rule fusion of {a} ({}) and {b} ({})", num(ta), num(tb));
    for eye in EYE_STRATA {
        let rep = fuse_and_rule(&table.filtered(None, eye), &a, ta, &b, tb)?;
        let mut row = |kind: &str, g: &Agreement, r: [Option<f64>; 3]| {
            out.row(&[
                eye_label(eye).into(),
                kind.into(),
                g.n.to_string(),
                g.both.to_string(),
                g.a_only.to_string(),
                g.b_only.to_string(),
                g.neither.to_string(),
                opt(r[0]),
                opt(r[1]),
                opt(r[2]),
            ])
        };
        row("impostor", &rep.impostor, [rep.fmr_a, rep.fmr_b, rep.fmr_fused]);
        row("genuine", &rep.genuine, [rep.fnmr_a, rep.fnmr_b, rep.fnmr_fused]);
        let _ = writeln!(
            s,
            "  [{}] FMR {a} {} / {b} {} / fused {}; FNMR {a} {} / {b} {} / fused {}",
            eye_label(eye),
            opt(rep.fmr_a),
            opt(rep.fmr_b),
            opt(rep.fmr_fused),
            opt(rep.fnmr_a),
            opt(rep.fnmr_b),
            opt(rep.fnmr_fused)
        );
    }
    run.write_table("fusion.csv", out)?;
    run.finish(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(fmr: f64, fnmr: f64) -> DetPoint {
        DetPoint { threshold: 0.0, fmr, fnmr }
    }

    #[test]
    fn thinning_keeps_ends_and_visible_steps() {
        let pts = vec![pt(1.0, 0.0), pt(0.9999, 0.0), pt(0.5, 0.0), pt(0.5, 0.0005), pt(0.0, 1.0)];
        let t = thin(&pts);
        assert_eq!(t.len(), 3);
        assert_eq!(t[0], pts[0]);
        assert_eq!(t[2], pts[4]);
    }
}
