//! Verification error rates, confidence bounds, threshold calibration,
//! DET/EER/AUC, AND-rule fusion and failure analysis.
//!
//! Internally every score is mapped to a similarity key (distances are
//! negated), so a pair matches when `key >= threshold_key` for both
//! orientations.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ComparisonRecord, MatcherProfile, PairKind};
use crate::pairing::ComparisonTable;
use crate::stats::{normal_quantile, pearson, pearson_p_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    Match,
    NonMatch,
}

/// Match at exactly the threshold for both orientations.
pub fn decide(score: f64, threshold: f64, profile: &MatcherProfile) -> Decision {
    if profile.similarity_key(score) >= profile.similarity_key(threshold) {
        Decision::Match
    } else {
        Decision::NonMatch
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(Error::InvalidInput(format!("wilson interval needs 0 <= k <= n, n >= 1 (k={k}, n={n})")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidInput(format!("confidence {confidence} outside (0,1)")));
    }
    let z = normal_quantile(0.5 + confidence / 2.0);
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if k == n { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

/// Upper bound 3/n on an event rate after zero events in `n` trials.
pub fn rule_of_three(n: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidInput("rule of three needs n >= 1".into()));
    }
    Ok(3.0 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CiMethod {
    Wilson,
    RuleOfThree,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalStat {
    pub interval_months: i64,
    pub n_genuine: u64,
    pub n_false_nonmatch: u64,
    pub fnmr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: CiMethod,
}

/// Nearest multiple of `width`, halves rounded away from zero.
pub fn interval_bin(gap_months: i64, width: i64) -> i64 {
    assert!(width > 0);
    let q = (2 * gap_months.abs() + width) / (2 * width);
    gap_months.signum() * q * width
}

/// Per-bin FNMR over the genuine pairs of `table`. Empty bins are omitted.
pub fn fnmr_by_interval(
    table: &ComparisonTable,
    matcher: &str,
    threshold: f64,
    bin_width: i64,
    confidence: f64,
) -> Result<Vec<IntervalStat>> {
    if bin_width <= 0 {
        return Err(Error::InvalidInput("bin width must be positive".into()));
    }
    let profile = table.profile(matcher)?;
    let mut bins: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    for r in table.of_kind(PairKind::Genuine) {
        let s = r
            .score(matcher)
            .ok_or_else(|| Error::IncompleteScores { matcher: matcher.into(), count: 1 })?;
        let e = bins.entry(interval_bin(r.gap_months, bin_width)).or_default();
        e.0 += 1;
        if decide(s, threshold, profile) == Decision::NonMatch {
            e.1 += 1;
        }
    }
    bins.into_iter()
        .map(|(interval, (n, k))| {
            let fnmr = k as f64 / n as f64;
            let (ci_low, ci_high, ci_method) = if k == 0 {
                (0.0, rule_of_three(n)?.min(1.0), CiMethod::RuleOfThree)
            } else {
                let (lo, hi) = wilson_interval(k, n, confidence)?;
                (lo, hi, CiMethod::Wilson)
            };
            Ok(IntervalStat {
                interval_months: interval,
                n_genuine: n,
                n_false_nonmatch: k,
                fnmr,
                ci_low,
                ci_high,
                ci_method,
            })
        })
        .collect()
}

fn matcher_scores(table: &ComparisonTable, matcher: &str, kind: PairKind) -> Result<Vec<f64>> {
    let mut missing = 0;
    let mut out = Vec::new();
    for r in table.of_kind(kind) {
        match r.score(matcher) {
            Some(s) => out.push(s),
            None => missing += 1,
        }
    }
    if missing > 0 {
        return Err(Error::IncompleteScores { matcher: matcher.into(), count: missing });
    }
    Ok(out)
}

/// Fraction of the impostor pairs of `table` decided Match.
pub fn fmr_at_threshold(table: &ComparisonTable, matcher: &str, threshold: f64) -> Result<f64> {
    let profile = table.profile(matcher)?;
    let imp = matcher_scores(table, matcher, PairKind::Impostor)?;
    if imp.is_empty() {
        return Err(Error::Empty("impostor table"));
    }
    let accepted = imp.iter().filter(|&&s| decide(s, threshold, profile) == Decision::Match).count();
    Ok(accepted as f64 / imp.len() as f64)
}

/// Similarity keys sorted ascending.
fn sorted_keys(scores: &[f64], profile: &MatcherProfile) -> Result<Vec<f64>> {
    let mut k: Vec<f64> = scores.iter().map(|&s| profile.similarity_key(s)).collect();
    if k.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    k.sort_by(f64::total_cmp);
    Ok(k)
}

/// Error counts at a key threshold: (#impostor >= t, #genuine < t).
fn counts_at(gen: &[f64], imp: &[f64], t: f64) -> (usize, usize) {
    let fm = imp.len() - imp.partition_point(|&x| x < t);
    let fnm = gen.partition_point(|&x| x < t);
    (fm, fnm)
}

/// Unique observed keys, ascending.
fn candidates(gen: &[f64], imp: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = gen.iter().chain(imp).copied().collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// Loosest observed score whose FMR does not exceed `target_fmr`.
pub fn calibrate_scores(
    genuine: &[f64],
    impostor: &[f64],
    profile: &MatcherProfile,
    target_fmr: f64,
) -> Result<Calibration> {
    if genuine.is_empty() {
        return Err(Error::Empty("genuine scores"));
    }
    if impostor.is_empty() {
        return Err(Error::Empty("impostor scores"));
    }
    let gen = sorted_keys(genuine, profile)?;
    let imp = sorted_keys(impostor, profile)?;
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let cand = candidates(&gen, &imp);
    // FMR is non-increasing along the ascending candidates.
    let first_ok = cand.partition_point(|&t| counts_at(&gen, &imp, t).0 as f64 / ni > target_fmr);
    if first_ok == cand.len() {
        let strictest = *cand.last().expect("non-empty");
        return Err(Error::CalibrationInfeasible {
            target: target_fmr,
            strictest_fmr: counts_at(&gen, &imp, strictest).0 as f64 / ni,
        });
    }
    let t = cand[first_ok];
    let (fm, fnm) = counts_at(&gen, &imp, t);
    Ok(Calibration {
        threshold: profile.from_similarity_key(t),
        fmr: fm as f64 / ni,
        fnmr: fnm as f64 / ng,
    })
}

pub fn calibrate_threshold(table: &ComparisonTable, matcher: &str, target_fmr: f64) -> Result<Calibration> {
    let profile = table.profile(matcher)?;
    let gen = matcher_scores(table, matcher, PairKind::Genuine)?;
    let imp = matcher_scores(table, matcher, PairKind::Impostor)?;
    calibrate_scores(&gen, &imp, profile, target_fmr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetPoint {
    /// Threshold on the matcher's own scale; the last point rejects everything.
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetCurve {
    /// Ordered from the loosest to the strictest threshold.
    pub points: Vec<DetPoint>,
    pub eer: f64,
    pub auc: f64,
}

pub fn det_scores(genuine: &[f64], impostor: &[f64], profile: &MatcherProfile) -> Result<DetCurve> {
    if genuine.is_empty() {
        return Err(Error::Empty("genuine scores"));
    }
    if impostor.is_empty() {
        return Err(Error::Empty("impostor scores"));
    }
    let gen = sorted_keys(genuine, profile)?;
    let imp = sorted_keys(impostor, profile)?;
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let mut keys = candidates(&gen, &imp);
    keys.push(f64::INFINITY);

    let counts: Vec<(usize, usize)> = keys.iter().map(|&t| counts_at(&gen, &imp, t)).collect();
    let points: Vec<DetPoint> = keys
        .iter()
        .zip(&counts)
        .map(|(&t, &(fm, fnm))| DetPoint {
            threshold: profile.from_similarity_key(t),
            fmr: fm as f64 / ni,
            fnmr: fnm as f64 / ng,
        })
        .collect();

    let eer = equal_error_rate(&points);
    // Trapezoids in integer counts, so the area is exact up to one division.
    let (ngu, niu) = (gen.len() as u128, imp.len() as u128);
    let twice: u128 = counts
        .windows(2)
        .map(|w| (w[0].0 - w[1].0) as u128 * ((ngu - w[0].1 as u128) + (ngu - w[1].1 as u128)))
        .sum();
    let auc = twice as f64 / (2 * ngu * niu) as f64;
    Ok(DetCurve { points, eer, auc })
}

/// Crossing of FNMR and FMR, interpolated linearly between the bracketing points.
fn equal_error_rate(points: &[DetPoint]) -> f64 {
    let d = |p: &DetPoint| p.fnmr - p.fmr;
    let i = points.iter().position(|p| d(p) >= 0.0).expect("the reject-all point has FNMR 1");
    let b = points[i];
    if d(&b) == 0.0 || i == 0 {
        return (b.fmr + b.fnmr) / 2.0;
    }
    let a = points[i - 1];
    let frac = -d(&a) / (d(&b) - d(&a));
    a.fmr + frac * (b.fmr - a.fmr)
}

pub fn det_curve(table: &ComparisonTable, matcher: &str) -> Result<DetCurve> {
    let profile = table.profile(matcher)?;
    let gen = matcher_scores(table, matcher, PairKind::Genuine)?;
    let imp = matcher_scores(table, matcher, PairKind::Impostor)?;
    det_scores(&gen, &imp, profile)
}

/// Counts of Match decisions by two matchers over a set of pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Agreement {
    pub n: u64,
    pub both: u64,
    pub a_only: u64,
    pub b_only: u64,
    pub neither: u64,
}

impl Agreement {
    pub fn accepted_a(&self) -> u64 {
        self.both + self.a_only
    }

    pub fn accepted_b(&self) -> u64 {
        self.both + self.b_only
    }

    fn rate(&self, count: u64) -> Option<f64> {
        (self.n > 0).then(|| count as f64 / self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionReport {
    pub matcher_a: String,
    pub matcher_b: String,
    pub threshold_a: f64,
    pub threshold_b: f64,
    pub impostor: Agreement,
    pub genuine: Agreement,
    pub fmr_a: Option<f64>,
    pub fmr_b: Option<f64>,
    pub fmr_fused: Option<f64>,
    pub fnmr_a: Option<f64>,
    pub fnmr_b: Option<f64>,
    pub fnmr_fused: Option<f64>,
}

fn both_scores<'a>(
    records: impl Iterator<Item = &'a ComparisonRecord>,
    a: &str,
    b: &str,
) -> Result<Vec<(&'a ComparisonRecord, f64, f64)>> {
    let mut out = Vec::new();
    let (mut miss_a, mut miss_b) = (0, 0);
    for r in records {
        match (r.score(a), r.score(b)) {
            (Some(x), Some(y)) => out.push((r, x, y)),
            (x, y) => {
                miss_a += x.is_none() as usize;
                miss_b += y.is_none() as usize;
            }
        }
    }
    if miss_a > 0 {
        return Err(Error::IncompleteScores { matcher: a.into(), count: miss_a });
    }
    if miss_b > 0 {
        return Err(Error::IncompleteScores { matcher: b.into(), count: miss_b });
    }
    Ok(out)
}

/// Accept only when both matchers accept.
pub fn fuse_and_rule(
    table: &ComparisonTable,
    matcher_a: &str,
    thr_a: f64,
    matcher_b: &str,
    thr_b: f64,
) -> Result<FusionReport> {
    let (pa, pb) = (table.profile(matcher_a)?, table.profile(matcher_b)?);
    let rows = both_scores(table.records.iter(), matcher_a, matcher_b)?;
    let mut imp = Agreement::default();
    let mut gen = Agreement::default();
    for (r, sa, sb) in rows {
        let acc = match r.kind {
            PairKind::Impostor => &mut imp,
            PairKind::Genuine => &mut gen,
        };
        acc.n += 1;
        let ma = decide(sa, thr_a, pa) == Decision::Match;
        let mb = decide(sb, thr_b, pb) == Decision::Match;
        match (ma, mb) {
            (true, true) => acc.both += 1,
            (true, false) => acc.a_only += 1,
            (false, true) => acc.b_only += 1,
            (false, false) => acc.neither += 1,
        }
    }
    Ok(FusionReport {
        matcher_a: matcher_a.into(),
        matcher_b: matcher_b.into(),
        threshold_a: thr_a,
        threshold_b: thr_b,
        fmr_a: imp.rate(imp.accepted_a()),
        fmr_b: imp.rate(imp.accepted_b()),
        fmr_fused: imp.rate(imp.both),
        fnmr_a: gen.rate(gen.n - gen.accepted_a()),
        fnmr_b: gen.rate(gen.n - gen.accepted_b()),
        fnmr_fused: gen.rate(gen.n - gen.both),
        impostor: imp,
        genuine: gen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FailureKind {
    AOnly,
    BOnly,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub score: String,
    pub covariate: &'static str,
    /// `None` when undefined (fewer than two pairs or a constant column).
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureCategory {
    pub kind: FailureKind,
    pub n_pairs: usize,
    pub n_subjects: usize,
    pub correlations: Vec<CorrelationEntry>,
    /// Share of the category with min(Q_gallery, Q_probe) below the cut.
    pub below_quality_cut: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureReport {
    pub n_genuine: usize,
    pub n_cohort_subjects: usize,
    pub n_failure_subjects: usize,
    pub failure_subject_fraction: f64,
    pub min_quality_cut: f64,
    pub categories: Vec<FailureCategory>,
}

const FAILURE_COVARIATES: [&str; 4] = ["DC", "Q_gallery", "Q_probe", "Q_min"];

fn failure_covariate(r: &ComparisonRecord, name: &str) -> f64 {
    match name {
        "DC" => r.dc,
        "Q_gallery" => r.covariates.q_gallery,
        "Q_probe" => r.covariates.q_probe,
        "Q_min" => r.covariates.min_quality(),
        _ => unreachable!(),
    }
}

/// Partitions genuine pairs rejected by either matcher and describes each group.
pub fn failure_analysis(
    table: &ComparisonTable,
    matcher_a: &str,
    thr_a: f64,
    matcher_b: &str,
    thr_b: f64,
    min_quality_cut: f64,
) -> Result<FailureReport> {
    let (pa, pb) = (table.profile(matcher_a)?, table.profile(matcher_b)?);
    let rows = both_scores(table.of_kind(PairKind::Genuine), matcher_a, matcher_b)?;
    let cohort: HashSet<&str> = rows.iter().map(|(r, _, _)| r.gallery_subject.as_str()).collect();

    let mut groups: [(FailureKind, Vec<(&ComparisonRecord, f64, f64)>); 3] =
        [(FailureKind::AOnly, vec![]), (FailureKind::BOnly, vec![]), (FailureKind::Both, vec![])];
    for &(r, sa, sb) in &rows {
        let fa = decide(sa, thr_a, pa) == Decision::NonMatch;
        let fb = decide(sb, thr_b, pb) == Decision::NonMatch;
        let slot = match (fa, fb) {
            (true, false) => 0,
            (false, true) => 1,
            (true, true) => 2,
            (false, false) => continue,
        };
        groups[slot].1.push((r, sa, sb));
    }

    let mut failing: HashSet<&str> = HashSet::new();
    let mut categories = Vec::new();
    for (kind, members) in &groups {
        let subjects: HashSet<&str> = members.iter().map(|(r, _, _)| r.gallery_subject.as_str()).collect();
        failing.extend(&subjects);
        let mut correlations = Vec::new();
        for (name, pick) in [(matcher_a, 0usize), (matcher_b, 1usize)] {
            let s: Vec<f64> = members.iter().map(|m| if pick == 0 { m.1 } else { m.2 }).collect();
            for cov in FAILURE_COVARIATES {
                let x: Vec<f64> = members.iter().map(|m| failure_covariate(m.0, cov)).collect();
                let r = pearson(&s, &x);
                correlations.push(CorrelationEntry {
                    score: name.to_string(),
                    covariate: cov,
                    r,
                    p_value: r.and_then(|r| pearson_p_value(r, s.len())),
                });
            }
        }
        let below = members
            .iter()
            .filter(|m| m.0.covariates.min_quality() < min_quality_cut)
            .count();
        categories.push(FailureCategory {
            kind: *kind,
            n_pairs: members.len(),
            n_subjects: subjects.len(),
            correlations,
            below_quality_cut: (!members.is_empty()).then(|| below as f64 / members.len() as f64),
        });
    }

    Ok(FailureReport {
        n_genuine: rows.len(),
        n_cohort_subjects: cohort.len(),
        n_failure_subjects: failing.len(),
        failure_subject_fraction: if cohort.is_empty() {
            0.0
        } else {
            failing.len() as f64 / cohort.len() as f64
        },
        min_quality_cut,
        categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Eye, Orientation, PairCovariates};

    fn sim() -> MatcherProfile {
        MatcherProfile::new("sim", Orientation::HigherIsBetter, 0.0, 2000.0, 34.0).unwrap()
    }

    fn hd() -> MatcherProfile {
        MatcherProfile::new("hd", Orientation::LowerIsBetter, 0.0, 1.0, 0.42).unwrap()
    }

    fn pair(kind: PairKind, subject: &str, gap: i64, scores: &[(&str, f64)]) -> ComparisonRecord {
        ComparisonRecord {
            kind,
            eye: Eye::Left,
            gallery_image_id: format!("{subject}_g"),
            probe_image_id: format!("{subject}_p{gap}"),
            gallery_subject: subject.into(),
            probe_subject: if kind == PairKind::Genuine { subject.into() } else { "other".into() },
            gallery_age: 6,
            probe_age: 7,
            gap_months: gap,
            delta_age_years: 1,
            dc: 0.9,
            covariates: PairCovariates {
                q_gallery: 60.0,
                q_probe: 60.0,
                ..Default::default()
            },
            scores: scores.iter().map(|(m, s)| (m.to_string(), *s)).collect(),
        }
    }

    #[test]
    fn decide_boundaries() {
        assert_eq!(decide(34.0, 34.0, &sim()), Decision::Match);
        assert_eq!(decide(33.9, 34.0, &sim()), Decision::NonMatch);
        assert_eq!(decide(0.43, 0.42, &hd()), Decision::NonMatch);
        assert_eq!(decide(0.42, 0.42, &hd()), Decision::Match);
    }

    #[test]
    fn wilson_reference_values() {
        // z^2 = 3.841459; high = z^2 / (n + z^2) when k = 0.
        let (lo, hi) = wilson_interval(0, 100, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 3.841_458_820_694_124 / 103.841_458_820_694_124).abs() < 1e-12);
        assert!((hi - 0.0370).abs() < 5e-5);
        let (lo, hi) = wilson_interval(8, 330, 0.95).unwrap();
        assert!(lo < 8.0 / 330.0 && 8.0 / 330.0 < hi);
        assert_eq!(wilson_interval(50, 50, 0.95).unwrap().1, 1.0);
        assert!(wilson_interval(5, 4, 0.95).is_err());
        assert!(wilson_interval(0, 0, 0.95).is_err());
    }

    #[test]
    fn wilson_contains_point_estimate_exhaustively() {
        for n in 1..=200u64 {
            for k in 0..=n {
                let (lo, hi) = wilson_interval(k, n, 0.95).unwrap();
                let p = k as f64 / n as f64;
                assert!(lo <= p && p <= hi && 0.0 <= lo && hi <= 1.0, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn rule_of_three_values() {
        assert_eq!(rule_of_three(1000).unwrap(), 0.003);
        assert_eq!(rule_of_three(3).unwrap(), 1.0);
        assert_eq!(rule_of_three(300).unwrap(), 0.01);
        assert!(rule_of_three(0).is_err());
    }

    #[test]
    fn bins_round_half_away_from_zero() {
        // Scalar oracle: f64::round rounds halves away from zero.
        for gap in -200i64..=200 {
            let want = (gap as f64 / 6.0).round() as i64 * 6;
            assert_eq!(interval_bin(gap, 6), want, "gap {gap}");
        }
        assert_eq!(interval_bin(45, 6), 48);
    }

    #[test]
    fn fnmr_bins() {
        let mut recs = Vec::new();
        for i in 0..330 {
            let s = if i < 8 { 20.0 } else { 80.0 };
            recs.push(pair(PairKind::Genuine, &format!("s{i}"), 12, &[("sim", s)]));
        }
        for i in 0..40 {
            recs.push(pair(PairKind::Genuine, &format!("t{i}"), 45, &[("sim", 90.0)]));
        }
        let table = ComparisonTable::new(vec![sim()], recs);
        let stats = fnmr_by_interval(&table, "sim", 34.0, 6, 0.95).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].interval_months, 12);
        assert!((stats[0].fnmr - 0.024_24).abs() < 5e-6);
        assert_eq!(stats[0].ci_method, CiMethod::Wilson);
        assert_eq!(stats[1].interval_months, 48);
        assert_eq!(stats[1].fnmr, 0.0);
        assert_eq!(stats[1].ci_method, CiMethod::RuleOfThree);
        assert_eq!(stats[1].ci_high, 3.0 / 40.0);
    }

    #[test]
    fn fmr_counts() {
        let mut recs: Vec<_> = (0..138_190)
            .map(|i| pair(PairKind::Impostor, &format!("s{i}"), 6, &[("sim", if i < 85 { 40.0 } else { 5.0 })]))
            .collect();
        let table = ComparisonTable::new(vec![sim()], recs.clone());
        let fmr = fmr_at_threshold(&table, "sim", 34.0).unwrap();
        assert!((fmr - 0.000_615).abs() < 5e-7);
        assert_eq!(fmr_at_threshold(&table, "sim", 41.0).unwrap(), 0.0);
        for r in recs.iter_mut().skip(85).take(12) {
            r.scores.insert("sim".into(), 40.0);
        }
        let table = ComparisonTable::new(vec![sim()], recs);
        assert!((fmr_at_threshold(&table, "sim", 34.0).unwrap() - 0.000_702).abs() < 5e-7);
        let empty = ComparisonTable::new(vec![sim()], vec![]);
        assert!(matches!(fmr_at_threshold(&empty, "sim", 34.0), Err(Error::Empty(_))));
    }

    #[test]
    fn calibration_separated_and_infeasible() {
        let p = sim();
        let c = calibrate_scores(&[50.0, 60.0, 70.0], &[10.0, 20.0, 30.0], &p, 0.001).unwrap();
        assert_eq!((c.fmr, c.fnmr), (0.0, 0.0));
        assert_eq!(c.threshold, 50.0);
        let err = calibrate_scores(&[10.0, 20.0], &[10.0, 20.0, 30.0], &p, 0.1).unwrap_err();
        assert!(matches!(err, Error::CalibrationInfeasible { strictest_fmr, .. } if (strictest_fmr - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn calibration_mirrors_under_negation() {
        let gen: Vec<f64> = (0..500).map(|i| 0.5 + (i as f64 * 0.37).sin() * 0.2).collect();
        let imp: Vec<f64> = (0..500).map(|i| 0.2 + (i as f64 * 0.91).cos() * 0.2).collect();
        let up = MatcherProfile::new("a", Orientation::HigherIsBetter, -1.0, 1.0, 0.0).unwrap();
        let down = MatcherProfile::new("b", Orientation::LowerIsBetter, -1.0, 1.0, 0.0).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let a = calibrate_scores(&gen, &imp, &up, 0.01).unwrap();
        let b = calibrate_scores(&neg(&gen), &neg(&imp), &down, 0.01).unwrap();
        assert_eq!(a.threshold, -b.threshold);
        assert_eq!((a.fmr, a.fnmr), (b.fmr, b.fnmr));
    }

    #[test]
    fn det_chance_and_disjoint() {
        let p = sim();
        let xs: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let d = det_scores(&xs, &xs, &p).unwrap();
        assert!((d.eer - 0.5).abs() < 1e-12);
        assert!((d.auc - 0.5).abs() < 1e-12);
        let d = det_scores(&[5.0, 6.0, 7.0], &[1.0, 2.0], &p).unwrap();
        assert_eq!(d.eer, 0.0);
        assert_eq!(d.auc, 1.0);
        let last = d.points.last().unwrap();
        assert_eq!((last.fmr, last.fnmr), (0.0, 1.0));
        assert_eq!((d.points[0].fmr, d.points[0].fnmr), (1.0, 0.0));
    }

    #[test]
    fn auc_matches_mann_whitney() {
        let gen = [3.0, 5.0, 5.0, 7.0, 2.0, 9.0];
        let imp = [1.0, 5.0, 2.0, 4.0, 6.0];
        let mut u = 0.0;
        for g in gen {
            for i in imp {
                u += if g > i { 1.0 } else if g == i { 0.5 } else { 0.0 };
            }
        }
        let d = det_scores(&gen, &imp, &sim()).unwrap();
        assert!((d.auc - u / 30.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_breakdown() {
        let mut recs = Vec::new();
        for i in 0..138_190 {
            let (a, b) = match i {
                0..82 => (0.9, 0.1),
                82..174 => (0.1, 0.9),
                174..177 => (0.9, 0.9),
                _ => (0.1, 0.1),
            };
            recs.push(pair(PairKind::Impostor, &format!("s{i}"), 6, &[("a", a), ("b", b)]));
        }
        let pa = MatcherProfile::new("a", Orientation::HigherIsBetter, 0.0, 1.0, 0.5).unwrap();
        let pb = MatcherProfile::new("b", Orientation::HigherIsBetter, 0.0, 1.0, 0.5).unwrap();
        let table = ComparisonTable::new(vec![pa, pb], recs);
        let f = fuse_and_rule(&table, "a", 0.5, "b", 0.5).unwrap();
        assert_eq!((f.impostor.a_only, f.impostor.b_only, f.impostor.both), (82, 92, 3));
        assert_eq!(f.impostor.a_only + f.impostor.b_only + f.impostor.both, 177);
        assert!((f.fmr_fused.unwrap() - 2.17e-5).abs() < 5e-8);
        assert!((f.fmr_fused.unwrap() * 100.0 - 0.002).abs() < 5e-4);
        assert_eq!(f.fnmr_fused, None);
        let strict = fuse_and_rule(&table, "a", 1.0, "b", 1.0).unwrap();
        assert_eq!(strict.fmr_fused, Some(0.0));
    }

    #[test]
    fn fusion_requires_both_scores() {
        let pa = MatcherProfile::new("a", Orientation::HigherIsBetter, 0.0, 1.0, 0.5).unwrap();
        let pb = MatcherProfile::new("b", Orientation::HigherIsBetter, 0.0, 1.0, 0.5).unwrap();
        let table = ComparisonTable::new(vec![pa, pb], vec![pair(PairKind::Impostor, "s", 6, &[("a", 0.2)])]);
        assert!(matches!(
            fuse_and_rule(&table, "a", 0.5, "b", 0.5),
            Err(Error::IncompleteScores { count: 1, .. })
        ));
    }

    #[test]
    fn failure_subjects_and_capture() {
        let pa = MatcherProfile::new("a", Orientation::HigherIsBetter, 0.0, 1.0, 0.5).unwrap();
        let pb = MatcherProfile::new("b", Orientation::LowerIsBetter, 0.0, 1.0, 0.42).unwrap();
        let mut recs = Vec::new();
        for s in 0..276 {
            for k in 0..3 {
                let (a, b) = match (s < 26, k) {
                    (true, 0) => (0.2, 0.1),
                    (true, 1) => (0.9, 0.6),
                    (true, _) => (0.3, 0.7),
                    _ => (0.9, 0.1),
                };
                let mut r = pair(PairKind::Genuine, &format!("s{s}"), 6 * (k + 1), &[("a", a), ("b", b)]);
                if s < 26 {
                    r.covariates.q_probe = 30.0 + k as f64;
                    r.dc = 0.8 + 0.01 * s as f64;
                }
                recs.push(r);
            }
        }
        let table = ComparisonTable::new(vec![pa, pb], recs);
        let rep = failure_analysis(&table, "a", 0.5, "b", 0.42, 45.0).unwrap();
        assert_eq!(rep.n_cohort_subjects, 276);
        assert_eq!(rep.n_failure_subjects, 26);
        assert!((rep.failure_subject_fraction * 100.0 - 9.4).abs() < 0.05);
        for c in &rep.categories {
            assert_eq!(c.n_pairs, 26);
            assert_eq!(c.below_quality_cut, Some(1.0));
        }
        // Every A-only failure carries the same A score: undefined correlation.
        let a_only = &rep.categories[0];
        let e = a_only.correlations.iter().find(|e| e.score == "a" && e.covariate == "DC").unwrap();
        assert_eq!(e.r, None);
        assert_eq!(e.p_value, None);
    }
}
