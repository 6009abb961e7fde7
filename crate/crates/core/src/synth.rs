//! Synthetic longitudinal captures and scores with known ground truth.
//!
//! Genuine scores follow `y = b'x + u0 + u1 T + e` with subject effects
//! `(u0, u1) ~ N(0, Sigma)` and `e ~ N(0, sigma2)`; `x` is evaluated with the
//! same variable names the model design uses. Every subject draws from its
//! own ChaCha8 stream, so output does not depend on thread scheduling.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmm::frame::{age_group, numeric_value, AGE_GROUPS};
use crate::model::{CaptureRecord, CaptureTable, ComparisonRecord, Eye, MatcherProfile, Orientation, ScoreTable};
use crate::pairing::{attach_scores, generate_genuine_pairs, generate_impostor_pairs, ComparisonTable, PairingConfig};
use crate::stats::normal_cdf;

const NOISE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const IMPOSTOR_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;

/// Normal distribution truncated to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Bounded {
    pub const fn new(mean: f64, sd: f64, min: f64, max: f64) -> Self {
        Bounded { mean, sd, min, max }
    }

    fn validate(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        let bad = |why: &str| Err(Error::InfeasibleConfig(format!("{name}: {why}")));
        if !(self.min <= self.max) || !self.sd.is_finite() || self.sd < 0.0 || !self.mean.is_finite() {
            return bad("need min <= max and a finite sd >= 0");
        }
        if self.min < lo || self.max > hi {
            return bad(&format!("bounds must lie within [{lo}, {hi}]"));
        }
        if self.sd == 0.0 {
            if !(self.min..=self.max).contains(&self.mean) {
                return bad("degenerate distribution outside its bounds");
            }
        } else {
            let mass = normal_cdf((self.max - self.mean) / self.sd) - normal_cdf((self.min - self.mean) / self.sd);
            if !(mass > 1e-6) {
                return bad("bounds hold (almost) no probability mass");
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        let n = Normal::new(self.mean, self.sd).expect("validated");
        loop {
            let v = n.sample(rng);
            if (self.min..=self.max).contains(&v) {
                return v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDist {
    Normal { mean: f64, sd: f64 },
    Uniform { min: f64, max: f64 },
}

impl ScoreDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScoreDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            ScoreDist::Uniform { min, max } => min.is_finite() && max.is_finite() && min < max,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InfeasibleConfig(format!("invalid score distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ScoreDist::Normal { mean, sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sd).expect("validated").sample(rng)
                }
            }
            ScoreDist::Uniform { min, max } => rng.random_range(min..max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDistributions {
    pub quality: Bounded,
    pub usable_area: Bounded,
    pub circularity: Bounded,
    /// Pupil-to-iris radius ratio.
    pub dilation: Bounded,
    pub iris_radius: Bounded,
}

impl Default for CovariateDistributions {
    fn default() -> Self {
        CovariateDistributions {
            quality: Bounded::new(70.0, 10.0, 0.0, 100.0),
            usable_area: Bounded::new(85.0, 8.0, 0.0, 100.0),
            circularity: Bounded::new(90.0, 5.0, 0.0, 100.0),
            dilation: Bounded::new(0.45, 0.08, 0.15, 0.85),
            iris_radius: Bounded::new(120.0, 8.0, 90.0, 160.0),
        }
    }
}

/// Ground truth for one matcher's genuine scores, plus its impostor law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMatcher {
    pub profile: MatcherProfile,
    /// Fixed effects by design column name ("intercept", "T", "DC",
    /// "age_group[6-7]", "A_gallery:T", ...).
    pub beta: BTreeMap<String, f64>,
    /// Covariance of (u0, u1); u1 is per month of T.
    pub sigma: [[f64; 2]; 2],
    pub sigma2: f64,
    pub impostor: ScoreDist,
}

impl SynthMatcher {
    fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.impostor.validate()?;
        let [[a, b], [c, d]] = self.sigma;
        let scale = a.abs().max(d.abs()).max(1.0);
        if !(a >= 0.0 && d >= 0.0 && b == c && a * d - b * b >= -1e-12 * scale * scale) {
            return Err(Error::InfeasibleConfig(format!(
                "matcher `{}`: Sigma must be symmetric positive semi-definite",
                self.profile.name
            )));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InfeasibleConfig(format!("matcher `{}`: sigma2 must be >= 0", self.profile.name)));
        }
        for name in self.beta.keys() {
            check_variable(name)?;
        }
        Ok(())
    }

    /// Lower factor of Sigma, tolerant of a singular matrix.
    fn sigma_factor(&self) -> [f64; 3] {
        let [[a, b], [_, d]] = self.sigma;
        let l00 = a.max(0.0).sqrt();
        let l10 = if l00 > 0.0 { b / l00 } else { 0.0 };
        let l11 = (d - l10 * l10).max(0.0).sqrt();
        [l00, l10, l11]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Inclusive integer range; the latent enrollment age is uniform on
    /// `[min, max + 1)`.
    pub enrollment_age_min: i64,
    pub enrollment_age_max: i64,
    /// Session times in months, strictly increasing.
    pub session_schedule: Vec<i64>,
    /// Subjects enroll at one of the first `enrollment_window` sessions.
    pub enrollment_window: usize,
    pub images_per_eye_per_session: usize,
    pub eyes: Vec<Eye>,
    /// Chance of leaving for good before each session after enrollment.
    pub attrition_rate: f64,
    pub covariates: CovariateDistributions,
    pub matchers: Vec<SynthMatcher>,
    /// Impostor probes per gallery image; 0 disables impostors.
    pub impostor_probes: usize,
    pub seed: u64,
}

/// Sessions every six months to month 102, with none in months 48-66.
pub fn default_schedule() -> Vec<i64> {
    (0..=102).step_by(6).filter(|m| !(48..=66).contains(m)).collect()
}

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Similarity matcher with realistic effect sizes and an ICC of 0.65.
pub fn similarity_matcher() -> SynthMatcher {
    let (sd0, sd1, rho) = (83.0, 0.3, 0.1);
    SynthMatcher {
        profile: MatcherProfile {
            name: "similarity".into(),
            orientation: Orientation::HigherIsBetter,
            score_min: 0.0,
            score_max: 2000.0,
            default_threshold: 34.0,
        },
        beta: map(&[
            ("intercept", -700.0),
            ("A_gallery", 7.58),
            ("T", -0.60),
            ("Q_gallery", 1.59),
            ("Q_probe", 1.19),
            ("U_gallery", -0.83),
            ("U_probe", 1.99),
            ("DC", 438.6),
            ("C_gallery", 3.62),
            ("C_probe", 1.18),
        ]),
        sigma: [[sd0 * sd0, rho * sd0 * sd1], [rho * sd0 * sd1, sd1 * sd1]],
        sigma2: 3709.4,
        impostor: ScoreDist::Normal { mean: 10.0, sd: 6.0 },
    }
}

pub fn hamming_matcher() -> SynthMatcher {
    let (sd0, sd1, rho) = (0.03, 0.0002, -0.1);
    SynthMatcher {
        profile: MatcherProfile {
            name: "hamming".into(),
            orientation: Orientation::LowerIsBetter,
            score_min: 0.0,
            score_max: 1.0,
            default_threshold: 0.42,
        },
        beta: map(&[
            ("intercept", 0.40),
            ("A_gallery", -0.002),
            ("T", 0.0004),
            ("Q_gallery", -0.0008),
            ("Q_probe", -0.0008),
            ("DC", -0.05),
        ]),
        sigma: [[sd0 * sd0, rho * sd0 * sd1], [rho * sd0 * sd1, sd1 * sd1]],
        sigma2: 0.0016,
        impostor: ScoreDist::Normal { mean: 0.46, sd: 0.015 },
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 276,
            enrollment_age_min: 4,
            enrollment_age_max: 12,
            session_schedule: default_schedule(),
            enrollment_window: 1,
            images_per_eye_per_session: 4,
            eyes: vec![Eye::Left, Eye::Right],
            attrition_rate: 0.134,
            covariates: CovariateDistributions::default(),
            matchers: vec![similarity_matcher(), hamming_matcher()],
            impostor_probes: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InfeasibleConfig(why.to_string()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive");
        }
        if self.enrollment_age_min < 0 || self.enrollment_age_min > self.enrollment_age_max {
            return bad("enrollment age range must satisfy 0 <= min <= max");
        }
        if self.session_schedule.is_empty() || self.session_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad("session schedule must be non-empty and strictly increasing");
        }
        if self.enrollment_window == 0 || self.enrollment_window > self.session_schedule.len() {
            return bad("enrollment window must lie within the schedule");
        }
        if self.images_per_eye_per_session == 0 || self.eyes.is_empty() {
            return bad("need at least one eye and one image per session");
        }
        let mut eyes = self.eyes.clone();
        eyes.sort();
        eyes.dedup();
        if eyes.len() != self.eyes.len() {
            return bad("eyes must be distinct");
        }
        if !(0.0..1.0).contains(&self.attrition_rate) {
            return bad("attrition_rate must lie in [0, 1)");
        }
        let c = &self.covariates;
        c.quality.validate("quality", 0.0, 100.0)?;
        c.usable_area.validate("usable_area", 0.0, 100.0)?;
        c.circularity.validate("circularity", 0.0, 100.0)?;
        c.iris_radius.validate("iris_radius", f64::MIN_POSITIVE, f64::MAX)?;
        c.dilation.validate("dilation", 0.0, 1.0)?;
        if c.dilation.min <= 0.0 || c.dilation.max >= 1.0 {
            return bad("dilation bounds must lie strictly inside (0, 1)");
        }
        let mut names: Vec<&str> = self.matchers.iter().map(|m| m.profile.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.matchers.len() {
            return bad("matcher names must be distinct");
        }
        self.matchers.iter().try_for_each(SynthMatcher::validate)
    }
}

impl SynthConfig {
    /// Pairing settings under which the generated impostor scores line up.
    pub fn pairing_config(&self) -> PairingConfig {
        PairingConfig {
            max_impostor_probes: self.impostor_probes,
            base_seed: self.seed,
            ..Default::default()
        }
    }

    pub fn profiles(&self) -> Vec<MatcherProfile> {
        self.matchers.iter().map(|m| m.profile.clone()).collect()
    }
}

/// Generated data paired and scored: genuine then impostor comparisons.
pub fn generate_comparisons(cfg: &SynthConfig) -> Result<(ComparisonTable, GroundTruth)> {
    let (captures, scores, truth) = generate_longitudinal(cfg)?;
    let mut pairs = generate_genuine_pairs(&captures);
    pairs.extend(generate_impostor_pairs(&captures, &cfg.pairing_config()));
    Ok((attach_scores(pairs, &scores, &cfg.profiles())?, truth))
}

fn check_variable(name: &str) -> Result<()> {
    if name == "intercept" || name == "(Intercept)" {
        return Ok(());
    }
    for part in name.split(':') {
        let known = if let Some(level) = part.strip_prefix("age_group[").and_then(|r| r.strip_suffix(']')) {
            AGE_GROUPS.contains(&level)
        } else if let Some(level) = part.strip_prefix("eye[").and_then(|r| r.strip_suffix(']')) {
            Eye::parse(level).is_some()
        } else {
            crate::lmm::frame::NUMERIC_VARIABLES.contains(&part)
        };
        if !known {
            return Err(Error::UnknownVariable(part.to_string()));
        }
    }
    Ok(())
}

/// Value of a (validated) design variable for one comparison.
pub fn variable_value(r: &ComparisonRecord, name: &str) -> f64 {
    if name == "intercept" || name == "(Intercept)" {
        return 1.0;
    }
    name.split(':')
        .map(|part| {
            if let Some(level) = part.strip_prefix("age_group[").and_then(|r| r.strip_suffix(']')) {
                (AGE_GROUPS[age_group(r.gallery_age)] == level) as u8 as f64
            } else if let Some(level) = part.strip_prefix("eye[").and_then(|r| r.strip_suffix(']')) {
                (r.eye.code() == level) as u8 as f64
            } else {
                numeric_value(r, part).unwrap_or(f64::NAN)
            }
        })
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    /// Latent (continuous) age at enrollment.
    pub enrollment_age: f64,
    pub enrollment_session: usize,
    pub sessions_attended: usize,
    /// (u0, u1) per matcher, in matcher order.
    pub effects: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatcherTruth {
    pub name: String,
    pub beta: BTreeMap<String, f64>,
    pub sigma: [[f64; 2]; 2],
    pub sigma2: f64,
    pub impostor: ScoreDist,
    /// Genuine scores moved onto the score range.
    pub n_clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub matchers: Vec<MatcherTruth>,
    pub subjects: Vec<SubjectTruth>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

fn subject_id(i: usize) -> String {
    format!("S{i:05}")
}

fn stream(seed: u64, salt: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(index as u64);
    rng
}

fn generate_subject(cfg: &SynthConfig, idx: usize) -> (Vec<CaptureRecord>, SubjectTruth) {
    let mut rng = stream(cfg.seed, 0, idx);
    let sid = subject_id(idx);
    let a0 = rng.random_range(cfg.enrollment_age_min as f64..(cfg.enrollment_age_max + 1) as f64);
    let enroll = rng.random_range(0..cfg.enrollment_window);
    let mut sessions = vec![enroll];
    for s in enroll + 1..cfg.session_schedule.len() {
        if rng.random::<f64>() < cfg.attrition_rate {
            break;
        }
        sessions.push(s);
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let effects = cfg
        .matchers
        .iter()
        .map(|m| {
            let [l00, l10, l11] = m.sigma_factor();
            let (z0, z1) = (std_normal.sample(&mut rng), std_normal.sample(&mut rng));
            [l00 * z0, l10 * z0 + l11 * z1]
        })
        .collect();

    let t_enroll = cfg.session_schedule[enroll];
    let c = &cfg.covariates;
    let mut records = Vec::new();
    for &s in &sessions {
        let t = cfg.session_schedule[s];
        let age = (a0 + (t - t_enroll) as f64 / 12.0).floor() as i64;
        for &eye in &cfg.eyes {
            for k in 0..cfg.images_per_eye_per_session {
                let iris = c.iris_radius.sample(&mut rng);
                let dil = c.dilation.sample(&mut rng);
                records.push(CaptureRecord {
                    image_id: format!("{sid}_{}_{:02}_{k}", eye.code(), s + 1),
                    subject_id: sid.clone(),
                    eye,
                    collection_index: s as u32 + 1,
                    capture_time_months: t,
                    age_years: age,
                    quality: c.quality.sample(&mut rng),
                    usable_area: c.usable_area.sample(&mut rng),
                    circularity: c.circularity.sample(&mut rng),
                    pupil_radius: dil * iris,
                    iris_radius: iris,
                });
            }
        }
    }
    let truth = SubjectTruth {
        subject_id: sid,
        enrollment_age: a0,
        enrollment_session: enroll,
        sessions_attended: sessions.len(),
        effects,
    };
    (records, truth)
}

/// Captures, genuine and impostor scores for every matcher, and the truth
/// they were drawn from.
pub fn generate_longitudinal(cfg: &SynthConfig) -> Result<(CaptureTable, ScoreTable, GroundTruth)> {
    cfg.validate()?;
    let per_subject: Vec<(Vec<CaptureRecord>, SubjectTruth)> =
        (0..cfg.n_subjects).into_par_iter().map(|i| generate_subject(cfg, i)).collect();
    let mut records = Vec::new();
    let mut subjects = Vec::with_capacity(per_subject.len());
    for (r, t) in per_subject {
        records.extend(r);
        subjects.push(t);
    }
    let captures = CaptureTable::new(records);

    // Genuine scores: one noise stream per subject, pairs in key order.
    let mut genuine = generate_genuine_pairs(&captures);
    genuine.sort_by(|a, b| {
        (&a.gallery_subject, &a.gallery_image_id, &a.probe_image_id).cmp(&(
            &b.gallery_subject,
            &b.gallery_image_id,
            &b.probe_image_id,
        ))
    });
    let index: HashMap<&str, usize> = subjects.iter().enumerate().map(|(i, s)| (s.subject_id.as_str(), i)).collect();
    let mut blocks: Vec<&[ComparisonRecord]> = Vec::new();
    let mut rest = genuine.as_slice();
    while let Some(first) = rest.first() {
        let len = rest.iter().take_while(|r| r.gallery_subject == first.gallery_subject).count();
        blocks.push(&rest[..len]);
        rest = &rest[len..];
    }
    let scored: Vec<Vec<(usize, f64, bool)>> = blocks
        .par_iter()
        .map(|block| {
            let si = index[block[0].gallery_subject.as_str()];
            let mut rng = stream(cfg.seed, NOISE_SALT, si);
            let mut out = Vec::with_capacity(block.len() * cfg.matchers.len());
            for r in block.iter() {
                for (mi, m) in cfg.matchers.iter().enumerate() {
                    let [u0, u1] = subjects[si].effects[mi];
                    let fixed: f64 = m.beta.iter().map(|(name, b)| b * variable_value(r, name)).sum();
                    let e = if m.sigma2 > 0.0 {
                        Normal::new(0.0, m.sigma2.sqrt()).expect("validated").sample(&mut rng)
                    } else {
                        0.0
                    };
                    let y = fixed + u0 + u1 * r.gap_months as f64 + e;
                    let clamped = y.clamp(m.profile.score_min, m.profile.score_max);
                    out.push((mi, clamped, clamped != y));
                }
            }
            out
        })
        .collect();

    let mut scores = ScoreTable::new();
    let mut n_clamped = vec![0usize; cfg.matchers.len()];
    for (block, vals) in blocks.iter().zip(&scored) {
        let mut it = vals.iter();
        for r in block.iter() {
            for _ in &cfg.matchers {
                let &(mi, y, clamped) = it.next().expect("one score per matcher");
                n_clamped[mi] += clamped as usize;
                scores.insert(&r.gallery_image_id, &r.probe_image_id, &cfg.matchers[mi].profile.name, y);
            }
        }
    }

    let impostors = generate_impostor_pairs(&captures, &cfg.pairing_config());
    let mut rng = stream(cfg.seed, IMPOSTOR_SALT, 0);
    for r in &impostors {
        for m in &cfg.matchers {
            let y = m.impostor.sample(&mut rng).clamp(m.profile.score_min, m.profile.score_max);
            scores.insert(&r.gallery_image_id, &r.probe_image_id, &m.profile.name, y);
        }
    }

    let truth = GroundTruth {
        seed: cfg.seed,
        matchers: cfg
            .matchers
            .iter()
            .zip(n_clamped)
            .map(|(m, n_clamped)| MatcherTruth {
                name: m.profile.name.clone(),
                beta: m.beta.clone(),
                sigma: m.sigma,
                sigma2: m.sigma2,
                impostor: m.impostor,
                n_clamped,
            })
            .collect(),
        subjects,
        n_genuine: genuine.len(),
        n_impostor: impostors.len(),
    };
    Ok((captures, scores, truth))
}

/// `n` genuine and `n` impostor scores drawn independently.
pub fn generate_score_populations(
    n: usize,
    genuine: ScoreDist,
    impostor: ScoreDist,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidInput("population size must be at least 1".into()));
    }
    genuine.validate()?;
    impostor.validate()?;
    let mut g_rng = stream(seed, 0, 0);
    let mut i_rng = stream(seed, 0, 1);
    Ok((
        (0..n).map(|_| genuine.sample(&mut g_rng)).collect(),
        (0..n).map(|_| impostor.sample(&mut i_rng)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_dataset;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 20,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let s = default_schedule();
        assert_eq!(s.len(), 14);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 102);
        assert!(!s.contains(&48) && !s.contains(&66) && s.contains(&42) && s.contains(&72));
    }

    #[test]
    fn output_is_clean_and_deterministic() {
        let (c1, s1, t1) = generate_longitudinal(&small()).unwrap();
        let (c2, s2, t2) = generate_longitudinal(&small()).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(s1.rows(), s2.rows());
        assert_eq!(t1, t2);
        assert!(validate_dataset(&c1).is_clean());
        assert!(t1.n_genuine > 0 && t1.n_impostor > 0);
    }

    #[test]
    fn ages_follow_enrollment_offset() {
        let cfg = small();
        let (c, _, t) = generate_longitudinal(&cfg).unwrap();
        for r in &c.records {
            let s = &t.subjects[r.subject_id[1..].parse::<usize>().unwrap()];
            let t0 = cfg.session_schedule[s.enrollment_session];
            let want = (s.enrollment_age + (r.capture_time_months - t0) as f64 / 12.0).floor() as i64;
            assert_eq!(r.age_years, want);
            assert!((4..=21).contains(&r.age_years));
        }
    }

    #[test]
    fn infeasible_bounds_rejected() {
        let mut cfg = small();
        cfg.covariates.quality = Bounded::new(0.0, 1.0, 60.0, 70.0);
        assert!(matches!(generate_longitudinal(&cfg), Err(Error::InfeasibleConfig(_))));
        let mut cfg = small();
        cfg.covariates.dilation = Bounded::new(0.5, 0.1, 0.0, 0.9);
        assert!(generate_longitudinal(&cfg).is_err());
        let mut cfg = small();
        cfg.matchers[0].sigma = [[1.0, 2.0], [2.0, 1.0]];
        assert!(generate_longitudinal(&cfg).is_err());
        let mut cfg = small();
        cfg.matchers[0].beta.insert("shoe_size".into(), 1.0);
        assert!(matches!(generate_longitudinal(&cfg), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn variable_values_compose() {
        let cfg = small();
        let (c, _, _) = generate_longitudinal(&cfg).unwrap();
        let pairs = generate_genuine_pairs(&c);
        let r = &pairs[0];
        assert_eq!(variable_value(r, "intercept"), 1.0);
        assert_eq!(variable_value(r, "A_gallery:T"), r.gallery_age as f64 * r.gap_months as f64);
        let groups: f64 = AGE_GROUPS.iter().map(|l| variable_value(r, &format!("age_group[{l}]"))).sum();
        assert_eq!(groups, 1.0);
    }

    #[test]
    fn score_populations_seeded() {
        let d = ScoreDist::Normal { mean: 0.0, sd: 1.0 };
        let a = generate_score_populations(100, d, d, 5).unwrap();
        let b = generate_score_populations(100, d, d, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, a.1);
        assert!(generate_score_populations(0, d, d, 5).is_err());
        assert!(generate_score_populations(3, ScoreDist::Uniform { min: 1.0, max: 1.0 }, d, 5).is_err());
    }
}
