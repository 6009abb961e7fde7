//! Fixed-gallery genuine protocol, seeded impostor sampling and score joins.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    dilation_constancy, CaptureRecord, CaptureTable, ComparisonRecord, Eye, MatcherProfile,
    PairCovariates, PairKind, ScoreTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyePolicy {
    #[default]
    SameEyeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub max_impostor_probes: usize,
    pub base_seed: u64,
    pub eye_policy: EyePolicy,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            max_impostor_probes: 10,
            base_seed: 0,
            eye_policy: EyePolicy::SameEyeOnly,
        }
    }
}

/// Valid records in canonical (subject, eye, collection, time, image) order.
fn sorted_valid(captures: &CaptureTable) -> Vec<&CaptureRecord> {
    let mut v: Vec<&CaptureRecord> = captures.records.iter().filter(|r| r.is_valid()).collect();
    v.sort_by(|a, b| {
        (&a.subject_id, a.eye, a.collection_index, a.capture_time_months, &a.image_id).cmp(&(
            &b.subject_id,
            b.eye,
            b.collection_index,
            b.capture_time_months,
            &b.image_id,
        ))
    });
    v
}

fn make_pair(kind: PairKind, g: &CaptureRecord, p: &CaptureRecord) -> ComparisonRecord {
    // Both records passed `is_valid`, so the ratios are in (0, 1).
    let r_g = g.pupil_radius / g.iris_radius;
    let r_p = p.pupil_radius / p.iris_radius;
    let gap = p.capture_time_months - g.capture_time_months;
    ComparisonRecord {
        kind,
        eye: g.eye,
        gallery_image_id: g.image_id.clone(),
        probe_image_id: p.image_id.clone(),
        gallery_subject: g.subject_id.clone(),
        probe_subject: p.subject_id.clone(),
        gallery_age: g.age_years,
        probe_age: p.age_years,
        gap_months: match kind {
            PairKind::Genuine => gap,
            PairKind::Impostor => gap.abs(),
        },
        delta_age_years: p.age_years - g.age_years,
        dc: dilation_constancy(r_g, r_p).expect("ratios of valid records lie in (0,1)"),
        covariates: PairCovariates {
            q_gallery: g.quality,
            q_probe: p.quality,
            u_gallery: g.usable_area,
            u_probe: p.usable_area,
            c_gallery: g.circularity,
            c_probe: p.circularity,
            r_gallery: r_g,
            r_probe: r_p,
        },
        scores: BTreeMap::new(),
    }
}

/// Every gallery image (the subject's first attended collection, per eye) is
/// paired with every same-eye image from a strictly later collection.
pub fn generate_genuine_pairs(captures: &CaptureTable) -> Vec<ComparisonRecord> {
    let sorted = sorted_valid(captures);

    let mut first_collection: HashMap<&str, u32> = HashMap::new();
    for r in &sorted {
        first_collection
            .entry(r.subject_id.as_str())
            .and_modify(|c| *c = (*c).min(r.collection_index))
            .or_insert(r.collection_index);
    }

    // Contiguous (subject, eye) blocks of the sorted list.
    let mut blocks: Vec<&[&CaptureRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len()
            || sorted[i].subject_id != sorted[start].subject_id
            || sorted[i].eye != sorted[start].eye
        {
            if i > start {
                blocks.push(&sorted[start..i]);
            }
            start = i;
        }
    }

    blocks
        .par_iter()
        .map(|block| {
            let first = first_collection[block[0].subject_id.as_str()];
            let gallery: Vec<_> = block.iter().filter(|r| r.collection_index == first).collect();
            let probes: Vec<_> = block.iter().filter(|r| r.collection_index > first).collect();
            let mut out = Vec::with_capacity(gallery.len() * probes.len());
            for g in &gallery {
                for p in &probes {
                    if p.capture_time_months > g.capture_time_months {
                        out.push(make_pair(PairKind::Genuine, g, p));
                    }
                }
            }
            out
        })
        .flatten()
        .collect()
}

/// Uniform integer in `[0, n)` by Lemire's multiply-and-reject method.
fn bounded(rng: &mut SplitMix64, n: u64) -> u64 {
    debug_assert!(n > 0);
    let mut m = rng.next_u64() as u128 * n as u128;
    if (m as u64) < n {
        let t = n.wrapping_neg() % n;
        while (m as u64) < t {
            m = rng.next_u64() as u128 * n as u128;
        }
    }
    (m >> 64) as u64
}

/// First `k` entries of a seeded Fisher-Yates shuffle of `0..n`, in draw
/// order. The swaps are kept in a sparse map so the cost is O(k).
pub fn sample_without_replacement(seed: u64, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut swaps: HashMap<usize, usize> = HashMap::with_capacity(2 * k);
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let r = j + bounded(&mut rng, (n - j) as u64) as usize;
        let at_r = *swaps.get(&r).unwrap_or(&r);
        let at_j = *swaps.get(&j).unwrap_or(&j);
        swaps.insert(r, at_j);
        out.push(at_r);
    }
    out
}

/// Each valid image, taken in canonical order, is a gallery. Up to
/// `max_impostor_probes` same-eye images of other subjects are drawn with the
/// seed `base_seed ^ row_index` (0-based row of the canonical order).
pub fn generate_impostor_pairs(captures: &CaptureTable, cfg: &PairingConfig) -> Vec<ComparisonRecord> {
    let sorted = sorted_valid(captures);
    if cfg.max_impostor_probes == 0 {
        return Vec::new();
    }

    // Per eye: canonical positions, and for each position the subject block.
    let mut by_eye: HashMap<Eye, Vec<usize>> = HashMap::new();
    for (i, r) in sorted.iter().enumerate() {
        by_eye.entry(r.eye).or_default().push(i);
    }
    let mut slot: Vec<(usize, usize, usize)> = vec![(0, 0, 0); sorted.len()];
    for list in by_eye.values() {
        let mut s = 0;
        while s < list.len() {
            let subj = &sorted[list[s]].subject_id;
            let mut e = s;
            while e < list.len() && &sorted[list[e]].subject_id == subj {
                e += 1;
            }
            for pos in s..e {
                slot[list[pos]] = (pos, s, e);
            }
            s = e;
        }
    }

    (0..sorted.len())
        .into_par_iter()
        .map(|row| {
            let g = sorted[row];
            let list = &by_eye[&g.eye];
            let (_, s, e) = slot[row];
            let pool = list.len() - (e - s);
            let seed = cfg.base_seed ^ row as u64;
            let mut picks = sample_without_replacement(seed, pool, cfg.max_impostor_probes);
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|p| {
                    let pos = if p < s { p } else { p + (e - s) };
                    make_pair(PairKind::Impostor, g, sorted[list[pos]])
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompletePair {
    pub record: ComparisonRecord,
    pub missing: Vec<String>,
}

/// Scored pairs plus those that lack at least one matcher score.
#[derive(Debug, Clone, Default)]
pub struct ComparisonTable {
    pub matchers: Vec<MatcherProfile>,
    pub records: Vec<ComparisonRecord>,
    pub incomplete: Vec<IncompletePair>,
}

impl ComparisonTable {
    pub fn new(matchers: Vec<MatcherProfile>, records: Vec<ComparisonRecord>) -> Self {
        ComparisonTable {
            matchers,
            records,
            incomplete: Vec::new(),
        }
    }

    pub fn profile(&self, matcher: &str) -> Result<&MatcherProfile> {
        self.matchers
            .iter()
            .find(|m| m.name == matcher)
            .ok_or_else(|| Error::UnknownMatcher(matcher.to_string()))
    }

    pub fn of_kind(&self, kind: PairKind) -> impl Iterator<Item = &ComparisonRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Scores of one matcher over pairs of one kind; pairs without it are skipped.
    pub fn scores(&self, matcher: &str, kind: PairKind) -> Vec<f64> {
        self.of_kind(kind).filter_map(|r| r.score(matcher)).collect()
    }

    /// Sub-table restricted to one kind (and optionally one eye).
    pub fn filtered(&self, kind: Option<PairKind>, eye: Option<Eye>) -> ComparisonTable {
        ComparisonTable {
            matchers: self.matchers.clone(),
            records: self
                .records
                .iter()
                .filter(|r| kind.is_none_or(|k| r.kind == k) && eye.is_none_or(|e| r.eye == e))
                .cloned()
                .collect(),
            incomplete: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn attach_scores(
    pairs: Vec<ComparisonRecord>,
    scores: &ScoreTable,
    profiles: &[MatcherProfile],
) -> Result<ComparisonTable> {
    let index: HashMap<(&str, &str, &str), f64> = scores
        .rows()
        .iter()
        .map(|r| {
            (
                (
                    r.gallery_image_id.as_str(),
                    r.probe_image_id.as_str(),
                    r.matcher.as_str(),
                ),
                r.score,
            )
        })
        .collect();

    let mut table = ComparisonTable::new(profiles.to_vec(), Vec::with_capacity(pairs.len()));
    for mut pair in pairs {
        let mut missing = Vec::new();
        for prof in profiles {
            let key = (
                pair.gallery_image_id.as_str(),
                pair.probe_image_id.as_str(),
                prof.name.as_str(),
            );
            match index.get(&key) {
                Some(&s) if !prof.in_range(s) => {
                    return Err(Error::ScoreOutOfRange {
                        matcher: prof.name.clone(),
                        score: s,
                        min: prof.score_min,
                        max: prof.score_max,
                        gallery: pair.gallery_image_id.clone(),
                        probe: pair.probe_image_id.clone(),
                    });
                }
                Some(&s) => {
                    pair.scores.insert(prof.name.clone(), s);
                }
                None => missing.push(prof.name.clone()),
            }
        }
        if missing.is_empty() {
            table.records.push(pair);
        } else {
            table.incomplete.push(IncompletePair {
                record: pair,
                missing,
            });
        }
    }
    Ok(table)
}

const PAIR_FIXED_COLUMNS: [&str; 15] = [
    "kind",
    "eye",
    "gallery_image_id",
    "probe_image_id",
    "gap_T_months",
    "delta_age_years",
    "DC",
    "Q_gallery",
    "Q_probe",
    "U_gallery",
    "U_probe",
    "C_gallery",
    "C_probe",
    "R_gallery",
    "R_probe",
];

pub fn pair_header(matchers: &[MatcherProfile]) -> Vec<String> {
    PAIR_FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(matchers.iter().map(|m| format!("score_{}", m.name)))
        .collect()
}

/// Writes the complete pairs. Missing scores (only possible for hand-built
/// tables) are left as empty cells.
pub fn write_pairs<W: Write>(table: &ComparisonTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(pair_header(&table.matchers))?;
    for r in &table.records {
        let c = &r.covariates;
        let mut row: Vec<String> = vec![
            r.kind.code().to_string(),
            r.eye.code().to_string(),
            r.gallery_image_id.clone(),
            r.probe_image_id.clone(),
            r.gap_months.to_string(),
            r.delta_age_years.to_string(),
            r.dc.to_string(),
            c.q_gallery.to_string(),
            c.q_probe.to_string(),
            c.u_gallery.to_string(),
            c.u_probe.to_string(),
            c.c_gallery.to_string(),
            c.c_probe.to_string(),
            c.r_gallery.to_string(),
            c.r_probe.to_string(),
        ];
        for m in &table.matchers {
            row.push(r.score(&m.name).map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<pair table>", e))?;
    Ok(())
}

/// Reads a pair table back, recovering subject identities and ages from the
/// capture table the pairs were generated from.
pub fn read_pairs<R: Read>(
    reader: R,
    captures: &CaptureTable,
    profiles: &[MatcherProfile],
) -> Result<ComparisonTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    for (i, col) in PAIR_FIXED_COLUMNS.iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(*col) {
            return Err(if header.iter().any(|h| h == col) {
                Error::HeaderMismatch {
                    expected: pair_header(profiles).join(","),
                    found: header.join(","),
                }
            } else {
                Error::MissingColumn(col.to_string())
            });
        }
    }
    let mut score_cols = Vec::new();
    for prof in profiles {
        let name = format!("score_{}", prof.name);
        let idx = header
            .iter()
            .position(|h| *h == name)
            .ok_or(Error::MissingColumn(name))?;
        score_cols.push((prof, idx));
    }

    let index = captures.index();
    let lookup = |id: &str| -> Result<&CaptureRecord> {
        index
            .get(id)
            .map(|&i| &captures.records[i])
            .ok_or_else(|| Error::InvalidInput(format!("image `{id}` not in capture table")))
    };
    let mut table = ComparisonTable::new(profiles.to_vec(), Vec::new());
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |col: &str| Error::InvalidInput(format!("pair table row {}: bad {col}", line + 1));
        let real = |i: usize| -> Result<f64> { row[i].trim().parse().map_err(|_| bad(PAIR_FIXED_COLUMNS[i])) };
        let int = |i: usize| -> Result<i64> { row[i].trim().parse().map_err(|_| bad(PAIR_FIXED_COLUMNS[i])) };
        let kind = PairKind::parse(&row[0]).ok_or_else(|| bad("kind"))?;
        let eye = Eye::parse(&row[1]).ok_or_else(|| bad("eye"))?;
        let g = lookup(&row[2])?;
        let p = lookup(&row[3])?;
        let mut scores = BTreeMap::new();
        for (prof, idx) in &score_cols {
            let cell = row[*idx].trim();
            if !cell.is_empty() {
                let s: f64 = cell.parse().map_err(|_| bad(&header[*idx]))?;
                scores.insert(prof.name.clone(), s);
            }
        }
        table.records.push(ComparisonRecord {
            kind,
            eye,
            gallery_image_id: g.image_id.clone(),
            probe_image_id: p.image_id.clone(),
            gallery_subject: g.subject_id.clone(),
            probe_subject: p.subject_id.clone(),
            gallery_age: g.age_years,
            probe_age: p.age_years,
            gap_months: int(4)?,
            delta_age_years: int(5)?,
            dc: real(6)?,
            covariates: PairCovariates {
                q_gallery: real(7)?,
                q_probe: real(8)?,
                u_gallery: real(9)?,
                u_probe: real(10)?,
                c_gallery: real(11)?,
                c_probe: real(12)?,
                r_gallery: real(13)?,
                r_probe: real(14)?,
            },
            scores,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Orientation;
    use std::collections::HashSet;

    fn rec(id: &str, subject: &str, eye: Eye, coll: u32, pupil: f64) -> CaptureRecord {
        CaptureRecord {
            image_id: id.into(),
            subject_id: subject.into(),
            eye,
            collection_index: coll,
            capture_time_months: 6 * (coll as i64 - 1),
            age_years: 5 + (coll as i64 - 1) / 2,
            quality: 50.0 + coll as f64,
            usable_area: 60.0,
            circularity: 70.0,
            pupil_radius: pupil,
            iris_radius: 100.0,
        }
    }

    #[test]
    fn single_collection_subject_has_no_genuine_pairs() {
        let t = CaptureTable::new(vec![
            rec("a", "s1", Eye::Left, 1, 30.0),
            rec("b", "s1", Eye::Left, 1, 31.0),
        ]);
        assert!(generate_genuine_pairs(&t).is_empty());
    }

    #[test]
    fn two_gallery_three_probe_images() {
        let t = CaptureTable::new(vec![
            rec("g1", "s1", Eye::Left, 1, 30.0),
            rec("g2", "s1", Eye::Left, 1, 32.0),
            rec("p1", "s1", Eye::Left, 2, 40.0),
            rec("p2", "s1", Eye::Left, 3, 44.0),
            rec("p3", "s1", Eye::Left, 3, 46.0),
        ]);
        let pairs = generate_genuine_pairs(&t);
        assert_eq!(pairs.len(), 6);
        let p = pairs.iter().find(|p| p.gallery_image_id == "g1" && p.probe_image_id == "p1").unwrap();
        assert_eq!(p.gap_months, 6);
        assert!((p.dc - (1.0 - (0.30f64 - 0.40).abs())).abs() < 1e-15);
        assert_eq!(p.dc, 1.0 - (p.covariates.r_gallery - p.covariates.r_probe).abs());
    }

    #[test]
    fn eye_absent_from_first_collection_contributes_nothing() {
        let t = CaptureTable::new(vec![
            rec("l1", "s1", Eye::Left, 1, 30.0),
            rec("l2", "s1", Eye::Left, 2, 30.0),
            rec("r2", "s1", Eye::Right, 2, 30.0),
            rec("r3", "s1", Eye::Right, 3, 30.0),
        ]);
        let pairs = generate_genuine_pairs(&t);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].eye, Eye::Left);
    }

    #[test]
    fn impostor_pool_saturates() {
        let t = CaptureTable::new(vec![
            rec("a1", "s1", Eye::Left, 1, 30.0),
            rec("b1", "s2", Eye::Left, 1, 30.0),
            rec("b2", "s2", Eye::Left, 2, 30.0),
            rec("c1", "s3", Eye::Left, 1, 30.0),
            rec("c2", "s3", Eye::Left, 2, 30.0),
            rec("x1", "s4", Eye::Right, 1, 30.0),
        ]);
        let pairs = generate_impostor_pairs(&t, &PairingConfig::default());
        let from_a: Vec<_> = pairs.iter().filter(|p| p.gallery_image_id == "a1").collect();
        assert_eq!(from_a.len(), 4);
        for p in &pairs {
            assert_ne!(p.gallery_subject, p.probe_subject);
            assert_eq!(p.kind, PairKind::Impostor);
        }
        // The lone right eye has no pool.
        assert!(pairs.iter().all(|p| p.gallery_image_id != "x1"));
    }

    /// Reference SplitMix64, written out from the published algorithm.
    fn splitmix_reference(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    #[test]
    fn generator_matches_reference() {
        for seed in [0u64, 1, 1_234_567, u64::MAX] {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let mut state = seed;
            for _ in 0..16 {
                assert_eq!(rng.next_u64(), splitmix_reference(&mut state));
            }
        }
        let mut rng = SplitMix64::seed_from_u64(1_234_567);
        assert_eq!(rng.next_u64(), 6_457_827_717_110_365_317);
        assert_eq!(rng.next_u64(), 3_203_168_211_198_807_973);
    }

    /// Dense partial Fisher-Yates over an explicit array.
    fn dense_sample(seed: u64, n: usize, k: usize) -> Vec<usize> {
        let mut a: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::seed_from_u64(seed);
        for j in 0..k.min(n) {
            let r = j + bounded(&mut rng, (n - j) as u64) as usize;
            a.swap(j, r);
        }
        a.truncate(k.min(n));
        a
    }

    #[test]
    fn sparse_sampler_matches_dense() {
        for seed in 0..200u64 {
            for (n, k) in [(1, 1), (4, 10), (10, 10), (57, 10), (1000, 3)] {
                let s = sample_without_replacement(seed, n, k);
                assert_eq!(s, dense_sample(seed, n, k));
                assert_eq!(s.iter().collect::<HashSet<_>>().len(), s.len());
            }
        }
    }

    #[test]
    fn three_subjects_two_images_max_two() {
        let t = CaptureTable::new(vec![
            rec("a1", "s1", Eye::Left, 1, 30.0),
            rec("a2", "s1", Eye::Left, 2, 30.0),
            rec("b1", "s2", Eye::Left, 1, 30.0),
            rec("b2", "s2", Eye::Left, 2, 30.0),
            rec("c1", "s3", Eye::Left, 1, 30.0),
            rec("c2", "s3", Eye::Left, 2, 30.0),
        ]);
        let cfg = PairingConfig {
            max_impostor_probes: 2,
            base_seed: 99,
            ..Default::default()
        };
        let pairs = generate_impostor_pairs(&t, &cfg);
        assert_eq!(pairs.len(), 12);
        let ids = ["a1", "a2", "b1", "b2", "c1", "c2"];
        for (row, g) in ids.iter().enumerate() {
            let got: HashSet<&str> = pairs
                .iter()
                .filter(|p| p.gallery_image_id == *g)
                .map(|p| p.probe_image_id.as_str())
                .collect();
            // Exhaustive oracle: the pool in canonical order, then the dense shuffle.
            let pool: Vec<&str> = ids.iter().copied().filter(|o| o[..1] != g[..1]).collect();
            let want: HashSet<&str> = dense_sample(99 ^ row as u64, pool.len(), 2)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            assert_eq!(got, want, "gallery {g}");
            assert_eq!(got.len(), 2);
        }
    }

    #[test]
    fn attach_flags_missing_and_range() {
        let t = CaptureTable::new(vec![
            rec("g1", "s1", Eye::Left, 1, 30.0),
            rec("p1", "s1", Eye::Left, 2, 30.0),
            rec("p2", "s1", Eye::Left, 3, 30.0),
        ]);
        let pairs = generate_genuine_pairs(&t);
        let hd = MatcherProfile::new("hd", Orientation::LowerIsBetter, 0.0, 1.0, 0.42).unwrap();
        let mut scores = ScoreTable::new();
        scores.insert("g1", "p1", "hd", 0.3);
        let table = attach_scores(pairs.clone(), &scores, std::slice::from_ref(&hd)).unwrap();
        assert_eq!(table.records.len(), 1);
        assert_eq!(table.incomplete.len(), 1);
        assert_eq!(table.incomplete[0].record.probe_image_id, "p2");
        assert_eq!(table.incomplete[0].missing, vec!["hd".to_string()]);

        scores.insert("g1", "p2", "hd", 0.25);
        let table = attach_scores(pairs.clone(), &scores, std::slice::from_ref(&hd)).unwrap();
        assert!(table.incomplete.is_empty());

        scores.insert("g1", "p2", "hd", 1.2);
        let err = attach_scores(pairs, &scores, &[hd]).unwrap_err();
        match err {
            Error::ScoreOutOfRange { score, probe, .. } => {
                assert_eq!(score, 1.2);
                assert_eq!(probe, "p2");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn pair_table_round_trip() {
        let t = CaptureTable::new(vec![
            rec("g1", "s1", Eye::Left, 1, 30.0),
            rec("p1", "s1", Eye::Left, 2, 33.3),
            rec("q1", "s2", Eye::Left, 1, 41.0),
        ]);
        let hd = MatcherProfile::new("hd", Orientation::LowerIsBetter, 0.0, 1.0, 0.42).unwrap();
        let mut pairs = generate_genuine_pairs(&t);
        pairs.extend(generate_impostor_pairs(&t, &PairingConfig::default()));
        let mut scores = ScoreTable::new();
        for p in &pairs {
            scores.insert(&p.gallery_image_id, &p.probe_image_id, "hd", 0.1 + p.dc / 7.0);
        }
        let table = attach_scores(pairs, &scores, std::slice::from_ref(&hd)).unwrap();
        let mut buf = Vec::new();
        write_pairs(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "kind,eye,gallery_image_id,probe_image_id,gap_T_months,delta_age_years,DC,Q_gallery,Q_probe,U_gallery,U_probe,C_gallery,C_probe,R_gallery,R_probe,score_hd\n"
        ));
        let back = read_pairs(buf.as_slice(), &t, &[hd]).unwrap();
        assert_eq!(back.records, table.records);
    }
}
