//! Capture and score tables, matcher profiles and the dilation covariates.
//!
//! A capture table holds one row per eye image. Rows that violate a record
//! invariant are quarantined in a rejection report at ingestion time; they are
//! never dropped without a trace.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the capture table, in column order.
pub const CAPTURE_COLUMNS: [&str; 11] = [
    "image_id",
    "subject_id",
    "eye",
    "collection_index",
    "capture_time_months",
    "age_years",
    "quality",
    "usable_area",
    "circularity",
    "pupil_radius",
    "iris_radius",
];

/// Header of the long-format score table.
pub const SCORE_COLUMNS: [&str; 4] = ["gallery_image_id", "probe_image_id", "matcher", "score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub fn code(self) -> &'static str {
        match self {
            Eye::Left => "L",
            Eye::Right => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Eye> {
        match s {
            "L" => Some(Eye::Left),
            "R" => Some(Eye::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Metadata of one eye image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub image_id: String,
    pub subject_id: String,
    pub eye: Eye,
    pub collection_index: u32,
    /// Months since the dataset epoch.
    pub capture_time_months: i64,
    pub age_years: i64,
    pub quality: f64,
    pub usable_area: f64,
    pub circularity: f64,
    pub pupil_radius: f64,
    pub iris_radius: f64,
}

impl CaptureRecord {
    /// Dilation ratio of this image, or `None` when the radii are invalid.
    pub fn dilation(&self) -> Option<f64> {
        dilation_ratio(self.pupil_radius, self.iris_radius).ok()
    }

    /// True when no record invariant is violated.
    pub fn is_valid(&self) -> bool {
        record_violations(self).is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptureTable {
    pub records: Vec<CaptureRecord>,
}

impl CaptureTable {
    pub fn new(records: Vec<CaptureRecord>) -> Self {
        CaptureTable { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Map from image id to row position. Later duplicates shadow earlier ones.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_id.as_str(), i))
            .collect()
    }

    pub fn subjects(&self) -> Vec<&str> {
        let set: std::collections::BTreeSet<&str> =
            self.records.iter().map(|r| r.subject_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Sort by (subject, eye, collection, capture time, image id).
    pub fn sort_canonical(&mut self) {
        self.records.sort_by(|a, b| {
            (&a.subject_id, a.eye, a.collection_index, a.capture_time_months, &a.image_id).cmp(&(
                &b.subject_id,
                b.eye,
                b.collection_index,
                b.capture_time_months,
                &b.image_id,
            ))
        });
    }
}

/// Row quarantined during ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based data row number (the header is not counted).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub table: CaptureTable,
    pub rejections: Vec<Rejection>,
    pub rows_read: usize,
}

/// Delimited-text layout of an input table.
#[derive(Debug, Clone, Copy)]
pub struct TableFormat {
    pub delimiter: u8,
}

impl Default for TableFormat {
    fn default() -> Self {
        TableFormat { delimiter: b',' }
    }
}

fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found_cols: Vec<&str> = found.iter().map(str::trim).collect();
    if let Some(missing) = expected.iter().find(|c| !found_cols.contains(c)) {
        return Err(Error::MissingColumn((*missing).to_string()));
    }
    if found_cols != expected {
        return Err(Error::HeaderMismatch {
            expected: expected.join(","),
            found: found_cols.join(","),
        });
    }
    Ok(())
}

pub fn ingest_captures(path: impl AsRef<Path>, format: TableFormat) -> Result<Ingested> {
    let file = open(path.as_ref())?;
    read_captures(file, format)
}

pub fn read_captures<R: Read>(reader: R, format: TableFormat) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .flexible(true)
        .from_reader(reader);
    check_header(rdr.headers()?, &CAPTURE_COLUMNS)?;

    let mut out = Ingested::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        out.rows_read += 1;
        let row = row?;
        match parse_capture_row(&row) {
            Ok(rec) => {
                if !seen.insert(rec.image_id.clone()) {
                    return Err(Error::DuplicateImage(rec.image_id));
                }
                out.table.records.push(rec);
            }
            Err(reason) => out.rejections.push(Rejection {
                row: row_no,
                reason,
            }),
        }
    }
    Ok(out)
}

fn parse_capture_row(row: &csv::StringRecord) -> std::result::Result<CaptureRecord, String> {
    if row.len() != CAPTURE_COLUMNS.len() {
        return Err(format!(
            "field count {} (expected {})",
            row.len(),
            CAPTURE_COLUMNS.len()
        ));
    }
    let cell = |i: usize| -> std::result::Result<&str, String> {
        let v = row[i].trim();
        if v.is_empty() {
            Err(format!("missing {}", CAPTURE_COLUMNS[i]))
        } else {
            Ok(v)
        }
    };
    fn num<T: std::str::FromStr>(v: &str, col: &str) -> std::result::Result<T, String> {
        v.parse::<T>().map_err(|_| format!("unparseable {col}: `{v}`"))
    }
    let image_id = cell(0)?.to_string();
    let subject_id = cell(1)?.to_string();
    let eye = Eye::parse(cell(2)?).ok_or_else(|| format!("eye must be L or R, got `{}`", &row[2]))?;
    let collection_index: u32 = num(cell(3)?, CAPTURE_COLUMNS[3])?;
    let capture_time_months: i64 = num(cell(4)?, CAPTURE_COLUMNS[4])?;
    let age_years: i64 = num(cell(5)?, CAPTURE_COLUMNS[5])?;
    let mut reals = [0.0f64; 5];
    for (k, slot) in reals.iter_mut().enumerate() {
        let col = CAPTURE_COLUMNS[6 + k];
        let v: f64 = num(cell(6 + k)?, col)?;
        if !v.is_finite() {
            return Err(format!("non-finite {col}"));
        }
        *slot = v;
    }
    let rec = CaptureRecord {
        image_id,
        subject_id,
        eye,
        collection_index,
        capture_time_months,
        age_years,
        quality: reals[0],
        usable_area: reals[1],
        circularity: reals[2],
        pupil_radius: reals[3],
        iris_radius: reals[4],
    };
    if let Some(class) = record_violations(&rec).into_iter().next() {
        return Err(class.to_string());
    }
    Ok(rec)
}

/// Writes the table in the ingestion layout. Reals use the shortest
/// round-trip representation so `read_captures(write_captures(t)) == t`.
pub fn write_captures<W: Write>(table: &CaptureTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CAPTURE_COLUMNS)?;
    for r in &table.records {
        w.write_record([
            r.image_id.clone(),
            r.subject_id.clone(),
            r.eye.code().to_string(),
            r.collection_index.to_string(),
            r.capture_time_months.to_string(),
            r.age_years.to_string(),
            r.quality.to_string(),
            r.usable_area.to_string(),
            r.circularity.to_string(),
            r.pupil_radius.to_string(),
            r.iris_radius.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<capture table>", e))?;
    Ok(())
}

/// Ratio of pupil radius to iris radius.
pub fn dilation_ratio(r_pupil: f64, r_iris: f64) -> Result<f64> {
    if !(r_pupil > 0.0 && r_iris > 0.0) {
        return Err(Error::InvalidInput(format!(
            "radii must be positive (pupil {r_pupil}, iris {r_iris})"
        )));
    }
    if r_pupil >= r_iris {
        return Err(Error::InvalidInput(format!(
            "pupil radius {r_pupil} must be below iris radius {r_iris}"
        )));
    }
    Ok(r_pupil / r_iris)
}

/// `1 - |d_gallery - d_probe|` for two dilation ratios in [0, 1].
pub fn dilation_constancy(d_gallery: f64, d_probe: f64) -> Result<f64> {
    for d in [d_gallery, d_probe] {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::InvalidInput(format!(
                "dilation ratio {d} outside [0, 1]"
            )));
        }
    }
    Ok(1.0 - (d_gallery - d_probe).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FindingClass {
    DuplicateKey,
    DilationBounds,
    QualityRange,
    UsableAreaRange,
    CircularityRange,
    CollectionIndex,
    NegativeAge,
}

impl fmt::Display for FindingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingClass::DuplicateKey => "duplicate key",
            FindingClass::DilationBounds => "dilation bounds",
            FindingClass::QualityRange => "quality outside [0,100]",
            FindingClass::UsableAreaRange => "usable_area outside [0,100]",
            FindingClass::CircularityRange => "circularity outside [0,100]",
            FindingClass::CollectionIndex => "collection_index < 1",
            FindingClass::NegativeAge => "negative age",
        })
    }
}

fn record_violations(r: &CaptureRecord) -> Vec<FindingClass> {
    let mut v = Vec::new();
    if dilation_ratio(r.pupil_radius, r.iris_radius).is_err() {
        v.push(FindingClass::DilationBounds);
    }
    let pct = |x: f64| (0.0..=100.0).contains(&x);
    if !pct(r.quality) {
        v.push(FindingClass::QualityRange);
    }
    if !pct(r.usable_area) {
        v.push(FindingClass::UsableAreaRange);
    }
    if !pct(r.circularity) {
        v.push(FindingClass::CircularityRange);
    }
    if r.collection_index < 1 {
        v.push(FindingClass::CollectionIndex);
    }
    if r.age_years < 0 {
        v.push(FindingClass::NegativeAge);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// 0-based position in the table.
    pub row: usize,
    pub image_id: String,
    pub class: FindingClass,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub n_records: usize,
    pub findings: Vec<Finding>,
    pub counts: BTreeMap<FindingClass, usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    /// Number of distinct records carrying at least one finding.
    pub fn n_flagged(&self) -> usize {
        self.findings
            .iter()
            .map(|f| f.row)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn flagged_fraction(&self) -> f64 {
        if self.n_records == 0 {
            0.0
        } else {
            self.n_flagged() as f64 / self.n_records as f64
        }
    }
}

/// Lists every violated record invariant. A repeated `(subject_id, image_id)`
/// key yields one finding per extra occurrence.
pub fn validate_dataset(captures: &CaptureTable) -> ValidationReport {
    let mut report = ValidationReport {
        n_records: captures.len(),
        ..Default::default()
    };
    let mut seen: HashSet<&str> = HashSet::new();
    for (row, r) in captures.records.iter().enumerate() {
        let mut classes = record_violations(r);
        if !seen.insert(r.image_id.as_str()) {
            classes.push(FindingClass::DuplicateKey);
        }
        for class in classes {
            *report.counts.entry(class).or_default() += 1;
            report.findings.push(Finding {
                row,
                image_id: r.image_id.clone(),
                class,
            });
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Similarity scores.
    HigherIsBetter,
    /// Distance scores.
    LowerIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherProfile {
    pub name: String,
    pub orientation: Orientation,
    pub score_min: f64,
    pub score_max: f64,
    pub default_threshold: f64,
}

impl MatcherProfile {
    pub fn new(
        name: impl Into<String>,
        orientation: Orientation,
        score_min: f64,
        score_max: f64,
        default_threshold: f64,
    ) -> Result<Self> {
        let p = MatcherProfile {
            name: name.into(),
            orientation,
            score_min,
            score_max,
            default_threshold,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.score_min < self.score_max) {
            return Err(Error::InvalidInput(format!(
                "matcher `{}`: score_min must be below score_max",
                self.name
            )));
        }
        if !(self.score_min..=self.score_max).contains(&self.default_threshold) {
            return Err(Error::InvalidInput(format!(
                "matcher `{}`: default threshold outside score range",
                self.name
            )));
        }
        Ok(())
    }

    pub fn in_range(&self, score: f64) -> bool {
        (self.score_min..=self.score_max).contains(&score)
    }

    /// Maps a score onto a scale where larger always means more similar.
    pub fn similarity_key(&self, score: f64) -> f64 {
        match self.orientation {
            Orientation::HigherIsBetter => score,
            Orientation::LowerIsBetter => -score,
        }
    }

    pub fn from_similarity_key(&self, key: f64) -> f64 {
        self.similarity_key(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairKind {
    Genuine,
    Impostor,
}

impl PairKind {
    pub fn code(self) -> &'static str {
        match self {
            PairKind::Genuine => "genuine",
            PairKind::Impostor => "impostor",
        }
    }

    pub fn parse(s: &str) -> Option<PairKind> {
        match s {
            "genuine" => Some(PairKind::Genuine),
            "impostor" => Some(PairKind::Impostor),
            _ => None,
        }
    }
}

/// Per-image covariates of a gallery/probe pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairCovariates {
    pub q_gallery: f64,
    pub q_probe: f64,
    pub u_gallery: f64,
    pub u_probe: f64,
    pub c_gallery: f64,
    pub c_probe: f64,
    /// Dilation ratio of the gallery image.
    pub r_gallery: f64,
    pub r_probe: f64,
}

impl PairCovariates {
    pub fn min_quality(&self) -> f64 {
        self.q_gallery.min(self.q_probe)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRecord {
    pub kind: PairKind,
    pub eye: Eye,
    pub gallery_image_id: String,
    pub probe_image_id: String,
    pub gallery_subject: String,
    pub probe_subject: String,
    pub gallery_age: i64,
    pub probe_age: i64,
    pub gap_months: i64,
    pub delta_age_years: i64,
    pub dc: f64,
    pub covariates: PairCovariates,
    pub scores: BTreeMap<String, f64>,
}

impl ComparisonRecord {
    pub fn score(&self, matcher: &str) -> Option<f64> {
        self.scores.get(matcher).copied()
    }

    /// Stable identifier of the pair.
    pub fn key(&self) -> String {
        format!("{}|{}", self.gallery_image_id, self.probe_image_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub gallery_image_id: String,
    pub probe_image_id: String,
    pub matcher: String,
    pub score: f64,
}

/// Long-format matcher scores keyed by (gallery, probe, matcher).
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
    index: HashMap<(String, String, String), usize>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a score.
    pub fn insert(&mut self, gallery: &str, probe: &str, matcher: &str, score: f64) {
        let key = (gallery.to_string(), probe.to_string(), matcher.to_string());
        match self.index.get(&key) {
            Some(&i) => self.rows[i].score = score,
            None => {
                self.index.insert(key, self.rows.len());
                self.rows.push(ScoreRow {
                    gallery_image_id: gallery.to_string(),
                    probe_image_id: probe.to_string(),
                    matcher: matcher.to_string(),
                    score,
                });
            }
        }
    }

    pub fn get(&self, gallery: &str, probe: &str, matcher: &str) -> Option<f64> {
        // Allocation-free lookups would need a borrowed key type; the
        // tables here are small enough that this is not a bottleneck.
        self.index
            .get(&(gallery.to_string(), probe.to_string(), matcher.to_string()))
            .map(|&i| self.rows[i].score)
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn ingest_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    read_scores(open(path.as_ref())?)
}

pub fn read_scores<R: Read>(reader: R) -> Result<ScoreTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &SCORE_COLUMNS)?;
    let mut table = ScoreTable::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let score: f64 = row[3].trim().parse().map_err(|_| {
            Error::InvalidInput(format!("score table row {}: unparseable score `{}`", i + 1, &row[3]))
        })?;
        table.insert(row[0].trim(), row[1].trim(), row[2].trim(), score);
    }
    Ok(table)
}

pub fn write_scores<W: Write>(table: &ScoreTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORE_COLUMNS)?;
    for r in table.rows() {
        w.write_record([
            r.gallery_image_id.as_str(),
            r.probe_image_id.as_str(),
            r.matcher.as_str(),
            &r.score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<score table>", e))?;
    Ok(())
}
