//! Model frames: per-row numeric variables, factors and subject groups.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ComparisonRecord, Eye, PairKind};
use crate::pairing::ComparisonTable;
use crate::stats::{mean, sample_sd};

/// Numeric variables derivable from a comparison.
pub const NUMERIC_VARIABLES: [&str; 14] = [
    "T",
    "delta_A",
    "A_gallery",
    "A_probe",
    "DC",
    "Q_gallery",
    "Q_probe",
    "Q_min",
    "U_gallery",
    "U_probe",
    "C_gallery",
    "C_probe",
    "R_gallery",
    "R_probe",
];

/// Enrollment-age groups; ages outside 4..=12 fall into the nearest end group.
pub const AGE_GROUPS: [&str; 4] = ["4-5", "6-7", "8-9", "10-12"];

pub fn age_group(age: i64) -> usize {
    match age {
        ..=5 => 0,
        6..=7 => 1,
        8..=9 => 2,
        _ => 3,
    }
}

pub fn numeric_value(r: &ComparisonRecord, name: &str) -> Option<f64> {
    let c = &r.covariates;
    Some(match name {
        "T" => r.gap_months as f64,
        "delta_A" => r.delta_age_years as f64,
        "A_gallery" => r.gallery_age as f64,
        "A_probe" => r.probe_age as f64,
        "DC" => r.dc,
        "Q_gallery" => c.q_gallery,
        "Q_probe" => c.q_probe,
        "Q_min" => c.min_quality(),
        "U_gallery" => c.u_gallery,
        "U_probe" => c.u_probe,
        "C_gallery" => c.c_gallery,
        "C_probe" => c.c_probe,
        "R_gallery" => c.r_gallery,
        "R_probe" => c.r_probe,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl Factor {
    fn subset(&self, rows: &[usize]) -> Factor {
        Factor {
            levels: self.levels.clone(),
            codes: rows.iter().map(|&i| self.codes[i]).collect(),
        }
    }
}

/// How the matcher-comparison frame standardizes each matcher's scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    #[default]
    PerMatcherEye,
    PerMatcher,
}

/// Column-oriented view of genuine comparisons. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFrame {
    pub outcome_name: String,
    pub outcome: Vec<f64>,
    pub numeric: BTreeMap<String, Vec<f64>>,
    pub factors: BTreeMap<String, Factor>,
    /// Subject identifier per row.
    pub groups: Vec<String>,
    /// Unique row identifier (gallery|probe, plus matcher when stacked).
    pub row_keys: Vec<String>,
    /// Set when the outcome was standardized while building the frame.
    pub standardization: Option<StandardizeScope>,
}

impl ModelFrame {
    fn from_records<'a>(
        records: impl Iterator<Item = (&'a ComparisonRecord, f64, String)>,
        outcome_name: &str,
    ) -> ModelFrame {
        let mut frame = ModelFrame {
            outcome_name: outcome_name.to_string(),
            outcome: Vec::new(),
            numeric: NUMERIC_VARIABLES.iter().map(|v| (v.to_string(), Vec::new())).collect(),
            factors: BTreeMap::new(),
            groups: Vec::new(),
            row_keys: Vec::new(),
            standardization: None,
        };
        let mut age = Vec::new();
        let mut eye = Vec::new();
        for (r, y, key) in records {
            frame.outcome.push(y);
            for v in NUMERIC_VARIABLES {
                frame.numeric.get_mut(v).expect("declared").push(numeric_value(r, v).unwrap_or(f64::NAN));
            }
            age.push(age_group(r.gallery_age));
            eye.push(match r.eye {
                Eye::Left => 0,
                Eye::Right => 1,
            });
            frame.groups.push(r.gallery_subject.clone());
            frame.row_keys.push(key);
        }
        frame.factors.insert(
            "age_group".into(),
            Factor {
                levels: AGE_GROUPS.iter().map(|s| s.to_string()).collect(),
                codes: age,
            },
        );
        frame.factors.insert(
            "eye".into(),
            Factor {
                levels: vec!["L".into(), "R".into()],
                codes: eye,
            },
        );
        frame
    }

    /// Genuine pairs of `table` with the scores of `matcher` as outcome.
    pub fn from_table(table: &ComparisonTable, matcher: &str) -> Result<ModelFrame> {
        table.profile(matcher)?;
        Ok(Self::from_records(
            table
                .of_kind(PairKind::Genuine)
                .map(|r| (r, r.score(matcher).unwrap_or(f64::NAN), r.key())),
            matcher,
        ))
    }

    /// Rows of several matchers stacked with within-matcher z-scores as the
    /// outcome and a `matcher` factor (first matcher is the reference).
    pub fn stacked(table: &ComparisonTable, matchers: &[&str], scope: StandardizeScope) -> Result<ModelFrame> {
        if matchers.len() < 2 {
            return Err(Error::InvalidSpec("matcher comparison needs at least two matchers".into()));
        }
        for m in matchers {
            table.profile(m)?;
        }
        let genuine: Vec<&ComparisonRecord> = table.of_kind(PairKind::Genuine).collect();
        let mut z = Vec::with_capacity(genuine.len() * matchers.len());
        for m in matchers {
            let raw: Vec<f64> = genuine.iter().map(|r| r.score(m).unwrap_or(f64::NAN)).collect();
            let mut out = vec![f64::NAN; raw.len()];
            let cells: Vec<Option<Eye>> = match scope {
                StandardizeScope::PerMatcherEye => vec![Some(Eye::Left), Some(Eye::Right)],
                StandardizeScope::PerMatcher => vec![None],
            };
            for cell in cells {
                let idx: Vec<usize> = (0..raw.len())
                    .filter(|&i| raw[i].is_finite() && cell.is_none_or(|e| genuine[i].eye == e))
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let vals: Vec<f64> = idx.iter().map(|&i| raw[i]).collect();
                let (mu, sd) = (mean(&vals), sample_sd(&vals));
                if !(sd > 0.0) {
                    return Err(Error::ConstantOutcome);
                }
                for &i in &idx {
                    out[i] = (raw[i] - mu) / sd;
                }
            }
            z.push(out);
        }
        let rows = matchers.iter().enumerate().flat_map(|(mi, m)| {
            let z = &z;
            genuine
                .iter()
                .enumerate()
                .map(move |(i, r)| (*r, z[mi][i], format!("{}|{m}", r.key())))
        });
        let mut frame = Self::from_records(rows, "z_score");
        let n = genuine.len();
        frame.factors.insert(
            "matcher".into(),
            Factor {
                levels: matchers.iter().map(|s| s.to_string()).collect(),
                codes: (0..matchers.len()).flat_map(|m| std::iter::repeat_n(m, n)).collect(),
            },
        );
        frame.standardization = Some(scope);
        Ok(frame)
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> ModelFrame {
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        ModelFrame {
            outcome_name: self.outcome_name.clone(),
            outcome: pick(&self.outcome),
            numeric: self.numeric.iter().map(|(k, v)| (k.clone(), pick(v))).collect(),
            factors: self.factors.iter().map(|(k, f)| (k.clone(), f.subset(rows))).collect(),
            groups: rows.iter().map(|&i| self.groups[i].clone()).collect(),
            row_keys: rows.iter().map(|&i| self.row_keys[i].clone()).collect(),
            standardization: self.standardization,
        }
    }

    /// Adds or replaces a numeric column.
    pub fn set_numeric(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.len());
        self.numeric.insert(name.to_string(), values);
    }
}
