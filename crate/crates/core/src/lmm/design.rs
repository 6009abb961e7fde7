//! Model specifications and design-matrix construction.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::frame::ModelFrame;
use crate::error::{Error, Result};
use crate::pairing::ComparisonTable;
use crate::stats::{mean, sample_sd};

/// One entry of the fixed-effects part of a model.
///
/// Text form: `Q_gallery`, `factor(age_group, 4-5)`, `A_gallery:T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Continuous(String),
    Factor { name: String, reference: Option<String> },
    /// Elementwise product of numeric variables and/or factor dummies.
    Interaction(Vec<String>),
}

impl Term {
    pub fn parse(s: &str) -> Result<Term> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("factor(").and_then(|r| r.strip_suffix(')')) {
            let mut parts = inner.splitn(2, ',').map(str::trim);
            let name = parts.next().unwrap_or_default();
            if name.is_empty() {
                return Err(Error::InvalidSpec(format!("bad factor term `{s}`")));
            }
            return Ok(Term::Factor {
                name: name.to_string(),
                reference: parts.next().filter(|r| !r.is_empty()).map(str::to_string),
            });
        }
        if s.contains(':') {
            let parts: Vec<String> = s.split(':').map(|p| p.trim().to_string()).collect();
            if parts.len() < 2 || parts.iter().any(String::is_empty) {
                return Err(Error::InvalidSpec(format!("bad interaction `{s}`")));
            }
            return Ok(Term::Interaction(parts));
        }
        if s.is_empty() || s.contains(['(', ')', ',']) {
            return Err(Error::InvalidSpec(format!("bad term `{s}`")));
        }
        Ok(Term::Continuous(s.to_string()))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Continuous(v) => f.write_str(v),
            Term::Factor { name, reference: Some(r) } => write!(f, "factor({name}, {r})"),
            Term::Factor { name, reference: None } => write!(f, "factor({name})"),
            Term::Interaction(parts) => f.write_str(&parts.join(":")),
        }
    }
}

impl TryFrom<String> for Term {
    type Error = Error;
    fn try_from(s: String) -> Result<Term> {
        Term::parse(&s)
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

/// Which two of the three linearly dependent age/time variables enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApcMode {
    GalleryAgePlusT,
    ProbeAgePlusT,
    GalleryAgePlusDeltaA,
}

impl ApcMode {
    pub const ALL: [ApcMode; 3] = [ApcMode::GalleryAgePlusT, ApcMode::ProbeAgePlusT, ApcMode::GalleryAgePlusDeltaA];

    /// (age variable, temporal variable).
    pub fn variables(self) -> (&'static str, &'static str) {
        match self {
            ApcMode::GalleryAgePlusT => ("A_gallery", "T"),
            ApcMode::ProbeAgePlusT => ("A_probe", "T"),
            ApcMode::GalleryAgePlusDeltaA => ("A_gallery", "delta_A"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ApcMode::GalleryAgePlusT => "A_gallery + T",
            ApcMode::ProbeAgePlusT => "A_probe + T",
            ApcMode::GalleryAgePlusDeltaA => "A_gallery + delta_A",
        }
    }
}

pub const APC_VARIABLES: [&str; 4] = ["A_gallery", "A_probe", "T", "delta_A"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomStructure {
    InterceptOnly,
    #[default]
    InterceptAndSlopeOnT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Matcher whose genuine scores are modeled.
    pub outcome: String,
    /// Replace the outcome by its z-score within the modeled rows.
    #[serde(default)]
    pub standardize: bool,
    /// `None` leaves every age/time variable to `fixed_terms`.
    #[serde(default)]
    pub apc_mode: Option<ApcMode>,
    #[serde(default)]
    pub fixed_terms: Vec<Term>,
    #[serde(default)]
    pub random: RandomStructure,
}

impl ModelSpec {
    pub fn new(outcome: &str, apc_mode: Option<ApcMode>, fixed: &[&str], random: RandomStructure) -> Result<Self> {
        Ok(ModelSpec {
            outcome: outcome.to_string(),
            standardize: false,
            apc_mode,
            fixed_terms: fixed.iter().map(|t| Term::parse(t)).collect::<Result<_>>()?,
            random,
        })
    }
}

/// Subject groups of the design rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    pub labels: Vec<String>,
    pub of_row: Vec<usize>,
}

impl GroupIndex {
    pub fn from_labels(labels: &[String]) -> GroupIndex {
        let uniq: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let of_row = labels.iter().map(|l| uniq.binary_search(l).expect("present")).collect();
        GroupIndex { labels: uniq, of_row }
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    /// Row indices per group, each list in row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.labels.len()];
        for (i, &g) in self.of_row.iter().enumerate() {
            m[g].push(i);
        }
        m
    }
}

/// Response, fixed-effects matrix, random-effects structure and groups.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub columns: Vec<String>,
    /// Random-slope covariate (T in months); `None` for intercept-only.
    pub slope: Option<DVector<f64>>,
    pub groups: GroupIndex,
    pub row_keys: Vec<String>,
    /// Rows removed for a missing value, before any fit.
    pub n_dropped: usize,
    pub standardized: bool,
    /// Raw outcome moments over the kept rows (sample sd).
    pub outcome_mean: f64,
    pub outcome_sd: f64,
}

impl Design {
    /// Direct construction from arrays; rows keep their given order.
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        columns: Vec<String>,
        slope: Option<DVector<f64>>,
        group_labels: &[String],
    ) -> Result<Design> {
        let n = y.len();
        if x.nrows() != n || group_labels.len() != n || slope.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::InvalidInput("design arrays differ in length".into()));
        }
        if columns.len() != x.ncols() {
            return Err(Error::InvalidInput("column names do not match X".into()));
        }
        let ys: Vec<f64> = y.iter().copied().collect();
        Ok(Design {
            outcome_mean: mean(&ys),
            outcome_sd: sample_sd(&ys),
            y,
            x,
            columns,
            slope,
            groups: GroupIndex::from_labels(group_labels),
            row_keys: (0..n).map(|i| i.to_string()).collect(),
            n_dropped: 0,
            standardized: false,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn random(&self) -> RandomStructure {
        if self.slope.is_some() {
            RandomStructure::InterceptAndSlopeOnT
        } else {
            RandomStructure::InterceptOnly
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone)]
enum Part {
    Numeric(String),
    Dummy { factor: String, level: usize },
}

#[derive(Debug, Clone)]
struct ColumnRecipe {
    name: String,
    parts: Vec<Part>,
    /// Factor levels that must be observed (reference levels included).
    required_levels: Vec<(String, usize)>,
}

fn factor_reference(spec: &ModelSpec, frame: &ModelFrame, name: &str) -> Result<usize> {
    let factor = frame
        .factors
        .get(name)
        .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
    let declared = spec.fixed_terms.iter().find_map(|t| match t {
        Term::Factor { name: n, reference } if n == name => Some(reference.clone()),
        _ => None,
    });
    match declared.flatten() {
        Some(r) => factor.levels.iter().position(|l| *l == r).ok_or(Error::FactorLevelAbsent {
            factor: name.to_string(),
            level: r,
        }),
        None => Ok(0),
    }
}

fn recipes(frame: &ModelFrame, spec: &ModelSpec) -> Result<Vec<ColumnRecipe>> {
    let mut out = vec![ColumnRecipe {
        name: "(Intercept)".into(),
        parts: vec![],
        required_levels: vec![],
    }];
    let numeric = |v: &str| -> Result<Part> {
        if frame.numeric.contains_key(v) {
            Ok(Part::Numeric(v.to_string()))
        } else {
            Err(Error::UnknownVariable(v.to_string()))
        }
    };
    if let Some(mode) = spec.apc_mode {
        let (a, t) = mode.variables();
        for v in [a, t] {
            out.push(ColumnRecipe {
                name: v.into(),
                parts: vec![numeric(v)?],
                required_levels: vec![],
            });
        }
    }
    for term in &spec.fixed_terms {
        match term {
            Term::Continuous(v) => {
                if spec.apc_mode.is_some() && APC_VARIABLES.contains(&v.as_str()) {
                    return Err(Error::InvalidSpec(format!(
                        "`{v}` is set by apc_mode; list it only inside interactions"
                    )));
                }
                out.push(ColumnRecipe {
                    name: v.clone(),
                    parts: vec![numeric(v)?],
                    required_levels: vec![],
                });
            }
            Term::Factor { name, .. } => {
                let reference = factor_reference(spec, frame, name)?;
                let f = &frame.factors[name];
                for (lvl, label) in f.levels.iter().enumerate() {
                    if lvl == reference {
                        continue;
                    }
                    out.push(ColumnRecipe {
                        name: format!("{name}[{label}]"),
                        parts: vec![Part::Dummy {
                            factor: name.clone(),
                            level: lvl,
                        }],
                        required_levels: vec![(name.clone(), lvl), (name.clone(), reference)],
                    });
                }
            }
            Term::Interaction(vars) => {
                let mut acc: Vec<(Vec<String>, Vec<Part>, Vec<(String, usize)>)> = vec![(vec![], vec![], vec![])];
                for v in vars {
                    let expansions: Vec<(String, Part, Option<(String, usize)>)> = if frame.factors.contains_key(v) {
                        let reference = factor_reference(spec, frame, v)?;
                        let f = &frame.factors[v];
                        (0..f.levels.len())
                            .filter(|&l| l != reference)
                            .map(|l| {
                                (
                                    format!("{v}[{}]", f.levels[l]),
                                    Part::Dummy { factor: v.clone(), level: l },
                                    Some((v.clone(), l)),
                                )
                            })
                            .collect()
                    } else {
                        vec![(v.clone(), numeric(v)?, None)]
                    };
                    let mut next = Vec::new();
                    for (names, parts, req) in &acc {
                        for (n, p, r) in &expansions {
                            let mut names = names.clone();
                            names.push(n.clone());
                            let mut parts = parts.clone();
                            parts.push(p.clone());
                            let mut req = req.clone();
                            req.extend(r.clone());
                            next.push((names, parts, req));
                        }
                    }
                    acc = next;
                }
                for (names, parts, req) in acc {
                    out.push(ColumnRecipe {
                        name: names.join(":"),
                        parts,
                        required_levels: req,
                    });
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    for r in &out {
        if !seen.insert(r.name.clone()) {
            return Err(Error::InvalidSpec(format!("column `{}` appears twice", r.name)));
        }
    }
    Ok(out)
}

fn numeric_parts(recipes: &[ColumnRecipe]) -> BTreeSet<String> {
    recipes
        .iter()
        .flat_map(|r| r.parts.iter())
        .filter_map(|p| match p {
            Part::Numeric(v) => Some(v.clone()),
            _ => None,
        })
        .collect()
}

/// Column names of the fixed-effects matrix for `spec` on `frame`.
pub fn design_columns(frame: &ModelFrame, spec: &ModelSpec) -> Result<Vec<String>> {
    Ok(recipes(frame, spec)?.into_iter().map(|r| r.name).collect())
}

/// Rows of `frame` with every value referenced by `spec` finite.
pub fn complete_rows(frame: &ModelFrame, spec: &ModelSpec) -> Result<Vec<usize>> {
    let recipes = recipes(frame, spec)?;
    let mut needed = numeric_parts(&recipes);
    if spec.random == RandomStructure::InterceptAndSlopeOnT {
        needed.insert("T".into());
    }
    let cols: Vec<&Vec<f64>> = needed
        .iter()
        .map(|v| frame.numeric.get(v).ok_or_else(|| Error::UnknownVariable(v.clone())))
        .collect::<Result<_>>()?;
    Ok((0..frame.len())
        .filter(|&i| frame.outcome[i].is_finite() && cols.iter().all(|c| c[i].is_finite()))
        .collect())
}

/// Builds the design for the genuine pairs of `table`.
pub fn build_design(table: &ComparisonTable, spec: &ModelSpec) -> Result<Design> {
    let frame = ModelFrame::from_table(table, &spec.outcome)?;
    build_design_frame(&frame, spec)
}

pub fn build_design_frame(frame: &ModelFrame, spec: &ModelSpec) -> Result<Design> {
    assemble(frame, spec, true)
}

/// Design without level-presence and rank checks, for scoring held-out rows
/// with columns that match a training design.
pub fn build_prediction_design(frame: &ModelFrame, spec: &ModelSpec) -> Result<Design> {
    let mut unstd = spec.clone();
    unstd.standardize = false;
    assemble(frame, &unstd, false)
}

fn assemble(frame: &ModelFrame, spec: &ModelSpec, checks: bool) -> Result<Design> {
    let recipes = recipes(frame, spec)?;
    let mut kept = complete_rows(frame, spec)?;
    let n_dropped = frame.len() - kept.len();
    // Canonical row order makes fits independent of input order.
    kept.sort_by(|&a, &b| (&frame.groups[a], &frame.row_keys[a]).cmp(&(&frame.groups[b], &frame.row_keys[b])));
    let n = kept.len();
    if n == 0 {
        return Err(Error::Empty("model frame after removing incomplete rows"));
    }

    if checks {
        for r in &recipes {
            for (factor, level) in &r.required_levels {
                let codes = &frame.factors[factor].codes;
                if !kept.iter().any(|&i| codes[i] == *level) {
                    return Err(Error::FactorLevelAbsent {
                        factor: factor.clone(),
                        level: frame.factors[factor].levels[*level].clone(),
                    });
                }
            }
        }
    }

    let mut x = DMatrix::<f64>::zeros(n, recipes.len());
    for (j, r) in recipes.iter().enumerate() {
        for (row, &i) in kept.iter().enumerate() {
            let mut v = 1.0;
            for p in &r.parts {
                v *= match p {
                    Part::Numeric(name) => frame.numeric[name][i],
                    Part::Dummy { factor, level } => (frame.factors[factor].codes[i] == *level) as u8 as f64,
                };
            }
            x[(row, j)] = v;
        }
    }

    let raw: Vec<f64> = kept.iter().map(|&i| frame.outcome[i]).collect();
    let (mu, sd) = (mean(&raw), sample_sd(&raw));
    let y = if spec.standardize {
        if !(sd > 0.0) {
            return Err(Error::ConstantOutcome);
        }
        DVector::from_iterator(n, raw.iter().map(|v| (v - mu) / sd))
    } else {
        DVector::from_vec(raw)
    };

    let columns: Vec<String> = recipes.into_iter().map(|r| r.name).collect();
    if checks {
        let deficient = collinear_columns(&x);
        if !deficient.is_empty() {
            return Err(Error::RankDeficient {
                columns: deficient.into_iter().map(|j| columns[j].clone()).collect(),
            });
        }
    }

    let slope = (spec.random == RandomStructure::InterceptAndSlopeOnT)
        .then(|| DVector::from_iterator(n, kept.iter().map(|&i| frame.numeric["T"][i])));
    let labels: Vec<String> = kept.iter().map(|&i| frame.groups[i].clone()).collect();
    Ok(Design {
        y,
        x,
        columns,
        slope,
        groups: GroupIndex::from_labels(&labels),
        row_keys: kept.iter().map(|&i| frame.row_keys[i].clone()).collect(),
        n_dropped,
        standardized: spec.standardize,
        outcome_mean: mu,
        outcome_sd: sd,
    })
}

/// Columns that lie (numerically) in the span of the columns before them,
/// found by twice-reorthogonalized Gram-Schmidt.
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            out.push(j);
            continue;
        }
        let mut v = col / norm0;
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv < 1e-9 {
            out.push(j);
        } else {
            basis.push(v / nv);
        }
    }
    out
}
