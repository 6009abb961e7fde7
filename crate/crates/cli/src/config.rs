//! Run configuration: one TOML file describes a complete, reproducible run.
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use permanence::lmm::{ApcMode, ModelSpec, RandomStructure, StandardizeScope, Term};
use permanence::model::{Eye, MatcherProfile};
use permanence::pairing::PairingConfig;
use permanence::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub inputs: Inputs,
    /// Defaults to the profiles of the synthetic matchers.
    #[serde(default)]
    pub matchers: Option<Vec<MatcherProfile>>,
    #[serde(default)]
    pub pairing: PairingSection,
    #[serde(default)]
    pub thresholds: BTreeMap<String, ThresholdRule>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Input tables; unset paths point at the synthetic outputs in `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub captures: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for Inputs {
    fn default() -> Self {
        Inputs {
            captures: None,
            scores: None,
            delimiter: default_delimiter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingSection {
    pub max_impostor_probes: usize,
}

impl Default for PairingSection {
    fn default() -> Self {
        PairingSection { max_impostor_probes: 10 }
    }
}

/// Either a fixed threshold or a target FMR to calibrate against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRule {
    pub threshold: Option<f64>,
    pub target_fmr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub interval_bin_months: i64,
    pub confidence: f64,
    /// Target of `calibrate` for matchers without their own rule.
    pub target_fmr: f64,
    /// The two matchers for fusion and failure analysis; defaults to the first two.
    pub fusion: Option<[String; 2]>,
    pub failures_min_quality: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            interval_bin_months: 12,
            confidence: 0.95,
            target_fmr: 0.001,
            fusion: None,
            failures_min_quality: 40.0,
        }
    }
}

/// A named mixed model. Either `matcher` (raw genuine scores) or `stack`
/// (z-scores of several matchers with a `matcher` factor) picks the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    #[serde(default)]
    pub matcher: Option<String>,
    #[serde(default)]
    pub stack: Vec<String>,
    #[serde(default)]
    pub scope: StandardizeScope,
    /// "L" or "R"; both eyes when unset.
    #[serde(default)]
    pub eye: Option<String>,
    #[serde(default)]
    pub apc_mode: Option<ApcMode>,
    #[serde(default)]
    pub fixed_terms: Vec<Term>,
    #[serde(default)]
    pub random: RandomStructure,
    #[serde(default)]
    pub standardize: bool,
}

impl ModelEntry {
    pub fn eye(&self) -> Option<Eye> {
        self.eye.as_deref().and_then(Eye::parse)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            outcome: self.matcher.clone().unwrap_or_else(|| "z_score".into()),
            standardize: self.standardize,
            apc_mode: self.apc_mode,
            fixed_terms: self.fixed_terms.clone(),
            random: self.random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub k: usize,
    /// Model names to cross-validate; all models when empty.
    pub models: Vec<String>,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { k: 5, models: Vec::new() }
    }
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub sha256: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn profiles(&self) -> Vec<MatcherProfile> {
        self.matchers.clone().unwrap_or_else(|| self.synth.profiles())
    }

    pub fn pairing_config(&self) -> PairingConfig {
        PairingConfig {
            max_impostor_probes: self.pairing.max_impostor_probes,
            base_seed: self.seed,
            ..Default::default()
        }
    }

    /// Synthetic settings aligned with the run seed and pairing, so the
    /// generated impostor scores cover exactly the pairs `pairs` samples.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            impostor_probes: self.pairing.max_impostor_probes,
            ..self.synth.clone()
        }
    }

    pub fn fusion_pair(&self) -> CliResult<(String, String)> {
        if let Some([a, b]) = &self.metrics.fusion {
            return Ok((a.clone(), b.clone()));
        }
        let p = self.profiles();
        match p.as_slice() {
            [a, b, ..] => Ok((a.name.clone(), b.name.clone())),
            _ => Err(CliError::config("fusion needs two matchers")),
        }
    }

    fn validate(&self) -> CliResult<()> {
        let profiles = self.profiles();
        for p in &profiles {
            p.validate()
                .map_err(|e| CliError::config(format!("matcher `{}`: {e}", p.name)))?;
        }
        let known = |m: &str| profiles.iter().any(|p| p.name == m);
        for (m, rule) in &self.thresholds {
            if !known(m) {
                return Err(CliError::config(format!("thresholds: unknown matcher `{m}`")));
            }
            match (rule.threshold, rule.target_fmr) {
                (Some(_), None) => {}
                (None, Some(t)) if (0.0..=1.0).contains(&t) => {}
                (None, Some(t)) => return Err(CliError::config(format!("thresholds.{m}: target_fmr {t} outside [0, 1]"))),
                _ => {
                    return Err(CliError::config(format!(
                        "thresholds.{m}: set exactly one of `threshold` and `target_fmr`"
                    )))
                }
            }
        }
        let m = &self.metrics;
        if m.interval_bin_months <= 0 {
            return Err(CliError::config("metrics.interval_bin_months must be positive"));
        }
        if !(m.confidence > 0.0 && m.confidence < 1.0) {
            return Err(CliError::config("metrics.confidence must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&m.target_fmr) {
            return Err(CliError::config("metrics.target_fmr must lie in [0, 1]"));
        }
        if let Some([a, b]) = &m.fusion {
            if a == b || !known(a) || !known(b) {
                return Err(CliError::config("metrics.fusion must name two distinct configured matchers"));
            }
        }
        let mut names: Vec<&str> = self.models.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::config("model names must be distinct"));
        }
        for e in &self.models {
            let bad = |why: &str| Err(CliError::config(format!("model `{}`: {why}", e.name)));
            if e.name.is_empty() || !e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad("name must be non-empty [A-Za-z0-9_-]");
            }
            match (&e.matcher, e.stack.is_empty()) {
                (Some(mt), true) if known(mt) => {}
                (Some(mt), true) => return bad(&format!("unknown matcher `{mt}`")),
                (None, false) if e.stack.len() >= 2 && e.stack.iter().all(|s| known(s)) => {}
                (None, false) => return bad("`stack` needs two or more configured matchers"),
                _ => return bad("set exactly one of `matcher` and `stack`"),
            }
            if e.eye.is_some() && e.eye().is_none() {
                return bad("eye must be \"L\" or \"R\"");
            }
        }
        for name in &self.cv.models {
            if !self.models.iter().any(|e| &e.name == name) {
                return Err(CliError::config(format!("cv.models: unknown model `{name}`")));
            }
        }
        if self.cv.k < 2 {
            return Err(CliError::config("cv.k must be at least 2"));
        }
        if !self.inputs.delimiter.is_ascii() {
            return Err(CliError::config("inputs.delimiter must be a single ASCII character"));
        }
        Ok(())
    }
}

pub fn load(path: &Path, out_override: Option<&Path>, seed_override: Option<u64>) -> CliResult<Loaded> {
    let text = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::config(format!("config file {} not found", path.display()))
        } else {
            CliError::io(path, e)
        }
    })?;
    let sha256 = crate::output::sha256_hex(&text);
    let text = String::from_utf8(text).map_err(|_| CliError::config("config is not valid UTF-8"))?;
    let mut config = RunConfig::parse(&text)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = match out_override {
        Some(o) => o.to_path_buf(),
        None => base_dir.join(&config.out_dir),
    };
    Ok(Loaded {
        config,
        base_dir,
        out_dir,
        sha256,
    })
}

impl Loaded {
    pub fn captures_path(&self) -> PathBuf {
        match &self.config.inputs.captures {
            Some(p) => self.base_dir.join(p),
            None => self.out_dir.join("captures.csv"),
        }
    }

    pub fn scores_path(&self) -> PathBuf {
        match &self.config.inputs.scores {
            Some(p) => self.base_dir.join(p),
            None => self.out_dir.join("scores.csv"),
        }
    }
}
