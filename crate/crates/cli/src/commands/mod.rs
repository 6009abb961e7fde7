mod data;
mod models;
mod rates;
mod report;

pub use data::{ingest, pairs, synth};
pub use models::{apc, cv, lmm};
pub use rates::{calibrate, det, failures, fnmr, fuse};
pub use report::report;

use permanence::model::{read_captures, CaptureTable, Eye, TableFormat};
use permanence::pairing::{read_pairs, ComparisonTable};

use crate::error::CliResult;
use crate::output::Run;

pub(crate) const PAIRS_FILE: &str = "pairs.csv";

pub(crate) fn load_captures(run: &mut Run) -> CliResult<CaptureTable> {
    let path = run.cfg.captures_path();
    let data = run.read_input(&path, "synth")?;
    let format = TableFormat {
        delimiter: run.cfg.config.inputs.delimiter as u8,
    };
    Ok(read_captures(data.as_slice(), format)?.table)
}

/// The pair table written by `pairs`, joined back onto the captures.
pub(crate) fn load_pairs(run: &mut Run) -> CliResult<ComparisonTable> {
    let profiles = run.cfg.config.profiles();
    let pairs_path = run.out(PAIRS_FILE);
    let pairs = run.read_input(&pairs_path, "pairs")?;
    let captures = load_captures(run)?;
    Ok(read_pairs(pairs.as_slice(), &captures, &profiles)?)
}

/// Eye strata reported by the rate subcommands: both eyes pooled, then each eye.
pub(crate) const EYE_STRATA: [Option<Eye>; 3] = [None, Some(Eye::Left), Some(Eye::Right)];

pub(crate) fn eye_label(eye: Option<Eye>) -> &'static str {
    eye.map(Eye::code).unwrap_or("all")
}
