use std::collections::BTreeMap;
use std::fmt::Write;

use permanence::model::{
    read_captures, read_scores, validate_dataset, write_captures, write_scores, PairKind, TableFormat,
};
use permanence::pairing::{attach_scores, generate_genuine_pairs, generate_impostor_pairs, write_pairs};
use permanence::synth::generate_longitudinal;

use super::{load_captures, PAIRS_FILE};
use crate::config::Loaded;
use crate::error::{CliError, CliResult, Kind};
use crate::output::{Run, Table};

pub fn synth(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "synth")?;
    let sc = cfg.config.synth_config();
    let (captures, scores, truth) = generate_longitudinal(&sc)?;

    let mut buf = Vec::new();
    write_captures(&captures, &mut buf)?;
    run.write("captures.csv", &buf)?;
    let mut buf = Vec::new();
    write_scores(&scores, &mut buf)?;
    run.write("scores.csv", &buf)?;
    run.write_json("ground_truth.json", &truth)?;

    let mut s = String::new();
    let _ = writeln!(s, "synthetic cohort (seed {})", sc.seed);
    let _ = writeln!(s, "  subjects:          {}", sc.n_subjects);
    let _ = writeln!(s, "  captures:          {}", captures.len());
    let _ = writeln!(s, "  genuine scores:    {}", truth.n_genuine);
    let _ = writeln!(s, "  impostor scores:   {}", truth.n_impostor);
    for m in &truth.matchers {
        let _ = writeln!(s, "  {}: {} genuine score(s) clamped to range", m.name, m.n_clamped);
    }
    run.finish(&s)
}

pub fn ingest(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "ingest")?;
    let path = cfg.captures_path();
    let data = run.read_input(&path, "synth")?;
    let format = TableFormat {
        delimiter: cfg.config.inputs.delimiter as u8,
    };
    let ingested = read_captures(data.as_slice(), format)?;

    let mut rej = Table::new(&["row", "reason"]);
    for r in &ingested.rejections {
        rej.row(&[r.row.to_string(), r.reason.clone()]);
    }
    run.write_table("ingest_rejections.csv", rej)?;

    let report = validate_dataset(&ingested.table);
    let mut findings = Table::new(&["row", "image_id", "finding"]);
    for f in &report.findings {
        findings.row(&[f.row.to_string(), f.image_id.clone(), f.class.to_string()]);
    }
    run.write_table("validation_findings.csv", findings)?;

    let scores_path = cfg.scores_path();
    let scores = read_scores(run.read_input(&scores_path, "synth")?.as_slice())?;
    let profiles = cfg.config.profiles();
    let mut per_matcher: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in scores.rows() {
        let e = per_matcher.entry(r.matcher.as_str()).or_default();
        e.0 += 1;
        if let Some(p) = profiles.iter().find(|p| p.name == r.matcher) {
            if !p.in_range(r.score) {
                e.1 += 1;
            }
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, "captures: {} row(s) read, {} kept, {} rejected", ingested.rows_read, ingested.table.len(), ingested.rejections.len());
    let _ = writeln!(
        s,
        "validation: {} finding(s) on {} record(s) ({:.2}% flagged)",
        report.findings.len(),
        report.n_flagged(),
        100.0 * report.flagged_fraction()
    );
    for (class, n) in &report.counts {
        let _ = writeln!(s, "  {class}: {n}");
    }
    let _ = writeln!(s, "scores: {} row(s)", scores.len());
    for (m, (n, out)) in &per_matcher {
        let known = if profiles.iter().any(|p| p.name == *m) { "" } else { " (no configured profile)" };
        let _ = writeln!(s, "  {m}: {n} score(s), {out} outside the declared range{known}");
    }
    run.finish(&s)
}

pub fn pairs(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "pairs")?;
    let captures = load_captures(&mut run)?;
    let scores_path = cfg.scores_path();
    let scores = read_scores(run.read_input(&scores_path, "synth")?.as_slice())?;
    let profiles = cfg.config.profiles();

    let mut pairs = generate_genuine_pairs(&captures);
    pairs.extend(generate_impostor_pairs(&captures, &cfg.config.pairing_config()));
    let table = attach_scores(pairs, &scores, &profiles)?;
    if table.is_empty() {
        return Err(CliError::new(Kind::Data, "no comparison has scores for every configured matcher"));
    }

    let mut buf = Vec::new();
    write_pairs(&table, &mut buf)?;
    run.write(PAIRS_FILE, &buf)?;
    let mut inc = Table::new(&["kind", "eye", "gallery_image_id", "probe_image_id", "missing_matchers"]);
    for p in &table.incomplete {
        let r = &p.record;
        inc.row(&[
            r.kind.code().to_string(),
            r.eye.code().to_string(),
            r.gallery_image_id.clone(),
            r.probe_image_id.clone(),
            p.missing.join(";"),
        ]);
    }
    run.write_table("incomplete_pairs.csv", inc)?;

    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in &table.records {
        *counts.entry((r.kind.code(), r.eye.code())).or_default() += 1;
    }
    let mut s = String::new();
    let _ = writeln!(s, "pairs: {} scored, {} incomplete (excluded)", table.len(), table.incomplete.len());
    for kind in [PairKind::Genuine, PairKind::Impostor] {
        for (&(k, eye), n) in &counts {
            if k == kind.code() {
                let _ = writeln!(s, "  {k} {eye}: {n}");
            }
        }
    }
    run.finish(&s)
}
