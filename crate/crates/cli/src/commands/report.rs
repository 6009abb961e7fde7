use std::collections::BTreeMap;
use std::fmt::Write;

use super::models::TRAJECTORY_FILE;
use super::rates::{DET_FILE, FNMR_FILE};
use crate::config::Loaded;
use crate::error::{CliError, CliResult, Kind};
use crate::output::Run;
use crate::svg::{line_chart, Axis, Series};

/// Floor for zero rates on log axes.
const LOG_FLOOR: f64 = 1e-5;

struct Rows {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Rows {
    fn parse(data: &[u8], name: &str) -> CliResult<Rows> {
        let bad = |e: csv::Error| CliError::new(Kind::Data, format!("{name}: {e}"));
        let mut rdr = csv::Reader::from_reader(data);
        let header = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        Ok(Rows { header, rows })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::new(Kind::Data, format!("column `{name}` missing")))
    }

    fn f64_at(row: &[String], i: usize) -> CliResult<f64> {
        match row[i].as_str() {
            "NA" => Ok(f64::NAN),
            "Inf" => Ok(f64::INFINITY),
            "-Inf" => Ok(f64::NEG_INFINITY),
            s => s
                .parse()
                .map_err(|_| CliError::new(Kind::Data, format!("`{s}` is not a number"))),
        }
    }
}

fn fnmr_figures(rows: &Rows) -> CliResult<Vec<(String, String)>> {
    let (cm, ce, ci, cf, lo, hi) = (
        rows.col("matcher")?,
        rows.col("eye")?,
        rows.col("interval_months")?,
        rows.col("fnmr")?,
        rows.col("ci_low")?,
        rows.col("ci_high")?,
    );
    let mut by_matcher: BTreeMap<String, BTreeMap<String, Vec<(f64, f64, f64, f64)>>> = BTreeMap::new();
    for r in &rows.rows {
        by_matcher.entry(r[cm].clone()).or_default().entry(r[ce].clone()).or_default().push((
            Rows::f64_at(r, ci)?,
            Rows::f64_at(r, cf)?,
            Rows::f64_at(r, lo)?,
            Rows::f64_at(r, hi)?,
        ));
    }
    let mut out = Vec::new();
    for (matcher, eyes) in by_matcher {
        let all = eyes.values().flatten();
        let x_max = all.clone().map(|p| p.0).fold(0.0, f64::max);
        let y_max = all.map(|p| p.3).fold(0.0, f64::max).max(1e-3);
        let series: Vec<Series> = eyes
            .into_iter()
            .map(|(eye, pts)| Series {
                name: format!("eye {eye}"),
                points: pts.iter().map(|p| (p.0, p.1)).collect(),
                whiskers: Some(pts.iter().map(|p| (p.2, p.3)).collect()),
                markers: true,
            })
            .collect();
        let svg = line_chart(
            &format!("Longitudinal FNMR: {matcher}"),
            &Axis::linear("time between gallery and probe (months)", 0.0, x_max.max(12.0)),
            &Axis::linear("FNMR", 0.0, y_max * 1.05),
            &series,
        );
        out.push((format!("figures/fnmr_{matcher}.svg"), svg));
    }
    Ok(out)
}

fn det_figure(rows: &Rows) -> CliResult<String> {
    let (cm, ce, cf, cn) = (rows.col("matcher")?, rows.col("eye")?, rows.col("fmr")?, rows.col("fnmr")?);
    let mut curves: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows.rows {
        let fmr = Rows::f64_at(r, cf)?.max(LOG_FLOOR);
        let fnmr = Rows::f64_at(r, cn)?.max(LOG_FLOOR);
        curves.entry((r[cm].clone(), r[ce].clone())).or_default().push((fmr, fnmr));
    }
    let series: Vec<Series> = curves
        .into_iter()
        .map(|((m, e), points)| Series {
            name: format!("{m} {e}"),
            points,
            whiskers: None,
            markers: false,
        })
        .collect();
    Ok(line_chart(
        "DET curves",
        &Axis::log10("FMR", LOG_FLOOR, 1.0),
        &Axis::log10("FNMR", LOG_FLOOR, 1.0),
        &series,
    ))
}

fn trajectory_figures(rows: &Rows) -> CliResult<Vec<(String, String)>> {
    let (cm, cg, ct, cy) = (
        rows.col("model")?,
        rows.col("age_group")?,
        rows.col("T_months")?,
        rows.col("predicted")?,
    );
    // Age groups keep file order, which follows the factor levels.
    let mut by_model: BTreeMap<String, Vec<(String, Vec<(f64, f64)>)>> = BTreeMap::new();
    for r in &rows.rows {
        let groups = by_model.entry(r[cm].clone()).or_default();
        let point = (Rows::f64_at(r, ct)?, Rows::f64_at(r, cy)?);
        match groups.iter_mut().find(|(g, _)| *g == r[cg]) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((r[cg].clone(), vec![point])),
        }
    }
    let mut out = Vec::new();
    for (model, groups) in by_model {
        let pts = groups.iter().flat_map(|(_, p)| p.iter());
        let x_max = pts.clone().map(|p| p.0).fold(0.0, f64::max);
        let (y_lo, y_hi) = pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let pad = ((y_hi - y_lo) * 0.08).max(1e-9);
        let series: Vec<Series> = groups
            .into_iter()
            .map(|(g, points)| Series {
                name: format!("enrolled {g} y"),
                points,
                whiskers: None,
                markers: false,
            })
            .collect();
        let svg = line_chart(
            &format!("Predicted match performance: {model}"),
            &Axis::linear("time since enrollment (months)", 0.0, x_max.max(12.0)),
            &Axis::linear("predicted score", y_lo - pad, y_hi + pad),
            &series,
        );
        out.push((format!("figures/trajectory_{model}.svg"), svg));
    }
    Ok(out)
}

pub fn report(cfg: &Loaded) -> CliResult<()> {
    let mut run = Run::new(cfg, "report")?;
    let fnmr = Rows::parse(&run.read_input(&run.out(FNMR_FILE), "fnmr")?, FNMR_FILE)?;
    let det = Rows::parse(&run.read_input(&run.out(DET_FILE), "det")?, DET_FILE)?;
    let traj = Rows::parse(&run.read_input(&run.out(TRAJECTORY_FILE), "lmm")?, TRAJECTORY_FILE)?;

    let mut figures = fnmr_figures(&fnmr)?;
    figures.push(("figures/det.svg".into(), det_figure(&det)?));
    figures.extend(trajectory_figures(&traj)?);
    let mut s = String::new();
    let _ = writeln!(s, "{} figure(s):", figures.len());
    for (name, svg) in &figures {
        run.write(name, svg.as_bytes())?;
        let _ = writeln!(s, "  {name}");
    }
    run.finish(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnmr_rows_become_one_figure_per_matcher() {
        let csv = "matcher,eye,threshold,interval_months,n_genuine,n_false_nonmatch,fnmr,ci_low,ci_high,ci_method\n\
                   a,all,1,12,100,1,0.01,0.001,0.05,wilson\n\
                   a,L,1,12,50,0,0,0,0.06,rule_of_three\n\
                   b,all,1,12,100,2,0.02,0.005,0.07,wilson\n";
        let rows = Rows::parse(csv.as_bytes(), "t").unwrap();
        let figs = fnmr_figures(&rows).unwrap();
        assert_eq!(figs.len(), 2);
        assert_eq!(figs[0].0, "figures/fnmr_a.svg");
        assert!(figs[0].1.contains("eye L") && figs[0].1.contains("eye all"));
    }

    #[test]
    fn missing_columns_are_data_errors() {
        let rows = Rows::parse(b"matcher,eye\na,L\n", "t").unwrap();
        assert_eq!(det_figure(&rows).unwrap_err().kind, Kind::Data);
    }
}
