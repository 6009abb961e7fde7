//! Subject-level cross-validation and residual diagnostics.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lmm::design::{build_design_frame, build_prediction_design, complete_rows, Design, ModelSpec};
use crate::lmm::frame::ModelFrame;
use crate::lmm::reml::{fit_reml, FittedModel};
use crate::pairing::ComparisonTable;
use crate::stats::{normal_quantile, normal_sf};

#[derive(Debug, Clone, Serialize)]
pub struct CvFold {
    pub fold: usize,
    pub oos_r2: f64,
    pub rmse: f64,
    pub n_test_subjects: usize,
    pub n_test_rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub per_fold: Vec<CvFold>,
    pub mean_oos_r2: f64,
    pub mean_rmse: f64,
    /// Test fold of every subject.
    pub assignment: BTreeMap<String, usize>,
}

/// Subjects shuffled by `seed`, then dealt round-robin into `k` folds.
pub fn assign_folds(subjects: &[String], k: usize, seed: u64) -> BTreeMap<String, usize> {
    let mut order: Vec<&String> = subjects.iter().collect();
    order.sort();
    order.dedup();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.into_iter().enumerate().map(|(i, s)| (s.clone(), i % k)).collect()
}

pub fn kfold_subject_cv(table: &ComparisonTable, spec: &ModelSpec, k: usize, seed: u64) -> Result<CvReport> {
    kfold_subject_cv_frame(&ModelFrame::from_table(table, &spec.outcome)?, spec, k, seed)
}

/// Held-out rows are predicted from fixed effects only, since the random
/// effects of unseen subjects are unknown.
pub fn kfold_subject_cv_frame(frame: &ModelFrame, spec: &ModelSpec, k: usize, seed: u64) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::InvalidInput("k must be at least 2".into()));
    }
    let frame = frame.subset(&complete_rows(frame, spec)?);
    let assignment = assign_folds(&frame.groups, k, seed);
    if assignment.len() < k {
        return Err(Error::InvalidInput(format!("{} subjects for {k} folds", assignment.len())));
    }

    let per_fold = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..frame.len()).partition(|&i| assignment[&frame.groups[i]] == fold);
            if test.is_empty() {
                return Err(Error::Empty("cross-validation fold"));
            }
            let train_design = build_design_frame(&frame.subset(&train), spec)?;
            let model = fit_reml(&train_design)?;
            let test_design = build_prediction_design(&frame.subset(&test), spec)?;
            if test_design.columns != model.columns {
                return Err(Error::InvalidSpec("held-out design columns differ from training".into()));
            }
            let pred = predict_raw(&model, &train_design, &test_design);
            let y = &test_design.y;
            let n = y.len() as f64;
            let ybar = y.mean();
            let sse: f64 = y.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            let sst: f64 = y.iter().map(|a| (a - ybar).powi(2)).sum();
            Ok(CvFold {
                fold,
                oos_r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
                rmse: (sse / n).sqrt(),
                n_test_subjects: test_design.groups.n_groups(),
                n_test_rows: y.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let kf = k as f64;
    Ok(CvReport {
        k,
        seed,
        mean_oos_r2: per_fold.iter().map(|f| f.oos_r2).sum::<f64>() / kf,
        mean_rmse: per_fold.iter().map(|f| f.rmse).sum::<f64>() / kf,
        per_fold,
        assignment,
    })
}

/// Fixed-effects prediction on the raw outcome scale.
fn predict_raw(model: &FittedModel, train: &Design, test: &Design) -> DVector<f64> {
    let p = model.predict(&test.x);
    if train.standardized {
        p.map(|z| train.outcome_mean + train.outcome_sd * z)
    } else {
        p
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    /// Marginal residuals `y - X b`, in design row order.
    pub residuals: Vec<f64>,
    /// (sample quantile, theoretical normal quantile), sorted.
    pub qq: Vec<(f64, f64)>,
    pub shapiro_w: f64,
    pub shapiro_p: f64,
    /// W was computed on a seeded subsample of `n_tested` residuals.
    pub subsampled: bool,
    pub n_tested: usize,
}

pub const SHAPIRO_MAX_N: usize = 5000;

pub fn residual_diagnostics(fit: &FittedModel, design: &Design, seed: u64) -> Result<DiagnosticsReport> {
    if design.columns != fit.columns {
        return Err(Error::InvalidInput("design does not match the fit".into()));
    }
    let resid = &design.y - fit.predict(&design.x);
    let residuals: Vec<f64> = resid.iter().copied().collect();
    let n = residuals.len();
    if n < 3 {
        return Err(Error::InvalidInput("at least three residuals are required".into()));
    }
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, normal_quantile((i as f64 + 1.0 - 0.375) / (n as f64 + 0.25))))
        .collect();
    let (sample, subsampled) = if n > SHAPIRO_MAX_N {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = index::sample(&mut rng, n, SHAPIRO_MAX_N);
        (idx.iter().map(|i| residuals[i]).collect::<Vec<_>>(), true)
    } else {
        (residuals.clone(), false)
    };
    let (w, p) = shapiro_wilk(&sample)?;
    Ok(DiagnosticsReport {
        n,
        n_tested: sample.len(),
        residuals,
        qq,
        shapiro_w: w,
        shapiro_p: p,
        subsampled,
    })
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

/// Shapiro-Wilk W and its p-value by Royston's approximation (3 <= n <= 5000).
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64)> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = x.len();
    if !(3..=SHAPIRO_MAX_N).contains(&n) {
        return Err(Error::InvalidInput(format!("Shapiro-Wilk needs 3..=5000 values, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[n - 1] - s[0];
    if !(range > 0.0) {
        return Err(Error::InvalidInput("zero variance".into()));
    }
    let an = n as f64;
    let half = n / 2;

    let a: Vec<f64> = if n == 3 {
        vec![std::f64::consts::FRAC_1_SQRT_2]
    } else {
        let m: Vec<f64> = (1..=half).map(|i| normal_quantile((i as f64 - 0.375) / (an + 0.25))).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let mut a = vec![0.0; half];
        a[0] = a1;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        for i in first..half {
            a[i] = -m[i] / fac;
        }
        a
    };

    let scaled: Vec<f64> = s.iter().map(|v| (v - s[0]) / range).collect();
    let mean = scaled.iter().sum::<f64>() / an;
    let ss: f64 = scaled.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (scaled[n - 1 - i] - scaled[i])).sum();
    let w = (num * num / ss).min(1.0);

    if n == 3 {
        let p = (6.0 / std::f64::consts::PI) * (w.sqrt().asin() - std::f64::consts::FRAC_PI_3);
        return Ok((w, p.max(0.0)));
    }
    let w1 = (1.0 - w).ln();
    let (y, m, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if w1 >= gamma {
            return Ok((w, 1e-99));
        }
        (-(gamma - w1).ln(), poly(&C3, an), poly(&C4, an).exp())
    } else {
        let ln_n = an.ln();
        (w1, poly(&C5, ln_n), poly(&C6, ln_n).exp())
    };
    Ok((w, normal_sf((y - m) / sd)))
}
