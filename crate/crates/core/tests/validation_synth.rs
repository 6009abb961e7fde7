use std::collections::BTreeSet;

use permanence::lmm::design::build_design;
use permanence::lmm::reml::fit_reml;
use permanence::lmm::{ModelSpec, RandomStructure};
use permanence::metrics::det_scores;
use permanence::model::{validate_dataset, Eye, MatcherProfile, Orientation};
use permanence::stats::normal_cdf;
use permanence::synth::{
    generate_comparisons, generate_longitudinal, generate_score_populations, ScoreDist, SynthConfig, SynthMatcher,
};
use permanence::validation::{kfold_subject_cv, residual_diagnostics, shapiro_wilk};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

fn matcher(beta: &[(&str, f64)], sigma: [[f64; 2]; 2], sigma2: f64) -> SynthMatcher {
    SynthMatcher {
        profile: MatcherProfile::new("m", Orientation::HigherIsBetter, -1e6, 1e6, 0.0).unwrap(),
        beta: beta.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        sigma,
        sigma2,
        impostor: ScoreDist::Normal { mean: 0.0, sd: 1.0 },
    }
}

fn config(n: usize, m: SynthMatcher, seed: u64) -> SynthConfig {
    SynthConfig {
        n_subjects: n,
        eyes: vec![Eye::Left],
        images_per_eye_per_session: 2,
        session_schedule: (0..6).map(|i| i * 6).collect(),
        attrition_rate: 0.0,
        matchers: vec![m],
        impostor_probes: 0,
        seed,
        ..Default::default()
    }
}

#[test]
fn cv_folds_partition_subjects_and_rmse_matches() {
    let m = matcher(&[("intercept", 10.0), ("Q_gallery", 0.5)], [[4.0, 0.0], [0.0, 0.0]], 2.0);
    let (table, _) = generate_comparisons(&config(40, m, 1)).unwrap();
    let spec = ModelSpec::new("m", None, &["Q_gallery"], RandomStructure::InterceptOnly).unwrap();
    let a = kfold_subject_cv(&table, &spec, 5, 3).unwrap();
    let b = kfold_subject_cv(&table, &spec, 5, 3).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.assignment.len(), 40);
    assert_eq!(a.per_fold.iter().map(|f| f.n_test_subjects).sum::<usize>(), 40);
    let subjects: BTreeSet<&str> = table.records.iter().map(|r| r.gallery_subject.as_str()).collect();
    assert!(a.assignment.keys().map(String::as_str).eq(subjects.iter().copied()));

    // Refit one fold by hand and compare the held-out error.
    let fold = 2;
    let frame = permanence::lmm::ModelFrame::from_table(&table, "m").unwrap();
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..frame.len()).partition(|&i| a.assignment[&frame.groups[i]] == fold);
    let model = fit_reml(&permanence::lmm::build_design_frame(&frame.subset(&train), &spec).unwrap()).unwrap();
    let d = permanence::lmm::build_design_frame(&frame.subset(&test), &spec).unwrap();
    let pred = model.predict(&d.x);
    let mse = d.y.iter().zip(pred.iter()).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / d.y.len() as f64;
    assert!((a.per_fold[fold].rmse.powi(2) - mse).abs() < 1e-12 * mse.max(1.0));
}

#[test]
fn cv_noiseless_fixture_predicts_perfectly() {
    let m = matcher(&[("intercept", 3.0), ("U_probe", 0.2), ("T", 0.1)], [[0.0, 0.0], [0.0, 0.0]], 1e-10);
    let (table, _) = generate_comparisons(&config(30, m, 2)).unwrap();
    let spec = ModelSpec::new("m", None, &["U_probe", "T"], RandomStructure::InterceptOnly).unwrap();
    let cv = kfold_subject_cv(&table, &spec, 5, 1).unwrap();
    assert!(cv.mean_oos_r2 > 1.0 - 1e-6, "{}", cv.mean_oos_r2);
    assert!(kfold_subject_cv(&table, &spec, 1, 1).is_err());
    assert!(kfold_subject_cv(&table, &spec, 31, 1).is_err());
}

#[test]
fn shapiro_under_normal_null_and_heavy_tails() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let heavy = StudentT::new(2.0).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        let (w, _) = shapiro_wilk(&x).unwrap();
        assert!((0.985..=1.0).contains(&w), "seed {seed}: W {w}");
        let h: Vec<f64> = (0..2000).map(|_| heavy.sample(&mut rng)).collect();
        assert!(shapiro_wilk(&h).unwrap().0 < w);
    }
}

#[test]
fn diagnostics_subsample_large_fits() {
    let m = matcher(&[("intercept", 0.0)], [[1.0, 0.0], [0.0, 0.0]], 1.0);
    let mut cfg = config(300, m, 4);
    cfg.session_schedule = (0..8).map(|i| i * 6).collect();
    let (table, _) = generate_comparisons(&cfg).unwrap();
    let spec = ModelSpec::new("m", None, &[], RandomStructure::InterceptOnly).unwrap();
    let d = build_design(&table, &spec).unwrap();
    assert!(d.n_obs() > 5000);
    let f = fit_reml(&d).unwrap();
    let r = residual_diagnostics(&f, &d, 11).unwrap();
    assert!(r.subsampled && r.n_tested == 5000 && r.n == d.n_obs());
    assert_eq!(r.qq.len(), r.n);
    assert!(r.qq.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    let again = residual_diagnostics(&f, &d, 11).unwrap();
    assert_eq!(r.shapiro_w, again.shapiro_w);
}

#[test]
fn synth_default_shape_pair_count() {
    let cfg = SynthConfig { impostor_probes: 0, ..Default::default() };
    let (captures, _, truth) = generate_longitudinal(&cfg).unwrap();
    assert!(validate_dataset(&captures).is_clean());
    let rel = (truth.n_genuine as f64 - 45_927.0).abs() / 45_927.0;
    assert!(rel < 0.2, "{} genuine pairs", truth.n_genuine);
}

#[test]
fn synth_random_effect_covariance() {
    let sigma = [[6889.0, 12.45], [12.45, 0.09]];
    let m = matcher(&[("intercept", 0.0)], sigma, 1.0);
    let cfg = SynthConfig {
        n_subjects: 40_000,
        session_schedule: vec![0],
        images_per_eye_per_session: 1,
        ..config(0, m, 5)
    };
    let (_, _, truth) = generate_longitudinal(&cfg).unwrap();
    let u: Vec<[f64; 2]> = truth.subjects.iter().map(|s| s.effects[0]).collect();
    let n = u.len() as f64;
    let m0 = u.iter().map(|v| v[0]).sum::<f64>() / n;
    let m1 = u.iter().map(|v| v[1]).sum::<f64>() / n;
    let cov = |a: usize, b: usize, ma: f64, mb: f64| u.iter().map(|v| (v[a] - ma) * (v[b] - mb)).sum::<f64>() / (n - 1.0);
    let got = [[cov(0, 0, m0, m0), cov(0, 1, m0, m1)], [cov(1, 0, m1, m0), cov(1, 1, m1, m1)]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((got[i][j] - sigma[i][j]).abs() < 0.05 * sigma[i][j].abs(), "{i}{j}: {}", got[i][j]);
        }
    }
}

#[test]
fn score_population_oracles() {
    let same = ScoreDist::Normal { mean: 0.0, sd: 1.0 };
    let profile = MatcherProfile::new("m", Orientation::HigherIsBetter, -100.0, 100.0, 0.0).unwrap();
    let (g, i) = generate_score_populations(20_000, same, same, 1).unwrap();
    assert!((det_scores(&g, &i, &profile).unwrap().eer - 0.5).abs() < 0.02);

    let (g, i) = generate_score_populations(20_000, ScoreDist::Normal { mean: 1.0, sd: 1.0 }, same, 2).unwrap();
    assert!((det_scores(&g, &i, &profile).unwrap().eer - normal_cdf(-0.5)).abs() < 0.01);

    let (g, i) = generate_score_populations(
        5_000,
        ScoreDist::Uniform { min: 2.0, max: 3.0 },
        ScoreDist::Uniform { min: 0.0, max: 1.0 },
        3,
    )
    .unwrap();
    let det = det_scores(&g, &i, &profile).unwrap();
    assert_eq!(det.eer, 0.0);
    assert_eq!(det.auc, 1.0);
}
