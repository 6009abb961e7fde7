use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use permanence::lmm::apc::compare_apc;
use permanence::lmm::design::{build_design, build_design_frame, Design};
use permanence::lmm::frame::ModelFrame;
use permanence::lmm::inference::{icc, likelihood_ratio_test, marginal_r2, vif};
use permanence::lmm::reml::{fit_ml, fit_reml, gls_beta};
use permanence::lmm::{ApcMode, ModelSpec, RandomStructure};
use permanence::model::{Eye, MatcherProfile, Orientation};
use permanence::pairing::ComparisonTable;
use permanence::synth::{generate_comparisons, Bounded, ScoreDist, SynthConfig, SynthMatcher};
use permanence::Error;

fn matcher(beta: &[(&str, f64)], sigma: [[f64; 2]; 2], sigma2: f64) -> SynthMatcher {
    SynthMatcher {
        profile: MatcherProfile {
            name: "m".into(),
            orientation: Orientation::HigherIsBetter,
            score_min: -1e6,
            score_max: 1e6,
            default_threshold: 0.0,
        },
        beta: beta.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        sigma,
        sigma2,
        impostor: ScoreDist::Normal { mean: 0.0, sd: 1.0 },
    }
}

fn config(n_subjects: usize, m: SynthMatcher, seed: u64) -> SynthConfig {
    SynthConfig {
        n_subjects,
        eyes: vec![Eye::Left],
        images_per_eye_per_session: 2,
        session_schedule: (0..8).map(|i| i * 6).collect(),
        attrition_rate: 0.0,
        matchers: vec![m],
        impostor_probes: 0,
        seed,
        ..Default::default()
    }
}

fn table(cfg: &SynthConfig) -> ComparisonTable {
    generate_comparisons(cfg).unwrap().0
}

fn spec(apc: Option<ApcMode>, terms: &[&str], random: RandomStructure) -> ModelSpec {
    ModelSpec::new("m", apc, terms, random).unwrap()
}

#[test]
fn column_counts_and_dummies() {
    let t = table(&config(30, matcher(&[("intercept", 1.0)], [[1.0, 0.0], [0.0, 0.0]], 1.0), 1));
    let d = build_design(&t, &spec(Some(ApcMode::GalleryAgePlusT), &["Q_gallery"], RandomStructure::InterceptOnly)).unwrap();
    assert_eq!(d.columns, ["(Intercept)", "A_gallery", "T", "Q_gallery"]);

    let d = build_design(&t, &spec(None, &["factor(age_group, 4-5)"], RandomStructure::InterceptOnly)).unwrap();
    assert_eq!(d.columns, ["(Intercept)", "age_group[6-7]", "age_group[8-9]", "age_group[10-12]"]);
}

#[test]
fn interaction_is_elementwise_product() {
    let t = table(&config(25, matcher(&[("intercept", 1.0)], [[1.0, 0.0], [0.0, 0.0]], 1.0), 2));
    let d = build_design(&t, &spec(None, &["A_gallery", "T", "A_gallery:T"], RandomStructure::InterceptOnly)).unwrap();
    let (a, tt, at) = (d.column("A_gallery").unwrap(), d.column("T").unwrap(), d.column("A_gallery:T").unwrap());
    for i in 0..d.n_obs() {
        assert_eq!(d.x[(i, at)], d.x[(i, a)] * d.x[(i, tt)]);
    }
}

#[test]
fn absent_factor_level_and_rank_deficiency_reported() {
    let mut cfg = config(20, matcher(&[("intercept", 1.0)], [[1.0, 0.0], [0.0, 0.0]], 1.0), 3);
    cfg.enrollment_age_min = 6;
    cfg.enrollment_age_max = 7;
    cfg.session_schedule = vec![0, 6];
    let t = table(&cfg);
    let err = build_design(&t, &spec(None, &["factor(age_group, 4-5)"], RandomStructure::InterceptOnly)).unwrap_err();
    assert!(matches!(err, Error::FactorLevelAbsent { .. }), "{err}");

    let t = table(&config(20, matcher(&[("intercept", 1.0)], [[1.0, 0.0], [0.0, 0.0]], 1.0), 3));
    let err = build_design(&t, &spec(None, &["Q_gallery", "Q_probe", "Q_min", "T", "Q_gallery:T"], RandomStructure::InterceptOnly));
    assert!(err.is_ok());
    let frame = ModelFrame::from_table(&t, "m").unwrap();
    let mut frame2 = frame.clone();
    let doubled: Vec<f64> = frame.numeric["Q_gallery"].iter().map(|v| 2.0 * v).collect();
    frame2.set_numeric("R_probe", doubled);
    let err = build_design_frame(&frame2, &spec(None, &["Q_gallery", "R_probe"], RandomStructure::InterceptOnly)).unwrap_err();
    match err {
        Error::RankDeficient { columns } => assert_eq!(columns, ["R_probe"]),
        e => panic!("{e}"),
    }
}

#[test]
fn noiseless_recovery_hits_boundary() {
    let m = matcher(&[("intercept", 5.0), ("Q_gallery", 0.3), ("T", -0.2)], [[0.0, 0.0], [0.0, 0.0]], 1e-12);
    let t = table(&config(40, m, 4));
    let d = build_design(&t, &spec(None, &["Q_gallery", "T"], RandomStructure::InterceptAndSlopeOnT)).unwrap();
    let f = fit_reml(&d).unwrap();
    for (got, want) in f.beta.iter().zip([5.0, 0.3, -0.2]) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
    assert!(f.boundary);
}

#[test]
fn degenerate_generator_refit_exact() {
    let m = matcher(&[("intercept", 2.0), ("DC", 3.0), ("U_probe", -0.05)], [[0.0, 0.0], [0.0, 0.0]], 0.0);
    let t = table(&config(30, m, 5));
    let d = build_design(&t, &spec(None, &["DC", "U_probe"], RandomStructure::InterceptOnly)).unwrap();
    let f = fit_reml(&d).unwrap();
    for (got, want) in f.beta.iter().zip([2.0, 3.0, -0.05]) {
        assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn icc_recovered_and_limits() {
    let m = matcher(&[("intercept", 0.0)], [[0.65, 0.0], [0.0, 0.0]], 0.35);
    let mut cfg = config(2000, m, 6);
    cfg.session_schedule = (0..6).map(|i| i * 6).collect();
    let t = table(&cfg);
    let d = build_design(&t, &spec(None, &[], RandomStructure::InterceptOnly)).unwrap();
    let f = fit_reml(&d).unwrap();
    let v = icc(&f).unwrap();
    assert!((v - 0.65).abs() < 0.02, "ICC {v}");

    let none = matcher(&[("intercept", 0.0)], [[0.0, 0.0], [0.0, 0.0]], 1.0);
    let t = table(&config(60, none, 7));
    let d = build_design(&t, &spec(None, &[], RandomStructure::InterceptOnly)).unwrap();
    let mut f = fit_reml(&d).unwrap();
    f.sigma[(0, 0)] = 0.0;
    assert_eq!(icc(&f).unwrap(), 0.0);
    f.sigma[(0, 0)] = 1.0;
    f.sigma2 = 1e-300;
    assert!(icc(&f).unwrap() > 1.0 - 1e-12);

    let d = build_design(&t, &spec(None, &[], RandomStructure::InterceptAndSlopeOnT)).unwrap();
    assert!(icc(&fit_reml(&d).unwrap()).is_err());
}

#[test]
fn marginal_r2_recovered() {
    // Q_gallery ~ N(50, 10): fixed variance 100 against 33.3 of noise.
    let mut m = matcher(&[("intercept", 0.0), ("Q_gallery", 1.0)], [[20.0, 0.0], [0.0, 0.0]], 13.333);
    m.profile.default_threshold = 0.0;
    let mut cfg = config(300, m, 8);
    cfg.covariates.quality = Bounded::new(50.0, 10.0, 0.0, 100.0);
    let t = table(&cfg);
    let d = build_design(&t, &spec(None, &["Q_gallery"], RandomStructure::InterceptOnly)).unwrap();
    let f = fit_reml(&d).unwrap();
    let r2 = marginal_r2(&f, &d.x).unwrap();
    assert!((r2 - 0.75).abs() < 0.05, "R2 {r2}");

    let mut zero = f.clone();
    zero.beta = vec![0.0; zero.beta.len()];
    assert_eq!(marginal_r2(&zero, &d.x).unwrap(), 0.0);
}

#[test]
fn gls_identity_against_dense_weighted_least_squares() {
    let sigma = [[4.0, 0.05], [0.05, 0.01]];
    let m = matcher(&[("intercept", 10.0), ("Q_probe", 0.2), ("T", -0.1)], sigma, 2.0);
    let t = table(&config(40, m, 9));
    let d = build_design(&t, &spec(None, &["Q_probe", "T"], RandomStructure::InterceptAndSlopeOnT)).unwrap();
    let s = DMatrix::from_row_slice(2, 2, &[sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]]);
    let got = gls_beta(&d, &s, 2.0).unwrap();

    // sum_g X_g' V_g^-1 X_g with V_g = Z_g Sigma Z_g' + sigma2 I.
    let p = d.x.ncols();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut c = DVector::<f64>::zeros(p);
    for rows in d.groups.members() {
        let n = rows.len();
        let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { d.slope.as_ref().unwrap()[rows[i]] });
        let v = &z * &s * z.transpose() + DMatrix::<f64>::identity(n, n) * 2.0;
        let vi = v.try_inverse().unwrap();
        let xg = DMatrix::from_fn(n, p, |i, j| d.x[(rows[i], j)]);
        let yg = DVector::from_fn(n, |i, _| d.y[rows[i]]);
        a += xg.transpose() * &vi * &xg;
        c += xg.transpose() * &vi * yg;
    }
    let want = a.lu().solve(&c).unwrap();
    for j in 0..p {
        assert!((got[j] - want[j]).abs() < 1e-8 * want[j].abs().max(1.0), "{} vs {}", got[j], want[j]);
    }
}

fn shuffled(d: &Design, seed: u64) -> Design {
    let n = d.n_obs();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut s = seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        perm.swap(i, (s >> 33) as usize % (i + 1));
    }
    let labels: Vec<String> = perm.iter().map(|&i| d.groups.labels[d.groups.of_row[i]].clone()).collect();
    Design::new(
        DVector::from_fn(n, |i, _| d.y[perm[i]]),
        DMatrix::from_fn(n, d.x.ncols(), |i, j| d.x[(perm[i], j)]),
        d.columns.clone(),
        d.slope.as_ref().map(|t| DVector::from_fn(n, |i, _| t[perm[i]])),
        &labels,
    )
    .unwrap()
}

#[test]
fn row_order_invariance() {
    let m = matcher(&[("intercept", 1.0), ("T", 0.05)], [[1.0, 0.01], [0.01, 0.002]], 0.5);
    let t = table(&config(30, m, 10));
    let d = build_design(&t, &spec(None, &["T"], RandomStructure::InterceptAndSlopeOnT)).unwrap();
    let base = fit_reml(&d).unwrap();
    let other = fit_reml(&shuffled(&d, 77)).unwrap();
    for j in 0..base.beta.len() {
        assert!((base.beta[j] - other.beta[j]).abs() < 1e-10 * base.beta[j].abs().max(1.0));
        assert!((base.se[j] - other.se[j]).abs() < 1e-10 * base.se[j].abs().max(1.0));
    }
    assert!((base.sigma2 - other.sigma2).abs() < 1e-10 * base.sigma2);
}

#[test]
fn standardized_outcome_keeps_inference() {
    let m = matcher(&[("intercept", 30.0), ("Q_gallery", 0.4), ("T", -0.3)], [[9.0, 0.1], [0.1, 0.02]], 4.0);
    let t = table(&config(40, m, 11));
    let raw = spec(None, &["Q_gallery", "T"], RandomStructure::InterceptAndSlopeOnT);
    let mut zs = raw.clone();
    zs.standardize = true;
    let (dr, dz) = (build_design(&t, &raw).unwrap(), build_design(&t, &zs).unwrap());
    let (fr, fz) = (fit_reml(&dr).unwrap(), fit_reml(&dz).unwrap());
    let sd = dr.outcome_sd;
    for j in 1..fr.beta.len() {
        assert!((fz.beta[j] - fr.beta[j] / sd).abs() < 1e-8 * (fr.beta[j] / sd).abs().max(1e-3));
    }
    assert!((fz.beta[0] - (fr.beta[0] - dr.outcome_mean) / sd).abs() < 1e-8);
    // Centering moves the intercept, so only the slopes keep their z.
    for j in 1..fr.beta.len() {
        assert!((fz.z_stats[j] - fr.z_stats[j]).abs() < 1e-8 * fr.z_stats[j].abs().max(1.0), "{j}: {} vs {}", fz.z_stats[j], fr.z_stats[j]);
        assert!((fz.p_values[j] - fr.p_values[j]).abs() < 1e-8);
    }
}

#[test]
fn age_group_offsets_recovered() {
    let offsets = [("age_group[6-7]", -15.0), ("age_group[8-9]", -25.0), ("age_group[10-12]", -40.0)];
    let mut beta = vec![("intercept", 100.0)];
    beta.extend(offsets);
    let m = matcher(&beta, [[100.0, 0.0], [0.0, 0.0]], 50.0);
    let t = table(&config(200, m, 12));
    let d = build_design(&t, &spec(None, &["factor(age_group, 4-5)"], RandomStructure::InterceptOnly)).unwrap();
    let f = fit_reml(&d).unwrap();
    for (name, truth) in offsets {
        let (b, se, _) = f.coef(name).unwrap();
        assert!((b - truth).abs() < 3.0 * se, "{name}: {b} vs {truth} (se {se})");
    }
}

#[test]
fn lrt_rules() {
    let m = matcher(&[("intercept", 1.0), ("T", 0.05)], [[1.0, 0.0], [0.0, 0.0]], 1.0);
    let t = table(&config(40, m, 13));
    let full = build_design(&t, &spec(None, &["T"], RandomStructure::InterceptOnly)).unwrap();
    let reduced = build_design(&t, &spec(None, &[], RandomStructure::InterceptOnly)).unwrap();

    let a = fit_ml(&full).unwrap();
    let same = likelihood_ratio_test(&a, &a).unwrap();
    assert_eq!((same.chi2, same.df, same.p_value), (0.0, 0, 1.0));

    let r = likelihood_ratio_test(&fit_ml(&reduced).unwrap(), &a).unwrap();
    assert_eq!(r.df, 1);
    assert!(r.chi2 >= 0.0 && r.p_value < 0.001);

    let reml = likelihood_ratio_test(&fit_reml(&reduced).unwrap(), &fit_reml(&full).unwrap());
    assert!(matches!(reml, Err(Error::InvalidSpec(_))));
    assert!(matches!(likelihood_ratio_test(&a, &fit_ml(&reduced).unwrap()), Err(Error::NotNested(_))));

    let other = table(&config(41, matcher(&[("intercept", 1.0)], [[1.0, 0.0], [0.0, 0.0]], 1.0), 13));
    let b = fit_ml(&build_design(&other, &spec(None, &["T"], RandomStructure::InterceptOnly)).unwrap()).unwrap();
    assert!(matches!(likelihood_ratio_test(&a, &b), Err(Error::InvalidInput(_))));
}

fn apc_config(beta: &[(&str, f64)], seed: u64) -> SynthConfig {
    let mut cfg = config(250, matcher(beta, [[25.0, 0.0], [0.0, 0.0004]], 25.0), seed);
    cfg.session_schedule = (0..=96).step_by(6).collect();
    cfg.images_per_eye_per_session = 1;
    cfg
}

#[test]
fn apc_pure_cohort_and_pure_aging() {
    let base = spec(None, &["Q_gallery"], RandomStructure::InterceptAndSlopeOnT);
    let cohort = table(&apc_config(&[("intercept", 50.0), ("A_gallery", 3.0), ("Q_gallery", 0.2)], 14));
    let rep = compare_apc(&cohort, &base).unwrap();
    let gt = rep.row(ApcMode::GalleryAgePlusT).unwrap();
    assert!(gt.temporal.beta.abs() < 2.0 * gt.temporal.se, "{:?}", gt.temporal);
    for r in &rep.rows {
        let sig = r.age.p_value < 0.001 || r.temporal.p_value < 0.001;
        assert!(sig, "{:?}", r.mode);
    }
    assert!(gt.age.p_value < 0.001);

    let aging = table(&apc_config(&[("intercept", 50.0), ("T", 0.3), ("Q_gallery", 0.2)], 15));
    let rep = compare_apc(&aging, &base).unwrap();
    for r in &rep.rows {
        assert!(r.temporal.p_value < 0.001, "{:?}: {:?}", r.mode, r.temporal);
    }
    let n = rep.rows[0].n_obs;
    let sum = &rep.rows[0].outcome_checksum;
    assert!(rep.rows.iter().all(|r| r.n_obs == n && &r.outcome_checksum == sum));
    assert!(rep.rows.iter().any(|r| r.delta_aic == 0.0));
    assert_eq!(rep.overidentified_vif.len(), 4);
}

#[test]
fn vif_of_integer_ages() {
    let t = table(&apc_config(&[("intercept", 1.0)], 16));
    let d = build_design(&t, &spec(None, &["A_gallery", "A_probe", "T"], RandomStructure::InterceptOnly)).unwrap();
    let x = d.x.columns(1, 3).into_owned();
    let v = vif(&x).unwrap();
    assert!(v.iter().all(|v| v.is_finite() && *v > 10.0), "{v:?}");
}
