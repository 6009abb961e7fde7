//! REML / ML estimation of a Gaussian linear mixed model with a random
//! intercept and an optional random slope on T per subject.
//!
//! With `b_g ~ N(0, sigma2 * Psi)` and `e ~ N(0, sigma2 I)`, the marginal
//! covariance of group g is `sigma2 * H_g`, `H_g = I + Z_g Psi Z_g'`. `Psi` is
//! parameterized by its lower Cholesky factor with log diagonal, on a slope
//! covariate rescaled to unit RMS. Per-group cross products and Woodbury's
//! identity reduce every criterion evaluation to q x q factorizations, with
//! `sigma2` and the fixed effects profiled out.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::{Design, RandomStructure};
use super::optim::{minimize, OptimOptions};
use crate::error::{Error, Result};
use crate::stats::{mean, two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Reml,
    Ml,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub method: Method,
    pub max_iter: usize,
    /// Starting variance parameters (log-Cholesky, scaled slope).
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            method: Method::Reml,
            max_iter: 500,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FittedModel {
    pub method: Method,
    pub random: RandomStructure,
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub z_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    #[serde(skip)]
    pub cov_beta: DMatrix<f64>,
    /// Random-effects covariance in outcome units (slope per month).
    #[serde(skip)]
    pub sigma: DMatrix<f64>,
    pub sigma2: f64,
    /// Restricted (REML) or full (ML) log-likelihood, per `method`.
    pub loglik: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    /// Fixed effects + variance parameters + residual variance.
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    /// A random-effects variance (or the slope direction) collapsed to zero.
    pub boundary: bool,
    pub gradient_norm: f64,
    /// No better criterion value among 20 random perturbations of the optimum.
    pub local_check_passed: bool,
    pub theta: Vec<f64>,
    /// Mean of the slope covariate over the fitted rows.
    pub slope_mean: Option<f64>,
    pub rows_fingerprint: String,
    pub n_dropped: usize,
    pub standardized: bool,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
}

impl FittedModel {
    pub fn coef(&self, name: &str) -> Option<(f64, f64, f64)> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some((self.beta[j], self.se[j], self.p_values[j]))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * DVector::from_column_slice(&self.beta)
    }

    /// Correlation of random intercept and slope, when both are present.
    pub fn random_correlation(&self) -> Option<f64> {
        if self.sigma.nrows() < 2 {
            return None;
        }
        let d = (self.sigma[(0, 0)] * self.sigma[(1, 1)]).sqrt();
        (d > 0.0).then(|| self.sigma[(0, 1)] / d)
    }
}

struct GroupStats {
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
}

pub(crate) struct Problem {
    n: usize,
    p: usize,
    q: usize,
    x_scale: DVector<f64>,
    slope_scale: f64,
    beta_ols: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    groups: Vec<GroupStats>,
}

struct Eval {
    f: f64,
    r: f64,
    delta: DVector<f64>,
    a_chol: Cholesky<f64, Dyn>,
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x * x;
        n += 1;
    }
    let r = (s / n.max(1) as f64).sqrt();
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

impl Problem {
    pub(crate) fn new(design: &Design) -> Result<Problem> {
        let n = design.n_obs();
        let p = design.x.ncols();
        if n <= p {
            return Err(Error::InvalidInput(format!("{n} observations for {p} fixed effects")));
        }
        if design.groups.n_groups() < 2 {
            return Err(Error::InvalidInput("at least two subjects are required".into()));
        }
        if design.y.iter().all(|v| *v == design.y[0]) {
            return Err(Error::ConstantOutcome);
        }
        if design.y.iter().chain(design.x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in design".into()));
        }

        let x_scale = DVector::from_iterator(p, (0..p).map(|j| rms(design.x.column(j).iter().copied())));
        let mut xs = design.x.clone();
        for j in 0..p {
            xs.column_mut(j).unscale_mut(x_scale[j]);
        }

        let qr = xs.clone().qr();
        let r = qr.r();
        let rmax = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * rmax) {
            let cols = super::design::collinear_columns(&design.x);
            return Err(Error::RankDeficient {
                columns: cols.into_iter().map(|j| design.columns[j].clone()).collect(),
            });
        }
        let qty = qr.q().transpose() * &design.y;
        let beta_ols = r
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Numerical("OLS solve failed".into()))?;
        let yres = &design.y - &xs * &beta_ols;

        let q = if design.slope.is_some() { 2 } else { 1 };
        let slope_scale = design.slope.as_ref().map_or(1.0, |t| rms(t.iter().copied()));
        let mut groups = Vec::with_capacity(design.groups.n_groups());
        for rows in design.groups.members() {
            let mut ztz = DMatrix::zeros(q, q);
            let mut ztx = DMatrix::zeros(q, p);
            let mut zty = DVector::zeros(q);
            for &i in &rows {
                let z1 = design.slope.as_ref().map(|t| t[i] / slope_scale);
                let zrow: [f64; 2] = [1.0, z1.unwrap_or(0.0)];
                for a in 0..q {
                    for b in 0..q {
                        ztz[(a, b)] += zrow[a] * zrow[b];
                    }
                    for j in 0..p {
                        ztx[(a, j)] += zrow[a] * xs[(i, j)];
                    }
                    zty[a] += zrow[a] * yres[i];
                }
            }
            groups.push(GroupStats { ztz, ztx, zty });
        }

        Ok(Problem {
            n,
            p,
            q,
            xtx: xs.transpose() * &xs,
            xty: xs.transpose() * &yres,
            yty: yres.dot(&yres),
            x_scale,
            slope_scale,
            beta_ols,
            groups,
        })
    }

    pub(crate) fn n_theta(&self) -> usize {
        self.q * (self.q + 1) / 2
    }

    fn lambda(&self, theta: &[f64]) -> DMatrix<f64> {
        let e = |t: f64| t.clamp(-25.0, 25.0).exp();
        if self.q == 1 {
            DMatrix::from_element(1, 1, e(theta[0]))
        } else {
            DMatrix::from_row_slice(2, 2, &[e(theta[0]), 0.0, theta[1], e(theta[2])])
        }
    }

    /// Log-Cholesky parameters of a relative covariance `Psi` in scaled units.
    fn theta_of(&self, psi_scaled: &DMatrix<f64>) -> Option<Vec<f64>> {
        let l = psi_scaled.clone().cholesky()?.l();
        Some(if self.q == 1 {
            vec![l[(0, 0)].ln()]
        } else {
            vec![l[(0, 0)].ln(), l[(1, 0)], l[(1, 1)].ln()]
        })
    }

    fn eval(&self, lambda: &DMatrix<f64>, method: Method) -> Option<Eval> {
        let q = self.q;
        let mut a = self.xtx.clone();
        let mut c = self.xty.clone();
        let mut s = self.yty;
        let mut logdet_m = 0.0;
        let lt = lambda.transpose();
        for g in &self.groups {
            let m = DMatrix::identity(q, q) + &lt * &g.ztz * lambda;
            let lm = m.cholesky()?.l();
            logdet_m += 2.0 * lm.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let vx = lm.solve_lower_triangular(&(&lt * &g.ztx))?;
            let vy = lm.solve_lower_triangular(&(&lt * &g.zty))?;
            a -= vx.transpose() * &vx;
            c -= vx.transpose() * &vy;
            s -= vy.dot(&vy);
        }
        let a_chol = a.cholesky()?;
        let delta = a_chol.solve(&c);
        let r = (s - c.dot(&delta)).max(f64::MIN_POSITIVE);
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = match method {
            Method::Reml => {
                let dof = (self.n - self.p) as f64;
                let logdet_a = 2.0 * a_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
                    + 2.0 * self.x_scale.iter().map(|d| d.ln()).sum::<f64>();
                dof * (1.0 + (two_pi * r / dof).ln()) + logdet_m + logdet_a
            }
            Method::Ml => {
                let n = self.n as f64;
                n * (1.0 + (two_pi * r / n).ln()) + logdet_m
            }
        };
        f.is_finite().then_some(Eval { f, r, delta, a_chol })
    }

    /// Minus twice the (restricted) log-likelihood; +inf where undefined.
    pub(crate) fn criterion(&self, theta: &[f64], method: Method) -> f64 {
        self.eval(&self.lambda(theta), method).map_or(f64::INFINITY, |e| e.f)
    }

    fn default_start(&self) -> Vec<f64> {
        vec![0.0; self.n_theta()]
    }
}

/// Minus twice the criterion of `method` at variance parameters `theta`.
pub fn criterion(design: &Design, method: Method, theta: &[f64]) -> Result<f64> {
    let prob = Problem::new(design)?;
    if theta.len() != prob.n_theta() {
        return Err(Error::InvalidInput(format!("expected {} variance parameters", prob.n_theta())));
    }
    Ok(prob.criterion(theta, method))
}

/// Generalized least-squares fixed effects for a given random-effects
/// covariance `sigma` (outcome units) and residual variance `sigma2`.
pub fn gls_beta(design: &Design, sigma: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let prob = Problem::new(design)?;
    if sigma.nrows() != prob.q || !(sigma2 > 0.0) {
        return Err(Error::InvalidInput("covariance does not match the design".into()));
    }
    let mut psi = sigma / sigma2;
    if prob.q == 2 {
        psi[(0, 1)] *= prob.slope_scale;
        psi[(1, 0)] *= prob.slope_scale;
        psi[(1, 1)] *= prob.slope_scale * prob.slope_scale;
    }
    let lambda = psi
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?
        .l();
    let e = prob
        .eval(&lambda, Method::Reml)
        .ok_or_else(|| Error::Numerical("criterion evaluation failed".into()))?;
    Ok((&prob.beta_ols + &e.delta).component_div(&prob.x_scale))
}

pub fn fit_reml(design: &Design) -> Result<FittedModel> {
    fit(design, &FitOptions::default())
}

pub fn fit_ml(design: &Design) -> Result<FittedModel> {
    fit(
        design,
        &FitOptions {
            method: Method::Ml,
            ..Default::default()
        },
    )
}

pub fn fit(design: &Design, opts: &FitOptions) -> Result<FittedModel> {
    let prob = Problem::new(design)?;
    let method = opts.method;
    let objective = |t: &[f64]| prob.criterion(t, method);
    let oopts = OptimOptions {
        max_iter: opts.max_iter,
        f_tol: 1e-9 * prob.n as f64,
        ..Default::default()
    };
    let x0 = match &opts.start {
        Some(s) if s.len() == prob.n_theta() => s.clone(),
        Some(_) => return Err(Error::InvalidInput("start has the wrong length".into())),
        None => prob.default_start(),
    };
    if !objective(&x0).is_finite() {
        return Err(Error::Numerical("criterion undefined at the starting point".into()));
    }
    let mut res = minimize(&objective, &x0, &oopts);
    let mut iterations = res.iterations;
    let mut converged = res.converged;

    let mut rng = ChaCha8Rng::seed_from_u64(0x10ca_1c4e);
    let mut local_ok = false;
    for _round in 0..3 {
        let tol = 1e-9 * res.f.abs().max(1.0);
        let better = (0..20)
            .map(|_| {
                let t: Vec<f64> = res.x.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
                let f = objective(&t);
                (t, f)
            })
            .filter(|(_, f)| *f < res.f - tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match better {
            None => {
                local_ok = true;
                break;
            }
            Some((t, _)) => {
                res = minimize(&objective, &t, &oopts);
                iterations += res.iterations;
                converged = res.converged;
            }
        }
    }

    let lambda = prob.lambda(&res.x);
    let e = prob
        .eval(&lambda, method)
        .ok_or_else(|| Error::Numerical("criterion evaluation failed at the optimum".into()))?;
    let (n, p, q) = (prob.n, prob.p, prob.q);
    let sigma2 = match method {
        Method::Reml => e.r / (n - p) as f64,
        Method::Ml => e.r / n as f64,
    };
    let beta_s = &prob.beta_ols + &e.delta;
    let beta = beta_s.component_div(&prob.x_scale);
    let ainv = e.a_chol.inverse();
    let mut cov_beta = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in 0..p {
            cov_beta[(j, k)] = sigma2 * ainv[(j, k)] / (prob.x_scale[j] * prob.x_scale[k]);
        }
    }
    let se: Vec<f64> = (0..p).map(|j| cov_beta[(j, j)].sqrt()).collect();
    let z_stats: Vec<f64> = (0..p).map(|j| beta[j] / se[j]).collect();
    let p_values = z_stats.iter().map(|&z| two_sided_p(z)).collect();

    let psi = &lambda * lambda.transpose();
    let min_eig = psi.clone().symmetric_eigenvalues().min();
    let mut sigma = psi * sigma2;
    if q == 2 {
        let s = prob.slope_scale;
        sigma[(0, 1)] /= s;
        sigma[(1, 0)] /= s;
        sigma[(1, 1)] /= s * s;
    }

    let loglik = -e.f / 2.0;
    let n_params = p + prob.n_theta() + 1;
    let mut keys: Vec<&str> = design.row_keys.iter().map(String::as_str).collect();
    keys.sort_unstable();
    let rows_fingerprint = super::sha256_hex(keys.join("\n").as_bytes());

    Ok(FittedModel {
        method,
        random: design.random(),
        columns: design.columns.clone(),
        beta: beta.iter().copied().collect(),
        se,
        z_stats,
        p_values,
        cov_beta,
        sigma,
        sigma2,
        loglik,
        aic: 2.0 * n_params as f64 - 2.0 * loglik,
        n_obs: n,
        n_subjects: design.groups.n_groups(),
        n_params,
        converged,
        iterations,
        boundary: min_eig < 1e-5,
        gradient_norm: res.grad_norm,
        local_check_passed: local_ok,
        theta: res.x,
        slope_mean: design.slope.as_ref().map(|t| mean(t.as_slice())),
        rows_fingerprint,
        n_dropped: design.n_dropped,
        standardized: design.standardized,
        outcome_mean: design.outcome_mean,
        outcome_sd: design.outcome_sd,
    })
}

impl Problem {
    /// Variance parameters corresponding to `sigma`/`sigma2` in outcome units.
    #[allow(dead_code)]
    pub(crate) fn theta_for(&self, sigma: &DMatrix<f64>, sigma2: f64) -> Option<Vec<f64>> {
        let mut psi = sigma / sigma2;
        if self.q == 2 {
            psi[(0, 1)] *= self.slope_scale;
            psi[(1, 0)] *= self.slope_scale;
            psi[(1, 1)] *= self.slope_scale * self.slope_scale;
        }
        self.theta_of(&psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n_groups: usize, per: usize) -> Vec<String> {
        (0..n_groups * per).map(|i| format!("g{:03}", i / per)).collect()
    }

    /// Deterministic pseudo-noise, independent of the fitting code.
    fn noise(i: usize, salt: f64) -> f64 {
        ((i as f64 * 12.9898 + salt).sin() * 43_758.545_3).fract() - 0.5
    }

    #[test]
    fn balanced_intercept_matches_anova() {
        let (a, m) = (12, 6);
        let y: Vec<f64> = (0..a * m).map(|i| 3.0 * noise(i / m, 1.0) + noise(i, 7.0)).collect();
        let design = Design::new(
            DVector::from_vec(y.clone()),
            DMatrix::from_element(a * m, 1, 1.0),
            vec!["(Intercept)".into()],
            None,
            &labels(a, m),
        )
        .unwrap();
        let fit = fit_reml(&design).unwrap();
        let grand = y.iter().sum::<f64>() / y.len() as f64;
        let means: Vec<f64> = (0..a).map(|g| y[g * m..(g + 1) * m].iter().sum::<f64>() / m as f64).collect();
        let ssb: f64 = means.iter().map(|mu| m as f64 * (mu - grand).powi(2)).sum();
        let ssw: f64 = (0..a * m).map(|i| (y[i] - means[i / m]).powi(2)).sum();
        let msb = ssb / (a - 1) as f64;
        let msw = ssw / (a * (m - 1)) as f64;
        let su = (msb - msw) / m as f64;
        assert!(su > 0.0);
        assert!((fit.sigma2 - msw).abs() / msw < 1e-6, "{} vs {msw}", fit.sigma2);
        assert!((fit.sigma[(0, 0)] - su).abs() / su < 1e-6, "{} vs {su}", fit.sigma[(0, 0)]);
        assert!(fit.converged && fit.local_check_passed);
        assert!((fit.aic - (2.0 * 3.0 - 2.0 * fit.loglik)).abs() < 1e-12);
    }

    /// Slope design with uneven group sizes.
    fn slope_design() -> Design {
        let sizes = [3usize, 5, 4, 6, 2, 5, 4];
        let (mut y, mut x, mut t, mut lab) = (vec![], vec![], vec![], vec![]);
        let mut i = 0;
        for (g, &m) in sizes.iter().enumerate() {
            let u0 = 2.0 * noise(g, 11.0);
            let u1 = 0.05 * noise(g, 13.0);
            for k in 0..m {
                let tt = 6.0 * (k + 1) as f64 + (g % 3) as f64;
                let q = 50.0 + 20.0 * noise(i, 17.0);
                y.push(1.0 + 0.02 * q - 0.01 * tt + u0 + u1 * tt + noise(i, 19.0));
                x.extend_from_slice(&[1.0, q, tt]);
                t.push(tt);
                lab.push(format!("s{g}"));
                i += 1;
            }
        }
        let n = y.len();
        Design::new(
            DVector::from_vec(y),
            DMatrix::from_row_slice(n, 3, &x),
            vec!["(Intercept)".into(), "Q".into(), "T".into()],
            Some(DVector::from_vec(t)),
            &lab,
        )
        .unwrap()
    }

    /// Criterion from the full n x n marginal covariance.
    fn dense_criterion(d: &Design, psi: &DMatrix<f64>, method: Method) -> (f64, DVector<f64>) {
        let n = d.n_obs();
        let p = d.x.ncols();
        let t = d.slope.as_ref().unwrap();
        let mut v = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                if d.groups.of_row[i] == d.groups.of_row[j] {
                    let zi = [1.0, t[i]];
                    let zj = [1.0, t[j]];
                    for a in 0..2 {
                        for b in 0..2 {
                            v[(i, j)] += zi[a] * psi[(a, b)] * zj[b];
                        }
                    }
                }
            }
        }
        let vinv = v.clone().try_inverse().unwrap();
        let xtv = d.x.transpose() * &vinv;
        let a = &xtv * &d.x;
        let beta = a.clone().try_inverse().unwrap() * (&xtv * &d.y);
        let res = &d.y - &d.x * &beta;
        let r = (res.transpose() * &vinv * &res)[(0, 0)];
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = match method {
            Method::Reml => {
                let dof = (n - p) as f64;
                dof * (1.0 + (two_pi * r / dof).ln()) + v.determinant().ln() + a.determinant().ln()
            }
            Method::Ml => n as f64 * (1.0 + (two_pi * r / n as f64).ln()) + v.determinant().ln(),
        };
        (f, beta)
    }

    #[test]
    fn woodbury_criterion_matches_dense() {
        let d = slope_design();
        let t = d.slope.as_ref().unwrap();
        let s = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        for theta in [[0.3f64, -0.2, -0.5], [-1.0, 0.4, 0.2], [0.0, 0.0, 0.0]] {
            let l = DMatrix::from_row_slice(2, 2, &[theta[0].exp(), 0.0, theta[1], theta[2].exp()]);
            let mut psi = &l * l.transpose();
            psi[(0, 1)] /= s;
            psi[(1, 0)] /= s;
            psi[(1, 1)] /= s * s;
            for method in [Method::Reml, Method::Ml] {
                let (want, beta) = dense_criterion(&d, &psi, method);
                let got = criterion(&d, method, &theta).unwrap();
                assert!((got - want).abs() < 1e-8 * want.abs(), "{method:?} {got} vs {want}");
                let gb = gls_beta(&d, &(&psi * 1.7), 1.7).unwrap();
                for j in 0..3 {
                    assert!((gb[j] - beta[j]).abs() < 1e-8 * (1.0 + beta[j].abs()));
                }
            }
        }
    }

    #[test]
    fn slope_fit_is_stationary() {
        let d = slope_design();
        let fit = fit_reml(&d).unwrap();
        assert!(fit.converged);
        assert!(fit.local_check_passed);
        let base = criterion(&d, Method::Reml, &fit.theta).unwrap();
        assert!((base + 2.0 * fit.loglik).abs() < 1e-9 * base.abs());
        let gb = gls_beta(&d, &fit.sigma, fit.sigma2);
        if !fit.boundary {
            let gb = gb.unwrap();
            for j in 0..3 {
                assert!((gb[j] - fit.beta[j]).abs() < 1e-6 * (1.0 + fit.beta[j].abs()));
            }
        }
    }

    #[test]
    fn constant_outcome_rejected() {
        let d = Design::new(
            DVector::from_element(6, 2.0),
            DMatrix::from_element(6, 1, 1.0),
            vec!["(Intercept)".into()],
            None,
            &labels(3, 2),
        )
        .unwrap();
        assert!(matches!(fit_reml(&d), Err(Error::ConstantOutcome)));
    }

    #[test]
    fn iteration_cap_gives_unconverged_fit() {
        let (a, m) = (10, 5);
        let y: Vec<f64> = (0..a * m).map(|i| 2.0 * noise(i / m, 3.0) + noise(i, 5.0)).collect();
        let d = Design::new(
            DVector::from_vec(y),
            DMatrix::from_element(a * m, 1, 1.0),
            vec!["(Intercept)".into()],
            None,
            &labels(a, m),
        )
        .unwrap();
        let fit = fit(
            &d,
            &FitOptions {
                max_iter: 1,
                start: Some(vec![3.0]),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!fit.converged);
        assert!(fit.beta[0].is_finite());
    }
}
