//! Quasi-Newton minimization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Absolute objective change that ends the quasi-Newton phase.
    pub f_tol: f64,
    pub step_tol: f64,
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            f_tol: 1e-9,
            step_tol: 1e-8,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// False only when the iteration cap stopped the search.
    pub converged: bool,
    pub grad_norm: f64,
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut eval = |di: f64, dj: f64| {
                xp[i] = x[i] + di;
                xp[j] = x[j] + dj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// BFGS with Armijo backtracking, followed by a few Newton steps on a
/// finite-difference Hessian to settle the optimum below the BFGS tolerance.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut g = DVector::from_vec(fd_gradient(f, x.as_slice(), opts.fd_step));
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut d = -(&hinv * &g);
        if g.dot(&d) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            d = -g.clone();
        }
        let dmax = d.amax();
        if dmax > 2.0 {
            d *= 2.0 / dmax;
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let xn = &x + &d * t;
            let fnew = f(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // No descent along a descent direction: numerical optimum.
            converged = true;
            break;
        };
        let gn = DVector::from_vec(fd_gradient(f, xn.as_slice(), opts.fd_step));
        let s = &xn - &x;
        let yv = &gn - &g;
        let df = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if df.abs() < opts.f_tol || s.amax() < opts.step_tol {
            converged = true;
            break;
        }
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first {
                hinv = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
                first = false;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            hinv = left * &hinv * right + &s * s.transpose() * rho;
        }
    }

    // Newton polish.
    let h2 = 1e-4;
    for _ in 0..20 {
        let grad = fd_gradient(f, x.as_slice(), opts.fd_step);
        let hess = fd_hessian(f, x.as_slice(), h2);
        let Some(chol) = hess.cholesky() else { break };
        let step = -chol.solve(&DVector::from_vec(grad));
        if step.amax() < 1e-12 {
            break;
        }
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-3 {
            let xn = &x + &step * t;
            let fnew = f(xn.as_slice());
            if fnew.is_finite() && fnew < fx {
                x = xn;
                fx = fnew;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let grad = fd_gradient(f, x.as_slice(), opts.fd_step);
    OptimResult {
        x: x.as_slice().to_vec(),
        f: fx,
        iterations,
        converged,
        grad_norm: norm(&grad),
    }
}
