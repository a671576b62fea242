//! Damped Gauss-Newton (Levenberg-Marquardt) least-squares solver.
//!
//! Minimizes `sum_i r_i(p)^2` for a user-supplied residual closure. The
//! Jacobian is taken by central differences; each parameter carries a
//! characteristic scale used for the difference step and for the relative
//! step-size convergence test, so parameters near zero are handled sanely.
//!
//! Damping follows Nielsen's update rule with Marquardt's diagonal scaling.
//! Standard errors come from the pseudo-inverse of `J^T J` at the solution;
//! directions the data cannot resolve get an infinite standard error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Converged once every parameter moves less than `xtol` relative to its magnitude.
    pub xtol: f64,
    /// Converged once an accepted step lowers the cost by less than `ftol` relative.
    pub ftol: f64,
    /// Residuals are already divided by known standard deviations; do not rescale
    /// the covariance by the reduced chi-square.
    pub absolute_sigma: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            xtol: 1e-8,
            ftol: 1e-15,
            absolute_sigma: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals at the solution.
    pub ssr: f64,
    pub n_residuals: usize,
    pub iterations: usize,
}

impl LmFit {
    pub fn residual_norm(&self) -> f64 {
        self.ssr.sqrt()
    }

    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.n_residuals.saturating_sub(self.params.len());
        if dof == 0 {
            f64::NAN
        } else {
            self.ssr / dof as f64
        }
    }
}

const MAX_LAMBDA: f64 = 1e16;

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn finite(r: &[f64]) -> bool {
    r.iter().all(|x| x.is_finite())
}

fn step_size(p: f64, scale: f64) -> f64 {
    1e-6 * p.abs().max(scale)
}

fn jacobian<F>(f: &F, p: &[f64], scales: &[f64], m: usize) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut q = p.to_vec();
    for j in 0..n {
        let h = step_size(p[j], scales[j]);
        q[j] = p[j] + h;
        let up = f(&q);
        q[j] = p[j] - h;
        let down = f(&q);
        q[j] = p[j];
        if up.len() != m || down.len() != m || !finite(&up) || !finite(&down) {
            return None;
        }
        for i in 0..m {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

/// Pseudo-inverse of `J^T J` plus a mask of parameters touching unresolved directions.
fn unscaled_covariance(jac: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let n = jac.ncols();
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = s_max * 1e-10;
    let mut cov = DMatrix::zeros(n, n);
    let mut unresolved = vec![false; n];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(k);
        if s > cutoff && s > 0.0 {
            let inv = 1.0 / (s * s);
            for a in 0..n {
                for b in 0..n {
                    cov[(a, b)] += inv * v[a] * v[b];
                }
            }
        } else {
            for a in 0..n {
                if v[a].abs() > 1e-3 {
                    unresolved[a] = true;
                }
            }
        }
    }
    // thin SVD returns min(m, n) singular values; missing ones are null directions
    if jac.nrows() < n {
        unresolved.iter_mut().for_each(|u| *u = true);
    }
    (cov, unresolved)
}

/// Minimizes the squared norm of `residuals(p)` starting from `p0`.
///
/// `scales` gives a characteristic magnitude for each parameter.
pub fn minimize<F>(
    model: &str,
    residuals: F,
    p0: &[f64],
    scales: &[f64],
    opts: &LmOptions,
) -> Result<LmFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    assert_eq!(scales.len(), n, "one scale per parameter");
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let m = r.len();
    if m == 0 {
        return Err(Error::InsufficientData(format!("{model}: no residuals")));
    }
    if !finite(&r) || !finite(&p) {
        return Err(Error::domain(format!("{model}: non-finite residuals at initial guess")));
    }
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let nonconv = |p: &[f64], it: usize, ssr: f64| Error::NonConvergence {
        model: model.to_string(),
        iterations: it,
        ssr,
        last: p.to_vec(),
    };
    let mut jac = jacobian(&residuals, &p, scales, m).ok_or_else(|| nonconv(&p, 0, cost))?;

    let mut iterations = 0;
    let mut converged = cost == 0.0;
    while !converged {
        if iterations >= opts.max_iter {
            return Err(nonconv(&p, iterations, cost));
        }
        iterations += 1;

        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let dmax = a.diagonal().iter().cloned().fold(0.0, f64::max);
        if dmax == 0.0 {
            // residuals do not depend on any parameter
            break;
        }
        let diag: Vec<f64> = a.diagonal().iter().map(|d| d.max(dmax * 1e-12)).collect();

        let accepted = loop {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * diag[j];
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= nu;
                nu *= 2.0;
                if lambda > MAX_LAMBDA {
                    break None;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            let r_trial = residuals(&trial);
            let cost_trial = if r_trial.len() == m && finite(&r_trial) {
                sum_sq(&r_trial)
            } else {
                f64::INFINITY
            };
            let mut pred = -delta.dot(&g);
            for j in 0..n {
                pred += lambda * diag[j] * delta[j] * delta[j];
            }
            let rho = if pred > 0.0 {
                (cost - cost_trial) / pred
            } else {
                -1.0
            };
            if cost_trial < cost && rho > 0.0 {
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                break Some((trial, r_trial, cost_trial, delta));
            }
            lambda *= nu;
            nu *= 2.0;
            if lambda > MAX_LAMBDA {
                break None;
            }
        };

        match accepted {
            // no step lowers the cost any further: stationary point
            None => converged = true,
            Some((trial, r_trial, cost_trial, delta)) => {
                let small_step = delta
                    .iter()
                    .zip(trial.iter().zip(scales))
                    .all(|(d, (x, s))| d.abs() <= opts.xtol * x.abs().max(*s));
                let small_gain = cost - cost_trial <= opts.ftol * cost;
                p = trial;
                r = r_trial;
                cost = cost_trial;
                jac = jacobian(&residuals, &p, scales, m)
                    .ok_or_else(|| nonconv(&p, iterations, cost))?;
                converged = small_step || small_gain || cost == 0.0;
            }
        }
    }

    let (cov_unscaled, unresolved) = unscaled_covariance(&jac);
    let dof = m.saturating_sub(n);
    let s2 = if opts.absolute_sigma {
        1.0
    } else if dof > 0 {
        cost / dof as f64
    } else {
        f64::INFINITY
    };
    let covariance = cov_unscaled * s2;
    let std_errors = (0..n)
        .map(|j| {
            if unresolved[j] {
                f64::INFINITY
            } else {
                covariance[(j, j)].max(0.0).sqrt()
            }
        })
        .collect();
    Ok(LmFit {
        params: p,
        std_errors,
        covariance,
        ssr: cost,
        n_residuals: m,
        iterations,
    })
}
