//! Small fitting utilities: straight lines, circles and Levenberg–Marquardt.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub r_squared: f64,
    pub residual_rms: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y = intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let w = vec![1.0; x.len()];
    weighted_linear_fit(x, y, &w)
}

/// Weighted least squares with weights `w_i = 1/σ_i²`. Standard errors assume the
/// weights are absolute when `w` is not uniform, otherwise they are scaled by the
/// residual variance.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return Err(Error::invalid("linear fit needs at least two matching points"));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (a - mx) * (c - my))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().zip(w).map(|(c, b)| b * (c - my).powi(2)).sum();
    let uniform = w.iter().all(|v| *v == w[0]);
    let scale = if uniform {
        if n > 2 {
            ss_res / (n - 2) as f64
        } else {
            0.0
        }
    } else {
        1.0
    };
    let slope_var = scale / sxx;
    let intercept_var = scale * (1.0 / sw + mx * mx / sxx);
    let unweighted_rms = (x
        .iter()
        .zip(y)
        .map(|(a, c)| (c - intercept - slope * a).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: slope_var.sqrt(),
        intercept_stderr: intercept_var.sqrt(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        residual_rms: unweighted_rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: Complex64,
    pub radius: f64,
    /// Largest `|dist − r| / r` over the points.
    pub max_relative_residual: f64,
}

/// Algebraic (Kåsa) circle fit on centred data.
pub fn fit_circle(points: &[Complex64]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::invalid("circle fit needs at least three points"));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex64>() / n;
    let scale = points
        .iter()
        .map(|p| (p - mean).norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::invalid("circle fit on coincident points"));
    }
    // u² + v² + D·u + E·v + F = 0 in normalised coordinates
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for p in points {
        let q = (p - mean) / scale;
        let row = Vector3::new(q.re, q.im, 1.0);
        ata += row * row.transpose();
        atb -= row * q.norm_sqr();
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::invalid("circle fit: collinear points"))?;
    let c = Complex64::new(-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = c.norm_sqr() - sol[2];
    if r2 <= 0.0 {
        return Err(Error::invalid("circle fit: degenerate radius"));
    }
    let center = mean + c * scale;
    let radius = r2.sqrt() * scale;
    let max_relative_residual = points
        .iter()
        .map(|p| ((p - center).norm() - radius).abs() / radius)
        .fold(0.0, f64::max);
    Ok(CircleFit {
        center,
        radius,
        max_relative_residual,
    })
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            fd_step: 1e-7,
            cost_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg–Marquardt with a central-difference Jacobian. Parameters should be
/// scaled to order unity by the caller.
pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], opts: &LmOptions) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::from_vec(residuals(&x));
    let m = r.len();
    if m < n {
        return Err(Error::invalid("fewer residuals than parameters"));
    }
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = opts.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let rp = residuals(&xp);
            let rm = residuals(&xm);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = DVector::from_vec(residuals(&xt));
            let ct = rt.norm_squared();
            if ct.is_finite() && ct < cost {
                let rel = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                x = xt;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < opts.cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved || converged || cost == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(LmResult {
        params: x,
        cost,
        iterations,
        converged,
    })
}
