//! Bound-constrained Nelder–Mead simplex minimiser.

/// Options for [`minimize`].
#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Initial simplex edge per coordinate.
    pub initial_step: Vec<f64>,
    /// Optional box constraints; trial points are clamped into them.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Stop when the spread of function values over the simplex drops below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter drops below this.
    pub x_tol: f64,
    /// Stop as soon as the best value reaches this target.
    pub f_target: Option<f64>,
    pub max_evaluations: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            initial_step: Vec::new(),
            lower: None,
            upper: None,
            f_tol: 1e-12,
            x_tol: 1e-12,
            f_target: None,
            max_evaluations: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub best_history: Vec<f64>,
}

impl NelderMead {
    fn clamp(&self, x: &mut [f64]) {
        if let Some(lo) = &self.lower {
            for (v, l) in x.iter_mut().zip(lo) {
                *v = v.max(*l);
            }
        }
        if let Some(hi) = &self.upper {
            for (v, h) in x.iter_mut().zip(hi) {
                *v = v.min(*h);
            }
        }
    }
}

/// Minimise `f` starting from `x0`.
pub fn minimize<F>(f: &F, x0: &[f64], opts: &NelderMead) -> Minimum
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = x0.len();
    assert!(n > 0, "empty parameter vector");
    let step: Vec<f64> = if opts.initial_step.len() == n {
        opts.initial_step.clone()
    } else {
        x0.iter().map(|v| if *v != 0.0 { 0.05 * v.abs() } else { 2.5e-4 }).collect()
    };

    let evaluations = std::cell::Cell::new(0usize);
    let eval = |x: &mut Vec<f64>| {
        opts.clamp(x);
        evaluations.set(evaluations.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut p = x0.to_vec();
    let fp = eval(&mut p);
    simplex.push((p, fp));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        // step the other way when a bound pins the vertex onto x0
        if let Some(hi) = &opts.upper {
            if p[i] > hi[i] {
                p[i] = x0[i] - step[i];
            }
        }
        let fp = eval(&mut p);
        simplex.push((p, fp));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut best_history = Vec::new();
    let mut converged = false;

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        best_history.push(simplex[0].1);

        let f_spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if opts.f_target.is_some_and(|t| simplex[0].1 <= t)
            || (f_spread.abs() <= opts.f_tol && diameter <= opts.x_tol.max(f64::EPSILON))
            || diameter == 0.0
        {
            converged = true;
            break;
        }
        if evaluations.get() >= opts.max_evaluations {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let worst = simplex[n].0.clone();
        let mut xr = along(alpha, &worst);
        let fr = eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(gamma, &worst);
            let fe = eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, t) = if fr < simplex[n].1 {
            (along(rho, &worst), fr)
        } else {
            (along(-rho, &worst), simplex[n].1)
        };
        let fc = eval(&mut xc);
        if fc < t {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best
                .iter()
                .zip(&v.0)
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            let fx = eval(&mut x);
            *v = (x, fx);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum {
        x,
        f: fx,
        evaluations: evaluations.get(),
        iterations,
        converged,
        best_history,
    }
}

/// [`minimize`], then one restart from the optimum with a fresh simplex of
/// `restart_scale` times the initial steps. Evaluation counts and histories are merged.
pub fn minimize_with_restart<F>(f: &F, x0: &[f64], opts: &NelderMead, restart_scale: f64) -> Minimum
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let first = minimize(f, x0, opts);
    if opts.f_target.is_some_and(|t| first.f <= t) {
        return first;
    }
    let mut o2 = opts.clone();
    o2.initial_step = if opts.initial_step.len() == x0.len() {
        opts.initial_step.iter().map(|s| s * restart_scale).collect()
    } else {
        first.x.iter().map(|v| (0.05 * v.abs()).max(2.5e-4) * restart_scale).collect()
    };
    o2.max_evaluations = opts.max_evaluations.saturating_sub(first.evaluations).max(n_min(x0.len()));
    let second = minimize(f, &first.x, &o2);
    let mut history = first.best_history;
    let floor = history.last().copied().unwrap_or(f64::INFINITY);
    history.extend(second.best_history.iter().map(|v| v.min(floor)));
    let (x, fx) = if second.f <= first.f {
        (second.x, second.f)
    } else {
        (first.x, first.f)
    };
    Minimum {
        x,
        f: fx,
        evaluations: first.evaluations + second.evaluations,
        iterations: first.iterations + second.iterations,
        converged: second.converged,
        best_history: history,
    }
}

fn n_min(n: usize) -> usize {
    10 * (n + 1)
}
