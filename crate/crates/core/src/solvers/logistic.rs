use nalgebra::{DMatrix, DVector};

use super::{inf_norm, SolveDiagnostics, SolverOptions, ARMIJO, MAX_HALVINGS};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    pub probabilities: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Penalized negative log-likelihood `Σ [log(1+e^η) − zη] + (ridge/2)‖β‖²`.
pub fn logistic_objective(x: &DMatrix<f64>, z: &[bool], ridge: f64, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    let nll: f64 = eta
        .iter()
        .zip(z)
        .map(|(&e, &zi)| log1pexp(e) - if zi { e } else { 0.0 })
        .sum();
    nll + 0.5 * ridge * beta.norm_squared()
}

pub fn logistic_gradient(x: &DMatrix<f64>, z: &[bool], ridge: f64, beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let r = DVector::from_fn(z.len(), |i, _| sigmoid(eta[i]) - if z[i] { 1.0 } else { 0.0 });
    x.transpose() * r + ridge * beta
}

/// Ridge-penalized logistic regression by Newton–Raphson. The design is used
/// as given, so include a constant column for an intercept.
pub fn logistic_fit(x: &DMatrix<f64>, z: &[bool], ridge: f64, opts: &SolverOptions) -> Result<LogisticFit> {
    opts.validate()?;
    let start = std::time::Instant::now();
    let (n, p) = x.shape();
    if z.len() != n {
        return Err(Error::Dimension { expected: n, got: z.len() });
    }
    if !z.iter().any(|&v| v) || z.iter().all(|&v| v) {
        return Err(Error::InvalidInput("logistic fit needs both label classes".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput("ridge must be nonnegative".into()));
    }
    let mut beta = DVector::zeros(p);
    let mut f = logistic_objective(x, z, ridge, &beta);
    let mut iterations = 0;
    loop {
        let g = logistic_gradient(x, z, ridge, &beta);
        let gn = inf_norm(g.iter());
        if gn <= opts.grad_tol {
            let eta = x * &beta;
            let probabilities = eta.iter().map(|&e| sigmoid(e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).collect();
            return Ok(LogisticFit {
                beta,
                probabilities,
                diagnostics: SolveDiagnostics {
                    objective: f,
                    residual_inf_norm: gn,
                    iterations,
                    converged: true,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            });
        }
        if iterations >= opts.max_iters {
            return Err(Error::NotConverged { iterations, residual: gn });
        }
        iterations += 1;
        let eta = x * &beta;
        let mut h = DMatrix::zeros(p, p);
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let row = x.row(i).transpose();
            h.ger(pi * (1.0 - pi), &row, &row, 1.0);
        }
        let scale = h.diagonal().amax().max(1.0);
        let mut mu = ridge;
        let d = loop {
            let mut hm = h.clone();
            for j in 0..p {
                hm[(j, j)] += mu;
            }
            if let Some(ch) = hm.cholesky() {
                break -ch.solve(&g);
            }
            mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
        };
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &beta + t * &d;
            let ft = logistic_objective(x, z, ridge, &trial);
            if ft <= f + ARMIJO * t * slope
                || (ft <= f + 1e-14 * f.abs().max(1.0) && inf_norm(logistic_gradient(x, z, ridge, &trial).iter()) < 0.5 * gn)
            {
                debug_assert!(ft <= f + 1e-12 * f.abs().max(1.0));
                beta = trial;
                f = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::NotConverged { iterations, residual: gn });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_labels_intercept_only() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let z = [true, false, true, false, true, false];
        let fit = logistic_fit(&x, &z, 1e-8, &SolverOptions::default()).unwrap();
        assert!(fit.probabilities.iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn intercept_only_recovers_log_odds() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let z: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let fit = logistic_fit(&x, &z, 0.0, &SolverOptions::default()).unwrap();
        assert!((fit.beta[0] - (3.0f64 / 7.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(30, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let z: Vec<bool> = (0..30).map(|_| rng.random_bool(0.4)).collect();
        let h = 1e-6;
        for _ in 0..20 {
            let b = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let g = logistic_gradient(&x, &z, 1e-3, &b);
            for j in 0..3 {
                let mut bp = b.clone();
                bp[j] += h;
                let mut bm = b.clone();
                bm[j] -= h;
                let fd = (logistic_objective(&x, &z, 1e-3, &bp) - logistic_objective(&x, &z, 1e-3, &bm)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn separated_data_stays_finite() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 1.0, -1.0, 1.0, 1.0, 1.0, 2.0]);
        let z = [false, false, true, true];
        let fit = logistic_fit(&x, &z, 1e-2, &SolverOptions::default()).unwrap();
        assert!(fit.probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
