use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{inf_norm, SolveDiagnostics, SolverOptions, StepRule, ARMIJO, MAX_HALVINGS};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EntropySolution {
    pub weights: Vec<f64>,
    pub duals: DVector<f64>,
    pub diagnostics: SolveDiagnostics,
}

const DUAL_LIMIT: f64 = 1e6;

struct DualEval {
    value: f64,
    weights: Vec<f64>,
    grad: DVector<f64>,
}

fn eval(c: &DMatrix<f64>, logq: &[f64], lambda: &DVector<f64>) -> DualEval {
    let m = c.ncols();
    let s: Vec<f64> = (0..m).map(|i| logq[i] + c.column(i).dot(lambda)).collect();
    let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s.iter().map(|v| (v - top).exp()).sum();
    let value = top + sum.ln();
    let weights: Vec<f64> = s.iter().map(|v| (v - value).exp()).collect();
    let grad = c * DVector::from_column_slice(&weights);
    DualEval { value, weights, grad }
}

fn hessian(c: &DMatrix<f64>, w: &[f64], g: &DVector<f64>) -> DMatrix<f64> {
    let k = c.nrows();
    let mut h = DMatrix::zeros(k, k);
    for (i, &wi) in w.iter().enumerate() {
        let ci = c.column(i);
        h.ger(wi, &ci, &ci, 1.0);
    }
    h.ger(-1.0, g, g, 1.0);
    h
}

fn centered(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut c = a.clone();
    for mut col in c.column_iter_mut() {
        col -= b;
    }
    c
}

/// Dual objective `log Σ q_i exp(λᵀ(a_i − b))` with its gradient and Hessian.
pub fn entropy_dual_objective(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &[f64],
    lambda: &DVector<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let c = centered(a, b);
    let logq: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let e = eval(&c, &logq, lambda);
    let h = hessian(&c, &e.weights, &e.grad);
    (e.value, e.grad, h)
}

/// Minimum-KL reweighting of `q` subject to `A w = b` and `w` on the simplex.
/// `a` is `K × m`: one column per subject.
pub fn entropy_dual_newton(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &[f64],
    opts: &SolverOptions,
) -> Result<EntropySolution> {
    opts.validate()?;
    let start = Instant::now();
    let (k, m) = a.shape();
    if b.len() != k {
        return Err(Error::Dimension { expected: k, got: b.len() });
    }
    if q.len() != m {
        return Err(Error::Dimension { expected: m, got: q.len() });
    }
    if q.iter().any(|&v| !(v > 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput("base weights must be positive and sum to one".into()));
    }
    if b.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite constraint features or targets".into()));
    }
    let c = centered(a, b);
    let logq: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let mut lambda = DVector::zeros(k);
    let mut cur = eval(&c, &logq, &lambda);

    let h0 = hessian(&c, &cur.weights, &cur.grad);
    let eig = h0.clone().symmetric_eigenvalues();
    let top = eig.max().max(0.0);
    if k > 0 && eig.min() <= 1e-10 * top.max(1e-300) {
        return Err(Error::RankDeficient(
            "balance features are collinear over the weighted group; drop or combine redundant columns".into(),
        ));
    }

    let mut iterations = 0;
    loop {
        let gnorm = inf_norm(cur.grad.iter());
        if gnorm <= opts.grad_tol {
            return Ok(EntropySolution {
                weights: cur.weights,
                duals: lambda,
                diagnostics: SolveDiagnostics {
                    objective: cur.value,
                    residual_inf_norm: gnorm,
                    iterations,
                    converged: true,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            });
        }
        if iterations >= opts.max_iters {
            return Err(Error::NotConverged { iterations, residual: gnorm });
        }
        iterations += 1;

        let h = hessian(&c, &cur.weights, &cur.grad);
        let scale = h.diagonal().max().max(1e-300);
        let mut mu = 0.0;
        let dir = loop {
            let mut hm = h.clone();
            for i in 0..k {
                hm[(i, i)] += mu;
            }
            if let Some(ch) = hm.cholesky() {
                break -ch.solve(&cur.grad);
            }
            mu = if mu == 0.0 { 1e-12 * scale } else { mu * 10.0 };
        };
        let slope = cur.grad.dot(&dir);

        let mut t = match opts.step_rule {
            StepRule::Fixed(t) => t,
            _ => 1.0,
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &lambda + t * &dir;
            let e = eval(&c, &logq, &trial);
            let fixed = matches!(opts.step_rule, StepRule::Fixed(_));
            if e.value.is_finite() && (fixed || e.value <= cur.value + ARMIJO * t * slope) {
                accepted = Some((trial, e));
                break;
            }
            // roundoff floor near the optimum: accept a step that still shrinks the gradient
            if e.value.is_finite()
                && e.value <= cur.value + 1e-14 * cur.value.abs().max(1.0)
                && inf_norm(e.grad.iter()) < 0.5 * gnorm
            {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((next, e)) => {
                debug_assert!(e.value <= cur.value + 1e-12 * cur.value.abs().max(1.0));
                lambda = next;
                cur = e;
            }
            None => {
                return Err(Error::Infeasible(format!(
                    "balance constraints cannot be met: dual line search stalled with residual {gnorm:.3e}"
                )))
            }
        }
        if lambda.norm() > DUAL_LIMIT {
            return Err(Error::Infeasible(format!(
                "balance constraints cannot be met: dual diverged (|lambda| > {DUAL_LIMIT:e})"
            )));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_constraint() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let b = DVector::from_vec(vec![0.75]);
        let s = entropy_dual_newton(&a, &b, &[0.5, 0.5], &SolverOptions::default()).unwrap();
        assert!((s.weights[0] - 0.25).abs() < 1e-10);
        assert!((s.weights[1] - 0.75).abs() < 1e-10);
        assert!(s.diagnostics.converged);
    }

    #[test]
    fn fixed_point_at_q_means() {
        let a = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 3.0, 2.0, -1.0, 0.5]);
        let q = [0.2, 0.5, 0.3];
        let b = &a * DVector::from_column_slice(&q);
        let s = entropy_dual_newton(&a, &b, &q, &SolverOptions::default()).unwrap();
        assert_eq!(s.diagnostics.iterations, 0);
        assert!(s.duals.iter().all(|&l| l == 0.0));
        for (w, qi) in s.weights.iter().zip(q) {
            assert!((w - qi).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dual_grid() {
        let a = DMatrix::from_row_slice(2, 5, &[0.1, 0.9, -0.4, 0.6, 0.3, 1.0, 0.2, -0.5, 0.4, 0.8]);
        let b = DVector::from_vec(vec![0.35, 0.3]);
        let q = [0.2; 5];
        let s = entropy_dual_newton(&a, &b, &q, &SolverOptions::default()).unwrap();
        // coarse-to-fine grid on λ ∈ [−5, 5]²
        let f = |l: &DVector<f64>| entropy_dual_objective(&a, &b, &q, l).0;
        let (mut cx, mut cy, mut half) = (0.0, 0.0, 5.0);
        for _ in 0..12 {
            let mut best = (f64::INFINITY, cx, cy);
            for i in 0..=40 {
                for j in 0..=40 {
                    let x = cx - half + 2.0 * half * i as f64 / 40.0;
                    let y = cy - half + 2.0 * half * j as f64 / 40.0;
                    let v = f(&DVector::from_vec(vec![x, y]));
                    if v < best.0 {
                        best = (v, x, y);
                    }
                }
            }
            cx = best.1;
            cy = best.2;
            half /= 8.0;
        }
        let grid_l = DVector::from_vec(vec![cx, cy]);
        let c = centered(&a, &b);
        let logq: Vec<f64> = q.iter().map(|v| v.ln()).collect();
        let wg = eval(&c, &logq, &grid_l).weights;
        for (x, y) in s.weights.iter().zip(&wg) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn infeasible_target_reported() {
        let a = DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let r = entropy_dual_newton(&a, &b, &[1.0 / 3.0; 3], &SolverOptions::default());
        assert!(matches!(r, Err(Error::Infeasible(_))), "{r:?}");
    }

    #[test]
    fn collinear_features_rejected() {
        let a = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 0.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let r = entropy_dual_newton(&a, &b, &[1.0 / 3.0; 3], &SolverOptions::default());
        assert!(matches!(r, Err(Error::RankDeficient(_))));
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(3, |_, _| rng.random_range(-0.3..0.3));
        let q = [0.125; 8];
        let h = 1e-6;
        for _ in 0..20 {
            let l = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let (_, g, hess) = entropy_dual_objective(&a, &b, &q, &l);
            for j in 0..3 {
                let mut lp = l.clone();
                lp[j] += h;
                let mut lm = l.clone();
                lm[j] -= h;
                let (fp, gp, _) = entropy_dual_objective(&a, &b, &q, &lp);
                let (fm, gm, _) = entropy_dual_objective(&a, &b, &q, &lm);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3));
                for i in 0..3 {
                    let fdh = (gp[i] - gm[i]) / (2.0 * h);
                    assert!((fdh - hess[(i, j)]).abs() <= 1e-5 * hess[(i, j)].abs().max(1e-3));
                }
            }
        }
    }
}
