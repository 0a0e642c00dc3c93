use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{inf_norm, SolveDiagnostics, SolverOptions, StepRule, ARMIJO, MAX_HALVINGS};
use crate::error::{Error, Result};

const RESTARTS: usize = 5;

fn merit(g: &DVector<f64>) -> f64 {
    let v = 0.5 * g.norm_squared();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn direction(j: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(d) = j.clone().lu().solve(g) {
        if d.iter().all(|v| v.is_finite()) {
            return Some(-d);
        }
    }
    // Levenberg damping when the Jacobian is singular
    let jt = j.transpose();
    let normal = &jt * j;
    let scale = normal.diagonal().amax().max(1e-300);
    let mut mu = 1e-10 * scale;
    for _ in 0..20 {
        let mut a = normal.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += mu;
        }
        if let Some(ch) = a.cholesky() {
            let d = ch.solve(&(&jt * g));
            if d.iter().all(|v| v.is_finite()) {
                return Some(-d);
            }
        }
        mu *= 100.0;
    }
    None
}

/// Damped Newton root finder for `g(β) = 0` with `K` equations in `K`
/// unknowns, line-searching on `½‖g‖²` and restarting from seeded
/// perturbations of `β0` when a run stalls.
pub fn moment_newton<G, J>(g: G, jac: J, beta0: &DVector<f64>, opts: &SolverOptions) -> Result<(DVector<f64>, SolveDiagnostics)>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    opts.validate()?;
    let start = Instant::now();
    let k = beta0.len();
    let g0 = g(beta0);
    if g0.len() != k {
        return Err(Error::Dimension { expected: k, got: g0.len() });
    }
    let j0 = jac(beta0);
    if j0.shape() != (k, k) || j0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("Jacobian must be finite and square at the start point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = (f64::INFINITY, beta0.clone());
    let mut total_iters = 0;

    for attempt in 0..=RESTARTS {
        let mut beta = if attempt == 0 {
            beta0.clone()
        } else {
            let noise = Normal::new(0.0, 0.5).expect("valid sd");
            DVector::from_fn(k, |i, _| beta0[i] + noise.sample(&mut rng) * (1.0 + beta0[i].abs()))
        };
        let mut gv = g(&beta);
        let mut f = merit(&gv);
        let mut iters = 0;
        loop {
            let res = inf_norm(gv.iter());
            if res.is_finite() && res < best.0 {
                best = (res, beta.clone());
            }
            if res <= opts.grad_tol {
                return Ok((
                    beta,
                    SolveDiagnostics {
                        objective: f,
                        residual_inf_norm: res,
                        iterations: total_iters + iters,
                        converged: true,
                        wall_time: start.elapsed().as_secs_f64(),
                    },
                ));
            }
            if iters >= opts.max_iters || !f.is_finite() {
                break;
            }
            iters += 1;
            let Some(d) = direction(&jac(&beta), &gv) else { break };
            let mut t = match opts.step_rule {
                StepRule::Fixed(t) => t,
                _ => 1.0,
            };
            let mut moved = false;
            for _ in 0..MAX_HALVINGS {
                let trial = &beta + t * &d;
                let gt = g(&trial);
                let ft = merit(&gt);
                // the Newton direction gives directional derivative −2f of the merit
                if ft.is_finite() && (matches!(opts.step_rule, StepRule::Fixed(_)) || ft <= (1.0 - 2.0 * ARMIJO * t) * f) {
                    beta = trial;
                    gv = gt;
                    f = ft;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        total_iters += iters;
    }
    Err(Error::NotConverged {
        iterations: total_iters,
        residual: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_root_in_one_step() {
        let (b, d) = moment_newton(
            |b: &DVector<f64>| DVector::from_vec(vec![b[0] - 2.0]),
            |_: &DVector<f64>| DMatrix::from_element(1, 1, 1.0),
            &DVector::from_vec(vec![0.0]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(b[0], 2.0);
        assert_eq!(d.iterations, 1);
    }

    #[test]
    fn nonlinear_system() {
        // x² + y² = 4, x = y
        let g = |b: &DVector<f64>| DVector::from_vec(vec![b[0] * b[0] + b[1] * b[1] - 4.0, b[0] - b[1]]);
        let j = |b: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[2.0 * b[0], 2.0 * b[1], 1.0, -1.0]);
        let (b, d) = moment_newton(g, j, &DVector::from_vec(vec![1.0, 0.5]), &SolverOptions::default()).unwrap();
        assert!(d.converged);
        assert!((b[0] - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn no_root_reports_best_residual() {
        let r = moment_newton(
            |b: &DVector<f64>| DVector::from_vec(vec![b[0] * b[0] + 1.0]),
            |b: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * b[0]),
            &DVector::from_vec(vec![1.0]),
            &SolverOptions::default().with_max_iters(50),
        );
        match r {
            Err(Error::NotConverged { residual, .. }) => assert!((residual - 1.0).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }
}
