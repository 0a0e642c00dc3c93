use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SolverOptions;
use crate::error::{Error, Result};

const KKT_TOL: f64 = 1e-7;

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, gamma: f64, a: &DVector<f64>) -> f64 {
    let r = y - x * a;
    r.norm_squared() + lambda * ((1.0 - gamma) * a.norm_squared() + gamma * a.lp_norm(1))
}

/// Largest subgradient violation of the optimality conditions for
/// `‖y − Xα‖² + λ{(1−γ)‖α‖² + γ‖α‖₁}`.
pub fn kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, gamma: f64, a: &DVector<f64>) -> f64 {
    let r = y - x * a;
    let corr = x.transpose() * r;
    (0..a.len())
        .map(|j| {
            let smooth = -2.0 * corr[j] + 2.0 * lambda * (1.0 - gamma) * a[j];
            if a[j] != 0.0 {
                (smooth + lambda * gamma * a[j].signum()).abs()
            } else {
                (smooth.abs() - lambda * gamma).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Elastic-net least squares by cyclic coordinate descent:
/// `argmin ‖y − Xα‖² + λ{(1−γ)‖α‖² + γ‖α‖₁}`. With `γ = 0` this is the
/// ridge solution `(XᵀX + λI)⁻¹Xᵀy`. `opts.max_iters` counts full sweeps.
pub fn elastic_net(x: &DMatrix<f64>, y: &[f64], lambda: f64, gamma: f64, opts: &SolverOptions) -> Result<DVector<f64>> {
    opts.validate()?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if !(lambda >= 0.0) || !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidInput("need lambda >= 0 and gamma in [0, 1]".into()));
    }
    let y = DVector::from_column_slice(y);
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut a = DVector::zeros(p);
    let mut r = y.clone();
    let l1 = lambda * gamma / 2.0;
    let l2 = lambda * (1.0 - gamma);
    let mut f = objective(x, &y, lambda, gamma, &a);
    let tol = KKT_TOL.min(1e-11 * (x.transpose() * &y).amax().max(1.0));
    for sweep in 0..opts.max_iters {
        for j in 0..p {
            let denom = norms[j] + l2;
            if denom == 0.0 {
                continue;
            }
            let col = x.column(j);
            let old = a[j];
            let rho = col.dot(&r) + norms[j] * old;
            let new = soft(rho, l1) / denom;
            if new != old {
                r.axpy(old - new, &col, 1.0);
                a[j] = new;
            }
        }
        let next = objective(x, &y, lambda, gamma, &a);
        debug_assert!(next <= f + 1e-10 * f.abs().max(1.0));
        f = next;
        // refresh the residual to keep accumulated rounding out of the check
        if sweep % 50 == 49 {
            r = &y - x * &a;
        }
        if kkt_residual(x, &y, lambda, gamma, &a) <= tol {
            return Ok(a);
        }
    }
    let res = kkt_residual(x, &y, lambda, gamma, &a);
    if res <= KKT_TOL {
        Ok(a)
    } else {
        Err(Error::NotConverged {
            iterations: opts.max_iters,
            residual: res,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EnetCv {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub cv_error: Vec<f64>,
}

/// Picks λ by k-fold cross-validation over a logarithmic grid running from
/// the smallest λ that zeroes every coefficient down to 10⁻³ of it.
pub fn elastic_net_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    gamma: f64,
    folds: usize,
    grid_points: usize,
    opts: &SolverOptions,
) -> Result<EnetCv> {
    let n = x.nrows();
    if folds < 2 || folds > n || grid_points < 2 {
        return Err(Error::InvalidInput("need 2 <= folds <= n and at least two grid points".into()));
    }
    let yv = DVector::from_column_slice(y);
    let top = (x.transpose() * &yv).amax() * 2.0;
    let lambda_max = if gamma > 0.0 { top / gamma } else { top * 1e3 }.max(1e-8);
    let grid: Vec<f64> = (0..grid_points)
        .map(|k| lambda_max * 10f64.powf(-3.0 * k as f64 / (grid_points - 1) as f64))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % folds;
        }
        f
    };
    let mut cv_error = vec![0.0; grid.len()];
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        for (g, &lam) in grid.iter().enumerate() {
            let a = elastic_net(&xt, &yt, lam, gamma, opts)?;
            cv_error[g] += test
                .iter()
                .map(|&i| (y[i] - x.row(i).transpose().dot(&a)).powi(2))
                .sum::<f64>();
        }
    }
    let best = cv_error
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    Ok(EnetCv {
        lambda: grid[best],
        grid,
        cv_error: cv_error.iter().map(|e| e / n as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn zero_penalty_square_system_is_least_squares() {
        let (x, y) = data(1, 4, 4);
        let a = elastic_net(&x, &y, 0.0, 0.5, &SolverOptions::default().with_max_iters(200_000)).unwrap();
        let exact = x.clone().lu().solve(&DVector::from_column_slice(&y)).unwrap();
        assert!((a - exact).amax() < 1e-8);
    }

    #[test]
    fn huge_lasso_penalty_zeroes_everything() {
        let (x, y) = data(2, 20, 3);
        let a = elastic_net(&x, &y, 1e6, 1.0, &SolverOptions::default()).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ridge_matches_closed_form() {
        let (x, y) = data(3, 30, 4);
        let lambda = 2.5;
        let a = elastic_net(&x, &y, lambda, 0.0, &SolverOptions::default().with_max_iters(10_000)).unwrap();
        let xtx = x.transpose() * &x + DMatrix::identity(4, 4) * lambda;
        let exact = xtx.cholesky().unwrap().solve(&(x.transpose() * DVector::from_column_slice(&y)));
        assert!((a - exact).amax() < 1e-8);
    }

    #[test]
    fn cv_is_deterministic() {
        let (x, y) = data(4, 40, 3);
        let a = elastic_net_cv(&x, &y, 0.5, 5, 10, &SolverOptions::default()).unwrap();
        let b = elastic_net_cv(&x, &y, 0.5, 5, 10, &SolverOptions::default()).unwrap();
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.cv_error, b.cv_error);
    }
}
