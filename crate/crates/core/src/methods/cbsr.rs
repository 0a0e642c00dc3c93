use nalgebra::{DMatrix, DVector};

use crate::data::{Estimand, GroupPair, PairRole};
use crate::error::{Error, Result};
use crate::solvers::{SolveDiagnostics, SolverOptions, StepRule};

use super::{cbps_exact, BalanceView, Balancer, WeightSolution};

/// Covariate balancing scoring rules. For SATE it finds weights `w_i ≥ 1` on
/// every subject with equal weighted feature totals in the two groups; for
/// SATT it coincides with the unnormalized odds weights of [`cbps_exact`].
#[derive(Debug, Clone, Default)]
pub struct Cbsr {
    pub opts: SolverOptions,
}

const DUAL_LIMIT: f64 = 1e6;

/// Dual objective `Σ exp(s_i λᵀφ_i) + λᵀΣ s_i φ_i` with gradient and Hessian,
/// where `s_i = +1` for controls and `−1` for treated subjects.
pub fn cbsr_dual(phi: &DMatrix<f64>, s: &[f64], lambda: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let k = phi.ncols();
    let mut value = 0.0;
    let mut grad = DVector::zeros(k);
    let mut hess = DMatrix::zeros(k, k);
    for (i, &si) in s.iter().enumerate() {
        let row = phi.row(i).transpose();
        let v = (si * row.dot(lambda)).exp();
        value += v + si * row.dot(lambda);
        grad.axpy(si * (1.0 + v), &row, 1.0);
        hess.ger(v, &row, &row, 1.0);
    }
    (value, grad, hess)
}

fn features(view: &BalanceView) -> DMatrix<f64> {
    let x = view.x();
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Joint SATE weights over all subjects.
pub fn cbsr_sate(view: &BalanceView, opts: &SolverOptions) -> Result<(Vec<f64>, SolveDiagnostics)> {
    opts.validate()?;
    let start = std::time::Instant::now();
    let phi = features(view);
    let z = view.treatment();
    let s: Vec<f64> = z.iter().map(|&t| if t { -1.0 } else { 1.0 }).collect();
    let k = phi.ncols();
    let mut lambda = DVector::zeros(k);
    let (mut f, mut g, h0) = cbsr_dual(&phi, &s, &lambda);
    if h0.clone().cholesky().is_none() || h0.clone().symmetric_eigenvalues().min() <= 1e-10 * h0.diagonal().amax() {
        return Err(Error::RankDeficient(
            "balance features are collinear; drop or combine redundant columns".into(),
        ));
    }
    let mut iterations = 0;
    loop {
        let gn = g.amax();
        if gn <= opts.grad_tol {
            let w = (0..phi.nrows()).map(|i| 1.0 + (s[i] * phi.row(i).transpose().dot(&lambda)).exp()).collect();
            return Ok((
                w,
                SolveDiagnostics {
                    objective: f,
                    residual_inf_norm: gn,
                    iterations,
                    converged: true,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            ));
        }
        if iterations >= opts.max_iters {
            return Err(Error::NotConverged { iterations, residual: gn });
        }
        iterations += 1;
        let (_, _, h) = cbsr_dual(&phi, &s, &lambda);
        let scale = h.diagonal().amax().max(1e-300);
        let mut mu = 0.0;
        let d = loop {
            let mut hm = h.clone();
            for i in 0..k {
                hm[(i, i)] += mu;
            }
            if let Some(ch) = hm.cholesky() {
                break -ch.solve(&g);
            }
            mu = if mu == 0.0 { 1e-12 * scale } else { mu * 10.0 };
        };
        let slope = g.dot(&d);
        let mut t = match opts.step_rule {
            StepRule::Fixed(t) => t,
            _ => 1.0,
        };
        let mut moved = false;
        for _ in 0..crate::solvers::MAX_HALVINGS {
            let trial = &lambda + t * &d;
            let (ft, gt, _) = cbsr_dual(&phi, &s, &trial);
            let ok = ft.is_finite()
                && (ft <= f + crate::solvers::ARMIJO * t * slope
                    || (ft <= f + 1e-14 * f.abs().max(1.0) && gt.amax() < 0.5 * gn));
            if ok {
                debug_assert!(ft <= f + 1e-12 * f.abs().max(1.0));
                lambda = trial;
                f = ft;
                g = gt;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::Infeasible(format!(
                "cross-group balance cannot be met: dual line search stalled with residual {gn:.3e}"
            )));
        }
        if lambda.norm() > DUAL_LIMIT {
            return Err(Error::Infeasible("cross-group balance cannot be met: dual diverged".into()));
        }
    }
}

fn is_sate_pair(view: &BalanceView, pair: &GroupPair) -> bool {
    view.estimand() == Estimand::Sate && pair.v.len() == view.n()
}

fn side_solution(view: &BalanceView, pair: &GroupPair, w: &[f64], diag: &SolveDiagnostics) -> Result<WeightSolution> {
    let weights = pair.u.iter().map(|&i| w[i]).collect();
    WeightSolution::new("cbsr", view, pair, weights, diag.clone())
}

impl Balancer for Cbsr {
    fn id(&self) -> &'static str {
        "cbsr"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        if is_sate_pair(view, pair) {
            let (w, diag) = cbsr_sate(view, &self.opts)?;
            return side_solution(view, pair, &w, &diag);
        }
        if view.estimand() == Estimand::Satt && pair.role == PairRole::ControlSide {
            let mut s = cbps_exact(view, pair, &self.opts)?;
            s.method = "cbsr".into();
            return Ok(s);
        }
        Err(Error::InvalidInput("cbsr supports the sate and satt estimands".into()))
    }

    fn balance_all(&self, view: &BalanceView, pairs: &[GroupPair]) -> Result<Vec<WeightSolution>> {
        if pairs.iter().all(|p| is_sate_pair(view, p)) {
            let (w, diag) = cbsr_sate(view, &self.opts)?;
            return pairs.iter().map(|p| side_solution(view, p, &w, &diag)).collect();
        }
        pairs.iter().map(|p| self.balance(view, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dual_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let phi = DMatrix::from_fn(9, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let s: Vec<f64> = (0..9).map(|i| if i < 4 { -1.0 } else { 1.0 }).collect();
        let h = 1e-6;
        for _ in 0..10 {
            let l = DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5));
            let (_, g, hs) = cbsr_dual(&phi, &s, &l);
            for c in 0..3 {
                let mut lp = l.clone();
                lp[c] += h;
                let mut lm = l.clone();
                lm[c] -= h;
                let (fp, gp, _) = cbsr_dual(&phi, &s, &lp);
                let (fm, gm, _) = cbsr_dual(&phi, &s, &lm);
                assert!(((fp - fm) / (2.0 * h) - g[c]).abs() <= 1e-5 * g[c].abs().max(1.0));
                for r in 0..3 {
                    assert!(((gp[r] - gm[r]) / (2.0 * h) - hs[(r, c)]).abs() <= 1e-5 * hs[(r, c)].abs().max(1.0));
                }
            }
        }
    }
}
