use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{inf_norm, SolveDiagnostics, SolverOptions, StepRule, ARMIJO, MAX_HALVINGS};
use crate::error::{Error, Result};
use crate::weights::WeightSet;

/// `½ wᵀQw + cᵀw`
pub fn qp_objective(q: &DMatrix<f64>, c: &DVector<f64>, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    0.5 * w.dot(&(q * &w)) + c.dot(&w)
}

fn check_psd(q: &DMatrix<f64>) -> Result<()> {
    let m = q.nrows();
    let scale = q.amax().max(1.0);
    for i in 0..m {
        for j in 0..i {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidInput("quadratic term is not symmetric".into()));
            }
        }
    }
    let mut shifted = q.clone();
    for i in 0..m {
        shifted[(i, i)] += 1e-8 * scale;
    }
    if shifted.cholesky().is_none() {
        return Err(Error::InvalidInput("quadratic term is not positive semidefinite".into()));
    }
    Ok(())
}

struct Problem<'a> {
    q: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    upper: f64,
}

impl Problem<'_> {
    fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        self.q * w + self.c
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(self.q * w)) + self.c.dot(w)
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = if self.upper >= 1.0 {
            crate::weights::project_simplex(v.as_slice())
        } else {
            crate::weights::project_box_simplex(v.as_slice(), self.upper)
        };
        DVector::from_vec(p.expect("finite input"))
    }

    fn pg_norm(&self, w: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let p = self.project(&(w - g));
        inf_norm((w - p).iter())
    }

    /// Minimizes over the free coordinates with the others held at their
    /// bounds and the total fixed, then steps toward that minimizer as far
    /// as the box allows.
    fn subspace_step(&self, w: &DVector<f64>) -> Option<DVector<f64>> {
        let m = w.len();
        let tol = 1e-14;
        let free: Vec<usize> = (0..m).filter(|&i| w[i] > tol && w[i] < self.upper - tol).collect();
        if free.is_empty() {
            return None;
        }
        let g = self.grad(w);
        let f = free.len();
        let mut h = DMatrix::from_fn(f, f, |a, b| self.q[(free[a], free[b])]);
        let shift = 1e-12 * h.diagonal().amax().max(1e-300);
        for i in 0..f {
            h[(i, i)] += shift;
        }
        let ch = h.cholesky()?;
        // Newton step on the free block keeping Σ d = 0
        let rhs = DVector::from_fn(f, |a, _| -g[free[a]]);
        let x = ch.solve(&rhs);
        let y = ch.solve(&DVector::from_element(f, 1.0));
        let nu = x.sum() / y.sum();
        let d = x - nu * y;
        if !d.iter().all(|v| v.is_finite()) || d.amax() == 0.0 {
            return None;
        }
        let mut alpha: f64 = 1.0;
        for (a, &i) in free.iter().enumerate() {
            if d[a] < 0.0 {
                alpha = alpha.min(-w[i] / d[a]);
            } else if d[a] > 0.0 && self.upper.is_finite() {
                alpha = alpha.min((self.upper - w[i]) / d[a]);
            }
        }
        let mut next = w.clone();
        for (a, &i) in free.iter().enumerate() {
            next[i] = (w[i] + alpha * d[a]).clamp(0.0, self.upper);
        }
        let total = next.sum();
        let fix = (1.0 - total) / f as f64;
        for &i in &free {
            next[i] = (next[i] + fix).clamp(0.0, self.upper);
        }
        Some(next)
    }
}

fn lipschitz_bound(q: &DMatrix<f64>) -> f64 {
    (0..q.nrows())
        .map(|i| q.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12)
}

/// Minimizes `½ wᵀQw + cᵀw` over a convex weight set: the simplex, the
/// capped simplex, or all of `ℝᵐ`.
pub fn qp_over_set(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    set: &WeightSet,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    opts.validate()?;
    set.validate()?;
    let start = Instant::now();
    let m = set.dim();
    if q.nrows() != m || q.ncols() != m {
        return Err(Error::Dimension { expected: m, got: q.nrows() });
    }
    if c.len() != m {
        return Err(Error::Dimension { expected: m, got: c.len() });
    }
    check_psd(q)?;
    let upper = match *set {
        WeightSet::Simplex { .. } => f64::INFINITY,
        WeightSet::BSimplex { b, .. } => b,
        WeightSet::General { .. } => return conjugate_gradient(q, c, opts, start),
        _ => return Err(Error::InvalidInput("quadratic solver needs a convex weight set".into())),
    };
    let p = Problem { q, c, upper };
    let mut w = DVector::from_vec(set.uniform());
    let mut f = p.value(&w);
    let lip = lipschitz_bound(q);
    let mut step = 1.0 / lip;
    let mut iterations = 0;
    loop {
        let g = p.grad(&w);
        let pg = p.pg_norm(&w, &g);
        if pg <= opts.grad_tol || iterations >= opts.max_iters {
            return Ok((
                w.as_slice().to_vec(),
                SolveDiagnostics {
                    objective: f,
                    residual_inf_norm: pg,
                    iterations,
                    converged: pg <= opts.grad_tol,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            ));
        }
        iterations += 1;
        let prev = f;
        match opts.step_rule {
            StepRule::FrankWolfe => {
                // vertex of the set minimizing the linearization
                let mut s = DVector::zeros(m);
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
                let mut left: f64 = 1.0;
                for &i in &order {
                    let take = left.min(upper);
                    s[i] = take;
                    left -= take;
                    if left <= 0.0 {
                        break;
                    }
                }
                let d = s - &w;
                let curv = d.dot(&(q * &d));
                let slope = g.dot(&d);
                let t = if curv > 0.0 { (-slope / curv).clamp(0.0, 1.0) } else { 1.0 };
                let next = &w + d * t;
                let fn_ = p.value(&next);
                if fn_ <= f {
                    w = next;
                    f = fn_;
                }
            }
            StepRule::Fixed(t) => {
                let next = p.project(&(&w - t * &g));
                w = next;
                f = p.value(&w);
            }
            StepRule::Backtracking => {
                let mut t = step * 4.0;
                let mut moved = false;
                for _ in 0..MAX_HALVINGS {
                    let next = p.project(&(&w - t * &g));
                    let fn_ = p.value(&next);
                    if fn_ <= f + ARMIJO * g.dot(&(&next - &w)) {
                        moved = fn_ < f || next != w;
                        w = next;
                        f = fn_;
                        step = t;
                        break;
                    }
                    t *= 0.5;
                }
                if let Some(next) = p.subspace_step(&w) {
                    let fn_ = p.value(&next);
                    if fn_ <= f {
                        w = next;
                        f = fn_;
                        moved = true;
                    }
                }
                if !moved {
                    step = 1.0 / lip;
                }
            }
        }
        if !matches!(opts.step_rule, StepRule::Fixed(_)) {
            debug_assert!(f <= prev + 1e-12 * prev.abs().max(1.0));
        }
    }
}

fn conjugate_gradient(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    opts: &SolverOptions,
    start: Instant,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    let m = c.len();
    let mut w = DVector::zeros(m);
    let mut r = -c.clone();
    let mut d = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    let limit = opts.max_iters.max(2 * m);
    while inf_norm(r.iter()) > opts.grad_tol && iterations < limit {
        iterations += 1;
        let qd = q * &d;
        let curv = d.dot(&qd);
        if curv <= 1e-14 * d.dot(&d) {
            return Err(Error::Infeasible("quadratic objective is unbounded below".into()));
        }
        let alpha = rr / curv;
        w += alpha * &d;
        r -= alpha * qd;
        let next = r.dot(&r);
        d = &r + (next / rr) * d;
        rr = next;
    }
    let residual = inf_norm((q * &w + c).iter());
    let objective = qp_objective(q, c, w.as_slice());
    Ok((
        w.as_slice().to_vec(),
        SolveDiagnostics {
            objective,
            residual_inf_norm: residual,
            iterations,
            converged: residual <= opts.grad_tol,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, m: usize, rank: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(m, rank, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    #[test]
    fn identity_gives_uniform() {
        let q = DMatrix::identity(4, 4);
        let c = DVector::zeros(4);
        let (w, d) = qp_over_set(&q, &c, &WeightSet::Simplex { dim: 4 }, &SolverOptions::default()).unwrap();
        assert!(d.converged);
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    fn grid_min(q: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=(1000 - i) {
                let w = [i as f64 / 1000.0, j as f64 / 1000.0, (1000 - i - j) as f64 / 1000.0];
                best = best.min(qp_objective(q, c, &w));
            }
        }
        best
    }

    #[test]
    fn matches_simplex_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let q = random_psd(&mut rng, 3, 3);
            let c = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let (w, d) = qp_over_set(&q, &c, &WeightSet::Simplex { dim: 3 }, &SolverOptions::default()).unwrap();
            assert!(d.converged);
            let grid = grid_min(&q, &c);
            assert!(d.objective <= grid + 1e-12);
            assert!(grid - d.objective <= 1e-5);
            assert!((qp_objective(&q, &c, &w) - d.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn capped_simplex_with_unit_cap_equals_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_psd(&mut rng, 5, 2);
        let c = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let o = SolverOptions::default();
        let (a, _) = qp_over_set(&q, &c, &WeightSet::Simplex { dim: 5 }, &o).unwrap();
        let (b, _) = qp_over_set(&q, &c, &WeightSet::BSimplex { dim: 5, b: 1.0 }, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cap_is_respected() {
        let q = DMatrix::zeros(4, 4);
        let c = DVector::from_vec(vec![-1.0, 0.0, 0.0, 0.0]);
        let (w, d) = qp_over_set(&q, &c, &WeightSet::BSimplex { dim: 4, b: 0.4 }, &SolverOptions::default()).unwrap();
        assert!(d.converged);
        assert!((w[0] - 0.4).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x <= 0.4 + 1e-12));
    }

    #[test]
    fn never_worse_than_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for m in [2usize, 5, 20, 60] {
            let q = random_psd(&mut rng, m, m.min(4));
            let c = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let (_, d) = qp_over_set(&q, &c, &WeightSet::Simplex { dim: m }, &SolverOptions::default()).unwrap();
            assert!(d.objective <= qp_objective(&q, &c, &vec![1.0 / m as f64; m]));
            assert!(d.converged, "m = {m}: {d:?}");
        }
    }

    #[test]
    fn frank_wolfe_makes_progress() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = random_psd(&mut rng, 3, 3);
        let c = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let o = SolverOptions {
            step_rule: StepRule::FrankWolfe,
            max_iters: 20_000,
            grad_tol: 1e-6,
            seed: 0,
        };
        let (_, d) = qp_over_set(&q, &c, &WeightSet::Simplex { dim: 3 }, &o).unwrap();
        assert!(d.objective - grid_min(&q, &c) <= 1e-4);
    }

    #[test]
    fn general_set_solves_linear_system() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DVector::from_vec(vec![-1.0, 1.0]);
        let (w, d) = qp_over_set(&q, &c, &WeightSet::General { dim: 2 }, &SolverOptions::default()).unwrap();
        let exact = q.clone().lu().solve(&(-&c)).unwrap();
        assert!(d.converged);
        assert!((w[0] - exact[0]).abs() < 1e-10 && (w[1] - exact[1]).abs() < 1e-10);
    }

    #[test]
    fn rejects_indefinite() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = qp_over_set(&q, &DVector::zeros(2), &WeightSet::Simplex { dim: 2 }, &SolverOptions::default());
        assert!(r.is_err());
        let r = qp_over_set(
            &DMatrix::identity(3, 3),
            &DVector::zeros(3),
            &WeightSet::BSimplex { dim: 3, b: 0.2 },
            &SolverOptions::default(),
        );
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
