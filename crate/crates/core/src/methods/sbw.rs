use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::solvers::{qp_over_set, SolveDiagnostics, SolverOptions};
use crate::weights::WeightSet;

use super::{pair_targets, BalanceView, Balancer, FeatureSpec, WeightSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deltas {
    Uniform(f64),
    PerFeature(Vec<f64>),
}

impl Default for Deltas {
    fn default() -> Self {
        Deltas::Uniform(0.02)
    }
}

impl Deltas {
    fn resolve(&self, k: usize) -> Result<Vec<f64>> {
        let d = match self {
            Deltas::Uniform(v) => vec![*v; k],
            Deltas::PerFeature(v) if v.len() == k => v.clone(),
            Deltas::PerFeature(v) => return Err(Error::Dimension { expected: k, got: v.len() }),
        };
        if d.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidInput("tolerances must be nonnegative".into()));
        }
        Ok(d)
    }
}

/// Stable balancing weights: the minimum-variance simplex weights whose
/// feature means lie within `δ` of the V means.
#[derive(Debug, Clone, Default)]
pub struct Sbw {
    pub features: FeatureSpec,
    pub deltas: Deltas,
    pub opts: SolverOptions,
}

const VIOLATION_TOL: f64 = 1e-9;
const RHO_LIMIT: f64 = 1e10;
const OUTER_LIMIT: usize = 400;

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Off,
    Upper,
    Lower,
}

/// Minimizes `‖w‖²` over the simplex subject to `|A w − b| ≤ δ` by an
/// augmented-Lagrangian sequence of simplex QPs. Returns the weights, the
/// achieved `|A w − b|` per feature, and diagnostics.
fn solve(a: &DMatrix<f64>, b: &DVector<f64>, delta: &[f64], names: &[String], opts: &SolverOptions) -> Result<(Vec<f64>, Vec<f64>, SolveDiagnostics)> {
    let start = std::time::Instant::now();
    let (k, m) = a.shape();
    let set = WeightSet::Simplex { dim: m };
    let rows: Vec<DVector<f64>> = (0..k).map(|j| a.row(j).transpose()).collect();
    let mut side = vec![Side::Off; k];
    let mut mu = vec![0.0; k];
    let mut rho: f64 = 10.0;
    let mut last_violation = f64::INFINITY;
    let mut total_iters = 0;
    let mut w = set.uniform();
    let violation = |w: &[f64]| -> (Vec<f64>, f64, usize) {
        let wv = DVector::from_column_slice(w);
        let r: Vec<f64> = (0..k).map(|j| rows[j].dot(&wv) - b[j]).collect();
        let (mut worst, mut at) = (0.0, 0);
        for j in 0..k {
            let v = r[j].abs() - delta[j];
            if v > worst {
                worst = v;
                at = j;
            }
        }
        (r, worst, at)
    };

    for outer in 0..OUTER_LIMIT {
        let (r, worst, at) = violation(&w);
        let mut changed = false;
        for j in 0..k {
            if side[j] == Side::Off {
                if r[j] > delta[j] + VIOLATION_TOL {
                    side[j] = Side::Upper;
                    changed = true;
                } else if r[j] < -delta[j] - VIOLATION_TOL {
                    side[j] = Side::Lower;
                    changed = true;
                }
            }
        }
        if worst <= VIOLATION_TOL && !changed && outer > 0 {
            let wv = DVector::from_column_slice(&w);
            let achieved = r.iter().map(|v| v.abs()).collect();
            return Ok((
                w,
                achieved,
                SolveDiagnostics {
                    objective: wv.norm_squared(),
                    residual_inf_norm: worst.max(0.0),
                    iterations: total_iters,
                    converged: worst.max(0.0) <= opts.grad_tol.max(VIOLATION_TOL),
                    wall_time: start.elapsed().as_secs_f64(),
                },
            ));
        }
        if rho > RHO_LIMIT {
            return Err(Error::Infeasible(format!(
                "balance tolerances cannot be met; feature '{}' misses its tolerance by {:.3e}",
                names[at], worst
            )));
        }

        let mut q = DMatrix::identity(m, m) * 2.0;
        let mut c = DVector::zeros(m);
        for j in 0..k {
            let t = match side[j] {
                Side::Off => continue,
                Side::Upper => b[j] + delta[j],
                Side::Lower => b[j] - delta[j],
            };
            q.ger(rho, &rows[j], &rows[j], 1.0);
            c.axpy(mu[j] - rho * t, &rows[j], 1.0);
        }
        let scale = q.amax().max(1.0);
        let inner = opts.with_grad_tol((1e-12 * scale).max(opts.grad_tol));
        let (next, d) = qp_over_set(&q, &c, &set, &inner)?;
        total_iters += d.iterations;
        w = next;

        let (r, worst, _) = violation(&w);
        for j in 0..k {
            let t = match side[j] {
                Side::Off => continue,
                Side::Upper => b[j] + delta[j],
                Side::Lower => b[j] - delta[j],
            };
            mu[j] += rho * (r[j] + b[j] - t);
            let slack = delta[j] > 0.0;
            let inactive = match side[j] {
                Side::Upper => mu[j] < 0.0,
                Side::Lower => mu[j] > 0.0,
                Side::Off => false,
            };
            if slack && inactive {
                side[j] = Side::Off;
                mu[j] = 0.0;
            }
        }
        if worst > 0.25 * last_violation {
            rho *= 10.0;
        }
        last_violation = worst.max(0.0);
    }
    Err(Error::NotConverged {
        iterations: total_iters,
        residual: last_violation,
    })
}

pub fn sbw(view: &BalanceView, pair: &GroupPair, features: &FeatureSpec, deltas: &Deltas, opts: &SolverOptions) -> Result<WeightSolution> {
    let f = features.build(&view.x(), &view.design().covariate_names(), pair)?;
    let delta = deltas.resolve(f.names.len())?;
    let b = pair_targets(&f.matrix, pair);
    let a = f.matrix.select_rows(&pair.u).transpose();
    let (w, achieved, diag) = solve(&a, &b, &delta, &f.names, opts)?;
    Ok(WeightSolution::new("sbw", view, pair, w, diag)?
        .with_extra("features", &f.names)
        .with_extra("achieved_slack", achieved)
        .with_extra("tolerance", delta))
}

impl Balancer for Sbw {
    fn id(&self) -> &'static str {
        "sbw"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        sbw(view, pair, &self.features, &self.deltas, &self.opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn vacuous_tolerance_gives_uniform() {
        let a = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![0.2]);
        let (w, _, d) = solve(&a, &b, &[100.0], &names(1), &SolverOptions::default()).unwrap();
        assert!(d.converged);
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn forced_point() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let b = DVector::from_vec(vec![0.75]);
        let (w, ach, _) = solve(&a, &b, &[0.0], &names(1), &SolverOptions::default()).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-8 && (w[1] - 0.75).abs() < 1e-8);
        assert!(ach[0] <= 1e-8);
    }

    #[test]
    fn contradictory_targets_are_infeasible() {
        // the same feature twice with different targets
        let a = DMatrix::from_row_slice(2, 3, &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
        let b = DVector::from_vec(vec![0.2, 0.8]);
        let r = solve(&a, &b, &[0.0, 0.0], &names(2), &SolverOptions::default());
        match r {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("f0") || msg.contains("f1")),
            other => panic!("{other:?}"),
        }
    }
}
