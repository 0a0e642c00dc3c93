use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::solvers::{entropy_dual_newton, SolverOptions};

use super::{pair_targets, BalanceView, Balancer, FeatureSpec, WeightSolution};

/// Entropy balancing: the simplex weights closest to `q` in KL divergence
/// whose weighted feature means equal the V means exactly.
#[derive(Debug, Clone, Default)]
pub struct Ebal {
    pub features: FeatureSpec,
    /// Base weights over U; uniform when absent.
    pub base_weights: Option<Vec<f64>>,
    pub opts: SolverOptions,
}

pub fn ebal(view: &BalanceView, pair: &GroupPair, features: &FeatureSpec, q: Option<&[f64]>, opts: &SolverOptions) -> Result<WeightSolution> {
    let m = pair.u.len();
    let uniform = vec![1.0 / m as f64; m];
    let q = q.unwrap_or(&uniform);
    if q.len() != m {
        return Err(Error::Dimension { expected: m, got: q.len() });
    }
    let f = features.build(&view.x(), &view.design().covariate_names(), pair)?;
    let b = pair_targets(&f.matrix, pair);
    let a = f.matrix.select_rows(&pair.u).transpose();
    let sol = entropy_dual_newton(&a, &b, q, opts)?;
    Ok(WeightSolution::new("ebal", view, pair, sol.weights, sol.diagnostics)?
        .with_extra("features", &f.names)
        .with_extra("duals", sol.duals.as_slice()))
}

impl Balancer for Ebal {
    fn id(&self) -> &'static str {
        "ebal"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        ebal(view, pair, &self.features, self.base_weights.as_deref(), &self.opts)
    }
}
