//! Optimization engines shared by the balancing methods.

mod enet;
mod entropy;
mod logistic;
mod newton;
mod qp;
mod subset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use enet::{elastic_net, elastic_net_cv, kkt_residual, EnetCv};
pub use entropy::{entropy_dual_newton, entropy_dual_objective, EntropySolution};
pub use logistic::{logistic_fit, logistic_gradient, logistic_objective, LogisticFit};
pub use newton::moment_newton;
pub use qp::{qp_objective, qp_over_set};
pub use subset::{subset_search, ClosureObjective, SearchMode, SubsetObjective};

pub(crate) const ARMIJO: f64 = 1e-4;
pub(crate) const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Constant step length, no line search.
    Fixed(f64),
    /// Halving until the sufficient-decrease condition holds.
    Backtracking,
    /// Conditional-gradient steps with exact line search (set-constrained
    /// QP only; other solvers treat it as backtracking).
    FrankWolfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_rule: StepRule,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 500,
            grad_tol: 1e-9,
            step_rule: StepRule::Backtracking,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidInput("grad_tol must be positive".into()));
        }
        if let StepRule::Fixed(t) = self.step_rule {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidInput("fixed step must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_grad_tol(mut self, grad_tol: f64) -> Self {
        self.grad_tol = grad_tol;
        self
    }
}

/// Wall time is kept out of serialized output so that repeated runs write
/// identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub objective: f64,
    pub residual_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

pub(crate) fn inf_norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}
