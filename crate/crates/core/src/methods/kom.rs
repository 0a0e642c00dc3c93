use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::metrics::{KernelSpec, PairKernels};
use crate::solvers::{qp_over_set, SolverOptions};
use crate::weights::WeightSet;

use super::{BalanceView, Balancer, WeightSolution};

/// Coefficient on the cross term `wᵀ K_UV 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossCoefficient {
    /// `2/|V|`, which makes the objective the squared kernel discrepancy.
    #[default]
    Standard,
    /// `2|U|/|V|`.
    AsPrinted,
}

/// Kernel optimal matching: weights minimizing the kernel discrepancy
/// between the weighted U and V.
#[derive(Debug, Clone)]
pub struct Kom {
    pub kernel: KernelSpec,
    /// Shape of the weight set; its dimension is taken from U.
    pub set: WeightSet,
    pub cross: CrossCoefficient,
    pub opts: SolverOptions,
}

impl Default for Kom {
    fn default() -> Self {
        Kom {
            kernel: KernelSpec::default(),
            set: WeightSet::Simplex { dim: 0 },
            cross: CrossCoefficient::Standard,
            opts: SolverOptions::default(),
        }
    }
}

fn sized(set: &WeightSet, m: usize) -> Result<WeightSet> {
    match *set {
        WeightSet::Simplex { .. } => Ok(WeightSet::Simplex { dim: m }),
        WeightSet::BSimplex { b, .. } => Ok(WeightSet::BSimplex { dim: m, b }),
        WeightSet::General { .. } => Ok(WeightSet::General { dim: m }),
        _ => Err(Error::InvalidInput("kernel matching needs a convex weight set".into())),
    }
}

pub fn kom(
    view: &BalanceView,
    pair: &GroupPair,
    kernel: &KernelSpec,
    set: &WeightSet,
    cross: CrossCoefficient,
    opts: &SolverOptions,
) -> Result<WeightSolution> {
    let x = view.x();
    let m = pair.u.len();
    let nv = pair.v.len() as f64;
    let set = sized(set, m)?;
    let rows: Vec<usize> = pair.u.iter().chain(&pair.v).copied().collect();
    let sigma = kernel.resolve(&x.select_rows(&rows))?;
    let k = PairKernels::new(&x, pair, sigma)?;
    let factor = match cross {
        CrossCoefficient::Standard => 2.0 / nv,
        CrossCoefficient::AsPrinted => 2.0 * m as f64 / nv,
    };
    let q = &k.uu * 2.0;
    let c = DVector::from_fn(m, |i, _| -factor * k.uv.row(i).sum());
    let (w, diag) = qp_over_set(&q, &c, &set, opts)?;
    let mmd = k.mmd_squared(&w);
    Ok(WeightSolution::new("kom", view, pair, w, diag)?
        .with_extra("mmd_squared", mmd)
        .with_extra("bandwidth", sigma)
        .with_extra("cross_coefficient", cross))
}

impl Balancer for Kom {
    fn id(&self) -> &'static str {
        "kom"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        kom(view, pair, &self.kernel, &self.set, self.cross, &self.opts)
    }
}
