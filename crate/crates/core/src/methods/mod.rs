//! Balancing methods. Every weighting method sees the data through a
//! [`BalanceView`], which exposes covariates and treatment but refuses to
//! hand out outcomes.

mod arb;
mod boss;
mod cbps;
mod cbsr;
mod config;
mod ebal;
mod features;
mod ipw;
mod kom;
mod mipmatch;
mod sbw;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{build_groups, ColumnMeta, Dataset, DesignMatrix, Estimand, EstimandSpec, GroupPair};
use crate::error::{Error, Result};
use crate::metrics::mean_imbalance;
use crate::solvers::SolveDiagnostics;

pub use arb::{arb_satt, Arb, ArbEstimate, ArbOptions, ImbalanceScaling};
pub use boss::{boss, Boss, BossBins, BossObjective};
pub use cbps::{cbps_exact, cbps_moments, CbpsExact};
pub use cbsr::{cbsr_dual, cbsr_sate, Cbsr};
pub use config::MethodConfig;
pub use ebal::{ebal, Ebal};
pub use features::{Basis, FeatureSpec, Features};
pub use ipw::{ipw_weights, Ipw, Naive, Propensity};
pub use kom::{kom, CrossCoefficient, Kom};
pub use mipmatch::{mipmatch_lite, MatchOutcome, MipMatch};
pub use sbw::{sbw, Deltas, Sbw};

static OUTCOME_TRIPS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide count of outcome requests made through any balance view.
pub fn outcome_trips() -> usize {
    OUTCOME_TRIPS.load(Ordering::SeqCst)
}

/// Read-only view of a dataset for the design stage.
pub struct BalanceView<'a> {
    data: &'a Dataset,
    design: &'a DesignMatrix,
    estimand: Estimand,
    trips: AtomicUsize,
}

impl<'a> BalanceView<'a> {
    pub fn new(data: &'a Dataset, design: &'a DesignMatrix, estimand: Estimand) -> Result<Self> {
        if design.nrows() != data.n() {
            return Err(Error::Dimension {
                expected: data.n(),
                got: design.nrows(),
            });
        }
        Ok(BalanceView {
            data,
            design,
            estimand,
            trips: AtomicUsize::new(0),
        })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn design(&self) -> &DesignMatrix {
        self.design
    }

    /// Standardized covariate columns of the design, without intercept.
    pub fn x(&self) -> DMatrix<f64> {
        self.design.covariates_only()
    }

    pub fn raw_covariates(&self) -> &DMatrix<f64> {
        self.data.covariates()
    }

    pub fn raw_columns(&self) -> &[ColumnMeta] {
        self.data.columns()
    }

    pub fn treatment(&self) -> &[bool] {
        self.data.treatment()
    }

    pub fn ids(&self) -> &[String] {
        self.data.ids()
    }

    pub fn estimand(&self) -> Estimand {
        self.estimand
    }

    /// Always refuses; the attempt is counted.
    pub fn outcome(&self) -> Result<&[f64]> {
        self.trips.fetch_add(1, Ordering::SeqCst);
        OUTCOME_TRIPS.fetch_add(1, Ordering::SeqCst);
        Err(Error::OutcomeWithheld)
    }

    pub fn trips(&self) -> usize {
        self.trips.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImbalance {
    pub feature: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSolution {
    pub method: String,
    /// Dataset positions of the weighted subjects, aligned with `weights`.
    pub subjects: Vec<usize>,
    pub weights: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
    pub balance_report: Vec<FeatureImbalance>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, serde_json::Value>,
}

impl WeightSolution {
    pub(crate) fn new(method: &str, view: &BalanceView, pair: &GroupPair, weights: Vec<f64>, diagnostics: SolveDiagnostics) -> Result<Self> {
        if weights.len() != pair.u.len() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput(format!("{method} produced malformed weights")));
        }
        let balance_report = balance_report(view, pair, &weights)?;
        Ok(WeightSolution {
            method: method.to_string(),
            subjects: pair.u.clone(),
            weights,
            diagnostics,
            balance_report,
            extras: BTreeMap::new(),
        })
    }

    pub(crate) fn with_extra(mut self, key: &str, value: impl Serialize) -> Self {
        self.extras
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable extra"));
        self
    }

    pub fn max_imbalance(&self) -> f64 {
        self.balance_report.iter().fold(0.0, |m, f| m.max(f.after))
    }

    /// JSON object with weights keyed by subject id.
    pub fn to_json(&self, ids: &[String]) -> serde_json::Value {
        let weights: serde_json::Map<String, serde_json::Value> = self
            .subjects
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| (ids[i].clone(), serde_json::json!(w)))
            .collect();
        let mut v = serde_json::json!({
            "method": self.method,
            "weights": weights,
            "diagnostics": self.diagnostics,
            "balance_report": self.balance_report,
        });
        if !self.extras.is_empty() {
            v["extras"] = serde_json::to_value(&self.extras).expect("serializable extras");
        }
        v
    }
}

fn balance_report(view: &BalanceView, pair: &GroupPair, w: &[f64]) -> Result<Vec<FeatureImbalance>> {
    let x = view.x();
    let names = view.design().covariate_names();
    let uniform = vec![1.0; pair.u.len()];
    let before = mean_imbalance(&x, pair, &uniform)?;
    let after = if w.iter().all(|&v| v == 0.0) {
        vec![f64::NAN; names.len()]
    } else {
        mean_imbalance(&x, pair, w)?
    };
    Ok(names
        .into_iter()
        .zip(before.into_iter().zip(after))
        .map(|(feature, (before, after))| FeatureImbalance { feature, before, after })
        .collect())
}

/// A weighting method operating on the design stage only.
pub trait Balancer: Sync {
    fn id(&self) -> &'static str;

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution>;

    /// Weights for every pair of an estimand; methods that solve the pairs
    /// jointly override this.
    fn balance_all(&self, view: &BalanceView, pairs: &[GroupPair]) -> Result<Vec<WeightSolution>> {
        pairs.iter().map(|p| self.balance(view, p)).collect()
    }
}

/// Runs a balancer on the pairs of `estimand` and fails if it asked for
/// outcomes along the way.
pub fn run_balancer(
    balancer: &dyn Balancer,
    data: &Dataset,
    design: &DesignMatrix,
    estimand: &EstimandSpec,
) -> Result<(Vec<GroupPair>, Vec<WeightSolution>)> {
    let pairs = build_groups(data, estimand)?;
    let view = BalanceView::new(data, design, estimand.kind)?;
    let result = balancer.balance_all(&view, &pairs);
    if view.trips() > 0 {
        return Err(Error::OutcomeWithheld);
    }
    Ok((pairs, result?))
}

/// Method identifiers accepted by the front ends.
pub const METHOD_IDS: &[&str] = &[
    "ebal", "sbw", "kom", "boss", "cbps_exact", "cbsr", "arb", "mipmatch", "ipw", "naive",
];

pub fn check_method_id(id: &str) -> Result<()> {
    if METHOD_IDS.contains(&id) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "unknown method '{id}'; valid methods: {}",
            METHOD_IDS.join(", ")
        )))
    }
}

pub(crate) fn pair_targets(x: &DMatrix<f64>, pair: &GroupPair) -> nalgebra::DVector<f64> {
    let nv = pair.v.len() as f64;
    nalgebra::DVector::from_fn(x.ncols(), |k, _| pair.v.iter().map(|&j| x[(j, k)]).sum::<f64>() / nv)
}
