use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::KernelSpec;
use crate::solvers::{SearchMode, SolverOptions};
use crate::weights::WeightSet;

use super::{
    check_method_id, Arb, ArbOptions, Balancer, Boss, BossBins, CbpsExact, Cbsr, CrossCoefficient, Deltas, Ebal,
    FeatureSpec, Ipw, Kom, MipMatch, Naive, Propensity, Sbw,
};

/// A method id plus the options the front ends expose.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub id: String,
    pub features: FeatureSpec,
    /// SBW tolerance on every feature.
    pub delta: f64,
    /// Gaussian bandwidth for KOM; median heuristic when absent.
    pub sigma: Option<f64>,
    /// Quantile bins per continuous covariate for BOSS.
    pub bins: usize,
    pub mode: SearchMode,
    /// Matches per target subject for MIPMatch.
    pub ratio: usize,
    /// MIPMatch imbalance penalty applied to every covariate.
    pub omega: f64,
    /// Known propensities by subject id for IPW; fitted when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity: Option<BTreeMap<String, f64>>,
    pub arb: ArbOptions,
    pub solver: SolverOptions,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            id: "ebal".into(),
            features: FeatureSpec::default(),
            delta: 0.02,
            sigma: None,
            bins: 5,
            mode: SearchMode::Local,
            ratio: 1,
            omega: 0.0,
            propensity: None,
            arb: ArbOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl MethodConfig {
    pub fn new(id: &str) -> Self {
        MethodConfig {
            id: id.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_method_id(&self.id)?;
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidInput("delta must be nonnegative".into()));
        }
        if self.sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::InvalidInput("sigma must be positive".into()));
        }
        if self.bins < 1 || self.ratio < 1 {
            return Err(Error::InvalidInput("bins and ratio must be at least 1".into()));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::InvalidInput("omega must be nonnegative".into()));
        }
        self.arb.validate()?;
        self.solver.validate()
    }

    pub fn build(&self) -> Result<Box<dyn Balancer>> {
        self.validate()?;
        let opts = self.solver;
        Ok(match self.id.as_str() {
            "ebal" => Box::new(Ebal {
                features: self.features.clone(),
                base_weights: None,
                opts,
            }),
            "sbw" => Box::new(Sbw {
                features: self.features.clone(),
                deltas: Deltas::Uniform(self.delta),
                opts,
            }),
            "kom" => Box::new(Kom {
                kernel: self.sigma.map_or_else(KernelSpec::default, KernelSpec::gaussian),
                set: WeightSet::Simplex { dim: 0 },
                cross: CrossCoefficient::Standard,
                opts,
            }),
            "boss" => Box::new(Boss {
                bins: BossBins::Quantiles(self.bins),
                mode: self.mode,
                opts,
            }),
            "cbps_exact" => Box::new(CbpsExact { opts }),
            "cbsr" => Box::new(Cbsr { opts }),
            "arb" => Box::new(Arb {
                options: ArbOptions {
                    opts,
                    ..self.arb.clone()
                },
            }),
            "mipmatch" => Box::new(MipMatch {
                ratio: self.ratio,
                omega: vec![self.omega],
                eps: Vec::new(),
                mode: self.mode,
                opts,
            }),
            "ipw" => Box::new(Ipw {
                propensity: self.propensity.clone().map_or(Propensity::Logistic, Propensity::Known),
                opts,
            }),
            "naive" => Box::new(Naive),
            other => unreachable!("validated id {other}"),
        })
    }
}
