//! Effect estimates from weights, ground-truth estimands for simulated data,
//! and standardized bias scoring.

use serde::{Deserialize, Serialize};

use crate::data::{preprocess, Dataset, Estimand, EstimandSpec, PreprocessSpec};
use crate::error::{Error, Result};
use crate::methods::{arb_satt, run_balancer, MethodConfig, WeightSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Each group's weighted outcome sum divided by its weight sum.
    #[default]
    Hajek,
    /// Signed inverse-probability sums divided by the sample size (SATE) or
    /// the treated count (SATT).
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub group: String,
    pub min: f64,
    pub max: f64,
    pub sum: f64,
}

impl WeightsSummary {
    fn of(group: &str, w: &[f64]) -> Self {
        WeightsSummary {
            group: group.into(),
            min: w.iter().copied().fold(f64::INFINITY, f64::min),
            max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sum: w.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimand: EstimandSpec,
    pub point: f64,
    pub method: String,
    /// `hajek`, `raw` or `augmented`.
    pub estimator: String,
    pub n_used: usize,
    pub weights_summary: Vec<WeightsSummary>,
}

fn outcome(d: &Dataset) -> Result<&[f64]> {
    d.outcome()
        .ok_or_else(|| Error::InvalidInput("estimation needs an outcome column".into()))
}

/// Spreads group-aligned weights back to dataset positions.
fn by_position(d: &Dataset, w_treated: &[f64], w_control: &[f64]) -> Result<Vec<f64>> {
    let (t, c) = (d.treated_indices(), d.control_indices());
    if w_treated.len() != t.len() {
        return Err(Error::Dimension { expected: t.len(), got: w_treated.len() });
    }
    if w_control.len() != c.len() {
        return Err(Error::Dimension { expected: c.len(), got: w_control.len() });
    }
    let mut w = vec![0.0; d.n()];
    for (&i, &v) in t.iter().zip(w_treated).chain(c.iter().zip(w_control)) {
        w[i] = v;
    }
    Ok(w)
}

/// Hájek weighted difference in means. `w_treated` follows
/// [`Dataset::treated_indices`] and `w_control` follows
/// [`Dataset::control_indices`]; sums run in sorted-id order.
pub fn weighted_diff_means(d: &Dataset, estimand: &EstimandSpec, w_treated: &[f64], w_control: &[f64]) -> Result<EstimateResult> {
    let y = outcome(d)?;
    let w = by_position(d, w_treated, w_control)?;
    let z = d.treatment();
    let (mut st, mut swt, mut sc, mut swc) = (0.0, 0.0, 0.0, 0.0);
    for i in d.id_order() {
        if z[i] {
            st += w[i] * y[i];
            swt += w[i];
        } else {
            sc += w[i] * y[i];
            swc += w[i];
        }
    }
    if swt == 0.0 || swc == 0.0 || !swt.is_finite() || !swc.is_finite() {
        return Err(Error::InvalidInput("weights in each group must have a nonzero finite sum".into()));
    }
    Ok(EstimateResult {
        estimand: estimand.clone(),
        point: st / swt - sc / swc,
        method: String::new(),
        estimator: "hajek".into(),
        n_used: w.iter().filter(|&&v| v != 0.0).count(),
        weights_summary: vec![WeightsSummary::of("treated", w_treated), WeightsSummary::of("control", w_control)],
    })
}

/// Estimate from signed inverse-probability weights over every subject, as
/// produced by [`crate::methods::ipw_weights`].
pub fn ipw_sate_estimate(d: &Dataset, w: &[f64], normalization: Normalization) -> Result<EstimateResult> {
    signed_estimate(d, w, &EstimandSpec::sate(), normalization)
}

fn signed_estimate(d: &Dataset, w: &[f64], estimand: &EstimandSpec, normalization: Normalization) -> Result<EstimateResult> {
    if w.len() != d.n() {
        return Err(Error::Dimension { expected: d.n(), got: w.len() });
    }
    let z = d.treatment();
    let split = |keep: bool| -> Vec<f64> { (0..d.n()).filter(|&i| z[i] == keep).map(|i| w[i].abs()).collect() };
    match normalization {
        Normalization::Hajek => {
            let mut r = weighted_diff_means(d, estimand, &split(true), &split(false))?;
            r.method = "ipw".into();
            Ok(r)
        }
        Normalization::Raw => {
            let y = outcome(d)?;
            let denom = match estimand.kind {
                Estimand::Sate => d.n() as f64,
                Estimand::Satt => d.treated_indices().len() as f64,
                Estimand::Cate => {
                    return Err(Error::InvalidInput("raw inverse-probability estimates cover sate and satt".into()))
                }
            };
            let total: f64 = d.id_order().into_iter().map(|i| w[i] * y[i]).sum();
            let (wt, wc) = (split(true), split(false));
            Ok(EstimateResult {
                estimand: estimand.clone(),
                point: total / denom,
                method: "ipw".into(),
                estimator: "raw".into(),
                n_used: w.iter().filter(|&&v| v != 0.0).count(),
                weights_summary: vec![WeightsSummary::of("treated", &wt), WeightsSummary::of("control", &wc)],
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl PotentialOutcomes {
    /// `(1−Z)·Y(0) + Z·Y(1)`.
    pub fn observed(&self, z: &[bool]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &t)| if t { self.y1[i] } else { self.y0[i] })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub true_sate: f64,
    pub true_satt: f64,
    /// Sample standard deviation of the observed outcomes.
    pub outcome_sd: f64,
}

pub fn true_estimands(po: &PotentialOutcomes, z: &[bool]) -> TruthRecord {
    let n = z.len();
    let diff: Vec<f64> = po.y1.iter().zip(&po.y0).map(|(a, b)| a - b).collect();
    let true_sate = diff.iter().sum::<f64>() / n as f64;
    let n1 = z.iter().filter(|&&t| t).count();
    let true_satt = (0..n).filter(|&i| z[i]).map(|i| diff[i]).sum::<f64>() / n1 as f64;
    let y = po.observed(z);
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    TruthRecord {
        true_sate,
        true_satt,
        outcome_sd: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub bias: f64,
    pub squared_bias: f64,
}

/// Bias in outcome-SD units against the truth matching the estimand.
pub fn score(estimate: &EstimateResult, truth: &TruthRecord) -> Result<Score> {
    if !(truth.outcome_sd > 0.0) {
        return Err(Error::InvalidInput("outcome standard deviation must be positive".into()));
    }
    let target = match estimate.estimand.kind {
        Estimand::Sate => truth.true_sate,
        Estimand::Satt => truth.true_satt,
        Estimand::Cate => return Err(Error::InvalidInput("no recorded truth for cate".into())),
    };
    let bias = (estimate.point - target) / truth.outcome_sd;
    Ok(Score {
        bias,
        squared_bias: bias * bias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub solved: usize,
    pub mean_bias: f64,
    /// Sample standard deviation; zero with fewer than two values.
    pub sd_bias: f64,
    pub rmse: f64,
}

/// Mean, SD and RMSE of standardized biases over solved runs.
pub fn aggregate(biases: &[f64]) -> BiasSummary {
    let k = biases.len();
    if k == 0 {
        return BiasSummary {
            solved: 0,
            mean_bias: f64::NAN,
            sd_bias: f64::NAN,
            rmse: f64::NAN,
        };
    }
    let mean = biases.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (biases.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    let rmse = (biases.iter().map(|b| b * b).sum::<f64>() / k as f64).sqrt();
    BiasSummary {
        solved: k,
        mean_bias: mean,
        sd_bias: sd,
        rmse,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub method: MethodConfig,
    pub estimand: EstimandSpec,
    pub preprocess: PreprocessSpec,
    pub normalization: Normalization,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            method: MethodConfig::default(),
            estimand: EstimandSpec::satt(),
            preprocess: PreprocessSpec::default(),
            normalization: Normalization::Hajek,
        }
    }
}

impl EstimateConfig {
    pub fn new(method: &str, estimand: EstimandSpec) -> Self {
        EstimateConfig {
            method: MethodConfig::new(method),
            estimand,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub result: EstimateResult,
    pub solutions: Vec<WeightSolution>,
    /// Subject ids in the order the solutions' positions refer to.
    pub ids: Vec<String>,
}

/// Balances on covariates only, then estimates the effect. Subjects are put
/// in id order first so the result does not depend on input row order.
pub fn estimate(d: &Dataset, cfg: &EstimateConfig) -> Result<EstimateOutput> {
    outcome(d)?;
    cfg.method.validate()?;
    let data = d.permuted(&d.id_order())?;
    let design = preprocess(&data, &cfg.preprocess)?;
    let ids = data.ids().to_vec();

    if cfg.method.id == "arb" {
        if cfg.estimand.kind != Estimand::Satt {
            return Err(Error::InvalidInput("arb estimates the satt only".into()));
        }
        let options = crate::methods::ArbOptions {
            opts: cfg.method.solver,
            ..cfg.method.arb.clone()
        };
        let arb = arb_satt(&data, &design, &options)?;
        let n1 = data.treated_indices().len();
        let result = EstimateResult {
            estimand: cfg.estimand.clone(),
            point: arb.estimate,
            method: "arb".into(),
            estimator: "augmented".into(),
            n_used: n1 + arb.weights.weights.iter().filter(|&&v| v != 0.0).count(),
            weights_summary: vec![
                WeightsSummary::of("treated", &vec![1.0; n1]),
                WeightsSummary::of("control", &arb.weights.weights),
            ],
        };
        return Ok(EstimateOutput {
            result,
            solutions: vec![arb.weights],
            ids,
        });
    }

    if cfg.normalization == Normalization::Raw && cfg.method.id != "ipw" {
        return Err(Error::InvalidInput("raw normalization applies to ipw only".into()));
    }
    let balancer = cfg.method.build()?;
    let (_, solutions) = run_balancer(balancer.as_ref(), &data, &design, &cfg.estimand)?;
    let mut w = vec![f64::NAN; data.n()];
    if cfg.estimand.kind == Estimand::Satt {
        for i in data.treated_indices() {
            w[i] = 1.0;
        }
    }
    for sol in &solutions {
        for (&i, &v) in sol.subjects.iter().zip(&sol.weights) {
            w[i] = v;
        }
    }
    let z = data.treatment();
    let mut result = if cfg.normalization == Normalization::Raw {
        let signed: Vec<f64> = (0..data.n()).map(|i| if z[i] { w[i] } else { -w[i] }).collect();
        signed_estimate(&data, &signed, &cfg.estimand, Normalization::Raw)?
    } else {
        let wt: Vec<f64> = data.treated_indices().iter().map(|&i| w[i]).collect();
        let wc: Vec<f64> = data.control_indices().iter().map(|&i| w[i]).collect();
        weighted_diff_means(&data, &cfg.estimand, &wt, &wc)?
    };
    result.method = cfg.method.id.clone();
    Ok(EstimateOutput { result, solutions, ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let rows = vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]];
        Dataset::from_rows(&rows, &[1, 1, 0, 0], Some(&[2.0, 4.0, 1.0, 1.0])).unwrap()
    }

    #[test]
    fn uniform_weights_give_group_mean_difference() {
        let r = weighted_diff_means(&small(), &EstimandSpec::satt(), &[1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_eq!(r.point, 2.0);
        assert_eq!(r.n_used, 4);
    }

    #[test]
    fn point_masses_pick_single_outcomes() {
        let r = weighted_diff_means(&small(), &EstimandSpec::satt(), &[0.0, 3.0], &[2.0, 0.0]).unwrap();
        assert_eq!(r.point, 3.0);
        assert!(weighted_diff_means(&small(), &EstimandSpec::satt(), &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn raw_ipw_hand_value() {
        let rows = vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]];
        let d = Dataset::from_rows(&rows, &[1, 1, 0, 0], Some(&[3.0, 1.0, 2.0, 0.0])).unwrap();
        let w = crate::methods::ipw_weights(d.treatment(), Estimand::Sate, &[0.5; 4]).unwrap();
        let r = ipw_sate_estimate(&d, &w, Normalization::Raw).unwrap();
        assert_eq!(r.point, 1.0);
        assert_eq!(r.estimator, "raw");
        let h = ipw_sate_estimate(&d, &w, Normalization::Hajek).unwrap();
        assert_eq!(h.estimator, "hajek");
    }

    #[test]
    fn truths_and_scores() {
        let po = PotentialOutcomes {
            y0: vec![0.0, 1.0, 2.0, 3.0],
            y1: vec![2.0, 3.0, 4.0, 5.0],
        };
        let z = [true, false, true, false];
        let t = true_estimands(&po, &z);
        assert_eq!((t.true_sate, t.true_satt), (2.0, 2.0));
        assert_eq!(po.observed(&z), vec![2.0, 1.0, 4.0, 3.0]);
        let r = EstimateResult {
            estimand: EstimandSpec::satt(),
            point: 2.0,
            method: "x".into(),
            estimator: "hajek".into(),
            n_used: 4,
            weights_summary: vec![],
        };
        assert_eq!(score(&r, &t).unwrap().bias, 0.0);
        let a = aggregate(&[0.1, -0.1]);
        assert_eq!(a.mean_bias, 0.0);
        assert!((a.rmse - 0.1).abs() < 1e-15);
    }
}
