//! Propensity-based weighting: known propensities, covariate balancing
//! propensity scores and the stable-residual variant for SATE.

use std::collections::BTreeMap;

use optbal::data::EstimandSpec;
use optbal::estimation::{estimate, EstimateConfig, Normalization};
use optbal::sim::{generate_scenario, ScenarioSpec};

fn main() -> optbal::Result<()> {
    let s = generate_scenario(&ScenarioSpec { n: 3000, p: 6, seed: 5, ..ScenarioSpec::default() })?;
    println!("true sate {:.4}, true satt {:.4}", s.truth.true_sate, s.truth.true_satt);

    let known: BTreeMap<String, f64> = s.data.ids().iter().cloned().zip(s.propensity.iter().copied()).collect();
    for normalization in [Normalization::Hajek, Normalization::Raw] {
        let mut cfg = EstimateConfig::new("ipw", EstimandSpec::sate());
        cfg.method.propensity = Some(known.clone());
        cfg.normalization = normalization;
        let r = estimate(&s.data, &cfg)?.result;
        println!("ipw ({}) sate {:.4}", r.estimator, r.point);
    }

    let r = estimate(&s.data, &EstimateConfig::new("ipw", EstimandSpec::sate()))?.result;
    println!("ipw (fitted logistic) sate {:.4}", r.point);
    for (method, estimand) in [("cbps_exact", EstimandSpec::satt()), ("cbps_exact", EstimandSpec::sate()), ("cbsr", EstimandSpec::sate())] {
        let kind = estimand.kind;
        let r = estimate(&s.data, &EstimateConfig::new(method, estimand))?.result;
        println!("{method} {kind:?} {:.4}", r.point);
    }
    Ok(())
}
