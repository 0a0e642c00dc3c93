//! Entropy balancing on a simulated study, then the weighted effect estimate.

use optbal::data::{preprocess, EstimandSpec, PreprocessSpec};
use optbal::estimation::{estimate, score, EstimateConfig};
use optbal::methods::{run_balancer, Ebal};
use optbal::sim::{generate_scenario, ScenarioSpec};

fn main() -> optbal::Result<()> {
    let s = generate_scenario(&ScenarioSpec { n: 2000, p: 6, seed: 7, ..ScenarioSpec::default() })?;
    let design = preprocess(&s.data, &PreprocessSpec::default())?;
    let (_, sols) = run_balancer(&Ebal::default(), &s.data, &design, &EstimandSpec::satt())?;
    let sol = &sols[0];
    println!("{:<8} {:>10} {:>10}", "feature", "before", "after");
    for f in &sol.balance_report {
        println!("{:<8} {:>10.4} {:>10.2e}", f.feature, f.before, f.after);
    }
    println!("newton iterations: {}", sol.diagnostics.iterations);

    for method in ["naive", "ebal"] {
        let out = estimate(&s.data, &EstimateConfig::new(method, EstimandSpec::satt()))?;
        let sc = score(&out.result, &s.truth)?;
        println!("{method:>5}: satt {:.4} (truth {:.4}, standardized bias {:+.4})", out.result.point, s.truth.true_satt, sc.bias);
    }
    Ok(())
}
