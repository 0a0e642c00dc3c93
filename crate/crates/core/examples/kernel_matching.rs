//! Kernel optimal matching: weights that shrink the kernel discrepancy.

use optbal::data::{build_groups, preprocess, EstimandSpec, PreprocessSpec};
use optbal::methods::{run_balancer, Kom};
use optbal::metrics::{mmd_squared, KernelSpec};
use optbal::sim::{generate_scenario, Nonlinearity, ScenarioSpec};

fn main() -> optbal::Result<()> {
    let spec = ScenarioSpec { n: 400, p: 4, assign_nonlinearity: Nonlinearity::Quadratic, seed: 3, ..ScenarioSpec::default() };
    let s = generate_scenario(&spec)?;
    let design = preprocess(&s.data, &PreprocessSpec::default())?;
    let x = design.covariates_only();
    let pair = build_groups(&s.data, &EstimandSpec::satt())?.remove(0);

    let (_, sols) = run_balancer(&Kom::default(), &s.data, &design, &EstimandSpec::satt())?;
    let sol = &sols[0];
    let sigma = sol.extras["bandwidth"].as_f64().unwrap_or(1.0);
    let kernel = KernelSpec::gaussian(sigma);
    let uniform = vec![1.0 / pair.u.len() as f64; pair.u.len()];
    println!("bandwidth {sigma:.3}");
    println!("mmd^2 uniform {:.5}", mmd_squared(&x, &pair, &uniform, &kernel)?);
    println!("mmd^2 kom     {:.5}", mmd_squared(&x, &pair, &sol.weights, &kernel)?);
    let used = sol.weights.iter().filter(|&&w| w > 1e-8).count();
    println!("{used} of {} controls carry weight", pair.u.len());
    Ok(())
}
