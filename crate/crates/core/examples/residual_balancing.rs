use optbal::data::{preprocess, PreprocessSpec};
use optbal::methods::{arb_satt, ArbOptions};
use optbal::sim::{generate_scenario, Nonlinearity, ScenarioSpec};

fn main() -> optbal::Result<()> {
    let spec = ScenarioSpec { n: 1500, p: 20, response_nonlinearity: Nonlinearity::Interactions, seed: 8, ..ScenarioSpec::default() };
    let s = generate_scenario(&spec)?;
    let design = preprocess(&s.data, &PreprocessSpec::default())?;

    for eta in [0.1, 0.5, 0.9] {
        let fit = arb_satt(&s.data, &design, &ArbOptions { eta, ..ArbOptions::default() })?;
        let nonzero = fit.alpha.iter().filter(|a| a.abs() > 1e-10).count();
        println!(
            "eta {eta}: satt {:.4} (truth {:.4}), lambda {:.4}, {nonzero}/{} coefficients kept",
            fit.estimate,
            s.truth.true_satt,
            fit.lambda,
            fit.alpha.len()
        );
    }
    Ok(())
}
