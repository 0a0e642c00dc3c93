use optbal::data::{preprocess, EstimandSpec, PreprocessSpec};
use optbal::methods::{run_balancer, Deltas, FeatureSpec, Sbw};
use optbal::sim::{generate_scenario, ScenarioSpec};
use optbal::Error;

fn main() -> optbal::Result<()> {
    let s = generate_scenario(&ScenarioSpec { n: 600, p: 5, seed: 2, ..ScenarioSpec::default() })?;
    let design = preprocess(&s.data, &PreprocessSpec::default())?;

    // Looser tolerances buy more even weights.
    for delta in [0.0, 0.01, 0.05, 0.2] {
        let sbw = Sbw { deltas: Deltas::Uniform(delta), ..Sbw::default() };
        let (_, sols) = run_balancer(&sbw, &s.data, &design, &EstimandSpec::satt())?;
        let w = &sols[0].weights;
        let sumsq: f64 = w.iter().map(|x| x * x).sum();
        println!(
            "delta {delta:<5} max imbalance {:.4}  effective sample size {:.1}",
            sols[0].max_imbalance(),
            1.0 / sumsq
        );
    }

    let tiny = generate_scenario(&ScenarioSpec { n: 40, p: 10, seed: 1, ..ScenarioSpec::default() })?;
    let design = preprocess(&tiny.data, &PreprocessSpec::default())?;
    let exact = Sbw {
        deltas: Deltas::Uniform(0.0),
        features: "raw+squares+interactions".parse::<FeatureSpec>()?,
        ..Sbw::default()
    };
    match run_balancer(&exact, &tiny.data, &design, &EstimandSpec::satt()) {
        Err(e @ Error::Infeasible(_)) => println!("40 subjects, 65 exact constraints: {e}"),
        other => println!("unexpected: {:?}", other.map(|_| ())),
    }
    Ok(())
}
