use optbal::data::{preprocess, EstimandSpec, PreprocessSpec};
use optbal::estimation::{estimate, EstimateConfig};
use optbal::methods::{run_balancer, Boss};
use optbal::sim::{generate_scenario, ScenarioSpec};

fn main() -> optbal::Result<()> {
    let spec = ScenarioSpec { n: 500, p: 6, treated_fraction_target: 0.25, seed: 11, ..ScenarioSpec::default() };
    let s = generate_scenario(&spec)?;
    let design = preprocess(&s.data, &PreprocessSpec::default())?;

    for bins in [3, 5, 8] {
        let boss = Boss { bins: optbal::methods::BossBins::Quantiles(bins), ..Boss::default() };
        let (_, sols) = run_balancer(&boss, &s.data, &design, &EstimandSpec::satt())?;
        let chosen = sols[0].weights.iter().filter(|&&w| w > 0.0).count();
        println!(
            "{bins} bins: objective {:.3}, {chosen} controls selected, max mean gap {:.3}",
            sols[0].extras["objective"], sols[0].max_imbalance()
        );
    }
    let mut cfg = EstimateConfig::new("boss", EstimandSpec::satt());
    cfg.method.bins = 5;
    let out = estimate(&s.data, &cfg)?;
    println!("boss satt {:.4}, truth {:.4}", out.result.point, s.truth.true_satt);
    Ok(())
}
