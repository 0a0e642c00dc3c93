//! One-to-k matching with mean-balance penalties and caps.

use optbal::data::{build_groups, preprocess, EstimandSpec, PreprocessSpec};
use optbal::methods::{mipmatch_lite, BalanceView};
use optbal::sim::{generate_scenario, ScenarioSpec};
use optbal::solvers::{SearchMode, SolverOptions};

fn main() -> optbal::Result<()> {
    let spec = ScenarioSpec { n: 300, p: 4, treated_fraction_target: 0.2, seed: 21, ..ScenarioSpec::default() };
    let s = generate_scenario(&spec)?;
    let design = preprocess(&s.data, &PreprocessSpec::default())?;
    let estimand = EstimandSpec::satt();
    let view = BalanceView::new(&s.data, &design, estimand.kind)?;
    let pair = build_groups(&s.data, &estimand)?.remove(0);
    let opts = SolverOptions::default();

    for (ratio, omega) in [(1, 0.0), (1, 5.0), (2, 5.0)] {
        let (_, m) = mipmatch_lite(&view, &pair, ratio, &[omega], &[], SearchMode::Local, &opts)?;
        let worst = m.imbalance.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        println!("1:{ratio} omega {omega}: distance {:.2}, worst mean gap {worst:.4}", m.total_distance);
    }
    let (_, m) = mipmatch_lite(&view, &pair, 1, &[0.0], &[0.05], SearchMode::Local, &opts)?;
    let (treated, controls) = &m.matches[0];
    println!("capped at 0.05: first pair {} -> {}", s.data.ids()[*treated], s.data.ids()[controls[0]]);
    Ok(())
}
