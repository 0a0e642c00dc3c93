//! A small benchmark over two scenarios, printed as a table and CSV.

use optbal::methods::MethodConfig;
use optbal::sim::{run_benchmark, BenchConfig, Overlap, ScenarioSpec, ORACLE};

fn main() -> optbal::Result<()> {
    let strong = ScenarioSpec { id: "strong".into(), n: 500, p: 8, ..ScenarioSpec::default() };
    let weak = ScenarioSpec { id: "weak".into(), overlap: Overlap::Weak, ..strong.clone() };
    let cfg = BenchConfig {
        methods: [ORACLE, "naive", "ebal", "sbw", "cbps_exact"].into_iter().map(MethodConfig::new).collect(),
        scenarios: vec![strong, weak],
        reps: 8,
        master_seed: 2024,
        ..BenchConfig::default()
    };
    let out = run_benchmark(&cfg)?;
    print!("{}", out.report.to_table(true));
    println!();
    print!("{}", out.report.to_csv(false));
    let failed = out.records.iter().filter(|r| !r.solved).count();
    println!("{} runs, {failed} unsolved", out.records.len());
    Ok(())
}
