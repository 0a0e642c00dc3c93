use optbal::data::EstimandSpec;
use optbal::estimation::{estimate, EstimateConfig};
use optbal::sim::{illustrative_example, illustrative_truth};

fn main() -> optbal::Result<()> {
    let t = illustrative_truth();
    println!("population: naive {:.4} vs {:.4}, balanced {:.2} vs {:.2}", t.naive_treated_mean, t.naive_control_mean, t.balanced_treated_mean, t.balanced_control_mean);

    let s = illustrative_example(20_000, 1)?;
    for method in ["naive", "ebal", "sbw", "cbps_exact"] {
        let r = estimate(&s.data, &EstimateConfig::new(method, EstimandSpec::satt()))?.result;
        println!("{method:>10}: {:+.4}", r.point);
    }
    Ok(())
}
