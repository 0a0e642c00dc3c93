//! The numerical building blocks on their own: projections, a QP over the
//! simplex and the elastic net.

use nalgebra::{DMatrix, DVector};
use optbal::solvers::{elastic_net, qp_over_set, SolverOptions};
use optbal::weights::{contains, nearest_subset, project_box_simplex, project_simplex, WeightSet};

fn main() -> optbal::Result<()> {
    let v = [0.9, -0.3, 0.4, 0.05];
    let p = project_simplex(&v)?;
    let pb = project_box_simplex(&v, 0.4)?;
    println!("simplex    {p:.3?} in set: {}", contains(&p, &WeightSet::Simplex { dim: 4 }, 1e-10)?);
    println!("box 0.4    {pb:.3?}");
    println!("2-subset   {:.3?}", nearest_subset(&v, 2)?);

    // min wᵀQw/2 + cᵀw over the simplex
    let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]);
    let c = DVector::from_vec(vec![-1.0, 0.0, 0.5]);
    let (w, diag) = qp_over_set(&q, &c, &WeightSet::Simplex { dim: 3 }, &SolverOptions::default())?;
    println!("qp         {w:.4?} objective {:.5} after {} iterations", diag.objective, diag.iterations);

    let x = DMatrix::from_fn(50, 3, |i, j| ((i * (j + 2)) % 7) as f64 - 3.0);
    let y: Vec<f64> = (0..50).map(|i| 2.0 * x[(i, 0)] - x[(i, 2)]).collect();
    for lambda in [0.0, 0.1, 1.0] {
        let beta = elastic_net(&x, &y, lambda, 0.5, &SolverOptions::default())?;
        println!("enet l={lambda:<4} {:.4?}", beta.as_slice());
    }
    Ok(())
}
