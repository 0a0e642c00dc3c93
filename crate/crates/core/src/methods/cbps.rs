use nalgebra::{DMatrix, DVector};

use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::solvers::{logistic_fit, moment_newton, SolverOptions};

use super::{BalanceView, Balancer, WeightSolution};

/// Just-identified covariate balancing propensity score: odds weights
/// `exp(βᵀx̃)` over U whose weighted feature totals equal V's totals.
#[derive(Debug, Clone, Default)]
pub struct CbpsExact {
    pub opts: SolverOptions,
}

/// Scaled moment residuals `(1/|V|)[Σ_U exp(βᵀx̃_i) x̃_i − Σ_V x̃_j]` and
/// their Jacobian. `xt` includes the constant column.
pub fn cbps_moments(xt: &DMatrix<f64>, pair: &GroupPair, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let k = xt.ncols();
    let scale = 1.0 / pair.v.len() as f64;
    let mut g = DVector::zeros(k);
    let mut j = DMatrix::zeros(k, k);
    for &i in &pair.u {
        let row = xt.row(i).transpose();
        let odds = row.dot(beta).exp();
        g.axpy(scale * odds, &row, 1.0);
        j.ger(scale * odds, &row, &row, 1.0);
    }
    for &i in &pair.v {
        g.axpy(-scale, &xt.row(i).transpose(), 1.0);
    }
    (g, j)
}

fn with_constant(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

pub fn cbps_exact(view: &BalanceView, pair: &GroupPair, opts: &SolverOptions) -> Result<WeightSolution> {
    let xt = with_constant(&view.x());
    let k = xt.ncols();
    let z = view.treatment();
    let controls: Vec<usize> = (0..z.len()).filter(|&i| !z[i]).collect();
    let treated: Vec<usize> = (0..z.len()).filter(|&i| z[i]).collect();
    // the fitted log-odds are already close when U are the controls and V the treated
    let beta0 = if pair.u == controls && pair.v == treated {
        logistic_fit(&xt, z, 1e-8, opts).map(|f| f.beta).ok()
    } else {
        None
    }
    .unwrap_or_else(|| {
        let mut b = DVector::zeros(k);
        b[0] = (pair.v.len() as f64 / pair.u.len() as f64).ln();
        b
    });
    let (beta, diag) = moment_newton(
        |b: &DVector<f64>| cbps_moments(&xt, pair, b).0,
        |b: &DVector<f64>| cbps_moments(&xt, pair, b).1,
        &beta0,
        opts,
    )?;
    let w: Vec<f64> = pair.u.iter().map(|&i| xt.row(i).transpose().dot(&beta).exp()).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotConverged {
            iterations: diag.iterations,
            residual: f64::INFINITY,
        });
    }
    let total: f64 = w.iter().sum();
    Ok(WeightSolution::new("cbps_exact", view, pair, w, diag)?
        .with_extra("beta", beta.as_slice())
        .with_extra("weight_sum", total))
}

impl Balancer for CbpsExact {
    fn id(&self) -> &'static str {
        "cbps_exact"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        cbps_exact(view, pair, &self.opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairRole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let xt = with_constant(&DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0)));
        let pair = GroupPair::new((0..7).collect(), (7..12).collect(), PairRole::ControlSide).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let b = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let (_, j) = cbps_moments(&xt, &pair, &b);
            for c in 0..3 {
                let mut bp = b.clone();
                bp[c] += h;
                let mut bm = b.clone();
                bm[c] -= h;
                let fd = (cbps_moments(&xt, &pair, &bp).0 - cbps_moments(&xt, &pair, &bm).0) / (2.0 * h);
                for r in 0..3 {
                    assert!((fd[r] - j[(r, c)]).abs() <= 1e-5 * j[(r, c)].abs().max(1.0));
                }
            }
        }
    }
}
