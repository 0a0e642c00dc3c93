use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnMeta, Dataset};
use crate::error::{Error, Result};
use crate::estimation::{true_estimands, PotentialOutcomes, TruthRecord};

/// Smallest and largest allowed propensity.
pub const PROPENSITY_FLOOR: f64 = 1e-4;
const FRACTION_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    None,
    Quadratic,
    Interactions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    #[default]
    Strong,
    Moderate,
    Weak,
}

impl Overlap {
    pub fn scale(self) -> f64 {
        match self {
            Overlap::Strong => 1.0,
            Overlap::Moderate => 2.0,
            Overlap::Weak => 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    #[default]
    None,
    Linear,
}

/// Fractions of continuous, binary and count covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMix {
    pub continuous: f64,
    pub binary: f64,
    pub count: f64,
}

impl Default for TypeMix {
    fn default() -> Self {
        TypeMix {
            continuous: 0.4,
            binary: 0.1,
            count: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub id: String,
    pub n: usize,
    pub p: usize,
    pub mix: TypeMix,
    pub assign_nonlinearity: Nonlinearity,
    pub response_nonlinearity: Nonlinearity,
    pub treated_fraction_target: f64,
    pub overlap: Overlap,
    /// Share of the assignment covariates that also drive the response.
    pub alignment: f64,
    pub heterogeneity: Heterogeneity,
    /// Average effect divided by the noise standard deviation.
    pub effect_to_noise: f64,
    /// Average treatment effect before heterogeneity.
    pub effect: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            id: "linear".into(),
            n: 1000,
            p: 10,
            mix: TypeMix::default(),
            assign_nonlinearity: Nonlinearity::None,
            response_nonlinearity: Nonlinearity::None,
            treated_fraction_target: 0.35,
            overlap: Overlap::Strong,
            alignment: 1.0,
            heterogeneity: Heterogeneity::None,
            effect_to_noise: 1.0,
            effect: 1.0,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mix;
        let fracs = [m.continuous, m.binary, m.count];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("type mix fractions must lie in [0, 1] and sum to 1".into()));
        }
        if !(self.treated_fraction_target > 0.0 && self.treated_fraction_target < 1.0) {
            return Err(Error::InvalidInput("treated_fraction_target must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.alignment) {
            return Err(Error::InvalidInput("alignment must lie in [0, 1]".into()));
        }
        if !(self.effect_to_noise > 0.0) || !self.effect.is_finite() {
            return Err(Error::InvalidInput("effect_to_noise must be positive and effect finite".into()));
        }
        if self.p < 1 || self.n < 4 {
            return Err(Error::InvalidInput("need p >= 1 and n >= 4".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioSpec { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: Dataset,
    pub potential: PotentialOutcomes,
    pub truth: TruthRecord,
    pub propensity: Vec<f64>,
}

fn kinds(spec: &ScenarioSpec) -> Vec<ColumnKind> {
    let p = spec.p;
    let n_cont = (spec.mix.continuous * p as f64).round() as usize;
    let n_bin = ((spec.mix.binary * p as f64).round() as usize).min(p - n_cont.min(p));
    let n_cont = n_cont.min(p);
    let n_count = p - n_cont - n_bin;
    std::iter::repeat_n(ColumnKind::Continuous, n_cont)
        .chain(std::iter::repeat_n(ColumnKind::Binary, n_bin))
        .chain(std::iter::repeat_n(ColumnKind::Count, n_count))
        .collect()
}

fn signed_coef(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.5..1.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Linear part plus optional squares or neighbour products over `cols`,
/// scaled so the linear part has roughly unit variance.
fn surface(xs: &DMatrix<f64>, cols: &[usize], coef: &[f64], extra: &[f64], shape: Nonlinearity) -> Vec<f64> {
    let scale = 1.0 / (cols.len() as f64).sqrt();
    (0..xs.nrows())
        .map(|i| {
            let lin: f64 = cols.iter().zip(coef).map(|(&j, b)| b * xs[(i, j)]).sum();
            let non: f64 = match shape {
                Nonlinearity::None => 0.0,
                Nonlinearity::Quadratic => cols.iter().zip(extra).map(|(&j, g)| g * (xs[(i, j)].powi(2) - 1.0)).sum(),
                Nonlinearity::Interactions => cols
                    .windows(2)
                    .zip(extra)
                    .map(|(w, g)| g * xs[(i, w[0])] * xs[(i, w[1])])
                    .sum(),
            };
            scale * (lin + 0.5 * non)
        })
        .collect()
}

fn sigmoid(t: f64) -> f64 {
    (1.0 / (1.0 + (-t).exp())).clamp(PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
}

/// Synthetic observational study with known potential outcomes. Assignment
/// depends on covariates only, and propensities are clipped away from 0 and 1.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kinds = kinds(spec);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let poisson = Poisson::new(2.0).expect("poisson rate");
    let mut x = DMatrix::zeros(n, p);
    let mut xs = DMatrix::zeros(n, p);
    for (j, kind) in kinds.iter().enumerate() {
        let (mean, sd) = match kind {
            ColumnKind::Continuous => {
                for i in 0..n {
                    x[(i, j)] = normal.sample(&mut rng);
                }
                (0.0, 1.0)
            }
            ColumnKind::Binary => {
                let q: f64 = rng.random_range(0.3..0.7);
                for i in 0..n {
                    x[(i, j)] = f64::from(u8::from(rng.random_bool(q)));
                }
                (q, (q * (1.0 - q)).sqrt())
            }
            _ => {
                for i in 0..n {
                    x[(i, j)] = poisson.sample(&mut rng);
                }
                (2.0, 2f64.sqrt())
            }
        };
        for i in 0..n {
            xs[(i, j)] = (x[(i, j)] - mean) / sd;
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let n_assign = p.div_ceil(2);
    let assign: Vec<usize> = order[..n_assign].to_vec();
    let shared = ((spec.alignment * n_assign as f64).round() as usize).min(n_assign);
    let outside = (n_assign - shared).min(p - n_assign);
    let mut response: Vec<usize> = assign[..shared].to_vec();
    response.extend_from_slice(&order[n_assign..n_assign + outside]);
    if response.is_empty() {
        response.push(order[0]);
    }

    let beta: Vec<f64> = (0..assign.len()).map(|_| signed_coef(&mut rng)).collect();
    let beta_extra: Vec<f64> = (0..assign.len()).map(|_| signed_coef(&mut rng)).collect();
    // shared covariates raise treatment odds and the outcome together
    let alpha: Vec<f64> = (0..response.len())
        .map(|r| {
            let a = signed_coef(&mut rng);
            if r < shared {
                a.abs() * beta[r].signum()
            } else {
                a
            }
        })
        .collect();
    let alpha_extra: Vec<f64> = (0..response.len()).map(|_| signed_coef(&mut rng)).collect();

    let base: Vec<f64> = surface(&xs, &assign, &beta, &beta_extra, spec.assign_nonlinearity)
        .into_iter()
        .map(|v| v * spec.overlap.scale())
        .collect();
    let draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let treated_at = |c: f64| draws.iter().zip(&base).filter(|(u, b)| **u < sigmoid(**b + c)).count();
    let target = spec.treated_fraction_target * n as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (treated_at(mid) as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = [lo, hi]
        .into_iter()
        .min_by(|a, b| {
            let da = (treated_at(*a) as f64 - target).abs();
            let db = (treated_at(*b) as f64 - target).abs();
            da.total_cmp(&db)
        })
        .expect("two candidates");
    let propensity: Vec<f64> = base.iter().map(|b| sigmoid(b + c)).collect();
    let z: Vec<bool> = draws.iter().zip(&propensity).map(|(u, p)| u < p).collect();
    let n1 = z.iter().filter(|&&t| t).count();
    if (n1 as f64 / n as f64 - spec.treated_fraction_target).abs() > FRACTION_TOL || n1 == 0 || n1 == n {
        return Err(Error::NotConverged {
            iterations: 200,
            residual: n1 as f64 / n as f64 - spec.treated_fraction_target,
        });
    }

    let mu0 = surface(&xs, &response, &alpha, &alpha_extra, spec.response_nonlinearity);
    let noise_sd = if spec.effect != 0.0 { spec.effect.abs() } else { 1.0 } / spec.effect_to_noise;
    let effect_driver = assign[0];
    let y0: Vec<f64> = mu0.iter().map(|m| m + noise_sd * normal.sample(&mut rng)).collect();
    let y1: Vec<f64> = (0..n)
        .map(|i| {
            let tau = match spec.heterogeneity {
                Heterogeneity::None => spec.effect,
                Heterogeneity::Linear => spec.effect * (1.0 + 0.5 * xs[(i, effect_driver)]),
            };
            y0[i] + tau
        })
        .collect();
    let potential = PotentialOutcomes { y0, y1 };
    let truth = true_estimands(&potential, &z);
    let columns = kinds
        .iter()
        .enumerate()
        .map(|(j, &k)| ColumnMeta::new(format!("x{}", j + 1), k))
        .collect();
    let width = n.to_string().len();
    let data = Dataset::new(
        x,
        columns,
        z.clone(),
        Some(potential.observed(&z)),
        Some((1..=n).map(|i| format!("{i:0width$}")).collect()),
    )?;
    Ok(Scenario {
        data,
        potential,
        truth,
        propensity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_effect_truths_are_exact() {
        let s = generate_scenario(&ScenarioSpec::default().with_seed(3)).unwrap();
        assert_eq!(s.truth.true_sate, 1.0);
        assert_eq!(s.truth.true_satt, 1.0);
    }

    #[test]
    fn observed_outcome_reconstructs() {
        let s = generate_scenario(&ScenarioSpec::default().with_seed(4)).unwrap();
        assert_eq!(s.data.outcome().unwrap(), s.potential.observed(s.data.treatment()).as_slice());
        assert!(s.propensity.iter().all(|&p| (PROPENSITY_FLOOR..=1.0 - PROPENSITY_FLOOR).contains(&p)));
    }

    #[test]
    fn column_kinds_follow_mix() {
        let s = generate_scenario(&ScenarioSpec::default()).unwrap();
        let k: Vec<ColumnKind> = s.data.columns().iter().map(|c| c.kind).collect();
        assert_eq!(k.iter().filter(|&&c| c == ColumnKind::Continuous).count(), 4);
        assert_eq!(k.iter().filter(|&&c| c == ColumnKind::Binary).count(), 1);
        assert_eq!(k.iter().filter(|&&c| c == ColumnKind::Count).count(), 5);
    }
}
