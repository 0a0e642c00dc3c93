use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnMeta, Dataset};
use crate::error::{Error, Result};
use crate::estimation::{true_estimands, PotentialOutcomes, TruthRecord};

/// Population of the social-support example: `Pr(X=1)`, the physician's
/// treatment probabilities for `X = 0, 1` and the response rates for
/// `X = 0, 1`. Response does not depend on treatment.
pub const SHARE_HIGH_SUPPORT: f64 = 0.5;
pub const TREAT_PROB: [f64; 2] = [0.5, 0.9];
pub const RESPONSE_RATE: [f64; 2] = [0.4, 0.6];

/// Population-level means of the example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IllustrativeTruth {
    pub naive_control_mean: f64,
    pub naive_treated_mean: f64,
    pub balanced_control_mean: f64,
    pub balanced_treated_mean: f64,
    pub true_effect: f64,
}

impl IllustrativeTruth {
    pub fn naive_effect(&self) -> f64 {
        self.naive_treated_mean - self.naive_control_mean
    }

    pub fn balanced_effect(&self) -> f64 {
        self.balanced_treated_mean - self.balanced_control_mean
    }
}

pub fn illustrative_truth() -> IllustrativeTruth {
    let px = [1.0 - SHARE_HIGH_SUPPORT, SHARE_HIGH_SUPPORT];
    let group_mean = |treated: bool| {
        let pz = |x: usize| if treated { TREAT_PROB[x] } else { 1.0 - TREAT_PROB[x] };
        let num: f64 = (0..2).map(|x| RESPONSE_RATE[x] * pz(x) * px[x]).sum();
        let den: f64 = (0..2).map(|x| pz(x) * px[x]).sum();
        num / den
    };
    let balanced: f64 = (0..2).map(|x| RESPONSE_RATE[x] * px[x]).sum();
    IllustrativeTruth {
        naive_control_mean: group_mean(false),
        naive_treated_mean: group_mean(true),
        balanced_control_mean: balanced,
        balanced_treated_mean: balanced,
        true_effect: 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct IllustrativeSample {
    pub data: Dataset,
    pub potential: PotentialOutcomes,
    pub truth: TruthRecord,
    /// True propensity of each subject.
    pub propensity: Vec<f64>,
    pub analytic: IllustrativeTruth,
}

/// Draws `n` patients: exactly half with high social support, treatment by
/// the physician's rule and a binary response that ignores treatment.
pub fn illustrative_example(n: usize, seed: u64) -> Result<IllustrativeSample> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidInput("the example needs an even n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n];
    for i in sample(&mut rng, n, n / 2) {
        x[i] = 1.0;
    }
    let propensity: Vec<f64> = x.iter().map(|&v| TREAT_PROB[v as usize]).collect();
    let z = loop {
        let z: Vec<bool> = propensity.iter().map(|&p| rng.random_bool(p)).collect();
        if z.iter().any(|&t| t) && z.iter().any(|&t| !t) {
            break z;
        }
    };
    let y0: Vec<f64> = x
        .iter()
        .map(|&v| f64::from(u8::from(rng.random_bool(RESPONSE_RATE[v as usize]))))
        .collect();
    let potential = PotentialOutcomes { y0: y0.clone(), y1: y0 };
    let truth = true_estimands(&potential, &z);
    let width = n.to_string().len();
    let data = Dataset::new(
        DMatrix::from_column_slice(n, 1, &x),
        vec![ColumnMeta::new("social_support", ColumnKind::Binary)],
        z.clone(),
        Some(potential.observed(&z)),
        Some((1..=n).map(|i| format!("{i:0width$}")).collect()),
    )?;
    Ok(IllustrativeSample {
        data,
        potential,
        truth,
        propensity,
        analytic: illustrative_truth(),
    })
}
