//! Imbalance measures: weighted mean differences, the binned-count
//! discrepancy used by subset selection, and Gaussian-kernel discrepancies.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnMeta, GroupPair};
use crate::error::{Error, Result};
use crate::weights::{contains, WeightSet};

/// `|Σ_U w_i x_ik − mean_V x_k|` for every column `k` of `x`; `w` is
/// normalized to sum one first.
pub fn mean_imbalance(x: &DMatrix<f64>, pair: &GroupPair, w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != pair.u.len() {
        return Err(Error::Dimension {
            expected: pair.u.len(),
            got: w.len(),
        });
    }
    let total: f64 = w.iter().sum();
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("all-zero weights".into()));
    }
    let scale = if total > 0.0 { 1.0 / total } else { 1.0 };
    let nv = pair.v.len() as f64;
    Ok((0..x.ncols())
        .map(|k| {
            let wu: f64 = pair.u.iter().zip(w).map(|(&i, &wi)| wi * scale * x[(i, k)]).sum();
            let mv: f64 = pair.v.iter().map(|&j| x[(j, k)]).sum::<f64>() / nv;
            (wu - mv).abs()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    /// Interior cut points `c_1 < … < c_{k-1}`; value `x` falls in bin
    /// `#{c : c < x}`.
    Cuts(Vec<f64>),
    /// One bin per distinct value.
    Levels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBins {
    pub column: usize,
    pub rule: BinRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub covariates: Vec<CovariateBins>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BinningSpec {
    /// `k`-quantile cuts computed on V for continuous and count columns,
    /// one bin per level for binary and categorical columns.
    pub fn quantiles(x: &DMatrix<f64>, columns: &[ColumnMeta], v: &[usize], k: usize) -> Result<Self> {
        if k < 1 || v.is_empty() {
            return Err(Error::InvalidInput("need k >= 1 bins and a nonempty V".into()));
        }
        let covariates = columns
            .iter()
            .enumerate()
            .map(|(j, meta)| {
                let rule = match meta.kind {
                    ColumnKind::Binary | ColumnKind::Categorical => BinRule::Levels,
                    ColumnKind::Continuous | ColumnKind::Count => {
                        let mut vals: Vec<f64> = v.iter().map(|&i| x[(i, j)]).collect();
                        vals.sort_by(f64::total_cmp);
                        let mut cuts: Vec<f64> = (1..k).map(|q| quantile(&vals, q as f64 / k as f64)).collect();
                        cuts.dedup();
                        BinRule::Cuts(cuts)
                    }
                };
                CovariateBins { column: j, rule }
            })
            .collect();
        Ok(BinningSpec { covariates })
    }

    /// Quintile binning, the default.
    pub fn quintiles(x: &DMatrix<f64>, columns: &[ColumnMeta], v: &[usize]) -> Result<Self> {
        Self::quantiles(x, columns, v, 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::InvalidInput("empty bin specification".into()));
        }
        for c in &self.covariates {
            if let BinRule::Cuts(cuts) = &c.rule {
                if cuts.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidInput(format!("bin edges for column {} not increasing", c.column)));
                }
            }
        }
        Ok(())
    }
}

/// Dense per-subject bin ids, one row per binned covariate.
#[derive(Debug, Clone)]
pub struct BinAssignment {
    pub bins: Vec<Vec<u32>>,
    pub n_bins: Vec<usize>,
}

impl BinAssignment {
    pub fn new(x: &DMatrix<f64>, spec: &BinningSpec) -> Result<Self> {
        spec.validate()?;
        let mut bins = Vec::with_capacity(spec.covariates.len());
        let mut n_bins = Vec::with_capacity(spec.covariates.len());
        for c in &spec.covariates {
            if c.column >= x.ncols() {
                return Err(Error::InvalidInput(format!("bin column {} out of range", c.column)));
            }
            let col = x.column(c.column);
            let ids: Vec<u32> = match &c.rule {
                BinRule::Cuts(cuts) => {
                    n_bins.push(cuts.len() + 1);
                    col.iter().map(|&v| cuts.partition_point(|&e| e < v) as u32).collect()
                }
                BinRule::Levels => {
                    let mut keys: BTreeMap<u64, u32> = BTreeMap::new();
                    let mut distinct: Vec<f64> = col.iter().copied().collect();
                    distinct.sort_by(f64::total_cmp);
                    distinct.dedup();
                    for (b, v) in distinct.iter().enumerate() {
                        keys.insert(v.to_bits(), b as u32);
                    }
                    n_bins.push(distinct.len());
                    col.iter().map(|v| keys[&v.to_bits()]).collect()
                }
            };
            bins.push(ids);
        }
        Ok(BinAssignment { bins, n_bins })
    }

    /// Per-covariate, per-bin counts over `subjects`.
    pub fn counts(&self, subjects: &[usize]) -> Vec<Vec<i64>> {
        self.bins
            .iter()
            .zip(&self.n_bins)
            .map(|(ids, &nb)| {
                let mut c = vec![0i64; nb];
                for &i in subjects {
                    c[ids[i] as usize] += 1;
                }
                c
            })
            .collect()
    }
}

/// Standardized squared bin-count discrepancy between `selected` (with
/// subset weights `1/|V|`) and V, summed over covariates and bins.
pub fn boss_objective(x: &DMatrix<f64>, pair: &GroupPair, selected: &[usize], bins: &BinningSpec) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::InvalidInput("empty selection".into()));
    }
    let assign = BinAssignment::new(x, bins)?;
    Ok(boss_from_counts(&assign.counts(selected), &assign.counts(&pair.v)))
}

pub(crate) fn boss_term(selected: i64, target: i64) -> f64 {
    let d = (selected - target) as f64;
    d * d / target.max(1) as f64
}

pub(crate) fn boss_from_counts(sel: &[Vec<i64>], target: &[Vec<i64>]) -> f64 {
    sel.iter()
        .zip(target)
        .map(|(s, t)| s.iter().zip(t).map(|(&a, &b)| boss_term(a, b)).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

fn row_dist2(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| {
        let d = a[(i, k)] - b[(j, k)];
        d * d
    }).sum()
}

const MEDIAN_PAIRS: usize = 1000;

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    /// Bandwidth for the rows of `x`: the fixed value, or the median
    /// pairwise Euclidean distance over at most 1,000 pairs (all pairs when
    /// there are few enough, else a fixed-seed sample).
    pub fn resolve(&self, x: &DMatrix<f64>) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
            Bandwidth::Fixed(s) => Err(Error::InvalidInput(format!("kernel bandwidth {s} must be positive"))),
            Bandwidth::MedianHeuristic => {
                let n = x.nrows();
                if n < 2 {
                    return Ok(1.0);
                }
                let total = n * (n - 1) / 2;
                let mut d: Vec<f64> = if total <= MEDIAN_PAIRS {
                    (0..n)
                        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                        .map(|(i, j)| row_dist2(x, i, x, j).sqrt())
                        .collect()
                } else {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6b65_726e);
                    (0..MEDIAN_PAIRS)
                        .map(|_| {
                            let i = rng.random_range(0..n);
                            let mut j = rng.random_range(0..n - 1);
                            if j >= i {
                                j += 1;
                            }
                            row_dist2(x, i, x, j).sqrt()
                        })
                        .collect()
                };
                d.sort_by(f64::total_cmp);
                let med = quantile(&d, 0.5);
                if med > 0.0 {
                    return Ok(med);
                }
                let nonzero: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
                Ok(if nonzero.is_empty() { 1.0 } else { nonzero.iter().sum::<f64>() / nonzero.len() as f64 })
            }
        }
    }
}

/// Gaussian kernel matrix `exp(-‖a_i − b_j‖² / (2σ²))`. Rows are computed in
/// parallel; each entry is the same serial sum, so results do not depend
/// on the thread count.
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("kernel bandwidth {sigma} must be positive")));
    }
    let denom = 2.0 * sigma * sigma;
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| (0..b.nrows()).map(|j| (-row_dist2(a, i, b, j) / denom).exp()).collect())
        .collect();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| rows[i][j]))
}

/// Kernel blocks needed for discrepancy computations over a pair.
pub struct PairKernels {
    pub uu: DMatrix<f64>,
    pub uv: DMatrix<f64>,
    /// `(1/|V|²) 1ᵀ K_VV 1`
    pub vv_mean: f64,
}

impl PairKernels {
    pub fn new(x: &DMatrix<f64>, pair: &GroupPair, sigma: f64) -> Result<Self> {
        let xu = x.select_rows(&pair.u);
        let xv = x.select_rows(&pair.v);
        let uu = kernel_matrix(&xu, &xu, sigma)?;
        let uv = kernel_matrix(&xu, &xv, sigma)?;
        let vv = kernel_matrix(&xv, &xv, sigma)?;
        let nv = pair.v.len() as f64;
        Ok(PairKernels {
            uu,
            uv,
            vv_mean: vv.sum() / (nv * nv),
        })
    }

    pub fn mmd_squared(&self, w: &[f64]) -> f64 {
        let m = w.len();
        let nv = self.uv.ncols() as f64;
        let mut quad = 0.0;
        let mut cross = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += self.uu[(i, j)] * w[j];
            }
            quad += w[i] * row;
            cross += w[i] * self.uv.row(i).sum();
        }
        quad - 2.0 / nv * cross + self.vv_mean
    }
}

/// Squared kernel discrepancy between the `w`-weighted U and the uniform V.
pub fn mmd_squared(x: &DMatrix<f64>, pair: &GroupPair, w: &[f64], spec: &KernelSpec) -> Result<f64> {
    if !contains(w, &WeightSet::Simplex { dim: pair.u.len() }, 1e-8)? {
        return Err(Error::InvalidInput("weights are not on the simplex".into()));
    }
    let rows: Vec<usize> = pair.u.iter().chain(&pair.v).copied().collect();
    let sigma = spec.resolve(&x.select_rows(&rows))?;
    Ok(PairKernels::new(x, pair, sigma)?.mmd_squared(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairRole;
    use rand_chacha::ChaCha8Rng;

    fn col(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(vals.len(), 1, vals)
    }

    fn pair(u: Vec<usize>, v: Vec<usize>) -> GroupPair {
        GroupPair::new(u, v, PairRole::ControlSide).unwrap()
    }

    #[test]
    fn mean_imbalance_examples() {
        // U = {0, 1}, V = {2, 3, 4, 5} with mean 0.75
        let x = col(&[0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        let p = pair(vec![0, 1], vec![2, 3, 4, 5]);
        assert_eq!(mean_imbalance(&x, &p, &[0.25, 0.75]).unwrap(), vec![0.0]);

        let x = col(&[0.0, 2.0, 1.0, 1.0]);
        assert_eq!(mean_imbalance(&x, &pair(vec![0, 1], vec![2, 3]), &[0.5, 0.5]).unwrap(), vec![0.0]);
        let x = col(&[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(mean_imbalance(&x, &pair(vec![0, 1], vec![2, 3]), &[0.5, 0.5]).unwrap(), vec![1.0]);
        assert!(mean_imbalance(&x, &pair(vec![0, 1], vec![2, 3]), &[0.0, 0.0]).is_err());
    }

    fn two_bins() -> BinningSpec {
        BinningSpec {
            covariates: vec![CovariateBins {
                column: 0,
                rule: BinRule::Cuts(vec![0.5]),
            }],
        }
    }

    #[test]
    fn boss_objective_examples() {
        // subjects 0..3 in U, 4..5 in V; values place them in bins
        let x = col(&[0.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let p = pair(vec![0, 1, 2, 3], vec![4, 5]);
        assert_eq!(boss_objective(&x, &p, &[0, 2], &two_bins()).unwrap(), 0.0);
        assert_eq!(boss_objective(&x, &p, &[0, 1], &two_bins()).unwrap(), 2.0);

        // V entirely in bin 0; selecting one subject from bin 1 costs 1²/1 twice
        let p = pair(vec![0, 1, 2, 3], vec![4]);
        assert_eq!(boss_objective(&x, &p, &[2], &two_bins()).unwrap(), 2.0);
        let empty = BinningSpec { covariates: vec![] };
        assert!(boss_objective(&x, &p, &[2], &empty).is_err());
    }

    #[test]
    fn boss_invariant_to_within_bin_swaps() {
        let x = col(&[0.1, 0.2, 0.9, 0.8, 0.3, 0.7, 0.6]);
        let p = pair(vec![0, 1, 2, 3], vec![4, 5, 6]);
        let a = boss_objective(&x, &p, &[0, 2, 3], &two_bins()).unwrap();
        let b = boss_objective(&x, &p, &[1, 3, 2], &two_bins()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_values() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let k = kernel_matrix(&a, &a, 1.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        // ‖x − x'‖² = 2 = 2σ² with σ = 1
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.367879).abs() < 1e-6);
        assert!(kernel_matrix(&a, &a, 0.0).is_err());
    }

    #[test]
    fn kernel_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let k = kernel_matrix(&a, &a, 0.8).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for c in 0..2 {
                    s += (a[(i, c)] - a[(j, c)]).powi(2);
                }
                assert!((k[(i, j)] - (-s / (2.0 * 0.64)).exp()).abs() < 1e-15);
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }

    #[test]
    fn mmd_examples() {
        let x = col(&[0.3, 0.3]);
        let spec = KernelSpec::gaussian(1.0);
        assert!(mmd_squared(&x, &pair(vec![0], vec![1]), &[1.0], &spec).unwrap().abs() < 1e-15);

        let x = col(&[0.0, 1.0, 2.5, 0.0, 1.0, 2.5]);
        let p = pair(vec![0, 1, 2], vec![3, 4, 5]);
        let w = [1.0 / 3.0; 3];
        assert!(mmd_squared(&x, &p, &w, &spec).unwrap().abs() < 1e-12);
        assert!(mmd_squared(&x, &p, &[0.5, 0.6, 0.0], &spec).is_err());
    }

    #[test]
    fn mmd_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: DMatrix<f64> = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-2.0..2.0));
        let p = pair(vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]);
        let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let sigma = 1.3;
        let k = |i: usize, j: usize| {
            let d: f64 = (0..3).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum::<f64>();
            (-d / (2.0 * sigma * sigma)).exp()
        };
        let mut naive = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                naive += w[a] * w[b] * k(p.u[a], p.u[b]);
            }
            for &j in &p.v {
                naive -= 2.0 / 5.0 * w[a] * k(p.u[a], j);
            }
        }
        for &i in &p.v {
            for &j in &p.v {
                naive += k(i, j) / 25.0;
            }
        }
        let got = mmd_squared(&x, &p, &w, &KernelSpec::gaussian(sigma)).unwrap();
        assert!((got - naive).abs() < 1e-12);
    }

    #[test]
    fn median_heuristic_is_deterministic_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(80, 2, |_, _| rng.random_range(-1.0..1.0));
        let s1 = KernelSpec::default().resolve(&x).unwrap();
        let s2 = KernelSpec::default().resolve(&x).unwrap();
        assert_eq!(s1, s2);
        assert!(s1 > 0.0);
        let flat = DMatrix::from_element(5, 2, 1.0);
        assert_eq!(KernelSpec::default().resolve(&flat).unwrap(), 1.0);
    }

    #[test]
    fn quintile_bins_cover_every_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(50, 1, |_, _| rng.random_range(0.0..10.0));
        let metas = vec![ColumnMeta::new("a", ColumnKind::Continuous)];
        let v: Vec<usize> = (25..50).collect();
        let spec = BinningSpec::quintiles(&x, &metas, &v).unwrap();
        let assign = BinAssignment::new(&x, &spec).unwrap();
        assert_eq!(assign.n_bins, vec![5]);
        let counts = assign.counts(&v);
        assert_eq!(counts[0].iter().sum::<i64>(), 25);
        assert!(counts[0].iter().all(|&c| c >= 4));
    }
}
