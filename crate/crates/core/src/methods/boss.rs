use serde::{Deserialize, Serialize};

use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::metrics::{boss_term, BinAssignment, BinningSpec};
use crate::solvers::{subset_search, SearchMode, SolveDiagnostics, SolverOptions, SubsetObjective};

use super::{BalanceView, Balancer, WeightSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BossBins {
    /// Quantile cuts on V with this many bins per continuous covariate.
    Quantiles(usize),
    Spec(BinningSpec),
}

impl Default for BossBins {
    fn default() -> Self {
        BossBins::Quantiles(5)
    }
}

/// Balance-optimizing subset selection: pick `|V|` subjects of U whose
/// per-bin counts match V's as closely as possible.
#[derive(Debug, Clone)]
pub struct Boss {
    pub bins: BossBins,
    pub mode: SearchMode,
    pub opts: SolverOptions,
}

impl Default for Boss {
    fn default() -> Self {
        Boss {
            bins: BossBins::default(),
            mode: SearchMode::Local,
            opts: SolverOptions::default(),
        }
    }
}

/// Binned-count discrepancy over positions `0..|U|`, with incremental
/// updates for additions and swaps.
pub struct BossObjective {
    bins: Vec<Vec<u32>>,
    target: Vec<Vec<i64>>,
}

#[derive(Clone)]
pub struct BossState {
    counts: Vec<Vec<i64>>,
    value: f64,
}

impl BossObjective {
    pub fn new(assign: &BinAssignment, pair: &GroupPair) -> Self {
        let bins = assign
            .bins
            .iter()
            .map(|ids| pair.u.iter().map(|&i| ids[i]).collect())
            .collect();
        BossObjective {
            bins,
            target: assign.counts(&pair.v),
        }
    }

    fn total(&self, counts: &[Vec<i64>]) -> f64 {
        counts
            .iter()
            .zip(&self.target)
            .map(|(c, t)| c.iter().zip(t).map(|(&a, &b)| boss_term(a, b)).sum::<f64>())
            .sum()
    }
}

impl SubsetObjective for BossObjective {
    type State = BossState;

    fn init(&self, selected: &[usize]) -> BossState {
        let counts: Vec<Vec<i64>> = self
            .bins
            .iter()
            .zip(&self.target)
            .map(|(ids, t)| {
                let mut c = vec![0i64; t.len()];
                for &i in selected {
                    c[ids[i] as usize] += 1;
                }
                c
            })
            .collect();
        let value = self.total(&counts);
        BossState { counts, value }
    }

    fn value(&self, s: &BossState) -> f64 {
        s.value
    }

    fn value_after_add(&self, s: &BossState, add: usize) -> f64 {
        let mut v = s.value;
        for (c, ids) in self.bins.iter().enumerate() {
            let b = ids[add] as usize;
            let (n, t) = (s.counts[c][b], self.target[c][b]);
            v += boss_term(n + 1, t) - boss_term(n, t);
        }
        v
    }

    fn add(&self, s: &mut BossState, add: usize) {
        s.value = self.value_after_add(s, add);
        for (c, ids) in self.bins.iter().enumerate() {
            s.counts[c][ids[add] as usize] += 1;
        }
    }

    fn value_after_swap(&self, s: &BossState, out: usize, add: usize) -> f64 {
        let mut v = s.value;
        for (c, ids) in self.bins.iter().enumerate() {
            let (bo, ba) = (ids[out] as usize, ids[add] as usize);
            if bo == ba {
                continue;
            }
            let (no, to) = (s.counts[c][bo], self.target[c][bo]);
            let (na, ta) = (s.counts[c][ba], self.target[c][ba]);
            v += boss_term(no - 1, to) - boss_term(no, to) + boss_term(na + 1, ta) - boss_term(na, ta);
        }
        v
    }

    fn swap(&self, s: &mut BossState, out: usize, add: usize) {
        s.value = self.value_after_swap(s, out, add);
        for (c, ids) in self.bins.iter().enumerate() {
            s.counts[c][ids[out] as usize] -= 1;
            s.counts[c][ids[add] as usize] += 1;
        }
    }
}

pub fn boss(view: &BalanceView, pair: &GroupPair, bins: &BossBins, mode: SearchMode, opts: &SolverOptions) -> Result<WeightSolution> {
    let (m, nv) = (pair.u.len(), pair.v.len());
    if m < nv {
        return Err(Error::InvalidInput(format!(
            "subset selection needs |U| >= |V| (got {m} < {nv}); a multiset variant would allow reuse of subjects"
        )));
    }
    let x = view.raw_covariates();
    let spec = match bins {
        BossBins::Quantiles(k) => BinningSpec::quantiles(x, view.raw_columns(), &pair.v, *k)?,
        BossBins::Spec(s) => s.clone(),
    };
    let assign = BinAssignment::new(x, &spec)?;
    let obj = BossObjective::new(&assign, pair);
    let start = std::time::Instant::now();
    let (chosen, value) = subset_search(&obj, m, nv, mode, opts)?;
    let mut w = vec![0.0; m];
    for &i in &chosen {
        w[i] = 1.0 / nv as f64;
    }
    let diag = SolveDiagnostics {
        objective: value,
        residual_inf_norm: 0.0,
        iterations: 1,
        converged: true,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(WeightSolution::new("boss", view, pair, w, diag)?
        .with_extra("objective", value)
        .with_extra("selected", chosen.iter().map(|&i| pair.u[i]).collect::<Vec<_>>()))
}

impl Balancer for Boss {
    fn id(&self) -> &'static str {
        "boss"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        boss(view, pair, &self.bins, self.mode, &self.opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::ClosureObjective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn incremental_values_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 14;
        let assign = BinAssignment {
            bins: (0..3).map(|_| (0..n).map(|_| rng.random_range(0..3u32)).collect()).collect(),
            n_bins: vec![3, 3, 3],
        };
        let pair = GroupPair::new((0..9).collect(), (9..14).collect(), crate::data::PairRole::ControlSide).unwrap();
        let obj = BossObjective::new(&assign, &pair);
        let mut s = obj.init(&[0, 3, 5]);
        let add = obj.value_after_add(&s, 7);
        obj.add(&mut s, 7);
        assert!((add - obj.init(&[0, 3, 5, 7]).value).abs() < 1e-12);
        let sw = obj.value_after_swap(&s, 3, 8);
        obj.swap(&mut s, 3, 8);
        assert!((sw - obj.init(&[0, 5, 7, 8]).value).abs() < 1e-12);

        let closure = ClosureObjective(|sel: &[usize]| obj.init(sel).value);
        let a = subset_search(&obj, 9, 5, SearchMode::Exhaustive, &SolverOptions::default()).unwrap();
        let b = subset_search(&closure, 9, 5, SearchMode::Exhaustive, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
