use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SolverOptions;
use crate::error::{Error, Result};

pub const EXHAUSTIVE_BUDGET: u128 = 2_000_000;
const STARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Local,
    Exhaustive,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(SearchMode::Local),
            "exhaustive" => Ok(SearchMode::Exhaustive),
            other => Err(Error::InvalidInput(format!("unknown search mode '{other}'"))),
        }
    }
}

/// An objective over subsets of `0..m` with incremental evaluation of
/// single additions and single swaps.
pub trait SubsetObjective {
    type State: Clone;

    fn init(&self, selected: &[usize]) -> Self::State;
    fn value(&self, state: &Self::State) -> f64;
    fn value_after_add(&self, state: &Self::State, add: usize) -> f64;
    fn add(&self, state: &mut Self::State, add: usize);
    fn value_after_swap(&self, state: &Self::State, out: usize, add: usize) -> f64;
    fn swap(&self, state: &mut Self::State, out: usize, add: usize);
}

/// Wraps a plain function of the (sorted) subset; every move re-evaluates it.
pub struct ClosureObjective<F>(pub F);

impl<F: Fn(&[usize]) -> f64> SubsetObjective for ClosureObjective<F> {
    type State = Vec<usize>;

    fn init(&self, selected: &[usize]) -> Vec<usize> {
        let mut s = selected.to_vec();
        s.sort_unstable();
        s
    }

    fn value(&self, state: &Vec<usize>) -> f64 {
        (self.0)(state)
    }

    fn value_after_add(&self, state: &Vec<usize>, add: usize) -> f64 {
        let mut s = state.clone();
        self.add(&mut s, add);
        (self.0)(&s)
    }

    fn add(&self, state: &mut Vec<usize>, add: usize) {
        let pos = state.partition_point(|&x| x < add);
        state.insert(pos, add);
    }

    fn value_after_swap(&self, state: &Vec<usize>, out: usize, add: usize) -> f64 {
        let mut s = state.clone();
        self.swap(&mut s, out, add);
        (self.0)(&s)
    }

    fn swap(&self, state: &mut Vec<usize>, out: usize, add: usize) {
        state.retain(|&x| x != out);
        self.add(state, add);
    }
}

fn binomial(m: usize, k: usize) -> u128 {
    let k = k.min(m - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (m - i) as u128 / (i + 1) as u128;
        if r > u128::MAX / 1024 {
            return u128::MAX;
        }
    }
    r
}

fn improve<O: SubsetObjective>(obj: &O, selected: &mut Vec<bool>, state: &mut O::State) {
    let m = selected.len();
    let mut current = obj.value(state);
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for out in (0..m).filter(|&i| selected[i]) {
            for add in (0..m).filter(|&i| !selected[i]) {
                let v = obj.value_after_swap(state, out, add);
                if v < current - 1e-12 * current.abs().max(1.0) && best.is_none_or(|b| v < b.0) {
                    best = Some((v, out, add));
                }
            }
        }
        match best {
            Some((v, out, add)) => {
                obj.swap(state, out, add);
                selected[out] = false;
                selected[add] = true;
                current = v;
            }
            None => return,
        }
    }
}

fn greedy<O: SubsetObjective>(obj: &O, m: usize, n_prime: usize) -> (Vec<bool>, O::State) {
    let mut selected = vec![false; m];
    let mut state = obj.init(&[]);
    for _ in 0..n_prime {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..m).filter(|&i| !selected[i]) {
            let v = obj.value_after_add(&state, i);
            if best.is_none_or(|b| v < b.0) {
                best = Some((v, i));
            }
        }
        let (_, i) = best.expect("n' <= m");
        obj.add(&mut state, i);
        selected[i] = true;
    }
    (selected, state)
}

fn members(selected: &[bool]) -> Vec<usize> {
    (0..selected.len()).filter(|&i| selected[i]).collect()
}

/// Finds a size-`n_prime` subset of `0..m` minimizing `obj`. Local mode runs
/// greedy construction followed by best-improvement single swaps, plus
/// seeded random starts; exhaustive mode enumerates every subset in
/// lexicographic order and keeps the first minimizer.
pub fn subset_search<O: SubsetObjective>(
    obj: &O,
    m: usize,
    n_prime: usize,
    mode: SearchMode,
    opts: &SolverOptions,
) -> Result<(Vec<usize>, f64)> {
    if n_prime > m {
        return Err(Error::InvalidInput(format!("subset size {n_prime} exceeds universe size {m}")));
    }
    if n_prime == m {
        let all: Vec<usize> = (0..m).collect();
        let v = obj.value(&obj.init(&all));
        return Ok((all, v));
    }
    match mode {
        SearchMode::Exhaustive => {
            let count = binomial(m, n_prime);
            if count > EXHAUSTIVE_BUDGET {
                return Err(Error::Budget(format!(
                    "exhaustive search over {count} subsets exceeds the limit of {EXHAUSTIVE_BUDGET}"
                )));
            }
            let mut best: Option<(Vec<usize>, f64)> = None;
            for combo in (0..m).combinations(n_prime) {
                let v = obj.value(&obj.init(&combo));
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((combo, v));
                }
            }
            Ok(best.expect("at least one subset"))
        }
        SearchMode::Local => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut best: Option<(Vec<usize>, f64)> = None;
            for start in 0..STARTS {
                let (mut selected, mut state) = if start == 0 {
                    greedy(obj, m, n_prime)
                } else {
                    let mut chosen: Vec<usize> = sample(&mut rng, m, n_prime).into_vec();
                    chosen.sort_unstable();
                    let mut sel = vec![false; m];
                    for &i in &chosen {
                        sel[i] = true;
                    }
                    let st = obj.init(&chosen);
                    (sel, st)
                };
                improve(obj, &mut selected, &mut state);
                let set = members(&selected);
                let v = obj.value(&obj.init(&set));
                if best.as_ref().is_none_or(|b| v < b.1 || (v == b.1 && set < b.0)) {
                    best = Some((set, v));
                }
            }
            Ok(best.expect("at least one start"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn bin_count_example() {
        // a1, a2 in bin A; b1 in bin B; target one of each
        let bins = [0usize, 0, 1];
        let f = |s: &[usize]| {
            let a = s.iter().filter(|&&i| bins[i] == 0).count() as f64;
            let b = s.len() as f64 - a;
            (a - 1.0).powi(2) + (b - 1.0).powi(2)
        };
        for mode in [SearchMode::Local, SearchMode::Exhaustive] {
            let (s, v) = subset_search(&ClosureObjective(f), 3, 2, mode, &SolverOptions::default()).unwrap();
            assert_eq!(v, 0.0);
            assert!(s.contains(&2));
        }
        let (s, _) = subset_search(&ClosureObjective(f), 3, 2, SearchMode::Exhaustive, &SolverOptions::default()).unwrap();
        assert_eq!(s, vec![0, 2]);
    }

    #[test]
    fn full_set_when_n_prime_is_m() {
        let (s, _) = subset_search(&ClosureObjective(|s: &[usize]| s.len() as f64), 4, 4, SearchMode::Local, &SolverOptions::default()).unwrap();
        assert_eq!(s, vec![0, 1, 2, 3]);
    }

    #[test]
    fn budget_is_enforced() {
        let r = subset_search(&ClosureObjective(|_: &[usize]| 0.0), 40, 20, SearchMode::Exhaustive, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Budget(_))));
        assert!(subset_search(&ClosureObjective(|_: &[usize]| 0.0), 3, 4, SearchMode::Local, &SolverOptions::default()).is_err());
    }

    #[test]
    fn local_never_beats_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let m = rng.random_range(3..9);
            let k = rng.random_range(1..m);
            let vals: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = rng.random_range(-0.5..0.5);
            let f = |s: &[usize]| {
                let mean = s.iter().map(|&i| vals[i]).sum::<f64>() / s.len() as f64;
                (mean - target).powi(2)
            };
            let (_, ve) = subset_search(&ClosureObjective(f), m, k, SearchMode::Exhaustive, &SolverOptions::default()).unwrap();
            let (_, vl) = subset_search(&ClosureObjective(f), m, k, SearchMode::Local, &SolverOptions::default()).unwrap();
            assert!(vl >= ve - 1e-12);
        }
    }
}
