use itertools::Itertools;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::solvers::{SearchMode, SolveDiagnostics, SolverOptions};

use super::{BalanceView, Balancer, WeightSolution};

/// Fixed-ratio matching without replacement, trading total distance against
/// mean balance. Each V subject receives `ratio` distinct U subjects.
#[derive(Debug, Clone)]
pub struct MipMatch {
    pub ratio: usize,
    /// Penalty per design covariate on its mean imbalance; empty means none
    /// and a single value applies to every covariate.
    pub omega: Vec<f64>,
    /// Hard caps per design covariate on mean imbalance, read like `omega`.
    pub eps: Vec<f64>,
    pub mode: SearchMode,
    pub opts: SolverOptions,
}

impl Default for MipMatch {
    fn default() -> Self {
        MipMatch {
            ratio: 1,
            omega: Vec::new(),
            eps: Vec::new(),
            mode: SearchMode::Local,
            opts: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// For each V subject (dataset position), its matched U subjects.
    pub matches: Vec<(usize, Vec<usize>)>,
    pub total_distance: f64,
    pub penalty: f64,
    /// Per-covariate `|matched mean − V mean|`.
    pub imbalance: Vec<f64>,
}

pub const EXHAUSTIVE_SLOTS: usize = 10;

struct Instance {
    x: DMatrix<f64>,
    dist: DMatrix<f64>,
    v_mean: Vec<f64>,
    omega: Vec<f64>,
    eps: Vec<f64>,
    slots: f64,
}

impl Instance {
    fn imbalance(&self, sums: &[f64]) -> Vec<f64> {
        sums.iter()
            .zip(&self.v_mean)
            .map(|(s, v)| (s / self.slots - v).abs())
            .collect()
    }

    /// (constraint violation, distance + penalty)
    fn evaluate(&self, dist: f64, sums: &[f64]) -> (f64, f64) {
        let imb = self.imbalance(sums);
        let viol: f64 = imb.iter().zip(&self.eps).map(|(a, e)| (a - e).max(0.0)).sum();
        let pen: f64 = imb.iter().zip(&self.omega).map(|(a, w)| a * w).sum();
        (viol, dist + pen)
    }
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    let tol = 1e-12;
    if a.0 < b.0 - tol {
        return true;
    }
    if a.0 > b.0 + tol {
        return false;
    }
    a.1 < b.1 - tol * b.1.abs().max(1.0)
}

fn sums_of(x: &DMatrix<f64>, owner: &[Option<usize>]) -> Vec<f64> {
    (0..x.ncols())
        .map(|o| owner.iter().enumerate().filter(|(_, w)| w.is_some()).map(|(i, _)| x[(i, o)]).sum())
        .collect()
}

fn total_distance(dist: &DMatrix<f64>, owner: &[Option<usize>]) -> f64 {
    owner.iter().enumerate().filter_map(|(i, o)| o.map(|j| dist[(i, j)])).sum()
}

fn local(inst: &Instance, ratio: usize, max_moves: usize) -> Vec<Option<usize>> {
    let (mu, nv) = inst.dist.shape();
    let p = inst.x.ncols();
    let mut owner: Vec<Option<usize>> = vec![None; mu];
    for j in 0..nv {
        for _ in 0..ratio {
            let pick = (0..mu)
                .filter(|&i| owner[i].is_none())
                .min_by(|&a, &b| inst.dist[(a, j)].total_cmp(&inst.dist[(b, j)]).then(a.cmp(&b)))
                .expect("enough subjects");
            owner[pick] = Some(j);
        }
    }
    let mut sums = sums_of(&inst.x, &owner);
    let mut dist = total_distance(&inst.dist, &owner);
    let mut current = inst.evaluate(dist, &sums);
    for _ in 0..max_moves {
        let mut best: Option<((f64, f64), usize, usize, bool)> = None;
        let mut trial = vec![0.0; p];
        for i in 0..mu {
            let Some(j) = owner[i] else { continue };
            // hand i's slot to an unused subject
            for k in (0..mu).filter(|&k| owner[k].is_none()) {
                for o in 0..p {
                    trial[o] = sums[o] - inst.x[(i, o)] + inst.x[(k, o)];
                }
                let cand = inst.evaluate(dist - inst.dist[(i, j)] + inst.dist[(k, j)], &trial);
                if better(cand, best.map_or(current, |b| b.0)) {
                    best = Some((cand, i, k, false));
                }
            }
            // exchange partners with another matched subject
            for k in (i + 1..mu).filter(|&k| owner[k].is_some_and(|jk| jk != j)) {
                let jk = owner[k].expect("matched");
                let d = dist - inst.dist[(i, j)] - inst.dist[(k, jk)] + inst.dist[(i, jk)] + inst.dist[(k, j)];
                let cand = inst.evaluate(d, &sums);
                if better(cand, best.map_or(current, |b| b.0)) {
                    best = Some((cand, i, k, true));
                }
            }
        }
        let Some((cand, i, k, exchange)) = best else { break };
        if exchange {
            let (ji, jk) = (owner[i], owner[k]);
            owner[i] = jk;
            owner[k] = ji;
        } else {
            owner[k] = owner[i];
            owner[i] = None;
            for o in 0..p {
                sums[o] += inst.x[(k, o)] - inst.x[(i, o)];
            }
        }
        dist = total_distance(&inst.dist, &owner);
        current = (cand.0, inst.evaluate(dist, &sums).1);
    }
    owner
}

fn exhaustive(inst: &Instance, ratio: usize) -> Option<Vec<Option<usize>>> {
    let (mu, nv) = inst.dist.shape();
    let mut best: Option<((f64, f64), Vec<Option<usize>>)> = None;
    let mut owner = vec![None; mu];
    fn rec(
        j: usize,
        inst: &Instance,
        ratio: usize,
        owner: &mut Vec<Option<usize>>,
        best: &mut Option<((f64, f64), Vec<Option<usize>>)>,
    ) {
        let (mu, nv) = inst.dist.shape();
        if j == nv {
            let score = inst.evaluate(total_distance(&inst.dist, owner), &sums_of(&inst.x, owner));
            if score.0 <= 1e-12 && best.as_ref().is_none_or(|b| score.1 < b.0 .1) {
                *best = Some((score, owner.clone()));
            }
            return;
        }
        let free: Vec<usize> = (0..mu).filter(|&i| owner[i].is_none()).collect();
        for combo in free.into_iter().combinations(ratio) {
            for &i in &combo {
                owner[i] = Some(j);
            }
            rec(j + 1, inst, ratio, owner, best);
            for &i in &combo {
                owner[i] = None;
            }
        }
    }
    let _ = nv;
    rec(0, inst, ratio, &mut owner, &mut best);
    best.map(|b| b.1)
}

pub fn mipmatch_lite(
    view: &BalanceView,
    pair: &GroupPair,
    ratio: usize,
    omega: &[f64],
    eps: &[f64],
    mode: SearchMode,
    opts: &SolverOptions,
) -> Result<(WeightSolution, MatchOutcome)> {
    let x_all = view.x();
    let p = x_all.ncols();
    let (mu, nv) = (pair.u.len(), pair.v.len());
    if ratio < 1 || mu < ratio * nv {
        return Err(Error::InvalidInput(format!(
            "matching {ratio}:1 without replacement needs |U| >= {} (got {mu})",
            ratio * nv
        )));
    }
    let fill = |v: &[f64], default: f64| -> Result<Vec<f64>> {
        match v.len() {
            0 => Ok(vec![default; p]),
            1 => Ok(vec![v[0]; p]),
            l if l == p => Ok(v.to_vec()),
            l => Err(Error::Dimension { expected: p, got: l }),
        }
    };
    let omega = fill(omega, 0.0)?;
    let eps = fill(eps, f64::INFINITY)?;
    if omega.iter().chain(&eps).any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidInput("penalties and tolerances must be nonnegative".into()));
    }
    let x = x_all.select_rows(&pair.u);
    let xv = x_all.select_rows(&pair.v);
    let dist = DMatrix::from_fn(mu, nv, |i, j| (x.row(i) - xv.row(j)).norm());
    let v_mean = (0..p).map(|o| xv.column(o).mean()).collect();
    let inst = Instance {
        x,
        dist,
        v_mean,
        omega,
        eps,
        slots: (ratio * nv) as f64,
    };
    let start = std::time::Instant::now();
    let owner = match mode {
        SearchMode::Local => local(&inst, ratio, opts.max_iters * 100),
        SearchMode::Exhaustive => {
            if ratio * nv > EXHAUSTIVE_SLOTS || mu > EXHAUSTIVE_SLOTS {
                return Err(Error::Budget(format!(
                    "exhaustive matching is limited to {EXHAUSTIVE_SLOTS} slots and {EXHAUSTIVE_SLOTS} candidates"
                )));
            }
            exhaustive(&inst, ratio).ok_or_else(|| Error::Infeasible("no matching satisfies the balance caps".into()))?
        }
    };
    let sums = sums_of(&inst.x, &owner);
    let total = total_distance(&inst.dist, &owner);
    let (viol, score) = inst.evaluate(total, &sums);
    let imbalance = inst.imbalance(&sums);
    if viol > 1e-12 {
        let names = view.design().covariate_names();
        let worst = (0..p)
            .max_by(|&a, &b| (imbalance[a] - inst.eps[a]).total_cmp(&(imbalance[b] - inst.eps[b])))
            .expect("p >= 1");
        return Err(Error::Infeasible(format!(
            "matching cannot meet the balance cap on '{}' (imbalance {:.3e} > {:.3e})",
            names[worst], imbalance[worst], inst.eps[worst]
        )));
    }
    let matches = (0..nv)
        .map(|j| (pair.v[j], (0..mu).filter(|&i| owner[i] == Some(j)).map(|i| pair.u[i]).collect()))
        .collect();
    let outcome = MatchOutcome {
        matches,
        total_distance: total,
        penalty: score - total,
        imbalance,
    };
    let w = owner.iter().map(|o| if o.is_some() { 1.0 } else { 0.0 }).collect();
    let diag = SolveDiagnostics {
        objective: score,
        residual_inf_norm: viol,
        iterations: 1,
        converged: true,
        wall_time: start.elapsed().as_secs_f64(),
    };
    let sol = WeightSolution::new("mipmatch", view, pair, w, diag)?.with_extra("matching", &outcome);
    Ok((sol, outcome))
}

impl Balancer for MipMatch {
    fn id(&self) -> &'static str {
        "mipmatch"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        mipmatch_lite(view, pair, self.ratio, &self.omega, &self.eps, self.mode, &self.opts).map(|r| r.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, Dataset, Estimand, PairRole, PreprocessSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, nu: usize, nv: usize) -> (Dataset, crate::data::DesignMatrix, GroupPair) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = nu + nv;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let z: Vec<u8> = (0..n).map(|i| u8::from(i >= nu)).collect();
        let d = Dataset::from_rows(&rows, &z, None).unwrap();
        let design = preprocess(&d, &PreprocessSpec::default()).unwrap();
        let pair = GroupPair::new((0..nu).collect(), (nu..n).collect(), PairRole::ControlSide).unwrap();
        (d, design, pair)
    }

    #[test]
    fn exact_copies_match_at_zero_distance() {
        let rows = vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![5.0, 5.0], vec![2.0, 0.5], vec![0.0, 1.0]];
        let d = Dataset::from_rows(&rows, &[0, 0, 0, 1, 1], None).unwrap();
        let design = preprocess(&d, &PreprocessSpec::default()).unwrap();
        let view = BalanceView::new(&d, &design, Estimand::Satt).unwrap();
        let pair = GroupPair::new(vec![0, 1, 2], vec![3, 4], PairRole::ControlSide).unwrap();
        let (sol, out) = mipmatch_lite(&view, &pair, 1, &[], &[], SearchMode::Local, &SolverOptions::default()).unwrap();
        assert!(out.total_distance.abs() < 1e-12);
        assert_eq!(sol.weights, vec![1.0, 1.0, 0.0]);
        assert_eq!(out.matches, vec![(3, vec![1]), (4, vec![0])]);
    }

    #[test]
    fn local_search_never_beats_exhaustive() {
        for seed in 0..20 {
            let (d, design, pair) = instance(seed, 7, 3);
            let view = BalanceView::new(&d, &design, Estimand::Satt).unwrap();
            let omega = [0.5, 0.5];
            let opts = SolverOptions::default();
            let (_, ex) = mipmatch_lite(&view, &pair, 2, &omega, &[], SearchMode::Exhaustive, &opts).unwrap();
            let (_, lo) = mipmatch_lite(&view, &pair, 2, &omega, &[], SearchMode::Local, &opts).unwrap();
            let (e, l) = (ex.total_distance + ex.penalty, lo.total_distance + lo.penalty);
            assert!(l >= e - 1e-12, "seed {seed}: {l} < {e}");
        }
    }

    #[test]
    fn larger_penalty_never_worsens_exact_imbalance() {
        for seed in 0..10 {
            let (d, design, pair) = instance(100 + seed, 8, 3);
            let view = BalanceView::new(&d, &design, Estimand::Satt).unwrap();
            let opts = SolverOptions::default();
            let mut last = f64::INFINITY;
            for w in [0.0, 0.5, 2.0, 10.0] {
                let (_, out) = mipmatch_lite(&view, &pair, 1, &[w, w], &[], SearchMode::Exhaustive, &opts).unwrap();
                let total: f64 = out.imbalance.iter().sum();
                assert!(total <= last + 1e-12);
                last = total;
            }
        }
    }

    #[test]
    fn impossible_caps_are_infeasible() {
        let (d, design, pair) = instance(9, 4, 2);
        let view = BalanceView::new(&d, &design, Estimand::Satt).unwrap();
        let r = mipmatch_lite(&view, &pair, 2, &[], &[0.0, 0.0], SearchMode::Exhaustive, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
