//! Feasible weight sets over the subjects of U, with membership tests and
//! Euclidean projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightSet {
    /// All of R^dim.
    General { dim: usize },
    Simplex { dim: usize },
    /// Simplex capped at `b` per coordinate.
    BSimplex { dim: usize, b: f64 },
    /// Exactly `n_prime` subjects, each weighted `1/n_prime`.
    Subset { dim: usize, n_prime: usize },
    /// A subset of any size `>= n_prime`.
    GeqSubset { dim: usize, n_prime: usize },
    /// Multiples of `1/n_prime` summing to one.
    Multisubset { dim: usize, n_prime: usize },
}

impl WeightSet {
    pub fn dim(&self) -> usize {
        match *self {
            WeightSet::General { dim }
            | WeightSet::Simplex { dim }
            | WeightSet::BSimplex { dim, .. }
            | WeightSet::Subset { dim, .. }
            | WeightSet::GeqSubset { dim, .. }
            | WeightSet::Multisubset { dim, .. } => dim,
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(self, WeightSet::General { .. } | WeightSet::Simplex { .. } | WeightSet::BSimplex { .. })
    }

    /// Checks the parameters describe a nonempty set.
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightSet::BSimplex { dim, b } => {
                if !(b > 0.0 && b <= 1.0) {
                    return Err(Error::InvalidInput(format!("b-simplex bound {b} outside (0, 1]")));
                }
                if b * (dim as f64) < 1.0 - 1e-12 {
                    return Err(Error::Infeasible(format!("b-simplex with b={b} and dim={dim} is empty")));
                }
            }
            WeightSet::Subset { dim, n_prime } | WeightSet::GeqSubset { dim, n_prime } => {
                if n_prime == 0 || n_prime > dim {
                    return Err(Error::InvalidInput(format!("subset size {n_prime} invalid for dim {dim}")));
                }
            }
            WeightSet::Multisubset { n_prime, .. } if n_prime == 0 => {
                return Err(Error::InvalidInput("multisubset needs n' >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// The canonical element: uniform weights (or uniform over the first
    /// `n'` coordinates for the subset kinds).
    pub fn uniform(&self) -> Vec<f64> {
        let dim = self.dim();
        match *self {
            WeightSet::Subset { n_prime, .. } | WeightSet::GeqSubset { n_prime, .. } => {
                (0..dim).map(|i| if i < n_prime { 1.0 / n_prime as f64 } else { 0.0 }).collect()
            }
            WeightSet::Multisubset { n_prime, .. } => {
                let mut w = vec![0.0; dim];
                for k in 0..n_prime {
                    w[k % dim] += 1.0 / n_prime as f64;
                }
                w
            }
            _ => vec![1.0 / dim as f64; dim],
        }
    }

    /// Euclidean projection for the convex kinds.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        match *self {
            WeightSet::General { .. } => Ok(v.to_vec()),
            WeightSet::Simplex { .. } => project_simplex(v),
            WeightSet::BSimplex { b, .. } => project_box_simplex(v, b),
            _ => Err(Error::InvalidInput("projection is only defined for convex weight sets".into())),
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Membership up to `tol` on sums, bounds and grid values.
pub fn contains(w: &[f64], set: &WeightSet, tol: f64) -> Result<bool> {
    if w.len() != set.dim() {
        return Err(Error::Dimension {
            expected: set.dim(),
            got: w.len(),
        });
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Ok(false);
    }
    let sum: f64 = w.iter().sum();
    let on_simplex = || close(sum, 1.0, tol) && w.iter().all(|&x| x >= -tol);
    Ok(match *set {
        WeightSet::General { .. } => true,
        WeightSet::Simplex { .. } => on_simplex(),
        WeightSet::BSimplex { b, .. } => on_simplex() && w.iter().all(|&x| x <= b + tol),
        WeightSet::Subset { n_prime, .. } => {
            let unit = 1.0 / n_prime as f64;
            on_simplex() && w.iter().all(|&x| close(x, 0.0, tol) || close(x, unit, tol))
        }
        WeightSet::GeqSubset { n_prime, .. } => {
            let k = w.iter().filter(|&&x| !close(x, 0.0, tol)).count();
            k >= n_prime && on_simplex() && {
                let unit = 1.0 / k as f64;
                w.iter().all(|&x| close(x, 0.0, tol) || close(x, unit, tol))
            }
        }
        WeightSet::Multisubset { n_prime, .. } => {
            let np = n_prime as f64;
            on_simplex() && w.iter().all(|&x| close(x * np, (x * np).round(), tol * np))
        }
    })
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("projection input has non-finite entries".into()));
    }
    Ok(())
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
///
/// Points already on the simplex to within accumulated rounding are
/// returned unchanged, which makes the map exactly idempotent.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v)?;
    let n = v.len();
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 4.0 * f64::EPSILON * n as f64 {
        return Ok(v.to_vec());
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Euclidean projection onto `simplex ∩ [0, b]^dim` by bisection on the
/// shift θ in `clip(v - θ, 0, b)`, finished with an exact solve on the
/// free coordinates.
pub fn project_box_simplex(v: &[f64], b: f64) -> Result<Vec<f64>> {
    check_finite(v)?;
    let n = v.len();
    WeightSet::BSimplex { dim: n, b }.validate()?;
    if b >= 1.0 {
        return project_simplex(v);
    }
    let clipped_sum = |theta: f64| v.iter().map(|&x| (x - theta).clamp(0.0, b)).sum::<f64>();
    let (vmin, vmax) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    // sum is b*n >= 1 at lo and 0 at hi
    let mut lo = vmin - b;
    let mut hi = vmax;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clipped_sum(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    // exact θ for the identified active pattern
    let (mut free_sum, mut free_count, mut capped) = (0.0, 0usize, 0usize);
    for &x in v {
        let y = x - theta;
        if y >= b {
            capped += 1;
        } else if y > 0.0 {
            free_sum += x;
            free_count += 1;
        }
    }
    if free_count > 0 {
        let exact = (free_sum + b * capped as f64 - 1.0) / free_count as f64;
        let consistent = v.iter().all(|&x| {
            let y = x - theta;
            let ye = x - exact;
            if y >= b {
                ye >= b - 1e-12
            } else if y > 0.0 {
                ye > -1e-12 && ye < b + 1e-12
            } else {
                ye <= 1e-12
            }
        });
        if consistent {
            theta = exact;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).clamp(0.0, b)).collect())
}

/// The subset-set point nearest to `v`: weight `1/n'` on the `n'` largest
/// entries, ties broken by lowest index.
pub fn nearest_subset(v: &[f64], n_prime: usize) -> Result<Vec<f64>> {
    WeightSet::Subset { dim: v.len(), n_prime }.validate()?;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut w = vec![0.0; v.len()];
    for &i in &order[..n_prime] {
        w[i] = 1.0 / n_prime as f64;
    }
    Ok(w)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force projections: enumerate every active pattern, build the
    //! affine projection for it and keep the closest feasible candidate.

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// `cap = None` gives the plain simplex.
    pub fn project_by_enumeration(v: &[f64], cap: Option<f64>) -> Vec<f64> {
        let n = v.len();
        let states = if cap.is_some() { 3usize } else { 2 };
        let total = states.pow(n as u32);
        let b = cap.unwrap_or(f64::INFINITY);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for code in 0..total {
            // state 0 = zero, 1 = free, 2 = capped at b
            let mut c = code;
            let state: Vec<usize> = (0..n)
                .map(|_| {
                    let s = c % states;
                    c /= states;
                    s
                })
                .collect();
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
            let capped_count = state.iter().filter(|&&s| s == 2).count();
            let capped_mass = if capped_count > 0 { capped_count as f64 * b } else { 0.0 };
            let mut w = vec![0.0; n];
            for i in 0..n {
                if state[i] == 2 {
                    w[i] = b;
                }
            }
            if free.is_empty() {
                if (capped_mass - 1.0).abs() > 1e-12 {
                    continue;
                }
            } else {
                let s: f64 = free.iter().map(|&i| v[i]).sum();
                let theta = (s + capped_mass - 1.0) / free.len() as f64;
                for &i in &free {
                    w[i] = v[i] - theta;
                }
            }
            let feasible = w.iter().all(|&x| x >= -1e-13 && x <= b + 1e-13);
            if !feasible {
                continue;
            }
            let d = dist2(&w, v);
            if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                best = Some((d, w));
            }
        }
        best.expect("set nonempty").1
    }
}
