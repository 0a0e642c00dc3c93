use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Sate,
    Satt,
    Cate,
}

impl std::str::FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sate" => Ok(Estimand::Sate),
            "satt" => Ok(Estimand::Satt),
            "cate" => Ok(Estimand::Cate),
            other => Err(Error::InvalidInput(format!("unknown estimand '{other}' (expected sate, satt or cate)"))),
        }
    }
}

/// Exact-match predicate over dataset columns, `column == value` for every
/// condition. Categorical columns compare level codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateSelector {
    pub conditions: Vec<(usize, f64)>,
}

impl CateSelector {
    pub fn new(conditions: Vec<(usize, f64)>) -> Self {
        CateSelector { conditions }
    }

    /// Parses `name=value[,name=value...]`; categorical values may be given
    /// by level label.
    pub fn parse(d: &Dataset, text: &str) -> Result<Self> {
        let mut conditions = Vec::new();
        for part in text.split(',').filter(|s| !s.trim().is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("selector term '{part}' is not name=value")))?;
            let col = d
                .column_index(name.trim())
                .ok_or_else(|| Error::InvalidInput(format!("unknown selector column '{name}'")))?;
            let meta = &d.columns()[col];
            let v = match meta.levels.iter().position(|l| l == value.trim()) {
                Some(code) => code as f64,
                None => value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("selector value '{value}' for '{name}'")))?,
            };
            conditions.push((col, v));
        }
        Ok(CateSelector { conditions })
    }

    pub fn matches(&self, d: &Dataset, i: usize) -> bool {
        self.conditions.iter().all(|&(c, v)| d.covariates()[(i, c)] == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub kind: Estimand,
    pub cate_selector: Option<CateSelector>,
}

impl EstimandSpec {
    pub fn sate() -> Self {
        EstimandSpec {
            kind: Estimand::Sate,
            cate_selector: None,
        }
    }

    pub fn satt() -> Self {
        EstimandSpec {
            kind: Estimand::Satt,
            cate_selector: None,
        }
    }

    pub fn cate(selector: CateSelector) -> Self {
        EstimandSpec {
            kind: Estimand::Cate,
            cate_selector: Some(selector),
        }
    }

    fn validate(&self) -> Result<()> {
        match (self.kind, &self.cate_selector) {
            (Estimand::Cate, None) => Err(Error::InvalidInput("CATE requires a selector".into())),
            (Estimand::Cate, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidInput("a selector is only valid for CATE".into())),
            _ => Ok(()),
        }
    }
}

/// Which group's weights a pair produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRole {
    TreatedSide,
    ControlSide,
}

/// Weights are estimated over `u` so that the weighted `u` resembles `v`.
/// Indices are 0-based positions in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPair {
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub role: PairRole,
}

impl GroupPair {
    pub fn new(u: Vec<usize>, v: Vec<usize>, role: PairRole) -> Result<Self> {
        if u.is_empty() || v.is_empty() {
            return Err(Error::InvalidInput("group pair with an empty side".into()));
        }
        Ok(GroupPair { u, v, role })
    }
}

pub fn build_groups(d: &Dataset, e: &EstimandSpec) -> Result<Vec<GroupPair>> {
    e.validate()?;
    let treated = d.treated_indices();
    let controls = d.control_indices();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::InvalidInput("need both treated and control subjects".into()));
    }
    match e.kind {
        Estimand::Satt => Ok(vec![GroupPair::new(controls, treated, PairRole::ControlSide)?]),
        Estimand::Sate => {
            let all: Vec<usize> = (0..d.n()).collect();
            Ok(vec![
                GroupPair::new(treated, all.clone(), PairRole::TreatedSide)?,
                GroupPair::new(controls, all, PairRole::ControlSide)?,
            ])
        }
        Estimand::Cate => {
            let sel = e.cate_selector.as_ref().expect("validated");
            let v: Vec<usize> = (0..d.n()).filter(|&i| sel.matches(d, i)).collect();
            if v.is_empty() {
                return Err(Error::InvalidInput("CATE selector matches no subject".into()));
            }
            Ok(vec![
                GroupPair::new(treated, v.clone(), PairRole::TreatedSide)?,
                GroupPair::new(controls, v, PairRole::ControlSide)?,
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> Dataset {
        let rows = vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]];
        Dataset::from_rows(&rows, &[1, 1, 0, 0], None).unwrap()
    }

    #[test]
    fn satt_single_pair() {
        let g = build_groups(&four(), &EstimandSpec::satt()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].u, vec![2, 3]);
        assert_eq!(g[0].v, vec![0, 1]);
        assert_eq!(g[0].role, PairRole::ControlSide);
    }

    #[test]
    fn sate_two_pairs_over_everyone() {
        let g = build_groups(&four(), &EstimandSpec::sate()).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].u, vec![0, 1]);
        assert_eq!(g[1].u, vec![2, 3]);
        for p in &g {
            assert_eq!(p.v, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn cate_selector() {
        let d = four();
        let g = build_groups(&d, &EstimandSpec::cate(CateSelector::new(vec![(0, 1.0)]))).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].v, vec![1, 3]);
        let none = EstimandSpec::cate(CateSelector::parse(&d, "x1=7").unwrap());
        assert!(build_groups(&d, &none).is_err());
        let bad = EstimandSpec {
            kind: Estimand::Satt,
            cate_selector: Some(CateSelector::new(vec![])),
        };
        assert!(build_groups(&d, &bad).is_err());
    }
}
