use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Estimand, EstimandSpec, PreprocessSpec};
use crate::error::{Error, Result};
use crate::estimation::{aggregate, estimate, score, EstimateConfig, EstimateResult, Normalization};
use crate::methods::MethodConfig;

use super::{generate_scenario, ScenarioSpec};

/// Method id that reports the true effect; useful to check the scoring path.
pub const ORACLE: &str = "oracle";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub methods: Vec<MethodConfig>,
    pub scenarios: Vec<ScenarioSpec>,
    pub reps: usize,
    pub master_seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    /// Wall-clock budget per method per dataset; slower runs count as unsolved.
    pub budget_seconds: f64,
    pub estimand: Estimand,
    pub preprocess: PreprocessSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            methods: vec![MethodConfig::new("naive"), MethodConfig::new("ebal")],
            scenarios: vec![ScenarioSpec::default()],
            reps: 10,
            master_seed: 0,
            workers: None,
            budget_seconds: 60.0,
            estimand: Estimand::Satt,
            preprocess: PreprocessSpec::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if self.methods.is_empty() || self.scenarios.is_empty() {
            return Err(Error::InvalidInput("need at least one method and one scenario".into()));
        }
        if !(self.budget_seconds > 0.0) {
            return Err(Error::InvalidInput("budget_seconds must be positive".into()));
        }
        if self.estimand == Estimand::Cate {
            return Err(Error::InvalidInput("the benchmark scores sate or satt".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidInput("workers must be at least 1".into()));
        }
        let mut ids: Vec<&str> = self.scenarios.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("scenario ids must be unique".into()));
        }
        for m in &self.methods {
            if m.id != ORACLE {
                m.validate()?;
            }
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        Ok(())
    }
}

/// Stable per-dataset seed: the first eight bytes of
/// `sha256("{scenario}|{rep}|{master}")`.
pub fn derive_seed(scenario: &str, rep: usize, master: u64) -> u64 {
    let digest = Sha256::digest(format!("{scenario}|{rep}|{master}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// One method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub rep: usize,
    pub seed: u64,
    pub method: String,
    pub solved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub point: Option<f64>,
    pub truth: f64,
    pub outcome_sd: f64,
    pub bias: Option<f64>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub datasets_solved: usize,
    pub datasets_total: usize,
    pub mean_bias: f64,
    pub sd_bias: f64,
    pub rmse: f64,
    #[serde(skip)]
    pub mean_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

impl BenchReport {
    /// Columns in the order method, solved count, bias mean, bias SD, RMSE
    /// and, with `timing`, mean seconds.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("method,datasets_solved,datasets_total,bias_mean,bias_sd,rmse");
        if timing {
            out.push_str(",time_mean_sec");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.datasets_solved,
                r.datasets_total,
                num(r.mean_bias),
                num(r.sd_bias),
                num(r.rmse)
            );
            if timing {
                let _ = write!(out, ",{}", num(r.mean_time_seconds));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table with three decimals.
    pub fn to_table(&self, timing: bool) -> String {
        let mut header = vec!["Method", "Datasets", "Bias Mean", "Bias SD", "RMSE"];
        if timing {
            header.push("Time Mean (sec)");
        }
        let fmt = |v: f64| if v.is_nan() { "NA".to_string() } else { format!("{v:.3}") };
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut cells = vec![
                r.method.clone(),
                format!("{}/{}", r.datasets_solved, r.datasets_total),
                fmt(r.mean_bias),
                fmt(r.sd_bias),
                fmt(r.rmse),
            ];
            if timing {
                cells.push(fmt(r.mean_time_seconds));
            }
            rows.push(cells);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub report: BenchReport,
    pub records: Vec<RunRecord>,
}

impl BenchOutput {
    /// One JSON object per run, in (scenario, rep, method) order.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable record") + "\n")
            .collect()
    }
}

/// Summarizes run records; rows follow the first appearance of each method.
pub fn summarize(records: &[RunRecord], methods: &[String]) -> BenchReport {
    let rows = methods
        .iter()
        .map(|m| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| &r.method == m).collect();
            let biases: Vec<f64> = mine.iter().filter(|r| r.solved).filter_map(|r| r.bias).collect();
            let agg = aggregate(&biases);
            let time = if mine.is_empty() {
                f64::NAN
            } else {
                mine.iter().map(|r| r.seconds).sum::<f64>() / mine.len() as f64
            };
            BenchRow {
                method: m.clone(),
                datasets_solved: agg.solved,
                datasets_total: mine.len(),
                mean_bias: agg.mean_bias,
                sd_bias: agg.sd_bias,
                rmse: agg.rmse,
                mean_time_seconds: time,
            }
        })
        .collect();
    BenchReport { rows }
}

fn run_one(cfg: &BenchConfig, spec: &ScenarioSpec, rep: usize) -> Vec<RunRecord> {
    let seed = derive_seed(&spec.id, rep, cfg.master_seed);
    let estimand = match cfg.estimand {
        Estimand::Sate => EstimandSpec::sate(),
        _ => EstimandSpec::satt(),
    };
    let scenario = generate_scenario(&spec.with_seed(seed));
    cfg.methods
        .iter()
        .map(|m| {
            let mut rec = RunRecord {
                scenario: spec.id.clone(),
                rep,
                seed,
                method: m.id.clone(),
                solved: false,
                error: None,
                point: None,
                truth: f64::NAN,
                outcome_sd: f64::NAN,
                bias: None,
                seconds: 0.0,
            };
            let s = match &scenario {
                Ok(s) => s,
                Err(e) => {
                    rec.error = Some(format!("scenario generation failed: {e}"));
                    return rec;
                }
            };
            rec.truth = match cfg.estimand {
                Estimand::Sate => s.truth.true_sate,
                _ => s.truth.true_satt,
            };
            rec.outcome_sd = s.truth.outcome_sd;
            let start = Instant::now();
            let result: Result<EstimateResult> = if m.id == ORACLE {
                Ok(EstimateResult {
                    estimand: estimand.clone(),
                    point: rec.truth,
                    method: ORACLE.into(),
                    estimator: "truth".into(),
                    n_used: s.data.n(),
                    weights_summary: Vec::new(),
                })
            } else {
                let ecfg = EstimateConfig {
                    method: m.clone(),
                    estimand: estimand.clone(),
                    preprocess: cfg.preprocess.clone(),
                    normalization: Normalization::Hajek,
                };
                estimate(&s.data, &ecfg).map(|o| o.result)
            };
            rec.seconds = start.elapsed().as_secs_f64();
            match result.and_then(|r| score(&r, &s.truth).map(|sc| (r.point, sc.bias))) {
                Ok(_) if rec.seconds > cfg.budget_seconds => {
                    rec.error = Some(format!("over budget ({:.1} s)", rec.seconds));
                }
                Ok((point, bias)) => {
                    rec.solved = true;
                    rec.point = Some(point);
                    rec.bias = Some(bias);
                }
                Err(e) => {
                    log::debug!("{} on {} rep {rep}: {e}", m.id, spec.id);
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect()
}

/// Runs every method on every replication of every scenario. Method
/// failures are tallied as unsolved runs.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let tasks: Vec<(&ScenarioSpec, usize)> = cfg
        .scenarios
        .iter()
        .flat_map(|s| (0..cfg.reps).map(move |r| (s, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| run_one(cfg, s, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let methods: Vec<String> = cfg.methods.iter().map(|m| m.id.clone()).collect();
    Ok(BenchOutput {
        report: summarize(&records, &methods),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            methods: vec![MethodConfig::new(ORACLE), MethodConfig::new("naive")],
            scenarios: vec![ScenarioSpec {
                n: 120,
                p: 3,
                ..Default::default()
            }],
            reps: 3,
            workers: Some(2),
            ..Default::default()
        }
    }

    #[test]
    fn oracle_row_is_exact() {
        let out = run_benchmark(&small()).unwrap();
        let o = out.report.row(ORACLE).unwrap();
        assert_eq!((o.datasets_solved, o.mean_bias, o.rmse), (3, 0.0, 0.0));
        assert_eq!(out.report.rows.len(), 2);
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed("a", 1, 2), derive_seed("a", 1, 2));
        assert_ne!(derive_seed("a", 1, 2), derive_seed("a", 2, 1));
    }

    #[test]
    fn worker_count_does_not_change_report() {
        let a = run_benchmark(&small()).unwrap();
        let b = run_benchmark(&BenchConfig {
            workers: Some(1),
            ..small()
        })
        .unwrap();
        assert_eq!(a.report.to_csv(false), b.report.to_csv(false));
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }
}
