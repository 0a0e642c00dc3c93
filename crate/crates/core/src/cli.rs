//! Command-line front end: `simulate`, `balance`, `estimate`, `bench` and
//! `diagnose`.
//!
//! Exit status is 0 on success, 2 when a method reports an infeasible or
//! unsolved problem, and 1 for usage and input errors.

use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, preprocess, write_csv, CateSelector, Dataset, Estimand, EstimandSpec, PreprocessSpec, Schema};
use crate::error::{Error, Result};
use crate::estimation::{estimate, EstimateConfig, Normalization};
use crate::methods::{run_balancer, FeatureSpec, MethodConfig, METHOD_IDS};
use crate::sim::{generate_scenario, illustrative_example, run_benchmark, BenchConfig, ScenarioSpec};
use crate::solvers::logistic_fit;

#[derive(Debug, Parser)]
#[command(name = "optbal", version, about = "Covariate balancing weights and effect estimation")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic study as CSV plus schema and truth files.
    Simulate(SimulateArgs),
    /// Fit balancing weights and report covariate balance.
    Balance(DataArgs),
    /// Fit weights, then estimate the treatment effect.
    Estimate(DataArgs),
    /// Run the benchmark harness.
    Bench(BenchArgs),
    /// Summarize group sizes, covariate differences and propensity overlap.
    Diagnose(DataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Illustrative,
    Scenario,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: Option<SimKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; the schema and truth are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON column-role sidecar; defaults to `<input stem>.schema.json`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// sate, satt or cate.
    #[arg(long)]
    pub estimand: Option<String>,
    /// Subgroup for cate, e.g. `sex=female,smoker=1`.
    #[arg(long)]
    pub cate: Option<String>,
    /// raw, raw+squares, raw+squares+interactions or kernel.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// hajek or raw (raw applies to ipw).
    #[arg(long)]
    pub normalization: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Balance table CSV for `balance`; printed when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated method ids; `oracle` reports the true effect.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    /// Output directory for report.csv, report.txt and runs.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add the mean wall time column.
    #[arg(long)]
    pub timing: bool,
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub method: Option<MethodConfig>,
    pub estimand: Option<String>,
    pub cate: Option<String>,
    pub normalization: Option<String>,
    pub preprocess: Option<PreprocessSpec>,
    pub seed: Option<u64>,
    pub kind: Option<SimKind>,
    pub scenario: Option<ScenarioSpec>,
    pub bench: Option<BenchConfig>,
}

fn pick<T: PartialEq + Debug>(name: &str, flag: Option<T>, config: Option<T>) -> Option<T> {
    match (flag, config) {
        (Some(f), Some(c)) => {
            if f != c {
                log::warn!("--{name} {f:?} overrides {c:?} from the config file");
            }
            Some(f)
        }
        (f, c) => f.or(c),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

struct Resolved {
    data: Dataset,
    method: MethodConfig,
    estimand: EstimandSpec,
    preprocess: PreprocessSpec,
    normalization: Normalization,
    out: Option<PathBuf>,
    table: Option<PathBuf>,
}

fn resolve(args: DataArgs, cfg: RunConfig, needs_method: bool) -> Result<Resolved> {
    let input = pick("input", args.input, cfg.input).ok_or_else(|| usage("--input is required"))?;
    let schema_path = pick("schema", args.schema, cfg.schema).unwrap_or_else(|| sibling(&input, ".schema.json"));
    let schema = Schema::from_json_file(&schema_path)?;
    let data = load_csv(&input, &schema)?;

    let mut method = cfg.method.clone().unwrap_or_default();
    let config_id = cfg.method.as_ref().map(|m| m.id.clone());
    let id = pick("method", args.method, config_id);
    match id {
        Some(id) => method.id = id,
        None if needs_method => return Err(usage(format!("--method is required; valid methods: {}", METHOD_IDS.join(", ")))),
        None => {}
    }
    let from_cfg = cfg.method.as_ref();
    let features = args.features.map(|f| f.parse::<FeatureSpec>()).transpose()?;
    if let Some(f) = pick("features", features, from_cfg.map(|m| m.features.clone())) {
        method.features = f;
    }
    if let Some(d) = pick("delta", args.delta, from_cfg.map(|m| m.delta)) {
        method.delta = d;
    }
    if let Some(s) = pick("sigma", args.sigma, from_cfg.and_then(|m| m.sigma)) {
        method.sigma = Some(s);
    }
    if let Some(b) = pick("bins", args.bins, from_cfg.map(|m| m.bins)) {
        method.bins = b;
    }
    if let Some(s) = pick("seed", args.seed, cfg.seed) {
        method.solver.seed = s;
        method.arb.opts.seed = s;
    }
    if needs_method {
        method.validate()?;
    }

    let kind: Estimand = pick("estimand", args.estimand, cfg.estimand)
        .unwrap_or_else(|| "satt".into())
        .parse()?;
    let estimand = match kind {
        Estimand::Sate => EstimandSpec::sate(),
        Estimand::Satt => EstimandSpec::satt(),
        Estimand::Cate => {
            let text = pick("cate", args.cate, cfg.cate).ok_or_else(|| usage("--estimand cate needs --cate"))?;
            EstimandSpec::cate(CateSelector::parse(&data, &text)?)
        }
    };
    let normalization = match pick("normalization", args.normalization, cfg.normalization).as_deref() {
        None | Some("hajek") => Normalization::Hajek,
        Some("raw") => Normalization::Raw,
        Some(other) => return Err(usage(format!("unknown normalization '{other}' (hajek or raw)"))),
    };
    Ok(Resolved {
        data,
        method,
        estimand,
        preprocess: cfg.preprocess.unwrap_or_default(),
        normalization,
        out: pick("out", args.out, cfg.out),
        table: pick("table", args.table, cfg.table),
    })
}

fn cmd_simulate(args: SimulateArgs, cfg: RunConfig) -> Result<()> {
    let out = pick("out", args.out, cfg.out).ok_or_else(|| usage("--out is required"))?;
    let kind = pick("kind", args.kind, cfg.kind).unwrap_or(SimKind::Scenario);
    let seed = pick("seed", args.seed, cfg.seed).unwrap_or(0);
    let (data, truth) = match kind {
        SimKind::Illustrative => {
            let s = illustrative_example(args.n.unwrap_or(1000), seed)?;
            (s.data, serde_json::json!({ "sample": s.truth, "population": s.analytic }))
        }
        SimKind::Scenario => {
            let mut spec = cfg.scenario.unwrap_or_default();
            spec.seed = seed;
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(p) = args.p {
                spec.p = p;
            }
            let s = generate_scenario(&spec)?;
            (s.data, serde_json::json!({ "sample": s.truth, "scenario": spec }))
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let schema = write_csv(&data, &out)?;
    schema.to_json_file(sibling(&out, ".schema.json"))?;
    write_text(&sibling(&out, ".truth.json"), &(serde_json::to_string_pretty(&truth)? + "\n"))?;
    log::info!("wrote {} subjects to {}", data.n(), out.display());
    Ok(())
}

fn cmd_balance(args: DataArgs, cfg: RunConfig) -> Result<()> {
    let r = resolve(args, cfg, true)?;
    let data = r.data.permuted(&r.data.id_order())?;
    let design = preprocess(&data, &r.preprocess)?;
    let balancer = r.method.build()?;
    let (pairs, solutions) = run_balancer(balancer.as_ref(), &data, &design, &r.estimand)?;
    let mut table = String::from("role,feature,before,after\n");
    let mut json = Vec::new();
    for (pair, sol) in pairs.iter().zip(&solutions) {
        let role = serde_json::to_value(pair.role)?;
        let role = role.as_str().unwrap_or("pair");
        for f in &sol.balance_report {
            table.push_str(&format!("{role},{},{},{}\n", f.feature, f.before, f.after));
        }
        if !sol.diagnostics.converged {
            log::warn!("{} stopped before meeting its tolerance on the {role} pair", sol.method);
        }
        let mut v = sol.to_json(data.ids());
        v["role"] = serde_json::json!(role);
        json.push(v);
    }
    let doc = serde_json::json!({ "estimand": r.estimand, "solutions": json });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match (&r.out, &r.table) {
        (Some(out), table_path) => {
            write_text(out, &text)?;
            emit(table_path.as_deref(), &table)?;
        }
        (None, Some(t)) => {
            write_text(t, &table)?;
            print!("{text}");
        }
        (None, None) => {
            print!("{text}");
            eprint!("{table}");
        }
    }
    Ok(())
}

fn cmd_estimate(args: DataArgs, cfg: RunConfig) -> Result<()> {
    let r = resolve(args, cfg, true)?;
    let ecfg = EstimateConfig {
        method: r.method,
        estimand: r.estimand,
        preprocess: r.preprocess,
        normalization: r.normalization,
    };
    let out = estimate(&r.data, &ecfg)?;
    let text = serde_json::to_string_pretty(&out.result)? + "\n";
    emit(r.out.as_deref(), &text)
}

fn cmd_bench(args: BenchArgs, cfg: RunConfig) -> Result<()> {
    let from_file = cfg.bench.clone();
    let file = from_file.as_ref();
    let mut bench = from_file.clone().unwrap_or_default();
    if let Some(m) = args.methods {
        let ids: Vec<MethodConfig> = m.split(',').map(|s| MethodConfig::new(s.trim())).collect();
        if file.is_some_and(|b| !cfg_methods_equal(&b.methods, &ids)) {
            log::warn!("--methods overrides the method list from the config file");
        }
        bench.methods = ids;
    }
    if let Some(v) = pick("reps", args.reps, file.map(|b| b.reps)) {
        bench.reps = v;
    }
    if let Some(v) = pick("seed", args.seed, file.map(|b| b.master_seed)) {
        bench.master_seed = v;
    }
    bench.workers = pick("workers", args.workers, file.and_then(|b| b.workers));
    if let Some(v) = pick("budget-seconds", args.budget_seconds, file.map(|b| b.budget_seconds)) {
        bench.budget_seconds = v;
    }
    let out = run_benchmark(&bench)?;
    let table = out.report.to_table(args.timing);
    if let Some(dir) = pick("out", args.out, cfg.out) {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(&dir.join("report.csv"), &out.report.to_csv(args.timing))?;
        write_text(&dir.join("report.txt"), &table)?;
        write_text(&dir.join("runs.jsonl"), &out.to_jsonl())?;
    }
    print!("{table}");
    Ok(())
}

fn cfg_methods_equal(a: &[MethodConfig], b: &[MethodConfig]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.id == y.id)
}

fn cmd_diagnose(args: DataArgs, cfg: RunConfig) -> Result<()> {
    let r = resolve(args, cfg, false)?;
    let d = &r.data;
    let design = preprocess(d, &r.preprocess)?;
    let x = design.covariates_only();
    let (t, c) = (d.treated_indices(), d.control_indices());
    let mut text = format!("subjects,{}\ntreated,{}\ncontrols,{}\n", d.n(), t.len(), c.len());
    for dropped in design.dropped() {
        text.push_str(&format!("dropped,{},{}\n", dropped.name, dropped.reason));
    }
    let xt = design.with_intercept();
    match logistic_fit(&xt, d.treatment(), 1e-8, &Default::default()) {
        Ok(fit) => {
            let range = |idx: &[usize]| {
                idx.iter().map(|&i| fit.probabilities[i]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)))
            };
            let (tl, th) = range(&t);
            let (cl, ch) = range(&c);
            text.push_str(&format!("propensity_treated,{tl},{th}\npropensity_control,{cl},{ch}\n"));
        }
        Err(e) => text.push_str(&format!("propensity,unavailable,{e}\n")),
    }
    text.push_str("feature,mean_treated,mean_control,std_mean_diff\n");
    let mean = |idx: &[usize], k: usize| idx.iter().map(|&i| x[(i, k)]).sum::<f64>() / idx.len() as f64;
    let var = |idx: &[usize], k: usize, m: f64| {
        idx.iter().map(|&i| (x[(i, k)] - m).powi(2)).sum::<f64>() / (idx.len().max(2) - 1) as f64
    };
    for (k, name) in design.covariate_names().iter().enumerate() {
        let (mt, mc) = (mean(&t, k), mean(&c, k));
        let pooled = ((var(&t, k, mt) + var(&c, k, mc)) / 2.0).sqrt();
        let smd = if pooled > 0.0 { (mt - mc) / pooled } else { 0.0 };
        text.push_str(&format!("{name},{mt},{mc},{smd}\n"));
    }
    emit(r.out.as_deref(), &text)
}

/// Maps an error to the documented exit status.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_method_failure() {
        2
    } else {
        1
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, cfg),
        Command::Balance(a) => cmd_balance(a, cfg),
        Command::Estimate(a) => cmd_estimate(a, cfg),
        Command::Bench(a) => cmd_bench(a, cfg),
        Command::Diagnose(a) => cmd_diagnose(a, cfg),
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
