//! Experiment harness: TOML configs, multi-run execution, CSV emission and
//! debug subcommands.
//!
//! Output files written by [`cmd_run`] into the output directory:
//!
//! | file | columns |
//! |------|---------|
//! | `acc_epoch.csv` | `epoch, run_0 .. run_{R-1}, mean, std` |
//! | `weights.csv` | `run, epoch, client_id, weight, is_malicious` |
//! | `detection.csv` | `run, tp, fp, fn, tn, precision, recall, f1, accuracy` |
//! | `manifest.toml` | resolved config, per-run seeds and divergence flags |
//!
//! Floats are written as `{:.16e}` (17 significant digits). A run that
//! diverges leaves its later accuracy cells empty; `mean` and `std` cover the
//! runs that have a value. `std` is the sample standard deviation, 0 for a
//! single value.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use fedlaw_core::aggregators::AggregatorSpec;
use fedlaw_core::data::partition_concentration;
use fedlaw_core::engine::{BetaSchedule, Method};
use fedlaw_core::experiment::{build_scenario, run_once, ExperimentConfig, RunResult};
use fedlaw_core::simplex::{project_sparse_capped_simplex, SimplexSpec};
use serde::Serialize;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad input: unreadable or invalid config, bad arguments. Exit 1.
    Config(String),
    /// Failure while executing a valid request. Exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Invalid inputs surface as config errors, everything else as runtime.
fn from_core(e: fedlaw_core::Error) -> CliError {
    use fedlaw_core::Error as E;
    match e {
        E::Config(_) | E::Domain(_) | E::Infeasible(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses and validates a config. `origin` names the source in messages.
/// Unknown keys are rejected with their dotted path.
pub fn parse_config(text: &str, origin: &str) -> CliResult<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let mut unknown = Vec::new();
    let cfg: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    unknown.extend(unknown_method_keys(text, &cfg.engine.method));
    if !unknown.is_empty() {
        return Err(CliError::Config(format!(
            "{origin}: unknown field(s): {}",
            unknown.join(", ")
        )));
    }
    cfg.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(cfg)
}

/// Keys of `[engine.method]` that the parsed method does not serialize back.
/// The flattened aggregator table cannot reject unknown keys itself.
fn unknown_method_keys(text: &str, method: &Method) -> Vec<String> {
    let Ok(raw) = text.parse::<toml::Table>() else {
        return Vec::new();
    };
    let Some(given) = raw
        .get("engine")
        .and_then(|e| e.get("method"))
        .and_then(toml::Value::as_table)
    else {
        return Vec::new();
    };
    let known = toml::Table::try_from(method).unwrap_or_default();
    given
        .keys()
        .filter(|k| !known.contains_key(*k))
        .map(|k| format!("engine.method.{k}"))
        .collect()
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Full-precision float formatting used in every CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Mean and sample standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn acc_epoch_csv(results: &[RunResult], epochs: usize) -> String {
    let mut out = String::from("epoch");
    for r in results {
        out.push_str(&format!(",run_{}", r.run));
    }
    out.push_str(",mean,std\n");
    for epoch in 0..epochs {
        out.push_str(&epoch.to_string());
        let mut present = Vec::new();
        for r in results {
            out.push(',');
            if let Some(t) = r.outcome.traces.get(epoch) {
                out.push_str(&fmt_f64(t.test_accuracy));
                present.push(t.test_accuracy);
            }
        }
        let (mean, std) = mean_std(&present);
        out.push_str(&format!(",{},{}\n", fmt_f64(mean), fmt_f64(std)));
    }
    out
}

fn weights_csv(results: &[RunResult]) -> String {
    let mut out = String::from("run,epoch,client_id,weight,is_malicious\n");
    for r in results {
        for t in &r.outcome.traces {
            for (c, w) in t.weights.as_slice().iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{c},{},{}\n",
                    r.run,
                    t.epoch,
                    fmt_f64(*w),
                    u8::from(r.malicious.contains(&c))
                ));
            }
        }
    }
    out
}

fn detection_csv(results: &[RunResult]) -> String {
    let mut out = String::from("run,tp,fp,fn,tn,precision,recall,f1,accuracy\n");
    for r in results {
        match r.detection {
            Some(d) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.run,
                d.tp,
                d.fp,
                d.fn_,
                d.tn,
                fmt_f64(d.precision),
                fmt_f64(d.recall),
                fmt_f64(d.f1),
                fmt_f64(d.accuracy)
            )),
            None => out.push_str(&format!("{},,,,,,,,\n", r.run)),
        }
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    base_seed: u64,
    repeats: usize,
    resolved: ResolvedSummary,
    runs: Vec<RunEntry>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct ResolvedSummary {
    method: String,
    n_clients: usize,
    n_malicious: usize,
    s: usize,
    t: f64,
    weight_update_rounds: usize,
    aggregator: Option<String>,
}

#[derive(Serialize)]
struct RunEntry {
    run: usize,
    seed: u64,
    malicious: Vec<usize>,
    epochs_completed: usize,
    diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_accuracy: Option<f64>,
}

fn manifest_toml(cfg: &ExperimentConfig, results: &[RunResult]) -> CliResult<String> {
    let n = cfg.partition.n_clients;
    let engine = cfg.engine.resolve(n, cfg.malicious_fraction).map_err(from_core)?;
    let manifest = Manifest {
        tool: "fedlaw",
        version: env!("CARGO_PKG_VERSION"),
        base_seed: cfg.seed,
        repeats: cfg.repeats,
        resolved: ResolvedSummary {
            method: cfg.engine.method.name(),
            n_clients: n,
            n_malicious: cfg.n_malicious(),
            s: engine.spec.s(),
            t: engine.spec.t(),
            weight_update_rounds: engine.weight_update_rounds,
            aggregator: engine.aggregator.map(|a| format!("{:?}", a.rule)),
        },
        runs: results
            .iter()
            .map(|r| RunEntry {
                run: r.run,
                seed: r.seed,
                malicious: r.malicious.iter().copied().collect(),
                epochs_completed: r.outcome.traces.len(),
                diverged: r.outcome.divergence.is_some(),
                divergence_epoch: r.outcome.divergence.as_ref().map(|d| d.epoch),
                divergence_reason: r.outcome.divergence.as_ref().map(|d| d.reason.clone()),
                final_accuracy: r.final_accuracy(),
            })
            .collect(),
        config: cfg,
    };
    toml::to_string(&manifest).map_err(|e| CliError::Runtime(format!("manifest: {e}")))
}

/// Runs `cfg.repeats` runs (run `r` seeded `cfg.seed + r`) and writes the
/// CSVs and manifest into `out`. Divergent runs are recorded, not errors.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<RunResult>> {
    cfg.validate().map_err(from_core)?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let results = (0..cfg.repeats)
        .map(|r| run_once(cfg, r).map_err(from_core))
        .collect::<CliResult<Vec<_>>>()?;
    write_file(&out.join("acc_epoch.csv"), &acc_epoch_csv(&results, cfg.engine.epochs))?;
    write_file(&out.join("weights.csv"), &weights_csv(&results))?;
    write_file(&out.join("detection.csv"), &detection_csv(&results))?;
    write_file(&out.join("manifest.toml"), &manifest_toml(cfg, &results)?)?;
    Ok(results)
}

/// Config fields a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    MaliciousFraction,
    Q,
    Aggregator,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Beta => "beta",
            Self::MaliciousFraction => "malicious_fraction",
            Self::Q => "q",
            Self::Aggregator => "aggregator",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "malicious_fraction" => Ok(Self::MaliciousFraction),
            "q" => Ok(Self::Q),
            "aggregator" => Ok(Self::Aggregator),
            _ => Err(CliError::Config(format!(
                "unknown sweep parameter '{s}' (expected beta, malicious_fraction, q or aggregator)"
            ))),
        }
    }
}

fn parse_real(param: SweepParam, value: &str) -> CliResult<f64> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{}: '{value}' is not a number", param.name())))
}

/// Parses an aggregator sweep value: `fedlaw`, `bsum`, or a baseline rule
/// kind such as `krum` or `trimmed_mean`, with its default parameters.
pub fn parse_method(value: &str) -> CliResult<Method> {
    match value.trim() {
        "fedlaw" => Ok(Method::Fedlaw),
        "bsum" => Ok(Method::Bsum),
        kind => {
            let spec: AggregatorSpec = toml::from_str(&format!("kind = \"{kind}\""))
                .map_err(|_| CliError::Config(format!("aggregator: unknown rule '{kind}'")))?;
            Ok(Method::Baseline { aggregator: spec })
        }
    }
}

/// `cfg` with `param` set to `value`.
pub fn apply_sweep_value(cfg: &ExperimentConfig, param: SweepParam, value: &str) -> CliResult<ExperimentConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::Beta => {
            c.engine.beta = BetaSchedule::Fixed {
                value: parse_real(param, value)?,
            }
        }
        SweepParam::MaliciousFraction => c.malicious_fraction = parse_real(param, value)?,
        SweepParam::Q => c.partition.q = parse_real(param, value)?,
        SweepParam::Aggregator => c.engine.method = parse_method(value)?,
    }
    c.validate()
        .map_err(|e| CliError::Config(format!("{} = {value}: {e}", param.name())))?;
    Ok(c)
}

/// One `summary.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub final_mean: f64,
    pub final_std: f64,
    pub runs: usize,
    pub diverged: usize,
}

/// Final accuracy of every run that completed all epochs.
pub fn completed_final_accuracies(results: &[RunResult], epochs: usize) -> Vec<f64> {
    results
        .iter()
        .filter_map(|r| r.outcome.traces.get(epochs.checked_sub(1)?).map(|t| t.test_accuracy))
        .collect()
}

/// Runs [`cmd_run`] once per value into `out/<param>-<value>` and writes
/// `out/summary.csv` with the final-epoch mean and std per value.
pub fn cmd_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[String], out: &Path) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| apply_sweep_value(cfg, param, v))
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, c) in values.iter().zip(&configs) {
        let dir = out.join(sweep_dir_name(param, value));
        let results = cmd_run(c, &dir)?;
        let finals = completed_final_accuracies(&results, c.engine.epochs);
        let (final_mean, final_std) = mean_std(&finals);
        rows.push(SweepRow {
            value: value.trim().to_string(),
            final_mean,
            final_std,
            runs: results.len(),
            diverged: results.iter().filter(|r| r.outcome.divergence.is_some()).count(),
        });
    }
    let mut csv = String::from("param,value,final_mean,final_std,runs,diverged\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            param.name(),
            r.value,
            fmt_f64(r.final_mean),
            fmt_f64(r.final_std),
            r.runs,
            r.diverged
        ));
    }
    write_file(&out.join("summary.csv"), &csv)?;
    Ok(rows)
}

pub fn sweep_dir_name(param: SweepParam, value: &str) -> String {
    let clean: String = value
        .trim()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{}-{clean}", param.name())
}

/// Parses a comma-separated list of reals.
pub fn parse_vector(input: &str) -> CliResult<Vec<f64>> {
    input
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("'{v}' is not a number")))
        })
        .collect()
}

/// Sparse capped projection of `h` with budget `s` and cap `t`.
pub fn cmd_project(h: &[f64], s: usize, t: f64) -> CliResult<Vec<f64>> {
    let spec = SimplexSpec::new(h.len(), s, t).map_err(from_core)?;
    project_sparse_capped_simplex(h, &spec)
        .map(|w| w.into_inner())
        .map_err(from_core)
}

/// Per-client table for run 0 of `cfg`: label group, shard size, honest
/// label histogram and attacker flag.
pub fn partition_stats(cfg: &ExperimentConfig) -> CliResult<String> {
    let scenario = build_scenario(cfg, 0).map_err(from_core)?;
    let shards = partition_concentration(&scenario.train, &scenario.partition).map_err(from_core)?;
    let classes = scenario.train.num_classes();
    let malicious: &BTreeSet<usize> = scenario.malicious();
    let mut out = String::from("client_id,group,n_examples,is_malicious");
    for l in 0..classes {
        out.push_str(&format!(",label_{l}"));
    }
    out.push('\n');
    for shard in &shards {
        let mut hist = vec![0usize; classes];
        for &i in &shard.indices {
            hist[scenario.train.labels()[i]] += 1;
        }
        out.push_str(&format!(
            "{},{},{},{}",
            shard.client_id,
            scenario.partition.group_of_client(shard.client_id),
            shard.indices.len(),
            u8::from(malicious.contains(&shard.client_id))
        ));
        for h in hist {
            out.push_str(&format!(",{h}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Output directory: the explicit flag wins over the config's `output_dir`.
pub fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    flag.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --output or set output_dir".into()))
}
