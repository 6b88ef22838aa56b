//! Experiment configuration, execution and report emission.
//!
//! A configuration is one TOML document. Running it yields an
//! [`ExperimentReport`] whose metric rows each carry a value, an optional
//! tolerance and a verdict; [`emit_report`] writes the report as JSON, one CSV
//! table per metric family and a plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{
    decode_independent_at, decode_sequential_at, decode_speculative_at, full_inference,
    DecodeConfig, DecodeMode, PositionTable, PredictorPair, SpecTrace, TargetModel,
};
use crate::error::{Error, Result};
use crate::forward::{sample_forward_response, KernelKind, KernelSchedule};
use crate::oracle::{
    clean_posterior_joint, lemma1_identity_gap, mean_field_joint, prefix_posterior,
    regeneration_law, DataLaw, Evidence, JointLaw, Oracle,
};
use crate::stats::{
    cost_accounting, expected_committed_length, ideal_speedup,
    simulate_committed_length, tv_distance, CostModel, EmpiricalJoint,
};
use crate::train::{loss_eval, train_position_conditioned, ContextKey, TimeSampler, TrainConfig};
use crate::types::{Categorical, SeededRng, Sequence, Token, Vocabulary};

pub const REPORT_FORMAT: &str = "dlmlab-report/1";

pub const TV_JOINT: f64 = 0.02;
pub const TV_PLUG_IN: f64 = 0.03;
pub const TV_CELL: f64 = 0.03;
pub const MIN_CELL_VISITS: u64 = 1000;
pub const EXACT_TOL: f64 = 1e-9;
pub const ZERO_MASS_SPECULATIVE: f64 = 0.005;
pub const ZERO_MASS_INDEPENDENT: f64 = 0.01;
pub const TRAIN_TV: f64 = 0.02;
pub const LOSS_SLACK: f64 = 0.02;
pub const SPEEDUP_MATCHED: f64 = 0.01;
pub const SPEEDUP_RANDOM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Exactness,
    Lemma1,
    CommittedLength,
    Speedup,
    FactorizationGap,
    TrainConsistency,
    FullInference,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Exactness,
        ExperimentKind::Lemma1,
        ExperimentKind::CommittedLength,
        ExperimentKind::Speedup,
        ExperimentKind::FactorizationGap,
        ExperimentKind::TrainConsistency,
        ExperimentKind::FullInference,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Exactness => "exactness",
            ExperimentKind::Lemma1 => "lemma1",
            ExperimentKind::CommittedLength => "committed-length",
            ExperimentKind::Speedup => "speedup",
            ExperimentKind::FactorizationGap => "factorization-gap",
            ExperimentKind::TrainConsistency => "train-consistency",
            ExperimentKind::FullInference => "full-inference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub seq: Vec<Token>,
    pub p: f64,
}

/// Named data-law constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LawSpec {
    Uniform {
        vocab_size: usize,
        dim: usize,
    },
    /// Listed sequences with their weights; unlisted ones get zero.
    Table {
        vocab_size: usize,
        dim: usize,
        entries: Vec<TableEntry>,
    },
    Product {
        vocab_size: usize,
        marginals: Vec<Vec<f64>>,
    },
    Markov {
        vocab_size: usize,
        dim: usize,
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
    /// Dirichlet draw over the joint table.
    Random {
        vocab_size: usize,
        dim: usize,
        #[serde(default = "default_concentration")]
        concentration: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_concentration() -> f64 {
    1.0
}

impl LawSpec {
    pub fn vocab_size(&self) -> usize {
        match *self {
            LawSpec::Uniform { vocab_size, .. }
            | LawSpec::Table { vocab_size, .. }
            | LawSpec::Product { vocab_size, .. }
            | LawSpec::Markov { vocab_size, .. }
            | LawSpec::Random { vocab_size, .. } => vocab_size,
        }
    }

    pub fn build(&self) -> Result<DataLaw> {
        let vocab = Vocabulary::new(self.vocab_size())?;
        match self {
            LawSpec::Uniform { dim, .. } => DataLaw::uniform(vocab, *dim),
            LawSpec::Table { dim, entries, .. } => {
                let entries: Vec<(Vec<Token>, f64)> =
                    entries.iter().map(|e| (e.seq.clone(), e.p)).collect();
                DataLaw::from_entries(vocab, *dim, &entries)
            }
            LawSpec::Product { marginals, .. } => {
                let m = marginals
                    .iter()
                    .map(|p| Categorical::new(p.clone()))
                    .collect::<Result<Vec<_>>>()?;
                DataLaw::product(vocab, &m)
            }
            LawSpec::Markov {
                dim,
                initial,
                transition,
                ..
            } => {
                let rows = transition
                    .iter()
                    .map(|p| Categorical::new(p.clone()))
                    .collect::<Result<Vec<_>>>()?;
                DataLaw::markov(vocab, *dim, &Categorical::new(initial.clone())?, &rows)
            }
            LawSpec::Random {
                dim,
                concentration,
                seed,
                ..
            } => DataLaw::random(vocab, *dim, *concentration, *seed),
        }
    }

    fn reseeded(&self, offset: u64) -> LawSpec {
        match self {
            LawSpec::Random {
                vocab_size,
                dim,
                concentration,
                seed,
            } => LawSpec::Random {
                vocab_size: *vocab_size,
                dim: *dim,
                concentration: *concentration,
                seed: seed.wrapping_add(offset),
            },
            other => other.clone(),
        }
    }
}

/// Kernel family with explicit betas, or `steps` constant betas reaching
/// `terminal_rate` corruption at `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_rate: Option<f64>,
}

impl ScheduleSpec {
    pub fn build(&self, vocab: Vocabulary) -> Result<KernelSchedule> {
        match &self.betas {
            Some(betas) => {
                if self.terminal_rate.is_some() {
                    return Err(Error::invariant(
                        "schedule.terminal_rate",
                        "cannot be combined with explicit betas",
                    ));
                }
                if let Some(steps) = self.steps {
                    if steps != betas.len() {
                        return Err(Error::invariant(
                            "schedule.steps",
                            format!("{steps} steps but {} betas", betas.len()),
                        ));
                    }
                }
                KernelSchedule::new(self.kind, vocab, betas)
            }
            None => KernelSchedule::with_terminal_rate(
                self.kind,
                vocab,
                self.steps.unwrap_or(1),
                self.terminal_rate.unwrap_or(1.0),
            ),
        }
        .map_err(|e| match e {
            e @ Error::Invariant { .. } => e,
            e => Error::invariant("schedule", e.to_string()),
        })
    }
}

/// Starting state at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartState {
    /// Prompt tokens from one law draw, every other position masked.
    #[default]
    Masked,
    /// One forward draw `x_T ~ q(· | x_0)` of the response.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_windows")]
    pub windows: Vec<usize>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 0.9, 1.0]
}

fn default_windows() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            alphas: default_alphas(),
            windows: default_windows(),
        }
    }
}

/// Which predictor pair the `speedup` kind decodes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedupModel {
    /// Exact target and draft of the configured law.
    #[default]
    Oracle,
    /// One random context-free law used as both draft and target.
    Matched,
    /// One random context-free `(π, ρ)` pair repeated at every position.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedupSpec {
    #[serde(default)]
    pub model: SpeedupModel,
    /// Sequence length for the context-free models.
    #[serde(default = "default_speedup_dim")]
    pub dim: usize,
}

fn default_speedup_dim() -> usize {
    64
}

impl Default for SpeedupSpec {
    fn default() -> Self {
        SpeedupSpec {
            model: SpeedupModel::default(),
            dim: default_speedup_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Monte Carlo size: decodes, rounds per grid point, or identity triples.
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub start: StartState,
    pub law: LawSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub speedup: SpeedupSpec,
}

fn default_replications() -> usize {
    1
}

fn default_samples() -> u64 {
    10_000
}

fn default_output() -> PathBuf {
    PathBuf::from("report")
}

/// A validated configuration with its law and schedule built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub law: DataLaw,
    pub sched: KernelSchedule,
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn prepare(&self) -> Result<Prepared> {
        if self.replications == 0 {
            return Err(Error::invariant("replications", "must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::invariant("samples", "must be at least 1"));
        }
        let law = self.law.build().map_err(|e| at("law", e))?;
        let sched = self.schedule.build(law.vocab())?;
        self.decode.validate(law.dim())?;
        self.cost.validate()?;
        if self.start == StartState::Masked && sched.kind() != KernelKind::Absorbing {
            return Err(Error::invariant(
                "start",
                "a masked start needs an absorbing kernel",
            ));
        }
        if let Some(train) = &self.train {
            train.validate()?;
            train.t_sampler.validate(&sched)?;
        }
        for (n, &a) in self.grid.alphas.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invariant(format!("grid.alphas[{n}]"), "must lie in [0, 1]"));
            }
        }
        if let Some(n) = self.grid.windows.iter().position(|&k| k == 0) {
            return Err(Error::invariant(format!("grid.windows[{n}]"), "must be at least 1"));
        }
        if self.speedup.dim == 0 {
            return Err(Error::invariant("speedup.dim", "must be at least 1"));
        }
        match self.kind {
            ExperimentKind::TrainConsistency if self.train.is_none() => {
                return Err(Error::invariant("train", "required for train-consistency"));
            }
            ExperimentKind::FullInference => {
                if self.decode.n_steps < 2 {
                    return Err(Error::invariant("decode.n_steps", "full-inference needs at least 2 passes"));
                }
                if self.decode.remask_budget == 0 {
                    return Err(Error::invariant("decode.remask_budget", "full-inference needs a positive budget"));
                }
            }
            ExperimentKind::CommittedLength
                if self.grid.alphas.is_empty() || self.grid.windows.is_empty() =>
            {
                return Err(Error::invariant("grid", "needs at least one alpha and one window"));
            }
            _ => {}
        }
        Ok(Prepared { law, sched })
    }
}

fn at(path: &str, e: Error) -> Error {
    match e {
        e @ Error::Invariant { .. } => e,
        e => Error::invariant(path, e.to_string()),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    cfg.prepare()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// Passes when `value ≤ tolerance`.
    Le,
    /// Passes when `value ≥ tolerance`.
    Ge,
    /// Reported only.
    Info,
}

impl Comparison {
    fn as_str(&self) -> &'static str {
        match self {
            Comparison::Le => "le",
            Comparison::Ge => "ge",
            Comparison::Info => "info",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub family: String,
    pub name: String,
    pub replication: usize,
    pub value: f64,
    pub tolerance: Option<f64>,
    pub comparison: Comparison,
    pub pass: Option<bool>,
}

impl MetricRow {
    pub fn le(family: &str, name: impl Into<String>, rep: usize, value: f64, tol: f64) -> Self {
        MetricRow {
            family: family.to_string(),
            name: name.into(),
            replication: rep,
            value,
            tolerance: Some(tol),
            comparison: Comparison::Le,
            pass: Some(value <= tol),
        }
    }

    pub fn ge(family: &str, name: impl Into<String>, rep: usize, value: f64, tol: f64) -> Self {
        MetricRow {
            comparison: Comparison::Ge,
            pass: Some(value >= tol),
            ..MetricRow::le(family, name, rep, value, tol)
        }
    }

    pub fn info(family: &str, name: impl Into<String>, rep: usize, value: f64) -> Self {
        MetricRow {
            family: family.to_string(),
            name: name.into(),
            replication: rep,
            value,
            tolerance: None,
            comparison: Comparison::Info,
            pass: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

/// Pass counts accumulated over the decodes of one label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: String,
    pub replication: usize,
    pub decodes: u64,
    pub rounds: u64,
    pub draft_passes: u64,
    pub verify_passes: u64,
    pub proposals: u64,
    pub accepts: u64,
    pub committed: u64,
}

impl TraceSummary {
    fn new(label: &str, replication: usize) -> Self {
        TraceSummary {
            label: label.to_string(),
            replication,
            ..Default::default()
        }
    }

    fn add(&mut self, t: &SpecTrace) {
        self.decodes += 1;
        self.rounds += t.rounds.len() as u64;
        self.draft_passes += t.draft_passes as u64;
        self.verify_passes += t.verify_passes as u64;
        self.proposals += t.proposals_total as u64;
        self.accepts += t.accepts_total as u64;
        self.committed += t.committed_total() as u64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub version: String,
    pub seed: u64,
    pub replications: usize,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub metrics: Vec<MetricRow>,
    pub traces: Vec<TraceSummary>,
    pub runtime: RuntimeInfo,
    pub error: Option<String>,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        ExperimentReport {
            format: REPORT_FORMAT.to_string(),
            kind: config.kind,
            runtime: RuntimeInfo {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: config.seed,
                replications: config.replications,
                samples: config.samples,
            },
            config,
            metrics: Vec::new(),
            traces: Vec::new(),
            error: None,
        }
    }

    /// No error and no failing asserted row.
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.metrics.iter().any(MetricRow::failed)
    }

    pub fn families(&self) -> Vec<&str> {
        let mut f: Vec<&str> = self.metrics.iter().map(|m| m.family.as_str()).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// Comma-separated table of one family.
    pub fn table(&self, family: &str) -> String {
        let mut out = String::from("name,replication,value,tolerance,comparison,pass\n");
        for m in self.metrics.iter().filter(|m| m.family == family) {
            let tol = m.tolerance.map(|t| t.to_string()).unwrap_or_default();
            let pass = m.pass.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.name,
                m.replication,
                m.value,
                tol,
                m.comparison.as_str(),
                pass
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{} {} (seed {})", verdict, self.kind.as_str(), self.runtime.seed);
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error: {e}");
        }
        for m in &self.metrics {
            let mark = match m.pass {
                Some(true) => "ok  ",
                Some(false) => "FAIL",
                None => "    ",
            };
            match m.tolerance {
                Some(t) => {
                    let _ = writeln!(
                        out,
                        "{mark} {}/{} [{}] = {} ({} {})",
                        m.family,
                        m.name,
                        m.replication,
                        m.value,
                        m.comparison.as_str(),
                        t
                    );
                }
                None => {
                    let _ = writeln!(out, "{mark} {}/{} [{}] = {}", m.family, m.name, m.replication, m.value);
                }
            }
        }
        for t in &self.traces {
            let _ = writeln!(
                out,
                "trace {} [{}]: {} decodes, {} rounds, {} draft + {} verify passes, {}/{} accepted",
                t.label, t.replication, t.decodes, t.rounds, t.draft_passes, t.verify_passes, t.accepts, t.proposals
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Writes `contents` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{}: not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Writes `report.json`, `summary.txt` and one `metrics_<family>.csv` per
/// family into `dir`, returning the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, &body)?;
        written.push(p);
        Ok(())
    };
    put("report.json".into(), report.to_json())?;
    for family in report.families() {
        put(format!("metrics_{family}.csv"), report.table(family))?;
    }
    put("summary.txt".into(), report.summary())?;
    Ok(written)
}

#[derive(Debug, Default)]
struct RepOutput {
    metrics: Vec<MetricRow>,
    traces: Vec<TraceSummary>,
}

/// Executes every replication and collects rows in replication order. Module
/// errors end up in [`ExperimentReport::error`].
pub fn run_experiment(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new(cfg.clone());
    let prepared = match cfg.prepare() {
        Ok(p) => p,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(cfg.replications);
    let mut results: Vec<Option<Result<RepOutput>>> = (0..cfg.replications).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in results.chunks_mut(cfg.replications.div_ceil(workers)).enumerate() {
            let base = w * cfg.replications.div_ceil(workers);
            let prepared = &prepared;
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_replication(cfg, prepared, base + j));
                }
            });
        }
    });
    for r in results.into_iter().flatten() {
        match r {
            Ok(out) => {
                report.metrics.extend(out.metrics);
                report.traces.extend(out.traces);
            }
            Err(e) => {
                if report.error.is_none() {
                    report.error = Some(e.to_string());
                }
            }
        }
    }
    report
}

fn run_replication(cfg: &ExperimentConfig, p: &Prepared, rep: usize) -> Result<RepOutput> {
    let mut rng = SeededRng::for_worker(cfg.seed, rep as u64);
    match cfg.kind {
        ExperimentKind::Exactness => run_exactness(cfg, p, rep, &mut rng),
        ExperimentKind::Lemma1 => run_lemma1(cfg, p, rep, &mut rng),
        ExperimentKind::CommittedLength => run_committed_length(cfg, rep, &mut rng),
        ExperimentKind::Speedup => run_speedup(cfg, p, rep, &mut rng),
        ExperimentKind::FactorizationGap => run_factorization(cfg, p, rep, &mut rng),
        ExperimentKind::TrainConsistency => run_train(cfg, p, rep, &mut rng),
        ExperimentKind::FullInference => run_full_inference(cfg, p, rep, &mut rng),
    }
}

/// Starting state at `T` and the positions left to decode.
pub fn start_state(
    law: &DataLaw,
    sched: &KernelSchedule,
    start: StartState,
    prompt_len: usize,
    rng: &mut SeededRng,
) -> Result<(Sequence, Vec<usize>)> {
    let x0 = law.sample(rng);
    let xt = match start {
        StartState::Masked => {
            let mask = law.vocab().mask_id();
            Sequence(
                (0..law.dim())
                    .map(|i| if i < prompt_len { x0[i] } else { mask })
                    .collect(),
            )
        }
        StartState::Sampled => sample_forward_response(&x0, sched.steps(), prompt_len, sched, rng)?,
    };
    let positions = sched.unresolved_positions(&xt, prompt_len);
    Ok((xt, positions))
}

fn run_exactness(cfg: &ExperimentConfig, p: &Prepared, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "joint";
    let t = p.sched.steps();
    let (xt, positions) = start_state(&p.law, &p.sched, cfg.start, cfg.decode.prompt_len, rng)?;
    let truth = clean_posterior_joint(&p.law, &p.sched, &xt, t, &positions)?;
    let oracle = Oracle::new(p.law.clone(), p.sched.clone())?;
    let pair = PredictorPair::new(&oracle, &oracle)?;
    let s = p.law.vocab().size();
    let mut out = RepOutput::default();

    let mut primary = EmpiricalJoint::new(s, &positions)?;
    let mut summary = TraceSummary::new(mode_label(cfg.decode.mode), rep);
    for _ in 0..cfg.samples {
        let x = match cfg.decode.mode {
            DecodeMode::Speculative => {
                let (x, trace) = decode_speculative_at(&xt, &positions, t, &pair, cfg.decode.window, rng)?;
                summary.add(&trace);
                x
            }
            DecodeMode::Sequential => decode_sequential_at(&xt, &positions, t, &oracle, rng)?,
            DecodeMode::Independent => decode_independent_at(&xt, &positions, t, &oracle, rng)?,
        };
        primary.record(&x)?;
    }
    let name = format!("tv_{}", mode_label(cfg.decode.mode));
    out.metrics.push(MetricRow::le(F, name, rep, primary.tv_to(&truth)?, TV_JOINT));

    if cfg.decode.mode == DecodeMode::Speculative {
        let mut seq = EmpiricalJoint::new(s, &positions)?;
        for _ in 0..cfg.samples {
            seq.record(&decode_sequential_at(&xt, &positions, t, &oracle, rng)?)?;
        }
        out.metrics.push(MetricRow::le(F, "tv_sequential", rep, seq.tv_to(&truth)?, TV_JOINT));
        let modes = tv_distance(&primary.frequencies()?, &seq.frequencies()?)?;
        out.metrics.push(MetricRow::le(F, "tv_modes", rep, modes, TV_JOINT));
        if summary.proposals > 0 {
            out.metrics.push(MetricRow::info(
                F,
                "alpha_hat",
                rep,
                summary.accepts as f64 / summary.proposals as f64,
            ));
        }
        out.traces.push(summary);
    }
    Ok(out)
}

fn mode_label(mode: DecodeMode) -> &'static str {
    match mode {
        DecodeMode::Independent => "independent",
        DecodeMode::Sequential => "sequential",
        DecodeMode::Speculative => "speculative",
    }
}

fn run_lemma1(cfg: &ExperimentConfig, p: &Prepared, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "lemma1";
    let steps = p.sched.steps();
    let mut worst: f64 = 0.0;
    for n in 0..cfg.samples {
        let law = match cfg.law {
            LawSpec::Random { .. } => cfg
                .law
                .reseeded(rep as u64 * cfg.samples + n)
                .build()?,
            _ => p.law.clone(),
        };
        let betas: Vec<f64> = (0..steps).map(|_| 0.05 + 0.9 * rng.next_f64()).collect();
        let sched = KernelSchedule::new(p.sched.kind(), law.vocab(), &betas)?;
        let x0 = law.sample(rng);
        let t = 1 + rng.below(steps);
        let xt = crate::forward::sample_forward(&x0, t, &sched, rng)?;
        let i = rng.below(law.dim());
        worst = worst.max(lemma1_identity_gap(&law, &sched, &xt, &x0[..i], i, t)?);
    }
    Ok(RepOutput {
        metrics: vec![
            MetricRow::le(F, "max_gap", rep, worst, EXACT_TOL),
            MetricRow::info(F, "triples", rep, cfg.samples as f64),
        ],
        traces: Vec::new(),
    })
}

fn run_committed_length(cfg: &ExperimentConfig, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "committed_length";
    let mut out = RepOutput::default();
    for &a in &cfg.grid.alphas {
        for &k in &cfg.grid.windows {
            let est = simulate_committed_length(a, k, cfg.samples, rng)?;
            let exact = expected_committed_length(a, k)?;
            let tag = format!("a{a}_k{k}");
            out.metrics.push(MetricRow::info(F, format!("mean_{tag}"), rep, est.mean));
            out.metrics.push(MetricRow::info(F, format!("expected_{tag}"), rep, exact));
            out.metrics.push(MetricRow::le(
                F,
                format!("deviation_{tag}"),
                rep,
                (est.mean - exact).abs(),
                3.0 * est.std_error,
            ));
        }
    }
    Ok(out)
}

fn run_speedup(cfg: &ExperimentConfig, p: &Prepared, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "speedup";
    let k = cfg.decode.window;
    let t = p.sched.steps();
    let s = p.law.vocab().size();
    let mut traces = Vec::with_capacity(cfg.samples as usize);
    let mut baseline = 0;
    let tolerance = match cfg.speedup.model {
        SpeedupModel::Oracle => {
            let oracle = Oracle::new(p.law.clone(), p.sched.clone())?;
            let pair = PredictorPair::new(&oracle, &oracle)?;
            for _ in 0..cfg.samples {
                let (xt, positions) = start_state(&p.law, &p.sched, cfg.start, cfg.decode.prompt_len, rng)?;
                baseline += positions.len();
                traces.push(decode_speculative_at(&xt, &positions, t, &pair, k, rng)?.1);
            }
            None
        }
        SpeedupModel::Matched | SpeedupModel::Random => {
            let vocab = p.law.vocab();
            let d = cfg.speedup.dim;
            let pi = Categorical::dirichlet(s, 1.0, rng)?;
            let rho = match cfg.speedup.model {
                SpeedupModel::Matched => pi.clone(),
                _ => Categorical::dirichlet(s, 1.0, rng)?,
            };
            let target = PositionTable::repeated(vocab, pi, d)?;
            let draft = PositionTable::repeated(vocab, rho, d)?;
            let pair = PredictorPair::new(&target, &draft)?;
            let xt = Sequence::masked(vocab, d);
            let positions: Vec<usize> = (0..d).collect();
            for _ in 0..cfg.samples {
                baseline += d;
                traces.push(decode_speculative_at(&xt, &positions, 1, &pair, k, rng)?.1);
            }
            Some(if cfg.speedup.model == SpeedupModel::Matched {
                SPEEDUP_MATCHED
            } else {
                SPEEDUP_RANDOM
            })
        }
    };
    let acct = cost_accounting(&traces, cfg.cost, baseline)?;
    let ideal = ideal_speedup(expected_committed_length(acct.alpha_hat, k)?, cfg.cost);
    let rel = (acct.measured - ideal).abs() / ideal;
    let mut summary = TraceSummary::new("speculative", rep);
    traces.iter().for_each(|t| summary.add(t));
    let mut metrics = vec![
        MetricRow::info(F, "measured", rep, acct.measured),
        MetricRow::info(F, "ideal_at_alpha_hat", rep, ideal),
        MetricRow::info(F, "ideal_at_measured_length", rep, acct.ideal_at_measured_length),
        MetricRow::info(F, "alpha_hat", rep, acct.alpha_hat),
        MetricRow::info(F, "mean_committed", rep, acct.mean_committed),
    ];
    metrics.push(match tolerance {
        Some(tol) => MetricRow::le(F, "relative_error", rep, rel, tol),
        None => MetricRow::info(F, "relative_error", rep, rel),
    });
    Ok(RepOutput {
        metrics,
        traces: vec![summary],
    })
}

fn run_factorization(cfg: &ExperimentConfig, p: &Prepared, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "factorization";
    let t = p.sched.steps();
    let (xt, positions) = start_state(&p.law, &p.sched, cfg.start, cfg.decode.prompt_len, rng)?;
    let truth = clean_posterior_joint(&p.law, &p.sched, &xt, t, &positions)?;
    let mf = mean_field_joint(&p.law, &p.sched, &xt, t, &positions)?;
    let zero = |law: &[f64]| -> f64 {
        law.iter()
            .zip(&truth.probs)
            .filter(|(_, &q)| q == 0.0)
            .map(|(p, _)| p)
            .sum()
    };
    let oracle = Oracle::new(p.law.clone(), p.sched.clone())?;
    let pair = PredictorPair::new(&oracle, &oracle)?;
    let s = p.law.vocab().size();
    let mut ind = EmpiricalJoint::new(s, &positions)?;
    let mut spec = EmpiricalJoint::new(s, &positions)?;
    let mut summary = TraceSummary::new("speculative", rep);
    for _ in 0..cfg.samples {
        ind.record(&decode_independent_at(&xt, &positions, t, &oracle, rng)?)?;
        let (x, trace) = decode_speculative_at(&xt, &positions, t, &pair, cfg.decode.window, rng)?;
        summary.add(&trace);
        spec.record(&x)?;
    }
    let ind_f = ind.frequencies()?;
    let spec_f = spec.frequencies()?;
    let mf_zero = zero(&mf.probs);
    Ok(RepOutput {
        metrics: vec![
            MetricRow::info(F, "analytic_tv_mean_field", rep, tv_distance(&mf.probs, &truth.probs)?),
            MetricRow::info(F, "analytic_zero_mass_mean_field", rep, mf_zero),
            MetricRow::info(F, "zero_mass_independent", rep, zero(&ind_f)),
            MetricRow::le(F, "zero_mass_independent_error", rep, (zero(&ind_f) - mf_zero).abs(), ZERO_MASS_INDEPENDENT),
            MetricRow::le(F, "tv_independent_to_mean_field", rep, ind.tv_to(&mf)?, TV_JOINT),
            MetricRow::le(F, "zero_mass_speculative", rep, zero(&spec_f), ZERO_MASS_SPECULATIVE),
            MetricRow::le(F, "tv_speculative", rep, spec.tv_to(&truth)?, TV_JOINT),
        ],
        traces: vec![summary],
    })
}

/// Contexts a training draw can populate with positive probability: the
/// pivot is corrupted, so its clean value differs from the observed one.
pub fn trainable_contexts(
    law: &DataLaw,
    sched: &KernelSchedule,
    times: &[usize],
) -> Result<Vec<ContextKey>> {
    let s = law.vocab().size();
    let a = sched.alphabet_size();
    let d = law.dim();
    let mut out = Vec::new();
    for &t in times {
        for pivot in 0..d {
            let n_prefix = s.pow(pivot as u32);
            let n_suffix = a.pow((d - pivot) as u32);
            if n_prefix.saturating_mul(n_suffix) > 1 << 20 {
                return Err(Error::TooLarge(format!("{n_prefix}×{n_suffix} contexts")));
            }
            for pc in 0..n_prefix {
                for sc in 0..n_suffix {
                    let mut tokens = digits(pc, s, pivot);
                    tokens.extend(digits(sc, a, d - pivot));
                    let observed_pivot = tokens[pivot];
                    let mut ev: Vec<Evidence> = (0..d)
                        .map(|j| {
                            if j < pivot {
                                Evidence::Clean(tokens[j])
                            } else {
                                Evidence::Observed(tokens[j])
                            }
                        })
                        .collect();
                    let mut mass = 0.0;
                    for v in (0..s).filter(|&v| v != observed_pivot) {
                        ev[pivot] = Evidence::CleanObserved(v, observed_pivot);
                        mass += law.evidence_weights(sched, t, &ev)?.iter().sum::<f64>();
                    }
                    if mass > 0.0 {
                        out.push(ContextKey { t, pivot, tokens });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn digits(mut code: usize, base: usize, len: usize) -> Vec<Token> {
    let mut v = vec![0; len];
    for slot in v.iter_mut().rev() {
        *slot = code % base;
        code /= base;
    }
    v
}

fn run_train(cfg: &ExperimentConfig, p: &Prepared, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "train";
    let mut tcfg = cfg.train.clone().expect("validated");
    tcfg.seed = tcfg.seed.wrapping_add(rep as u64);
    let smoothing = tcfg.smoothing;
    let model = train_position_conditioned(&p.law, &p.sched, &tcfg)?;
    let raw = model.clone().with_smoothing(0.0);
    let mut metrics = Vec::new();

    let mut worst: f64 = 0.0;
    for (key, _) in raw.contexts() {
        let ctx = key.context();
        let truth = prefix_posterior(&p.law, &p.sched, &ctx)?;
        worst = worst.max(tv_distance(raw.predict(&ctx)?.probs(), truth.probs())?);
    }
    metrics.push(MetricRow::le(F, "max_context_tv", rep, worst, TRAIN_TV));
    metrics.push(MetricRow::info(F, "seen_contexts", rep, raw.len() as f64));
    let times: Vec<usize> = tcfg.t_sampler.support(p.sched.steps()).into_iter().map(|(t, _)| t).collect();
    if let Ok(all) = trainable_contexts(&p.law, &p.sched, &times) {
        let unseen = all.iter().filter(|k| raw.counts(k).is_none()).count();
        metrics.push(MetricRow::le(F, "unseen_contexts", rep, unseen as f64, 0.0));
    }

    let oracle = Oracle::new(p.law.clone(), p.sched.clone())?;
    let eval_seed = rng.next_u64();
    let oracle_loss = loss_eval(&oracle, &p.law, &p.sched, tcfg.t_sampler, cfg.samples as usize, &mut SeededRng::new(eval_seed))?;
    let model_loss = loss_eval(&model, &p.law, &p.sched, tcfg.t_sampler, cfg.samples as usize, &mut SeededRng::new(eval_seed))?;
    metrics.push(MetricRow::info(F, "loss_oracle", rep, oracle_loss.per_token));
    metrics.push(MetricRow::info(F, "loss_trained", rep, model_loss.per_token));
    metrics.push(MetricRow::le(
        F,
        "loss_excess_oracle",
        rep,
        oracle_loss.per_token - model_loss.per_token,
        LOSS_SLACK,
    ));

    let t = p.sched.steps();
    let (xt, positions) = start_state(&p.law, &p.sched, cfg.start, cfg.decode.prompt_len, rng)?;
    let truth = clean_posterior_joint(&p.law, &p.sched, &xt, t, &positions)?;
    let pair = PredictorPair::new(&model as &dyn TargetModel, &oracle)?;
    let mut joint = EmpiricalJoint::new(p.law.vocab().size(), &positions)?;
    let mut summary = TraceSummary::new("trained_target", rep);
    for _ in 0..cfg.samples {
        let (x, trace) = decode_speculative_at(&xt, &positions, t, &pair, cfg.decode.window, rng)?;
        summary.add(&trace);
        joint.record(&x)?;
    }
    metrics.push(MetricRow::le(F, "tv_plug_in", rep, joint.tv_to(&truth)?, TV_PLUG_IN));
    metrics.push(MetricRow::info(F, "smoothing", rep, smoothing));
    Ok(RepOutput {
        metrics,
        traces: vec![summary],
    })
}

fn run_full_inference(cfg: &ExperimentConfig, p: &Prepared, rep: usize, rng: &mut SeededRng) -> Result<RepOutput> {
    const F: &str = "remask";
    let t = p.sched.steps();
    let later_t = cfg.decode.recorrupt_t.unwrap_or(t);
    let (xt, positions) = start_state(&p.law, &p.sched, cfg.start, cfg.decode.prompt_len, rng)?;
    let truth = clean_posterior_joint(&p.law, &p.sched, &xt, t, &positions)?;
    let oracle = Oracle::new(p.law.clone(), p.sched.clone())?;
    let pair = PredictorPair::new(&oracle, &oracle)?;
    let s = p.law.vocab().size();
    let mut cells: BTreeMap<(Sequence, Vec<usize>), EmpiricalJoint> = BTreeMap::new();
    let mut finals = EmpiricalJoint::new(s, &positions)?;
    let mut summary = TraceSummary::new("all_passes", rep);
    for _ in 0..cfg.samples {
        let run = full_inference(&xt, t, &pair, &cfg.decode, &p.sched, rng)?;
        run.passes.iter().for_each(|pass| summary.add(&pass.trace));
        finals.record(&run.output)?;
        let (first, second) = (&run.passes[0], &run.passes[1]);
        let key = (first.output.clone(), second.decoded.clone());
        if !cells.contains_key(&key) {
            cells.insert(key.clone(), EmpiricalJoint::new(s, &second.decoded)?);
        }
        cells.get_mut(&key).expect("inserted").record(&second.output)?;
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for ((committed, region), joint) in &cells {
        if joint.total < MIN_CELL_VISITS {
            continue;
        }
        let law: JointLaw = regeneration_law(&p.law, &p.sched, committed, region, later_t)?;
        worst = worst.max(joint.tv_to(&law)?);
        checked += 1;
    }
    Ok(RepOutput {
        metrics: vec![
            MetricRow::le(F, "max_cell_tv", rep, worst, TV_CELL),
            MetricRow::ge(F, "cells_checked", rep, checked as f64, 1.0),
            MetricRow::info(F, "cells_total", rep, cells.len() as f64),
            MetricRow::info(F, "tv_final_output", rep, finals.tv_to(&truth)?),
        ],
        traces: vec![summary],
    })
}

/// Names accepted by [`builtin_suite`].
pub const SUITES: [&str; 9] = [
    "smoke",
    "exactness",
    "factorization",
    "lemma1",
    "committed-length",
    "speedup",
    "training",
    "remasking",
    "all",
];

fn table_law(entries: &[(&[Token], f64)], vocab_size: usize) -> LawSpec {
    LawSpec::Table {
        vocab_size,
        dim: entries[0].0.len(),
        entries: entries
            .iter()
            .map(|(s, p)| TableEntry { seq: s.to_vec(), p: *p })
            .collect(),
    }
}

fn base(kind: ExperimentKind, law: LawSpec, samples: u64) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        seed: 20_240_601,
        replications: 1,
        samples,
        output: default_output(),
        start: StartState::Masked,
        law,
        schedule: ScheduleSpec {
            kind: KernelKind::Absorbing,
            steps: Some(1),
            betas: None,
            terminal_rate: Some(1.0),
        },
        decode: DecodeConfig::default(),
        train: None,
        cost: CostModel::default(),
        grid: GridSpec::default(),
        speedup: SpeedupSpec::default(),
    }
}

fn exactness_laws() -> Vec<(&'static str, LawSpec)> {
    vec![
        ("anti", table_law(&[(&[0, 1], 0.5), (&[1, 0], 0.5)], 2)),
        ("copy", table_law(&[(&[0, 0], 0.6), (&[1, 1], 0.4)], 2)),
        (
            "random",
            LawSpec::Random {
                vocab_size: 3,
                dim: 3,
                concentration: 1.0,
                seed: 7,
            },
        ),
        (
            "markov",
            LawSpec::Markov {
                vocab_size: 2,
                dim: 4,
                initial: vec![0.7, 0.3],
                transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            },
        ),
    ]
}

/// Built-in experiment suites; `scale` multiplies Monte Carlo sizes.
fn suite_configs(name: &str, scale: f64) -> Option<Vec<(String, ExperimentConfig)>> {
    let n = |x: f64| ((x * scale).round() as u64).max(1);
    let mut out = Vec::new();
    let mut add = |label: String, cfg: ExperimentConfig| out.push((label, cfg));
    let anti = table_law(&[(&[0, 1], 0.5), (&[1, 0], 0.5)], 2);
    match name {
        "exactness" => {
            for (label, law) in exactness_laws() {
                add(format!("exactness-{label}"), base(ExperimentKind::Exactness, law, n(1e5)));
            }
        }
        "factorization" => {
            add("factorization-anti".into(), base(ExperimentKind::FactorizationGap, anti, n(1e5)));
        }
        "lemma1" => {
            for (s, d, kind) in [(2, 2, KernelKind::Absorbing), (3, 3, KernelKind::Absorbing), (3, 3, KernelKind::Uniform)] {
                let mut c = base(
                    ExperimentKind::Lemma1,
                    LawSpec::Random {
                        vocab_size: s,
                        dim: d,
                        concentration: 0.5,
                        seed: 11,
                    },
                    n(100.0).max(1),
                );
                c.schedule = ScheduleSpec {
                    kind,
                    steps: Some(3),
                    betas: None,
                    terminal_rate: Some(0.9),
                };
                c.start = StartState::Sampled;
                let tag = if kind == KernelKind::Absorbing { "absorbing" } else { "uniform" };
                add(format!("lemma1-s{s}-d{d}-{tag}"), c);
            }
        }
        "committed-length" => {
            add("committed-length-grid".into(), base(ExperimentKind::CommittedLength, anti, n(1e6)));
        }
        "speedup" => {
            let mut matched = base(ExperimentKind::Speedup, anti.clone(), n(1e3));
            matched.decode.window = 16;
            matched.speedup = SpeedupSpec {
                model: SpeedupModel::Matched,
                dim: 32,
            };
            add("speedup-matched".into(), matched);
            let mut random = base(ExperimentKind::Speedup, LawSpec::Uniform { vocab_size: 4, dim: 2 }, n(1e4));
            random.speedup = SpeedupSpec {
                model: SpeedupModel::Random,
                dim: 64,
            };
            add("speedup-random".into(), random);
        }
        "training" => {
            let mut c = base(ExperimentKind::TrainConsistency, table_law(&[(&[0, 0], 0.4), (&[0, 1], 0.1), (&[1, 0], 0.2), (&[1, 1], 0.3)], 2), n(1e5));
            c.schedule.terminal_rate = Some(0.8);
            c.train = Some(TrainConfig {
                n_samples: n(1e6) as usize,
                t_sampler: TimeSampler::Uniform,
                smoothing: 0.5,
                seed: 5,
            });
            add("training-d2".into(), c);
        }
        "remasking" => {
            let mut c = base(ExperimentKind::FullInference, table_law(&[(&[0, 0], 0.3), (&[0, 1], 0.2), (&[1, 0], 0.1), (&[1, 1], 0.4)], 2), n(1e5));
            c.schedule.terminal_rate = Some(0.9);
            c.decode.n_steps = 2;
            c.decode.remask_budget = 1;
            add("remasking-d2".into(), c);
        }
        "smoke" => {
            for s in SUITES.iter().filter(|s| !matches!(**s, "smoke" | "all")) {
                for (label, mut c) in suite_configs(s, 0.25)? {
                    c.samples = c.samples.max(1000);
                    add(label, c);
                }
            }
        }
        "all" => {
            for s in SUITES.iter().filter(|s| !matches!(**s, "smoke" | "all")) {
                for (label, c) in suite_configs(s, scale)? {
                    add(label, c);
                }
            }
        }
        _ => return None,
    }
    Some(out)
}

/// Labeled configurations of a named suite, or `None` for an unknown name.
pub fn builtin_suite(name: &str) -> Option<Vec<(String, ExperimentConfig)>> {
    suite_configs(name, 1.0)
}
