//! Config-driven experiment runner behind the `cppo` binary.
//!
//! One TOML file describes the suite, the pipeline, evaluation budgets, the
//! variants and seeds. Each command writes into its own subdirectory of
//! `output_dir` and refuses to touch an existing one unless asked to
//! overwrite. Every file written is a deterministic function of the config.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, DeconConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, RunRow};
use crate::pipeline::{self, PipelineConfig, StageName, Variant};
use crate::policy::{PlanMode, PolicyParams};
use crate::reward::GateModel;
use crate::stats::{self, MethodResults};
use crate::synthenv::{self, EnvConfig, ProblemSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "CPPO_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::AuditFailed(_) => EXIT_AUDIT,
        Error::GateRejected(_) => EXIT_ACCEPTANCE,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Eval,
    Ablate,
    Sweep,
    Bootstrap,
    Decon,
    Report,
}

impl Command {
    pub fn dir_name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
            Command::Bootstrap => "bootstrap",
            Command::Decon => "decon",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k_list: Vec<usize>,
    pub modes: Vec<PlanMode>,
    pub samples_per_problem: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { k_list: vec![1, 2, 4, 8, 16], modes: vec![PlanMode::Joint, PlanMode::Iid], samples_per_problem: 2, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self { resamples: stats::DEFAULT_RESAMPLES, alpha: stats::DEFAULT_ALPHA, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeconSection {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub ngram: usize,
    pub threshold: f64,
}

impl Default for DeconSection {
    fn default() -> Self {
        Self { train: None, eval: None, ngram: corpus::DEFAULT_NGRAM, threshold: corpus::DEFAULT_FUZZY_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub suite_name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
    pub ablation_variants: Vec<String>,
    /// Method tested for significance against the best other method.
    pub candidate: String,
    pub write_stage_checkpoints: bool,
    pub suite: EnvConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalSection,
    pub bootstrap: BootstrapSection,
    pub decon: DeconSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: "desk".into(),
            suite_name: "synthetic".into(),
            output_dir: PathBuf::from("runs/desk"),
            seeds: vec![1, 2, 3],
            variants: vec!["direct-iid".into(), "full-cppo".into()],
            ablation_variants: ["full-cppo", "no-gate", "gate-only", "m1", "m2", "m4"]
                .map(String::from)
                .to_vec(),
            candidate: "full-cppo".into(),
            write_stage_checkpoints: false,
            suite: EnvConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalSection::default(),
            bootstrap: BootstrapSection::default(),
            decon: DeconSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.decon.train.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.decon.eval.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {CONFIG_SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        for (field, list) in [("variants", &self.variants), ("ablation_variants", &self.ablation_variants)] {
            for v in list.iter() {
                if Variant::parse(v).is_none() {
                    return Err(Error::Config(format!("{field}: unknown variant {v:?}")));
                }
            }
        }
        self.suite.validate().map_err(|e| Error::Config(format!("suite: {e}")))?;
        self.pipeline.validate().map_err(|e| Error::Config(format!("pipeline: {e}")))?;
        if self.eval.modes.is_empty() {
            return Err(Error::Config("eval.modes: at least one mode is required".into()));
        }
        self.eval_config(PlanMode::Joint)
            .validate()
            .map_err(|e| Error::Config(format!("eval: {e}")))?;
        if self.bootstrap.resamples == 0 || !(0.0..1.0).contains(&self.bootstrap.alpha) {
            return Err(Error::Config("bootstrap: resamples >= 1 and alpha in [0, 1) required".into()));
        }
        if self.decon.ngram == 0 || !(0.0..=1.0).contains(&self.decon.threshold) {
            return Err(Error::Config("decon: ngram >= 1 and threshold in [0, 1] required".into()));
        }
        Ok(())
    }

    fn eval_config(&self, mode: PlanMode) -> EvalConfig {
        EvalConfig {
            k_list: self.eval.k_list.clone(),
            mode,
            samples_per_problem: self.eval.samples_per_problem,
            seed: self.eval.seed,
        }
    }

    fn parsed_variants(list: &[String]) -> Vec<Variant> {
        list.iter().filter_map(|v| Variant::parse(v)).collect()
    }
}

/// What a command wrote and whether it hit an audit failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub command: Command,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub audit_failures: Vec<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.audit_failures.is_empty() { EXIT_OK } else { EXIT_AUDIT }
    }
}

/// Runs one command on a pool sized by `CPPO_WORKERS` (all cores when unset).
pub fn run(cmd: Command, config_path: &Path, overwrite: bool) -> Result<RunSummary> {
    let cfg = ExperimentConfig::load(config_path)?;
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_with(cmd, &cfg, overwrite))
}

pub fn run_with(cmd: Command, cfg: &ExperimentConfig, overwrite: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.join(cmd.dir_name());
    prepare_dir(&dir, overwrite)?;
    let mut out = Output { dir: dir.clone(), files: Vec::new() };
    out.json("config.json", cfg)?;
    let mut audit_failures = Vec::new();
    match cmd {
        Command::Train => {
            let variants = ExperimentConfig::parsed_variants(&cfg.variants);
            audit_failures = train_cells(cfg, &variants, &mut out)?;
        }
        Command::Eval => {
            let train_dir = cfg.output_dir.join(Command::Train.dir_name());
            let variants = ExperimentConfig::parsed_variants(&cfg.variants);
            eval_cells(cfg, &variants, &train_dir, &mut out)?;
        }
        Command::Ablate => {
            let variants = ExperimentConfig::parsed_variants(&cfg.ablation_variants);
            audit_failures = train_cells(cfg, &variants, &mut out)?;
            let mut rows = Vec::new();
            for &v in &variants {
                for &seed in &cfg.seeds {
                    let (params, _) = load_cell(&out.dir, v, seed)?;
                    let suite = load_suite(&out.dir)?;
                    let k = cfg.pipeline.k;
                    let ecfg = EvalConfig { k_list: vec![k], ..cfg.eval_config(v.native_mode()) };
                    let r = eval::evaluate(v.name(), &params, &suite, &ecfg, seed)?;
                    let s = eval::summarize(&r, k).expect("rows for k");
                    rows.push((v, seed, s.pass, s.duplicate_rate));
                }
            }
            write_ablation(&mut out, &variants, &rows, cfg.pipeline.k)?;
        }
        Command::Sweep => {
            let train_dir = cfg.output_dir.join(Command::Train.dir_name());
            let variants = ExperimentConfig::parsed_variants(&cfg.variants);
            sweep_cells(cfg, &variants, &train_dir, &mut out)?;
        }
        Command::Bootstrap => bootstrap_cells(cfg, &mut out)?,
        Command::Decon => decon(cfg, &mut out)?,
        Command::Report => report(cfg, &mut out)?,
    }
    Ok(RunSummary { command: cmd, dir, files: out.files, audit_failures })
}

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        if !overwrite {
            return Err(Error::Config(format!(
                "{} already exists; choose a new output_dir or pass --overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(p.clone());
        Ok(p)
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel)?;
        let mut w = BufWriter::new(fs::File::create(p)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let p = self.path(rel)?;
        let mut w = BufWriter::new(fs::File::create(p)?);
        for r in rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let p = self.path(rel)?;
        let mut w = csv::Writer::from_path(p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell_dir(v: Variant, seed: u64) -> String {
    format!("{}/seed-{seed}", v.name())
}

fn load_suite(dir: &Path) -> Result<Vec<ProblemSpec>> {
    let f = fs::File::open(dir.join("suite.jsonl"))
        .map_err(|e| Error::Input(format!("{}: {e}; run `train` first", dir.join("suite.jsonl").display())))?;
    synthenv::read_suite(BufReader::new(f))
}

fn load_cell(dir: &Path, v: Variant, seed: u64) -> Result<(PolicyParams, Option<GateModel>)> {
    let base = dir.join(cell_dir(v, seed));
    let f = fs::File::open(base.join("checkpoint.json"))
        .map_err(|e| Error::Input(format!("{}: {e}", base.join("checkpoint.json").display())))?;
    let params = PolicyParams::read_checkpoint(BufReader::new(f))?;
    let gate_path = base.join("gate.json");
    let gate = if gate_path.exists() {
        Some(serde_json::from_reader(BufReader::new(fs::File::open(gate_path)?))?)
    } else {
        None
    };
    Ok((params, gate))
}

/// Trains every variant and seed as an independent job.
fn train_cells(cfg: &ExperimentConfig, variants: &[Variant], out: &mut Output) -> Result<Vec<String>> {
    let suite = synthenv::generate_suite(&cfg.suite)?;
    {
        let p = out.path("suite.jsonl")?;
        synthenv::write_suite(BufWriter::new(fs::File::create(p)?), &suite)?;
    }
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let pcfg = v.configure(&cfg.pipeline);
            let mut boundaries: Vec<(StageName, usize, PolicyParams)> = Vec::new();
            let mut observe = |stage: StageName, attempt: usize, p: &PolicyParams| {
                if cfg.write_stage_checkpoints {
                    boundaries.push((stage, attempt, p.clone()));
                }
            };
            let outcome = pipeline::run_pipeline(&suite, &pcfg, seed, Some(&mut observe))?;
            Ok((v, seed, outcome, boundaries))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut failures = Vec::new();
    for (v, seed, outcome, boundaries) in results {
        let dir = cell_dir(v, seed);
        {
            let p = out.path(&format!("{dir}/checkpoint.json"))?;
            outcome.params.write_checkpoint(BufWriter::new(fs::File::create(p)?))?;
        }
        for (stage, attempt, params) in boundaries {
            let name = serde_json::to_value(stage)?.as_str().unwrap_or("stage").to_string();
            let p = out.path(&format!("{dir}/checkpoints/{name}-{attempt}.json"))?;
            params.write_checkpoint(BufWriter::new(fs::File::create(p)?))?;
        }
        if let Some(g) = &outcome.gate {
            out.json(&format!("{dir}/gate.json"), g)?;
        }
        out.json(&format!("{dir}/stages.json"), &outcome.reports)?;
        out.jsonl(&format!("{dir}/gold.jsonl"), &outcome.gold)?;
        out.csv(&format!("{dir}/steps.csv"), &outcome.step_metrics())?;
        if !outcome.audit_passed {
            failures.push(format!("{} seed {seed}", v.name()));
        }
    }
    Ok(failures)
}

/// Method label of a variant evaluated in `mode`.
pub fn method_label(v: Variant, mode: PlanMode) -> String {
    if mode == v.native_mode() {
        v.name().to_string()
    } else {
        format!("{}@{mode}", v.name())
    }
}

/// One long-format aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub base_config: String,
    pub suite: String,
    pub mode: PlanMode,
    pub k: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

fn metric_values(rows: &[RunRow], k: usize) -> Result<Vec<(&'static str, f64)>> {
    let s = eval::summarize(rows, k).ok_or_else(|| Error::Data(format!("no rows for K={k}")))?;
    let sel: Vec<RunRow> = rows.iter().filter(|r| r.k_solve == k).cloned().collect();
    let mut v = vec![
        ("pass", s.pass),
        ("duplicate_rate", s.duplicate_rate),
        ("decoded_tokens", s.mean_decoded_tokens),
        ("pass_per_10k_tokens", eval::token_normalized_pass_rows(&sel)?),
        ("d_surf", s.d_surf),
        ("d_sem", s.d_sem),
        ("d_alg", s.d_alg),
    ];
    if let Some(m) = s.maj {
        v.push(("maj", m));
    }
    Ok(v)
}

fn aggregate(
    cfg: &ExperimentConfig,
    per_seed: &BTreeMap<(String, PlanMode), Vec<Vec<RunRow>>>,
    k_list: &[usize],
) -> Result<Vec<AggregateRow>> {
    let mut out = Vec::new();
    for ((method, mode), seeds) in per_seed {
        for &k in k_list {
            let mut by_metric: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
            for rows in seeds {
                for (name, value) in metric_values(rows, k)? {
                    by_metric.entry(name).or_default().push(value);
                }
            }
            for (metric, values) in by_metric {
                out.push(AggregateRow {
                    method: method.clone(),
                    base_config: cfg.name.clone(),
                    suite: cfg.suite_name.clone(),
                    mode: *mode,
                    k,
                    metric: metric.to_string(),
                    mean: values.iter().sum::<f64>() / values.len() as f64,
                    std: stats::sample_std(&values),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct BitRow<'a> {
    method: &'a str,
    seed: u64,
    problem: u64,
    bit: f64,
}

fn eval_cells(cfg: &ExperimentConfig, variants: &[Variant], train_dir: &Path, out: &mut Output) -> Result<()> {
    let suite = load_suite(train_dir)?;
    let mut per_seed: BTreeMap<(String, PlanMode), Vec<Vec<RunRow>>> = BTreeMap::new();
    for &v in variants {
        for &seed in &cfg.seeds {
            let (params, _) = load_cell(train_dir, v, seed)?;
            for &mode in &cfg.eval.modes {
                let label = method_label(v, mode);
                let rows = eval::evaluate(&label, &params, &suite, &cfg.eval_config(mode), seed)?;
                out.jsonl(&format!("{}/{mode}.jsonl", cell_dir(v, seed)), &rows)?;
                per_seed.entry((label, mode)).or_default().push(rows);
            }
        }
    }
    out.csv("summary.csv", &aggregate(cfg, &per_seed, &cfg.eval.k_list)?)?;
    for &k in &cfg.eval.k_list {
        let mut bits = Vec::new();
        for ((method, _), seeds) in &per_seed {
            for (rows, &seed) in seeds.iter().zip(&cfg.seeds) {
                for (problem, rate) in eval::per_problem_pass(rows, k) {
                    bits.push(BitRow { method, seed, problem, bit: rate });
                }
            }
        }
        out.csv(&format!("bits_k{k}.csv"), &bits)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub k_solve: usize,
    pub k_tuple: usize,
    pub tuples_pooled: usize,
    pub seed: u64,
    pub pass: f64,
    pub decoded_tokens: f64,
}

fn sweep_cells(cfg: &ExperimentConfig, variants: &[Variant], train_dir: &Path, out: &mut Output) -> Result<()> {
    let suite = load_suite(train_dir)?;
    let mut rows = Vec::new();
    for &v in variants {
        for &seed in &cfg.seeds {
            let (params, _) = load_cell(train_dir, v, seed)?;
            let mode = v.native_mode();
            let evald = eval::evaluate(v.name(), &params, &suite, &cfg.eval_config(mode), seed)?;
            for &k in &cfg.eval.k_list {
                let s = eval::summarize(&evald, k).expect("rows for k");
                rows.push(SweepRow {
                    method: method_label(v, mode),
                    k_solve: k,
                    k_tuple: params.k(),
                    tuples_pooled: eval::tuples_needed(k, params.k()),
                    seed,
                    pass: s.pass,
                    decoded_tokens: s.mean_decoded_tokens,
                });
            }
        }
    }
    out.csv("sweep.csv", &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub pass_at_k: f64,
    pub pass_std: f64,
    pub duplicate_rate: f64,
    pub duplicate_std: f64,
    pub k: usize,
    pub seeds: usize,
}

fn write_ablation(out: &mut Output, variants: &[Variant], rows: &[(Variant, u64, f64, f64)], k: usize) -> Result<()> {
    let table: Vec<AblationRow> = variants
        .iter()
        .map(|&v| {
            let pass: Vec<f64> = rows.iter().filter(|r| r.0 == v).map(|r| r.2).collect();
            let dup: Vec<f64> = rows.iter().filter(|r| r.0 == v).map(|r| r.3).collect();
            AblationRow {
                method: v.name().to_string(),
                pass_at_k: pass.iter().sum::<f64>() / pass.len() as f64,
                pass_std: stats::sample_std(&pass),
                duplicate_rate: dup.iter().sum::<f64>() / dup.len() as f64,
                duplicate_std: stats::sample_std(&dup),
                k,
                seeds: pass.len(),
            }
        })
        .collect();
    out.csv("ablation.csv", &table)
}

fn bootstrap_cells(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let eval_dir = cfg.output_dir.join(Command::Eval.dir_name());
    for &k in &cfg.eval.k_list {
        let results = stats::read_results_csv(&eval_dir.join(format!("bits_k{k}.csv")))?;
        let mut suites: BTreeMap<String, Vec<MethodResults>> = BTreeMap::new();
        suites.insert(cfg.suite_name.clone(), results);
        let table = stats::significance_table(
            &suites,
            &cfg.candidate,
            cfg.bootstrap.resamples,
            cfg.bootstrap.alpha,
            cfg.bootstrap.seed,
        )?;
        out.json(&format!("significance_k{k}.json"), &table)?;
    }
    Ok(())
}

fn decon(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let (train_path, eval_path) = match (&cfg.decon.train, &cfg.decon.eval) {
        (Some(t), Some(e)) => (t, e),
        _ => return Err(Error::Config("decon: both `train` and `eval` corpus paths are required".into())),
    };
    let train = corpus::read_corpus(train_path)?;
    let evalc = corpus::read_corpus(eval_path)?;
    let dcfg = DeconConfig { ngram: cfg.decon.ngram, threshold: cfg.decon.threshold };
    let (kept, report) = corpus::decontaminate(&train, &evalc, &dcfg)?;
    let p = out.path("train_clean.jsonl")?;
    corpus::write_corpus(&p, &kept)?;
    out.json("overlap.json", &report)
}

/// One cell of the report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub suite: String,
    pub k: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// `mean±std`, with a dagger when the bootstrap marked the cell.
    pub cell: String,
    pub significance: String,
}

fn report(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let eval_dir = cfg.output_dir.join(Command::Eval.dir_name());
    let boot_dir = cfg.output_dir.join(Command::Bootstrap.dir_name());
    let mut reader = csv::Reader::from_path(eval_dir.join("summary.csv"))?;
    let rows: Vec<AggregateRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut table = Vec::new();
    for k in &cfg.eval.k_list {
        let sig_path = boot_dir.join(format!("significance_k{k}.json"));
        let sig: Option<stats::SignificanceTable> = if sig_path.exists() {
            Some(serde_json::from_reader(BufReader::new(fs::File::open(&sig_path)?))?)
        } else {
            None
        };
        for r in rows.iter().filter(|r| r.k == *k) {
            let (marked, significance) = match &sig {
                None => (false, "n/a".to_string()),
                Some(t) => match t.cells.iter().find(|c| c.method == r.method && c.suite == r.suite) {
                    Some(c) if r.metric == "pass" => match c.p_value {
                        Some(p) => (c.marked, format!("p={p:.3} vs {}", c.baseline.as_deref().unwrap_or("-"))),
                        None => (false, "baseline".into()),
                    },
                    _ => (false, "n/a".into()),
                },
            };
            table.push(ReportRow {
                method: r.method.clone(),
                suite: r.suite.clone(),
                k: r.k,
                metric: r.metric.clone(),
                mean: r.mean,
                std: r.std,
                cell: format!("{:.3}±{:.3}{}", r.mean, r.std, if marked { "†" } else { "" }),
                significance,
            });
        }
    }
    out.csv("table.csv", &table)
}

/// SHA-256 over every file a command wrote, in write order, keyed by path
/// relative to the command directory.
pub fn artifact_digest(summary: &RunSummary) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for f in &summary.files {
        let rel = f.strip_prefix(&summary.dir).unwrap_or(f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update(fs::read(f)?);
    }
    Ok(hex::encode(h.finalize()))
}
