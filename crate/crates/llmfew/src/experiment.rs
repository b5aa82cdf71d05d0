//! Config-driven experiment runner: K-shot sweeps, multi-seed aggregation
//! and persisted result tables.
//!
//! One experiment is a JSON config. Each `(dataset, seed)` pair samples a
//! fresh episode (recorded in every result row), builds the requested
//! variant, trains on the configured schedule and evaluates on the full test
//! split. Results are written as line-delimited JSON under
//! `output_dir/<config-hash>/` together with the resolved config, so
//! re-running an identical config overwrites deterministically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneSpec;
use crate::checkpoint;
use crate::data::{
    load_dataset_dir, synthetic_sinusoid, DatasetPair, SyntheticSpec, SYNTHETIC_DATASET_NAME,
};
use crate::error::{Error, Result};
use crate::head::LnPosition;
use crate::lora::LoraSettings;
use crate::model::{build, DatasetShape, EncoderSettings, Model, VariantKind, VariantSpec};
use crate::nn::init::fnv1a;
use crate::nn::param::VisitParams;
use crate::nn::Scalar;
use crate::patching::PatchConfig;
use crate::sampler::{sample_episode, Episode};
use crate::trainer::{evaluate, train, Precision, TrainSchedule};

pub const DATA_ROOT_ENV: &str = "LLMFEW_DATA_ROOT";
pub const DEFAULT_DATA_ROOT: &str = "./data";
/// Episodes are resampled per seed rather than shared across the 5 runs;
/// every result row records this for auditability.
pub const EPISODE_POLICY: &str = "resample-per-seed";

/// Shots per class, or the whole train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KShot {
    Shots(usize),
    Full,
}

impl KShot {
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(KShot::Full);
        }
        s.parse::<usize>()
            .ok()
            .filter(|&k| k > 0)
            .map(KShot::Shots)
            .ok_or_else(|| Error::Argument(format!("k must be a positive integer or 'full', got {s:?}")))
    }
}

impl std::fmt::Display for KShot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KShot::Shots(k) => write!(f, "{k}"),
            KShot::Full => write!(f, "full"),
        }
    }
}

impl Serialize for KShot {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KShot::Shots(k) => ser.serialize_u64(*k as u64),
            KShot::Full => ser.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for KShot {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(de)?;
        match &value {
            serde_json::Value::Number(n) if n.as_u64().is_some_and(|k| k > 0) => {
                Ok(KShot::Shots(n.as_u64().unwrap() as usize))
            }
            serde_json::Value::String(s) => {
                KShot::parse(s).map_err(|e| serde::de::Error::custom(e.to_string()))
            }
            other => Err(serde::de::Error::custom(format!(
                "k must be a positive integer or \"full\", got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<String>,
    pub k: KShot,
    pub variant: VariantKind,
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub lora: Option<LoraSettings>,
    #[serde(default = "default_patch")]
    pub patch: PatchConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Per-instance per-channel z-normalization before patching.
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_true")]
    pub no_llm_relu: bool,
    #[serde(default = "default_ln_position")]
    pub ln_position: LnPosition,
}

fn default_patch() -> PatchConfig {
    PatchConfig::new(16)
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("./runs")
}

fn default_true() -> bool {
    true
}

fn default_ln_position() -> LnPosition {
    LnPosition::Paper
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Setup("no datasets configured".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Setup("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Setup("seeds must be distinct".into()));
        }
        self.schedule.validate()?;
        self.backbone.validate()?;
        Ok(())
    }

    pub fn variant_spec(&self) -> VariantSpec {
        VariantSpec {
            variant: self.variant,
            backbone: self.backbone.clone(),
            lora: self.lora,
            encoder: self.encoder,
            patch: self.patch,
            ln_position: self.ln_position,
            no_llm_relu: self.no_llm_relu,
        }
    }
}

/// Hash of the semantically meaningful config fields (paths excluded),
/// stable under field reordering in the source file.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut canonical = cfg.clone();
    canonical.data_root = None;
    canonical.output_dir = PathBuf::new();
    // serde_json maps are sorted by key, so this serialization is canonical
    let json = serde_json::to_string(&serde_json::to_value(&canonical).expect("serializable"))
        .expect("serializable");
    format!("{:016x}", fnv1a(json.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One experiment outcome, persisted as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub k: KShot,
    pub variant: VariantKind,
    pub seed: u64,
    /// Test accuracy in [0, 1]; absent for failed runs.
    pub accuracy: Option<f64>,
    pub epochs_run: usize,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub episode_policy: String,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunResult {
    fn validate(&self) -> Result<()> {
        if let Some(acc) = self.accuracy {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Setup(format!(
                    "result for {} seed {} has accuracy {acc} outside [0, 1]",
                    self.dataset, self.seed
                )));
            }
        }
        Ok(())
    }
}

/// Resolve the dataset root: config, then `LLMFEW_DATA_ROOT`, then
/// `./data`.
pub fn resolve_data_root(cfg: &ExperimentConfig) -> PathBuf {
    if let Some(root) = &cfg.data_root {
        return root.clone();
    }
    if let Ok(env) = std::env::var(DATA_ROOT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(DEFAULT_DATA_ROOT)
}

/// Load one dataset by name: the built-in synthetic generator or a UEA
/// directory under the data root.
pub fn load_pair(data_root: &Path, name: &str) -> Result<DatasetPair> {
    let mut pair = if name == SYNTHETIC_DATASET_NAME {
        synthetic_sinusoid(&SyntheticSpec::default())
    } else {
        load_dataset_dir(data_root, name)?
    };
    if pair.train.class_names != pair.test.class_names {
        return Err(Error::Setup(format!(
            "dataset {name}: train and test declare different class sets"
        )));
    }
    pair.align_lengths();
    Ok(pair)
}

/// Run every `(dataset, seed)` combination of a config. Setup problems
/// (missing datasets, bad config) fail before any training; a failing run
/// is recorded and the remaining runs continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let data_root = resolve_data_root(cfg);

    // resolve every dataset before training anything
    let mut pairs: Vec<(String, DatasetPair)> = Vec::new();
    for name in &cfg.datasets {
        let pair = load_pair(&data_root, name)?;
        let pair = if cfg.normalize { pair.znormalized() } else { pair };
        pairs.push((name.clone(), pair));
    }

    let hash = config_hash(cfg);
    let exp_dir = cfg.output_dir.join(&hash);
    fs::create_dir_all(&exp_dir).map_err(|e| Error::io(&exp_dir, e))?;
    let config_path = exp_dir.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(cfg)?)
        .map_err(|e| Error::io(&config_path, e))?;

    let results_path = exp_dir.join("results.jsonl");
    let mut results_file =
        fs::File::create(&results_path).map_err(|e| Error::io(&results_path, e))?;

    let mut results = Vec::new();
    for (name, pair) in &pairs {
        for &seed in &cfg.seeds {
            let started = Instant::now();
            let outcome = run_single(cfg, pair, seed, &exp_dir, name);
            let wall_seconds = started.elapsed().as_secs_f64();
            let result = match outcome {
                Ok(accuracy) => RunResult {
                    dataset: name.clone(),
                    k: cfg.k,
                    variant: cfg.variant,
                    seed,
                    accuracy: Some(accuracy),
                    epochs_run: cfg.schedule.epochs,
                    wall_seconds,
                    config_hash: hash.clone(),
                    episode_policy: EPISODE_POLICY.to_string(),
                    status: RunStatus::Ok,
                    error: None,
                },
                Err(err) => RunResult {
                    dataset: name.clone(),
                    k: cfg.k,
                    variant: cfg.variant,
                    seed,
                    accuracy: None,
                    epochs_run: 0,
                    wall_seconds,
                    config_hash: hash.clone(),
                    episode_policy: EPISODE_POLICY.to_string(),
                    status: RunStatus::Failed,
                    error: Some(err.to_string()),
                },
            };
            let line = serde_json::to_string(&result)?;
            writeln!(results_file, "{line}").map_err(|e| Error::io(&results_path, e))?;
            results.push(result);
        }
    }
    Ok(results)
}

fn run_single(
    cfg: &ExperimentConfig,
    pair: &DatasetPair,
    seed: u64,
    exp_dir: &Path,
    dataset: &str,
) -> Result<f64> {
    let episode = match cfg.k {
        KShot::Shots(k) => sample_episode(&pair.train, k, seed)?,
        KShot::Full => Episode::full(&pair.train, seed),
    };
    // full-train mode defaults to mini-batches of 16
    let mut schedule = cfg.schedule;
    schedule.seed = seed;
    if cfg.k == KShot::Full && schedule.batch_size.is_none() {
        schedule.batch_size = Some(16);
    }
    let spec = cfg.variant_spec();
    let run_dir = exp_dir.join(format!("{dataset}_k{}_{}_seed{seed}", cfg.k, cfg.variant));
    match schedule.precision {
        Precision::F64 => run_typed::<f64>(&spec, pair, &episode, &schedule, seed, &run_dir),
        Precision::F32 | Precision::Bf16 => {
            run_typed::<f32>(&spec, pair, &episode, &schedule, seed, &run_dir)
        }
    }
}

fn run_typed<T: Scalar>(
    spec: &VariantSpec,
    pair: &DatasetPair,
    episode: &Episode,
    schedule: &TrainSchedule,
    seed: u64,
    run_dir: &Path,
) -> Result<f64> {
    let mut model = build::<T>(spec, DatasetShape::of(&pair.train), seed)?;
    let history = train(&mut model, &pair.train, episode, schedule)?;
    let accuracy = evaluate(&model, &pair.test)?;
    save_run_checkpoint(&mut model, spec, &run_dir.join("checkpoint"))?;
    let history_path = run_dir.join("history.json");
    fs::write(&history_path, serde_json::to_string(&history)?)
        .map_err(|e| Error::io(&history_path, e))?;
    Ok(accuracy)
}

/// Persist the trainable parameters (encoder, head, adapters) in the
/// array-file convention.
pub fn save_run_checkpoint<T: Scalar>(
    model: &mut Model<T>,
    spec: &VariantSpec,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = vec![("variant", spec.variant.to_string())];
    if let Some(lora) = &spec.lora {
        meta.push(("lora_rank", lora.rank.to_string()));
        meta.push(("lora_alpha", lora.alpha.to_string()));
    }
    checkpoint::write_meta(&dir.join("meta"), &meta)?;
    let mut result = Ok(());
    model.visit_params("", &mut |name, p| {
        if result.is_err() || !*p.trainable {
            return;
        }
        let data: Vec<f32> = p.value.iter().map(|v| v.as_f64() as f32).collect();
        result = checkpoint::write_array(&dir.join(&name), &p.shape, &data);
    });
    result
}

/// Restore trainable parameters written by [`save_run_checkpoint`].
pub fn load_run_checkpoint<T: Scalar>(model: &mut Model<T>, dir: &Path) -> Result<()> {
    let mut offending = Vec::new();
    model.visit_params("", &mut |name, p| {
        if !*p.trainable {
            return;
        }
        match checkpoint::read_array(&dir.join(&name)) {
            Ok((shape, data)) if shape == p.shape => {
                for (dst, src) in p.value.iter_mut().zip(data.iter()) {
                    *dst = T::from_f64(f64::from(*src));
                }
            }
            Ok((shape, _)) => {
                offending.push(format!("{name}: shape {shape:?}, expected {:?}", p.shape))
            }
            Err(_) => offending.push(format!("{name}: missing or unreadable")),
        }
    });
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            offending,
        })
    }
}

/// Read a results file back into validated [`RunResult`]s.
pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut results = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let result: RunResult = serde_json::from_str(line)?;
        result.validate()?;
        results.push(result);
    }
    Ok(results)
}

/// Mean and sample standard deviation per `(dataset, k, variant)` group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub k: KShot,
    pub variant: VariantKind,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: usize,
}

impl AggregateRow {
    /// `"50.0 ± 10.0"` style percent formatting with one decimal.
    pub fn format_percent(&self) -> String {
        format!(
            "{:.1} ± {:.1}",
            self.mean_accuracy * 100.0,
            self.std_accuracy * 100.0
        )
    }
}

/// Aggregate successful runs; groups with no successful run are dropped and
/// reported in the returned warnings.
pub fn aggregate(results: &[RunResult]) -> (Vec<AggregateRow>, Vec<String>) {
    let mut groups: BTreeMap<(String, KShot, VariantKind), Vec<f64>> = BTreeMap::new();
    let mut failed: BTreeMap<(String, KShot, VariantKind), usize> = BTreeMap::new();
    for r in results {
        let key = (r.dataset.clone(), r.k, r.variant);
        match r.accuracy {
            Some(acc) => groups.entry(key).or_default().push(acc),
            None => *failed.entry(key).or_default() += 1,
        }
    }
    let mut warnings = Vec::new();
    for (key, count) in &failed {
        if !groups.contains_key(key) {
            warnings.push(format!(
                "group {}/k={}/{} omitted: all {count} runs failed",
                key.0, key.1, key.2
            ));
        }
    }
    let rows = groups
        .into_iter()
        .map(|((dataset, k, variant), accs)| {
            let n = accs.len();
            let mean = accs.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                let var =
                    accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                var.sqrt()
            } else {
                0.0
            };
            AggregateRow {
                dataset,
                k,
                variant,
                mean_accuracy: mean,
                std_accuracy: std,
                runs: n,
            }
        })
        .collect();
    (rows, warnings)
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut out = String::from("dataset,k,variant,mean_accuracy_pct,std_accuracy_pct,runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.1},{:.1},{}\n",
            r.dataset,
            r.k,
            r.variant,
            r.mean_accuracy * 100.0,
            r.std_accuracy * 100.0,
            r.runs
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn format_aggregate_markdown(rows: &[AggregateRow]) -> String {
    let mut out = String::from("| dataset | k | variant | accuracy (%) | runs |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.dataset,
            r.k,
            r.variant,
            r.format_percent(),
            r.runs
        ));
    }
    out
}

/// Hyperparameter grid: config field name to candidate values.
pub type Grid = BTreeMap<String, Vec<serde_json::Value>>;

const GRID_KEYS: &[&str] = &[
    "hidden_channels",
    "depth",
    "kernel_size",
    "patch",
    "lora_rank",
    "lora_alpha",
    "base_lr",
    "k",
];

fn apply_override(cfg: &mut ExperimentConfig, key: &str, value: &serde_json::Value) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("grid key {key}: expected {what}, got {value}"));
    let as_usize = |v: &serde_json::Value, what: &str| {
        v.as_u64().map(|x| x as usize).ok_or_else(|| bad(what))
    };
    match key {
        "hidden_channels" => cfg.encoder.hidden_channels = as_usize(value, "a positive integer")?,
        "depth" => cfg.encoder.depth = as_usize(value, "a positive integer")?,
        "kernel_size" => cfg.encoder.kernel_size = as_usize(value, "a positive integer")?,
        "patch" => {
            let pair = value
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| bad("a [patch_len, stride] pair"))?;
            cfg.patch = PatchConfig::with_stride(
                as_usize(&pair[0], "a positive integer")?,
                as_usize(&pair[1], "a positive integer")?,
            );
        }
        "lora_rank" => {
            let mut lora = cfg.lora.unwrap_or_default();
            lora.rank = as_usize(value, "a positive integer")?;
            cfg.lora = Some(lora);
        }
        "lora_alpha" => {
            let mut lora = cfg.lora.unwrap_or_default();
            lora.alpha = value.as_f64().ok_or_else(|| bad("a number"))?;
            cfg.lora = Some(lora);
        }
        "base_lr" => cfg.schedule.base_lr = value.as_f64().ok_or_else(|| bad("a number"))?,
        "k" => {
            cfg.k = match value {
                serde_json::Value::String(s) => KShot::parse(s)?,
                v => KShot::Shots(as_usize(v, "a positive integer or \"full\"")?),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown grid key {other:?}; known keys: {GRID_KEYS:?}"
            )))
        }
    }
    Ok(())
}

/// Expand the Cartesian product of a grid over a base config, in sorted
/// key order. Unknown keys fail before any config is produced.
pub fn expand_grid(grid: &Grid, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    for key in grid.keys() {
        if !GRID_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "unknown grid key {key:?}; known keys: {GRID_KEYS:?}"
            )));
        }
        if grid[key].is_empty() {
            return Err(Error::Config(format!("grid key {key:?} has no values")));
        }
    }

    let keys: Vec<&String> = grid.keys().collect();
    let mut combos: Vec<Vec<(&str, &serde_json::Value)>> = vec![Vec::new()];
    for key in &keys {
        let mut next = Vec::new();
        for combo in &combos {
            for value in &grid[*key] {
                let mut c = combo.clone();
                c.push((key.as_str(), value));
                next.push(c);
            }
        }
        combos = next;
    }

    let mut configs = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut cfg = base.clone();
        for (key, value) in combo {
            apply_override(&mut cfg, key, value)?;
        }
        configs.push(cfg);
    }
    Ok(configs)
}

/// Run every grid point through [`run_experiment`].
pub fn sweep(grid: &Grid, base: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let mut all = Vec::new();
    for cfg in expand_grid(grid, base)? {
        all.extend(run_experiment(&cfg)?);
    }
    Ok(all)
}
