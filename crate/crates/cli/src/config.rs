//! Run configuration: a TOML file with `[data]`, `[split]`, `[train]`,
//! `[eval]`, `[nominate]` and `[output]` sections, overridable per key through
//! `MICON_<SECTION>_<KEY>` environment variables.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use micon_core::dataset::{self, Dataset, SplitSpec, SynthConfig};
use micon_core::eval::{Constraint, EvalConfig};
use micon_core::model::{HyperParams, Method};

use crate::error::{CliError, CliResult};

/// The shipped configuration: the default synthetic benchmark.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

pub const ENV_PREFIX: &str = "MICON_";

const SECTIONS: [&str; 6] = ["data", "split", "train", "eval", "nominate", "output"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(SynthConfig),
    Tables(TablesConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesConfig {
    pub wells_table: PathBuf,
    pub compounds_table: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    IdByBatch,
    OodSource,
    OodCompound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub protocol: Protocol,
    /// Share of each source's batches used as queries (`id_by_batch`).
    pub query_frac: f64,
    pub val_batches_per_source: usize,
    /// Held-out source (`ood_source`).
    pub unseen_source: Option<String>,
    /// Compounds kept out of training (`ood_compound`).
    pub unseen_compounds: Vec<String>,
    pub unseen_wells_retrieval: usize,
    pub unseen_wells_query: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::IdByBatch,
            query_frac: 0.34,
            val_batches_per_source: 1,
            unseen_source: None,
            unseen_compounds: Vec::new(),
            unseen_wells_retrieval: 2,
            unseen_wells_query: 2,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn build(&self, ds: &Dataset) -> micon_core::Result<SplitSpec> {
        match self.protocol {
            Protocol::IdByBatch => {
                dataset::split_id_by_batch(ds, self.query_frac, self.val_batches_per_source, self.seed)
            }
            Protocol::OodSource => {
                let source = self.unseen_source.as_deref().ok_or_else(|| {
                    micon_core::Error::Invalid("split.unseen_source is required for ood_source".into())
                })?;
                dataset::split_ood_source(ds, source, self.seed)
            }
            Protocol::OodCompound => {
                let unseen: BTreeSet<&String> = self.unseen_compounds.iter().collect();
                let seen = ds.compounds.keys().filter(|c| !unseen.contains(c)).cloned().collect();
                dataset::split_ood_compound(
                    ds,
                    &seen,
                    self.unseen_wells_retrieval,
                    self.unseen_wells_query,
                    self.seed,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Synthetic,
    Published,
}

impl Preset {
    pub fn hyper_params(self) -> HyperParams {
        match self {
            Preset::Synthetic => HyperParams::synthetic(),
            Preset::Published => HyperParams::published(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Method),
    Many(Vec<Method>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    #[serde(default = "default_method")]
    method: OneOrMany,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_preset")]
    preset: Preset,
    #[serde(default)]
    hyper: toml::Table,
}

fn default_method() -> OneOrMany {
    OneOrMany::One(Method::Micon)
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_preset() -> Preset {
    Preset::Synthetic
}

/// Training section after resolving the preset and its overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub preset: Preset,
    /// `seed` is replaced by each entry of `seeds`.
    pub hp: HyperParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Micon],
            seeds: default_seeds(),
            preset: Preset::Synthetic,
            hp: HyperParams::synthetic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostProcess {
    On,
    Off,
    Both,
}

impl PostProcess {
    /// Post-processing switches to evaluate, `true` meaning MAD, then
    /// spherizing when `eval.spherize` is set.
    pub fn variants(self) -> Vec<bool> {
        match self {
            PostProcess::On => vec![true],
            PostProcess::Off => vec![false],
            PostProcess::Both => vec![false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Defaults to the trained methods.
    pub methods: Option<Vec<Method>>,
    /// Defaults to the training seeds.
    pub seeds: Option<Vec<u64>>,
    pub constraints: Vec<Constraint>,
    pub postprocess: PostProcess,
    /// Spherize after MAD when post-processing.
    pub spherize: bool,
    pub shrink: f64,
    pub n_permutations: usize,
    /// Also score MICON with counterfactual query embeddings.
    pub counterfactual: bool,
    /// Also score the ingested features directly, without a model.
    pub features_baseline: bool,
    pub permutation_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            methods: None,
            seeds: None,
            constraints: Constraint::ALL.to_vec(),
            postprocess: PostProcess::On,
            spherize: true,
            shrink: 0.1,
            n_permutations: 1000,
            counterfactual: false,
            features_baseline: false,
            permutation_seed: 0,
        }
    }
}

impl EvalSection {
    pub fn core_config(&self, postprocess: bool) -> EvalConfig {
        EvalConfig {
            mad: postprocess,
            shrink: (postprocess && self.spherize).then_some(self.shrink),
            constraints: self.constraints.clone(),
            n_permutations: self.n_permutations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NominateConfig {
    pub top_frac: f64,
    pub min_sources: usize,
}

impl Default for NominateConfig {
    fn default() -> Self {
        Self {
            top_frac: 0.1,
            min_sources: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub nominate: NominateConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Read `path` (or the shipped default) and apply overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?,
            None => DEFAULT_CONFIG.to_string(),
        };
        Self::parse(&text, env)
    }

    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(format!("config syntax: {e}")))?;
        if let Some(bad) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::config(format!("{bad}: unknown section")));
        }
        for (k, v) in env {
            apply_override(&mut root, &k, &v)?;
        }
        let mut take = |name: &str| root.remove(name);

        let data = parse_data(take("data").ok_or_else(|| CliError::config("data: section is required"))?)?;
        let split: SplitConfig = opt_section(take("split"), "split")?;
        let train = match take("train") {
            Some(v) => parse_train(v)?,
            None => TrainConfig::default(),
        };
        let eval: EvalSection = opt_section(take("eval"), "eval")?;
        let nominate: NominateConfig = opt_section(take("nominate"), "nominate")?;
        let output: OutputConfig = opt_section(take("output"), "output")?;
        let cfg = Self {
            data,
            split,
            train,
            eval,
            nominate,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        match &self.data {
            DataConfig::Synthetic(s) => s.validate().map_err(|e| CliError::config(format!("data: {e}")))?,
            DataConfig::Tables(t) => {
                for (name, p) in [("data.wells_table", &t.wells_table), ("data.compounds_table", &t.compounds_table)] {
                    if !p.exists() {
                        return Err(CliError::config(format!("{name}: {} does not exist", p.display())));
                    }
                }
            }
        }
        if self.train.seeds.is_empty() {
            return Err(CliError::config("train.seeds: must not be empty"));
        }
        if self.train.methods.is_empty() {
            return Err(CliError::config("train.method: must name at least one method"));
        }
        if self.eval.methods.as_ref().is_some_and(|m| m.is_empty()) && !self.eval.features_baseline {
            return Err(CliError::config("eval.methods: empty without features_baseline leaves nothing to evaluate"));
        }
        if let Some(s) = &self.eval.seeds {
            if s.is_empty() {
                return Err(CliError::config("eval.seeds: must not be empty"));
            }
        }
        if self.eval.constraints.is_empty() {
            return Err(CliError::config("eval.constraints: must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.eval.shrink) {
            return Err(CliError::config("eval.shrink: must lie in [0, 1]"));
        }
        if !(self.nominate.top_frac > 0.0 && self.nominate.top_frac <= 1.0) {
            return Err(CliError::config("nominate.top_frac: must lie in (0, 1]"));
        }
        if self.split.protocol == Protocol::OodSource && self.split.unseen_source.is_none() {
            return Err(CliError::config("split.unseen_source: required for protocol ood_source"));
        }
        let mut hp = self.train.hp.clone();
        hp.seed = 0;
        hp.validate().map_err(|e| CliError::config(format!("train.hyper: {e}")))
    }

    pub fn eval_methods(&self) -> Vec<Method> {
        self.eval.methods.clone().unwrap_or_else(|| self.train.methods.clone())
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        self.eval.seeds.clone().unwrap_or_else(|| self.train.seeds.clone())
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn path_error<E: std::fmt::Display>(prefix: &str, e: serde_path_to_error::Error<E>) -> CliError {
    let inner = e.inner().to_string();
    let mut path = prefix.to_string();
    let located = e.path().to_string();
    if located != "." {
        path = format!("{path}.{located}");
    }
    if let Some(field) = inner
        .strip_prefix("missing field `")
        .and_then(|r| r.split('`').next())
    {
        return CliError::config(format!("{path}.{field}: missing field"));
    }
    CliError::config(format!("{path}: {inner}"))
}

fn section<T: DeserializeOwned>(value: toml::Value, prefix: &str) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| path_error(prefix, e))
}

fn opt_section<T: DeserializeOwned + Default>(value: Option<toml::Value>, prefix: &str) -> CliResult<T> {
    match value {
        Some(v) => section(v, prefix),
        None => Ok(T::default()),
    }
}

fn as_table(v: toml::Value, path: &str) -> CliResult<toml::Table> {
    match v {
        toml::Value::Table(t) => Ok(t),
        other => Err(CliError::config(format!("{path}: expected a table, got {}", other.type_str()))),
    }
}

/// Reject keys of `given` that `reference` does not have, recursing into
/// tables.
fn check_keys(given: &toml::Table, reference: &toml::Table, path: &str) -> CliResult<()> {
    for (k, v) in given {
        match reference.get(k) {
            None => return Err(CliError::config(format!("{path}.{k}: unknown field"))),
            Some(toml::Value::Table(r)) => {
                if let toml::Value::Table(g) = v {
                    check_keys(g, r, &format!("{path}.{k}"))?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn parse_data(v: toml::Value) -> CliResult<DataConfig> {
    let mut t = as_table(v, "data")?;
    let kind = match t.remove("kind") {
        None => "synthetic".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(CliError::config(format!("data.kind: expected a string, got {}", other.type_str()))),
    };
    match kind.as_str() {
        "synthetic" => {
            let reference = toml::Table::try_from(SynthConfig::default()).expect("serializable");
            check_keys(&t, &reference, "data")?;
            Ok(DataConfig::Synthetic(section(toml::Value::Table(t), "data")?))
        }
        "tables" => Ok(DataConfig::Tables(section(toml::Value::Table(t), "data")?)),
        other => Err(CliError::config(format!(
            "data.kind: unknown kind `{other}` (expected synthetic or tables)"
        ))),
    }
}

fn parse_train(v: toml::Value) -> CliResult<TrainConfig> {
    let raw: RawTrain = section(v, "train")?;
    let base = raw.preset.hyper_params();
    let mut table = toml::Table::try_from(&base).expect("serializable");
    check_keys(&raw.hyper, &table, "train.hyper")?;
    for (k, v) in raw.hyper {
        table.insert(k, v);
    }
    let hp: HyperParams = section(toml::Value::Table(table), "train.hyper")?;
    let methods = match raw.method {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(ms) => ms,
    };
    Ok(TrainConfig {
        methods,
        seeds: raw.seeds,
        preset: raw.preset,
        hp,
    })
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Insert `value` under `key`, descending into an existing subtable when
/// `key` starts with its name followed by `_`.
fn insert_path(table: &mut toml::Table, key: &str, value: toml::Value) {
    if table.contains_key(key) {
        table.insert(key.to_string(), value);
        return;
    }
    let sub = table
        .iter()
        .filter(|(k, v)| v.is_table() && key.starts_with(&format!("{k}_")))
        .map(|(k, _)| k.clone())
        .max_by_key(|k| k.len());
    match sub {
        Some(k) => {
            let rest = key[k.len() + 1..].to_string();
            if let Some(toml::Value::Table(t)) = table.get_mut(&k) {
                insert_path(t, &rest, value);
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
}

fn apply_override(root: &mut toml::Table, var: &str, raw: &str) -> CliResult<()> {
    let Some(rest) = var.strip_prefix(ENV_PREFIX) else {
        return Ok(());
    };
    let rest = rest.to_ascii_lowercase();
    let Some((section_name, key)) = rest.split_once('_') else {
        return Err(CliError::config(format!("{var}: expected {ENV_PREFIX}<SECTION>_<KEY>")));
    };
    if !SECTIONS.contains(&section_name) {
        return Err(CliError::config(format!("{var}: unknown section `{section_name}`")));
    }
    let entry = root
        .entry(section_name.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(t) = entry else {
        return Err(CliError::config(format!("{section_name}: expected a table")));
    };
    insert_path(t, key, parse_value(raw));
    Ok(())
}
