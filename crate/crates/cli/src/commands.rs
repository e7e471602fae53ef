//! The five pipeline commands over a run directory:
//!
//! ```text
//! <out>/manifest.json
//! <out>/data/{wells.csv, compounds.csv, ground_truth.json}
//! <out>/split.tsv
//! <out>/checkpoints/<method>-seed<k>.ckpt
//! <out>/logs/<method>-seed<k>.tsv
//! <out>/reports/<label>-seed<k>-<raw|post>-<constraint>.json
//! <out>/comparison.{json,txt}
//! <out>/nominated.tsv
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use micon_core::dataset::{self, export_dataset, ingest_features, Dataset, SplitSpec};
use micon_core::eval::{evaluate_retrieval, permutation_test, Embedder, PermutationTest, RetrievalReport};
use micon_core::model::{load_checkpoint, save_checkpoint, train as train_model, write_log, Checkpoint, Method};
use micon_core::Error as CoreError;

use crate::compare::{ComparisonReport, SeedAccuracies};
use crate::config::{DataConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

/// Invocation-wide switches.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub out: PathBuf,
    /// Run seeds one after another instead of in parallel threads.
    pub deterministic: bool,
}

impl Context {
    pub fn new(cfg: &RunConfig, out: Option<PathBuf>, deterministic: bool) -> Self {
        Self {
            out: out.unwrap_or_else(|| cfg.output.dir.clone()),
            deterministic,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn split_path(&self) -> PathBuf {
        self.out.join("split.tsv")
    }

    pub fn checkpoint_path(&self, method: Method, seed: u64) -> PathBuf {
        self.out.join("checkpoints").join(format!("{method}-seed{seed}.ckpt"))
    }

    pub fn log_path(&self, method: Method, seed: u64) -> PathBuf {
        self.out.join("logs").join(format!("{method}-seed{seed}.tsv"))
    }

    pub fn report_path(&self, label: &str, seed: u64, post: bool, constraint: &str) -> PathBuf {
        let mode = if post { "post" } else { "raw" };
        self.out
            .join("reports")
            .join(format!("{label}-seed{seed}-{mode}-{constraint}.json"))
    }

    pub fn comparison_path(&self) -> PathBuf {
        self.out.join("comparison.json")
    }
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MISSING
        } else {
            CliError::CONFIG
        },
        msg: format!("{what} {}: {e}", path.display()),
    }
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| io_err("cannot create", p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err("cannot write", path, e))
}

/// Dataset named by the config: ingested tables, or the synthetic tables
/// that `gen-data` wrote into the run directory.
pub fn load_dataset(cfg: &RunConfig, ctx: &Context) -> CliResult<Dataset> {
    let (wells, compounds) = match &cfg.data {
        DataConfig::Tables(t) => (t.wells_table.clone(), t.compounds_table.clone()),
        DataConfig::Synthetic(_) => (ctx.data_dir().join("wells.csv"), ctx.data_dir().join("compounds.csv")),
    };
    for p in [&wells, &compounds] {
        if !p.exists() {
            return Err(CliError::missing(format!(
                "dataset table {} not found (run `micon gen-data` first)",
                p.display()
            )));
        }
    }
    ingest_features(&wells, &compounds).map_err(|e| CliError::core("loading dataset", e, CliError::CONFIG))
}

/// Split from `split.tsv` when present, otherwise built from the config.
pub fn load_split(cfg: &RunConfig, ctx: &Context, ds: &Dataset) -> CliResult<SplitSpec> {
    let p = ctx.split_path();
    if p.exists() {
        SplitSpec::read(ds, &p).map_err(|e| CliError::core("reading split", e, CliError::CONFIG))
    } else {
        cfg.split
            .build(ds)
            .map_err(|e| CliError::core("building split", e, CliError::CONFIG))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub wells: usize,
    pub control_wells: usize,
    pub fovs: usize,
    pub compounds: usize,
    pub sources: usize,
    pub batches: usize,
    pub plates: usize,
    pub feature_dim: usize,
}

pub fn summarize(ds: &Dataset) -> DataSummary {
    let sources = ds.sources();
    let mut plates = std::collections::BTreeSet::new();
    for w in &ds.wells {
        plates.insert(w.key.plate_key());
    }
    DataSummary {
        wells: ds.wells.len(),
        control_wells: ds.wells.iter().filter(|w| w.is_control()).count(),
        fovs: ds.n_fovs(),
        compounds: ds.compounds.len(),
        batches: sources.iter().map(|s| ds.batches_of(s).len()).sum(),
        sources: sources.len(),
        plates: plates.len(),
        feature_dim: ds.feature_dim,
    }
}

pub fn gen_data(cfg: &RunConfig, ctx: &Context) -> CliResult<DataSummary> {
    let DataConfig::Synthetic(synth) = &cfg.data else {
        return Err(CliError::config("data.kind: gen-data needs kind = \"synthetic\""));
    };
    let ds = dataset::gen_synthetic(synth).map_err(|e| CliError::core("generating data", e, CliError::CONFIG))?;
    let dir = ctx.data_dir();
    create_dir(&dir)?;
    export_dataset(&ds, &dir).map_err(|e| CliError::core("writing dataset", e, CliError::CONFIG))?;
    write_json(&dir.join("ground_truth.json"), &ds.ground_truth)?;
    let summary = summarize(&ds);
    Manifest::record(&ctx.out, "gen-data", cfg, ctx, vec![synth.seed])?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub seed: u64,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
}

pub fn train(cfg: &RunConfig, ctx: &Context) -> CliResult<Vec<TrainSummary>> {
    let ds = load_dataset(cfg, ctx)?;
    let split = cfg
        .split
        .build(&ds)
        .map_err(|e| CliError::core("building split", e, CliError::CONFIG))?;
    create_dir(&ctx.out)?;
    split
        .write(&ds, &ctx.split_path())
        .map_err(|e| CliError::core("writing split", e, CliError::CONFIG))?;

    let jobs: Vec<(Method, u64)> = cfg
        .train
        .methods
        .iter()
        .flat_map(|&m| cfg.train.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let run = |&(method, seed): &(Method, u64)| {
        info!("training {method} seed {seed}");
        let hp = micon_core::model::HyperParams {
            seed,
            ..cfg.train.hp.clone()
        };
        train_model(&ds, &split, &hp, method)
    };
    let results: Vec<micon_core::Result<_>> = if ctx.deterministic || jobs.len() == 1 {
        jobs.iter().map(run).collect()
    } else {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
        let mut slots: Vec<Option<micon_core::Result<_>>> = (0..jobs.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let chunks: Vec<_> = slots.chunks_mut(jobs.len().div_ceil(workers)).collect();
            let mut start = 0;
            for chunk in chunks {
                let my_jobs = &jobs[start..start + chunk.len()];
                start += chunk.len();
                let run = &run;
                s.spawn(move || {
                    for (slot, job) in chunk.iter_mut().zip(my_jobs) {
                        *slot = Some(run(job));
                    }
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every job ran")).collect()
    };

    if let Some((i, e)) = results.iter().enumerate().find_map(|(i, r)| r.as_ref().err().map(|e| (i, e))) {
        // leave no stale artifacts behind for any run of this invocation
        for &(m, s) in &jobs {
            let _ = fs::remove_file(ctx.checkpoint_path(m, s));
            let _ = fs::remove_file(ctx.log_path(m, s));
        }
        let (m, s) = jobs[i];
        return Err(CliError::training(format!("training {m} seed {s}: {e}")));
    }
    create_dir(&ctx.out.join("checkpoints"))?;
    create_dir(&ctx.out.join("logs"))?;
    let mut summaries = Vec::new();
    for (&(method, seed), r) in jobs.iter().zip(results) {
        let out = r.expect("errors handled above");
        write_log(&ctx.log_path(method, seed), &out.log).map_err(|e| CliError::core("writing log", e, CliError::TRAINING))?;
        let ckpt = Checkpoint {
            method: out.method,
            hp: out.hp.clone(),
            step: out.best_step,
            params: out.params,
        };
        save_checkpoint(&ctx.checkpoint_path(method, seed), &ckpt)
            .map_err(|e| CliError::core("writing checkpoint", e, CliError::TRAINING))?;
        summaries.push(TrainSummary {
            method,
            seed,
            best_step: out.best_step,
            best_val_loss: out.best_val_loss,
            initial_val_loss: out.initial_val_loss,
        });
    }
    Manifest::record(&ctx.out, "train", cfg, ctx, cfg.train.seeds.clone())?;
    Ok(summaries)
}

/// One retrieval report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    /// Method name, `micon_counterfactual`, or `features`.
    pub label: String,
    pub seed: u64,
    pub postprocess: bool,
    pub report: RetrievalReport,
    pub permutation: PermutationTest,
}

pub fn setting_name(post: bool, constraint: &str) -> String {
    format!("{}/{constraint}", if post { "post" } else { "raw" })
}

pub const FEATURES_LABEL: &str = "features";
pub const COUNTERFACTUAL_LABEL: &str = "micon_counterfactual";

pub fn evaluate(cfg: &RunConfig, ctx: &Context) -> CliResult<ComparisonReport> {
    let ds = load_dataset(cfg, ctx)?;
    let split = load_split(cfg, ctx, &ds)?;
    let seeds = cfg.eval_seeds();
    let methods = cfg.eval_methods();

    // checkpoints are checked up front so a missing one fails before any work
    let mut checkpoints = Vec::new();
    for &m in &methods {
        for &s in &seeds {
            let p = ctx.checkpoint_path(m, s);
            if !p.exists() {
                return Err(CliError::missing(format!("checkpoint {} not found", p.display())));
            }
            checkpoints.push((m, s, p));
        }
    }

    create_dir(&ctx.out.join("reports"))?;
    let mut runs: Vec<SeedAccuracies> = Vec::new();
    let mut record = |label: &str, seed: u64, post: bool, reports: Vec<RetrievalReport>| -> CliResult<()> {
        for report in reports {
            let c = report.constraint.name().to_string();
            let permutation = permutation_test(
                std::slice::from_ref(&report),
                cfg.eval.n_permutations,
                cfg.eval.permutation_seed,
            )
            .map_err(|e| CliError::core("permutation test", e, CliError::CONFIG))?;
            let setting = setting_name(post, &c);
            match runs.iter_mut().find(|r| r.method == label && r.setting == setting) {
                Some(r) => {
                    r.seeds.push(seed);
                    r.accuracies.push(report.accuracy);
                }
                None => runs.push(SeedAccuracies {
                    method: label.to_string(),
                    setting,
                    seeds: vec![seed],
                    accuracies: vec![report.accuracy],
                }),
            }
            let doc = SeedReport {
                label: label.to_string(),
                seed,
                postprocess: post,
                report,
                permutation,
            };
            write_json(&ctx.report_path(label, seed, post, &c), &doc)?;
        }
        Ok(())
    };
    let score = |embedder: Embedder<'_>, post: bool, counterfactual: bool| {
        evaluate_retrieval(embedder, &ds, &split, &cfg.eval.core_config(post), counterfactual)
            .map_err(|e| CliError::core("evaluating", e, CliError::UNSATISFIABLE))
    };

    for (method, seed, path) in &checkpoints {
        let ckpt = load_checkpoint(path).map_err(|e| CliError::core("reading checkpoint", e, CliError::MISSING))?;
        info!("evaluating {method} seed {seed}");
        for post in cfg.eval.postprocess.variants() {
            record(method.name(), *seed, post, score(Embedder::Model(&ckpt.params), post, false)?)?;
            if *method == Method::Micon && cfg.eval.counterfactual {
                record(COUNTERFACTUAL_LABEL, *seed, post, score(Embedder::Model(&ckpt.params), post, true)?)?;
            }
        }
    }
    if cfg.eval.features_baseline {
        for post in cfg.eval.postprocess.variants() {
            let reports = score(Embedder::Features, post, false)?;
            // seed-independent; repeated so seed counts match the models
            for &seed in &seeds {
                record(FEATURES_LABEL, seed, post, reports.clone())?;
            }
        }
    }
    let comparison = ComparisonReport::build(&runs)?;
    write_json(&ctx.comparison_path(), &comparison)?;
    fs::write(ctx.out.join("comparison.txt"), comparison.table())
        .map_err(|e| io_err("cannot write", &ctx.out.join("comparison.txt"), e))?;
    Manifest::record(&ctx.out, "evaluate", cfg, ctx, seeds)?;
    Ok(comparison)
}

/// Writes `nominated.tsv`, one line per compound:
/// `compound<TAB>n_sources<TAB>mean_distance<TAB>source=distance,...`.
pub fn nominate(cfg: &RunConfig, ctx: &Context) -> CliResult<Vec<dataset::Nomination>> {
    let ds = load_dataset(cfg, ctx)?;
    let noms = dataset::nominate_strong_compounds(&ds, cfg.nominate.top_frac, cfg.nominate.min_sources)
        .map_err(|e| match e {
            CoreError::Insufficient(_) | CoreError::Invalid(_) => CliError::config(format!("nominating: {e}")),
            other => CliError::core("nominating", other, CliError::CONFIG),
        })?;
    create_dir(&ctx.out)?;
    let path = ctx.out.join("nominated.tsv");
    let mut f = fs::File::create(&path).map_err(|e| io_err("cannot write", &path, e))?;
    for n in &noms {
        let q: Vec<String> = n.qualifying.iter().map(|(s, d)| format!("{s}={d:?}")).collect();
        writeln!(f, "{}\t{}\t{:?}\t{}", n.compound, n.qualifying.len(), n.mean_distance, q.join(","))
            .map_err(|e| io_err("cannot write", &path, e))?;
    }
    Manifest::record(&ctx.out, "nominate", cfg, ctx, Vec::new())?;
    Ok(noms)
}

/// Merge the comparisons of several run directories into one table, written
/// as `report.txt` and `plot_data.json` under `out`.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> CliResult<ComparisonReport> {
    if run_dirs.is_empty() {
        return Err(CliError::missing("report needs at least one run directory"));
    }
    let mut runs = Vec::new();
    for dir in run_dirs {
        let p = dir.join("comparison.json");
        let text = fs::read_to_string(&p).map_err(|e| io_err("cannot read", &p, e))?;
        let c: ComparisonReport = serde_json::from_str(&text)
            .map_err(|e| CliError::missing(format!("{} is not a comparison report: {e}", p.display())))?;
        runs.extend(c.runs());
    }
    let merged = ComparisonReport::build(&runs)?;
    create_dir(out)?;
    fs::write(out.join("report.txt"), merged.table()).map_err(|e| io_err("cannot write", &out.join("report.txt"), e))?;
    write_json(&out.join("plot_data.json"), &merged)?;
    Ok(merged)
}
