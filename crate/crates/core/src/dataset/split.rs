//! Train / validation / retrieval / query partitions of a dataset.
//!
//! Batches (or compounds, for the unseen-compound protocol) are shuffled with
//! a seeded generator before being dealt out, so a split is a pure function of
//! the dataset and the seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, WellKey, DMSO};
use crate::error::{Error, Result};
use crate::math::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Retrieval,
    Query,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [
        SplitTag::Train,
        SplitTag::Val,
        SplitTag::Retrieval,
        SplitTag::Query,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Retrieval => "retrieval",
            SplitTag::Query => "query",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split tag `{s}`")))
    }
}

/// Well indices of each role, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub retrieval: Vec<usize>,
    pub query: Vec<usize>,
    pub seed: u64,
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

impl SplitSpec {
    pub fn get(&self, tag: SplitTag) -> &[usize] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Retrieval => &self.retrieval,
            SplitTag::Query => &self.query,
        }
    }

    fn get_mut(&mut self, tag: SplitTag) -> &mut Vec<usize> {
        match tag {
            SplitTag::Train => &mut self.train,
            SplitTag::Val => &mut self.val,
            SplitTag::Retrieval => &mut self.retrieval,
            SplitTag::Query => &mut self.query,
        }
    }

    pub fn tags_of(&self, well: usize) -> Vec<SplitTag> {
        SplitTag::ALL
            .into_iter()
            .filter(|&t| self.get(t).binary_search(&well).is_ok())
            .collect()
    }

    /// Check disjointness and that every query label is retrievable.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let n = ds.wells.len();
        for tag in SplitTag::ALL {
            let v = self.get(tag);
            if v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("{tag} indices not strictly sorted")));
            }
            if let Some(&i) = v.iter().find(|&&i| i >= n) {
                return Err(Error::invalid(format!("{tag} index {i} out of range")));
            }
        }
        let overlaps = |a: &[usize], b: &[usize]| a.iter().find(|i| b.binary_search(i).is_ok()).copied();
        for (a, b) in [
            (SplitTag::Query, SplitTag::Train),
            (SplitTag::Query, SplitTag::Val),
            (SplitTag::Val, SplitTag::Train),
        ] {
            if let Some(i) = overlaps(self.get(a), self.get(b)) {
                return Err(Error::invalid(format!(
                    "well {} is in both {a} and {b}",
                    ds.wells[i].key
                )));
            }
        }
        let retrievable: BTreeSet<&str> = self
            .retrieval
            .iter()
            .map(|&i| ds.wells[i].perturbation.as_str())
            .collect();
        if let Some(&i) = self
            .query
            .iter()
            .find(|&&i| !retrievable.contains(ds.wells[i].perturbation.as_str()))
        {
            return Err(Error::invalid(format!(
                "query well {} has perturbation {} absent from retrieval",
                ds.wells[i].key, ds.wells[i].perturbation
            )));
        }
        Ok(())
    }

    /// Write `well_key<TAB>tag,tag` for every tagged well, in dataset order.
    pub fn write(&self, ds: &Dataset, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# seed\t{}", self.seed)?;
        for (i, w) in ds.wells.iter().enumerate() {
            let tags = self.tags_of(i);
            if tags.is_empty() {
                continue;
            }
            let names: Vec<&str> = tags.iter().map(|t| t.name()).collect();
            writeln!(out, "{}\t{}", w.key, names.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(ds: &Dataset, path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let index: HashMap<&WellKey, usize> =
            ds.wells.iter().enumerate().map(|(i, w)| (&w.key, i)).collect();
        let mut spec = SplitSpec::default();
        for (n, line) in text.lines().enumerate() {
            let row = n + 1;
            let err = |msg: String| Error::Table {
                path: shown.clone(),
                row,
                msg,
            };
            if let Some(seed) = line.strip_prefix("# seed\t") {
                spec.seed = seed.trim().parse().map_err(|_| err("bad seed".into()))?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, tags) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `well_key<TAB>tags`".into()))?;
            let key: WellKey = key.parse().map_err(|e: Error| err(e.to_string()))?;
            let &i = index
                .get(&key)
                .ok_or_else(|| err(format!("well {key} not in dataset")))?;
            for t in tags.split(',') {
                let tag: SplitTag = t.trim().parse().map_err(|e: Error| err(e.to_string()))?;
                spec.get_mut(tag).push(i);
            }
        }
        for tag in SplitTag::ALL {
            let v = std::mem::take(spec.get_mut(tag));
            *spec.get_mut(tag) = sorted(v);
        }
        spec.validate(ds)?;
        Ok(spec)
    }
}

/// Well indices grouped by `(source, batch)`.
fn wells_by_batch(ds: &Dataset) -> BTreeMap<(String, String), Vec<usize>> {
    let mut out: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, w) in ds.wells.iter().enumerate() {
        out.entry((w.key.source.clone(), w.key.batch.clone()))
            .or_default()
            .push(i);
    }
    out
}

fn collect(batches: &BTreeMap<(String, String), Vec<usize>>, source: &str, names: &[String]) -> Vec<usize> {
    names
        .iter()
        .flat_map(|b| batches[&(source.to_string(), b.clone())].iter().copied())
        .collect()
}

/// In-distribution split: whole batches of every source go to query.
pub fn split_id_by_batch(
    ds: &Dataset,
    query_frac: f64,
    val_batches_per_source: usize,
    seed: u64,
) -> Result<SplitSpec> {
    if !(query_frac > 0.0 && query_frac < 1.0) {
        return Err(Error::invalid(format!(
            "query_frac must lie in (0, 1), got {query_frac}"
        )));
    }
    let tree = SeedTree::new(seed).child("split_id_by_batch");
    let by_batch = wells_by_batch(ds);
    let mut spec = SplitSpec {
        seed,
        ..Default::default()
    };
    for source in ds.sources() {
        let mut batches = ds.batches_of(&source);
        let nb = batches.len();
        if nb < val_batches_per_source + 2 {
            return Err(Error::Insufficient(format!(
                "source {source} has {nb} batches, needs at least {}",
                val_batches_per_source + 2
            )));
        }
        let nq = round_half_up(query_frac * nb as f64).max(1);
        if nq + val_batches_per_source >= nb {
            return Err(Error::Insufficient(format!(
                "source {source}: {nq} query + {val_batches_per_source} val batches leave none of {nb} for training"
            )));
        }
        batches.shuffle(&mut tree.rng(&source));
        let (query, rest) = batches.split_at(nq);
        let (val, train) = rest.split_at(val_batches_per_source);
        spec.query.extend(collect(&by_batch, &source, query));
        spec.val.extend(collect(&by_batch, &source, val));
        spec.train.extend(collect(&by_batch, &source, train));
    }
    spec.train = sorted(spec.train);
    spec.val = sorted(spec.val);
    spec.query = sorted(spec.query);
    spec.retrieval = sorted(spec.train.iter().chain(&spec.val).copied().collect());
    spec.validate(ds)?;
    Ok(spec)
}

/// Unseen-source split: one source is held out of training; half its
/// batches join retrieval and the other half form the query set.
pub fn split_ood_source(ds: &Dataset, unseen_source: &str, seed: u64) -> Result<SplitSpec> {
    let sources = ds.sources();
    if !sources.iter().any(|s| s == unseen_source) {
        return Err(Error::invalid(format!("unknown source {unseen_source}")));
    }
    let tree = SeedTree::new(seed).child("split_ood_source");
    let by_batch = wells_by_batch(ds);
    let mut spec = SplitSpec {
        seed,
        ..Default::default()
    };
    let mut extra_retrieval = Vec::new();
    for source in &sources {
        let mut batches = ds.batches_of(source);
        batches.shuffle(&mut tree.rng(source));
        if source == unseen_source {
            if batches.len() < 2 {
                return Err(Error::Insufficient(format!(
                    "unseen source {source} has a single batch"
                )));
            }
            let (retr, query) = batches.split_at(batches.len() / 2);
            extra_retrieval.extend(collect(&by_batch, source, retr));
            spec.query.extend(collect(&by_batch, source, query));
        } else if batches.len() < 2 {
            spec.train.extend(collect(&by_batch, source, &batches));
        } else {
            spec.val.extend(collect(&by_batch, source, &batches[..1]));
            spec.train.extend(collect(&by_batch, source, &batches[1..]));
        }
    }
    spec.train = sorted(spec.train);
    spec.val = sorted(spec.val);
    spec.query = sorted(spec.query);
    spec.retrieval = sorted(
        spec.train
            .iter()
            .chain(&spec.val)
            .chain(&extra_retrieval)
            .copied()
            .collect(),
    );
    spec.validate(ds)?;
    Ok(spec)
}

/// Unseen-compound split: training sees only controls and `seen` compounds;
/// each unseen compound contributes a fixed number of retrieval and query
/// wells.
pub fn split_ood_compound(
    ds: &Dataset,
    seen: &BTreeSet<String>,
    unseen_wells_retrieval: usize,
    unseen_wells_query: usize,
    seed: u64,
) -> Result<SplitSpec> {
    if let Some(c) = seen.iter().find(|c| !ds.compounds.contains_key(*c)) {
        return Err(Error::invalid(format!("seen compound {c} not in dataset")));
    }
    if unseen_wells_retrieval == 0 || unseen_wells_query == 0 {
        return Err(Error::invalid(
            "unseen compounds need at least one retrieval and one query well",
        ));
    }
    let tree = SeedTree::new(seed).child("split_ood_compound");
    let mut spec = SplitSpec {
        seed,
        ..Default::default()
    };

    // one validation batch per source among the seen/control wells
    let mut val_batches = BTreeSet::new();
    for source in ds.sources() {
        let mut batches = ds.batches_of(&source);
        if batches.len() >= 2 {
            batches.shuffle(&mut tree.rng(&source));
            val_batches.insert((source.clone(), batches[0].clone()));
        }
    }
    let mut unseen: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in ds.wells.iter().enumerate() {
        if w.perturbation == DMSO || seen.contains(&w.perturbation) {
            if val_batches.contains(&(w.key.source.clone(), w.key.batch.clone())) {
                spec.val.push(i);
            } else {
                spec.train.push(i);
            }
        } else {
            unseen.entry(&w.perturbation).or_default().push(i);
        }
    }
    let need = unseen_wells_retrieval + unseen_wells_query;
    let mut extra_retrieval = Vec::new();
    for (compound, mut wells) in unseen {
        if wells.len() < need {
            return Err(Error::Insufficient(format!(
                "unseen compound {compound} has {} wells, needs {need}",
                wells.len()
            )));
        }
        wells.shuffle(&mut tree.rng(compound));
        extra_retrieval.extend(&wells[..unseen_wells_retrieval]);
        spec.query.extend(&wells[unseen_wells_retrieval..need]);
    }
    spec.train = sorted(spec.train);
    spec.val = sorted(spec.val);
    spec.query = sorted(spec.query);
    spec.retrieval = sorted(
        spec.train
            .iter()
            .chain(&spec.val)
            .chain(&extra_retrieval)
            .copied()
            .collect(),
    );
    spec.validate(ds)?;
    Ok(spec)
}
