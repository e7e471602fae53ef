//! Screens as wells of per-FOV feature vectors: the in-memory model, the
//! delimited wells table, the synthetic generator, split protocols and
//! strong-compound nomination.

pub mod nominate;
pub mod split;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chem::{self, table_err, CompoundTable, Fingerprint};
use crate::error::{Error, Result};

pub use nominate::{nearest_controls, nominate_strong_compounds, Nomination};
pub use split::{split_id_by_batch, split_ood_compound, split_ood_source, SplitSpec, SplitTag};
pub use synth::{gen_synthetic, BatchEffectStrength, GroundTruth, SynthConfig};

/// Perturbation label reserved for negative-control wells.
pub const DMSO: &str = "DMSO";

/// Identity of a well: `(source, batch, plate, row, col)`. Batch ids are
/// namespaced by source and plate ids by batch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WellKey {
    pub source: String,
    pub batch: String,
    pub plate: String,
    pub row: u32,
    pub col: u32,
}

impl WellKey {
    pub fn batch_key(&self) -> (&str, &str) {
        (&self.source, &self.batch)
    }

    pub fn plate_key(&self) -> (&str, &str, &str) {
        (&self.source, &self.batch, &self.plate)
    }
}

impl fmt::Display for WellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}",
            self.source, self.batch, self.plate, self.row, self.col
        )
    }
}

impl std::str::FromStr for WellKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 5 {
            return Err(Error::invalid(format!("malformed well key `{s}`")));
        }
        let num = |p: &str| {
            p.parse::<u32>()
                .map_err(|_| Error::invalid(format!("malformed well key `{s}`")))
        };
        Ok(WellKey {
            source: parts[0].into(),
            batch: parts[1].into(),
            plate: parts[2].into(),
            row: num(parts[3])?,
            col: num(parts[4])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellRecord {
    pub key: WellKey,
    pub perturbation: String,
    pub fovs: Vec<Vec<f64>>,
}

impl WellRecord {
    pub fn is_control(&self) -> bool {
        self.perturbation == DMSO
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.fovs[0].len();
        let mut m = vec![0.0; d];
        for f in &self.fovs {
            for (a, b) in m.iter_mut().zip(f) {
                *a += b;
            }
        }
        let n = self.fovs.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compound {
    pub smiles: String,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub wells: Vec<WellRecord>,
    pub compounds: BTreeMap<String, Compound>,
    pub feature_dim: usize,
    pub ground_truth: Option<GroundTruth>,
}

/// Reference to one FOV: `(well index, fov index)`.
pub type FovRef = (usize, usize);

impl Dataset {
    /// Build from parts, fingerprinting every compound and checking invariants.
    pub fn new(wells: Vec<WellRecord>, smiles: &CompoundTable) -> Result<Self> {
        let mut compounds = BTreeMap::new();
        for (id, smi) in smiles {
            if id == DMSO {
                return Err(Error::invalid("the negative control DMSO cannot carry a SMILES"));
            }
            compounds.insert(
                id.clone(),
                Compound {
                    smiles: smi.clone(),
                    fingerprint: chem::fingerprint_smiles(smi)?,
                },
            );
        }
        let feature_dim = wells
            .first()
            .and_then(|w| w.fovs.first())
            .map_or(0, Vec::len);
        let ds = Dataset {
            wells,
            compounds,
            feature_dim,
            ground_truth: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("dataset has no feature dimensions"));
        }
        let mut seen = BTreeSet::new();
        for w in &self.wells {
            if !seen.insert(&w.key) {
                return Err(Error::invalid(format!("duplicate well {}", w.key)));
            }
            if w.fovs.is_empty() {
                return Err(Error::invalid(format!("well {} has no FOVs", w.key)));
            }
            if let Some(f) = w.fovs.iter().find(|f| f.len() != self.feature_dim) {
                return Err(Error::Dim(format!(
                    "well {} has a {}-dim FOV, expected {}",
                    w.key,
                    f.len(),
                    self.feature_dim
                )));
            }
            if !w.is_control() && !self.compounds.contains_key(&w.perturbation) {
                return Err(Error::invalid(format!(
                    "well {} uses unknown compound {}",
                    w.key, w.perturbation
                )));
            }
        }
        Ok(())
    }

    pub fn smiles_table(&self) -> CompoundTable {
        self.compounds
            .iter()
            .map(|(k, c)| (k.clone(), c.smiles.clone()))
            .collect()
    }

    pub fn sources(&self) -> Vec<String> {
        let s: BTreeSet<&String> = self.wells.iter().map(|w| &w.key.source).collect();
        s.into_iter().cloned().collect()
    }

    /// Sorted batch ids of one source.
    pub fn batches_of(&self, source: &str) -> Vec<String> {
        let s: BTreeSet<&String> = self
            .wells
            .iter()
            .filter(|w| w.key.source == source)
            .map(|w| &w.key.batch)
            .collect();
        s.into_iter().cloned().collect()
    }

    pub fn fov(&self, r: FovRef) -> &[f64] {
        &self.wells[r.0].fovs[r.1]
    }

    pub fn n_fovs(&self) -> usize {
        self.wells.iter().map(|w| w.fovs.len()).sum()
    }
}

/// Dense index of a wells table's columns.
struct Columns {
    source: usize,
    batch: usize,
    plate: usize,
    row: usize,
    col: usize,
    perturbation: usize,
    fov: usize,
    features: Vec<usize>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord, path: &str) -> Result<Self> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Table {
                    path: path.into(),
                    row: 1,
                    msg: format!("missing column `{name}`"),
                })
        };
        let mut features = Vec::new();
        while let Some(i) = headers
            .iter()
            .position(|h| h.trim() == format!("f_{}", features.len()))
        {
            features.push(i);
        }
        if features.is_empty() {
            return Err(Error::Table {
                path: path.into(),
                row: 1,
                msg: "missing column `f_0`".into(),
            });
        }
        Ok(Columns {
            source: find("source_id")?,
            batch: find("batch_id")?,
            plate: find("plate_id")?,
            row: find("row")?,
            col: find("col")?,
            perturbation: find("perturbation_id")?,
            fov: find("fov_index")?,
            features,
        })
    }
}

/// Read a wells table plus its compound table.
pub fn ingest_features(wells_table: &Path, compounds_table: &Path) -> Result<Dataset> {
    let smiles = chem::read_compound_table(compounds_table)?;
    let shown = wells_table.display().to_string();
    let err = |row: usize, msg: String| Error::Table {
        path: shown.clone(),
        row,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(wells_table)
        .map_err(|e| table_err(&shown, 0, e))?;
    let headers = rdr.headers().map_err(|e| table_err(&shown, 1, e))?.clone();
    let cols = Columns::locate(&headers, &shown)?;

    let mut wells: Vec<WellRecord> = Vec::new();
    let mut fov_index: Vec<Vec<u32>> = Vec::new();
    let mut by_key: HashMap<WellKey, usize> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| table_err(&shown, row, e))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let uint = |c: usize, name: &str| {
            field(c)
                .parse::<u32>()
                .map_err(|_| err(row, format!("bad {name} `{}`", field(c))))
        };
        let key = WellKey {
            source: field(cols.source).into(),
            batch: field(cols.batch).into(),
            plate: field(cols.plate).into(),
            row: uint(cols.row, "row")?,
            col: uint(cols.col, "col")?,
        };
        let fov = uint(cols.fov, "fov_index")?;
        let perturbation = field(cols.perturbation).to_string();
        if perturbation != DMSO && !smiles.contains_key(&perturbation) {
            return Err(err(row, format!("unknown compound_id {perturbation}")));
        }
        if rec.len() != headers.len() {
            return Err(err(
                row,
                format!("expected {} columns, found {}", headers.len(), rec.len()),
            ));
        }
        let mut values = Vec::with_capacity(cols.features.len());
        for &c in &cols.features {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| err(row, format!("bad feature value `{}`", field(c))))?;
            if !v.is_finite() {
                return Err(err(row, format!("non-finite feature value `{}`", field(c))));
            }
            values.push(v);
        }
        let w = match by_key.get(&key) {
            Some(&w) => {
                if wells[w].perturbation != perturbation {
                    return Err(err(
                        row,
                        format!("well {key} relabelled from {} to {perturbation}", wells[w].perturbation),
                    ));
                }
                w
            }
            None => {
                by_key.insert(key.clone(), wells.len());
                wells.push(WellRecord {
                    key,
                    perturbation,
                    fovs: Vec::new(),
                });
                fov_index.push(Vec::new());
                wells.len() - 1
            }
        };
        if fov_index[w].contains(&fov) {
            return Err(err(row, format!("duplicate fov_index {fov} in well {}", wells[w].key)));
        }
        fov_index[w].push(fov);
        wells[w].fovs.push(values);
    }
    if wells.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    for (w, idx) in wells.iter_mut().zip(&fov_index) {
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by_key(|&i| idx[i]);
        w.fovs = order.iter().map(|&i| std::mem::take(&mut w.fovs[i])).collect();
    }
    Dataset::new(wells, &smiles)
}

/// Write the wells table; FOVs are numbered from 0 in stored order.
pub fn write_wells_table(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "source_id,batch_id,plate_id,row,col,perturbation_id,fov_index")?;
    for j in 0..ds.feature_dim {
        write!(out, ",f_{j}")?;
    }
    writeln!(out)?;
    for w in &ds.wells {
        for (i, fov) in w.fovs.iter().enumerate() {
            let k = &w.key;
            write!(
                out,
                "{},{},{},{},{},{},{i}",
                k.source, k.batch, k.plate, k.row, k.col, w.perturbation
            )?;
            for v in fov {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write both tables of a dataset into `dir` as `wells.csv` and `compounds.csv`.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_wells_table(ds, &dir.join("wells.csv"))?;
    chem::write_compound_table(&dir.join("compounds.csv"), &ds.smiles_table())
}
