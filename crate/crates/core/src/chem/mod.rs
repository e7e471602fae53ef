//! SMILES parsing, circular fingerprints and the compound table.

pub mod ecfp;
pub mod smiles;

use std::collections::BTreeMap;
use std::path::Path;

pub use ecfp::{ecfp, ecfp_checked, environment_ids, tanimoto, Fingerprint, DEFAULT_BITS, DEFAULT_RADIUS};
pub use smiles::{parse_smiles, Atom, Bond, BondOrder, Molecule};

use crate::error::{Error, Result};

/// `compound_id -> smiles`, in id order.
pub type CompoundTable = BTreeMap<String, String>;

pub fn read_compound_table(path: &Path) -> Result<CompoundTable> {
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| table_err(&shown, 0, e))?;
    let headers = rdr.headers().map_err(|e| table_err(&shown, 1, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Table {
            path: shown.clone(),
            row: 1,
            msg: format!("missing column `{name}`"),
        })
    };
    let (id_col, smi_col) = (col("compound_id")?, col("smiles")?);
    let mut out = CompoundTable::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| table_err(&shown, row, e))?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        let smiles = rec.get(smi_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Table {
                path: shown,
                row,
                msg: "empty compound_id".into(),
            });
        }
        parse_smiles(&smiles).map_err(|e| Error::Table {
            path: shown.clone(),
            row,
            msg: format!("compound {id}: {e}"),
        })?;
        if out.insert(id.clone(), smiles).is_some() {
            return Err(Error::Table {
                path: shown,
                row,
                msg: format!("duplicate compound_id {id}"),
            });
        }
    }
    Ok(out)
}

pub fn write_compound_table(path: &Path, table: &CompoundTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| table_err(&path.display().to_string(), 0, e))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["compound_id", "smiles"]).map_err(io)?;
    for (id, smi) in table {
        w.write_record([id.as_str(), smi.as_str()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn table_err(path: &str, row: usize, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(row);
    Error::Table {
        path: path.to_string(),
        row,
        msg: e.to_string(),
    }
}

/// Parse and fingerprint a SMILES string with the default radius and width.
pub fn fingerprint_smiles(smiles: &str) -> Result<Fingerprint> {
    ecfp(&parse_smiles(smiles)?, DEFAULT_RADIUS, DEFAULT_BITS)
}
