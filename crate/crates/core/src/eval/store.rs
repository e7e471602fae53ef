//! Well embeddings as CSV: `source,batch,plate,row,col,perturbation_id,v_0..`.

use std::path::Path;

use super::normalize::WellEmbedding;
use crate::dataset::WellKey;
use crate::error::{Error, Result};

const KEY_COLUMNS: [&str; 6] = ["source", "batch", "plate", "row", "col", "perturbation_id"];

pub fn write_embeddings(path: &Path, embs: &[WellEmbedding]) -> Result<()> {
    let table_err = |msg: String| Error::Table {
        path: path.display().to_string(),
        row: 0,
        msg,
    };
    let d = embs.first().map_or(0, |e| e.vector.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| table_err(e.to_string()))?;
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..d).map(|i| format!("v_{i}")));
    w.write_record(&header).map_err(|e| table_err(e.to_string()))?;
    for e in embs {
        if e.vector.len() != d {
            return Err(Error::Dim(format!("embedding for {} has dim {}, expected {d}", e.key, e.vector.len())));
        }
        let k = &e.key;
        let mut rec = vec![
            k.source.clone(),
            k.batch.clone(),
            k.plate.clone(),
            k.row.to_string(),
            k.col.to_string(),
            e.perturbation.clone(),
        ];
        rec.extend(e.vector.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| table_err(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<WellEmbedding>> {
    let err = |row: usize, msg: String| Error::Table {
        path: path.display().to_string(),
        row,
        msg,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(0, e.to_string()))?;
    let header = r.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.len() < KEY_COLUMNS.len() || header.iter().zip(KEY_COLUMNS).any(|(a, b)| a != b) {
        return Err(err(1, format!("header must start with {}", KEY_COLUMNS.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        let int = |j: usize| -> Result<u32> {
            rec[j]
                .parse()
                .map_err(|_| err(row, format!("column {} is not an integer", KEY_COLUMNS[j])))
        };
        let vector = (KEY_COLUMNS.len()..rec.len())
            .map(|j| {
                rec[j]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(row, format!("column {} is not a finite number", &header[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(WellEmbedding {
            key: WellKey {
                source: rec[0].to_string(),
                batch: rec[1].to_string(),
                plate: rec[2].to_string(),
                row: int(3)?,
                col: int(4)?,
            },
            perturbation: rec[5].to_string(),
            vector,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let embs = vec![
            WellEmbedding {
                key: "s:b:p:1:2".parse().unwrap(),
                perturbation: "DMSO".into(),
                vector: vec![0.1, -1.0 / 3.0, 1e-300],
            },
            WellEmbedding {
                key: "s:b:p:1:3".parse().unwrap(),
                perturbation: "cmpd_01".into(),
                vector: vec![2.5, 0.0, -7.0],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_embeddings(&p, &embs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("source,batch,plate,row,col,perturbation_id,v_0,v_1,v_2\n"));
        assert_eq!(read_embeddings(&p).unwrap(), embs);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "source,batch,plate,row,col,perturbation_id,v_0\ns,b,p,0,0,a,1.0\ns,b,p,0,1,a,oops\n").unwrap();
        let e = read_embeddings(&p).unwrap_err().to_string();
        assert!(e.contains(":3:") && e.contains("v_0"), "{e}");
    }
}
