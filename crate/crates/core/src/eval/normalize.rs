//! Well aggregation and per-plate control-based post-processing: MAD
//! scaling, then ZCA whitening (spherizing).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::{WellKey, DMSO};
use crate::error::{Error, Result};

pub const MAD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellEmbedding {
    pub key: WellKey,
    pub perturbation: String,
    pub vector: Vec<f64>,
}

impl WellEmbedding {
    pub fn is_control(&self) -> bool {
        self.perturbation == DMSO
    }
}

type PlateKey = (String, String, String);

fn plate_of(key: &WellKey) -> PlateKey {
    (key.source.clone(), key.batch.clone(), key.plate.clone())
}

fn plate_name(p: &PlateKey) -> String {
    format!("{}:{}:{}", p.0, p.1, p.2)
}

/// Mean of a well's FOV vectors.
pub fn aggregate_well(key: WellKey, perturbation: &str, fovs: &[Vec<f64>]) -> Result<WellEmbedding> {
    let first = fovs
        .first()
        .ok_or_else(|| Error::invalid(format!("well {key} has no representations")))?;
    let d = first.len();
    let mut vector = vec![0.0; d];
    for f in fovs {
        if f.len() != d {
            return Err(Error::Dim(format!("well {key}: ragged representations")));
        }
        vector.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    let n = fovs.len() as f64;
    vector.iter_mut().for_each(|m| *m /= n);
    Ok(WellEmbedding {
        key,
        perturbation: perturbation.to_string(),
        vector,
    })
}

/// [`aggregate_well`] over a list of `(key, perturbation, fovs)` groups.
pub fn aggregate_wells(groups: &[(WellKey, String, Vec<Vec<f64>>)]) -> Result<Vec<WellEmbedding>> {
    groups
        .iter()
        .map(|(k, p, f)| aggregate_well(k.clone(), p, f))
        .collect()
}

/// Lower median: always an element of `xs`, so a control sitting at the
/// median maps to exactly zero.
fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[(xs.len() - 1) / 2]
}

fn controls_by_plate(embs: &[WellEmbedding], min: usize) -> Result<BTreeMap<PlateKey, Vec<&[f64]>>> {
    let mut by_plate: BTreeMap<PlateKey, Vec<&[f64]>> = BTreeMap::new();
    for e in embs {
        let entry = by_plate.entry(plate_of(&e.key)).or_default();
        if e.is_control() {
            entry.push(&e.vector);
        }
    }
    for (p, c) in &by_plate {
        if c.len() < min {
            return Err(Error::Insufficient(format!(
                "plate {} has {} {DMSO} wells, need {min}",
                plate_name(p),
                c.len()
            )));
        }
    }
    Ok(by_plate)
}

/// Per-coordinate control median and MAD divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct MadStats {
    pub median: Vec<f64>,
    pub scale: Vec<f64>,
}

impl MadStats {
    pub fn fit(controls: &[&[f64]]) -> Self {
        let d = controls[0].len();
        let mut median_v = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        let mut col = vec![0.0; controls.len()];
        for j in 0..d {
            col.iter_mut().zip(controls).for_each(|(c, v)| *c = v[j]);
            let m = median(&mut col);
            col.iter_mut().zip(controls).for_each(|(c, v)| *c = (v[j] - m).abs());
            let mad = median(&mut col);
            median_v.push(m);
            scale.push(mad.max(MAD_EPS));
        }
        Self {
            median: median_v,
            scale,
        }
    }

    pub fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.median).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

/// ZCA whitening fitted on one plate's controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub mean: DVector<f64>,
    pub transform: DMatrix<f64>,
}

impl Whitener {
    /// Control covariance shrunk towards `mean(diag) * I` by `shrink`, then
    /// inverted-square-rooted in its eigenbasis.
    pub fn fit(controls: &[&[f64]], shrink: f64, plate: &str) -> Result<Self> {
        if !(0.0..=1.0).contains(&shrink) {
            return Err(Error::invalid(format!("shrink {shrink} outside [0, 1]")));
        }
        let n = controls.len();
        let d = controls[0].len();
        let x = DMatrix::from_fn(n, d, |i, j| controls[i][j]);
        let mean = x.row_mean().transpose();
        let mut centred = x;
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centred.transpose() * &centred / (n as f64 - 1.0);
        let avg_diag = cov.diagonal().mean();
        let reg = cov * (1.0 - shrink) + DMatrix::identity(d, d) * (shrink * avg_diag);
        let eig = SymmetricEigen::new(reg);
        let max_ev = eig.eigenvalues.max().max(0.0);
        let floor = max_ev * 1e-12;
        if let Some(bad) = eig.eigenvalues.iter().find(|&&l| !(l > floor)) {
            return Err(Error::Insufficient(format!(
                "plate {plate}: control covariance is singular after shrinkage (eigenvalue {bad:e})"
            )));
        }
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let transform = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        Ok(Self { mean, transform })
    }

    pub fn apply(&self, v: &mut [f64]) {
        let x = DVector::from_column_slice(v) - &self.mean;
        let y = &self.transform * x;
        v.copy_from_slice(y.as_slice());
    }
}

/// Fitted per-plate post-processing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlateNormalizer {
    mad: BTreeMap<PlateKey, MadStats>,
    sphere: BTreeMap<PlateKey, Whitener>,
}

impl PlateNormalizer {
    /// Fit on the DMSO wells of `embs`: MAD when `mad` is set, then
    /// spherizing when `shrink` is given (on MAD-scaled controls).
    pub fn fit(embs: &[WellEmbedding], mad: bool, shrink: Option<f64>) -> Result<Self> {
        let mut out = Self::default();
        let mut work: Vec<WellEmbedding> = embs.iter().filter(|e| e.is_control()).cloned().collect();
        controls_by_plate(embs, 2)?;
        if mad {
            let by_plate = controls_by_plate(&work, 2)?;
            for (p, c) in by_plate {
                out.mad.insert(p, MadStats::fit(&c));
            }
            for e in &mut work {
                out.mad[&plate_of(&e.key)].apply(&mut e.vector);
            }
        }
        if let Some(shrink) = shrink {
            let by_plate = controls_by_plate(&work, 2)?;
            for (p, c) in by_plate {
                let w = Whitener::fit(&c, shrink, &plate_name(&p))?;
                out.sphere.insert(p, w);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, e: &mut WellEmbedding) -> Result<()> {
        let p = plate_of(&e.key);
        let missing = || Error::Insufficient(format!("no fitted controls for plate {}", plate_name(&p)));
        if !self.mad.is_empty() {
            self.mad.get(&p).ok_or_else(missing)?.apply(&mut e.vector);
        }
        if !self.sphere.is_empty() {
            self.sphere.get(&p).ok_or_else(missing)?.apply(&mut e.vector);
        }
        Ok(())
    }

    pub fn apply_all(&self, embs: &mut [WellEmbedding]) -> Result<()> {
        embs.iter_mut().try_for_each(|e| self.apply(e))
    }
}

/// Per plate and coordinate: `(x - median) / max(MAD, eps)` over the plate's
/// DMSO wells, applied to every well on the plate.
pub fn mad_normalize(embs: &mut [WellEmbedding]) -> Result<()> {
    PlateNormalizer::fit(embs, true, None)?.apply_all(embs)
}

/// Per-plate ZCA whitening on the DMSO wells.
pub fn spherize(embs: &mut [WellEmbedding], shrink: f64) -> Result<()> {
    PlateNormalizer::fit(embs, false, Some(shrink))?.apply_all(embs)
}
