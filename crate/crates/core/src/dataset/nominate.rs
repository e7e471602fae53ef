//! Strong-compound nomination: compounds whose wells sit far from their
//! nearest plate-map control in many sources.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::split::round_half_up;
use super::Dataset;
use crate::error::{Error, Result};
use crate::math::cosine_similarity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nomination {
    pub compound: String,
    /// `(source, replicate-averaged distance)` for each qualifying source.
    pub qualifying: Vec<(String, f64)>,
    /// Mean distance over every source hosting the compound.
    pub mean_distance: f64,
}

/// For every treated well, the control well on its plate closest in plate
/// position. Ties go to the smallest `(row, col)`. Control wells map to
/// `None`.
pub fn nearest_controls(ds: &Dataset) -> Result<Vec<Option<usize>>> {
    let mut controls: BTreeMap<(&str, &str, &str), Vec<usize>> = BTreeMap::new();
    for (i, w) in ds.wells.iter().enumerate() {
        if w.is_control() {
            controls.entry(w.key.plate_key()).or_default().push(i);
        }
    }
    ds.wells
        .iter()
        .map(|w| {
            if w.is_control() {
                return Ok(None);
            }
            let plate = controls.get(&w.key.plate_key()).ok_or_else(|| {
                Error::Insufficient(format!(
                    "plate {}:{}:{} has no DMSO wells",
                    w.key.source, w.key.batch, w.key.plate
                ))
            })?;
            let nearest = plate.iter().copied().min_by_key(|&c| {
                let k = &ds.wells[c].key;
                let dr = k.row as i64 - w.key.row as i64;
                let dc = k.col as i64 - w.key.col as i64;
                (dr * dr + dc * dc, k.row, k.col)
            });
            Ok(nearest)
        })
        .collect()
}

/// Per source, the mean cosine distance of each compound's wells to the
/// plate-map-nearest control well.
pub fn control_distances(ds: &Dataset) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let nearest = nearest_controls(ds)?;
    let means: Vec<Vec<f64>> = ds.wells.iter().map(|w| w.mean()).collect();
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for (i, w) in ds.wells.iter().enumerate() {
        let Some(c) = nearest[i] else { continue };
        let dist = 1.0 - cosine_similarity(&means[i], &means[c])?;
        let e = sums
            .entry(w.key.source.clone())
            .or_default()
            .entry(w.perturbation.clone())
            .or_insert((0.0, 0));
        e.0 += dist;
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(s, m)| (s, m.into_iter().map(|(c, (t, n))| (c, t / n as f64)).collect()))
        .collect())
}

/// Compounds in the top `top_frac` of distances for at least `min_sources`
/// sources, most qualifying sources first, then largest mean distance.
pub fn nominate_strong_compounds(
    ds: &Dataset,
    top_frac: f64,
    min_sources: usize,
) -> Result<Vec<Nomination>> {
    if !(top_frac > 0.0 && top_frac <= 1.0) {
        return Err(Error::invalid(format!("top_frac must lie in (0, 1], got {top_frac}")));
    }
    let per_source = control_distances(ds)?;
    nominate_from_distances(&per_source, top_frac, min_sources)
}

/// Nomination rule over precomputed `source -> compound -> distance` maps.
pub fn nominate_from_distances(
    per_source: &BTreeMap<String, BTreeMap<String, f64>>,
    top_frac: f64,
    min_sources: usize,
) -> Result<Vec<Nomination>> {
    let mut qualifying: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    let mut all: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (source, dists) in per_source {
        let mut ranked: Vec<(&String, f64)> = dists.iter().map(|(c, d)| (c, *d)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let slots = round_half_up(top_frac * ranked.len() as f64).max(1);
        for (rank, (c, d)) in ranked.iter().enumerate() {
            all.entry(c.as_str()).or_default().push(*d);
            if rank < slots {
                qualifying.entry(c.as_str()).or_default().push((source.clone(), *d));
            }
        }
    }
    let mut out: Vec<Nomination> = qualifying
        .into_iter()
        .filter(|(_, q)| q.len() >= min_sources)
        .map(|(c, q)| {
            let d = &all[c];
            Nomination {
                compound: c.to_string(),
                qualifying: q,
                mean_distance: d.iter().sum::<f64>() / d.len() as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.qualifying
            .len()
            .cmp(&a.qualifying.len())
            .then(b.mean_distance.total_cmp(&a.mean_distance))
            .then_with(|| a.compound.cmp(&b.compound))
    });
    Ok(out)
}
