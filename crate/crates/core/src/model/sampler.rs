//! Batch assembly.
//!
//! A MICON batch holds `T` perturbed FOVs, `T` partner FOVs with the same
//! perturbation, and `C` negative controls taken from the plates (failing
//! that, the batches) of the perturbed images.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::Rng as _;

use crate::dataset::{Dataset, FovRef, DMSO};
use crate::error::{Error, Result};
use crate::math::Rng;

/// Dense ids for perturbation names; the control is always id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndex {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl LabelIndex {
    pub fn new(ds: &Dataset) -> Self {
        let mut names = vec![DMSO.to_string()];
        names.extend(ds.compounds.keys().cloned());
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, ids }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub t1: Vec<FovRef>,
    pub t2: Vec<FovRef>,
    pub controls: Vec<FovRef>,
    /// Perturbation ids in `t1 ++ t2 ++ controls` order.
    pub labels: Vec<usize>,
    /// Microscopy batch ids in the same order.
    pub batch_ids: Vec<usize>,
    /// For each entry of `t1 ++ t2`, the control used as its fusion context.
    pub cf_controls: Vec<usize>,
}

impl TrainingBatch {
    pub fn fovs(&self) -> Vec<FovRef> {
        let mut out = self.t1.clone();
        out.extend(&self.t2);
        out.extend(&self.controls);
        out
    }

    pub fn n_perturbed(&self) -> usize {
        self.t1.len() + self.t2.len()
    }
}

/// Draws batches from a fixed subset of wells.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    ds: &'a Dataset,
    labels: LabelIndex,
    t: usize,
    c: usize,
    batch_names: Vec<(String, String)>,
    well_batch: HashMap<usize, usize>,
    /// Perturbed FOVs whose perturbation has at least one other FOV.
    anchors: Vec<FovRef>,
    perturbed: Vec<FovRef>,
    all: Vec<FovRef>,
    by_perturbation: BTreeMap<usize, Vec<FovRef>>,
    controls_by_plate: BTreeMap<(usize, String), Vec<FovRef>>,
    controls_by_batch: BTreeMap<usize, Vec<FovRef>>,
}

impl<'a> BatchSampler<'a> {
    /// `t` pairs and `c` controls per batch, drawn from `wells`.
    pub fn new(ds: &'a Dataset, wells: &[usize], t: usize, c: usize) -> Result<Self> {
        let labels = LabelIndex::new(ds);
        let mut batch_ids: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut s = Self {
            ds,
            labels,
            t,
            c,
            batch_names: Vec::new(),
            well_batch: HashMap::new(),
            anchors: Vec::new(),
            perturbed: Vec::new(),
            all: Vec::new(),
            by_perturbation: BTreeMap::new(),
            controls_by_plate: BTreeMap::new(),
            controls_by_batch: BTreeMap::new(),
        };
        for &w in wells {
            let well = ds
                .wells
                .get(w)
                .ok_or_else(|| Error::invalid(format!("well index {w} out of range")))?;
            let key = (well.key.source.clone(), well.key.batch.clone());
            let next = batch_ids.len();
            let b = *batch_ids.entry(key.clone()).or_insert_with(|| {
                s.batch_names.push(key);
                next
            });
            s.well_batch.insert(w, b);
            let label = s.labels.id(&well.perturbation).ok_or_else(|| {
                Error::invalid(format!("unknown perturbation {}", well.perturbation))
            })?;
            for f in 0..well.fovs.len() {
                let r = (w, f);
                s.all.push(r);
                if well.is_control() {
                    s.controls_by_plate
                        .entry((b, well.key.plate.clone()))
                        .or_default()
                        .push(r);
                    s.controls_by_batch.entry(b).or_default().push(r);
                } else {
                    s.perturbed.push(r);
                    s.by_perturbation.entry(label).or_default().push(r);
                }
            }
        }
        for refs in s.by_perturbation.values() {
            if refs.len() >= 2 {
                s.anchors.extend(refs);
            }
        }
        s.anchors.sort_unstable();
        Ok(s)
    }

    pub fn labels(&self) -> &LabelIndex {
        &self.labels
    }

    pub fn batch_name(&self, id: usize) -> &(String, String) {
        &self.batch_names[id]
    }

    pub fn label_of(&self, r: FovRef) -> usize {
        self.labels
            .id(&self.ds.wells[r.0].perturbation)
            .expect("interned at construction")
    }

    pub fn batch_of(&self, r: FovRef) -> usize {
        self.well_batch[&r.0]
    }

    pub fn n_fovs(&self) -> usize {
        self.all.len()
    }

    fn plate_of(&self, r: FovRef) -> &str {
        &self.ds.wells[r.0].key.plate
    }

    /// One perturbation-aware batch.
    pub fn sample(&self, rng: &mut Rng) -> Result<TrainingBatch> {
        if self.anchors.is_empty() {
            return Err(Error::Sampling(
                "no perturbation has two or more images in this split".into(),
            ));
        }
        let t1 = draw(&self.anchors, self.t, rng);
        let t2: Vec<FovRef> = t1
            .iter()
            .map(|&a| {
                let group = &self.by_perturbation[&self.label_of(a)];
                let pick = rng.gen_range(0..group.len() - 1);
                let pos = group.iter().position(|&r| r == a).expect("member");
                group[if pick >= pos { pick + 1 } else { pick }]
            })
            .collect();

        let perturbed: Vec<FovRef> = t1.iter().chain(&t2).copied().collect();
        // Distinct batches in order of first appearance, each with the
        // plates its perturbed images sit on.
        let mut batches: Vec<(usize, Vec<String>)> = Vec::new();
        for &r in &perturbed {
            let b = self.batch_of(r);
            let plate = self.plate_of(r).to_string();
            match batches.iter_mut().find(|(id, _)| *id == b) {
                Some((_, plates)) => {
                    if !plates.contains(&plate) {
                        plates.push(plate);
                    }
                }
                None => batches.push((b, vec![plate])),
            }
        }
        for (b, _) in &batches {
            if !self.controls_by_batch.contains_key(b) {
                let (src, batch) = &self.batch_names[*b];
                return Err(Error::Sampling(format!(
                    "no {DMSO} control available in batch {src}/{batch}"
                )));
            }
        }

        let mut controls = Vec::with_capacity(self.c);
        for k in 0..self.c {
            let (b, plates) = &batches[k % batches.len()];
            let plate = &plates[(k / batches.len()) % plates.len()];
            let pool = self
                .controls_by_plate
                .get(&(*b, plate.clone()))
                .unwrap_or(&self.controls_by_batch[b]);
            let fresh: Vec<FovRef> = pool.iter().copied().filter(|r| !controls.contains(r)).collect();
            let from = if fresh.is_empty() { pool } else { &fresh };
            controls.push(from[rng.gen_range(0..from.len())]);
        }

        let mut cursor: HashMap<usize, usize> = HashMap::new();
        let cf_controls = perturbed
            .iter()
            .enumerate()
            .map(|(j, &r)| {
                let b = self.batch_of(r);
                let slots: Vec<usize> = (0..controls.len())
                    .filter(|&k| self.batch_of(controls[k]) == b)
                    .collect();
                if slots.is_empty() {
                    j % controls.len()
                } else {
                    let n = cursor.entry(b).or_insert(0);
                    let k = slots[*n % slots.len()];
                    *n += 1;
                    k
                }
            })
            .collect();

        let mut all = perturbed;
        all.extend(&controls);
        Ok(TrainingBatch {
            labels: all.iter().map(|&r| self.label_of(r)).collect(),
            batch_ids: all.iter().map(|&r| self.batch_of(r)).collect(),
            t1,
            t2,
            controls,
            cf_controls,
        })
    }

    /// `n` FOVs of any kind, without replacement while possible.
    pub fn sample_instances(&self, n: usize, rng: &mut Rng) -> Result<Vec<FovRef>> {
        if self.all.is_empty() {
            return Err(Error::Sampling("split has no images".into()));
        }
        Ok(draw(&self.all, n, rng))
    }

    /// `n` perturbed FOVs, without replacement while possible.
    pub fn sample_perturbed(&self, n: usize, rng: &mut Rng) -> Result<Vec<FovRef>> {
        if self.perturbed.is_empty() {
            return Err(Error::Sampling("split has no perturbed images".into()));
        }
        Ok(draw(&self.perturbed, n, rng))
    }
}

/// `n` uniform picks from `pool`, distinct whenever `n <= pool.len()`.
fn draw(pool: &[FovRef], n: usize, rng: &mut Rng) -> Vec<FovRef> {
    if n <= pool.len() {
        index::sample(rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{WellKey, WellRecord};
    use crate::math::SeedTree;
    use std::collections::BTreeSet;

    fn well(batch: &str, plate: &str, col: u32, pert: &str, fovs: usize) -> WellRecord {
        WellRecord {
            key: WellKey {
                source: "s".into(),
                batch: batch.into(),
                plate: plate.into(),
                row: 0,
                col,
            },
            perturbation: pert.into(),
            fovs: (0..fovs).map(|i| vec![i as f64, col as f64]).collect(),
        }
    }

    fn dataset(wells: Vec<WellRecord>) -> Dataset {
        let table = [("a", "CCO"), ("b", "c1ccccc1"), ("c", "CC(=O)O")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Dataset::new(wells, &table).unwrap()
    }

    #[test]
    fn forced_minimal_batch() {
        let ds = dataset(vec![well("b0", "p0", 0, "a", 2), well("b0", "p0", 1, DMSO, 1)]);
        let s = BatchSampler::new(&ds, &[0, 1], 1, 1).unwrap();
        let mut rng = SeedTree::new(0).rng("x");
        for _ in 0..5 {
            let b = s.sample(&mut rng).unwrap();
            let pair = [b.t1[0], b.t2[0]];
            assert!(pair == [(0, 0), (0, 1)] || pair == [(0, 1), (0, 0)]);
            assert_eq!(b.controls, vec![(1, 0)]);
            assert_eq!(b.labels, vec![1, 1, 0]);
            assert_eq!(b.cf_controls, vec![0, 0]);
        }
    }

    fn two_batch_fixture() -> Dataset {
        let mut wells = Vec::new();
        for (bi, b) in ["b0", "b1"].iter().enumerate() {
            for (pi, p) in ["p0", "p1"].iter().enumerate() {
                let base = (bi * 10 + pi * 5) as u32;
                wells.push(well(b, p, base, "a", 3));
                wells.push(well(b, p, base + 1, "b", 3));
                if bi + pi == 0 {
                    wells.push(well(b, p, base + 2, "c", 1));
                }
                wells.push(well(b, p, base + 3, DMSO, 2));
            }
        }
        dataset(wells)
    }

    #[test]
    fn batch_invariants_hold() {
        let ds = two_batch_fixture();
        let all: Vec<usize> = (0..ds.wells.len()).collect();
        let s = BatchSampler::new(&ds, &all, 4, 8).unwrap();
        let mut rng = SeedTree::new(1).rng("x");
        for _ in 0..200 {
            let b = s.sample(&mut rng).unwrap();
            assert_eq!(b.t1.len(), 4);
            assert_eq!(b.controls.len(), 8);
            for (x, y) in b.t1.iter().zip(&b.t2) {
                assert_ne!(x, y);
                assert_eq!(ds.wells[x.0].perturbation, ds.wells[y.0].perturbation);
                assert_ne!(ds.wells[x.0].perturbation, "c");
            }
            let pert_batches: BTreeSet<usize> =
                b.t1.iter().chain(&b.t2).map(|&r| s.batch_of(r)).collect();
            let ctrl_batches: BTreeSet<usize> = b.controls.iter().map(|&r| s.batch_of(r)).collect();
            assert!(ctrl_batches.is_subset(&pert_batches));
            assert_eq!(ctrl_batches.len(), pert_batches.len().min(8));
            for r in &b.controls {
                assert!(ds.wells[r.0].is_control());
                assert!(!b.t1.contains(r) && !b.t2.contains(r));
            }
            for (j, &k) in b.cf_controls.iter().enumerate() {
                let anchor = b.fovs()[j];
                assert_eq!(s.batch_of(b.controls[k]), s.batch_of(anchor));
            }
            assert_eq!(b.labels.len(), 16);
            assert!(b.labels[8..].iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn controls_prefer_the_plate_of_perturbed_images() {
        let ds = two_batch_fixture();
        // Only plate p0 of batch b0 carries perturbed wells in this subset.
        let subset: Vec<usize> = vec![0, 1, 3, 6];
        let s = BatchSampler::new(&ds, &subset, 2, 2).unwrap();
        let mut rng = SeedTree::new(2).rng("x");
        for _ in 0..50 {
            let b = s.sample(&mut rng).unwrap();
            assert!(b.controls.iter().all(|r| r.0 == 3));
            assert_ne!(b.controls[0], b.controls[1]);
        }
    }

    #[test]
    fn falls_back_to_batch_then_errors() {
        let ds = dataset(vec![
            well("b0", "p0", 0, "a", 2),
            well("b0", "p1", 1, DMSO, 1),
            well("b1", "p0", 2, "b", 2),
        ]);
        let s = BatchSampler::new(&ds, &[0, 1], 1, 1).unwrap();
        let b = s.sample(&mut SeedTree::new(0).rng("x")).unwrap();
        assert_eq!(b.controls, vec![(1, 0)]);

        let s = BatchSampler::new(&ds, &[1, 2], 1, 1).unwrap();
        let err = s.sample(&mut SeedTree::new(0).rng("x")).unwrap_err();
        assert!(err.to_string().contains("s/b1"), "{err}");
    }

    #[test]
    fn singleton_perturbations_cannot_anchor() {
        let ds = dataset(vec![well("b0", "p0", 0, "a", 1), well("b0", "p0", 1, DMSO, 4)]);
        let s = BatchSampler::new(&ds, &[0, 1], 1, 1).unwrap();
        assert!(matches!(
            s.sample(&mut SeedTree::new(0).rng("x")),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = two_batch_fixture();
        let all: Vec<usize> = (0..ds.wells.len()).collect();
        let s = BatchSampler::new(&ds, &all, 3, 4).unwrap();
        let a = s.sample(&mut SeedTree::new(9).rng("x")).unwrap();
        let b = s.sample(&mut SeedTree::new(9).rng("x")).unwrap();
        assert_eq!(a, b);
    }
}
