//! Synthetic screens with known compound effects and layered batch effects.
//!
//! A compound's latent effect mixes a fixed random map of its fingerprint with
//! a compound-specific random draw. Each (source, batch) scales the treatment
//! in latent space, shifts the rendered phenotype, and distorts the imaging
//! with a per-feature gain and offset. Source-level draws are shared by the
//! batches of a source so that cross-source variation dominates.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, WellKey, WellRecord, DMSO};
use crate::chem::{self, CompoundTable, DEFAULT_BITS};
use crate::error::{Error, Result};
use crate::math::{Rng, SeedTree};

const SMILES_POOL: &str = include_str!("../../data/smiles_pool.txt");

/// Share of a batch effect drawn per batch rather than per source.
const WITHIN_SOURCE: f64 = 0.5;

pub fn smiles_pool() -> Vec<&'static str> {
    SMILES_POOL.lines().filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEffectStrength {
    pub treatment: f64,
    pub phenotype: f64,
    pub imaging: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sources: usize,
    pub batches_per_source: usize,
    pub plates_per_batch: usize,
    pub wells_per_plate: usize,
    pub fovs_per_well: usize,
    pub n_compounds: usize,
    pub control_fraction: f64,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub effect_strength: f64,
    pub batch_effect_strength: BatchEffectStrength,
    pub noise_sd: f64,
    pub structure_signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sources: 6,
            batches_per_source: 3,
            plates_per_batch: 1,
            wells_per_plate: 48,
            fovs_per_well: 4,
            n_compounds: 8,
            control_fraction: 0.25,
            latent_dim: 16,
            feature_dim: 64,
            effect_strength: 0.6,
            batch_effect_strength: BatchEffectStrength {
                treatment: 0.8,
                phenotype: 1.0,
                imaging: 0.1,
            },
            noise_sd: 0.5,
            structure_signal: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_sources", self.n_sources),
            ("batches_per_source", self.batches_per_source),
            ("plates_per_batch", self.plates_per_batch),
            ("wells_per_plate", self.wells_per_plate),
            ("fovs_per_well", self.fovs_per_well),
            ("n_compounds", self.n_compounds),
            ("latent_dim", self.latent_dim),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if !(self.control_fraction > 0.0 && self.control_fraction < 1.0) {
            return Err(Error::invalid("control_fraction must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.structure_signal) {
            return Err(Error::invalid("structure_signal must lie in [0, 1]"));
        }
        let b = &self.batch_effect_strength;
        for (name, v) in [
            ("effect_strength", self.effect_strength),
            ("noise_sd", self.noise_sd),
            ("batch_effect_strength.treatment", b.treatment),
            ("batch_effect_strength.phenotype", b.phenotype),
            ("batch_effect_strength.imaging", b.imaging),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.n_compounds > smiles_pool().len() {
            return Err(Error::invalid(format!(
                "n_compounds {} exceeds the {}-entry SMILES pool",
                self.n_compounds,
                smiles_pool().len()
            )));
        }
        let (_, treated) = self.plate_layout();
        if treated == 0 {
            return Err(Error::invalid("plates have no room for compound wells"));
        }
        Ok(())
    }

    /// `(control wells, compound wells)` per plate.
    pub fn plate_layout(&self) -> (usize, usize) {
        let w = self.wells_per_plate;
        let c = ((self.control_fraction * w as f64).round() as usize).clamp(1, w);
        (c, w - c)
    }

    pub fn n_wells(&self) -> usize {
        self.n_sources * self.batches_per_source * self.plates_per_batch * self.wells_per_plate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEffect {
    pub source: String,
    pub batch: String,
    /// Elementwise multiplier on the latent compound effect.
    pub treatment_scale: Vec<f64>,
    pub phenotype_shift: Vec<f64>,
    pub imaging_gain: Vec<f64>,
    pub imaging_offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// Latent effect per compound id.
    pub compound_effects: Vec<(String, Vec<f64>)>,
    /// Latent-to-feature rendering map, `feature_dim × latent_dim` row-major.
    pub render: Vec<f64>,
    pub phenotype_base: Vec<f64>,
    pub batch_effects: Vec<BatchEffect>,
}

fn normal_vec(rng: &mut Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * draw(rng)).collect()
}

fn draw(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let tree = SeedTree::new(cfg.seed);
    let (l, d) = (cfg.latent_dim, cfg.feature_dim);

    let mut rng = tree.rng("compounds");
    let mut pool = smiles_pool();
    pool.shuffle(&mut rng);
    let mut table = CompoundTable::new();
    let width = cfg.n_compounds.to_string().len().max(2);
    let ids: Vec<String> = (0..cfg.n_compounds)
        .map(|k| format!("cmpd_{k:0width$}"))
        .collect();
    for (id, smi) in ids.iter().zip(&pool) {
        table.insert(id.clone(), smi.to_string());
    }

    // fingerprint map: one row per latent dim over all bits
    let mut rng = tree.rng("structure_map");
    let structure_map = normal_vec(&mut rng, l * DEFAULT_BITS, 1.0);
    let mut rng = tree.rng("compound_effects");
    let s = cfg.structure_signal;
    let mut effects = Vec::with_capacity(ids.len());
    for id in &ids {
        let fp = chem::fingerprint_smiles(&table[id])?;
        let bits = fp.indices();
        let norm = (bits.len().max(1) as f64).sqrt();
        let own = normal_vec(&mut rng, l, 1.0);
        let e: Vec<f64> = (0..l)
            .map(|r| {
                let structural: f64 =
                    bits.iter().map(|&b| structure_map[r * DEFAULT_BITS + b]).sum::<f64>() / norm;
                s * structural + (1.0 - s) * own[r]
            })
            .collect();
        effects.push((id.clone(), e));
    }

    let mut rng = tree.rng("render");
    let render = normal_vec(&mut rng, d * l, 1.0 / (l as f64).sqrt());
    let phenotype_base = normal_vec(&mut rng, d, 1.0);

    let strength = cfg.batch_effect_strength;
    let mut rng = tree.rng("batch_effects");
    let mut batch_effects = Vec::new();
    for si in 0..cfg.n_sources {
        let source = format!("source_{si}");
        let src_scale = normal_vec(&mut rng, l, 1.0);
        let src_shift = normal_vec(&mut rng, d, 1.0);
        let src_gain = normal_vec(&mut rng, d, 1.0);
        let src_offset = normal_vec(&mut rng, d, 1.0);
        for bi in 0..cfg.batches_per_source {
            let mix = |shared: &[f64], rng: &mut Rng, sd: f64| -> Vec<f64> {
                shared
                    .iter()
                    .map(|v| sd * (v + WITHIN_SOURCE * draw(rng)))
                    .collect()
            };
            let scale = mix(&src_scale, &mut rng, strength.treatment);
            let shift = mix(&src_shift, &mut rng, strength.phenotype);
            let gain = mix(&src_gain, &mut rng, strength.imaging);
            let offset = mix(&src_offset, &mut rng, strength.imaging);
            batch_effects.push(BatchEffect {
                source: source.clone(),
                batch: format!("batch_{si}_{bi}"),
                treatment_scale: scale.iter().map(|v| 1.0 + v).collect(),
                phenotype_shift: shift,
                imaging_gain: gain.iter().map(|v| 1.0 + v).collect(),
                imaging_offset: offset,
            });
        }
    }

    let cols = (cfg.wells_per_plate as f64).sqrt().ceil() as usize;
    let (n_ctrl, _) = cfg.plate_layout();
    let mut layout_rng = tree.rng("plate_layout");
    let mut noise_rng = tree.rng("noise");
    let mut wells = Vec::with_capacity(cfg.n_wells());
    let mut next_compound = 0usize;
    for be in &batch_effects {
        for pi in 0..cfg.plates_per_batch {
            let mut slots: Vec<usize> = (0..cfg.wells_per_plate).collect();
            slots.shuffle(&mut layout_rng);
            let mut controls = slots[..n_ctrl].to_vec();
            controls.sort_unstable();
            for pos in 0..cfg.wells_per_plate {
                let perturbation = if controls.binary_search(&pos).is_ok() {
                    None
                } else {
                    let k = next_compound % cfg.n_compounds;
                    next_compound += 1;
                    Some(k)
                };
                // phenotype before imaging, shared by the well's FOVs
                let mut phenotype: Vec<f64> = phenotype_base
                    .iter()
                    .zip(&be.phenotype_shift)
                    .map(|(a, b)| a + b)
                    .collect();
                if let Some(k) = perturbation {
                    let scaled: Vec<f64> = effects[k]
                        .1
                        .iter()
                        .zip(&be.treatment_scale)
                        .map(|(e, t)| e * t)
                        .collect();
                    for (r, p) in phenotype.iter_mut().enumerate() {
                        let row = &render[r * l..(r + 1) * l];
                        let rendered: f64 = row.iter().zip(&scaled).map(|(a, b)| a * b).sum();
                        *p += cfg.effect_strength * rendered;
                    }
                }
                let fovs = (0..cfg.fovs_per_well)
                    .map(|_| {
                        phenotype
                            .iter()
                            .enumerate()
                            .map(|(j, p)| {
                                be.imaging_gain[j] * p
                                    + be.imaging_offset[j]
                                    + cfg.noise_sd * draw(&mut noise_rng)
                            })
                            .collect()
                    })
                    .collect();
                wells.push(WellRecord {
                    key: WellKey {
                        source: be.source.clone(),
                        batch: be.batch.clone(),
                        plate: format!("plate_{pi}"),
                        row: (pos / cols) as u32,
                        col: (pos % cols) as u32,
                    },
                    perturbation: perturbation.map_or_else(|| DMSO.to_string(), |k| ids[k].clone()),
                    fovs,
                });
            }
        }
        // rotate the compound order so plates differ in layout
        next_compound += layout_rng.gen_range(0..cfg.n_compounds);
    }

    let mut ds = Dataset::new(wells, &table)?;
    ds.ground_truth = Some(GroundTruth {
        config: cfg.clone(),
        compound_effects: effects,
        render,
        phenotype_base,
        batch_effects,
    });
    Ok(ds)
}
