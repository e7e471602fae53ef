use std::str::FromStr;

use micon_core::chem::{fingerprint_smiles, tanimoto};
use micon_core::dataset::{gen_synthetic, split_id_by_batch, BatchEffectStrength, SynthConfig};
use micon_core::eval::{evaluate_retrieval, Embedder, EvalConfig};
use micon_core::math::Matrix;
use micon_core::model::paclr_loss;
use micon_core::Result;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoleculePair {
    pub bits_a: Vec<usize>,
    pub bits_b: Vec<usize>,
    pub shared: usize,
    pub tanimoto: f64,
}

pub fn compare_molecules(a: &str, b: &str) -> Result<MoleculePair> {
    let fa = fingerprint_smiles(a)?;
    let fb = fingerprint_smiles(b)?;
    let (bits_a, bits_b) = (fa.indices(), fb.indices());
    let shared = bits_a.iter().filter(|i| fb.get(**i)).count();
    Ok(MoleculePair {
        tanimoto: tanimoto(&fa, &fb)?,
        bits_a,
        bits_b,
        shared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointLoss {
    pub loss: f64,
    /// `[dx0, dy0, dx1, dy1, ...]`
    pub grad: Vec<f64>,
}

pub fn paclr_points(xy: &[f64], labels: &[u32], tau: f64) -> Result<PointLoss> {
    let reps = Matrix::from_vec(xy.len() / 2, 2, xy.to_vec())?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let r = paclr_loss(&reps, &labels, tau)?;
    Ok(PointLoss {
        loss: r.loss,
        grad: r.grad.into_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Post {
    None,
    Mad,
    Sphere,
}

impl FromStr for Post {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Post::None),
            "mad" => Ok(Post::Mad),
            "sphere" => Ok(Post::Sphere),
            _ => Err(format!("unknown post-processing {s:?}; use none, mad or sphere")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintScore {
    pub constraint: String,
    pub accuracy: f64,
    pub chance: f64,
    pub queries: usize,
}

/// 4 sources x 3 batches x 1 plate x 48 wells, 6 compounds, 24 features.
pub fn toy_config(seed: u64, batch_strength: f64, noise_sd: f64) -> SynthConfig {
    SynthConfig {
        n_sources: 4,
        batches_per_source: 3,
        plates_per_batch: 1,
        wells_per_plate: 48,
        fovs_per_well: 3,
        n_compounds: 6,
        latent_dim: 8,
        feature_dim: 24,
        noise_sd,
        batch_effect_strength: BatchEffectStrength {
            treatment: 0.5 * batch_strength,
            phenotype: batch_strength,
            imaging: 0.3 * batch_strength,
        },
        seed,
        ..SynthConfig::default()
    }
}

pub fn toy_retrieval(seed: u64, batch_strength: f64, noise_sd: f64, post: Post) -> Result<Vec<ConstraintScore>> {
    let ds = gen_synthetic(&toy_config(seed, batch_strength, noise_sd))?;
    let split = split_id_by_batch(&ds, 0.34, 1, seed)?;
    let cfg = EvalConfig {
        mad: post != Post::None,
        shrink: (post == Post::Sphere).then_some(0.1),
        ..EvalConfig::default()
    };
    let reports = evaluate_retrieval(Embedder::Features, &ds, &split, &cfg, false)?;
    Ok(reports
        .into_iter()
        .map(|r| ConstraintScore {
            constraint: r.constraint.to_string(),
            accuracy: r.accuracy,
            chance: r.chance_level,
            queries: r.n_queries,
        })
        .collect())
}
