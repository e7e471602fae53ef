//! From a trained model to retrieval reports: embed wells, post-process per
//! plate, match query wells against retrieval wells.

use serde::{Deserialize, Serialize};

use super::normalize::{aggregate_well, PlateNormalizer, WellEmbedding};
use super::retrieval::{retrieve_1nn, Constraint, RetrievalReport};
use crate::dataset::{nearest_controls, Dataset, SplitSpec, SplitTag};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mad: bool,
    /// Spherizing shrinkage; `None` skips spherizing.
    pub shrink: Option<f64>,
    pub constraints: Vec<Constraint>,
    pub n_permutations: usize,
}

impl EvalConfig {
    /// MAD without spherizing: the synthetic plates hold fewer controls than
    /// embedding dimensions, so their covariance is mostly shrinkage.
    pub fn synthetic() -> Self {
        Self { shrink: None, ..Self::default() }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mad: true,
            shrink: Some(0.1),
            constraints: Constraint::ALL.to_vec(),
            n_permutations: 1000,
        }
    }
}

fn fov_matrix(ds: &Dataset, well: usize) -> Result<Matrix> {
    Matrix::from_rows(&ds.wells[well].fovs)
}

/// Projected representations averaged per well.
pub fn embed_wells(params: &ModelParams, ds: &Dataset, wells: &[usize]) -> Result<Vec<WellEmbedding>> {
    wells
        .iter()
        .map(|&w| {
            let reps = params.encode_and_project(&fov_matrix(ds, w)?)?;
            let rows: Vec<Vec<f64>> = (0..reps.rows()).map(|i| reps.row(i).to_vec()).collect();
            let well = &ds.wells[w];
            aggregate_well(well.key.clone(), &well.perturbation, &rows)
        })
        .collect()
}

/// Counterfactual stand-ins for treated wells: each FOV of the well's
/// plate-map-nearest control is fused with the well's compound, and the
/// results are averaged. Control wells are skipped.
pub fn counterfactual_embeddings(
    params: &ModelParams,
    ds: &Dataset,
    wells: &[usize],
) -> Result<Vec<WellEmbedding>> {
    let nearest = nearest_controls(ds)?;
    let mut out = Vec::new();
    for &w in wells {
        let well = &ds.wells[w];
        let Some(ctrl) = nearest[w] else { continue };
        let compound = ds
            .compounds
            .get(&well.perturbation)
            .ok_or_else(|| Error::invalid(format!("no fingerprint for {}", well.perturbation)))?;
        let ctx = params.encode_and_project(&fov_matrix(ds, ctrl)?)?;
        let fp = compound.fingerprint.to_dense();
        let fps = Matrix::from_vec(1, fp.len(), fp)?;
        let emb = params.encode_compound(&fps)?;
        let emb = Matrix::from_rows(&vec![emb.row(0).to_vec(); ctx.rows()])?;
        let cf = params.fuse(&ctx, &emb)?;
        let rows: Vec<Vec<f64>> = (0..cf.rows()).map(|i| cf.row(i).to_vec()).collect();
        out.push(aggregate_well(well.key.clone(), &well.perturbation, &rows)?);
    }
    Ok(out)
}

/// Query and retrieval embeddings after per-plate post-processing, controls
/// removed.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSets {
    pub query: Vec<WellEmbedding>,
    pub retrieval: Vec<WellEmbedding>,
}

/// Raw input features averaged per well, for scoring features without a
/// model.
pub fn feature_embeddings(ds: &Dataset, wells: &[usize]) -> Result<Vec<WellEmbedding>> {
    wells
        .iter()
        .map(|&w| {
            let well = &ds.wells[w];
            aggregate_well(well.key.clone(), &well.perturbation, &well.fovs)
        })
        .collect()
}

/// What produces well embeddings for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Embedder<'a> {
    Model(&'a ModelParams),
    /// Ingested features; counterfactual queries are unavailable.
    Features,
}

impl Embedder<'_> {
    fn embed(&self, ds: &Dataset, wells: &[usize]) -> Result<Vec<WellEmbedding>> {
        match self {
            Embedder::Model(p) => embed_wells(p, ds, wells),
            Embedder::Features => feature_embeddings(ds, wells),
        }
    }
}

/// Post-process embeddings per plate using their own controls, then split
/// into the treated query and retrieval sets of `split`. With
/// `counterfactual`, query embeddings are replaced by fused
/// control-plus-compound predictions, normalised with the real controls of
/// their plate.
pub fn prepare_sets(
    embedder: Embedder<'_>,
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &EvalConfig,
    counterfactual: bool,
) -> Result<EvalSets> {
    let query_wells = split.get(SplitTag::Query);
    let retrieval_wells = split.get(SplitTag::Retrieval);
    if query_wells.is_empty() || retrieval_wells.is_empty() {
        return Err(Error::Insufficient("evaluation needs query and retrieval wells".into()));
    }
    let mut all: Vec<usize> = query_wells.iter().chain(retrieval_wells).copied().collect();
    all.sort_unstable();
    all.dedup();
    let mut embs = embedder.embed(ds, &all)?;
    let normalizer = PlateNormalizer::fit(&embs, cfg.mad, cfg.shrink)?;
    normalizer.apply_all(&mut embs)?;
    let pick = |wells: &[usize]| -> Vec<WellEmbedding> {
        wells
            .iter()
            .map(|w| all.binary_search(w).expect("collected above"))
            .map(|i| embs[i].clone())
            .filter(|e| !e.is_control())
            .collect()
    };
    let retrieval = pick(retrieval_wells);
    let query = match (counterfactual, embedder) {
        (false, _) => pick(query_wells),
        (true, Embedder::Model(params)) => {
            let mut cf = counterfactual_embeddings(params, ds, query_wells)?;
            normalizer.apply_all(&mut cf)?;
            cf
        }
        (true, Embedder::Features) => {
            return Err(Error::invalid("counterfactual queries need a trained model"));
        }
    };
    Ok(EvalSets { query, retrieval })
}

/// One report per configured constraint.
pub fn evaluate_retrieval(
    embedder: Embedder<'_>,
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &EvalConfig,
    counterfactual: bool,
) -> Result<Vec<RetrievalReport>> {
    let sets = prepare_sets(embedder, ds, split, cfg, counterfactual)?;
    cfg.constraints
        .iter()
        .map(|&c| retrieve_1nn(&sets.query, &sets.retrieval, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_id_by_batch, synth::gen_synthetic, SynthConfig};
    use crate::math::SeedTree;
    use crate::model::HyperParams;

    fn setup() -> (Dataset, SplitSpec, ModelParams) {
        let cfg = SynthConfig {
            n_sources: 2,
            wells_per_plate: 12,
            fovs_per_well: 2,
            n_compounds: 4,
            feature_dim: 16,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&cfg).unwrap();
        let split = split_id_by_batch(&ds, 0.34, 1, 0).unwrap();
        let hp = HyperParams {
            image_hidden: vec![16],
            proj_hidden: 16,
            compound_hidden: vec![16],
            fusion_hidden: 16,
            proj_dim: 8,
            ..HyperParams::synthetic()
        };
        let params = ModelParams::new(16, 2048, &hp, &SeedTree::new(0)).unwrap();
        (ds, split, params)
    }

    #[test]
    fn reports_cover_every_treated_query() {
        let (ds, split, params) = setup();
        let cfg = EvalConfig::default();
        let reports = evaluate_retrieval(Embedder::Model(&params), &ds, &split, &cfg, false).unwrap();
        assert_eq!(reports.len(), 3);
        let n_treated = split
            .get(SplitTag::Query)
            .iter()
            .filter(|&&w| !ds.wells[w].is_control())
            .count();
        for r in &reports {
            assert_eq!(r.n_queries, n_treated);
            assert_eq!(r.chance_level, 0.25);
            assert!(r.per_query.iter().all(|m| m.query_perturbation != crate::dataset::DMSO));
            assert!(r.per_query.iter().all(|m| m.matched_perturbation != crate::dataset::DMSO));
        }
        let cf = evaluate_retrieval(Embedder::Model(&params), &ds, &split, &cfg, true).unwrap();
        assert_eq!(cf[0].n_queries, n_treated);
    }

    #[test]
    fn feature_baseline_needs_no_model() {
        let (ds, split, _) = setup();
        let cfg = EvalConfig::default();
        let r = evaluate_retrieval(Embedder::Features, &ds, &split, &cfg, false).unwrap();
        assert_eq!(r.len(), 3);
        assert!(evaluate_retrieval(Embedder::Features, &ds, &split, &cfg, true).is_err());
        let e = feature_embeddings(&ds, &[0]).unwrap();
        assert_eq!(e[0].vector, ds.wells[0].mean());
    }

    #[test]
    fn embeddings_are_fov_means() {
        let (ds, _, params) = setup();
        let e = embed_wells(&params, &ds, &[3]).unwrap();
        let reps = params.encode_and_project(&Matrix::from_rows(&ds.wells[3].fovs).unwrap()).unwrap();
        for j in 0..reps.cols() {
            let m = (0..reps.rows()).map(|i| reps.get(i, j)).sum::<f64>() / reps.rows() as f64;
            assert!((e[0].vector[j] - m).abs() < 1e-12);
        }
    }
}
