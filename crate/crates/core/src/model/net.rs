//! The five networks and their forward compositions.
//!
//! * image encoder: FOV features to an embedding
//! * projection: embedding to the contrastive space, `t = g(h(x))`
//! * compound encoder: fingerprint bits to a compound embedding
//! * fusion: `[projected control, compound embedding]` to a counterfactual
//! * CLIP head: compound embedding to the contrastive space

use serde::{Deserialize, Serialize};

use super::HyperParams;
use crate::dataset::{FovRef, DMSO};
use crate::error::{Error, Result};
use crate::math::{LayerSpec, Matrix, Mlp, SeedTree};
use crate::math::mlp::LEAKY_SLOPE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Image,
    Projection,
    Compound,
    Fusion,
    ClipHead,
}

impl Part {
    pub const ALL: [Part; 5] = [
        Part::Image,
        Part::Projection,
        Part::Compound,
        Part::Fusion,
        Part::ClipHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Part::Image => "image",
            Part::Projection => "projection",
            Part::Compound => "compound",
            Part::Fusion => "fusion",
            Part::ClipHead => "clip_head",
        }
    }

    pub fn from_name(s: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub image: Mlp,
    pub projection: Mlp,
    pub compound: Mlp,
    pub fusion: Mlp,
    pub clip_head: Mlp,
}

/// Layer plans for every part, in [`Part::ALL`] order.
pub fn layer_plans(feature_dim: usize, fp_bits: usize, hp: &HyperParams) -> Vec<Vec<LayerSpec>> {
    let mut image = Vec::new();
    let mut prev = feature_dim;
    for (i, &h) in hp.image_hidden.iter().enumerate() {
        if i > 0 {
            image.push(LayerSpec::leaky_relu(prev, LEAKY_SLOPE));
        }
        image.push(LayerSpec::affine(prev, h));
        prev = h;
    }
    let embed = prev;
    let projection = vec![
        LayerSpec::affine(embed, hp.proj_hidden),
        LayerSpec::leaky_relu(hp.proj_hidden, LEAKY_SLOPE),
        LayerSpec::affine(hp.proj_hidden, hp.proj_dim),
    ];
    let mut compound = Vec::new();
    let mut prev = fp_bits;
    for &h in &hp.compound_hidden {
        compound.push(LayerSpec::affine(prev, h));
        compound.push(LayerSpec::batch_norm(h));
        compound.push(LayerSpec::relu(h));
        prev = h;
    }
    let comp_out = prev;
    let fusion = vec![
        LayerSpec::affine(hp.proj_dim + comp_out, hp.fusion_hidden),
        LayerSpec::leaky_relu(hp.fusion_hidden, LEAKY_SLOPE),
        LayerSpec::affine(hp.fusion_hidden, hp.proj_dim),
    ];
    let clip_head = vec![LayerSpec::affine(comp_out, hp.proj_dim)];
    vec![image, projection, compound, fusion, clip_head]
}

impl ModelParams {
    /// Fresh parameters. Every part draws from its own stream under `init`,
    /// so the initial weights do not depend on the training method.
    pub fn new(feature_dim: usize, fp_bits: usize, hp: &HyperParams, seeds: &SeedTree) -> Result<Self> {
        if feature_dim == 0 || fp_bits == 0 {
            return Err(Error::invalid("feature and fingerprint widths must be >= 1"));
        }
        let init = seeds.child("init");
        let plans = layer_plans(feature_dim, fp_bits, hp);
        let mut nets = Part::ALL
            .iter()
            .zip(&plans)
            .map(|(p, specs)| Mlp::new(specs, &mut init.rng(p.name())))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || nets.next().expect("five plans");
        Self::from_parts(next(), next(), next(), next(), next())
    }

    /// Assemble from existing networks, checking that the dimensions chain.
    pub fn from_parts(image: Mlp, projection: Mlp, compound: Mlp, fusion: Mlp, clip_head: Mlp) -> Result<Self> {
        let link = |what: &str, want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(Error::Dim(format!("{what}: expected {want}, got {got}")))
            }
        };
        link("projection input", image.out_dim(), projection.in_dim())?;
        link(
            "fusion input",
            projection.out_dim() + compound.out_dim(),
            fusion.in_dim(),
        )?;
        link("fusion output", projection.out_dim(), fusion.out_dim())?;
        link("CLIP head input", compound.out_dim(), clip_head.in_dim())?;
        link("CLIP head output", projection.out_dim(), clip_head.out_dim())?;
        Ok(Self {
            image,
            projection,
            compound,
            fusion,
            clip_head,
        })
    }

    pub fn net(&self, part: Part) -> &Mlp {
        match part {
            Part::Image => &self.image,
            Part::Projection => &self.projection,
            Part::Compound => &self.compound,
            Part::Fusion => &self.fusion,
            Part::ClipHead => &self.clip_head,
        }
    }

    pub fn net_mut(&mut self, part: Part) -> &mut Mlp {
        match part {
            Part::Image => &mut self.image,
            Part::Projection => &mut self.projection,
            Part::Compound => &mut self.compound,
            Part::Fusion => &mut self.fusion,
            Part::ClipHead => &mut self.clip_head,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.image.in_dim()
    }

    pub fn fp_bits(&self) -> usize {
        self.compound.in_dim()
    }

    pub fn proj_dim(&self) -> usize {
        self.projection.out_dim()
    }

    pub fn compound_dim(&self) -> usize {
        self.compound.out_dim()
    }

    pub fn is_finite(&self) -> bool {
        Part::ALL
            .iter()
            .all(|&p| self.net(p).params().iter().all(|t| t.iter().all(|v| v.is_finite())))
    }

    /// `g(h_img(x))` for each row, in inference mode. Not normalised.
    pub fn encode_and_project(&self, fovs: &Matrix) -> Result<Matrix> {
        self.projection.infer(&self.image.infer(fovs)?)
    }

    /// Compound embeddings for dense fingerprint rows.
    pub fn encode_compound(&self, fingerprints: &Matrix) -> Result<Matrix> {
        self.compound.infer(fingerprints)
    }

    /// Counterfactuals from projected control representations and compound
    /// embeddings, paired by row.
    pub fn fuse(&self, controls: &Matrix, embeddings: &Matrix) -> Result<Matrix> {
        if controls.rows() != embeddings.rows() {
            return Err(Error::Dim(format!(
                "{} controls paired with {} compound embeddings",
                controls.rows(),
                embeddings.rows()
            )));
        }
        self.fusion.infer(&controls.hconcat(embeddings)?)
    }

    /// Compound embeddings mapped into the contrastive space by the CLIP head.
    pub fn project_compound(&self, fingerprints: &Matrix) -> Result<Matrix> {
        self.clip_head.infer(&self.encode_compound(fingerprints)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    Real,
    Counterfactual,
}

/// One vector in the contrastive space and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub vector: Vec<f64>,
    pub owner: FovRef,
    pub kind: RepKind,
    pub perturbation: String,
}

/// Counterfactual for `compound` in the context of a control image.
pub fn fuse_counterfactual(
    params: &ModelParams,
    control: &Representation,
    compound: &str,
    embedding: &[f64],
) -> Result<Representation> {
    if control.kind != RepKind::Real || control.perturbation != DMSO {
        return Err(Error::invalid(format!(
            "fusion context must be a real {DMSO} representation, got {:?} {}",
            control.kind, control.perturbation
        )));
    }
    let c = Matrix::from_vec(1, control.vector.len(), control.vector.clone())?;
    let e = Matrix::from_vec(1, embedding.len(), embedding.to_vec())?;
    let out = params.fuse(&c, &e)?;
    Ok(Representation {
        vector: out.into_vec(),
        owner: control.owner,
        kind: RepKind::Counterfactual,
        perturbation: compound.to_string(),
    })
}
