//! Encoders, losses, batch sampling and training.

pub mod checkpoint;
pub mod loss;
pub mod net;
pub mod objective;
pub mod sampler;
pub mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use loss::{clip_loss, cf_paclr_loss, micon_total_loss, paclr_loss, simclr_loss};
pub use net::{fuse_counterfactual, ModelParams, Part, RepKind, Representation};
pub use objective::{evaluate, trained_parts, StepInputs};
pub use sampler::{BatchSampler, LabelIndex, TrainingBatch};
pub use train::{read_log, total_steps, train, write_log, LogRow, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Micon,
    PaclrOnly,
    Simclr,
    Clip,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Micon, Method::PaclrOnly, Method::Simclr, Method::Clip];

    pub fn name(self) -> &'static str {
        match self {
            Method::Micon => "micon",
            Method::PaclrOnly => "paclr_only",
            Method::Simclr => "simclr",
            Method::Clip => "clip",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method `{s}` (expected micon, paclr_only, simclr or clip)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub tau: f64,
    pub batch_size: usize,
    /// Share of each batch drawn from negative controls.
    pub control_fraction: f64,
    pub epochs: usize,
    /// Image encoder widths; the last entry is the embedding size.
    pub image_hidden: Vec<usize>,
    pub proj_hidden: usize,
    /// Compound encoder widths; the last entry is the embedding size.
    pub compound_hidden: Vec<usize>,
    pub fusion_hidden: usize,
    pub proj_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub checkpoint_every: usize,
    pub cf_weight: f64,
    pub plateau_factor: f64,
    pub patience: u32,
    /// Fixed validation batches scored at every checkpoint.
    pub val_batches: usize,
    pub seed: u64,
}

impl HyperParams {
    /// The published configuration.
    pub fn published() -> Self {
        Self {
            tau: 0.1,
            batch_size: 64,
            control_fraction: 0.5,
            epochs: 30,
            image_hidden: vec![1000],
            proj_hidden: 512,
            compound_hidden: vec![2048; 4],
            fusion_hidden: 512,
            proj_dim: 256,
            lr: 1e-3,
            weight_decay: 1e-2,
            warmup_steps: 2000,
            clip_norm: 1.0,
            checkpoint_every: 2000,
            cf_weight: 1.0,
            plateau_factor: 0.5,
            patience: 3,
            val_batches: 8,
            seed: 0,
        }
    }

    /// Desk-scale sizes for the synthetic benchmark.
    pub fn synthetic() -> Self {
        Self {
            image_hidden: vec![128, 128],
            proj_hidden: 128,
            compound_hidden: vec![128; 4],
            fusion_hidden: 128,
            tau: 0.2,
            control_fraction: 0.125,
            warmup_steps: 50,
            checkpoint_every: 18,
            val_batches: 4,
            ..Self::published()
        }
    }

    /// `(T, C)`: perturbed pairs and controls per batch, with `N = 2T + C`.
    pub fn batch_split(&self) -> (usize, usize) {
        let n = self.batch_size;
        let mut c = (self.control_fraction * n as f64).round() as usize;
        if (n - c.min(n)) % 2 == 1 {
            c += 1;
        }
        let c = c.min(n);
        ((n - c) / 2, c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.control_fraction > 0.0 && self.control_fraction < 1.0) {
            return bad("control_fraction must lie in (0, 1)".into());
        }
        let (t, c) = self.batch_split();
        if t == 0 || c == 0 {
            return bad(format!(
                "batch_size {} with control_fraction {} leaves T = {t}, C = {c}",
                self.batch_size, self.control_fraction
            ));
        }
        if self.image_hidden.is_empty() || self.compound_hidden.is_empty() {
            return bad("encoder widths must be non-empty".into());
        }
        let widths = self
            .image_hidden
            .iter()
            .chain(&self.compound_hidden)
            .chain([&self.proj_hidden, &self.fusion_hidden, &self.proj_dim]);
        if widths.into_iter().any(|&w| w == 0) {
            return bad("layer widths must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("weight_decay must be >= 0 and clip_norm > 0".into());
        }
        if !(self.cf_weight >= 0.0 && self.cf_weight.is_finite()) {
            return bad(format!("cf_weight must be >= 0, got {}", self.cf_weight));
        }
        if self.checkpoint_every == 0 || self.epochs == 0 || self.val_batches == 0 {
            return bad("epochs, checkpoint_every and val_batches must be >= 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Key-value rendering stored in checkpoint headers.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let dims = |v: &[usize]| {
            v.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("tau".into(), format!("{:?}", self.tau)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("control_fraction".into(), format!("{:?}", self.control_fraction)),
            ("epochs".into(), self.epochs.to_string()),
            ("image_hidden".into(), dims(&self.image_hidden)),
            ("proj_hidden".into(), self.proj_hidden.to_string()),
            ("compound_hidden".into(), dims(&self.compound_hidden)),
            ("fusion_hidden".into(), self.fusion_hidden.to_string()),
            ("proj_dim".into(), self.proj_dim.to_string()),
            ("lr".into(), format!("{:?}", self.lr)),
            ("weight_decay".into(), format!("{:?}", self.weight_decay)),
            ("warmup_steps".into(), self.warmup_steps.to_string()),
            ("clip_norm".into(), format!("{:?}", self.clip_norm)),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("cf_weight".into(), format!("{:?}", self.cf_weight)),
            ("plateau_factor".into(), format!("{:?}", self.plateau_factor)),
            ("patience".into(), self.patience.to_string()),
            ("val_batches".into(), self.val_batches.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Inverse of [`HyperParams::to_kv`].
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv
                .get(key)
                .ok_or_else(|| Error::invalid(format!("missing hyperparameter `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::invalid(format!("hyperparameter `{key}`: cannot parse `{raw}`")))
        }
        let dims = |key: &str| -> Result<Vec<usize>> {
            let raw: String = get(kv, key)?;
            raw.split(',')
                .map(|d| {
                    d.parse()
                        .map_err(|_| Error::invalid(format!("hyperparameter `{key}`: bad width `{d}`")))
                })
                .collect()
        };
        Ok(Self {
            tau: get(kv, "tau")?,
            batch_size: get(kv, "batch_size")?,
            control_fraction: get(kv, "control_fraction")?,
            epochs: get(kv, "epochs")?,
            image_hidden: dims("image_hidden")?,
            proj_hidden: get(kv, "proj_hidden")?,
            compound_hidden: dims("compound_hidden")?,
            fusion_hidden: get(kv, "fusion_hidden")?,
            proj_dim: get(kv, "proj_dim")?,
            lr: get(kv, "lr")?,
            weight_decay: get(kv, "weight_decay")?,
            warmup_steps: get(kv, "warmup_steps")?,
            clip_norm: get(kv, "clip_norm")?,
            checkpoint_every: get(kv, "checkpoint_every")?,
            cf_weight: get(kv, "cf_weight")?,
            plateau_factor: get(kv, "plateau_factor")?,
            patience: get(kv, "patience")?,
            val_batches: get(kv, "val_batches")?,
            seed: get(kv, "seed")?,
        })
    }
}

/// The objective a method actually trains. The PaCLR-only ablation is the
/// full objective with the counterfactual term switched off.
pub fn resolve_method(method: Method, hp: &HyperParams) -> (Method, HyperParams) {
    match method {
        Method::PaclrOnly => (
            Method::Micon,
            HyperParams {
                cf_weight: 0.0,
                ..hp.clone()
            },
        ),
        m => (m, hp.clone()),
    }
}
