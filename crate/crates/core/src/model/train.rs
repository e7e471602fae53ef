//! The optimisation loop with validation-based checkpoint selection.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::Rng as _;

use super::net::{ModelParams, Part};
use super::objective::{evaluate, trained_parts, StepInputs};
use super::sampler::{BatchSampler, TrainingBatch};
use super::{resolve_method, HyperParams, Method};
use crate::dataset::{Dataset, FovRef, SplitSpec, SplitTag};
use crate::error::{Error, Result};
use crate::math::{adamw_step, clip_gradients, Matrix, Mode, OptimizerState, Rng, SchedulerState, SeedTree};

const JITTER: f64 = 0.05;
const DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation checkpoint.
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub method: Method,
    /// Effective settings; the ablation carries a zero counterfactual weight.
    pub hp: HyperParams,
}

/// Everything the loop needs to turn sampled FOV references into inputs.
struct Materializer<'a> {
    ds: &'a Dataset,
    /// Dense fingerprints by label id; the control row stays empty.
    fingerprints: Vec<Vec<f64>>,
    feature_sd: Vec<f64>,
}

impl<'a> Materializer<'a> {
    fn new(ds: &'a Dataset, sampler: &BatchSampler, train_fovs: &[FovRef]) -> Self {
        let labels = sampler.labels();
        let fingerprints = (0..labels.len())
            .map(|id| {
                ds.compounds
                    .get(labels.name(id))
                    .map(|c| c.fingerprint.to_dense())
                    .unwrap_or_default()
            })
            .collect();
        let d = ds.feature_dim;
        let n = train_fovs.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in train_fovs {
            mean.iter_mut().zip(ds.fov(r)).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for &r in train_fovs {
            for ((s, v), m) in var.iter_mut().zip(ds.fov(r)).zip(&mean) {
                *s += (v - m) * (v - m) / (n - 1.0).max(1.0);
            }
        }
        Self {
            ds,
            fingerprints,
            feature_sd: var.into_iter().map(f64::sqrt).collect(),
        }
    }

    fn features(&self, refs: &[FovRef]) -> Matrix {
        let d = self.ds.feature_dim;
        let mut data = Vec::with_capacity(refs.len() * d);
        for &r in refs {
            data.extend_from_slice(self.ds.fov(r));
        }
        Matrix::from_vec(refs.len(), d, data).expect("sized")
    }

    fn fingerprint_rows(&self, labels: &[usize]) -> Matrix {
        let bits = self.fingerprints.iter().map(Vec::len).max().unwrap_or(0);
        let mut data = Vec::with_capacity(labels.len() * bits);
        for &l in labels {
            data.extend_from_slice(&self.fingerprints[l]);
        }
        Matrix::from_vec(labels.len(), bits, data).expect("sized")
    }

    fn micon(&self, batch: &TrainingBatch) -> StepInputs {
        let np = batch.n_perturbed();
        StepInputs::Micon {
            features: self.features(&batch.fovs()),
            labels: batch.labels.clone(),
            n_perturbed: np,
            cf_controls: batch.cf_controls.clone(),
            fingerprints: self.fingerprint_rows(&batch.labels[..np]),
        }
    }

    /// Two independently augmented views per instance.
    fn simclr(&self, refs: &[FovRef], rng: &mut Rng) -> StepInputs {
        let d = self.ds.feature_dim;
        let mut data = Vec::with_capacity(2 * refs.len() * d);
        for &r in refs {
            for _ in 0..2 {
                for (v, sd) in self.ds.fov(r).iter().zip(&self.feature_sd) {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    let keep = rng.gen::<f64>() >= DROPOUT;
                    data.push(if keep { v + JITTER * sd * z } else { 0.0 });
                }
            }
        }
        StepInputs::Simclr {
            features: Matrix::from_vec(2 * refs.len(), d, data).expect("sized"),
        }
    }

    fn clip(&self, refs: &[FovRef], sampler: &BatchSampler) -> StepInputs {
        let labels: Vec<usize> = refs.iter().map(|&r| sampler.label_of(r)).collect();
        StepInputs::Clip {
            features: self.features(refs),
            fingerprints: self.fingerprint_rows(&labels),
        }
    }

    fn draw(
        &self,
        method: Method,
        hp: &HyperParams,
        sampler: &BatchSampler,
        rng: &mut Rng,
    ) -> Result<StepInputs> {
        let n = hp.batch_size;
        match method {
            Method::Micon | Method::PaclrOnly => Ok(self.micon(&sampler.sample(rng)?)),
            Method::Simclr => {
                let refs = sampler.sample_instances(n / 2, rng)?;
                Ok(self.simclr(&refs, rng))
            }
            Method::Clip => {
                let refs = sampler.sample_perturbed(n, rng)?;
                Ok(self.clip(&refs, sampler))
            }
        }
    }
}

fn fovs_of(ds: &Dataset, wells: &[usize]) -> Vec<FovRef> {
    wells
        .iter()
        .flat_map(|&w| (0..ds.wells[w].fovs.len()).map(move |f| (w, f)))
        .collect()
}

/// Numerical blow-ups inside the objective surface as divergence at `step`.
fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(_) | Error::ZeroVector => Error::Diverged {
            step,
            loss: f64::NAN,
        },
        e => e,
    }
}

fn mean_loss(
    params: &mut ModelParams,
    batches: &[StepInputs],
    method: Method,
    hp: &HyperParams,
) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        total += evaluate(params, b, method, hp.tau, hp.cf_weight, Mode::Infer)?.loss;
    }
    Ok(total / batches.len() as f64)
}

/// Parameter tensors of `parts`, in [`Part::ALL`] order.
fn params_of<'m>(params: &'m mut ModelParams, parts: &[Part]) -> Vec<&'m mut [f64]> {
    let ModelParams {
        image,
        projection,
        compound,
        fusion,
        clip_head,
    } = params;
    let nets = [
        (Part::Image, image),
        (Part::Projection, projection),
        (Part::Compound, compound),
        (Part::Fusion, fusion),
        (Part::ClipHead, clip_head),
    ];
    let mut out = Vec::new();
    for (part, net) in nets {
        if parts.contains(&part) {
            out.extend(net.params_mut());
        }
    }
    out
}

/// Optimisation steps for a training split of `n_fovs` images.
pub fn total_steps(hp: &HyperParams, n_fovs: usize) -> usize {
    hp.epochs * n_fovs.div_ceil(hp.batch_size).max(1)
}

/// Train `method` on the train wells of `split`, selecting the checkpoint
/// with the lowest validation loss.
pub fn train(ds: &Dataset, split: &SplitSpec, hp: &HyperParams, method: Method) -> Result<TrainOutcome> {
    let requested = method;
    let (method, hp) = resolve_method(method, hp);
    hp.validate()?;
    let (t, c) = hp.batch_split();
    let train_wells = split.get(SplitTag::Train);
    let val_wells = split.get(SplitTag::Val);
    if train_wells.is_empty() || val_wells.is_empty() {
        return Err(Error::Insufficient("training needs non-empty train and val splits".into()));
    }
    let train_sampler = BatchSampler::new(ds, train_wells, t, c)?;
    let val_sampler = BatchSampler::new(ds, val_wells, t, c)?;
    let train_fovs = fovs_of(ds, train_wells);
    let mat = Materializer::new(ds, &train_sampler, &train_fovs);
    let fp_bits = ds
        .compounds
        .values()
        .map(|c| c.fingerprint.n_bits())
        .next()
        .ok_or_else(|| Error::Insufficient("dataset has no compounds".into()))?;

    let seeds = SeedTree::new(hp.seed);
    let mut params = ModelParams::new(ds.feature_dim, fp_bits, &hp, &seeds)?;
    let mut val_rng = seeds.rng("val");
    let val_batches = (0..hp.val_batches)
        .map(|_| mat.draw(method, &hp, &val_sampler, &mut val_rng))
        .collect::<Result<Vec<_>>>()?;
    let mut batch_rng = seeds.rng("batches");

    let parts = trained_parts(method, hp.cf_weight);
    let shapes: Vec<usize> = parts
        .iter()
        .flat_map(|&p| params.net(p).params().into_iter().map(<[f64]>::len).collect::<Vec<_>>())
        .collect();
    let mut opt = OptimizerState::new(&shapes, hp.lr, hp.weight_decay)?;
    let mut sched = SchedulerState::new(hp.lr, hp.warmup_steps as u64, hp.plateau_factor, hp.patience)?;

    let total = total_steps(&hp, train_fovs.len());
    let initial_val_loss = mean_loss(&mut params, &val_batches, method, &hp)?;
    let mut log = vec![LogRow {
        step: 0,
        lr: sched.current_lr(0),
        train_loss: None,
        val_loss: Some(initial_val_loss),
    }];
    info!("{method}: {total} steps, initial val loss {initial_val_loss:.4}");
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for step in 1..=total {
        let lr = sched.step(step as u64, None);
        opt.lr = lr;
        let inputs = mat.draw(method, &hp, &train_sampler, &mut batch_rng)?;
        let out = evaluate(&mut params, &inputs, method, hp.tau, hp.cf_weight, Mode::Train)
            .map_err(|e| diverged(e, step))?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: out.loss,
            });
        }
        let mut by_part = out.grads.expect("train mode");
        by_part.sort_by_key(|(p, _)| *p);
        let mut grads: Vec<Vec<f64>> = by_part.into_iter().flat_map(|(_, g)| g).collect();
        clip_gradients(&mut grads, hp.clip_norm)?;
        adamw_step(&mut params_of(&mut params, &parts), &grads, &mut opt).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                step,
                loss: out.loss,
            },
            e => e,
        })?;
        let mut row = LogRow {
            step,
            lr,
            train_loss: Some(out.loss),
            val_loss: None,
        };
        if step % hp.checkpoint_every == 0 || step == total {
            let val = mean_loss(&mut params, &val_batches, method, &hp).map_err(|e| diverged(e, step))?;
            if !val.is_finite() {
                return Err(Error::Diverged { step, loss: val });
            }
            sched.step(step as u64, Some(val));
            row.val_loss = Some(val);
            debug!("{method} step {step}: train {:.4} val {val:.4} lr {lr:.2e}", out.loss);
            if best.as_ref().map_or(true, |(_, b, _)| val < *b) {
                best = Some((step, val, params.clone()));
            }
        }
        log.push(row);
    }
    let (best_step, best_val_loss, params) = best.expect("the final step is always a checkpoint");
    info!("{method}: best val loss {best_val_loss:.4} at step {best_step}");
    Ok(TrainOutcome {
        params,
        log,
        best_step,
        best_val_loss,
        initial_val_loss,
        method: requested,
        hp,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from("step\tlr\ttrain_loss\tval_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            r.step,
            r.lr,
            fmt_opt(r.train_loss),
            fmt_opt(r.val_loss)
        );
    }
    s
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    std::fs::write(path, format_log(rows))?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path)?;
    let err = |row: usize, msg: &str| Error::Table {
        path: path.display().to_string(),
        row,
        msg: msg.to_string(),
    };
    let opt = |s: &str, row: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| err(row, "bad number"))
        }
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(i + 1, "expected 4 tab-separated fields"));
        }
        out.push(LogRow {
            step: f[0].parse().map_err(|_| err(i + 1, "bad step"))?,
            lr: f[1].parse().map_err(|_| err(i + 1, "bad lr"))?,
            train_loss: opt(f[2], i + 1)?,
            val_loss: opt(f[3], i + 1)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{gen_synthetic, SynthConfig};
    use crate::dataset::split_id_by_batch;

    fn small() -> (Dataset, SplitSpec, HyperParams) {
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
            batch_size: 16,
            epochs: 3,
            image_hidden: vec![16],
            proj_hidden: 16,
            compound_hidden: vec![16, 16],
            fusion_hidden: 16,
            proj_dim: 8,
            warmup_steps: 2,
            checkpoint_every: 4,
            val_batches: 2,
            ..HyperParams::synthetic()
        };
        (ds, split, hp)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (ds, split, hp) = small();
        let hp = HyperParams { lr: 0.0, ..hp };
        let out = train(&ds, &split, &hp, Method::Micon).unwrap();
        let init = ModelParams::new(ds.feature_dim, 2048, &hp, &SeedTree::new(hp.seed)).unwrap();
        for part in Part::ALL {
            assert_eq!(out.params.net(part).params(), init.net(part).params(), "{part:?}");
        }
    }

    #[test]
    fn same_seed_same_log() {
        let (ds, split, hp) = small();
        for m in Method::ALL {
            let a = train(&ds, &split, &hp, m).unwrap();
            let b = train(&ds, &split, &hp, m).unwrap();
            assert_eq!(format_log(&a.log), format_log(&b.log), "{m}");
            assert_eq!(a.params, b.params);
            assert!(a.best_step > 0);
        }
    }

    #[test]
    fn ablation_matches_zero_weight_trajectory() {
        let (ds, split, hp) = small();
        let a = train(&ds, &split, &hp, Method::PaclrOnly).unwrap();
        let b = train(&ds, &split, &HyperParams { cf_weight: 0.0, ..hp }, Method::Micon).unwrap();
        assert_eq!(format_log(&a.log), format_log(&b.log));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn log_layout_and_roundtrip() {
        let (ds, split, hp) = small();
        let out = train(&ds, &split, &hp, Method::Micon).unwrap();
        let total = total_steps(&hp, fovs_of(&ds, split.get(SplitTag::Train)).len());
        assert_eq!(out.log.len(), total + 1);
        assert!(out.log[0].val_loss.is_some() && out.log[0].train_loss.is_none());
        for r in &out.log[1..] {
            assert_eq!(r.val_loss.is_some(), r.step % 4 == 0 || r.step == total);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.tsv");
        write_log(&p, &out.log).unwrap();
        assert_eq!(read_log(&p).unwrap(), out.log);
    }

    #[test]
    fn divergence_reports_the_step() {
        let (ds, split, hp) = small();
        let hp = HyperParams { lr: 1e300, warmup_steps: 0, ..hp };
        match train(&ds, &split, &hp, Method::Micon) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
