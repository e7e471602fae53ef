//! Forward and backward passes of each training objective over materialised
//! batch inputs.

use super::loss::{cf_paclr_loss, clip_loss, micon_total_loss, paclr_loss, simclr_loss};
use super::net::{ModelParams, Part};
use super::Method;
use crate::error::{Error, Result};
use crate::math::{Grads, Matrix, Mode};

/// A batch turned into network inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum StepInputs {
    /// Rows `t1 ++ t2 ++ controls`; the first `n_perturbed` rows are real
    /// anchors for the counterfactual term.
    Micon {
        features: Matrix,
        labels: Vec<usize>,
        n_perturbed: usize,
        /// Control row (relative to the control block) per anchor.
        cf_controls: Vec<usize>,
        /// Dense fingerprint per anchor.
        fingerprints: Matrix,
    },
    /// Two views per instance in consecutive rows.
    Simclr { features: Matrix },
    /// Image rows paired with fingerprint rows.
    Clip { features: Matrix, fingerprints: Matrix },
}

/// Networks that receive gradient under `method`.
pub fn trained_parts(method: Method, cf_weight: f64) -> Vec<Part> {
    match method {
        Method::Micon if cf_weight != 0.0 => {
            vec![Part::Image, Part::Projection, Part::Compound, Part::Fusion]
        }
        Method::Micon | Method::PaclrOnly | Method::Simclr => vec![Part::Image, Part::Projection],
        Method::Clip => vec![Part::Image, Part::Projection, Part::Compound, Part::ClipHead],
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub loss: f64,
    /// Loss components: `(paclr, cf)` for MICON, the single loss otherwise.
    pub components: Vec<f64>,
    /// Gradients aligned with [`trained_parts`], present in train mode.
    pub grads: Option<Vec<(Part, Grads)>>,
}

/// Loss and, in train mode, parameter gradients.
pub fn evaluate(
    params: &mut ModelParams,
    inputs: &StepInputs,
    method: Method,
    tau: f64,
    cf_weight: f64,
    mode: Mode,
) -> Result<ObjectiveOutput> {
    let want_grad = mode == Mode::Train;
    match (method, inputs) {
        (
            Method::Micon | Method::PaclrOnly,
            StepInputs::Micon {
                features,
                labels,
                n_perturbed,
                cf_controls,
                fingerprints,
            },
        ) => {
            let cf_weight = if method == Method::PaclrOnly { 0.0 } else { cf_weight };
            let (emb, img_cache) = params.image.forward(features, mode)?;
            let (reps, proj_cache) = params.projection.forward(&emb, mode)?;
            let paclr = paclr_loss(&reps, labels, tau)?;
            let mut d_reps = paclr.grad;
            let mut grads = Vec::new();
            let mut components = vec![paclr.loss];
            let mut loss = paclr.loss;

            if cf_weight != 0.0 {
                let np = *n_perturbed;
                if cf_controls.len() != np || fingerprints.rows() != np {
                    return Err(Error::Dim(format!(
                        "{np} anchors, {} fusion contexts, {} fingerprints",
                        cf_controls.len(),
                        fingerprints.rows()
                    )));
                }
                let n_ctrl = reps.rows() - np;
                if let Some(&k) = cf_controls.iter().find(|&&k| k >= n_ctrl) {
                    return Err(Error::invalid(format!("fusion context {k} out of range")));
                }
                let ctrl_rows: Vec<usize> = cf_controls.iter().map(|&k| np + k).collect();
                let ctx = reps.select_rows(&ctrl_rows);
                let (comp, comp_cache) = params.compound.forward(fingerprints, mode)?;
                let (cf, fusion_cache) = params.fusion.forward(&ctx.hconcat(&comp)?, mode)?;
                let real_rows: Vec<usize> = (0..np).collect();
                let real = reps.select_rows(&real_rows);
                let cf_loss = cf_paclr_loss(&real, &labels[..np], &cf, &labels[..np], tau)?;
                components.push(cf_loss.loss);
                loss = micon_total_loss(paclr.loss, cf_loss.loss, cf_weight);

                if want_grad {
                    let mut d_cf = cf_loss.grad_b;
                    d_cf.scale(cf_weight);
                    let (d_fused, g_fusion) = params.fusion.backward(&fusion_cache, &d_cf);
                    let (d_ctx, d_comp) = d_fused.hsplit(params.projection.out_dim());
                    let (_, g_comp) = params.compound.backward(&comp_cache, &d_comp);
                    for (j, &row) in ctrl_rows.iter().enumerate() {
                        for (g, v) in d_reps.row_mut(row).iter_mut().zip(d_ctx.row(j)) {
                            *g += v;
                        }
                    }
                    for j in 0..np {
                        for (g, v) in d_reps.row_mut(j).iter_mut().zip(cf_loss.grad_a.row(j)) {
                            *g += cf_weight * v;
                        }
                    }
                    grads.push((Part::Compound, g_comp));
                    grads.push((Part::Fusion, g_fusion));
                }
            }
            let grads = want_grad.then(|| {
                let (d_emb, g_proj) = params.projection.backward(&proj_cache, &d_reps);
                let (_, g_img) = params.image.backward(&img_cache, &d_emb);
                let mut out = vec![(Part::Image, g_img), (Part::Projection, g_proj)];
                out.append(&mut grads);
                out
            });
            Ok(ObjectiveOutput {
                loss,
                components,
                grads,
            })
        }
        (Method::Simclr, StepInputs::Simclr { features }) => {
            let (emb, img_cache) = params.image.forward(features, mode)?;
            let (reps, proj_cache) = params.projection.forward(&emb, mode)?;
            let r = simclr_loss(&reps, tau)?;
            let grads = want_grad.then(|| {
                let (d_emb, g_proj) = params.projection.backward(&proj_cache, &r.grad);
                let (_, g_img) = params.image.backward(&img_cache, &d_emb);
                vec![(Part::Image, g_img), (Part::Projection, g_proj)]
            });
            Ok(ObjectiveOutput {
                loss: r.loss,
                components: vec![r.loss],
                grads,
            })
        }
        (
            Method::Clip,
            StepInputs::Clip {
                features,
                fingerprints,
            },
        ) => {
            let (emb, img_cache) = params.image.forward(features, mode)?;
            let (reps, proj_cache) = params.projection.forward(&emb, mode)?;
            let (comp, comp_cache) = params.compound.forward(fingerprints, mode)?;
            let (head, head_cache) = params.clip_head.forward(&comp, mode)?;
            let r = clip_loss(&reps, &head, tau)?;
            let grads = want_grad.then(|| {
                let (d_emb, g_proj) = params.projection.backward(&proj_cache, &r.grad_a);
                let (_, g_img) = params.image.backward(&img_cache, &d_emb);
                let (d_comp, g_head) = params.clip_head.backward(&head_cache, &r.grad_b);
                let (_, g_comp) = params.compound.backward(&comp_cache, &d_comp);
                vec![
                    (Part::Image, g_img),
                    (Part::Projection, g_proj),
                    (Part::Compound, g_comp),
                    (Part::ClipHead, g_head),
                ]
            });
            Ok(ObjectiveOutput {
                loss: r.loss,
                components: vec![r.loss],
                grads,
            })
        }
        (m, _) => Err(Error::invalid(format!("batch inputs do not match method {m}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{grad_check, SeedTree};
    use crate::model::HyperParams;
    use rand::Rng;

    fn tiny() -> HyperParams {
        HyperParams {
            image_hidden: vec![5, 4],
            proj_hidden: 6,
            compound_hidden: vec![5, 5],
            fusion_hidden: 6,
            proj_dim: 3,
            ..HyperParams::synthetic()
        }
    }

    fn random(seed: u64, rows: usize, cols: usize) -> Matrix {
        let mut rng = SeedTree::new(seed).rng("m");
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn micon_inputs(seed: u64) -> StepInputs {
        let mut fp = random(seed + 1, 4, 8);
        fp.data_mut().iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
        StepInputs::Micon {
            features: random(seed, 6, 7),
            labels: vec![1, 2, 1, 2, 0, 0],
            n_perturbed: 4,
            cf_controls: vec![0, 1, 1, 0],
            fingerprints: fp,
        }
    }

    fn flat(p: &ModelParams, parts: &[Part]) -> Vec<f64> {
        parts
            .iter()
            .flat_map(|&part| p.net(part).params().into_iter().flatten().copied().collect::<Vec<_>>())
            .collect()
    }

    fn load(p: &mut ModelParams, parts: &[Part], v: &[f64]) {
        let mut off = 0;
        for &part in parts {
            for t in p.net_mut(part).params_mut() {
                let n = t.len();
                t.copy_from_slice(&v[off..off + n]);
                off += n;
            }
        }
    }

    fn check(method: Method, inputs: StepInputs, cf_weight: f64, seed: u64) {
        let base = ModelParams::new(7, 8, &tiny(), &SeedTree::new(seed)).unwrap();
        let parts = trained_parts(method, cf_weight);
        let x = flat(&base, &parts);
        let f = |v: &[f64]| {
            let mut p = base.clone();
            load(&mut p, &parts, v);
            let out = evaluate(&mut p, &inputs, method, 0.5, cf_weight, Mode::Train)?;
            let g: Vec<f64> = out
                .grads
                .unwrap()
                .into_iter()
                .flat_map(|(_, g)| g.into_iter().flatten())
                .collect();
            Ok((out.loss, g))
        };
        let r = grad_check(f, &x, 1e-5, None).unwrap();
        assert!(r.max_rel_error < 1e-4, "{method} seed {seed}: {r:?}");
    }

    #[test]
    fn micon_parameter_gradients_match_finite_differences() {
        for seed in 0..3 {
            check(Method::Micon, micon_inputs(seed), 1.0, seed);
            check(Method::Micon, micon_inputs(seed), 0.7, seed);
        }
    }

    #[test]
    fn baseline_parameter_gradients_match_finite_differences() {
        for seed in 0..3 {
            check(Method::Simclr, StepInputs::Simclr { features: random(seed, 6, 7) }, 1.0, seed);
            let mut fp = random(seed + 9, 5, 8);
            fp.data_mut().iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
            check(
                Method::Clip,
                StepInputs::Clip {
                    features: random(seed, 5, 7),
                    fingerprints: fp,
                },
                1.0,
                seed,
            );
        }
    }

    #[test]
    fn zero_weight_equals_paclr_only() {
        let mut a = ModelParams::new(7, 8, &tiny(), &SeedTree::new(0)).unwrap();
        let mut b = a.clone();
        let x = micon_inputs(4);
        let oa = evaluate(&mut a, &x, Method::Micon, 0.5, 0.0, Mode::Train).unwrap();
        let ob = evaluate(&mut b, &x, Method::PaclrOnly, 0.5, 1.0, Mode::Train).unwrap();
        assert_eq!(oa.loss.to_bits(), ob.loss.to_bits());
        assert_eq!(oa.grads.unwrap(), ob.grads.unwrap());
        assert_eq!(oa.components.len(), 1);
    }

    #[test]
    fn infer_mode_has_no_gradients_and_keeps_state() {
        let mut p = ModelParams::new(7, 8, &tiny(), &SeedTree::new(0)).unwrap();
        let before = p.clone();
        let out = evaluate(&mut p, &micon_inputs(1), Method::Micon, 0.5, 1.0, Mode::Infer).unwrap();
        assert!(out.grads.is_none());
        assert_eq!(out.components.len(), 2);
        assert!((out.loss - out.components[0] - out.components[1]).abs() < 1e-12);
        assert_eq!(p, before);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let mut p = ModelParams::new(7, 8, &tiny(), &SeedTree::new(0)).unwrap();
        let x = StepInputs::Simclr { features: random(0, 4, 7) };
        assert!(evaluate(&mut p, &x, Method::Clip, 0.5, 1.0, Mode::Train).is_err());
    }
}
