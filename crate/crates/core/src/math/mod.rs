//! Small differentiable numerics: matrices, MLPs with manual backprop,
//! cosine similarity, AdamW, scheduling, gradient checking, seeded RNG.

pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod similarity;

pub use gradcheck::{grad_check, GradCheck};
pub use matrix::Matrix;
pub use mlp::{Grads, Layer, LayerKind, LayerSpec, Mlp, MlpCache, Mode};
pub use optim::{adamw_step, clip_gradients, global_norm, OptimizerState, SchedulerState};
pub use rng::{Rng, SeedTree};
pub use similarity::{cosine_similarity, CosineGram};

/// Functional form of [`Mlp::forward`].
pub fn mlp_apply(net: &mut Mlp, input: &Matrix, mode: Mode) -> crate::Result<(Matrix, MlpCache)> {
    net.forward(input, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn affine_identity(n: usize) -> Layer {
        Layer::Affine {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    #[test]
    fn identity_affine() {
        let mut net = Mlp::from_layers(vec![affine_identity(2)]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (y, _) = mlp_apply(&mut net, &x, Mode::Infer).unwrap();
        assert_eq!(y.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn activations() {
        let relu = Mlp::from_layers(vec![Layer::Relu { dim: 3 }]).unwrap();
        let y = relu
            .infer(&Matrix::from_rows(&[[-1.0, 0.0, 3.0]]).unwrap())
            .unwrap();
        assert_eq!(y.row(0), &[0.0, 0.0, 3.0]);

        let leaky = Mlp::from_layers(vec![Layer::LeakyRelu {
            dim: 2,
            slope: 0.01,
        }])
        .unwrap();
        let y = leaky.infer(&Matrix::from_rows(&[[-2.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(y.row(0), &[-0.02, 4.0]);
    }

    #[test]
    fn mismatched_chain_names_layer() {
        let err = mlp::validate_specs(&[LayerSpec::affine(3, 4), LayerSpec::affine(5, 2)])
            .unwrap_err();
        assert!(matches!(err, crate::Error::LayerDim { layer: 1, .. }), "{err}");
    }

    #[test]
    fn input_mismatch_is_layer_zero() {
        let mut rng = Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[LayerSpec::affine(3, 2)], &mut rng).unwrap();
        let err = net
            .forward(&Matrix::zeros(1, 4), Mode::Train)
            .unwrap_err();
        assert!(matches!(err, crate::Error::LayerDim { layer: 0, expected: 3, got: 4 }));
    }

    #[test]
    fn train_mode_updates_running_stats_infer_does_not() {
        let mut rng = Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[LayerSpec::batch_norm(2)], &mut rng).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0]]).unwrap();
        let before = net.clone();
        net.forward(&x, Mode::Infer).unwrap();
        assert_eq!(net, before);
        net.forward(&x, Mode::Train).unwrap();
        match &net.layers()[0] {
            Layer::BatchNorm { running_mean, .. } => {
                assert!((running_mean[0] - 0.2).abs() < 1e-12);
                assert!((running_mean[1] - 0.4).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    /// Backprop through a mixed stack, checked against central differences
    /// on both inputs and parameters.
    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(3);
        let specs = [
            LayerSpec::affine(4, 5),
            LayerSpec::batch_norm(5),
            LayerSpec::relu(5),
            LayerSpec::affine(5, 3),
            LayerSpec::leaky_relu(3, 0.01),
            LayerSpec::affine(3, 2),
        ];
        let base = Mlp::new(&specs, &mut rng).unwrap();
        let x: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let xm = Matrix::from_vec(6, 4, x.clone()).unwrap();
        let target: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();

        // loss = 0.5 * sum((y - target)^2) with respect to the input
        let loss_wrt_input = |xv: &[f64]| {
            let mut net = base.clone();
            let xin = Matrix::from_vec(6, 4, xv.to_vec())?;
            let (y, cache) = net.forward(&xin, Mode::Train)?;
            let mut d = y.clone();
            let mut l = 0.0;
            for (v, t) in d.data_mut().iter_mut().zip(&target) {
                *v -= t;
                l += 0.5 * *v * *v;
            }
            let (dx, _) = net.backward(&cache, &d);
            Ok((l, dx.into_vec()))
        };
        let r = grad_check(loss_wrt_input, &x, 1e-5, None).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let n_params: usize = base.params().iter().map(|p| p.len()).sum();
        let flat: Vec<f64> = base.params().iter().flat_map(|p| p.iter().copied()).collect();
        let loss_wrt_params = |pv: &[f64]| {
            let mut net = base.clone();
            let mut off = 0;
            for p in net.params_mut() {
                let n = p.len();
                p.copy_from_slice(&pv[off..off + n]);
                off += n;
            }
            let (y, cache) = net.forward(&xm, Mode::Train)?;
            let mut d = y.clone();
            let mut l = 0.0;
            for (v, t) in d.data_mut().iter_mut().zip(&target) {
                *v -= t;
                l += 0.5 * *v * *v;
            }
            let (_, g) = net.backward(&cache, &d);
            Ok((l, g.into_iter().flatten().collect()))
        };
        let r = grad_check(loss_wrt_params, &flat, 1e-5, None).unwrap();
        assert_eq!(flat.len(), n_params);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
