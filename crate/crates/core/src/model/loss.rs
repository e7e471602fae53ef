//! Contrastive objectives over cosine similarities, each returning the loss
//! together with its gradient with respect to the input representations.
//!
//! All four losses share one kernel: for every anchor, a softmax over a
//! candidate set, averaged over that anchor's positives. Anchors without any
//! positive are skipped and the mean is taken over the remaining ones.

use crate::error::{Error, Result};
use crate::math::{CosineGram, Matrix};

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Matrix,
}

/// Loss over two representation sets, with a gradient for each.
#[derive(Debug, Clone)]
pub struct PairLossGrad {
    pub loss: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// Softmax cross-entropy over candidates, averaged over positives, then over
/// anchors that have at least one positive. Returns the loss, `dL/dsim` and
/// the number of contributing anchors.
fn contrastive_kernel(
    sim: &Matrix,
    tau: f64,
    candidate: impl Fn(usize, usize) -> bool,
    positive: impl Fn(usize, usize) -> bool,
) -> (f64, Matrix, usize) {
    let (n, m) = (sim.rows(), sim.cols());
    let mut d_sim = Matrix::zeros(n, m);
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut logits = vec![0.0; m];
    for i in 0..n {
        let cands: Vec<usize> = (0..m).filter(|&k| candidate(i, k)).collect();
        let pos: Vec<usize> = cands.iter().copied().filter(|&k| positive(i, k)).collect();
        if pos.is_empty() {
            continue;
        }
        valid += 1;
        let mut max = f64::NEG_INFINITY;
        for &k in &cands {
            logits[k] = sim.get(i, k) / tau;
            max = max.max(logits[k]);
        }
        let sum: f64 = cands.iter().map(|&k| (logits[k] - max).exp()).sum();
        let lse = max + sum.ln();
        let inv_p = 1.0 / pos.len() as f64;
        total += pos.iter().map(|&j| lse - logits[j]).sum::<f64>() * inv_p;
        for &k in &cands {
            d_sim.set(i, k, (logits[k] - lse).exp());
        }
        for &j in &pos {
            d_sim.set(i, j, d_sim.get(i, j) - inv_p);
        }
    }
    if valid == 0 {
        return (0.0, d_sim, 0);
    }
    let scale = 1.0 / (tau * valid as f64);
    d_sim.scale(scale);
    (total / valid as f64, d_sim, valid)
}

/// Perturbation-aware contrastive loss: positives share a label, the
/// denominator runs over every other row.
pub fn paclr_loss(reps: &Matrix, labels: &[usize], tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    let n = reps.rows();
    if n < 2 {
        return Err(Error::invalid(format!("contrastive loss needs >= 2 rows, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Dim(format!("{n} representations but {} labels", labels.len())));
    }
    let gram = CosineGram::new(reps, reps)?;
    let (loss, d_sim, valid) = contrastive_kernel(
        &gram.sim,
        tau,
        |i, k| i != k,
        |i, k| labels[i] == labels[k],
    );
    if valid == 0 {
        return Err(Error::Insufficient("no anchor has a positive in the batch".into()));
    }
    let (mut grad, db) = gram.backward(&d_sim);
    grad.add_assign(&db);
    Ok(LossGrad { loss, grad })
}

/// Real anchors against counterfactual candidates. Positives are
/// counterfactuals of the anchor's perturbation; the denominator covers all
/// counterfactuals.
pub fn cf_paclr_loss(
    real: &Matrix,
    real_labels: &[usize],
    cf: &Matrix,
    cf_labels: &[usize],
    tau: f64,
) -> Result<PairLossGrad> {
    check_tau(tau)?;
    if real.rows() == 0 || cf.rows() == 0 {
        return Err(Error::invalid("counterfactual loss needs non-empty inputs"));
    }
    if real_labels.len() != real.rows() || cf_labels.len() != cf.rows() {
        return Err(Error::Dim("label count does not match representation count".into()));
    }
    let gram = CosineGram::new(real, cf)?;
    let (loss, d_sim, valid) = contrastive_kernel(
        &gram.sim,
        tau,
        |_, _| true,
        |i, k| real_labels[i] == cf_labels[k],
    );
    if valid == 0 {
        return Err(Error::Insufficient(
            "no real representation shares a label with any counterfactual".into(),
        ));
    }
    let (grad_a, grad_b) = gram.backward(&d_sim);
    Ok(PairLossGrad {
        loss,
        grad_a,
        grad_b,
    })
}

/// Instance discrimination over view pairs stored in consecutive rows
/// `(2m, 2m + 1)`.
pub fn simclr_loss(reps: &Matrix, tau: f64) -> Result<LossGrad> {
    if reps.rows() % 2 != 0 {
        return Err(Error::invalid(format!(
            "two views per instance expected, got {} rows",
            reps.rows()
        )));
    }
    let labels: Vec<usize> = (0..reps.rows()).map(|i| i / 2).collect();
    paclr_loss(reps, &labels, tau)
}

/// Symmetric cross-modal InfoNCE between row-paired images and compounds.
/// Repeated compounds are treated as distinct targets.
pub fn clip_loss(images: &Matrix, compounds: &Matrix, tau: f64) -> Result<PairLossGrad> {
    check_tau(tau)?;
    if images.rows() != compounds.rows() || images.rows() == 0 {
        return Err(Error::Dim(format!(
            "{} images paired with {} compounds",
            images.rows(),
            compounds.rows()
        )));
    }
    let gram = CosineGram::new(images, compounds)?;
    let (l_ic, d_ic, _) = contrastive_kernel(&gram.sim, tau, |_, _| true, |i, k| i == k);
    let sim_t = gram.sim.transpose();
    let (l_ci, d_ci, _) = contrastive_kernel(&sim_t, tau, |_, _| true, |i, k| i == k);
    let mut d_sim = d_ci.transpose();
    d_sim.add_assign(&d_ic);
    d_sim.scale(0.5);
    let (grad_a, grad_b) = gram.backward(&d_sim);
    Ok(PairLossGrad {
        loss: 0.5 * (l_ic + l_ci),
        grad_a,
        grad_b,
    })
}

/// `paclr + cf_weight · cf`; a zero weight returns `paclr` untouched.
pub fn micon_total_loss(paclr: f64, cf: f64, cf_weight: f64) -> f64 {
    if cf_weight == 0.0 {
        paclr
    } else {
        paclr + cf_weight * cf
    }
}
