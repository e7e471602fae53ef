use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
}

/// Compare the analytic gradient returned by `f` against central differences
/// with step `h`. The error per coordinate is
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `coords` restricts the comparison to a subset of coordinates; `None`
/// checks all of them.
pub fn grad_check<F>(mut f: F, x: &[f64], h: f64, coords: Option<&[usize]>) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::invalid(format!("step {h} outside [1e-6, 1e-3]")));
    }
    let (value, analytic) = f(x)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    if analytic.len() != x.len() {
        return Err(Error::Dim(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut point = x.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for &i in coords {
        let orig = point[i];
        point[i] = orig + h;
        let (up, _) = f(&point)?;
        point[i] = orig - h;
        let (down, _) = f(&point)?;
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss perturbed at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}
