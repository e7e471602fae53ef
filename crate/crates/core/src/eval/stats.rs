//! Significance tests used to compare methods across seeds.
//!
//! Tail probabilities come from `statrs`, which evaluates the Student-t and
//! F distributions through the regularized incomplete beta function.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub df_conditions: f64,
    pub df_error: f64,
    pub p: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Unpaired pooled-variance t-test of `mean(a) > mean(b)`.
///
/// Identical groups with zero spread give `t = 0, p = 0.5`. Zero spread with
/// different means saturates to `t = ±inf`.
pub fn t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let dof = na + nb - 2.0;
    let (ma, mb) = (mean(a), mean(b));
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let pooled = (ss(a, ma) + ss(b, mb)) / dof;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let diff = ma - mb;
    let scale = ma.abs().max(mb.abs()).max(1.0);
    if se <= 1e-15 * scale {
        let (t, p) = if diff.abs() <= 1e-15 * scale {
            (0.0, 0.5)
        } else if diff > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 1.0)
        };
        return Ok(TTest { t, dof, p });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(TTest {
        t,
        dof,
        p: dist.sf(t),
    })
}

/// Upper tail of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f.is_infinite() {
        return Ok(0.0);
    }
    if f <= 0.0 {
        return Ok(1.0);
    }
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sf(f))
}

/// One-way repeated-measures ANOVA over a subjects × conditions table.
///
/// All-equal tables give `F = 0, p = 1`; a condition effect with no residual
/// variance gives `F = inf, p = 0`.
pub fn rm_anova(table: &[Vec<f64>]) -> Result<Anova> {
    let n = table.len();
    let k = table.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::invalid(format!(
            "repeated-measures ANOVA needs >= 2 subjects and >= 2 conditions, got {n}x{k}"
        )));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != k {
            return Err(Error::invalid(format!(
                "incomplete table: subject {i} has {} of {k} conditions",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ANOVA subject {i}")));
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = table.iter().flatten().sum::<f64>() / (nf * kf);
    let ss_total: f64 = table.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_subjects: f64 = table
        .iter()
        .map(|row| kf * (mean(row) - grand).powi(2))
        .sum();
    let ss_conditions: f64 = (0..k)
        .map(|c| {
            let m = table.iter().map(|row| row[c]).sum::<f64>() / nf;
            nf * (m - grand).powi(2)
        })
        .sum();
    let ss_error = (ss_total - ss_subjects - ss_conditions).max(0.0);
    let df_conditions = kf - 1.0;
    let df_error = (nf - 1.0) * (kf - 1.0);
    let tiny = 1e-12 * ss_total.max(grand.abs().powi(2)).max(1e-300);
    let f = if ss_error <= tiny {
        if ss_conditions <= tiny {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ss_conditions / df_conditions) / (ss_error / df_error)
    };
    Ok(Anova {
        f,
        df_conditions,
        df_error,
        p: f_sf(f, df_conditions, df_error)?,
    })
}
