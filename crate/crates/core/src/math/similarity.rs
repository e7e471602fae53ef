use super::matrix::Matrix;
use crate::error::{Error, Result};

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dim(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarities between the rows of `a` and `b`, keeping the
/// unit vectors and norms needed to backpropagate through them.
#[derive(Debug, Clone)]
pub struct CosineGram {
    pub sim: Matrix,
    unit_a: Matrix,
    unit_b: Matrix,
    norm_a: Vec<f64>,
    norm_b: Vec<f64>,
}

fn unit_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut u = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        u.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((u, norms))
}

impl CosineGram {
    pub fn new(a: &Matrix, b: &Matrix) -> Result<Self> {
        if a.cols() != b.cols() {
            return Err(Error::Dim(format!(
                "similarity between {}-dim and {}-dim rows",
                a.cols(),
                b.cols()
            )));
        }
        let (unit_a, norm_a) = unit_rows(a)?;
        let (unit_b, norm_b) = unit_rows(b)?;
        let sim = unit_a.matmul_t(&unit_b);
        Ok(Self {
            sim,
            unit_a,
            unit_b,
            norm_a,
            norm_b,
        })
    }

    /// Given `dL/dsim`, return `(dL/da, dL/db)`.
    ///
    /// With `u = a/|a|`, `d sim_ij / d a_i = (v_j - sim_ij u_i) / |a_i|`.
    pub fn backward(&self, d_sim: &Matrix) -> (Matrix, Matrix) {
        let mut da = d_sim.matmul(&self.unit_b);
        for i in 0..da.rows() {
            let c: f64 = d_sim
                .row(i)
                .iter()
                .zip(self.sim.row(i))
                .map(|(g, s)| g * s)
                .sum();
            let ui = self.unit_a.row(i);
            let inv = 1.0 / self.norm_a[i];
            for (v, u) in da.row_mut(i).iter_mut().zip(ui) {
                *v = (*v - c * u) * inv;
            }
        }
        let mut db = d_sim.t_matmul(&self.unit_a);
        for j in 0..db.rows() {
            let mut c = 0.0;
            for i in 0..d_sim.rows() {
                c += d_sim.get(i, j) * self.sim.get(i, j);
            }
            let vj = self.unit_b.row(j);
            let inv = 1.0 / self.norm_b[j];
            for (v, u) in db.row_mut(j).iter_mut().zip(vj) {
                *v = (*v - c * u) * inv;
            }
        }
        (da, db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_an_error() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    proptest! {
        #[test]
        fn self_similarity_is_one(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
            prop_assume!(norm(&v) > 1e-6);
            let s = cosine_similarity(&v, &v).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let s1 = cosine_similarity(&a, &b).unwrap();
            let s2 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }
    }
}
