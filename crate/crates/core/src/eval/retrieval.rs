//! Constrained nearest-neighbour compound matching and its permutation null.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::normalize::WellEmbedding;
use crate::dataset::WellKey;
use crate::error::{Error, Result};
use crate::math::similarity::norm;
use crate::math::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    #[serde(rename = "none")]
    None,
    /// Candidate must come from another microscopy batch.
    #[serde(rename = "NSB")]
    NotSameBatch,
    /// Candidate must come from another source.
    #[serde(rename = "NSS")]
    NotSameSource,
}

impl Constraint {
    pub const ALL: [Constraint; 3] = [Constraint::None, Constraint::NotSameBatch, Constraint::NotSameSource];

    pub fn name(self) -> &'static str {
        match self {
            Constraint::None => "none",
            Constraint::NotSameBatch => "NSB",
            Constraint::NotSameSource => "NSS",
        }
    }

    /// Whether `candidate` may answer `query`. The query's own well is
    /// never eligible.
    pub fn allows(self, query: &WellKey, candidate: &WellKey) -> bool {
        if query == candidate {
            return false;
        }
        match self {
            Constraint::None => true,
            Constraint::NotSameBatch => query.batch_key() != candidate.batch_key(),
            Constraint::NotSameSource => query.source != candidate.source,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Constraint::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown constraint `{s}` (none, NSB, NSS)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub query: String,
    pub query_perturbation: String,
    pub matched: String,
    pub matched_perturbation: String,
    pub similarity: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub constraint: Constraint,
    pub n_queries: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub chance_level: f64,
    pub per_query: Vec<QueryMatch>,
}

/// For each query, the index of its cosine-nearest eligible retrieval well.
/// Ties go to the earliest retrieval entry.
pub fn nearest_indices(
    query: &[WellEmbedding],
    retrieval: &[WellEmbedding],
    constraint: Constraint,
) -> Result<Vec<(usize, f64)>> {
    let norms = |set: &[WellEmbedding]| -> Result<Vec<f64>> {
        set.iter()
            .map(|e| {
                let n = norm(&e.vector);
                if n > 0.0 && n.is_finite() {
                    Ok(n)
                } else {
                    Err(Error::ZeroVector)
                }
            })
            .collect()
    };
    let rn = norms(retrieval)?;
    let qn = norms(query)?;
    query
        .iter()
        .zip(&qn)
        .map(|(q, &na)| {
            if let Some(r) = retrieval.first() {
                if r.vector.len() != q.vector.len() {
                    return Err(Error::Dim(format!(
                        "query dim {} vs retrieval dim {}",
                        q.vector.len(),
                        r.vector.len()
                    )));
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, (r, &nb)) in retrieval.iter().zip(&rn).enumerate() {
                if !constraint.allows(&q.key, &r.key) {
                    continue;
                }
                let dot: f64 = q.vector.iter().zip(&r.vector).map(|(a, b)| a * b).sum();
                let sim = dot / (na * nb);
                if best.map_or(true, |(_, s)| sim > s) {
                    best = Some((j, sim));
                }
            }
            best.ok_or_else(|| Error::NoCandidate(format!("{} under {constraint}", q.key)))
        })
        .collect()
}

/// Compound-replicate matching: is the nearest eligible retrieval well
/// treated with the same perturbation?
pub fn retrieve_1nn(
    query: &[WellEmbedding],
    retrieval: &[WellEmbedding],
    constraint: Constraint,
) -> Result<RetrievalReport> {
    if retrieval.is_empty() {
        return Err(Error::Insufficient("retrieval set is empty".into()));
    }
    let nn = nearest_indices(query, retrieval, constraint)?;
    let per_query: Vec<QueryMatch> = query
        .iter()
        .zip(nn)
        .map(|(q, (j, sim))| {
            let r = &retrieval[j];
            QueryMatch {
                query: q.key.to_string(),
                query_perturbation: q.perturbation.clone(),
                matched: r.key.to_string(),
                matched_perturbation: r.perturbation.clone(),
                similarity: sim,
                correct: r.perturbation == q.perturbation,
            }
        })
        .collect();
    let mut labels: Vec<&str> = retrieval.iter().map(|r| r.perturbation.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let n_correct = per_query.iter().filter(|m| m.correct).count();
    let n_queries = per_query.len();
    Ok(RetrievalReport {
        constraint,
        n_queries,
        n_correct,
        accuracy: if n_queries == 0 {
            0.0
        } else {
            n_correct as f64 / n_queries as f64
        },
        chance_level: 1.0 / labels.len() as f64,
        per_query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    pub null_mean: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

/// Label-permutation null for the mean accuracy over `reports`: the query
/// labels of each report are shuffled independently while the matches stay
/// fixed. `p = (1 + #{null >= observed}) / (1 + n)`.
pub fn permutation_test(reports: &[RetrievalReport], n_permutations: usize, seed: u64) -> Result<PermutationTest> {
    if reports.is_empty() || reports.iter().any(|r| r.n_queries == 0) {
        return Err(Error::Insufficient("permutation test needs non-empty reports".into()));
    }
    if n_permutations == 0 {
        return Err(Error::invalid("need at least one permutation"));
    }
    let observed = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    let mut rng = SeedTree::new(seed).rng("permutation");
    let mut labels: Vec<Vec<&str>> = reports
        .iter()
        .map(|r| r.per_query.iter().map(|m| m.query_perturbation.as_str()).collect())
        .collect();
    let mut exceed = 0usize;
    let mut null_sum = 0.0;
    for _ in 0..n_permutations {
        let mut acc = 0.0;
        for (r, l) in reports.iter().zip(labels.iter_mut()) {
            l.shuffle(&mut rng);
            let hits = r
                .per_query
                .iter()
                .zip(l.iter())
                .filter(|(m, q)| m.matched_perturbation == **q)
                .count();
            acc += hits as f64 / r.n_queries as f64;
        }
        let acc = acc / reports.len() as f64;
        null_sum += acc;
        if acc >= observed - 1e-12 {
            exceed += 1;
        }
    }
    Ok(PermutationTest {
        observed,
        null_mean: null_sum / n_permutations as f64,
        p_value: (1 + exceed) as f64 / (1 + n_permutations) as f64,
        n_permutations,
    })
}
