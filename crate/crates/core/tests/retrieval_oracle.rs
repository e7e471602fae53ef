//! Constrained 1-NN retrieval against an exhaustive scan written
//! independently: full distance table, candidates sorted by
//! `(cosine distance, index)`.

mod support;

use micon_core::eval::Constraint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn retrieval_equals_exhaustive_scan() {
    let checked = support::check_retrieval(100, 7);
    assert!(checked >= 150, "only {checked} satisfiable instances");
}

#[test]
fn relaxing_constraints_never_shrinks_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (query, retrieval) = support::random_instance(&mut rng);
        for q in &query {
            let count = |c: Constraint| retrieval.iter().filter(|r| c.allows(&q.key, &r.key)).count();
            let (none, nsb, nss) = (
                count(Constraint::None),
                count(Constraint::NotSameBatch),
                count(Constraint::NotSameSource),
            );
            assert!(nss <= nsb && nsb <= none);
        }
    }
}

#[test]
fn self_matches_are_excluded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (query, retrieval) = support::random_instance(&mut rng);
        for c in Constraint::ALL {
            if let Ok(report) = micon_core::eval::retrieve_1nn(&query, &retrieval, c) {
                for m in &report.per_query {
                    assert_ne!(m.query, m.matched);
                }
            }
        }
    }
}
