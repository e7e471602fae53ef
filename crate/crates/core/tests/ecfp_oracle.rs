//! Fingerprints checked against identifiers computed by RDKit's Morgan
//! generator (radius 2), plus our own folded bits as a regression baseline.

mod support;

#[test]
fn distinct_identifier_counts_match_oracle() {
    assert!(support::check_identifier_counts() >= 20);
}

#[test]
fn unfolded_tanimoto_matches_oracle() {
    assert!(support::check_unfolded_tanimoto() > 0);
}

#[test]
fn folded_bits_match_baseline() {
    assert!(support::check_folded_baseline() >= 20);
}

#[test]
fn renumbering_invariance_on_pool() {
    support::check_renumbering(50, 11);
}
