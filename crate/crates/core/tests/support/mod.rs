//! Independent oracles shared by the topic tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use micon_core::chem::{ecfp, environment_ids, parse_smiles, Molecule, DEFAULT_BITS};
use micon_core::dataset::WellKey;
use micon_core::eval::{retrieve_1nn, rm_anova, t_test_one_tailed, Constraint, WellEmbedding};
use micon_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

// Retrieval

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<WellEmbedding>, Vec<WellEmbedding>) {
    let n_wells = rng.gen_range(2..=500);
    let d = rng.gen_range(1..=64);
    let n_sources = rng.gen_range(1..=4);
    let n_batches = rng.gen_range(1..=3);
    let n_labels = rng.gen_range(1..=10);
    let mut wells: Vec<WellEmbedding> = (0..n_wells)
        .map(|i| WellEmbedding {
            key: WellKey {
                source: format!("s{}", rng.gen_range(0..n_sources)),
                batch: format!("b{}", rng.gen_range(0..n_batches)),
                plate: "p".into(),
                row: (i / 24) as u32,
                col: (i % 24) as u32,
            },
            perturbation: format!("c{}", rng.gen_range(0..n_labels)),
            vector: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    // exact duplicates exercise the tie rule
    for _ in 0..rng.gen_range(0..5) {
        let (a, b) = (rng.gen_range(0..n_wells), rng.gen_range(0..n_wells));
        wells[b].vector = wells[a].vector.clone();
    }
    let n_query = rng.gen_range(1..n_wells);
    let retrieval = wells.split_off(n_query);
    let mut query = wells;
    // some queries also sit in the retrieval set and must not match themselves
    if rng.gen_bool(0.5) {
        let k = rng.gen_range(0..retrieval.len());
        query.push(retrieval[k].clone());
    }
    (query, retrieval)
}

pub fn eligible(c: Constraint, q: &WellKey, r: &WellKey) -> bool {
    q != r
        && match c {
            Constraint::None => true,
            Constraint::NotSameBatch => (q.source.as_str(), q.batch.as_str()) != (r.source.as_str(), r.batch.as_str()),
            Constraint::NotSameSource => q.source != r.source,
        }
}

pub fn exhaustive(query: &[WellEmbedding], retrieval: &[WellEmbedding], c: Constraint) -> Option<Vec<usize>> {
    let unit = |v: &[f64]| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let q: Vec<Vec<f64>> = query.iter().map(|e| unit(&e.vector)).collect();
    let r: Vec<Vec<f64>> = retrieval.iter().map(|e| unit(&e.vector)).collect();
    let mut out = Vec::new();
    for (i, qe) in query.iter().enumerate() {
        let mut cands: Vec<(f64, usize)> = (0..retrieval.len())
            .filter(|&j| eligible(c, &qe.key, &retrieval[j].key))
            .map(|j| (1.0 - q[i].iter().zip(&r[j]).map(|(a, b)| a * b).sum::<f64>(), j))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(cands.first()?.1);
    }
    Some(out)
}

/// Runs `n` random instances under every constraint and returns how many
/// (instance, constraint) pairs had a candidate for every query.
pub fn check_retrieval(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for _ in 0..n {
        let (query, retrieval) = random_instance(&mut rng);
        for c in Constraint::ALL {
            let got = retrieve_1nn(&query, &retrieval, c);
            match exhaustive(&query, &retrieval, c) {
                Some(expected) => {
                    let report = got.unwrap();
                    assert_eq!(report.n_queries, query.len());
                    for ((m, &j), q) in report.per_query.iter().zip(&expected).zip(&query) {
                        assert_eq!(m.matched, retrieval[j].key.to_string(), "{c}");
                        assert_eq!(m.correct, retrieval[j].perturbation == q.perturbation);
                    }
                    let n_correct = expected
                        .iter()
                        .zip(&query)
                        .filter(|(&j, q)| retrieval[j].perturbation == q.perturbation)
                        .count();
                    assert_eq!(report.n_correct, n_correct);
                    assert_eq!(report.accuracy, n_correct as f64 / query.len() as f64);
                    checked += 1;
                }
                None => assert!(matches!(got, Err(Error::NoCandidate(_))), "{c}: {got:?}"),
            }
        }
    }
    checked
}

// Fingerprints

pub fn rows(name: &str) -> Vec<Vec<String>> {
    let path = format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

pub fn distinct_ids(smiles: &str) -> BTreeSet<u32> {
    environment_ids(&parse_smiles(smiles).unwrap(), 2)
        .into_iter()
        .collect()
}

/// Distinct radius-2 identifier counts against RDKit; returns the molecule count.
pub fn check_identifier_counts() -> usize {
    let fixture = rows("oracle/ecfp_rdkit_counts.tsv");
    for r in &fixture {
        let want: usize = r[1].parse().unwrap();
        assert_eq!(distinct_ids(&r[0]).len(), want, "{}", r[0]);
    }
    fixture.len()
}

/// Unfolded Tanimoto similarities against RDKit; returns the pair count.
pub fn check_unfolded_tanimoto() -> usize {
    let smiles: Vec<String> = rows("oracle/ecfp_rdkit_counts.tsv")
        .into_iter()
        .map(|r| r[0].clone())
        .collect();
    let ids: Vec<BTreeSet<u32>> = smiles.iter().map(|s| distinct_ids(s)).collect();
    let pairs = rows("oracle/ecfp_rdkit_tanimoto.tsv");
    for r in &pairs {
        let (i, j): (usize, usize) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        let want: f64 = r[2].parse().unwrap();
        let inter = ids[i].intersection(&ids[j]).count() as f64;
        let union = ids[i].union(&ids[j]).count() as f64;
        assert!(
            (inter / union - want).abs() < 1e-12,
            "{} vs {}: {} != {want}",
            smiles[i],
            smiles[j],
            inter / union
        );
    }
    pairs.len()
}

/// Folded 2048-bit fingerprints against the committed baseline; returns the molecule count.
pub fn check_folded_baseline() -> usize {
    let fixture = rows("oracle/ecfp_baseline.tsv");
    for r in &fixture {
        let want: Vec<usize> = r[1].split(',').map(|b| b.parse().unwrap()).collect();
        let got = ecfp(&parse_smiles(&r[0]).unwrap(), 2, DEFAULT_BITS).unwrap();
        assert_eq!(got.indices(), want, "{}", r[0]);
    }
    fixture.len()
}

fn shuffled(mol: &Molecule, rng: &mut impl Rng) -> Molecule {
    let mut perm: Vec<usize> = (0..mol.atoms.len()).collect();
    perm.shuffle(rng);
    let mut out = mol.permuted(&perm);
    out.bonds.shuffle(rng);
    out
}

/// Fingerprints of `n` pool molecules survive three random atom and bond renumberings.
pub fn check_renumbering(n: usize, seed: u64) {
    let path = format!("{}/data/smiles_pool.txt", env!("CARGO_MANIFEST_DIR"));
    let pool = std::fs::read_to_string(path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines: Vec<&str> = pool.lines().collect();
    assert!(lines.len() >= n);
    lines.shuffle(&mut rng);
    for smi in lines.iter().take(n) {
        let mol = parse_smiles(smi).unwrap();
        let want = ecfp(&mol, 2, DEFAULT_BITS).unwrap();
        for _ in 0..3 {
            assert_eq!(ecfp(&shuffled(&mol, &mut rng), 2, DEFAULT_BITS).unwrap(), want, "{smi}");
        }
    }
}

// Statistics

#[derive(Deserialize)]
pub struct TCase {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub p: f64,
}

#[derive(Deserialize)]
pub struct AnovaCase {
    pub table: Vec<Vec<f64>>,
    pub f: f64,
    pub p: f64,
}

#[derive(Deserialize)]
pub struct StatsFixture {
    pub t_test: Vec<TCase>,
    pub rm_anova: Vec<AnovaCase>,
}

pub fn stats_fixture() -> StatsFixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/oracle/stats.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn check_t_tests(fx: &StatsFixture) {
    for c in &fx.t_test {
        let r = t_test_one_tailed(&c.a, &c.b).unwrap();
        assert!((r.t - c.t).abs() < 1e-6, "t {} vs {}", r.t, c.t);
        assert!((r.p - c.p).abs() < 1e-6, "p {} vs {}", r.p, c.p);
        assert_eq!(r.dof, (c.a.len() + c.b.len() - 2) as f64);
    }
}

pub fn check_rm_anovas(fx: &StatsFixture) {
    for c in &fx.rm_anova {
        let r = rm_anova(&c.table).unwrap();
        assert!((r.f - c.f).abs() < 1e-6 * c.f.abs().max(1.0), "F {} vs {}", r.f, c.f);
        assert!((r.p - c.p).abs() < 1e-6, "p {} vs {}", r.p, c.p);
    }
}

pub fn check_degenerate_stats() {
    let same = [0.4, 0.5, 0.6];
    let r = t_test_one_tailed(&same, &same).unwrap();
    assert_eq!((r.t, r.p), (0.0, 0.5));
    let flat = [0.5, 0.5, 0.5];
    assert_eq!(t_test_one_tailed(&flat, &flat).unwrap().p, 0.5);
    let a = rm_anova(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!((a.f, a.p), (0.0, 1.0));
    let b = rm_anova(&[vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]]).unwrap();
    assert!(b.f.is_infinite());
    assert_eq!(b.p, 0.0);
}
