//! Print ECFP identifiers for each SMILES read from stdin.
//!
//! Default output is the sorted distinct unfolded identifiers. With
//! `--folded` it prints the set bits of the 2048-bit fingerprint instead.
use std::io::BufRead;

use micon_core::chem::{ecfp, environment_ids, parse_smiles, DEFAULT_BITS, DEFAULT_RADIUS};

fn main() {
    let folded = std::env::args().any(|a| a == "--folded");
    for line in std::io::stdin().lock().lines() {
        let line = line.expect("stdin");
        let smi = line.trim();
        if smi.is_empty() {
            continue;
        }
        let mol = match parse_smiles(smi) {
            Ok(m) => m,
            Err(e) => {
                println!("{smi}\tERROR {e}");
                continue;
            }
        };
        let values: Vec<String> = if folded {
            ecfp(&mol, DEFAULT_RADIUS, DEFAULT_BITS)
                .expect("fingerprint")
                .indices()
                .iter()
                .map(|i| i.to_string())
                .collect()
        } else {
            let mut ids = environment_ids(&mol, DEFAULT_RADIUS);
            ids.sort_unstable();
            ids.dedup();
            ids.iter().map(|i| i.to_string()).collect()
        };
        println!("{smi}\t{}", values.join(","));
    }
}
