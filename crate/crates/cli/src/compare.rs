//! Cross-method comparison: per-seed accuracies, seed means and standard
//! deviations, one-tailed t-tests against MICON, and a pooled repeated-measures
//! ANOVA for the counterfactual-term ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use micon_core::eval::{rm_anova, t_test_one_tailed};

use crate::error::{CliError, CliResult};

/// Row label of the reference method.
pub const REFERENCE: &str = "micon";
/// Row label of the ablation contrasted with the reference in the ANOVA.
pub const ABLATION: &str = "paclr_only";
pub const ALPHA: f64 = 0.05;

/// Per-seed accuracies of one method in one evaluation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracies {
    pub method: String,
    /// e.g. `post/NSB` or `raw/none`.
    pub setting: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsReference {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    #[serde(flatten)]
    pub runs: SeedAccuracies,
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub sd: f64,
    /// One-tailed test that the reference beats this row.
    pub vs_reference: Option<VsReference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAnova {
    /// Settings pooled as subjects.
    pub settings: Vec<String>,
    pub f: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub entries: Vec<ComparisonEntry>,
    pub ablation_anova: Option<AblationAnova>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < ALPHA {
        "*"
    } else {
        ""
    }
}

impl ComparisonReport {
    /// Aggregate runs; entries sharing a method and setting are merged. Every
    /// method compared within a setting must have the same number of seeds.
    pub fn build(runs: &[SeedAccuracies]) -> CliResult<Self> {
        let mut merged: BTreeMap<(String, String), SeedAccuracies> = BTreeMap::new();
        for r in runs {
            if r.seeds.len() != r.accuracies.len() || r.seeds.is_empty() {
                return Err(CliError::missing(format!(
                    "{} / {}: {} seeds but {} accuracies",
                    r.method,
                    r.setting,
                    r.seeds.len(),
                    r.accuracies.len()
                )));
            }
            let e = merged
                .entry((r.setting.clone(), r.method.clone()))
                .or_insert_with(|| SeedAccuracies {
                    method: r.method.clone(),
                    setting: r.setting.clone(),
                    seeds: Vec::new(),
                    accuracies: Vec::new(),
                });
            for (s, a) in r.seeds.iter().zip(&r.accuracies) {
                if e.seeds.contains(s) {
                    return Err(CliError::missing(format!("{} / {}: seed {s} reported twice", r.method, r.setting)));
                }
                e.seeds.push(*s);
                e.accuracies.push(*a);
            }
        }
        let mut by_setting: BTreeMap<String, Vec<SeedAccuracies>> = BTreeMap::new();
        for ((setting, _), r) in merged {
            by_setting.entry(setting).or_default().push(r);
        }
        let mut entries = Vec::new();
        for (setting, rows) in &by_setting {
            let n = rows[0].seeds.len();
            if let Some(r) = rows.iter().find(|r| r.seeds.len() != n) {
                return Err(CliError::missing(format!(
                    "setting {setting}: {} has {} seeds but {} has {n}",
                    r.method,
                    r.seeds.len(),
                    rows[0].method
                )));
            }
            let reference = rows.iter().find(|r| r.method == REFERENCE);
            for r in rows {
                let vs_reference = match reference {
                    Some(refr) if r.method != REFERENCE && n >= 2 => {
                        let t = t_test_one_tailed(&refr.accuracies, &r.accuracies)
                            .map_err(|e| CliError::config(format!("t-test for {}: {e}", r.method)))?;
                        Some(VsReference {
                            t: t.t,
                            dof: t.dof,
                            p: t.p,
                            significant: t.p < ALPHA,
                        })
                    }
                    _ => None,
                };
                entries.push(ComparisonEntry {
                    mean: mean(&r.accuracies),
                    sd: sd(&r.accuracies),
                    runs: r.clone(),
                    vs_reference,
                });
            }
        }
        let ablation_anova = Self::ablation(&entries)?;
        Ok(Self { entries, ablation_anova })
    }

    /// Settings are subjects and {reference, ablation} the two conditions,
    /// each cell a seed mean. Needs at least two settings with both methods.
    fn ablation(entries: &[ComparisonEntry]) -> CliResult<Option<AblationAnova>> {
        let mut cells: BTreeMap<&str, [Option<f64>; 2]> = BTreeMap::new();
        for e in entries {
            let slot = match e.runs.method.as_str() {
                REFERENCE => 0,
                ABLATION => 1,
                _ => continue,
            };
            cells.entry(&e.runs.setting).or_default()[slot] = Some(e.mean);
        }
        let rows: Vec<(&str, Vec<f64>)> = cells
            .into_iter()
            .filter_map(|(s, c)| Some((s, vec![c[0]?, c[1]?])))
            .collect();
        if rows.len() < 2 {
            return Ok(None);
        }
        let table: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
        let a = rm_anova(&table).map_err(|e| CliError::config(format!("ablation ANOVA: {e}")))?;
        Ok(Some(AblationAnova {
            settings: rows.iter().map(|r| r.0.to_string()).collect(),
            f: a.f,
            p: a.p,
            significant: a.p < ALPHA,
        }))
    }

    pub fn runs(&self) -> Vec<SeedAccuracies> {
        self.entries.iter().map(|e| e.runs.clone()).collect()
    }

    /// Methods as rows, settings as columns, cells `mean ± sd` in percent
    /// with stars for a significant gap to the reference.
    pub fn table(&self) -> String {
        let mut settings: Vec<&str> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !settings.contains(&e.runs.setting.as_str()) {
                settings.push(&e.runs.setting);
            }
            if !methods.contains(&e.runs.method.as_str()) {
                methods.push(&e.runs.method);
            }
        }
        let cell = |m: &str, s: &str| -> String {
            self.entries
                .iter()
                .find(|e| e.runs.method == m && e.runs.setting == s)
                .map_or_else(
                    || "-".to_string(),
                    |e| {
                        let star = e.vs_reference.as_ref().map_or("", |v| stars(v.p));
                        format!("{:.2} ± {:.2}{star}", 100.0 * e.mean, 100.0 * e.sd)
                    },
                )
        };
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("method".to_string())
            .chain(settings.iter().map(|s| s.to_string()))
            .collect()];
        for m in &methods {
            grid.push(
                std::iter::once(m.to_string())
                    .chain(settings.iter().map(|s| cell(m, s)))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in grid.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| {
                    let pad = w - c.chars().count();
                    if j == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        let _ = writeln!(out, "accuracy in percent, mean ± sd over seeds; * p < 0.05, ** p < 0.01, *** p < 0.001 (one-tailed t-test, {REFERENCE} greater)");
        if let Some(a) = &self.ablation_anova {
            let _ = writeln!(
                out,
                "{REFERENCE} vs {ABLATION} over {} settings: F = {:.3}, p = {:.4}{}",
                a.settings.len(),
                a.f,
                a.p,
                stars(a.p)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: &str, setting: &str, acc: &[f64]) -> SeedAccuracies {
        SeedAccuracies {
            method: method.into(),
            setting: setting.into(),
            seeds: (0..acc.len() as u64).collect(),
            accuracies: acc.to_vec(),
        }
    }

    #[test]
    fn means_and_stars_follow_the_accuracies() {
        let r = ComparisonReport::build(&[
            run("micon", "post/NSB", &[0.6, 0.62, 0.64]),
            run("simclr", "post/NSB", &[0.3, 0.32, 0.31]),
            run("clip", "post/NSB", &[0.6, 0.63, 0.62]),
        ])
        .unwrap();
        let simclr = r.entries.iter().find(|e| e.runs.method == "simclr").unwrap();
        assert!((simclr.mean - 0.31).abs() < 1e-12);
        assert!((simclr.sd - 0.01).abs() < 1e-12);
        let v = simclr.vs_reference.as_ref().unwrap();
        let direct = t_test_one_tailed(&[0.6, 0.62, 0.64], &[0.3, 0.32, 0.31]).unwrap();
        assert_eq!(v.p, direct.p);
        assert!(v.significant);
        let clip = r.entries.iter().find(|e| e.runs.method == "clip").unwrap();
        assert!(!clip.vs_reference.as_ref().unwrap().significant);
        let table = r.table();
        assert!(table.contains("31.00 ± 1.00***") || table.contains("31.00 ± 1.00**"), "{table}");
        assert!(table.lines().filter(|l| l.starts_with("micon")).count() == 1);
        assert!(r.entries.iter().find(|e| e.runs.method == "micon").unwrap().vs_reference.is_none());
    }

    #[test]
    fn mismatched_seed_counts_are_rejected() {
        let err = ComparisonReport::build(&[
            run("micon", "post/NSB", &[0.6, 0.62, 0.64]),
            run("simclr", "post/NSB", &[0.3, 0.32]),
        ])
        .unwrap_err();
        assert_eq!(err.code, CliError::MISSING);
    }

    #[test]
    fn single_run_has_one_row_without_tests() {
        let r = ComparisonReport::build(&[run("micon", "post/NSB", &[0.5])]).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].sd, 0.0);
        let table = r.table();
        assert_eq!(table.lines().filter(|l| l.starts_with("micon")).count(), 1);
        assert!(r.ablation_anova.is_none());
    }

    #[test]
    fn ablation_pools_settings() {
        let mut runs = Vec::new();
        for (s, a, b) in [("post/NSB", 0.6, 0.5), ("post/NSS", 0.4, 0.35), ("raw/NSB", 0.5, 0.42)] {
            runs.push(run("micon", s, &[a, a + 0.01]));
            runs.push(run("paclr_only", s, &[b, b + 0.01]));
        }
        let r = ComparisonReport::build(&runs).unwrap();
        let a = r.ablation_anova.unwrap();
        assert_eq!(a.settings.len(), 3);
        let direct = rm_anova(&[vec![0.605, 0.505], vec![0.405, 0.355], vec![0.505, 0.425]]).unwrap();
        assert!((a.f - direct.f).abs() < 1e-9);
    }

    #[test]
    fn merging_split_runs() {
        let r = ComparisonReport::build(&[
            run("micon", "post/NSB", &[0.6, 0.7]),
            run("simclr", "post/NSB", &[0.3, 0.4]),
        ])
        .unwrap();
        let again = ComparisonReport::build(&r.runs()).unwrap();
        assert_eq!(r, again);
    }
}
