//! Result aggregation: the CSV row format streamed by the grid runner, the
//! per-cell accuracy table, and the paired accuracy-gain comparison with
//! signed-rank significance.

use crate::error::{Error, Result};
use crate::experiment::{MethodId, RunResult};
use crate::stats::wilcoxon_signed_rank;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

pub const RESULTS_HEADER: &str = "seed,method,neg_fraction,n_l,epoch_curve,best_val_acc,status";

/// One CSV row. Floats print via `Display`, which round-trips exactly, so a
/// rewritten file is byte-identical to the original.
pub fn result_to_row(result: &RunResult) -> String {
    let curve: Vec<String> = result.epoch_accuracy.iter().map(|v| format!("{v}")).collect();
    let status = match result.failed_at {
        None => "ok".to_string(),
        Some(epoch) => format!("failed@{epoch}"),
    };
    format!(
        "{},{},{},{},{},{},{}",
        result.seed,
        result.method,
        result.neg_fraction,
        result.n_l,
        curve.join(";"),
        result.best_val_acc,
        status
    )
}

pub fn parse_result_row(line: &str) -> Result<RunResult> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 7 {
        return Err(Error::Summary(format!(
            "results row has {} columns, expected 7: {line:?}",
            fields.len()
        )));
    }
    let bad = |what: &str| Error::Summary(format!("unreadable {what} in results row {line:?}"));
    let epoch_accuracy = if fields[4].is_empty() {
        Vec::new()
    } else {
        fields[4]
            .split(';')
            .map(|v| v.parse::<f64>().map_err(|_| bad("epoch curve")))
            .collect::<Result<Vec<f64>>>()?
    };
    let failed_at = match fields[6] {
        "ok" => None,
        s => match s.strip_prefix("failed@") {
            Some(epoch) => Some(epoch.parse::<usize>().map_err(|_| bad("status"))?),
            None => return Err(bad("status")),
        },
    };
    Ok(RunResult {
        seed: fields[0].parse().map_err(|_| bad("seed"))?,
        method: MethodId::from_str(fields[1])?,
        neg_fraction: fields[2].parse().map_err(|_| bad("neg_fraction"))?,
        n_l: fields[3].parse().map_err(|_| bad("n_l"))?,
        epoch_accuracy,
        best_val_acc: fields[5].parse().map_err(|_| bad("best_val_acc"))?,
        failed_at,
    })
}

/// A paired method comparison evaluated at every grid point.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub treatment: MethodId,
    pub baseline: MethodId,
    pub name: String,
}

impl Comparison {
    pub fn new(treatment: MethodId, baseline: MethodId) -> Self {
        Self { treatment, baseline, name: format!("{treatment}_vs_{baseline}") }
    }
}

/// The two headline comparisons: the corrected semi-supervised model against
/// plain supervision and against uncorrected MixMatch.
pub fn default_comparisons() -> Vec<Comparison> {
    vec![
        Comparison::new(MethodId::MixMatchPbc, MethodId::Supervised),
        Comparison::new(MethodId::MixMatchPbc, MethodId::MixMatch),
    ]
}

/// Drops comparisons whose methods never appear in the results.
pub fn applicable_comparisons(results: &[RunResult], comparisons: &[Comparison]) -> Vec<Comparison> {
    let present: BTreeSet<MethodId> = results.iter().map(|r| r.method).collect();
    comparisons
        .iter()
        .filter(|c| present.contains(&c.treatment) && present.contains(&c.baseline))
        .cloned()
        .collect()
}

/// Best-accuracy statistics of one (method, imbalance, n_l) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStat {
    pub method: MethodId,
    pub neg_fraction: f64,
    pub n_l: usize,
    pub ok_count: usize,
    pub failed_count: usize,
    /// Mean best validation accuracy over finished runs; `None` if all failed.
    pub mean: Option<f64>,
    /// Sample standard deviation (n−1); 0 for a single run.
    pub std: Option<f64>,
}

/// One comparison at one grid point. `statistic`/`p_value` are `None` when
/// fewer than five paired seeds survived (the test is then uninformative).
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub neg_fraction: f64,
    pub n_l: usize,
    pub comparison: String,
    pub gain: Option<f64>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub n_used: usize,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cells: Vec<CellStat>,
    pub gains: Vec<GainRow>,
}

fn fraction_key(neg_fraction: f64) -> u64 {
    (neg_fraction * 1000.0).round() as u64
}

type CellKey = (u64, usize, usize);

fn cell_key(r: &RunResult) -> CellKey {
    (fraction_key(r.neg_fraction), r.n_l, r.method.index())
}

/// Aggregates run results into per-cell statistics and paired gains.
///
/// Failed runs count toward `failed_count` only; means, standard deviations
/// and the signed-rank pairing use finished runs. A comparison whose two
/// cells are not both present at some grid point is a contract violation and
/// errors, naming every missing cell. Results order never matters.
pub fn summarize(
    results: &[RunResult],
    comparisons: &[Comparison],
    p_threshold: f64,
) -> Result<Summary> {
    if !(p_threshold > 0.0 && p_threshold < 1.0) {
        return Err(Error::Config(format!("p threshold must lie in (0, 1); got {p_threshold}")));
    }
    let mut groups: BTreeMap<CellKey, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry(cell_key(r)).or_default().push(r);
    }
    // Canonical in-group order keeps float accumulation (and thus the whole
    // summary) independent of the order results arrived in.
    for runs in groups.values_mut() {
        runs.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.best_val_acc.total_cmp(&b.best_val_acc)));
    }

    let mut cells = Vec::with_capacity(groups.len());
    for (&(nf_key, n_l, method_index), runs) in &groups {
        let ok: Vec<f64> =
            runs.iter().filter(|r| r.failed_at.is_none()).map(|r| r.best_val_acc).collect();
        let failed_count = runs.len() - ok.len();
        let (mean, std) = if ok.is_empty() {
            (None, None)
        } else {
            let mean = ok.iter().sum::<f64>() / ok.len() as f64;
            let std = if ok.len() < 2 {
                0.0
            } else {
                let ss: f64 = ok.iter().map(|v| (v - mean) * (v - mean)).sum();
                (ss / (ok.len() - 1) as f64).sqrt()
            };
            (Some(mean), Some(std))
        };
        cells.push(CellStat {
            method: MethodId::ALL[method_index],
            neg_fraction: nf_key as f64 / 1000.0,
            n_l,
            ok_count: ok.len(),
            failed_count,
            mean,
            std,
        });
    }

    let points: BTreeSet<(u64, usize)> = groups.keys().map(|&(nf, nl, _)| (nf, nl)).collect();
    let by_key: BTreeMap<CellKey, &CellStat> =
        cells.iter().map(|c| ((fraction_key(c.neg_fraction), c.n_l, c.method.index()), c)).collect();

    let mut missing = Vec::new();
    let mut gains = Vec::new();
    for &(nf_key, n_l) in &points {
        for comparison in comparisons {
            let mut sides = Vec::new();
            for method in [comparison.treatment, comparison.baseline] {
                match by_key.get(&(nf_key, n_l, method.index())) {
                    Some(cell) => sides.push(*cell),
                    None => missing.push(format!(
                        "{method} at neg_fraction={}, n_l={n_l} (needed by {})",
                        nf_key as f64 / 1000.0,
                        comparison.name
                    )),
                }
            }
            let [treatment_cell, baseline_cell] = sides.as_slice() else { continue };

            let paired: Vec<(f64, f64)> = {
                let per_seed = |method: MethodId| -> BTreeMap<u64, f64> {
                    groups[&(nf_key, n_l, method.index())]
                        .iter()
                        .filter(|r| r.failed_at.is_none())
                        .map(|r| (r.seed, r.best_val_acc))
                        .collect()
                };
                let t = per_seed(comparison.treatment);
                let b = per_seed(comparison.baseline);
                t.iter().filter_map(|(seed, &tv)| b.get(seed).map(|&bv| (tv, bv))).collect()
            };
            let (t_vals, b_vals): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
            let (statistic, p_value, n_used, significant) =
                match wilcoxon_signed_rank(&t_vals, &b_vals) {
                    Ok(w) => (Some(w.statistic), Some(w.p_value), w.n_used, w.p_value < p_threshold),
                    Err(Error::InsufficientData(_)) => (None, None, 0, false),
                    Err(e) => return Err(e),
                };
            let gain = match (treatment_cell.mean, baseline_cell.mean) {
                (Some(t), Some(b)) => Some(t - b),
                _ => None,
            };
            gains.push(GainRow {
                neg_fraction: nf_key as f64 / 1000.0,
                n_l,
                comparison: comparison.name.clone(),
                gain,
                statistic,
                p_value,
                n_used,
                significant,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Summary(format!(
            "cannot compare against missing cells: {}",
            missing.join("; ")
        )));
    }
    Ok(Summary { cells, gains })
}

/// (ssdl, label balancing) coordinates of a method in the accuracy table.
fn table_coordinates(method: MethodId) -> (bool, bool) {
    (method.uses_unlabeled(), method.balanced())
}

fn yes_no(flag: bool) -> &'static str {
    if flag {
        "yes"
    } else {
        "no"
    }
}

fn opt4(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Accuracy table as CSV: one row per (ssdl, imbalance, balancing), mean/std/
/// failed-count columns per n_l. Rows order ssdl-off first, then by fraction,
/// balanced before unbalanced.
pub fn render_summary_csv(summary: &Summary) -> String {
    let n_ls: BTreeSet<usize> = summary.cells.iter().map(|c| c.n_l).collect();
    let mut out = String::from("ssdl,neg_fraction,pos_fraction,lb");
    for n_l in &n_ls {
        write!(out, ",mean_nl{n_l},std_nl{n_l},failed_nl{n_l}").expect("string write");
    }
    out.push('\n');

    // (ssdl, nf_key, !lb) sorts ssdl-off first and balanced rows first.
    let mut row_keys: BTreeSet<(bool, u64, bool)> = BTreeSet::new();
    let mut by_cell: BTreeMap<(bool, u64, bool, usize), &CellStat> = BTreeMap::new();
    for cell in &summary.cells {
        let (ssdl, lb) = table_coordinates(cell.method);
        let nf_key = fraction_key(cell.neg_fraction);
        row_keys.insert((ssdl, nf_key, !lb));
        by_cell.insert((ssdl, nf_key, !lb, cell.n_l), cell);
    }
    for &(ssdl, nf_key, not_lb) in &row_keys {
        write!(
            out,
            "{},{},{},{}",
            yes_no(ssdl),
            nf_key as f64 / 1000.0,
            (1000 - nf_key) as f64 / 1000.0,
            yes_no(!not_lb)
        )
        .expect("string write");
        for &n_l in &n_ls {
            match by_cell.get(&(ssdl, nf_key, not_lb, n_l)) {
                Some(cell) => write!(
                    out,
                    ",{},{},{}",
                    opt4(cell.mean),
                    opt4(cell.std),
                    cell.failed_count
                )
                .expect("string write"),
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Gain table as CSV, one row per (imbalance, comparison, n_l). Statistic and
/// p-value columns are empty when too few paired seeds finished.
pub fn render_gains_csv(summary: &Summary) -> String {
    let mut out =
        String::from("neg_fraction,pos_fraction,n_l,comparison,gain,wilcoxon_w,p_value,significant\n");
    for row in &summary.gains {
        let nf_key = fraction_key(row.neg_fraction);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.neg_fraction,
            (1000 - nf_key) as f64 / 1000.0,
            row.n_l,
            row.comparison,
            opt4(row.gain),
            row.statistic.map(|w| format!("{w}")).unwrap_or_default(),
            row.p_value.map(|p| format!("{p:.6}")).unwrap_or_default(),
            yes_no(row.significant)
        )
        .expect("string write");
    }
    out
}

/// Both tables as aligned, human-readable text.
pub fn render_summary_text(summary: &Summary) -> String {
    let n_ls: Vec<usize> = summary.cells.iter().map(|c| c.n_l).collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = String::from("Best validation accuracy, mean ± std (failed runs)\n\n");
    write!(out, "{:<6}{:<10}{:<10}", "ssdl", "neg/pos", "balance").expect("string write");
    for n_l in &n_ls {
        write!(out, "{:<22}", format!("n_l={n_l}")).expect("string write");
    }
    out.push('\n');

    let mut row_keys: BTreeSet<(bool, u64, bool)> = BTreeSet::new();
    let mut by_cell: BTreeMap<(bool, u64, bool, usize), &CellStat> = BTreeMap::new();
    for cell in &summary.cells {
        let (ssdl, lb) = table_coordinates(cell.method);
        let nf_key = fraction_key(cell.neg_fraction);
        row_keys.insert((ssdl, nf_key, !lb));
        by_cell.insert((ssdl, nf_key, !lb, cell.n_l), cell);
    }
    for &(ssdl, nf_key, not_lb) in &row_keys {
        let fractions = format!("{:.2}/{:.2}", nf_key as f64 / 1000.0, (1000 - nf_key) as f64 / 1000.0);
        write!(out, "{:<6}{:<10}{:<10}", yes_no(ssdl), fractions, yes_no(!not_lb))
            .expect("string write");
        for &n_l in &n_ls {
            let entry = match by_cell.get(&(ssdl, nf_key, not_lb, n_l)) {
                Some(cell) => match (cell.mean, cell.std) {
                    (Some(mean), Some(std)) => {
                        format!("{mean:.4} ± {std:.4} ({})", cell.failed_count)
                    }
                    _ => format!("all failed ({})", cell.failed_count),
                },
                None => "—".to_string(),
            };
            write!(out, "{entry:<22}").expect("string write");
        }
        out.push('\n');
    }

    out.push_str("\nAccuracy gains (two-sided signed-rank; * marks p < threshold)\n\n");
    write!(out, "{:<10}{:<30}", "neg/pos", "comparison").expect("string write");
    for n_l in &n_ls {
        write!(out, "{:<22}", format!("n_l={n_l}")).expect("string write");
    }
    out.push('\n');

    let mut gain_rows: BTreeSet<(u64, &str)> = BTreeSet::new();
    let mut by_gain: BTreeMap<(u64, &str, usize), &GainRow> = BTreeMap::new();
    for row in &summary.gains {
        let nf_key = fraction_key(row.neg_fraction);
        gain_rows.insert((nf_key, &row.comparison));
        by_gain.insert((nf_key, &row.comparison, row.n_l), row);
    }
    for &(nf_key, comparison) in &gain_rows {
        let fractions = format!("{:.2}/{:.2}", nf_key as f64 / 1000.0, (1000 - nf_key) as f64 / 1000.0);
        write!(out, "{fractions:<10}{comparison:<30}").expect("string write");
        for &n_l in &n_ls {
            let entry = match by_gain.get(&(nf_key, comparison, n_l)) {
                Some(row) => match (row.gain, row.p_value) {
                    (Some(gain), Some(p)) => {
                        let mark = if row.significant { "*" } else { "" };
                        format!("{gain:+.4} (p={p:.4}){mark}")
                    }
                    (Some(gain), None) => format!("{gain:+.4} (n/a)"),
                    _ => "n/a".to_string(),
                },
                None => "—".to_string(),
            };
            write!(out, "{entry:<22}").expect("string write");
        }
        out.push('\n');
    }
    out
}

/// Writes `summary.csv`, `gains.csv` and `summary.txt` under `out_dir`.
pub fn write_summary_files(out_dir: &Path, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("summary.csv"), render_summary_csv(summary))?;
    std::fs::write(out_dir.join("gains.csv"), render_gains_csv(summary))?;
    std::fs::write(out_dir.join("summary.txt"), render_summary_text(summary))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(seed: u64, method: MethodId, nf: f64, n_l: usize, best: f64) -> RunResult {
        RunResult {
            seed,
            method,
            neg_fraction: nf,
            n_l,
            epoch_accuracy: vec![best / 2.0, best],
            best_val_acc: best,
            failed_at: None,
        }
    }

    #[test]
    fn rows_round_trip() {
        let ok = result(3, MethodId::MixMatchPbc, 0.8, 15, 0.9375);
        assert_eq!(parse_result_row(&result_to_row(&ok)).unwrap(), ok);

        let failed = RunResult {
            epoch_accuracy: Vec::new(),
            best_val_acc: 0.0,
            failed_at: Some(7),
            ..result(1, MethodId::Supervised, 0.7, 10, 0.0)
        };
        assert_eq!(parse_result_row(&result_to_row(&failed)).unwrap(), failed);
    }

    #[test]
    fn row_floats_round_trip_exactly() {
        let mut r = result(0, MethodId::MixMatch, 0.5, 10, 0.0);
        r.epoch_accuracy = vec![0.1 + 0.2, 1.0 / 3.0, 61.0_f64.recip() * 43.0];
        r.best_val_acc = r.epoch_accuracy[2];
        let parsed = parse_result_row(&result_to_row(&r)).unwrap();
        assert_eq!(parsed, r);
        assert_eq!(result_to_row(&parsed), result_to_row(&r));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_result_row("1,supervised,0.5,10,0.5;0.6,0.6").is_err());
        assert!(parse_result_row("1,warp_drive,0.5,10,0.5,0.5,ok").is_err());
        assert!(parse_result_row("1,supervised,0.5,10,0.5,0.5,meh").is_err());
    }

    #[test]
    fn cell_statistics_skip_failed_runs() {
        let mut failed = result(3, MethodId::Supervised, 0.5, 10, 0.99);
        failed.failed_at = Some(0);
        failed.best_val_acc = 0.0;
        let results = vec![
            result(0, MethodId::Supervised, 0.5, 10, 0.8),
            result(1, MethodId::Supervised, 0.5, 10, 0.9),
            result(2, MethodId::Supervised, 0.5, 10, 1.0),
            failed,
        ];
        let summary = summarize(&results, &[], 0.1).unwrap();
        assert_eq!(summary.cells.len(), 1);
        let cell = &summary.cells[0];
        assert_eq!((cell.ok_count, cell.failed_count), (3, 1));
        assert!((cell.mean.unwrap() - 0.9).abs() < 1e-12);
        assert!((cell.std.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn missing_baseline_cell_is_an_error() {
        let results = vec![result(0, MethodId::MixMatchPbc, 0.8, 10, 0.9)];
        let comparisons = vec![Comparison::new(MethodId::MixMatchPbc, MethodId::Supervised)];
        let err = summarize(&results, &comparisons, 0.1).unwrap_err().to_string();
        assert!(err.contains("supervised"), "{err}");
        assert!(err.contains("0.8"), "{err}");
        assert!(err.contains("10"), "{err}");
    }

    #[test]
    fn constant_shift_is_significant() {
        let mut results = Vec::new();
        for seed in 0..6 {
            let base = 0.8 + seed as f64 * 0.01;
            results.push(result(seed, MethodId::Supervised, 0.8, 10, base));
            results.push(result(seed, MethodId::MixMatchPbc, 0.8, 10, base + 0.05));
        }
        let comparisons = vec![Comparison::new(MethodId::MixMatchPbc, MethodId::Supervised)];
        let summary = summarize(&results, &comparisons, 0.1).unwrap();
        assert_eq!(summary.gains.len(), 1);
        let gain = &summary.gains[0];
        assert!((gain.gain.unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(gain.statistic, Some(21.0));
        assert!((gain.p_value.unwrap() - 2.0 / 64.0).abs() < 1e-12);
        assert!(gain.significant);
        assert_eq!(gain.n_used, 6);
    }

    #[test]
    fn too_few_pairs_disable_the_test() {
        let mut results = Vec::new();
        for seed in 0..3 {
            results.push(result(seed, MethodId::Supervised, 0.5, 10, 0.8));
            results.push(result(seed, MethodId::MixMatchPbc, 0.5, 10, 0.85));
        }
        let comparisons = vec![Comparison::new(MethodId::MixMatchPbc, MethodId::Supervised)];
        let summary = summarize(&results, &comparisons, 0.1).unwrap();
        let gain = &summary.gains[0];
        assert_eq!(gain.statistic, None);
        assert_eq!(gain.p_value, None);
        assert!(!gain.significant);
        assert_eq!(gain.n_used, 0);
        assert!(gain.gain.is_some());
    }

    #[test]
    fn identical_methods_have_no_informative_pairs() {
        let mut results = Vec::new();
        for seed in 0..8 {
            let v = 0.8 + seed as f64 * 0.01;
            results.push(result(seed, MethodId::Supervised, 0.5, 10, v));
            results.push(result(seed, MethodId::MixMatch, 0.5, 10, v));
        }
        let comparisons = vec![Comparison::new(MethodId::MixMatch, MethodId::Supervised)];
        let summary = summarize(&results, &comparisons, 0.1).unwrap();
        assert_eq!(summary.gains[0].p_value, None);
        assert!(!summary.gains[0].significant);
    }

    #[test]
    fn summarize_is_order_insensitive() {
        let mut results = Vec::new();
        for seed in 0..6 {
            for (i, method) in MethodId::ALL.into_iter().enumerate() {
                results.push(result(seed, method, 0.7, 15, 0.7 + 0.01 * (seed + i as u64) as f64));
            }
        }
        let forward = summarize(&results, &default_comparisons(), 0.1).unwrap();
        results.reverse();
        let reversed = summarize(&results, &default_comparisons(), 0.1).unwrap();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn summary_csv_layout() {
        let mut results = Vec::new();
        for seed in 0..2 {
            for method in MethodId::ALL {
                for nf in [0.5, 0.8] {
                    for n_l in [10, 20] {
                        results.push(result(seed, method, nf, n_l, 0.8));
                    }
                }
            }
        }
        let summary = summarize(&results, &[], 0.1).unwrap();
        let csv = render_summary_csv(&summary);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "ssdl,neg_fraction,pos_fraction,lb,mean_nl10,std_nl10,failed_nl10,mean_nl20,std_nl20,failed_nl20"
        );
        let keys: Vec<String> = lines[1..]
            .iter()
            .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(
            keys,
            vec![
                "no,0.5,0.5,yes",
                "no,0.5,0.5,no",
                "no,0.8,0.2,yes",
                "no,0.8,0.2,no",
                "yes,0.5,0.5,yes",
                "yes,0.5,0.5,no",
                "yes,0.8,0.2,yes",
                "yes,0.8,0.2,no",
            ]
        );
        assert!(lines[1].contains("0.8000,0.0000,0"));
    }

    #[test]
    fn gains_csv_empty_fields_without_enough_pairs() {
        let mut results = Vec::new();
        for seed in 0..2 {
            results.push(result(seed, MethodId::Supervised, 0.8, 10, 0.8));
            results.push(result(seed, MethodId::MixMatchPbc, 0.8, 10, 0.9));
        }
        let comparisons = vec![Comparison::new(MethodId::MixMatchPbc, MethodId::Supervised)];
        let summary = summarize(&results, &comparisons, 0.1).unwrap();
        let csv = render_gains_csv(&summary);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "neg_fraction,pos_fraction,n_l,comparison,gain,wilcoxon_w,p_value,significant");
        assert_eq!(lines[1], "0.8,0.2,10,mixmatch_pbc_vs_supervised,0.1000,,,no");
    }

    #[test]
    fn applicable_comparisons_filters_absent_methods() {
        let results = vec![
            result(0, MethodId::Supervised, 0.5, 10, 0.8),
            result(0, MethodId::MixMatchPbc, 0.5, 10, 0.9),
        ];
        let kept = applicable_comparisons(&results, &default_comparisons());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].baseline, MethodId::Supervised);
    }

    #[test]
    fn summary_text_mentions_all_sections() {
        let mut results = Vec::new();
        for seed in 0..6 {
            for method in MethodId::ALL {
                let bump = if method == MethodId::MixMatchPbc { 0.05 } else { 0.0 };
                results.push(result(seed, method, 0.8, 10, 0.8 + bump + seed as f64 * 0.01));
            }
        }
        let summary = summarize(&results, &default_comparisons(), 0.1).unwrap();
        let text = render_summary_text(&summary);
        assert!(text.contains("0.80/0.20"), "{text}");
        assert!(text.contains("mixmatch_pbc_vs_supervised"), "{text}");
        assert!(text.contains('*'), "{text}");
    }
}
