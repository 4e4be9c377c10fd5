//! Assemble one run's outputs into table and figure files.
//!
//! Layout written by [`write_report`]:
//!
//! ```text
//! report/
//!   wer.csv              pooled error rates per (system, partition, bin, snr)
//!   wer.txt              the same, aligned, rates as percentages
//!   k.csv                fitted exponents with bootstrap intervals
//!   k.txt                the same, aligned, two decimals
//!   proportions.csv      bin occupancy per partition
//!   proportions.txt      the same, aligned, percentages
//!   fig_acc_ratio.csv    accuracy transfer curves sampled per fitted k
//!   fig_pointwise_k.csv  per-SNR point-wise k against isolated rates
//!   run.json             provenance: seeds, bin spec, tool version
//! ```
//!
//! CSV files carry full-precision values for machines; the `.txt` siblings
//! render percentages to one decimal and k to two, rounding half to even.
//! Everything is sorted and rendered deterministically: identical inputs
//! yield byte-identical directories.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

use crate::binning::{BinLabel, BinSpec, Proportions};
use crate::kfit::{paired_points, pointwise_k, KFit};
use crate::scoring::ErrorRatePoint;
use crate::util::{csv_field, fixed_half_even, percent1};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("bin-spec hash mismatch: run uses {expected}, fit for {system}/{partition} carries {got}; refusing to mix runs")]
    MixedBinSpec {
        expected: String,
        got: String,
        system: String,
        partition: String,
    },
    #[error("k row {system}/{partition}/{context_bin} has no matching error-rate cells for both ZP and {context_bin}")]
    MissingSourceCells {
        system: String,
        partition: String,
        context_bin: BinLabel,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    pub n_boot: usize,
}

impl Provenance {
    pub fn new(seed: u64, n_boot: usize) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            n_boot,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub wer: Vec<ErrorRatePoint>,
    pub kfits: Vec<KFit>,
    pub proportions: Vec<Proportions>,
    pub binspec: BinSpec,
    pub binspec_hash: String,
    pub provenance: Provenance,
}

/// Validate and sort one run's outputs.
///
/// Every fit must reference existing error-rate cells, and any fit stamped
/// with a bin-spec hash must match the spec of this run; mixing artifacts
/// from different binnings is the one unrecoverable aggregation mistake.
pub fn build_report(
    binspec: &BinSpec,
    mut wer: Vec<ErrorRatePoint>,
    mut kfits: Vec<KFit>,
    mut proportions: Vec<Proportions>,
    provenance: Provenance,
) -> Result<RunReport, ReportError> {
    let hash = binspec.hash();
    for fit in &kfits {
        if let Some(h) = &fit.binspec_hash {
            if *h != hash {
                return Err(ReportError::MixedBinSpec {
                    expected: hash,
                    got: h.clone(),
                    system: fit.system.clone(),
                    partition: fit.partition.clone(),
                });
            }
        }
        let has = |bin: BinLabel| {
            wer.iter()
                .any(|p| p.system == fit.system && p.partition == fit.partition && p.bin == bin)
        };
        // Aggregate rows fit on pooled cells; their sources are the
        // per-system rows validated on their own fits.
        let aggregate = fit.system == "all" || fit.system == "all-mean";
        if !aggregate && (!has(BinLabel::Zp) || !has(fit.context_bin)) {
            return Err(ReportError::MissingSourceCells {
                system: fit.system.clone(),
                partition: fit.partition.clone(),
                context_bin: fit.context_bin,
            });
        }
    }
    wer.sort_by(|a, b| {
        (&a.partition, a.bin, &a.system, a.snr).cmp(&(&b.partition, b.bin, &b.system, b.snr))
    });
    kfits.sort_by(|a, b| {
        (&a.partition, &a.system, a.context_bin).cmp(&(&b.partition, &b.system, b.context_bin))
    });
    proportions.sort_by(|a, b| a.partition.cmp(&b.partition));
    Ok(RunReport {
        wer,
        kfits,
        proportions,
        binspec: binspec.clone(),
        binspec_hash: hash,
        provenance,
    })
}

fn write_file(path: &Path, body: &str) -> Result<(), ReportError> {
    std::fs::write(path, body).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            let _ = write!(line, "{:>width$}", cell, width = widths[i]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Write every report file into `dir` (created if needed).
pub fn write_report(report: &RunReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    // wer.csv / wer.txt
    crate::scoring::write_wer_csv(&report.wer, &dir.join("wer.csv")).map_err(|e| match e {
        crate::scoring::ScoringError::Io { path, source } => ReportError::Io { path, source },
        other => ReportError::Io {
            path: dir.join("wer.csv"),
            source: std::io::Error::other(other.to_string()),
        },
    })?;
    let mut rows = vec![vec![
        "partition".to_string(),
        "bin".into(),
        "system".into(),
        "snr".into(),
        "e%".into(),
        "ref_words".into(),
        "clamped".into(),
    ]];
    for p in &report.wer {
        rows.push(vec![
            p.partition.clone(),
            p.bin.to_string(),
            p.system.clone(),
            p.snr.to_string(),
            percent1(p.e),
            p.n_ref_words.to_string(),
            if p.clamped { "yes".into() } else { String::new() },
        ]);
    }
    write_file(&dir.join("wer.txt"), &aligned(&rows))?;

    // k.csv / k.txt
    let mut csv = String::from("partition,system,context_bin,k,ci_low,ci_high,n_points,n_boot,excluded\n");
    for f in &report.kfits {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&f.partition),
            csv_field(&f.system),
            f.context_bin,
            f.k,
            f.ci_low,
            f.ci_high,
            f.n_points,
            f.n_boot,
            f.excluded_points
        );
    }
    write_file(&dir.join("k.csv"), &csv)?;
    let mut rows = vec![vec![
        "partition".to_string(),
        "system".into(),
        "bin".into(),
        "k".into(),
        "95% CI".into(),
    ]];
    for f in &report.kfits {
        rows.push(vec![
            f.partition.clone(),
            f.system.clone(),
            f.context_bin.to_string(),
            fixed_half_even(f.k, 2),
            format!(
                "[{}, {}]",
                fixed_half_even(f.ci_low, 2),
                fixed_half_even(f.ci_high, 2)
            ),
        ]);
    }
    write_file(&dir.join("k.txt"), &aligned(&rows))?;

    // proportions.csv / proportions.txt
    let labels = report.binspec.labels();
    let mut csv = String::from("partition");
    for l in &labels {
        let _ = write!(csv, ",{l}");
    }
    csv.push_str(",total\n");
    let mut rows = vec![{
        let mut h = vec!["partition".to_string()];
        h.extend(labels.iter().map(|l| format!("{l}%")));
        h.push("total%".into());
        h
    }];
    for p in &report.proportions {
        let _ = write!(csv, "{}", csv_field(&p.partition));
        let mut row = vec![p.partition.clone()];
        for &(_, frac) in &p.bins {
            let _ = write!(csv, ",{frac}");
            row.push(percent1(frac));
        }
        let _ = writeln!(csv, ",{}", p.total);
        row.push(percent1(p.total));
        rows.push(row);
    }
    write_file(&dir.join("proportions.csv"), &csv)?;
    write_file(&dir.join("proportions.txt"), &aligned(&rows))?;

    // fig_acc_ratio.csv: accuracy transfer curve per fitted k.
    let mut csv = String::from("p_i,p_c,k\n");
    for f in &report.kfits {
        for i in 0..=200 {
            let p_i = i as f64 / 200.0;
            let p_c = crate::kfit::context_accuracy(p_i, f.k);
            let _ = writeln!(csv, "{p_i},{p_c},{}", f.k);
        }
    }
    write_file(&dir.join("fig_acc_ratio.csv"), &csv)?;

    // fig_pointwise_k.csv: per-SNR estimates over all (system, partition,
    // context bin) groups; boundary rates have no point-wise k and are
    // skipped.
    let mut csv = String::from("snr,e_i,e_c,k_pointwise\n");
    let mut groups: Vec<(String, String)> = report
        .wer
        .iter()
        .map(|p| (p.system.clone(), p.partition.clone()))
        .collect();
    groups.sort();
    groups.dedup();
    for (system, partition) in &groups {
        for bin in [BinLabel::Hp, BinLabel::Lp] {
            for pp in paired_points(&report.wer, system, partition, bin) {
                if let Ok(k) = pointwise_k(pp.e_i, pp.e_c) {
                    let _ = writeln!(csv, "{},{},{},{k}", pp.snr, pp.e_i, pp.e_c);
                }
            }
        }
    }
    write_file(&dir.join("fig_pointwise_k.csv"), &csv)?;

    // run.json provenance.
    #[derive(Serialize)]
    struct RunJson<'a> {
        tool_version: &'a str,
        seed: u64,
        n_boot: usize,
        binspec: &'a BinSpec,
        binspec_hash: &'a str,
        systems: Vec<&'a str>,
        partitions: Vec<&'a str>,
        n_wer_cells: usize,
        n_k_fits: usize,
        clamped_cells: usize,
        excluded_points_total: usize,
    }
    let mut systems: Vec<&str> = report.wer.iter().map(|p| p.system.as_str()).collect();
    systems.sort();
    systems.dedup();
    let mut partitions: Vec<&str> = report.wer.iter().map(|p| p.partition.as_str()).collect();
    partitions.sort();
    partitions.dedup();
    let run = RunJson {
        tool_version: &report.provenance.tool_version,
        seed: report.provenance.seed,
        n_boot: report.provenance.n_boot,
        binspec: &report.binspec,
        binspec_hash: &report.binspec_hash,
        systems,
        partitions,
        n_wer_cells: report.wer.len(),
        n_k_fits: report.kfits.len(),
        clamped_cells: report.wer.iter().filter(|p| p.clamped).count(),
        excluded_points_total: report.kfits.iter().map(|f| f.excluded_points).sum(),
    };
    let body = serde_json::to_string_pretty(&run).expect("run.json serializes");
    write_file(&dir.join("run.json"), &(body + "\n"))
}
