//! File-level orchestration behind the command-line interface.
//!
//! Commands compose through files only: each function reads the declared
//! inputs, writes the declared outputs, and is deterministic given inputs
//! and seed, so deleting intermediates and rerunning reproduces a run
//! byte for byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::binning::{self, BinLabel, BinSpec, BinningError};
use crate::corpus::{self, CorpusError, Partition, Snr};
use crate::kfit::{self, FitError, KFit, PairedPoint};
use crate::noise::{self, NoiseError, NoiseGridError, SnrGrid};
use crate::report::{self, Provenance, ReportError};
use crate::scoring::{self, EditStats, ErrorRatePoint, ScoringError};
use crate::simrec::{self, SimConfig, SimError};
use crate::textmodel::{self, LmError, NgramModel};
use crate::util::quantile_sorted;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Grid(#[from] NoiseGridError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("utterances missing NLL (score them first or fill the nll column): {0:?}")]
    MissingNll(Vec<String>),
    #[error("exactly one LM source required: --arpa, --train-corpus, or NLLs already in the manifest")]
    NoLmSource,
    #[error("all utterances share one NLL ({0}); a median split is degenerate")]
    DegenerateSplit(f64),
    #[error("no hypotheses attached; pass --hyp-manifest or use inline hyp:<snr> columns")]
    NoHypotheses,
    #[error("no SNR reaches within {margin} of target error {target}; closest is e={closest:.3} at {snr}. Decode a wider or denser SNR grid")]
    NoSnrNearTarget {
        target: f64,
        margin: f64,
        closest: f64,
        snr: Snr,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where per-utterance NLLs come from.
#[derive(Clone, Debug)]
pub enum LmSource {
    /// Load a serialized model.
    Arpa(PathBuf),
    /// Train on a text file, one sentence per line.
    TrainCorpus { path: PathBuf, order: usize },
    /// Trust NLLs already present in the manifest (nats per token, words
    /// plus end marker).
    ExternalNll,
}

pub fn load_lm(source: &LmSource) -> Result<Option<NgramModel>, PipelineError> {
    match source {
        LmSource::Arpa(path) => Ok(Some(textmodel::load_arpa(path)?)),
        LmSource::TrainCorpus { path, order } => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let corpus: Vec<Vec<String>> = text.lines().map(corpus::tokenize).collect();
            Ok(Some(textmodel::train_kn(&corpus, *order)?))
        }
        LmSource::ExternalNll => Ok(None),
    }
}

/// Load a manifest and merge any sibling hypothesis manifests into it.
pub fn load_partition(
    manifest: &Path,
    hyp_manifests: &[PathBuf],
) -> Result<Partition, PipelineError> {
    let mut partition = corpus::load_manifest(manifest)?;
    for h in hyp_manifests {
        corpus::load_hypotheses(&mut partition, h)?;
    }
    Ok(partition)
}

/// Ensure every utterance carries an NLL, scoring with the LM when given.
pub fn ensure_nlls(
    partition: &mut Partition,
    source: &LmSource,
) -> Result<(), PipelineError> {
    if let Some(model) = load_lm(source)? {
        let scores = textmodel::score_partition(&model, partition)?;
        let map: BTreeMap<String, f64> = scores
            .into_iter()
            .map(|s| (s.utterance_id, s.nll))
            .collect();
        partition.set_nlls(&map);
    }
    let missing: Vec<String> = partition
        .utterances()
        .iter()
        .filter(|u| u.nll.is_none())
        .map(|u| u.id.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::MissingNll(missing))
    }
}

/// `score-nll`: fill the manifest's nll column from an LM.
pub fn cmd_score_nll(
    manifest: &Path,
    source: &LmSource,
    out: &Path,
) -> Result<usize, PipelineError> {
    if matches!(source, LmSource::ExternalNll) {
        return Err(PipelineError::NoLmSource);
    }
    let mut partition = corpus::load_manifest(manifest)?;
    ensure_nlls(&mut partition, source)?;
    corpus::save_manifest(&partition, out)?;
    Ok(partition.len())
}

/// `make-bins`: cutpoints from a scored manifest, serialized as JSON.
pub fn cmd_make_bins(
    manifest: &Path,
    n_bins: usize,
    trim: f64,
    equal_mass: bool,
    out: &Path,
) -> Result<BinSpec, PipelineError> {
    let partition = corpus::load_manifest(manifest)?;
    let missing: Vec<String> = partition
        .utterances()
        .iter()
        .filter(|u| u.nll.is_none())
        .map(|u| u.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingNll(missing));
    }
    let nlls: Vec<f64> = partition
        .utterances()
        .iter()
        .map(|u| u.nll.unwrap())
        .collect();
    let mut spec = if equal_mass {
        binning::make_cutpoints_equal_mass(&nlls, n_bins, trim)?
    } else {
        binning::make_cutpoints(&nlls, n_bins, trim)?
    };
    spec.source = partition.name.clone();
    write_binspec(&spec, out)?;
    Ok(spec)
}

pub fn write_binspec(spec: &BinSpec, path: &Path) -> Result<(), PipelineError> {
    let body = serde_json::to_string_pretty(spec).expect("binspec serializes");
    std::fs::write(path, body + "\n").map_err(io_err(path))
}

pub fn read_binspec(path: &Path) -> Result<BinSpec, PipelineError> {
    let body = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&body).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// `assign-bins`: one `id<TAB>bin` row per utterance.
pub fn cmd_assign_bins(
    manifest: &Path,
    binspec: &Path,
    out: &Path,
) -> Result<usize, PipelineError> {
    let partition = corpus::load_manifest(manifest)?;
    let spec = read_binspec(binspec)?;
    let assignments = spec.assign_partition(&partition)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out).map_err(io_err(out))?);
    writeln!(w, "id\tbin").map_err(io_err(out))?;
    for a in &assignments {
        writeln!(w, "{}\t{}", a.utterance_id, a.bin).map_err(io_err(out))?;
    }
    w.flush().map_err(io_err(out))?;
    Ok(assignments.len())
}

/// `corrupt`: noisy copies of every utterance at every grid SNR.
pub fn cmd_corrupt(
    manifest: &Path,
    grid: &SnrGrid,
    seed: u64,
    out_dir: &Path,
) -> Result<usize, PipelineError> {
    let partition = corpus::load_manifest(manifest)?;
    let files = noise::corrupt_partition(&partition, grid, seed, out_dir)?;
    Ok(files.len())
}

/// `score-wer`: pooled error rates per (system, partition, bin, snr) cell,
/// including whole-partition `all` rows. Bin rows appear when a bin spec is
/// given; they require NLLs on every utterance.
pub fn cmd_score_wer(
    manifest: &Path,
    hyp_manifests: &[PathBuf],
    binspec: Option<&Path>,
    system: &str,
    partition_name: Option<&str>,
    out: &Path,
) -> Result<Vec<ErrorRatePoint>, PipelineError> {
    let mut partition = load_partition(manifest, hyp_manifests)?;
    if let Some(name) = partition_name {
        partition.name = name.to_string();
    }
    let spec = binspec.map(read_binspec).transpose()?;
    let points = score_partition_wer(&partition, spec.as_ref(), system)?;
    scoring::write_wer_csv(&points, out)?;
    Ok(points)
}

/// In-memory core of `score-wer`.
pub fn score_partition_wer(
    partition: &Partition,
    spec: Option<&BinSpec>,
    system: &str,
) -> Result<Vec<ErrorRatePoint>, PipelineError> {
    if partition.snr_conditions().is_empty() {
        return Err(PipelineError::NoHypotheses);
    }
    let bins: Option<BTreeMap<&str, BinLabel>> = match spec {
        Some(s) => {
            let assignments = s.assign_partition(partition)?;
            Some(
                partition
                    .utterances()
                    .iter()
                    .zip(&assignments)
                    .map(|(u, a)| (u.id.as_str(), a.bin))
                    .collect(),
            )
        }
        None => None,
    };
    let mut grouped: BTreeMap<(BinLabel, Snr), Vec<EditStats>> = BTreeMap::new();
    for u in partition.utterances() {
        for (&snr, hyp) in &u.hypotheses {
            let stats = scoring::align(&u.reference, hyp)?;
            grouped.entry((BinLabel::All, snr)).or_default().push(stats);
            if let Some(map) = &bins {
                grouped.entry((map[u.id.as_str()], snr)).or_default().push(stats);
            }
        }
    }
    Ok(scoring::pool_cells(system, &partition.name, &grouped)?)
}

/// `fit-k`: fit every (system, partition, context bin) group found in a WER
/// table; with more than one system, add pooled (`all`) and mean
/// (`all-mean`) aggregate rows per partition.
pub fn cmd_fit_k(
    wer_csv: &Path,
    context_bins: &[BinLabel],
    n_boot: usize,
    seed: u64,
    log_space: bool,
    binspec: Option<&Path>,
    out: &Path,
) -> Result<Vec<KFit>, PipelineError> {
    let wer = scoring::read_wer_csv(wer_csv)?;
    let hash = binspec
        .map(read_binspec)
        .transpose()?
        .map(|s| s.hash());
    let fits = fit_all(&wer, context_bins, n_boot, seed, log_space, hash)?;
    kfit::write_kfits_json(&fits, out)?;
    Ok(fits)
}

/// In-memory core of `fit-k`.
pub fn fit_all(
    wer: &[ErrorRatePoint],
    context_bins: &[BinLabel],
    n_boot: usize,
    seed: u64,
    log_space: bool,
    binspec_hash: Option<String>,
) -> Result<Vec<KFit>, PipelineError> {
    let mut systems: Vec<&str> = wer.iter().map(|p| p.system.as_str()).collect();
    systems.sort();
    systems.dedup();
    let mut partitions: Vec<&str> = wer.iter().map(|p| p.partition.as_str()).collect();
    partitions.sort();
    partitions.dedup();

    let mut fits: Vec<KFit> = Vec::new();
    for partition in &partitions {
        for &bin in context_bins {
            let mut per_system: Vec<KFit> = Vec::new();
            for system in &systems {
                let points = kfit::paired_points(wer, system, partition, bin);
                if points.is_empty() {
                    continue;
                }
                per_system.push(kfit::fit_with_ci(
                    system,
                    partition,
                    bin,
                    &points,
                    n_boot,
                    seed,
                    log_space,
                    binspec_hash.clone(),
                )?);
            }
            if per_system.len() > 1 {
                // Pooled refit: micro-average the cells across systems,
                // then fit as if they were one recognizer.
                let pooled = pool_across_systems(wer, partition, bin);
                if !pooled.is_empty() {
                    fits.push(kfit::fit_with_ci(
                        "all",
                        partition,
                        bin,
                        &pooled,
                        n_boot,
                        seed,
                        log_space,
                        binspec_hash.clone(),
                    )?);
                }
                // Mean of the per-system estimates; descriptive, no
                // bootstrap of its own (n_boot = 0, n_points = systems).
                let n = per_system.len() as f64;
                fits.push(KFit {
                    system: "all-mean".into(),
                    partition: partition.to_string(),
                    context_bin: bin,
                    k: per_system.iter().map(|f| f.k).sum::<f64>() / n,
                    ci_low: per_system.iter().map(|f| f.ci_low).sum::<f64>() / n,
                    ci_high: per_system.iter().map(|f| f.ci_high).sum::<f64>() / n,
                    n_points: per_system.len(),
                    n_boot: 0,
                    seed,
                    excluded_points: 0,
                    binspec_hash: binspec_hash.clone(),
                });
            }
            fits.extend(per_system);
        }
    }
    fits.sort_by(|a, b| {
        (&a.partition, &a.system, a.context_bin).cmp(&(&b.partition, &b.system, b.context_bin))
    });
    Ok(fits)
}

/// Micro-average paired points across systems for one (partition, bin).
fn pool_across_systems(
    wer: &[ErrorRatePoint],
    partition: &str,
    context_bin: BinLabel,
) -> Vec<PairedPoint> {
    let mut cells: BTreeMap<(BinLabel, Snr), (f64, u64)> = BTreeMap::new();
    for p in wer {
        if p.partition != partition || (p.bin != BinLabel::Zp && p.bin != context_bin) {
            continue;
        }
        let entry = cells.entry((p.bin, p.snr)).or_insert((0.0, 0));
        entry.0 += p.e * p.n_ref_words as f64;
        entry.1 += p.n_ref_words;
    }
    let rate = |bin: BinLabel, snr: Snr| {
        cells
            .get(&(bin, snr))
            .map(|&(weighted, n)| weighted / n as f64)
    };
    let mut snrs: Vec<Snr> = cells.keys().map(|&(_, snr)| snr).collect();
    snrs.sort();
    snrs.dedup();
    snrs.into_iter()
        .filter_map(|snr| {
            let e_i = rate(BinLabel::Zp, snr)?;
            let e_c = rate(context_bin, snr)?;
            Some(PairedPoint { snr, e_i, e_c })
        })
        .collect()
}

/// One log-linear baseline fit per SNR condition.
#[derive(Clone, Debug, Serialize)]
pub struct KlakowRow {
    pub snr: Snr,
    pub a: f64,
    pub b: f64,
    pub n_points: usize,
    pub excluded: usize,
}

/// `fit-klakow`: per-utterance (NLL, error rate) points, one fit per SNR.
/// Utterance rates are clamped to 1 so the log transform stays defined.
pub fn cmd_fit_klakow(
    manifest: &Path,
    hyp_manifests: &[PathBuf],
    source: &LmSource,
    out: &Path,
) -> Result<Vec<KlakowRow>, PipelineError> {
    let mut partition = load_partition(manifest, hyp_manifests)?;
    ensure_nlls(&mut partition, source)?;
    let rows = fit_klakow_per_snr(&partition)?;
    let body = serde_json::to_string_pretty(&rows).expect("rows serialize");
    std::fs::write(out, body + "\n").map_err(io_err(out))?;
    Ok(rows)
}

/// In-memory core of `fit-klakow`.
pub fn fit_klakow_per_snr(partition: &Partition) -> Result<Vec<KlakowRow>, PipelineError> {
    let snrs = partition.snr_conditions();
    if snrs.is_empty() {
        return Err(PipelineError::NoHypotheses);
    }
    let mut rows = Vec::new();
    for snr in snrs {
        let mut points: Vec<(f64, f64)> = Vec::new();
        for u in partition.utterances() {
            if let Some(hyp) = u.hypotheses.get(&snr) {
                let stats = scoring::align(&u.reference, hyp)?;
                points.push((
                    u.nll.expect("ensure_nlls ran"),
                    stats.rate().min(1.0),
                ));
            }
        }
        let (fit, excluded) = kfit::fit_klakow(&points)?;
        rows.push(KlakowRow {
            snr,
            a: fit.a,
            b: fit.b,
            n_points: points.len() - excluded,
            excluded,
        });
    }
    Ok(rows)
}

/// `simulate`: synthetic reference manifest, per-SNR hypothesis manifests,
/// and the bin spec the synthetic NLLs align to.
pub fn cmd_simulate(
    config: &SimConfig,
    grid: &SnrGrid,
    out_dir: &Path,
) -> Result<simrec::SimOutput, PipelineError> {
    let out = simrec::simulate(config, grid)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    // Reference manifest without hypotheses; those live in sibling files.
    let mut refs_only = out.partition.clone();
    refs_only = Partition::new(
        refs_only.name.clone(),
        refs_only
            .utterances()
            .iter()
            .map(|u| {
                let mut u = u.clone();
                u.hypotheses.clear();
                u
            })
            .collect(),
    )?;
    corpus::save_manifest(&refs_only, &out_dir.join("manifest.tsv"))?;
    for &snr in grid.snrs() {
        corpus::save_hypotheses(
            &out.partition,
            Snr::Db(snr),
            &out_dir.join(format!("hyp_{snr}.tsv")),
        )?;
    }
    write_binspec(&out.binspec, &out_dir.join("binspec.json"))?;
    Ok(out)
}

/// `report`: assemble WER tables, fits, and proportions into the report
/// directory.
pub fn cmd_report(
    wer_csv: &Path,
    kfit_jsons: &[PathBuf],
    binspec: &Path,
    manifests: &[PathBuf],
    seed: u64,
    n_boot: usize,
    out_dir: &Path,
) -> Result<(), PipelineError> {
    let wer = scoring::read_wer_csv(wer_csv)?;
    let spec = read_binspec(binspec)?;
    let mut fits = Vec::new();
    for path in kfit_jsons {
        fits.extend(kfit::read_kfits_json(path)?);
    }
    let mut proportions = Vec::new();
    for path in manifests {
        let partition = corpus::load_manifest(path)?;
        proportions.push(binning::proportions(&spec, &partition)?);
    }
    let run = report::build_report(&spec, wer, fits, proportions, Provenance::new(seed, n_boot))?;
    report::write_report(&run, out_dir)?;
    Ok(())
}

/// Result of the simplified three-step recipe.
#[derive(Clone, Debug, Serialize)]
pub struct QuickK {
    pub k: f64,
    /// SNR condition whose high-NLL error rate sat closest to the target.
    pub snr: Snr,
    /// Pooled error rate of the less predictable (high-NLL) half.
    pub e_high_nll: f64,
    /// Pooled error rate of the more predictable (low-NLL) half.
    pub e_low_nll: f64,
    pub median_nll: f64,
    pub n_high: usize,
    pub n_low: usize,
}

/// Margin around the target error within which an SNR must land.
pub const QUICK_K_MARGIN: f64 = 0.15;

/// Three-step recipe: split at the NLL median, pick the SNR where the
/// high-NLL half errs closest to `target_error`, and return the point-wise
/// log-error ratio there.
pub fn quick_k(partition: &Partition, target_error: f64) -> Result<QuickK, PipelineError> {
    let missing: Vec<String> = partition
        .utterances()
        .iter()
        .filter(|u| u.nll.is_none())
        .map(|u| u.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingNll(missing));
    }
    let mut nlls: Vec<f64> = partition
        .utterances()
        .iter()
        .map(|u| u.nll.unwrap())
        .collect();
    nlls.sort_by(f64::total_cmp);
    let median = quantile_sorted(&nlls, 0.5);
    let high: Vec<&corpus::Utterance> = partition
        .utterances()
        .iter()
        .filter(|u| u.nll.unwrap() > median)
        .collect();
    let low: Vec<&corpus::Utterance> = partition
        .utterances()
        .iter()
        .filter(|u| u.nll.unwrap() <= median)
        .collect();
    if high.is_empty() || low.is_empty() {
        return Err(PipelineError::DegenerateSplit(median));
    }
    let snrs = partition.snr_conditions();
    if snrs.is_empty() {
        return Err(PipelineError::NoHypotheses);
    }

    let pooled = |utts: &[&corpus::Utterance], snr: Snr| -> Result<Option<f64>, PipelineError> {
        let mut stats = Vec::new();
        for u in utts {
            if let Some(hyp) = u.hypotheses.get(&snr) {
                stats.push(scoring::align(&u.reference, hyp)?);
            }
        }
        if stats.is_empty() {
            return Ok(None);
        }
        Ok(Some(scoring::pool(stats.iter())?.0))
    };

    let mut best: Option<(f64, Snr, f64, f64)> = None; // (|diff|, snr, e_hi, e_lo)
    for &snr in &snrs {
        let (Some(e_hi), Some(e_lo)) = (pooled(&high, snr)?, pooled(&low, snr)?) else {
            continue;
        };
        let diff = (e_hi - target_error).abs();
        if best.map_or(true, |(d, ..)| diff < d) {
            best = Some((diff, snr, e_hi, e_lo));
        }
    }
    let (diff, snr, e_hi, e_lo) = best.ok_or(PipelineError::NoHypotheses)?;
    if diff > QUICK_K_MARGIN {
        return Err(PipelineError::NoSnrNearTarget {
            target: target_error,
            margin: QUICK_K_MARGIN,
            closest: e_hi,
            snr,
        });
    }
    Ok(QuickK {
        k: kfit::pointwise_k(e_hi, e_lo)?,
        snr,
        e_high_nll: e_hi,
        e_low_nll: e_lo,
        median_nll: median,
        n_high: high.len(),
        n_low: low.len(),
    })
}

/// `quick-k` over files.
pub fn cmd_quick_k(
    manifest: &Path,
    hyp_manifests: &[PathBuf],
    source: &LmSource,
    target_error: f64,
    out: Option<&Path>,
) -> Result<QuickK, PipelineError> {
    let mut partition = load_partition(manifest, hyp_manifests)?;
    ensure_nlls(&mut partition, source)?;
    let result = quick_k(&partition, target_error)?;
    if let Some(path) = out {
        let body = serde_json::to_string_pretty(&result).expect("quick-k serializes");
        std::fs::write(path, body + "\n").map_err(io_err(path))?;
    }
    Ok(result)
}
