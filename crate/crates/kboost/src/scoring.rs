//! Word error rates: edit-distance alignment and pooled per-cell rates.
//!
//! Alignment is Levenshtein with unit costs. Cell rates are micro-averages:
//! total edits over total reference words, pooled over the utterances of a
//! (system, partition, bin, SNR) cell, then clamped to 1. Clamping happens
//! at the pooled cell, never per utterance, and is flagged so reports can
//! call out insertion-heavy cells.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::binning::BinLabel;
use crate::corpus::Snr;
use crate::util::csv_field;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("cannot pool an empty group")]
    EmptyGroup,
    #[error("{path}:{line}: bad wer row: {msg}")]
    BadRow {
        path: std::path::PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Alignment counts for one reference/hypothesis pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditStats {
    pub substitutions: u64,
    pub insertions: u64,
    pub deletions: u64,
    pub ref_len: u64,
}

impl EditStats {
    pub fn edits(&self) -> u64 {
        self.substitutions + self.insertions + self.deletions
    }

    /// Unclamped per-pair error rate.
    pub fn rate(&self) -> f64 {
        self.edits() as f64 / self.ref_len as f64
    }
}

/// Minimal-edit alignment with unit costs.
///
/// Ties prefer a substitution over an insertion-plus-deletion pair, so
/// equal-length mismatches count as pure substitutions.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<EditStats, ScoringError> {
    if reference.is_empty() {
        return Err(ScoringError::EmptyReference);
    }
    let n = reference.len();
    let m = hypothesis.len();
    // cost[i][j]: distance between ref[..i] and hyp[..j].
    let mut cost = vec![vec![0u32; m + 1]; n + 1];
    for i in 0..=n {
        cost[i][0] = i as u32;
    }
    for j in 0..=m {
        cost[0][j] = j as u32;
    }
    for i in 1..=n {
        for j in 1..=m {
            let hit = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = cost[i - 1][j - 1] + if hit { 0 } else { 1 };
            let del = cost[i - 1][j] + 1;
            let ins = cost[i][j - 1] + 1;
            cost[i][j] = diag.min(del).min(ins);
        }
    }
    // Backtrace, preferring the diagonal on ties.
    let mut stats = EditStats {
        ref_len: n as u64,
        ..EditStats::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let hit = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let step = if hit { 0 } else { 1 };
            if cost[i][j] == cost[i - 1][j - 1] + step {
                if !hit {
                    stats.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    Ok(stats)
}

/// Pooled error rate for one table cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRatePoint {
    pub system: String,
    pub partition: String,
    pub bin: BinLabel,
    pub snr: Snr,
    /// Micro-averaged rate, clamped to [0, 1].
    pub e: f64,
    pub n_ref_words: u64,
    /// True when the raw pooled rate exceeded 1 and was clamped.
    pub clamped: bool,
}

/// Micro-average a nonempty group of alignment counts.
pub fn pool<'a, I>(stats: I) -> Result<(f64, u64, bool), ScoringError>
where
    I: IntoIterator<Item = &'a EditStats>,
{
    let mut edits = 0u64;
    let mut ref_words = 0u64;
    let mut any = false;
    for s in stats {
        edits += s.edits();
        ref_words += s.ref_len;
        any = true;
    }
    if !any || ref_words == 0 {
        return Err(ScoringError::EmptyGroup);
    }
    let raw = edits as f64 / ref_words as f64;
    Ok((raw.min(1.0), ref_words, raw > 1.0))
}

/// Pool alignment counts into `ErrorRatePoint`s, one per
/// (system, partition, bin, snr) cell, sorted.
pub fn pool_cells(
    system: &str,
    partition: &str,
    grouped: &BTreeMap<(BinLabel, Snr), Vec<EditStats>>,
) -> Result<Vec<ErrorRatePoint>, ScoringError> {
    let mut out = Vec::with_capacity(grouped.len());
    for ((bin, snr), stats) in grouped {
        let (e, n_ref_words, clamped) = pool(stats)?;
        out.push(ErrorRatePoint {
            system: system.to_string(),
            partition: partition.to_string(),
            bin: *bin,
            snr: *snr,
            e,
            n_ref_words,
            clamped,
        });
    }
    Ok(out)
}

pub const WER_CSV_HEADER: &str = "system,partition,bin,snr,e,n_ref_words,clamped";

pub fn write_wer_csv(points: &[ErrorRatePoint], path: &Path) -> Result<(), ScoringError> {
    let io = |source| ScoringError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "{WER_CSV_HEADER}").map_err(io)?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&p.system),
            csv_field(&p.partition),
            p.bin,
            p.snr,
            p.e,
            p.n_ref_words,
            u8::from(p.clamped),
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_wer_csv(path: &Path) -> Result<Vec<ErrorRatePoint>, ScoringError> {
    let io = |source| ScoringError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut points = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ScoringError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if i == 0 {
            if line != WER_CSV_HEADER {
                return Err(ScoringError::BadRow {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!("expected header `{WER_CSV_HEADER}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| ScoringError::BadRow {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        // Fields are written unquoted unless they contain separators; this
        // reader only supports the unquoted form the toolkit itself emits.
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", f.len())));
        }
        points.push(ErrorRatePoint {
            system: f[0].to_string(),
            partition: f[1].to_string(),
            bin: f[2].parse().map_err(bad)?,
            snr: f[3].parse().map_err(bad)?,
            e: f[4].parse().map_err(|e| bad(format!("bad e: {e}")))?,
            n_ref_words: f[5].parse().map_err(|e| bad(format!("bad n: {e}")))?,
            clamped: f[6] == "1",
        });
    }
    Ok(points)
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        crate::corpus::tokenize(s)
    }

    #[test]
    fn identity_has_no_edits() {
        let s = align(&toks("a b c"), &toks("a b c")).unwrap();
        assert_eq!(s, EditStats { ref_len: 3, ..Default::default() });
    }

    #[test]
    fn single_substitution() {
        let s = align(&toks("a b c"), &toks("a x c")).unwrap();
        assert_eq!((s.substitutions, s.insertions, s.deletions), (1, 0, 0));
        assert!((s.rate() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn short_ref_long_hyp_counts_sub_plus_insertions() {
        // Exhaustive search on this pair gives 3 total edits; the aligner
        // must realize them as 1 substitution + 2 insertions.
        let s = align(&toks("a"), &toks("x y z")).unwrap();
        assert_eq!(brute::min_edits(&toks("a"), &toks("x y z")), 3);
        assert_eq!((s.substitutions, s.insertions, s.deletions), (1, 2, 0));
        assert!((s.rate() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(matches!(
            align::<String>(&[], &toks("a")),
            Err(ScoringError::EmptyReference)
        ));
    }

    #[test]
    fn equal_length_mismatches_are_pure_substitutions() {
        let s = align(&toks("a b"), &toks("b e")).unwrap();
        assert_eq!((s.substitutions, s.insertions, s.deletions), (2, 0, 0));
    }

    #[test]
    fn pooling_micro_averages_and_clamps() {
        let a = align(&toks("a b c"), &toks("a x c")).unwrap(); // 1/3
        let b = align(&toks("d e f"), &toks("d e f")).unwrap(); // 0/3
        let (e, n, clamped) = pool([&a, &b]).unwrap();
        assert!((e - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(n, 6);
        assert!(!clamped);

        let c = align(&toks("a"), &toks("x y z")).unwrap(); // raw 3.0
        let d = align(&toks("p"), &toks("p")).unwrap(); // 0/1
        let (e, _, clamped) = pool([&c, &d]).unwrap(); // raw 3/2
        assert_eq!(e, 1.0);
        assert!(clamped);
    }

    #[test]
    fn empty_group_errors() {
        assert!(matches!(
            pool(std::iter::empty::<&EditStats>()),
            Err(ScoringError::EmptyGroup)
        ));
    }

    #[test]
    fn wer_csv_round_trip() {
        let points = vec![
            ErrorRatePoint {
                system: "gmm".into(),
                partition: "dev".into(),
                bin: BinLabel::Hp,
                snr: Snr::Db(-5),
                e: 0.25,
                n_ref_words: 120,
                clamped: false,
            },
            ErrorRatePoint {
                system: "gmm".into(),
                partition: "dev".into(),
                bin: BinLabel::All,
                snr: Snr::Clean,
                e: 1.0,
                n_ref_words: 300,
                clamped: true,
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_wer_csv(&points, f.path()).unwrap();
        assert_eq!(read_wer_csv(f.path()).unwrap(), points);
    }

    proptest! {
        #[test]
        fn align_matches_exhaustive_search(
            r in proptest::collection::vec(prop_oneof![Just("a".to_string()), Just("b".into()), Just("c".into())], 1..5),
            h in proptest::collection::vec(prop_oneof![Just("a".to_string()), Just("b".into()), Just("c".into())], 0..5),
        ) {
            let s = align(&r, &h).unwrap();
            prop_assert_eq!(s.edits() as u32, brute::min_edits(&r, &h));
            prop_assert!(s.substitutions + s.deletions <= s.ref_len);
        }

        #[test]
        fn pool_is_permutation_invariant_and_monotone(
            pairs in proptest::collection::vec((0u64..10, 1u64..10), 1..8),
            shift in 0usize..8,
        ) {
            let stats: Vec<EditStats> = pairs
                .iter()
                .map(|&(errs, len)| EditStats {
                    substitutions: errs.min(len),
                    insertions: errs.saturating_sub(len),
                    deletions: 0,
                    ref_len: len,
                })
                .collect();
            let (e1, n1, _) = pool(stats.iter()).unwrap();
            let mut rotated = stats.clone();
            rotated.rotate_left(shift % stats.len());
            let (e2, n2, _) = pool(rotated.iter()).unwrap();
            prop_assert_eq!(n1, n2);
            prop_assert!((e1 - e2).abs() < 1e-15);

            // Adding a rate-1 utterance never lowers the pooled rate.
            let mut extended = stats.clone();
            extended.push(EditStats { substitutions: 4, insertions: 0, deletions: 0, ref_len: 4 });
            let (e3, _, _) = pool(extended.iter()).unwrap();
            prop_assert!(e3 >= e1 - 1e-15);
        }
    }
}
