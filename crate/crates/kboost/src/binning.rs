//! Predictability bins over per-utterance NLL.
//!
//! Cutpoints are constructed once from an in-domain NLL sample: the top and
//! bottom `trim` quantiles are dropped and the surviving range is split into
//! equal-width intervals, labeled HP / LP / ZP from most to least
//! predictable when there are three. Cutpoints are then frozen and reused on
//! every other partition so cross-corpus comparisons stay auditable; the
//! spec is serialized as JSON next to every run.
//!
//! Intervals are half-open `(lo, hi]`: an NLL at or below the lowest cut, or
//! above the highest, is out of range.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::corpus::Partition;
use crate::util::quantile_sorted;

#[derive(Debug, thiserror::Error)]
pub enum BinningError {
    #[error("need at least {need} finite NLL values, got {got}")]
    TooFewValues { need: usize, got: usize },
    #[error("non-finite NLL in input")]
    NonFinite,
    #[error("all NLL values equal ({0}); bins would have zero width")]
    ZeroRange(f64),
    #[error("trim fraction {0} outside [0, 0.5)")]
    BadTrim(f64),
    #[error("n_bins must be >= 1, got {0}")]
    BadBinCount(usize),
    #[error("utterances missing NLL: {0:?}")]
    MissingNll(Vec<String>),
}

/// Bin label. `Hp`/`Lp`/`Zp` are the three standard predictability bins
/// (most to least predictable); `Custom(i)` appears when more than three
/// bins are requested; `Out` is outside the trimmed range; `All` labels
/// whole-partition pooled cells in score tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BinLabel {
    Hp,
    Lp,
    Zp,
    Custom(u8),
    Out,
    All,
}

impl fmt::Display for BinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinLabel::Hp => write!(f, "HP"),
            BinLabel::Lp => write!(f, "LP"),
            BinLabel::Zp => write!(f, "ZP"),
            BinLabel::Custom(i) => write!(f, "B{i}"),
            BinLabel::Out => write!(f, "OUT"),
            BinLabel::All => write!(f, "all"),
        }
    }
}

impl FromStr for BinLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HP" => Ok(BinLabel::Hp),
            "LP" => Ok(BinLabel::Lp),
            "ZP" => Ok(BinLabel::Zp),
            "OUT" => Ok(BinLabel::Out),
            "all" => Ok(BinLabel::All),
            _ => s
                .strip_prefix('B')
                .and_then(|n| n.parse().ok())
                .map(BinLabel::Custom)
                .ok_or_else(|| format!("bad bin label `{s}`")),
        }
    }
}

impl From<BinLabel> for String {
    fn from(b: BinLabel) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for BinLabel {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// Ordered NLL cutpoints plus the trim fraction they were built with.
///
/// `cuts` has `n_bins + 1` strictly increasing values; bin `i` covers
/// `(cuts[i], cuts[i+1]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub cuts: Vec<f64>,
    pub trim: f64,
    /// Partition the cutpoints were estimated from.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinAssignment {
    pub utterance_id: String,
    pub bin: BinLabel,
}

/// Per-bin occupancy fractions of a partition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Proportions {
    pub partition: String,
    /// (bin, fraction of utterances), in bin order; OUT excluded.
    pub bins: Vec<(BinLabel, f64)>,
    /// Sum of the in-range fractions; at most 1.
    pub total: f64,
    pub n_utterances: usize,
}

impl BinSpec {
    pub fn from_cuts(cuts: Vec<f64>, trim: f64, source: impl Into<String>) -> Self {
        assert!(cuts.len() >= 2 && cuts.windows(2).all(|w| w[0] < w[1]));
        BinSpec {
            cuts,
            trim,
            source: source.into(),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn cut_low(&self) -> f64 {
        self.cuts[0]
    }

    pub fn cut_high(&self) -> f64 {
        *self.cuts.last().unwrap()
    }

    /// Labels of the interior bins, most predictable first.
    pub fn labels(&self) -> Vec<BinLabel> {
        if self.n_bins() == 3 {
            vec![BinLabel::Hp, BinLabel::Lp, BinLabel::Zp]
        } else {
            (1..=self.n_bins())
                .map(|i| BinLabel::Custom(i as u8))
                .collect()
        }
    }

    /// Map an NLL to its bin. Total and deterministic for finite input.
    pub fn assign(&self, nll: f64) -> BinLabel {
        if !(nll > self.cut_low() && nll <= self.cut_high()) {
            return BinLabel::Out;
        }
        let labels = self.labels();
        // Walk the cuts; intervals are (lo, hi].
        for (i, w) in self.cuts.windows(2).enumerate() {
            if nll > w[0] && nll <= w[1] {
                return labels[i];
            }
        }
        // nll == some interior cut exactly: the scan above already caught it
        // via (lo, hi]; unreachable for finite input.
        BinLabel::Out
    }

    pub fn assign_partition(&self, partition: &Partition) -> Result<Vec<BinAssignment>, BinningError> {
        let missing: Vec<String> = partition
            .utterances()
            .iter()
            .filter(|u| u.nll.is_none())
            .map(|u| u.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(BinningError::MissingNll(missing));
        }
        Ok(partition
            .utterances()
            .iter()
            .map(|u| BinAssignment {
                utterance_id: u.id.clone(),
                bin: self.assign(u.nll.unwrap()),
            })
            .collect())
    }

    /// Stable short hash of the spec, used to detect cross-run mixing.
    pub fn hash(&self) -> String {
        let mut repr = format!("trim={};source={}", self.trim, self.source);
        for c in &self.cuts {
            repr.push_str(&format!(";{:?}", c.to_bits()));
        }
        format!("{:016x}", crate::util::fnv1a64(repr.as_bytes()))
    }
}

/// Construct equal-width cutpoints from an NLL sample after quantile
/// trimming. `cut_low`/`cut_high` are the min and max of the surviving
/// values, so the most extreme survivors sit exactly on the outer cuts
/// (and the minimum itself falls out of range under the `(lo, hi]`
/// convention).
pub fn make_cutpoints(nlls: &[f64], n_bins: usize, trim: f64) -> Result<BinSpec, BinningError> {
    if n_bins == 0 {
        return Err(BinningError::BadBinCount(n_bins));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(BinningError::BadTrim(trim));
    }
    if nlls.iter().any(|v| !v.is_finite()) {
        return Err(BinningError::NonFinite);
    }
    if nlls.len() < 10 {
        return Err(BinningError::TooFewValues {
            need: 10,
            got: nlls.len(),
        });
    }
    let mut sorted = nlls.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q_lo = quantile_sorted(&sorted, trim);
    let q_hi = quantile_sorted(&sorted, 1.0 - trim);
    let survivors: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&v| v >= q_lo && v <= q_hi)
        .collect();
    let lo = *survivors.first().expect("quantiles bound at least one value");
    let hi = *survivors.last().unwrap();
    if hi <= lo {
        return Err(BinningError::ZeroRange(lo));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut cuts: Vec<f64> = (0..n_bins).map(|i| lo + i as f64 * width).collect();
    cuts.push(hi);
    Ok(BinSpec {
        cuts,
        trim,
        source: String::new(),
    })
}

/// Equal-mass alternative: cuts at evenly spaced quantiles of the trimmed
/// sample instead of evenly spaced values. Offered for sensitivity
/// analysis; the default everywhere is equal width.
pub fn make_cutpoints_equal_mass(
    nlls: &[f64],
    n_bins: usize,
    trim: f64,
) -> Result<BinSpec, BinningError> {
    let spec = make_cutpoints(nlls, n_bins, trim)?; // validates input
    let mut sorted = nlls.to_vec();
    sorted.sort_by(f64::total_cmp);
    let survivors: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&v| v >= spec.cut_low() && v <= spec.cut_high())
        .collect();
    let mut cuts: Vec<f64> = (0..=n_bins)
        .map(|i| quantile_sorted(&survivors, i as f64 / n_bins as f64))
        .collect();
    cuts.dedup();
    if cuts.len() != n_bins + 1 {
        return Err(BinningError::ZeroRange(cuts[0]));
    }
    Ok(BinSpec {
        cuts,
        trim,
        source: String::new(),
    })
}

/// Fraction of a partition captured by each bin, plus the in-range total.
pub fn proportions(spec: &BinSpec, partition: &Partition) -> Result<Proportions, BinningError> {
    let assignments = spec.assign_partition(partition)?;
    let n = assignments.len();
    let labels = spec.labels();
    let mut counts = vec![0usize; labels.len()];
    for a in &assignments {
        if let Some(pos) = labels.iter().position(|&l| l == a.bin) {
            counts[pos] += 1;
        }
    }
    let bins: Vec<(BinLabel, f64)> = labels
        .iter()
        .zip(&counts)
        .map(|(&l, &c)| (l, c as f64 / n as f64))
        .collect();
    let total = counts.iter().sum::<usize>() as f64 / n as f64;
    Ok(Proportions {
        partition: partition.name.clone(),
        bins,
        total,
        n_utterances: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn uniform_grid() -> Vec<f64> {
        (0..=100).map(|i| i as f64 / 100.0).collect()
    }

    #[test]
    fn uniform_grid_cuts_are_equal_thirds_of_trimmed_range() {
        let spec = make_cutpoints(&uniform_grid(), 3, 0.05).unwrap();
        let expected = [0.05, 0.35, 0.65, 0.95];
        for (c, e) in spec.cuts.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12, "{c} vs {e}");
        }
        let widths: Vec<f64> = spec.cuts.windows(2).map(|w| w[1] - w[0]).collect();
        for w in &widths {
            assert!((w - widths[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn no_trim_on_four_values_gives_exact_thirds() {
        let spec = make_cutpoints(&[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 4.0], 3, 0.0)
            .unwrap();
        assert_eq!(spec.cuts, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn published_edges_classify_as_published() {
        let spec = BinSpec::from_cuts(vec![3.4, 4.5, 5.6, 6.8], 0.05, "LS-C");
        assert_eq!(spec.assign(4.0), BinLabel::Hp);
        assert_eq!(spec.assign(4.5), BinLabel::Hp); // right edge belongs to HP
        assert_eq!(spec.assign(4.5000001), BinLabel::Lp);
        assert_eq!(spec.assign(5.9), BinLabel::Zp);
        assert_eq!(spec.assign(7.2), BinLabel::Out);
        assert_eq!(spec.assign(3.4), BinLabel::Out); // lo edge excluded
        assert_eq!(spec.assign(6.8), BinLabel::Zp);
    }

    #[test]
    fn too_few_or_degenerate_inputs_error() {
        assert!(matches!(
            make_cutpoints(&[1.0; 5], 3, 0.0),
            Err(BinningError::TooFewValues { .. })
        ));
        assert!(matches!(
            make_cutpoints(&[2.5; 20], 3, 0.0),
            Err(BinningError::ZeroRange(_))
        ));
        assert!(matches!(
            make_cutpoints(&uniform_grid(), 3, 0.5),
            Err(BinningError::BadTrim(_))
        ));
        let mut with_nan = uniform_grid();
        with_nan[3] = f64::NAN;
        assert!(matches!(
            make_cutpoints(&with_nan, 3, 0.05),
            Err(BinningError::NonFinite)
        ));
    }

    fn utt(id: &str, nll: Option<f64>) -> Utterance {
        Utterance {
            id: id.into(),
            reference: vec!["w".into()],
            audio: None,
            nll,
            hypotheses: BTreeMap::new(),
        }
    }

    #[test]
    fn proportions_sum_to_one_when_everything_is_in_range() {
        let spec = BinSpec::from_cuts(vec![0.0, 1.0, 2.0, 3.0], 0.0, "t");
        let utts: Vec<Utterance> = (0..30)
            .map(|i| utt(&format!("u{i}"), Some(0.05 + (i as f64) * 0.098)))
            .collect();
        let p = Partition::new("t", utts).unwrap();
        let props = proportions(&spec, &p).unwrap();
        assert!((props.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proportions_report_empty_bins_and_missing_nll() {
        let spec = BinSpec::from_cuts(vec![0.0, 1.0, 2.0, 3.0], 0.0, "t");
        let p = Partition::new("t", vec![utt("a", Some(0.5)), utt("b", Some(1.5))]).unwrap();
        let props = proportions(&spec, &p).unwrap();
        assert_eq!(props.bins[2], (BinLabel::Zp, 0.0));

        let p2 = Partition::new("t", vec![utt("a", Some(0.5)), utt("b", None)]).unwrap();
        match proportions(&spec, &p2) {
            Err(BinningError::MissingNll(ids)) => assert_eq!(ids, vec!["b".to_string()]),
            other => panic!("wrong result: {other:?}"),
        }
    }

    #[test]
    fn equal_mass_splits_by_count() {
        let nlls: Vec<f64> = (0..100).map(|i| (i as f64).powi(2) / 100.0).collect();
        let spec = make_cutpoints_equal_mass(&nlls, 4, 0.0).unwrap();
        assert_eq!(spec.n_bins(), 4);
        let inside: Vec<f64> = nlls
            .iter()
            .copied()
            .filter(|&v| v > spec.cut_low() && v <= spec.cut_high())
            .collect();
        let mut counts = vec![0usize; 4];
        for v in inside {
            match spec.assign(v) {
                BinLabel::Custom(i) => counts[i as usize - 1] += 1,
                other => panic!("unexpected label {other}"),
            }
        }
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        assert!(spread <= 2, "counts {counts:?}");
    }

    #[test]
    fn label_round_trip() {
        for l in [
            BinLabel::Hp,
            BinLabel::Lp,
            BinLabel::Zp,
            BinLabel::Out,
            BinLabel::All,
            BinLabel::Custom(4),
        ] {
            assert_eq!(l.to_string().parse::<BinLabel>().unwrap(), l);
        }
    }

    proptest! {
        #[test]
        fn cutpoints_invariant_to_input_order(mut nlls in proptest::collection::vec(-5.0f64..15.0, 12..60), shift in 0usize..12) {
            let spec1 = make_cutpoints(&nlls, 3, 0.05);
            let n = nlls.len();
            nlls.rotate_left(shift % n);
            nlls.reverse();
            let spec2 = make_cutpoints(&nlls, 3, 0.05);
            match (spec1, spec2) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.cuts, b.cuts),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "order changed outcome"),
            }
        }

        #[test]
        fn assignment_is_total_and_unique(nll in -100.0f64..100.0) {
            let spec = BinSpec::from_cuts(vec![3.4, 4.5, 5.6, 6.8], 0.05, "t");
            let label = spec.assign(nll);
            let count = [BinLabel::Hp, BinLabel::Lp, BinLabel::Zp, BinLabel::Out]
                .iter()
                .filter(|&&l| l == label)
                .count();
            prop_assert_eq!(count, 1);
        }

        #[test]
        fn widths_equal_within_tolerance(nlls in proptest::collection::vec(0.0f64..50.0, 15..80)) {
            if let Ok(spec) = make_cutpoints(&nlls, 3, 0.05) {
                let widths: Vec<f64> = spec.cuts.windows(2).map(|w| w[1] - w[0]).collect();
                for w in &widths {
                    prop_assert!((w - widths[0]).abs() < 1e-12);
                }
            }
        }
    }
}
