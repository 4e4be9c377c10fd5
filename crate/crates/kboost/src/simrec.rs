//! Simulated recognizer with known ground-truth context behavior.
//!
//! The generator inverts the accuracy-transfer model: isolated accuracy at
//! each SNR follows a logistic psychometric curve, the isolated error rate
//! is `e_i = 1 - p_i`, and each word of a bin-`b` utterance is independently
//! wrong with probability `e_i^(k_b)`. Wrong words become position-unique
//! error tokens, so scoring sees pure substitutions and the pooled rates
//! converge to the model exactly. The whole pipeline can then be driven
//! through the ordinary manifest interface and its output checked against
//! the configured exponents.
//!
//! Word errors are i.i.d.; there is deliberately no error clustering, so a
//! pipeline failure is attributable to code rather than model misfit.
//! Synthetic NLLs sit at the bin-interval midpoints of the emitted bin
//! spec, which lets bin assignment round-trip on simulated data.

use std::collections::BTreeMap;

use crate::binning::{BinLabel, BinSpec};
use crate::corpus::{Partition, Snr, Utterance};
use crate::noise::SnrGrid;
use crate::rng::{stream_key, CounterRng};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("context exponent {0} must be >= 1 (ZP is the reference with k = 1)")]
    BadExponent(f64),
    #[error("psychometric slope {0} must be > 0")]
    BadSlope(f64),
    #[error("{0} must be >= 1")]
    BadCount(&'static str),
}

/// Logistic acoustics: accuracy as a function of SNR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psychometric {
    pub midpoint_snr: f64,
    /// Accuracy slope per dB at the midpoint (times 1/4).
    pub slope: f64,
}

impl Default for Psychometric {
    fn default() -> Self {
        // Midpoint at 5 dB with a moderate slope spreads accuracies over
        // (0.1, 0.95) on the default -10..30 dB grid.
        Psychometric {
            midpoint_snr: 5.0,
            slope: 0.22,
        }
    }
}

/// Isolated-condition accuracy `p_i = 1 / (1 + exp(-slope (snr - mid)))`.
pub fn isolated_accuracy(snr_db: f64, psychometric: &Psychometric) -> f64 {
    1.0 / (1.0 + (-psychometric.slope * (snr_db - psychometric.midpoint_snr)).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Context exponent for the HP bin.
    pub k_hp: f64,
    /// Context exponent for the LP bin. ZP is pinned at 1.
    pub k_lp: f64,
    pub psychometric: Psychometric,
    pub words_per_utt: usize,
    pub utts_per_bin: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k_hp: 2.72,
            k_lp: 1.38,
            psychometric: Psychometric::default(),
            words_per_utt: 20,
            utts_per_bin: 500,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn k_for(&self, bin: BinLabel) -> f64 {
        match bin {
            BinLabel::Hp => self.k_hp,
            BinLabel::Lp => self.k_lp,
            _ => 1.0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        for k in [self.k_hp, self.k_lp] {
            if !(k >= 1.0) {
                return Err(SimError::BadExponent(k));
            }
        }
        if !(self.psychometric.slope > 0.0) {
            return Err(SimError::BadSlope(self.psychometric.slope));
        }
        if self.words_per_utt == 0 {
            return Err(SimError::BadCount("words_per_utt"));
        }
        if self.utts_per_bin == 0 {
            return Err(SimError::BadCount("utts_per_bin"));
        }
        Ok(())
    }
}

/// Bin spec emitted with simulated data; NLL midpoints below refer to it.
pub fn default_binspec() -> BinSpec {
    BinSpec::from_cuts(vec![3.4, 4.5, 5.6, 6.8], 0.05, "simrec")
}

/// Synthetic partition plus the bin spec its NLLs are aligned to.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub partition: Partition,
    pub binspec: BinSpec,
}

/// Generate reference transcripts and per-SNR hypotheses.
///
/// Deterministic in `(config, grid)`: word-level error draws come from a
/// counter stream keyed by `(seed, utterance index, snr)`.
pub fn simulate(config: &SimConfig, grid: &SnrGrid) -> Result<SimOutput, SimError> {
    config.validate()?;
    let binspec = default_binspec();
    let bins = [BinLabel::Hp, BinLabel::Lp, BinLabel::Zp];
    let labels = binspec.labels();
    debug_assert_eq!(labels, bins);

    let mut utterances = Vec::with_capacity(3 * config.utts_per_bin);
    let mut utt_index: u64 = 0;
    for (bin_idx, &bin) in bins.iter().enumerate() {
        let nll_mid = 0.5 * (binspec.cuts[bin_idx] + binspec.cuts[bin_idx + 1]);
        let k = config.k_for(bin);
        for u in 0..config.utts_per_bin {
            let id = format!("{}_{u:04}", bin.to_string().to_lowercase());
            let reference: Vec<String> = (0..config.words_per_utt)
                .map(|j| format!("w{}", (utt_index as usize * 31 + j * 7) % 97))
                .collect();
            let mut hypotheses = BTreeMap::new();
            for &snr in grid.snrs() {
                let p_i = isolated_accuracy(snr as f64, &config.psychometric);
                let e_target = (1.0 - p_i).powf(k);
                let key = stream_key(config.seed, &[utt_index, Snr::Db(snr).stream_tag()]);
                let mut rng = CounterRng::new(key);
                let hyp: Vec<String> = reference
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        if rng.next_f64() < e_target {
                            format!("x{j}")
                        } else {
                            w.clone()
                        }
                    })
                    .collect();
                hypotheses.insert(Snr::Db(snr), hyp);
            }
            utterances.push(Utterance {
                id,
                reference,
                audio: None,
                nll: Some(nll_mid),
                hypotheses,
            });
            utt_index += 1;
        }
    }
    let partition = Partition::new("simrec", utterances).expect("nonempty by construction");
    Ok(SimOutput { partition, binspec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{align, pool};
    use approx::assert_abs_diff_eq;

    #[test]
    fn logistic_examples() {
        let psy = Psychometric {
            midpoint_snr: 0.0,
            slope: 0.3,
        };
        assert_abs_diff_eq!(isolated_accuracy(0.0, &psy), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            isolated_accuracy(10.0, &psy),
            1.0 / (1.0 + (-3.0f64).exp()),
            epsilon = 1e-15
        );
        assert!(isolated_accuracy(1e4, &psy) > 1.0 - 1e-12);
        assert!(isolated_accuracy(-1e4, &psy) < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::default();
        c.k_lp = 0.5;
        assert!(matches!(simulate(&c, &SnrGrid::default()), Err(SimError::BadExponent(_))));
        let mut c = SimConfig::default();
        c.psychometric.slope = 0.0;
        assert!(matches!(simulate(&c, &SnrGrid::default()), Err(SimError::BadSlope(_))));
        let mut c = SimConfig::default();
        c.words_per_utt = 0;
        assert!(matches!(simulate(&c, &SnrGrid::default()), Err(SimError::BadCount(_))));
    }

    fn pooled_rate(p: &Partition, bin_prefix: &str, snr: Snr) -> f64 {
        let stats: Vec<_> = p
            .utterances()
            .iter()
            .filter(|u| u.id.starts_with(bin_prefix))
            .map(|u| align(&u.reference, &u.hypotheses[&snr]).unwrap())
            .collect();
        pool(stats.iter()).unwrap().0
    }

    #[test]
    fn substitution_only_construction() {
        let config = SimConfig {
            utts_per_bin: 20,
            words_per_utt: 12,
            seed: 5,
            ..SimConfig::default()
        };
        let out = simulate(&config, &SnrGrid::default()).unwrap();
        for u in out.partition.utterances().iter().take(30) {
            for hyp in u.hypotheses.values() {
                let s = align(&u.reference, hyp).unwrap();
                assert_eq!(s.insertions, 0);
                assert_eq!(s.deletions, 0);
            }
        }
    }

    #[test]
    fn null_configuration_equalizes_bins() {
        let config = SimConfig {
            k_hp: 1.0,
            k_lp: 1.0,
            utts_per_bin: 150,
            words_per_utt: 20,
            seed: 9,
            ..SimConfig::default()
        };
        let out = simulate(&config, &SnrGrid::default()).unwrap();
        let snr = Snr::Db(5);
        let p_i = isolated_accuracy(5.0, &config.psychometric);
        let e = 1.0 - p_i;
        let n = (config.utts_per_bin * config.words_per_utt) as f64;
        let se = (e * (1.0 - e) / n).sqrt();
        for prefix in ["hp_", "lp_", "zp_"] {
            let rate = pooled_rate(&out.partition, prefix, snr);
            assert!(
                (rate - e).abs() <= 3.0 * se * 2.0_f64.sqrt(),
                "{prefix}: {rate} vs {e} (se {se})"
            );
        }
    }

    #[test]
    fn squared_bin_rate_at_the_half_accuracy_point() {
        // At the psychometric midpoint e_i = 0.5, so k_HP = 2 puts the HP
        // rate at 0.25; 10,000 words keep the draw inside 99% binomial
        // bounds (+/- 2.576 sqrt(p(1-p)/n)).
        let config = SimConfig {
            k_hp: 2.0,
            k_lp: 1.0,
            utts_per_bin: 500,
            words_per_utt: 20,
            psychometric: Psychometric {
                midpoint_snr: 5.0,
                slope: 0.22,
            },
            seed: 13,
        };
        let grid = SnrGrid::new(vec![5]).unwrap();
        let out = simulate(&config, &grid).unwrap();
        let rate = pooled_rate(&out.partition, "hp_", Snr::Db(5));
        let bound = 2.576 * (0.25f64 * 0.75 / 10_000.0).sqrt();
        assert!((rate - 0.25).abs() <= bound, "{rate} vs 0.25 +/- {bound}");
    }

    #[test]
    fn pooled_rates_converge_to_the_power_law_as_words_grow() {
        let base = SimConfig {
            k_hp: 1.7,
            k_lp: 1.2,
            utts_per_bin: 40,
            seed: 21,
            ..SimConfig::default()
        };
        let grid = SnrGrid::new(vec![0]).unwrap();
        let e_i = 1.0 - isolated_accuracy(0.0, &base.psychometric);
        let target = e_i.powf(base.k_hp);
        let mut errs = Vec::new();
        for words in [10usize, 80, 640] {
            let config = SimConfig {
                words_per_utt: words,
                ..base.clone()
            };
            let out = simulate(&config, &grid).unwrap();
            errs.push((pooled_rate(&out.partition, "hp_", Snr::Db(0)) - target).abs());
        }
        assert!(errs[2] < errs[0], "errors {errs:?} should shrink");
        assert!(errs[2] < 0.01);
    }

    #[test]
    fn deterministic_in_config_and_grid() {
        let config = SimConfig {
            utts_per_bin: 10,
            words_per_utt: 8,
            seed: 33,
            ..SimConfig::default()
        };
        let a = simulate(&config, &SnrGrid::default()).unwrap();
        let b = simulate(&config, &SnrGrid::default()).unwrap();
        assert_eq!(a.partition, b.partition);
        let other_seed = SimConfig { seed: 34, ..config };
        let c = simulate(&other_seed, &SnrGrid::default()).unwrap();
        assert_ne!(a.partition, c.partition);
    }

    #[test]
    fn nll_midpoints_round_trip_through_binning() {
        let config = SimConfig {
            utts_per_bin: 5,
            words_per_utt: 4,
            ..SimConfig::default()
        };
        let out = simulate(&config, &SnrGrid::new(vec![0]).unwrap()).unwrap();
        for u in out.partition.utterances() {
            let expected = match &u.id[..2] {
                "hp" => BinLabel::Hp,
                "lp" => BinLabel::Lp,
                _ => BinLabel::Zp,
            };
            assert_eq!(out.binspec.assign(u.nll.unwrap()), expected);
        }
    }
}
