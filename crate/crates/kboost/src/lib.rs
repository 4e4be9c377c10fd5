//! `kboost` measures how strongly a speech recognizer leans on textual
//! predictability, as opposed to acoustics.
//!
//! The workflow: score each evaluation utterance's negative log likelihood
//! (NLL) under a language model, bin utterances into high / low / zero
//! predictability (HP / LP / ZP), degrade the audio with white noise across
//! an SNR range, score word error rates per bin and SNR, and fit the
//! context-boost exponent k in `e_c = e_i^k`, where `e_i` is the
//! zero-predictability error rate and `e_c` a context bin's rate. `k = 1`
//! means the recognizer ignores textual context; large k means context
//! dominates acoustics. Confidence intervals come from a wild bootstrap
//! over log-space residuals.
//!
//! ## Start with the examples
//!
//! Each major capability has one runnable example:
//!
//! ```text
//! cargo run --example train_and_score     # train a Kneser-Ney LM, score NLLs, ARPA round trip
//! cargo run --example make_bins           # trim + equal-width NLL cutpoints, bin assignment
//! cargo run --example add_noise           # normalize audio, mix white noise across an SNR grid
//! cargo run --example score_wer           # edit-distance alignment and pooled error rates
//! cargo run --example fit_k               # NLS fit of k with wild-bootstrap confidence interval
//! cargo run --example simulate_recover_k  # end-to-end oracle: simulate, score, refit known k
//! cargo run --example quick_k             # the simplified three-step recipe
//! cargo run --example full_report         # assemble a report directory from one run
//! ```
//!
//! The same capabilities are exposed as subcommands of the `kboost` binary
//! (`score-nll`, `make-bins`, `assign-bins`, `corrupt`, `score-wer`,
//! `fit-k`, `fit-klakow`, `simulate`, `report`, `quick-k`); the binary is a
//! thin dispatcher over [`pipeline`].
//!
//! ## Module map
//!
//! - [`corpus`]: manifest files, utterances, tokenization.
//! - [`textmodel`]: modified Kneser-Ney n-gram LM, ARPA I/O, per-utterance NLL.
//! - [`binning`]: NLL cutpoints, bin assignment, occupancy proportions.
//! - [`noise`]: power normalization and SNR-exact white-noise mixing.
//! - [`scoring`]: alignment counts and pooled error rates.
//! - [`kfit`]: the exponent fit, wild bootstrap, point-wise estimates, and
//!   the log-linear baseline.
//! - [`simrec`]: simulated recognizer with known ground-truth k, the
//!   end-to-end verification oracle.
//! - [`report`]: table and figure files with provenance.
//! - [`pipeline`]: file-level command implementations.
//!
//! Determinism is a design constraint throughout: every stochastic step
//! draws from counter-based streams keyed by seed and task, so reruns with
//! one seed are byte-identical regardless of thread scheduling.

pub mod binning;
pub mod config;
pub mod corpus;
pub mod kfit;
pub mod noise;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod simrec;
pub mod textmodel;
pub(crate) mod util;

pub use binning::{make_cutpoints, proportions, BinLabel, BinSpec};
pub use corpus::{load_manifest, save_manifest, tokenize, Partition, Snr, Utterance};
pub use kfit::{
    context_accuracy, fit_k, fit_klakow, pointwise_k, wild_bootstrap, KFit, PairedPoint,
};
pub use noise::{corrupt_partition, mix_white_noise, normalize, AudioBuffer, SnrGrid};
pub use scoring::{align, pool, EditStats, ErrorRatePoint};
pub use simrec::{isolated_accuracy, simulate, SimConfig};
pub use textmodel::{load_arpa, save_arpa, train_kn, NgramModel, NllScore};
