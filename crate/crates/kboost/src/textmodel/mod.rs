//! Backoff n-gram language model with interpolated modified Kneser-Ney
//! smoothing, used to score per-utterance NLL for predictability binning.
//!
//! Everything internal is in nats (natural log). The ARPA serialization is
//! log10 as the format demands; conversion happens at that boundary only.
//!
//! Scoring conventions, pinned so externally computed NLLs can match:
//!  - a single sentence-begin marker conditions the first words (contexts
//!    are truncated at the sentence start), and is never itself predicted;
//!  - the sentence-end marker is predicted, so a sentence of `L` words
//!    scores `L + 1` events and NLL is `-(1/(L+1)) ln Q(y)`;
//!  - out-of-vocabulary words (and literal `<s>`/`</s>` in text) map to
//!    `<unk>`, which receives probability mass through interpolation.

mod arpa;
mod train;

pub use arpa::{load_arpa, save_arpa};
pub use train::train_kn;

use std::collections::HashMap;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Natural-log stand-in for "probability zero" entries such as `<s>`,
/// matching the ARPA convention of writing -99 in log10.
pub(crate) const LN_PSEUDO_ZERO: f64 = -99.0 * std::f64::consts::LN_10;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("order {0} outside supported range [1, 5]")]
    BadOrder(usize),
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("cannot score an empty token sequence")]
    EmptyTokens,
    #[error("model has no `{0}` entry; cannot {1}")]
    MissingSpecial(&'static str, &'static str),
    #[error("{path}:{line}: {msg}")]
    Arpa {
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

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct GramEntry {
    /// Conditional log-probability, nats, <= 0.
    pub logp: f64,
    /// Backoff weight, nats; 0.0 (weight 1) when this gram never serves as
    /// a context.
    pub logbo: f64,
}

/// Per-utterance NLL in nats per scored event.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct NllScore {
    pub utterance_id: String,
    pub nll: f64,
    /// Number of scored events: words plus the end marker.
    pub token_count: usize,
}

/// Immutable backoff n-gram model. Safe to share across threads; scoring
/// takes `&self` only.
#[derive(Clone, Debug)]
pub struct NgramModel {
    order: usize,
    vocab: Vec<String>,
    lookup: HashMap<String, u32>,
    unk: Option<u32>,
    bos: Option<u32>,
    eos: Option<u32>,
    /// grams[k-1]: k-gram table keyed by vocab ids.
    grams: Vec<HashMap<Box<[u32]>, GramEntry>>,
}

impl NgramModel {
    pub(crate) fn from_parts(
        order: usize,
        vocab: Vec<String>,
        grams: Vec<HashMap<Box<[u32]>, GramEntry>>,
    ) -> Self {
        let lookup: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let unk = lookup.get(UNK).copied();
        let bos = lookup.get(BOS).copied();
        let eos = lookup.get(EOS).copied();
        NgramModel {
            order,
            vocab,
            lookup,
            unk,
            bos,
            eos,
            grams,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Number of predictable event types: every vocabulary entry except the
    /// sentence-begin marker.
    pub fn predictable_vocab_size(&self) -> usize {
        self.vocab.len() - usize::from(self.bos.is_some())
    }

    pub fn gram_count(&self, order: usize) -> usize {
        self.grams.get(order - 1).map_or(0, HashMap::len)
    }

    fn id_for_scoring(&self, token: &str) -> Result<u32, LmError> {
        // Literal sentence markers in running text would otherwise hit the
        // pseudo-zero <s> entry; treat them as unknown words.
        if token != BOS && token != EOS {
            if let Some(&id) = self.lookup.get(token) {
                return Ok(id);
            }
        }
        self.unk
            .ok_or(LmError::MissingSpecial(UNK, "score out-of-vocabulary words"))
    }

    /// Backoff log-probability (nats) of `word` after `context`.
    /// `context` must already be truncated to at most `order - 1` ids.
    pub(crate) fn logp_backoff(&self, context: &[u32], word: u32) -> f64 {
        debug_assert!(context.len() < self.order.max(1));
        let mut buf: Vec<u32> = Vec::with_capacity(context.len() + 1);
        buf.extend_from_slice(context);
        buf.push(word);
        let mut bo_sum = 0.0;
        for start in 0..buf.len() {
            let gram = &buf[start..];
            if let Some(e) = self.grams[gram.len() - 1].get(gram) {
                return bo_sum + e.logp;
            }
            if gram.len() > 1 {
                let ctx = &buf[start..buf.len() - 1];
                if let Some(e) = self.grams[ctx.len() - 1].get(ctx) {
                    bo_sum += e.logbo;
                }
            }
        }
        // The word has no unigram entry: only possible for hand-built or
        // loaded models with vocabulary gaps.
        bo_sum + LN_PSEUDO_ZERO
    }

    /// Total log-probability (nats) and event count for a token sequence.
    /// Exposed at crate level so tests can disable the end event.
    pub(crate) fn score_events<S: AsRef<str>>(
        &self,
        tokens: &[S],
        include_end: bool,
    ) -> Result<(f64, usize), LmError> {
        if tokens.is_empty() {
            return Err(LmError::EmptyTokens);
        }
        let mut ids = Vec::with_capacity(tokens.len());
        for t in tokens {
            ids.push(self.id_for_scoring(t.as_ref())?);
        }
        let mut hist: Vec<u32> = Vec::with_capacity(tokens.len() + 1);
        if let Some(bos) = self.bos {
            hist.push(bos);
        }
        let mut total = 0.0;
        let mut events = 0usize;
        let ctx_len = self.order.saturating_sub(1);
        let mut score_one = |hist: &mut Vec<u32>, w: u32| {
            let start = hist.len().saturating_sub(ctx_len);
            total += self.logp_backoff(&hist[start..], w);
            events += 1;
        };
        for &w in &ids {
            score_one(&mut hist, w);
            hist.push(w);
        }
        if include_end {
            let eos = self
                .eos
                .ok_or(LmError::MissingSpecial(EOS, "score the end event"))?;
            score_one(&mut hist, eos);
        }
        Ok((total, events))
    }

    /// Per-event NLL in nats: `-(1/L) ln Q(y)` with `L` = words + end marker.
    pub fn nll<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64, LmError> {
        let (total, events) = self.score_events(tokens, true)?;
        Ok(-total / events as f64)
    }

    /// Total probability mass of the predictable vocabulary after a context
    /// given as tokens. Equals 1 for any context under a well-formed model;
    /// exposed for validity checking.
    pub fn prob_mass<S: AsRef<str>>(&self, context: &[S]) -> Result<f64, LmError> {
        let mut ids = Vec::with_capacity(context.len());
        for t in context {
            ids.push(self.id_for_scoring(t.as_ref())?);
        }
        let start = ids.len().saturating_sub(self.order.saturating_sub(1));
        let ctx = &ids[start..];
        let mass = (0..self.vocab.len() as u32)
            .filter(|&id| Some(id) != self.bos)
            .map(|id| self.logp_backoff(ctx, id).exp())
            .sum();
        Ok(mass)
    }

    /// Stored contexts (as token strings) of a given context length >= 1.
    /// Sorted; for validity sweeps in tests.
    pub fn stored_contexts(&self, len: usize) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        if len == 0 || len > self.order {
            return out;
        }
        // A k-gram is a context iff some (k+1)-gram extends it; it then
        // carries the backoff weight. Enumerate from the (k+1) table.
        if let Some(table) = self.grams.get(len) {
            let mut seen = std::collections::HashSet::new();
            for gram in table.keys() {
                let ctx = &gram[..len];
                if seen.insert(ctx.to_vec()) {
                    out.push(ctx.iter().map(|&id| self.vocab[id as usize].clone()).collect());
                }
            }
        }
        out.sort();
        out
    }

    /// Conditional probability of a single token after a token context.
    pub fn prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> Result<f64, LmError> {
        let mut ids = Vec::with_capacity(context.len());
        for t in context {
            ids.push(self.id_for_scoring(t.as_ref())?);
        }
        let start = ids.len().saturating_sub(self.order.saturating_sub(1));
        let w = if word == EOS {
            self.eos
                .ok_or(LmError::MissingSpecial(EOS, "score the end event"))?
        } else {
            self.id_for_scoring(word)?
        };
        Ok(self.logp_backoff(&ids[start..], w).exp())
    }
}

/// Score every utterance of a partition.
pub fn score_partition(
    model: &NgramModel,
    partition: &crate::corpus::Partition,
) -> Result<Vec<NllScore>, LmError> {
    partition
        .utterances()
        .iter()
        .map(|u| {
            let nll = model.nll(&u.reference)?;
            Ok(NllScore {
                utterance_id: u.id.clone(),
                nll,
                token_count: u.reference.len() + 1,
            })
        })
        .collect()
}
