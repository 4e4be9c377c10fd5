//! Interpolated modified Kneser-Ney estimation.
//!
//! Counting conventions:
//!  - each predicted position (every word plus the end marker) contributes a
//!    raw count to the longest n-gram that fits, with the context truncated
//!    at the single sentence-begin pad;
//!  - below the top order, grams keep raw counts when they start with the
//!    begin marker (nothing can extend them leftward) and otherwise use
//!    continuation counts (number of distinct left-extension types);
//!  - three discounts D1, D2, D3+ per order come from count-of-counts; when
//!    the estimate is undefined (a zero count-of-counts bucket or a
//!    non-positive discount) the order falls back to absolute discounting
//!    with D = 0.5;
//!  - the unigram distribution interpolates with the uniform distribution
//!    over the predictable vocabulary, which is how `<unk>` ends up with
//!    nonzero mass.
//!
//! The interpolated probabilities are stored directly as the gram scores and
//! each context's interpolation weight becomes its backoff weight, so the
//! standard backoff lookup reproduces the interpolated model exactly.

use std::collections::HashMap;

use super::{GramEntry, LmError, NgramModel, BOS, EOS, LN_PSEUDO_ZERO, UNK};

const FALLBACK_DISCOUNT: f64 = 0.5;

/// How many grams of a context (or order) have adjusted count 1, 2, or 3+.
#[derive(Clone, Copy, Default)]
struct CountBuckets {
    n1: u64,
    n2: u64,
    n3plus: u64,
}

impl CountBuckets {
    fn add(&mut self, count: u64) {
        match count {
            0 => {}
            1 => self.n1 += 1,
            2 => self.n2 += 1,
            _ => self.n3plus += 1,
        }
    }

    fn of(counts: impl Iterator<Item = u64>) -> CountBuckets {
        let mut b = CountBuckets::default();
        for c in counts {
            b.add(c);
        }
        b
    }
}

struct Discounts {
    d1: f64,
    d2: f64,
    d3plus: f64,
}

impl Discounts {
    fn for_count(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3plus,
        }
    }

    fn total_discount(&self, buckets: CountBuckets) -> f64 {
        self.d1 * buckets.n1 as f64 + self.d2 * buckets.n2 as f64 + self.d3plus * buckets.n3plus as f64
    }

    /// Estimate from count-of-counts; fall back when undefined.
    fn estimate(counts: impl Iterator<Item = u64>) -> Discounts {
        let mut n = [0u64; 4];
        for c in counts {
            if (1..=4).contains(&c) {
                n[c as usize - 1] += 1;
            }
        }
        if n.iter().any(|&x| x == 0) {
            return Discounts {
                d1: FALLBACK_DISCOUNT,
                d2: FALLBACK_DISCOUNT,
                d3plus: FALLBACK_DISCOUNT,
            };
        }
        let (n1, n2, n3, n4) = (n[0] as f64, n[1] as f64, n[2] as f64, n[3] as f64);
        let y = n1 / (n1 + 2.0 * n2);
        let d1 = 1.0 - 2.0 * y * n2 / n1;
        let d2 = 2.0 - 3.0 * y * n3 / n2;
        let d3plus = 3.0 - 4.0 * y * n4 / n3;
        if d1 <= 0.0 || d2 <= 0.0 || d3plus <= 0.0 {
            return Discounts {
                d1: FALLBACK_DISCOUNT,
                d2: FALLBACK_DISCOUNT,
                d3plus: FALLBACK_DISCOUNT,
            };
        }
        Discounts { d1, d2, d3plus }
    }
}

/// Train an order-`order` model on tokenized sentences.
///
/// All observed word types enter the vocabulary (the `<unk>` mass comes from
/// smoothing, not from discarding words); literal `<s>`/`</s>` tokens in the
/// text are treated as unknown words.
pub fn train_kn<S: AsRef<str>>(corpus: &[Vec<S>], order: usize) -> Result<NgramModel, LmError> {
    if !(1..=5).contains(&order) {
        return Err(LmError::BadOrder(order));
    }
    let sentences: Vec<&Vec<S>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }

    // Deterministic vocabulary: specials first, then words sorted.
    let mut words: Vec<&str> = sentences
        .iter()
        .flat_map(|s| s.iter().map(AsRef::as_ref))
        .filter(|w| *w != BOS && *w != EOS)
        .collect();
    words.sort_unstable();
    words.dedup();
    let mut vocab: Vec<String> = vec![UNK.into(), BOS.into(), EOS.into()];
    vocab.extend(words.iter().map(|w| w.to_string()));
    let lookup: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as u32))
        .collect();
    let (unk_id, bos_id, eos_id) = (0u32, 1u32, 2u32);

    // Raw counts of the longest gram fitting at each predicted position.
    let mut raw: Vec<HashMap<Box<[u32]>, u64>> = vec![HashMap::new(); order];
    for sent in &sentences {
        let mut padded: Vec<u32> = Vec::with_capacity(sent.len() + 2);
        padded.push(bos_id);
        for w in sent.iter() {
            let w = w.as_ref();
            let id = if w == BOS || w == EOS {
                unk_id
            } else {
                lookup[w]
            };
            padded.push(id);
        }
        padded.push(eos_id);
        for t in 1..padded.len() {
            let lo = t.saturating_sub(order - 1).min(t); // order >= 1
            let gram: Box<[u32]> = padded[lo..=t].into();
            *raw[gram.len() - 1].entry(gram).or_insert(0) += 1;
        }
    }

    // Adjusted counts: top order raw; below, continuation counts except for
    // begin-marker-initial grams which stay raw.
    let mut adjusted: Vec<HashMap<Box<[u32]>, u64>> = vec![HashMap::new(); order];
    adjusted[order - 1] = std::mem::take(&mut raw[order - 1]);
    for k in (1..order).rev() {
        let mut continuation: HashMap<Box<[u32]>, std::collections::HashSet<u32>> = HashMap::new();
        for gram in adjusted[k].keys() {
            let suffix = &gram[1..];
            if suffix[0] != bos_id {
                continuation
                    .entry(suffix.into())
                    .or_default()
                    .insert(gram[0]);
            }
        }
        let mut table: HashMap<Box<[u32]>, u64> = continuation
            .into_iter()
            .map(|(g, lefts)| (g, lefts.len() as u64))
            .collect();
        for (gram, count) in raw[k - 1].drain() {
            debug_assert_eq!(gram[0], bos_id);
            table.insert(gram, count);
        }
        adjusted[k - 1] = table;
    }

    // Unigram distribution over the predictable vocabulary (everything but
    // the begin marker), interpolated with uniform.
    let uni = &adjusted[0];
    debug_assert!(!uni.contains_key(&[bos_id][..]));
    let d_uni = Discounts::estimate(uni.values().copied());
    let total_uni: u64 = uni.values().sum();
    if total_uni == 0 {
        return Err(LmError::EmptyCorpus);
    }
    let a1 = total_uni as f64;
    // Discount mass from integer bucket counts, so the sum does not depend
    // on hash-map iteration order and retraining is bit-identical.
    let gamma1 = d_uni.total_discount(CountBuckets::of(uni.values().copied())) / a1;
    let v = (vocab.len() - 1) as f64;
    let mut prob: Vec<HashMap<Box<[u32]>, f64>> = vec![HashMap::new(); order];
    for id in 0..vocab.len() as u32 {
        if id == bos_id {
            continue;
        }
        let a = uni.get(&[id][..]).copied().unwrap_or(0);
        let p = (a as f64 - d_uni.for_count(a)).max(0.0) / a1 + gamma1 / v;
        prob[0].insert(Box::from([id]), p);
    }

    // Higher orders, bottom up; remember each context's interpolation
    // weight as its backoff.
    let mut backoff: Vec<HashMap<Box<[u32]>, f64>> = vec![HashMap::new(); order];
    for k in 2..=order {
        let table = &adjusted[k - 1];
        let discounts = Discounts::estimate(table.values().copied());
        let mut ctx_stats: HashMap<&[u32], (u64, CountBuckets)> = HashMap::new();
        for (gram, &c) in table {
            let entry = ctx_stats.entry(&gram[..k - 1]).or_default();
            entry.0 += c;
            entry.1.add(c);
        }
        let mut gammas: HashMap<Box<[u32]>, f64> = HashMap::new();
        for (ctx, &(total, buckets)) in &ctx_stats {
            gammas.insert((*ctx).into(), discounts.total_discount(buckets) / total as f64);
        }
        for (gram, &c) in table {
            let ctx = &gram[..k - 1];
            let lower = prob[k - 2][&gram[1..]];
            let p = (c as f64 - discounts.for_count(c)).max(0.0) / ctx_stats[ctx].0 as f64
                + gammas[ctx] * lower;
            prob[k - 1].insert(gram.clone(), p);
        }
        backoff[k - 2] = gammas;
    }

    // Assemble tables: interpolated probabilities as scores, interpolation
    // weights as backoffs, plus the pseudo-zero begin-marker unigram that
    // carries the begin-context backoff.
    let mut grams: Vec<HashMap<Box<[u32]>, GramEntry>> = vec![HashMap::new(); order];
    for k in 1..=order {
        for (gram, &p) in &prob[k - 1] {
            let logbo = backoff[k - 1].get(gram).map_or(0.0, |&g| g.ln());
            grams[k - 1].insert(
                gram.clone(),
                GramEntry {
                    logp: p.ln().min(0.0),
                    logbo,
                },
            );
        }
    }
    let bos_bo = backoff
        .first()
        .and_then(|m| m.get(&[bos_id][..]))
        .map_or(0.0, |&g| g.ln());
    grams[0].insert(
        Box::from([bos_id]),
        GramEntry {
            logp: LN_PSEUDO_ZERO,
            logbo: bos_bo,
        },
    );

    Ok(NgramModel::from_parts(order, vocab, grams))
}
