//! Small numeric and formatting helpers shared across modules.

/// Interpolated quantile (linear between order statistics) of a sorted slice.
///
/// `p` is clamped to `[0, 1]`. For a slice of length `n`, the rank is
/// `h = (n - 1) * p`; the result interpolates between `x[floor(h)]` and
/// `x[ceil(h)]`. This is the convention pinned for trim cutpoints and
/// bootstrap percentiles, so both stay reproducible.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = h - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// FNV-1a 64-bit hash. Used to key per-utterance noise streams; must be
/// stable across platforms and releases, so it is spelled out here rather
/// than borrowed from `std`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Escape a field for CSV output: quote when it contains a comma, quote,
/// or newline. Inputs under our control (ids, bin labels) never need this,
/// but user-supplied system/partition names might.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Render a rate as a percentage with one decimal, round half to even.
pub fn percent1(rate: f64) -> String {
    fixed_half_even(rate * 100.0, 1)
}

/// Fixed-point rendering with round-half-even at `decimals` places.
pub fn fixed_half_even(x: f64, decimals: u32) -> String {
    let scale = 10f64.powi(decimals as i32);
    let rounded = round_half_even(x * scale) / scale;
    format!("{:.*}", decimals as usize, rounded)
}

fn round_half_even(x: f64) -> f64 {
    let floor = x.floor();
    let diff = x - floor;
    if diff > 0.5 {
        floor + 1.0
    } else if diff < 0.5 {
        floor
    } else if (floor as i64) % 2 == 0 {
        floor
    } else {
        floor + 1.0
    }
}
