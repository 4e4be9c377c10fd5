//! Estimating the context exponent k, where context-condition error rates
//! relate to isolated-condition rates as `e_c = e_i^k`.
//!
//! The primary estimator is nonlinear least squares in probability space:
//! `k = argmin sum (e_i^k - e_c)^2`, minimized by a bracketing scan plus
//! golden-section refinement and a Newton polish on the gradient. Ordinary
//! least squares on `ln e_c = k ln e_i` is kept behind a flag for
//! comparison; it systematically overweights small `e_c`.
//!
//! Confidence intervals come from the wild bootstrap: per-point log-space
//! residuals are multiplied by independent standard normal draws,
//! synthetic `e_c` values are rebuilt and clamped to (0, 1], and k is
//! refitted per replicate. Replicates draw from counter streams keyed by
//! `(seed, replicate)`, so parallel scheduling cannot change the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::BinLabel;
use crate::corpus::Snr;
use crate::rng::{stream_key, CounterRng};
use crate::scoring::ErrorRatePoint;
use crate::util::quantile_sorted;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("need at least 2 usable points, got {usable} ({excluded} excluded at rate boundaries)")]
    TooFewPoints { usable: usize, excluded: usize },
    #[error("all {0} points were filtered at rate boundaries (e_i outside (0,1) or e_c outside (0,1])")]
    AllFiltered(usize),
    #[error("all isolated rates equal ({0}); k is not identifiable")]
    NotIdentifiable(f64),
    #[error("rate {0} is at a boundary; point-wise k is undefined for rates outside (0,1)")]
    BoundaryRate(f64),
    #[error("bootstrap needs B >= 100, got {0}")]
    BadBootCount(usize),
    #[error("no points with e > 0 to fit")]
    NothingToFit,
    #[error("{path}: {msg}")]
    Json { path: std::path::PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One (isolated, context) rate pair at an SNR condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedPoint {
    pub snr: Snr,
    /// Isolated-condition (reference bin) error rate.
    pub e_i: f64,
    /// Context-condition error rate.
    pub e_c: f64,
}

/// Fitted exponent with bootstrap confidence interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFit {
    pub system: String,
    pub partition: String,
    pub context_bin: BinLabel,
    pub k: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_points: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub excluded_points: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub binspec_hash: Option<String>,
}

/// Log-linear error-rate baseline `e = b * exp(a * H)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlakowFit {
    /// Slope per nat of NLL.
    pub a: f64,
    /// Rate scale, > 0.
    pub b: f64,
}

pub const DEFAULT_N_BOOT: usize = 9999;

/// Search bounds for the exponent; the upper bound is extended once if the
/// fit lands on it.
const K_LO: f64 = 0.1;
const K_HI: f64 = 20.0;
const K_HI_EXTENDED: f64 = 1000.0;

/// Rates this close to 0 or 1 make the isolated condition uninformative and
/// are excluded from fitting.
const RATE_EPS: f64 = 1e-6;

/// Log-space residuals below this magnitude are numerical noise from
/// computing `ln(e_i^k)` along two routes, not statistical misfit; they are
/// treated as exactly zero so exact power-law data yields a zero-width CI.
const RESIDUAL_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KEstimate {
    pub k: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

fn usable(p: &PairedPoint) -> bool {
    p.e_i > RATE_EPS && p.e_i < 1.0 - RATE_EPS && p.e_c > 0.0 && p.e_c <= 1.0
}

/// Filter to usable points and sort, so the objective's summation order --
/// and therefore the fitted k, bit for bit -- does not depend on input
/// order.
fn prepare(points: &[PairedPoint]) -> (Vec<(f64, f64)>, usize) {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| usable(p))
        .map(|p| (p.e_i, p.e_c))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let excluded = points.len() - pts.len();
    (pts, excluded)
}

fn sse(pts: &[(f64, f64)], k: f64) -> f64 {
    pts.iter()
        .map(|&(ei, ec)| {
            let d = ei.powf(k) - ec;
            d * d
        })
        .sum()
}

/// Gradient and Hessian of the sum of squares in k.
fn sse_grad_hess(pts: &[(f64, f64)], k: f64) -> (f64, f64) {
    let mut g = 0.0;
    let mut h = 0.0;
    for &(ei, ec) in pts {
        let u = ei.powf(k);
        let l = ei.ln();
        let r = u - ec;
        g += 2.0 * r * u * l;
        h += 2.0 * u * l * l * (r + u);
    }
    (g, h)
}

/// Scalar minimization: log-spaced bracketing scan, golden-section
/// refinement, Newton polish. Relative tolerance well under 1e-10.
fn solve_k(pts: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    const SCAN: usize = 96;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let grid = |i: usize| (ln_lo + (ln_hi - ln_lo) * i as f64 / (SCAN - 1) as f64).exp();
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..SCAN {
        let f = sse(pts, grid(i));
        if f < best.0 {
            best = (f, i);
        }
    }
    if best.1 == SCAN - 1 && hi < K_HI_EXTENDED {
        // Minimum at the upper bound; retry on the extended range.
        return solve_k(pts, lo, K_HI_EXTENDED);
    }
    let (mut a, mut b) = (
        grid(best.1.saturating_sub(1)),
        grid((best.1 + 1).min(SCAN - 1)),
    );
    // Golden section on [a, b]; the scan guarantees a bracket (or a
    // boundary, in which case this contracts onto it).
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (sse(pts, c), sse(pts, d));
    while (b - a) > 1e-13 * (1.0 + a.abs()) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = sse(pts, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = sse(pts, d);
        }
    }
    let golden = 0.5 * (a + b);

    // Newton polish on the gradient; converges onto the representable
    // minimizer when one exists, otherwise stops at ulp-level steps.
    let mut k = golden;
    for _ in 0..32 {
        let (g, h) = sse_grad_hess(pts, k);
        if g == 0.0 || h <= 0.0 {
            break;
        }
        let next = k - g / h;
        if !next.is_finite() || next < lo || next > hi.max(b) {
            break;
        }
        let moved = (next - k).abs();
        k = next;
        if moved <= f64::EPSILON * k.abs() {
            break;
        }
    }
    if sse(pts, k) <= sse(pts, golden) {
        k
    } else {
        golden
    }
}

/// Fit k by nonlinear least squares in probability space.
pub fn fit_k(points: &[PairedPoint]) -> Result<KEstimate, FitError> {
    let (pts, excluded) = prepare(points);
    if pts.is_empty() && excluded > 0 {
        return Err(FitError::AllFiltered(excluded));
    }
    if pts.len() < 2 {
        return Err(FitError::TooFewPoints {
            usable: pts.len(),
            excluded,
        });
    }
    if pts.windows(2).all(|w| w[0].0 == w[1].0) {
        return Err(FitError::NotIdentifiable(pts[0].0));
    }
    Ok(KEstimate {
        k: solve_k(&pts, K_LO, K_HI),
        n_used: pts.len(),
        n_excluded: excluded,
    })
}

/// Log-space ordinary least squares through the origin:
/// `k = sum(ln e_i ln e_c) / sum((ln e_i)^2)`. Retained for comparison with
/// the probability-space fit.
pub fn fit_k_log_ols(points: &[PairedPoint]) -> Result<KEstimate, FitError> {
    let (pts, excluded) = prepare(points);
    if pts.is_empty() && excluded > 0 {
        return Err(FitError::AllFiltered(excluded));
    }
    if pts.len() < 2 {
        return Err(FitError::TooFewPoints {
            usable: pts.len(),
            excluded,
        });
    }
    if pts.windows(2).all(|w| w[0].0 == w[1].0) {
        return Err(FitError::NotIdentifiable(pts[0].0));
    }
    let num: f64 = pts.iter().map(|&(ei, ec)| ei.ln() * ec.ln()).sum();
    let den: f64 = pts.iter().map(|&(ei, _)| ei.ln() * ei.ln()).sum();
    Ok(KEstimate {
        k: num / den,
        n_used: pts.len(),
        n_excluded: excluded,
    })
}

/// Internal single-pair solver consistency hook: the NLS objective on one
/// point is minimized exactly at the point-wise estimate.
#[cfg(test)]
pub(crate) fn solve_k_unchecked(pts: &[(f64, f64)]) -> f64 {
    solve_k(pts, K_LO, K_HI)
}

/// Wild-bootstrap 95% confidence interval around an already-fitted k.
///
/// Per replicate, each log-space residual is scaled by an independent
/// standard normal draw, synthetic context rates are rebuilt (clamped to at
/// most 1) and k is refitted; the interval is the 2.5/97.5 percentile pair
/// of the replicate estimates.
pub fn wild_bootstrap(
    points: &[PairedPoint],
    k_hat: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64), FitError> {
    if n_boot < 100 {
        return Err(FitError::BadBootCount(n_boot));
    }
    let (pts, excluded) = prepare(points);
    if pts.len() < 2 {
        return Err(FitError::TooFewPoints {
            usable: pts.len(),
            excluded,
        });
    }
    let bases: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(ei, ec)| {
            let base = k_hat * ei.ln();
            let mut residual = ec.ln() - base;
            if residual.abs() < RESIDUAL_FLOOR {
                residual = 0.0;
            }
            (base, residual)
        })
        .collect();
    let boot_tag = crate::util::fnv1a64(b"wild-bootstrap");
    let mut replicates: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|rep| {
            let mut rng = CounterRng::new(stream_key(seed, &[boot_tag, rep as u64]));
            let synth: Vec<(f64, f64)> = pts
                .iter()
                .zip(&bases)
                .map(|(&(ei, _), &(base, residual))| {
                    let e_c = (base + residual * rng.next_normal()).exp().min(1.0);
                    (ei, e_c)
                })
                .collect();
            solve_k(&synth, K_LO, K_HI)
        })
        .collect();
    replicates.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&replicates, 0.025),
        quantile_sorted(&replicates, 0.975),
    ))
}

/// Single-SNR estimate `k = ln e_c / ln e_i`.
pub fn pointwise_k(e_i: f64, e_c: f64) -> Result<f64, FitError> {
    for r in [e_i, e_c] {
        if !(r > 0.0 && r < 1.0) {
            return Err(FitError::BoundaryRate(r));
        }
    }
    Ok(e_c.ln() / e_i.ln())
}

/// Accuracy transfer curve `p_c = 1 - (1 - p_i)^k`.
pub fn context_accuracy(p_i: f64, k: f64) -> f64 {
    1.0 - (1.0 - p_i).powf(k)
}

/// Fit the log-linear baseline `e = b exp(a H)` by least squares on
/// `ln e`. Points with `e = 0` cannot enter the log fit and are excluded;
/// the count of exclusions is returned alongside.
pub fn fit_klakow(points: &[(f64, f64)]) -> Result<(KlakowFit, usize), FitError> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(_, e)| e > 0.0 && e <= 1.0)
        .collect();
    let excluded = points.len() - pts.len();
    if pts.is_empty() {
        return Err(FitError::NothingToFit);
    }
    if pts.len() < 2 {
        return Err(FitError::TooFewPoints {
            usable: pts.len(),
            excluded,
        });
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if pts.windows(2).all(|w| w[0].0 == w[1].0) {
        return Err(FitError::NotIdentifiable(pts[0].0));
    }
    let n = pts.len() as f64;
    let mean_h = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_ln_e = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(h, e) in &pts {
        cov += (h - mean_h) * (e.ln() - mean_ln_e);
        var += (h - mean_h) * (h - mean_h);
    }
    let a = cov / var;
    let b = (mean_ln_e - a * mean_h).exp();
    Ok((KlakowFit { a, b }, excluded))
}

/// Pair up isolated (ZP) and context-bin rates per SNR for one
/// (system, partition).
pub fn paired_points(
    wer: &[ErrorRatePoint],
    system: &str,
    partition: &str,
    context_bin: BinLabel,
) -> Vec<PairedPoint> {
    let mut out = Vec::new();
    let rows: Vec<&ErrorRatePoint> = wer
        .iter()
        .filter(|p| p.system == system && p.partition == partition)
        .collect();
    let mut snrs: Vec<Snr> = rows.iter().map(|p| p.snr).collect();
    snrs.sort();
    snrs.dedup();
    for snr in snrs {
        let find = |bin: BinLabel| rows.iter().find(|p| p.bin == bin && p.snr == snr);
        if let (Some(zp), Some(ctx)) = (find(BinLabel::Zp), find(context_bin)) {
            out.push(PairedPoint {
                snr,
                e_i: zp.e,
                e_c: ctx.e,
            });
        }
    }
    out
}

/// Fit plus bootstrap interval, packaged for reporting. The interval is
/// widened to include the point estimate in the rare replicate-skew case,
/// keeping `ci_low <= k <= ci_high` a structural invariant.
#[allow(clippy::too_many_arguments)]
pub fn fit_with_ci(
    system: &str,
    partition: &str,
    context_bin: BinLabel,
    points: &[PairedPoint],
    n_boot: usize,
    seed: u64,
    log_space: bool,
    binspec_hash: Option<String>,
) -> Result<KFit, FitError> {
    let est = if log_space {
        fit_k_log_ols(points)?
    } else {
        fit_k(points)?
    };
    let (lo, hi) = wild_bootstrap(points, est.k, n_boot, seed)?;
    Ok(KFit {
        system: system.to_string(),
        partition: partition.to_string(),
        context_bin,
        k: est.k,
        ci_low: lo.min(est.k),
        ci_high: hi.max(est.k),
        n_points: est.n_used,
        n_boot,
        seed,
        excluded_points: est.n_excluded,
        binspec_hash,
    })
}

pub fn write_kfits_json(fits: &[KFit], path: &std::path::Path) -> Result<(), FitError> {
    let body = serde_json::to_string_pretty(fits).expect("KFit serializes");
    std::fs::write(path, body + "\n").map_err(|source| FitError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_kfits_json(path: &std::path::Path) -> Result<Vec<KFit>, FitError> {
    let body = std::fs::read_to_string(path).map_err(|source| FitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| FitError::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pts(pairs: &[(f64, f64)]) -> Vec<PairedPoint> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(e_i, e_c))| PairedPoint {
                snr: Snr::Db(i as i32 * 5 - 10),
                e_i,
                e_c,
            })
            .collect()
    }

    fn power_law(k: f64, eis: &[f64]) -> Vec<PairedPoint> {
        pts(&eis.iter().map(|&ei| (ei, ei.powf(k))).collect::<Vec<_>>())
    }

    #[test]
    fn identity_data_fits_k_one() {
        let points = pts(&[(0.9, 0.9), (0.7, 0.7), (0.5, 0.5), (0.3, 0.3)]);
        let est = fit_k(&points).unwrap();
        assert_abs_diff_eq!(est.k, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn exact_square_fits_k_two() {
        let points = pts(&[(0.9, 0.81), (0.7, 0.49), (0.5, 0.25), (0.3, 0.09)]);
        let est = fit_k(&points).unwrap();
        assert_abs_diff_eq!(est.k, 2.0, epsilon = 1e-8);
        assert_eq!(est.n_used, 4);
        assert_eq!(est.n_excluded, 0);
    }

    #[test]
    fn recovery_across_reference_exponents() {
        // Includes the human-listener anchors 1.38 and 2.72.
        let eis = [0.95, 0.8, 0.65, 0.5, 0.35, 0.2, 0.1];
        for k0 in [0.5, 1.0, 1.38, 2.0, 2.72, 5.0] {
            let est = fit_k(&power_law(k0, &eis)).unwrap();
            assert_abs_diff_eq!(est.k, k0, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_point_solver_agrees_with_pointwise() {
        for &(ei, ec) in &[(0.5, 0.3), (0.8, 0.1), (0.35, 0.9), (0.162, 0.084)] {
            let direct = pointwise_k(ei, ec).unwrap();
            let solved = solve_k_unchecked(&[(ei, ec)]);
            assert_abs_diff_eq!(solved, direct, epsilon = 1e-8);
        }
    }

    #[test]
    fn boundary_points_are_filtered_and_reported() {
        let points = pts(&[(1.0, 0.9), (0.5, 0.25), (0.25, 0.0625), (1e-9, 0.1)]);
        let est = fit_k(&points).unwrap();
        assert_eq!(est.n_used, 2);
        assert_eq!(est.n_excluded, 2);
        assert_abs_diff_eq!(est.k, 2.0, epsilon = 1e-8);

        let all_bad = pts(&[(1.0, 0.5), (0.0, 0.5)]);
        assert!(matches!(fit_k(&all_bad), Err(FitError::AllFiltered(2))));

        let too_few = pts(&[(0.5, 0.25)]);
        assert!(matches!(fit_k(&too_few), Err(FitError::TooFewPoints { usable: 1, .. })));

        let degenerate = pts(&[(0.5, 0.2), (0.5, 0.3)]);
        assert!(matches!(fit_k(&degenerate), Err(FitError::NotIdentifiable(_))));
    }

    #[test]
    fn e_c_of_one_is_allowed_in_nls() {
        let points = pts(&[(0.9, 1.0), (0.5, 0.7), (0.2, 0.3)]);
        let est = fit_k(&points).unwrap();
        assert!(est.k > 0.0 && est.n_used == 3);
    }

    #[test]
    fn pointwise_matches_published_clean_rates() {
        // ZP 16.2% vs HP 8.4%: ln(0.084)/ln(0.162).
        let k = pointwise_k(0.162, 0.084).unwrap();
        assert_abs_diff_eq!(k, 1.361, epsilon = 1e-3);
        assert_abs_diff_eq!(pointwise_k(0.5, 0.5).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pointwise_k(0.25, 0.0625).unwrap(), 2.0, epsilon = 1e-12);
        assert!(matches!(pointwise_k(1.0, 0.5), Err(FitError::BoundaryRate(_))));
        assert!(matches!(pointwise_k(0.5, 0.0), Err(FitError::BoundaryRate(_))));
    }

    #[test]
    fn context_accuracy_curve_values() {
        assert_eq!(context_accuracy(0.5, 2.0), 0.75);
        for i in 0..=10 {
            let p = i as f64 / 10.0;
            assert_abs_diff_eq!(context_accuracy(p, 1.0), p, epsilon = 1e-12);
        }
        // Enormous k makes acoustics irrelevant.
        assert!((1.0 - context_accuracy(0.1, 500.0)).abs() < 1e-20);
    }

    #[test]
    fn zero_residual_bootstrap_has_zero_width() {
        for k0 in [0.5, 1.0, 2.0, 5.0] {
            let points = power_law(k0, &[0.9, 0.7, 0.5, 0.3, 0.15]);
            let est = fit_k(&points).unwrap();
            assert_abs_diff_eq!(est.k, k0, epsilon = 1e-8);
            let (lo, hi) = wild_bootstrap(&points, est.k, 500, 42).unwrap();
            assert_eq!(lo, hi, "k0={k0}: CI [{lo}, {hi}]");
            assert_abs_diff_eq!(lo, est.k, epsilon = 1e-8);
        }
    }

    #[test]
    fn bootstrap_is_deterministic_in_seed() {
        let noisy = pts(&[(0.9, 0.75), (0.7, 0.52), (0.5, 0.22), (0.3, 0.11), (0.15, 0.02)]);
        let est = fit_k(&noisy).unwrap();
        let a = wild_bootstrap(&noisy, est.k, 999, 7).unwrap();
        let b = wild_bootstrap(&noisy, est.k, 999, 7).unwrap();
        assert_eq!(a, b);
        let c = wild_bootstrap(&noisy, est.k, 999, 8).unwrap();
        assert_ne!(a, c);
        assert!(a.0 < est.k && est.k < a.1);
    }

    #[test]
    fn bootstrap_width_shrinks_with_residuals() {
        let eis = [0.9f64, 0.7, 0.5, 0.3, 0.15];
        let k0 = 1.5;
        let residuals = [0.12, -0.2, 0.15, -0.1, 0.18];
        let make = |scale: f64| {
            pts(&eis
                .iter()
                .zip(&residuals)
                .map(|(&ei, &r)| (ei, (k0 * ei.ln() + r * scale).exp()))
                .collect::<Vec<_>>())
        };
        let full = make(1.0);
        let half = make(0.5);
        let k_full = fit_k(&full).unwrap().k;
        let k_half = fit_k(&half).unwrap().k;
        let (lo1, hi1) = wild_bootstrap(&full, k_full, 999, 3).unwrap();
        let (lo2, hi2) = wild_bootstrap(&half, k_half, 999, 3).unwrap();
        assert!(hi2 - lo2 < hi1 - lo1);
    }

    #[test]
    fn bootstrap_rejects_tiny_replicate_counts() {
        let points = power_law(2.0, &[0.9, 0.5, 0.2]);
        assert!(matches!(
            wild_bootstrap(&points, 2.0, 99, 1),
            Err(FitError::BadBootCount(99))
        ));
    }

    #[test]
    fn klakow_recovers_log_linear_data_exactly() {
        let (a0, b0) = (0.5, 0.01);
        let points: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let h = 2.0 + i as f64 * 0.4;
                (h, b0 * (a0 * h).exp())
            })
            .collect();
        let (fit, excluded) = fit_klakow(&points).unwrap();
        assert_eq!(excluded, 0);
        assert_abs_diff_eq!(fit.a, a0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.b, b0, epsilon = 1e-10);
    }

    #[test]
    fn klakow_constant_rate_gives_zero_slope() {
        let points: Vec<(f64, f64)> = (0..8).map(|i| (1.0 + i as f64, 0.25)).collect();
        let (fit, _) = fit_klakow(&points).unwrap();
        assert_abs_diff_eq!(fit.a, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.b, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn klakow_excludes_zero_rates() {
        let points = vec![(1.0, 0.0), (2.0, 0.1), (3.0, 0.2)];
        let (_, excluded) = fit_klakow(&points).unwrap();
        assert_eq!(excluded, 1);
        let all_zero = vec![(1.0, 0.0), (2.0, 0.0)];
        assert!(matches!(fit_klakow(&all_zero), Err(FitError::NothingToFit)));
    }

    #[test]
    fn pairing_joins_zp_with_context_rows_per_snr() {
        let mk = |bin: BinLabel, snr: Snr, e: f64| ErrorRatePoint {
            system: "s".into(),
            partition: "p".into(),
            bin,
            snr,
            e,
            n_ref_words: 100,
            clamped: false,
        };
        let wer = vec![
            mk(BinLabel::Zp, Snr::Db(0), 0.5),
            mk(BinLabel::Hp, Snr::Db(0), 0.25),
            mk(BinLabel::Zp, Snr::Db(10), 0.3),
            mk(BinLabel::Hp, Snr::Db(10), 0.09),
            mk(BinLabel::Zp, Snr::Clean, 0.1),
            // no HP row for clean -> unpaired, dropped
            mk(BinLabel::Lp, Snr::Clean, 0.08),
        ];
        let pairs = paired_points(&wer, "s", "p", BinLabel::Hp);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].snr, Snr::Db(0));
        assert_abs_diff_eq!(pairs[0].e_c, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn kfit_json_round_trip() {
        let fits = vec![KFit {
            system: "sys".into(),
            partition: "dev".into(),
            context_bin: BinLabel::Hp,
            k: 1.42,
            ci_low: 1.40,
            ci_high: 1.43,
            n_points: 9,
            n_boot: 9999,
            seed: 17,
            excluded_points: 1,
            binspec_hash: Some("abc123".into()),
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_kfits_json(&fits, f.path()).unwrap();
        assert_eq!(read_kfits_json(f.path()).unwrap(), fits);
    }

    proptest! {
        #[test]
        fn fit_is_invariant_to_point_order(
            eis in proptest::collection::vec(0.05f64..0.95, 3..9),
            k0 in 0.3f64..4.0,
            shift in 0usize..8,
        ) {
            let mut points = power_law(k0, &eis);
            let k1 = match fit_k(&points) {
                Ok(est) => est.k,
                Err(_) => return Ok(()), // degenerate draw (all e_i equal)
            };
            let n = points.len();
            points.rotate_left(shift % n);
            points.reverse();
            let k2 = fit_k(&points).unwrap().k;
            prop_assert_eq!(k1.to_bits(), k2.to_bits());
        }

        #[test]
        fn context_accuracy_is_monotone(
            p in 0.01f64..0.99,
            dp in 0.0f64..0.01,
            k in 0.1f64..10.0,
            dk in 0.0f64..1.0,
        ) {
            prop_assert!(context_accuracy(p + dp, k) >= context_accuracy(p, k) - 1e-12);
            prop_assert!(context_accuracy(p, k + dk) >= context_accuracy(p, k) - 1e-12);
        }
    }
}
