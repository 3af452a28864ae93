//! Innovation-sequence calibrators and the intensity-correction step.
//!
//! Two diagnostics are read off a sliding buffer of innovations. The
//! autocovariance calibrator measures lag-1 correlation over a family of
//! window lengths — whitening failure indicates the assumed noise intensities
//! are off. The Gaussian calibrator compares the empirical mean of
//! `|τ_j| / (2√S_jj)` against its theoretical value `1/√(2π)` under a correct
//! filter; its sign says whether the innovation spread is under- or
//! over-predicted. The signs of the two extremes jointly select which noise
//! intensity (process or measurement) gets corrected, and the Gaussian
//! extreme sets the correction magnitude through a negative-feedback
//! coefficient `c = 1 + σ·s·E_G` with a deadband and a per-step clamp.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::EPS_INTENSITY;

/// Deadband on the Gaussian extreme below which no correction is applied.
pub const DEFAULT_T_G: f64 = 0.02;

/// Default correction gain.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Per-step clamp on correction coefficients.
pub const CORRECTION_CLAMP: (f64, f64) = (0.5, 2.0);

/// Spacing between calibration window lengths.
const WINDOW_STEP: usize = 5;

// ---------------------------------------------------------------------------
// Innovation buffer
// ---------------------------------------------------------------------------

/// FIFO buffer of innovations and the matching theoretical innovation
/// variances (diagonals of `S`), as produced by the filter's own update.
#[derive(Debug, Clone)]
pub struct InnovationBuffer {
    taus: Vec<DVector<f64>>,
    s_diags: Vec<DVector<f64>>,
    /// Buffer capacity.
    pub n_cal: usize,
    /// Minimum fill level before the calibrators report anything.
    pub warmup: usize,
}

impl InnovationBuffer {
    pub fn new(n_cal: usize, warmup: usize) -> Result<Self> {
        if warmup < 2 || n_cal < warmup {
            return Err(Error::InvalidConfig(format!(
                "need 2 ≤ warmup ≤ n_cal, got warmup {warmup}, n_cal {n_cal}"
            )));
        }
        Ok(InnovationBuffer {
            taus: Vec::with_capacity(n_cal),
            s_diags: Vec::with_capacity(n_cal),
            n_cal,
            warmup,
        })
    }

    /// Appends one innovation with its theoretical variance diagonal,
    /// dropping the oldest pair once at capacity. Variances must be
    /// strictly positive (guaranteed by a successful filter update).
    pub fn push(&mut self, tau: DVector<f64>, s_diag: DVector<f64>) {
        debug_assert_eq!(tau.len(), s_diag.len());
        debug_assert!(s_diag.iter().all(|&v| v > 0.0), "non-positive innovation variance");
        if self.taus.len() == self.n_cal {
            self.taus.remove(0);
            self.s_diags.remove(0);
        }
        self.taus.push(tau);
        self.s_diags.push(s_diag);
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Whether enough innovations have accumulated for calibration.
    pub fn is_ready(&self) -> bool {
        self.taus.len() >= self.warmup
    }

    fn require_ready(&self) -> Result<usize> {
        if !self.is_ready() {
            return Err(Error::InsufficientData("calibration buffer below warmup"));
        }
        Ok(self.taus.len())
    }
}

// ---------------------------------------------------------------------------
// Calibrators
// ---------------------------------------------------------------------------

/// Lag-1 autocovariance calibrator.
///
/// For each window length `η ∈ {⌈N/3⌉, ⌈N/3⌉+5, …} ∩ [2, N]` (with `N` the
/// current buffer fill), forms the mean-subtracted lag-1 sample
/// autocovariance matrix over the newest `η` innovations and returns the
/// signed entry of largest magnitude across all windows and entries. Values
/// near zero indicate a white innovation sequence.
pub fn autocov_calibration(buf: &InnovationBuffer) -> Result<f64> {
    let n = buf.require_ready()?;
    let dim = buf.taus[0].len();
    let mut mean = DVector::zeros(dim);
    for tau in &buf.taus {
        mean += tau;
    }
    mean /= n as f64;

    // Window η sums the newest η−1 adjacent-pair products, so successive
    // windows share one suffix accumulation: extend the running sum with the
    // next older products instead of recomputing each window from scratch.
    let mut best = 0.0_f64;
    let start = ((n + 2) / 3).max(2);
    let mut acc = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut consumed = 0usize;
    let mut eta = start;
    while eta <= n {
        while consumed < eta - 1 {
            let p = n - 1 - consumed;
            acc += (&buf.taus[p] - &mean) * (&buf.taus[p - 1] - &mean).transpose();
            consumed += 1;
        }
        let denom = (eta - 1) as f64;
        for &v in acc.iter() {
            let w = v / denom;
            if w.abs() > best.abs() {
                best = w;
            }
        }
        eta += WINDOW_STEP;
    }
    Ok(best)
}

/// Gaussian-shape calibrator.
///
/// Per innovation component `j`, the empirical statistic
/// `P_e = mean_t |τ_{j,t}| / (2√S_{jj,t})` equals `P_g = 1/√(2π)` when the
/// filter's innovation variance matches reality (half-normal mean identity).
/// The normalized deviation `E_G = (P_e − P_g)/√(P_e² + P_g²)` lies in
/// `[−1, 1)`: positive when the innovation spread is larger than predicted
/// (intensity underestimated), negative when smaller. Returns the signed
/// extreme across components.
pub fn gaussian_calibration(buf: &InnovationBuffer) -> Result<f64> {
    let n = buf.require_ready()?;
    let dim = buf.taus[0].len();
    let p_g = std::f64::consts::TAU.sqrt().recip();

    let mut best = 0.0_f64;
    for j in 0..dim {
        let mut p_e = 0.0;
        for (tau, s_diag) in buf.taus.iter().zip(buf.s_diags.iter()) {
            p_e += tau[j].abs() / (2.0 * s_diag[j].sqrt());
        }
        p_e /= n as f64;
        let e_g = (p_e - p_g) / (p_e * p_e + p_g * p_g).sqrt();
        if e_g.abs() > best.abs() {
            best = e_g;
        }
    }
    Ok(best)
}

/// Selects which intensity to correct from the two calibrator extremes:
/// matching nonzero signs implicate the process noise, opposite signs the
/// measurement noise, and a zero on either side selects nothing.
pub fn switch_flags(e_a_max: f64, e_g_max: f64) -> (u8, u8) {
    let prod = e_a_max.signum() * e_g_max.signum();
    if e_a_max == 0.0 || e_g_max == 0.0 {
        (0, 0)
    } else if prod > 0.0 {
        (1, 0)
    } else {
        (0, 1)
    }
}

// ---------------------------------------------------------------------------
// Correction step
// ---------------------------------------------------------------------------

/// One step's calibration outcome, as recorded in the diagnostics stream.
///
/// `e_a_max` and `e_g_max` hold the raw calibrator extremes (before the
/// deadband), while the flags and coefficients reflect what was actually
/// applied. At most one of `s_q`, `s_r` is set, and the coefficient on an
/// unflagged side is exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub e_a_max: f64,
    pub e_g_max: f64,
    pub s_q: u8,
    pub s_r: u8,
    pub c_q: f64,
    pub c_r: f64,
}

impl CalibrationReport {
    /// Report for a step where calibration did not run (warmup, or the
    /// correction loop disabled): zero extremes, no flags, unit coefficients.
    pub fn inactive() -> Self {
        CalibrationReport { e_a_max: 0.0, e_g_max: 0.0, s_q: 0, s_r: 0, c_q: 1.0, c_r: 1.0 }
    }
}

/// Applies the negative-feedback intensity correction.
///
/// A Gaussian extreme inside the deadband `|e_g_max| < t_g` is treated as
/// zero: no flags, unit coefficients, intensities unchanged. Otherwise the
/// flags pick one side and its coefficient `1 + sigma·e_g_max` (clamped to
/// `[0.5, 2.0]`) multiplies that intensity, floored at the global minimum.
/// Returns the step report alongside the updated `(I_q, I_r)` pair.
pub fn correction_step(
    e_a_max: f64,
    e_g_max: f64,
    intensities: (f64, f64),
    sigma: f64,
    t_g: f64,
) -> (CalibrationReport, (f64, f64)) {
    debug_assert!(sigma > 0.0 && sigma < 1.0);
    let e_g_eff = if e_g_max.abs() < t_g { 0.0 } else { e_g_max };
    let (s_q, s_r) = switch_flags(e_a_max, e_g_eff);
    let coeff = |flag: u8| -> f64 {
        (1.0 + sigma * f64::from(flag) * e_g_eff).clamp(CORRECTION_CLAMP.0, CORRECTION_CLAMP.1)
    };
    let c_q = coeff(s_q);
    let c_r = coeff(s_r);
    let (i_q, i_r) = intensities;
    let updated = ((i_q * c_q).max(EPS_INTENSITY), (i_r * c_r).max(EPS_INTENSITY));
    (CalibrationReport { e_a_max, e_g_max, s_q, s_r, c_q, c_r }, updated)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    const EPS: f64 = 1e-9;

    fn scalar_buffer(taus: &[f64], s: f64) -> InnovationBuffer {
        let mut buf = InnovationBuffer::new(taus.len().max(4), taus.len().max(4).min(taus.len())).unwrap();
        for &t in taus {
            buf.push(DVector::from_element(1, t), DVector::from_element(1, s));
        }
        buf
    }

    // -- autocovariance calibrator ---------------------------------------------

    #[test]
    fn test_autocov_constant_sequence_is_zero() {
        let buf = scalar_buffer(&[3.0; 60], 1.0);
        assert_eq!(autocov_calibration(&buf).unwrap(), 0.0);
    }

    #[test]
    fn test_autocov_alternating_sequence_is_minus_one() {
        // +1,−1,… has zero mean and every adjacent product −1, so every
        // window's lag-1 autocovariance is exactly −1.
        let taus: Vec<f64> = (0..60).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let buf = scalar_buffer(&taus, 1.0);
        assert!((autocov_calibration(&buf).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_autocov_white_noise_null_distribution() {
        // On i.i.d. innovations the extreme should hover near zero with no
        // systematic sign.
        let mut rng = crate::streams::substream(43, 0xCA11);
        let mut values = Vec::with_capacity(1000);
        for _ in 0..1000 {
            let mut buf = InnovationBuffer::new(60, 30).unwrap();
            for _ in 0..60 {
                let t: f64 = rng.sample(StandardNormal);
                buf.push(DVector::from_element(1, t), DVector::from_element(1, 1.0));
            }
            values.push(autocov_calibration(&buf).unwrap());
        }
        let mut magnitudes: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        magnitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = magnitudes[500];
        assert!(median < 0.35, "null median {median}");
        let positive = values.iter().filter(|&&v| v > 0.0).count();
        assert!(
            (350..=650).contains(&positive),
            "sign imbalance: {positive}/1000 positive"
        );
    }

    #[test]
    fn test_autocov_not_ready_before_warmup() {
        let mut buf = InnovationBuffer::new(60, 30).unwrap();
        for _ in 0..29 {
            buf.push(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0));
        }
        assert!(matches!(autocov_calibration(&buf), Err(Error::InsufficientData(_))));
        buf.push(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0));
        assert!(autocov_calibration(&buf).is_ok());
    }

    // -- Gaussian calibrator ------------------------------------------------------

    /// Buffer whose |τ| equals the half-normal mean for unit true variance,
    /// while the assumed variance is `ratio²` times larger.
    fn ratio_buffer(ratio: f64, dim_values: &[f64]) -> InnovationBuffer {
        let m = (2.0 / std::f64::consts::PI).sqrt();
        let dim = dim_values.len();
        let mut buf = InnovationBuffer::new(40, 30).unwrap();
        for t in 0..40 {
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            let tau = DVector::from_iterator(dim, dim_values.iter().map(|_| sign * m));
            let s = DVector::from_iterator(dim, dim_values.iter().map(|_| ratio * ratio));
            buf.push(tau, s);
        }
        buf
    }

    #[test]
    fn test_gaussian_zero_when_spread_matches_prediction() {
        // |τ| pinned to the half-normal mean 2√S/√(2π) gives P_e = P_g.
        let s = 2.5_f64;
        let m = 2.0 * s.sqrt() / std::f64::consts::TAU.sqrt();
        let taus: Vec<f64> = (0..40).map(|t| if t % 2 == 0 { m } else { -m }).collect();
        let buf = scalar_buffer(&taus, s);
        assert!(gaussian_calibration(&buf).unwrap().abs() < 1e-12);
    }

    #[test]
    fn test_gaussian_overestimated_variance_goes_negative() {
        // Assumed variance 4× the true one (ratio 2): P_e = P_g/2 and
        // E_G = −0.5/√1.25 ≈ −0.4472.
        let buf = ratio_buffer(2.0, &[1.0]);
        let e_g = gaussian_calibration(&buf).unwrap();
        assert!((e_g + 0.5 / 1.25_f64.sqrt()).abs() < 1e-9, "got {e_g}");
    }

    #[test]
    fn test_gaussian_underestimated_variance_goes_positive() {
        // Assumed variance 100× too small (ratio 0.1): E_G = 9/√101 ≈ 0.8955.
        let buf = ratio_buffer(0.1, &[1.0]);
        let e_g = gaussian_calibration(&buf).unwrap();
        assert!((e_g - 9.0 / 101.0_f64.sqrt()).abs() < 1e-9, "got {e_g}");
    }

    #[test]
    fn test_gaussian_extreme_scans_all_components() {
        // First component at ratio 2 (≈ −0.447), second at ratio 0.1
        // (≈ +0.896): the larger magnitude wins with its sign.
        let m = (2.0 / std::f64::consts::PI).sqrt();
        let mut buf = InnovationBuffer::new(40, 30).unwrap();
        for t in 0..40 {
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            buf.push(
                DVector::from_vec(vec![sign * m, sign * m]),
                DVector::from_vec(vec![4.0, 0.01]),
            );
        }
        let e_g = gaussian_calibration(&buf).unwrap();
        assert!((e_g - 9.0 / 101.0_f64.sqrt()).abs() < 1e-9, "got {e_g}");
    }

    #[test]
    fn test_gaussian_bounded_and_reaches_minus_one_for_zero_innovations() {
        let buf = scalar_buffer(&[0.0; 30], 1.0);
        let e_g = gaussian_calibration(&buf).unwrap();
        assert!((e_g + 1.0).abs() < 1e-12);

        let mut rng = crate::streams::substream(47, 0xCA12);
        for _ in 0..100 {
            let taus: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal) * 50.0).collect();
            let e = gaussian_calibration(&scalar_buffer(&taus, 0.01)).unwrap();
            assert!(e.abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn test_gaussian_decreases_as_assumed_scale_grows() {
        let mut rng = crate::streams::substream(53, 0xCA13);
        let taus: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        let mut last = f64::INFINITY;
        for scale in [0.25, 0.5, 1.0, 2.0, 4.0, 16.0] {
            let e = gaussian_calibration(&scalar_buffer(&taus, scale)).unwrap();
            assert!(e < last, "E_G not decreasing at scale {scale}");
            last = e;
        }
    }

    // -- switch flags & correction -------------------------------------------------

    #[test]
    fn test_switch_flags_sign_combinations() {
        assert_eq!(switch_flags(0.3, 0.2), (1, 0));
        assert_eq!(switch_flags(0.3, -0.2), (0, 1));
        assert_eq!(switch_flags(0.0, 0.5), (0, 0));
        assert_eq!(switch_flags(-0.3, -0.2), (1, 0));
        assert_eq!(switch_flags(-0.3, 0.2), (0, 1));
        assert_eq!(switch_flags(0.4, 0.0), (0, 0));
    }

    #[test]
    fn test_correction_grows_flagged_intensity() {
        let (report, (i_q, i_r)) = correction_step(0.5, 0.5, (2.0, 3.0), 0.1, DEFAULT_T_G);
        assert_eq!((report.s_q, report.s_r), (1, 0));
        assert!((report.c_q - 1.05).abs() < EPS);
        assert!((report.c_r - 1.0).abs() < EPS);
        assert!((i_q - 2.1).abs() < EPS);
        assert!((i_r - 3.0).abs() < EPS);
    }

    #[test]
    fn test_correction_deadband_stops_the_process() {
        let (report, (i_q, i_r)) = correction_step(0.5, 0.01, (2.0, 3.0), 0.1, DEFAULT_T_G);
        assert_eq!((report.s_q, report.s_r), (0, 0));
        assert_eq!((report.c_q, report.c_r), (1.0, 1.0));
        assert_eq!((i_q, i_r), (2.0, 3.0));
        // The raw extreme is still reported.
        assert!((report.e_g_max - 0.01).abs() < EPS);
    }

    #[test]
    fn test_correction_without_flags_is_identity() {
        let (report, out) = correction_step(0.0, 0.5, (2.0, 3.0), 0.1, DEFAULT_T_G);
        assert_eq!((report.s_q, report.s_r), (0, 0));
        assert_eq!(out, (2.0, 3.0));
    }

    #[test]
    fn test_correction_clamps_and_floors() {
        // σ·e_g = −0.81 would give c = 0.19; the clamp holds it at 0.5.
        let (report, (i_q, _)) = correction_step(-1.0, -0.9, (1.0, 1.0), 0.9, DEFAULT_T_G);
        assert_eq!(report.s_q, 1);
        assert!((report.c_q - 0.5).abs() < EPS);
        assert!((i_q - 0.5).abs() < EPS);

        let (_, (i_q, _)) = correction_step(-1.0, -0.9, (1e-12, 1.0), 0.9, DEFAULT_T_G);
        assert_eq!(i_q, EPS_INTENSITY);
    }

    proptest! {
        #[test]
        fn prop_correction_invariants(
            e_a in -1.0_f64..1.0,
            e_g in -1.0_f64..1.0,
            sigma in 0.01_f64..0.99,
            t_g in 0.0_f64..0.2,
            i_q in 1e-9_f64..1e4,
            i_r in 1e-9_f64..1e4,
        ) {
            let (report, (out_q, out_r)) = correction_step(e_a, e_g, (i_q, i_r), sigma, t_g);
            prop_assert_eq!(report.s_q * report.s_r, 0);
            prop_assert!(report.c_q >= 0.5 && report.c_q <= 2.0);
            prop_assert!(report.c_r >= 0.5 && report.c_r <= 2.0);
            if report.s_q == 0 { prop_assert_eq!(report.c_q, 1.0); }
            if report.s_r == 0 { prop_assert_eq!(report.c_r, 1.0); }
            prop_assert!(out_q >= EPS_INTENSITY && out_r >= EPS_INTENSITY);
            prop_assert_eq!(report.e_a_max, e_a);
            prop_assert_eq!(report.e_g_max, e_g);
            if e_g.abs() < t_g {
                prop_assert_eq!((out_q, out_r), ((i_q).max(EPS_INTENSITY), (i_r).max(EPS_INTENSITY)));
            }
        }
    }
}
