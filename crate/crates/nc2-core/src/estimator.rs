//! Factorized noise-covariance estimation.
//!
//! A noise covariance is carried as `intensity × distribution`, where the
//! intensity is the sum of all matrix entries and the distribution is a
//! unit-entry-sum PSD matrix describing how that mass is spread. The raw
//! moment estimators below produce windowed innovation statistics whose
//! expectations are the measurement-noise covariance (`raw_measurement_moment`)
//! and the process-noise covariance (`raw_process_moment`);
//! [`normalize_distribution`] projects a raw moment onto the distribution
//! manifold (symmetric, PSD, unit entry sum) with a carry-forward fallback
//! for degenerate moments.
//!
//! Windowed sums are computed directly (the window is at most 20 entries, so
//! there is nothing to optimize); [`RecursiveMoments`] is a streaming
//! equivalent kept for cross-validation.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{symmetrize, CovarianceMatrix, SystemModel};

/// Smallest admissible noise intensity.
pub const EPS_INTENSITY: f64 = 1e-12;

/// Entry-sum threshold below which a raw moment is considered degenerate.
pub const EPS_ENTRY_SUM: f64 = 1e-10;

/// Minimum entry-sum-to-trace ratio a clipped moment must carry before it
/// is normalized into a distribution. Dividing by the entry sum amplifies
/// near-canceling matrices: even a genuinely PSD shape with strong negative
/// off-diagonals can have an entry sum arbitrarily small relative to its
/// trace, and normalizing it yields a distribution with enormous entries.
/// Accepted updates are sticky — later degenerate moments carry them
/// forward — so one extreme shape can distort the filter for good. The
/// ratio floor bounds every accepted distribution's trace (and hence its
/// entries) by its reciprocal; shapes beyond it are treated as degenerate
/// and the previous distribution is carried forward instead.
pub const MIN_SUM_TRACE_RATIO: f64 = 0.05;

/// Relative singular-value cutoff for [`pseudo_inverse`].
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Noise factorization
// ---------------------------------------------------------------------------

/// A noise covariance split into a scalar intensity (entry sum) and an
/// element distribution matrix (unit entry sum, PSD).
///
/// The two parts evolve separately inside the adaptive filter: distributions
/// come from the moment estimators, intensities from the calibration and
/// correction loop.
#[derive(Debug, Clone)]
pub struct NoiseFactorization {
    intensity: f64,
    distribution: DMatrix<f64>,
}

impl NoiseFactorization {
    /// Validated constructor: requires a unit-entry-sum PSD distribution
    /// (within 1e-9) and an intensity of at least [`EPS_INTENSITY`].
    pub fn new(intensity: f64, distribution: DMatrix<f64>) -> Result<Self> {
        if !intensity.is_finite() || intensity < EPS_INTENSITY {
            return Err(Error::InvalidConfig(format!(
                "noise intensity must be ≥ {EPS_INTENSITY}, got {intensity}"
            )));
        }
        if distribution.nrows() != distribution.ncols() {
            return Err(Error::dims(
                "NoiseFactorization distribution",
                "square",
                format!("{}×{}", distribution.nrows(), distribution.ncols()),
            ));
        }
        let sum = distribution.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "distribution entry sum must be 1, got {sum}"
            )));
        }
        let sym = symmetrize(&distribution);
        let min_eig = sym
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !min_eig.is_finite() || min_eig < -1e-9 {
            return Err(Error::NotPsd(min_eig));
        }
        Ok(NoiseFactorization { intensity, distribution: sym })
    }

    /// Factorizes an existing covariance: intensity = entry sum,
    /// distribution = covariance / entry sum.
    pub fn from_covariance(cov: &CovarianceMatrix) -> Result<Self> {
        let sum = cov.entry_sum();
        if !(sum > EPS_ENTRY_SUM) {
            return Err(Error::FactorizationFailed);
        }
        NoiseFactorization::new(sum, cov.entries() / sum)
    }

    /// The all-ones factorization: intensity `n²`, distribution `1/n²`
    /// everywhere. This is the uninformative initial guess used when nothing
    /// is known about a noise source.
    pub fn uniform(n: usize) -> Self {
        let n2 = (n * n) as f64;
        NoiseFactorization {
            intensity: n2,
            distribution: DMatrix::from_element(n, n, 1.0 / n2),
        }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn distribution(&self) -> &DMatrix<f64> {
        &self.distribution
    }

    pub fn dimension(&self) -> usize {
        self.distribution.nrows()
    }

    /// Multiplies the intensity by `c`, flooring at [`EPS_INTENSITY`].
    pub fn scale_intensity(&mut self, c: f64) {
        self.intensity = (self.intensity * c).max(EPS_INTENSITY);
    }

    /// Replaces the intensity, flooring at [`EPS_INTENSITY`].
    pub fn set_intensity(&mut self, intensity: f64) {
        self.intensity = intensity.max(EPS_INTENSITY);
    }

    /// Replaces the distribution with one produced by
    /// [`normalize_distribution`], which already guarantees the invariants.
    pub(crate) fn replace_distribution(&mut self, distribution: DMatrix<f64>) {
        debug_assert!((distribution.sum() - 1.0).abs() < 1e-6);
        self.distribution = distribution;
    }
}

/// Recomposes the covariance `intensity × distribution`.
pub fn compose_covariance(f: &NoiseFactorization) -> CovarianceMatrix {
    CovarianceMatrix::wrap(&f.distribution * f.intensity)
}

// ---------------------------------------------------------------------------
// Moment window
// ---------------------------------------------------------------------------

/// Ring buffers of recent innovations and their `H P Hᵀ` terms, plus the
/// forgetting factors of the two weighted moments.
///
/// With `k` innovations pushed so far, the effective window length is
/// `N = min(k − 1, n_window)`: the newest `N` entries participate in the
/// moment sums, so the very first innovation is skipped while the window
/// grows and at least two pushes are needed before any estimate exists.
#[derive(Debug, Clone)]
pub struct MomentWindow {
    taus: VecDeque<DVector<f64>>,
    hphs: VecDeque<DMatrix<f64>>,
    /// Ring capacity and maximum window length.
    pub n_window: usize,
    /// Slow forgetting factor (measurement moment).
    pub b1: f64,
    /// Fast forgetting factor (the moment tracking the current innovation
    /// covariance inside the process-moment computation).
    pub b2: f64,
    pushed: usize,
    uniform: bool,
}

impl MomentWindow {
    pub fn new(n_window: usize, b1: f64, b2: f64) -> Result<Self> {
        if n_window == 0 {
            return Err(Error::InvalidConfig("window length must be positive".into()));
        }
        for (name, b) in [("b1", b1), ("b2", b2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "forgetting factor {name} must lie in (0,1), got {b}"
                )));
            }
        }
        Ok(MomentWindow {
            taus: VecDeque::with_capacity(n_window),
            hphs: VecDeque::with_capacity(n_window),
            n_window,
            b1,
            b2,
            pushed: 0,
            uniform: false,
        })
    }

    /// Switches the measurement moment to the plain windowed average
    /// `(1/N) Σ (τ τᵀ − H P Hᵀ)` with per-step `H P Hᵀ` terms.
    pub fn with_uniform_weights(mut self, uniform: bool) -> Self {
        self.uniform = uniform;
        self
    }

    pub fn push(&mut self, tau: DVector<f64>, hph: DMatrix<f64>) {
        if self.taus.len() == self.n_window {
            self.taus.pop_front();
            self.hphs.pop_front();
        }
        self.taus.push_back(tau);
        self.hphs.push_back(hph);
        self.pushed += 1;
    }

    /// Total number of innovations ever pushed.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Effective window length `N = min(pushed − 1, n_window)`.
    pub fn effective_n(&self) -> usize {
        self.pushed.saturating_sub(1).min(self.n_window)
    }

    /// Newest-last view of the buffered innovations.
    pub fn taus(&self) -> &VecDeque<DVector<f64>> {
        &self.taus
    }

    /// Newest-last view of the buffered `H P Hᵀ` matrices.
    pub fn hphs(&self) -> &VecDeque<DMatrix<f64>> {
        &self.hphs
    }

    fn require_window(&self) -> Result<usize> {
        let n = self.effective_n();
        if n == 0 {
            return Err(Error::InsufficientData(
                "moment window needs at least two innovations",
            ));
        }
        Ok(n)
    }

    /// `d_{N,b} Σ_{i=0..N−1} bⁱ τ_{k−i} τ_{k−i}ᵀ` over the newest `N` entries.
    fn weighted_outer_sum(&self, b: f64, n: usize) -> DMatrix<f64> {
        let dim = self.taus.back().expect("window nonempty").len();
        let mut acc = DMatrix::zeros(dim, dim);
        let mut w = geometric_weight(n, b);
        for tau in self.taus.iter().rev().take(n) {
            acc += tau * tau.transpose() * w;
            w *= b;
        }
        acc
    }
}

/// Normalizing constant `d_{N,b} = (1 − b) / (1 − b^N)`, which makes the
/// geometric weights `d·bⁱ`, `i = 0..N−1`, sum to one.
pub(crate) fn geometric_weight(n: usize, b: f64) -> f64 {
    (1.0 - b) / (1.0 - b.powi(n as i32))
}

// ---------------------------------------------------------------------------
// Raw moments
// ---------------------------------------------------------------------------

/// Windowed measurement-noise moment: `Σ d b₁^{k−t} τ_t τ_tᵀ − H P_{k|k−1} Hᵀ`.
///
/// Its expectation is the measurement-noise covariance. The uniform-weight
/// variant replaces the geometric weights with a plain average and subtracts
/// each step's own `H P Hᵀ` instead of the current one.
pub fn raw_measurement_moment(window: &MomentWindow, current_hph: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = window.require_window()?;
    if window.uniform {
        let dim = current_hph.nrows();
        let mut acc = DMatrix::zeros(dim, dim);
        for (tau, hph) in window.taus.iter().rev().zip(window.hphs.iter().rev()).take(n) {
            acc += tau * tau.transpose() - hph;
        }
        Ok(acc / n as f64)
    } else {
        Ok(window.weighted_outer_sum(window.b1, n) - current_hph)
    }
}

/// Windowed process-noise moment.
///
/// A fast-forgetting innovation moment `A_M` (factor `b₂`, entering with an
/// extra power of `b₂` so its weights total `b₂` rather than one) is compared
/// against `A_R̂`; the difference is mapped back into state space and has the
/// propagated posterior `Φ P_{k−1|k−1} Φᵀ` removed.
///
/// Two structural facts shape how the output behaves. First, when the two
/// moments share their weighting the subtraction cancels the innovation
/// terms exactly and returns precisely the process covariance the filter
/// already assumed — the uniform-weight branch realizes that stationary
/// form, and the `b₂ ≠ b₁` weighting breaks the identity only through
/// sampling noise, never through a mean shift. Second, with the `b₂`-mass
/// scaling the difference is dominated by `−(1−b₂)` times the windowed
/// innovation covariance whenever the filter is statistically consistent,
/// so the projected update usually degenerates and
/// [`normalize_distribution`] carries the previous distribution forward;
/// the process distribution only moves on gross transients where the newest
/// innovations dwarf the slow window. Steady-state process-noise adaptation
/// therefore flows through the intensity corrections, not this moment — by
/// construction the moment can hold a distribution, not discover one.
///
/// For a square full-rank `H` the map back is `H⁻¹ (·) H⁻ᵀ` (computed via the
/// SVD pseudoinverse). Otherwise — or when that path yields a strongly
/// indefinite result, with an eigenvalue below `−0.1 × trace` — the adjoint
/// substitution `Hᵀ (·) H` is used instead.
pub fn raw_process_moment(
    window: &MomentWindow,
    a_r: &DMatrix<f64>,
    model: &SystemModel,
    p_prev: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = window.require_window()?;
    let a_m = if window.uniform {
        let dim = a_r.nrows();
        let mut acc = DMatrix::zeros(dim, dim);
        for tau in window.taus.iter().rev().take(n) {
            acc += tau * tau.transpose();
        }
        acc / n as f64
    } else {
        window.weighted_outer_sum(window.b2, n) * window.b2
    };
    let delta = a_m - a_r;
    let propagated = &model.phi * p_prev * model.phi.transpose();

    if model.n_z == model.n_x {
        let svd = model.h.clone().svd(true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
        let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        if smin > PINV_RELATIVE_CUTOFF * smax {
            let h_pinv = svd
                .pseudo_inverse(PINV_RELATIVE_CUTOFF * smax)
                .expect("non-negative cutoff");
            let candidate = &h_pinv * &delta * h_pinv.transpose() - &propagated;
            let sym = symmetrize(&candidate);
            let min_eig = sym
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig >= -0.1 * sym.trace() {
                return Ok(candidate);
            }
        }
    }
    Ok(model.h.transpose() * delta * &model.h - propagated)
}

/// Moore–Penrose pseudoinverse by SVD; singular values below
/// `1e-10 × σ_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    svd.pseudo_inverse(PINV_RELATIVE_CUTOFF * smax)
        .expect("non-negative cutoff")
}

// ---------------------------------------------------------------------------
// Distribution projection
// ---------------------------------------------------------------------------

/// Symmetrizes and clips negative eigenvalues to zero. Inputs that are
/// already PSD are returned after symmetrization only, without a
/// reconstruction round-trip.
pub(crate) fn psd_clip(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

/// Relative tolerance for accepting a sampled moment as positive
/// semidefinite: eigenvalues may dip below zero by at most this fraction of
/// the trace, which admits floating-point residue from the eigensolve but no
/// statistically negative direction.
const PSD_ACCEPT_REL_TOL: f64 = 1e-9;

/// Shared projection core: `None` when the moment is not a valid covariance
/// sample, otherwise the unit-sum distribution together with its entry sum.
///
/// A moment is rejected when any of these hold: the input is non-finite;
/// its symmetric part is indefinite beyond floating-point tolerance
/// (smallest eigenvalue below `−`[`PSD_ACCEPT_REL_TOL`]` × |trace|`); or the
/// entry sum after zeroing tolerance-level negatives is ≤ [`EPS_ENTRY_SUM`]
/// or below [`MIN_SUM_TRACE_RATIO`] of the trace.
///
/// Strict acceptance is load-bearing for the filter loop. A covariance
/// sample with a genuinely negative direction is not a covariance; clipping
/// one to its positive part leaves a low-rank sliver, and normalizing that
/// sliver hands the filter a distribution with a collapsed direction. The
/// state component along that direction then goes unfiltered, the
/// autocovariance statistic pins positive, and the corrections mis-route
/// until the innovation covariance goes singular — and because acceptances
/// are rare, the bad shape persists once absorbed. Carrying the previous
/// distribution forward instead keeps every distribution ever used a valid
/// one and lets the intensity corrections do the adapting.
pub(crate) fn project_distribution(raw: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    if !raw.iter().all(|v| v.is_finite()) {
        return None;
    }
    let sym = symmetrize(raw);
    let min_eig = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_ACCEPT_REL_TOL * sym.trace().abs() {
        return None;
    }
    let clipped = if min_eig >= 0.0 { sym } else { psd_clip(&sym) };
    let sum = clipped.sum();
    if !(sum > EPS_ENTRY_SUM.max(MIN_SUM_TRACE_RATIO * clipped.trace())) {
        return None;
    }
    Some((clipped / sum, sum))
}

/// Projects a raw moment onto the distribution manifold: symmetrize, zero
/// out tolerance-level negative eigenvalues, divide by the entry sum.
/// Invalid samples (an indefinite spectrum beyond floating-point tolerance,
/// entry sum too small in absolute terms or relative to the trace, or
/// non-finite input) fall back to the previous distribution unchanged.
pub fn normalize_distribution(raw: &DMatrix<f64>, previous: &NoiseFactorization) -> DMatrix<f64> {
    match project_distribution(raw) {
        Some((distribution, _)) => distribution,
        None => previous.distribution().clone(),
    }
}

// ---------------------------------------------------------------------------
// Streaming cross-check
// ---------------------------------------------------------------------------

/// Streaming form of the two windowed outer-product sums.
///
/// Kept as a validation twin for the direct sums in [`MomentWindow`]: each
/// push performs `W ← b·W + τ τᵀ`, subtracting `b^cap` times the evicted
/// entry once the ring is full; while the window is still growing the oldest
/// stored entry (which the `N = k−1` rule excludes) is subtracted at read
/// time with weight `b^{len−1}`.
#[derive(Debug, Clone)]
pub struct RecursiveMoments {
    ring: VecDeque<DVector<f64>>,
    cap: usize,
    b1: f64,
    b2: f64,
    w1: Option<DMatrix<f64>>,
    w2: Option<DMatrix<f64>>,
    pushed: usize,
}

impl RecursiveMoments {
    pub fn new(cap: usize, b1: f64, b2: f64) -> Self {
        RecursiveMoments { ring: VecDeque::with_capacity(cap), cap, b1, b2, w1: None, w2: None, pushed: 0 }
    }

    pub fn push(&mut self, tau: &DVector<f64>) {
        let outer = tau * tau.transpose();
        let evicted = if self.ring.len() == self.cap { self.ring.pop_front() } else { None };
        for (w, b) in [(&mut self.w1, self.b1), (&mut self.w2, self.b2)] {
            let updated = match w.take() {
                Some(prev) => {
                    let mut next = prev * b + &outer;
                    if let Some(ev) = &evicted {
                        next -= ev * ev.transpose() * b.powi(self.cap as i32);
                    }
                    next
                }
                None => outer.clone(),
            };
            *w = Some(updated);
        }
        self.ring.push_back(tau.clone());
        self.pushed += 1;
    }

    fn read(&self, w: &Option<DMatrix<f64>>, b: f64) -> Option<(DMatrix<f64>, usize)> {
        let n = self.pushed.saturating_sub(1).min(self.cap);
        if n == 0 {
            return None;
        }
        let full = w.as_ref()?.clone();
        let adjusted = if self.pushed <= self.cap {
            // Window still growing: drop the excluded oldest entry.
            let oldest = self.ring.front()?;
            full - oldest * oldest.transpose() * b.powi(self.ring.len() as i32 - 1)
        } else {
            full
        };
        Some((adjusted * geometric_weight(n, b), n))
    }

    /// Normalized slow-factor sum, matching
    /// `MomentWindow::weighted_outer_sum(b1, N)` up to round-off.
    pub fn slow_sum(&self) -> Option<(DMatrix<f64>, usize)> {
        self.read(&self.w1, self.b1)
    }

    /// Normalized fast-factor sum (the `A_M` ingredient).
    pub fn fast_sum(&self) -> Option<(DMatrix<f64>, usize)> {
        self.read(&self.w2, self.b2)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
