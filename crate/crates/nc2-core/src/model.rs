//! Linear-Gaussian state-space types and the benchmark Kalman recursion.
//!
//! The filter is the standard predict/update pair with two robustness
//! choices baked in: the measurement update uses the Joseph form
//! `(I − KH) P (I − KH)ᵀ + K R Kᵀ`, and the gain is obtained by a Cholesky
//! solve of the innovation covariance rather than an explicit inverse.
//! Covariances are re-symmetrized after every operation to stop round-off
//! drift.
//!
//! # Example
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use nc2_core::model::*;
//!
//! let model = SystemModel::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
//! let q = CovarianceMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
//! let r = CovarianceMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
//! let state = FilterState::zeros(1);
//! let pred = kf_predict(&state, &model, &q).unwrap();
//! let (post, innov) = kf_update(&pred, &model, &r, &DVector::from_element(1, 0.5)).unwrap();
//! assert_eq!(post.k, 1);
//! assert!((innov.tau[0] - 0.5).abs() < 1e-12);
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute symmetry/PSD tolerance used by validated constructors.
pub const PSD_TOL: f64 = 1e-9;

/// Condition-number ceiling for the innovation covariance solve.
pub const COND_LIMIT: f64 = 1e12;

// ---------------------------------------------------------------------------
// Model and state types
// ---------------------------------------------------------------------------

/// State transition and observation matrices of a discrete linear system.
#[derive(Debug, Clone)]
pub struct SystemModel {
    /// State transition matrix, `n_x × n_x`, applied once per step.
    pub phi: DMatrix<f64>,
    /// Observation matrix, `n_z × n_x`.
    pub h: DMatrix<f64>,
    pub n_x: usize,
    pub n_z: usize,
}

impl SystemModel {
    /// Builds a model from the transition and observation matrices,
    /// inferring the dimensions and checking `n_z ≤ n_x`.
    pub fn new(phi: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let n_x = phi.nrows();
        if phi.ncols() != n_x {
            return Err(Error::dims("SystemModel::phi", format!("{n_x}×{n_x}"), format!("{}×{}", phi.nrows(), phi.ncols())));
        }
        let n_z = h.nrows();
        if h.ncols() != n_x {
            return Err(Error::dims("SystemModel::h", format!("{n_z}×{n_x}"), format!("{}×{}", h.nrows(), h.ncols())));
        }
        if n_z > n_x {
            return Err(Error::InvalidConfig(format!(
                "observation dimension {n_z} exceeds state dimension {n_x}"
            )));
        }
        Ok(SystemModel { phi, h, n_x, n_z })
    }
}

/// A symmetric positive-semidefinite matrix (up to `PSD_TOL`).
///
/// The validated constructor symmetrizes its input and rejects matrices
/// whose smallest eigenvalue is below `−PSD_TOL`. Internal filter code uses
/// the cheaper [`CovarianceMatrix::wrap`], which only symmetrizes: the Joseph
/// form preserves semidefiniteness by construction, and re-validating with an
/// eigendecomposition on every step would dominate the filter cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
    dimension: usize,
}

impl CovarianceMatrix {
    /// Validated constructor: symmetrizes, then checks PSD within `PSD_TOL`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims("CovarianceMatrix", "square", format!("{}×{}", m.nrows(), m.ncols())));
        }
        let sym = symmetrize(&m);
        let min_eig = sym
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !min_eig.is_finite() || min_eig < -PSD_TOL {
            return Err(Error::NotPsd(min_eig));
        }
        Ok(CovarianceMatrix { dimension: sym.nrows(), entries: sym })
    }

    /// Symmetrize-only constructor for matrices that are PSD by
    /// construction (Joseph form, PSD projections, Gram products).
    pub fn wrap(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        let sym = symmetrize(&m);
        CovarianceMatrix { dimension: sym.nrows(), entries: sym }
    }

    /// All-zero covariance of the given dimension.
    pub fn zeros(n: usize) -> Self {
        CovarianceMatrix { entries: DMatrix::zeros(n, n), dimension: n }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Sum of all matrix entries (the "intensity" of a noise covariance).
    pub fn entry_sum(&self) -> f64 {
        self.entries.sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Smallest eigenvalue; used by tests to assert the PSD invariant.
    pub fn min_eigenvalue(&self) -> f64 {
        self.entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Filter state: estimate, error covariance, and the step counter.
///
/// `k` counts completed prediction steps; [`kf_predict`] increments it and
/// [`kf_update`] leaves it unchanged, so after one predict+update pair the
/// state is the posterior for step `k`.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub x: DVector<f64>,
    pub p: CovarianceMatrix,
    pub k: usize,
}

impl FilterState {
    /// All-zero initial state (zero estimate, zero covariance, step 0).
    /// A zero covariance is legal: the first prediction bootstraps it via Q.
    pub fn zeros(n_x: usize) -> Self {
        FilterState { x: DVector::zeros(n_x), p: CovarianceMatrix::zeros(n_x), k: 0 }
    }

    pub fn new(x: DVector<f64>, p: CovarianceMatrix, k: usize) -> Self {
        FilterState { x, p, k }
    }
}

/// One measurement update's innovation bookkeeping.
#[derive(Debug, Clone)]
pub struct InnovationRecord {
    /// Innovation `τ = z − H x_pred`.
    pub tau: DVector<f64>,
    /// Innovation covariance `S = H P_pred Hᵀ + R`.
    pub s: CovarianceMatrix,
    /// The `H P_pred Hᵀ` term alone (needed by the moment estimators).
    pub hph: DMatrix<f64>,
}

// ---------------------------------------------------------------------------
// Filter recursion
// ---------------------------------------------------------------------------

/// Prediction: `x' = Φ x`, `P' = Φ P Φᵀ + Q`.
pub fn kf_predict(state: &FilterState, model: &SystemModel, q: &CovarianceMatrix) -> Result<FilterState> {
    if state.x.len() != model.n_x {
        return Err(Error::dims("kf_predict state", model.n_x, state.x.len()));
    }
    if q.dimension() != model.n_x {
        return Err(Error::dims("kf_predict Q", model.n_x, q.dimension()));
    }
    let x = &model.phi * &state.x;
    let p = &model.phi * state.p.entries() * model.phi.transpose() + q.entries();
    if !x.iter().all(|v| v.is_finite()) || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("predicted state"));
    }
    Ok(FilterState { x, p: CovarianceMatrix::wrap(p), k: state.k + 1 })
}

/// Measurement update with Joseph-form covariance.
///
/// Returns the posterior state together with the innovation record. The
/// innovation covariance is solved by Cholesky factorization; a condition
/// number at or above [`COND_LIMIT`] (or a failed factorization) is reported
/// as [`Error::SingularInnovation`] with the offending matrix attached.
pub fn kf_update(
    state_pred: &FilterState,
    model: &SystemModel,
    r: &CovarianceMatrix,
    z: &DVector<f64>,
) -> Result<(FilterState, InnovationRecord)> {
    if z.len() != model.n_z {
        return Err(Error::dims("kf_update z", model.n_z, z.len()));
    }
    if r.dimension() != model.n_z {
        return Err(Error::dims("kf_update R", model.n_z, r.dimension()));
    }
    if state_pred.x.len() != model.n_x {
        return Err(Error::dims("kf_update state", model.n_x, state_pred.x.len()));
    }

    let p_pred = state_pred.p.entries();
    let hph = symmetrize(&(&model.h * p_pred * model.h.transpose()));
    let s = symmetrize(&(&hph + r.entries()));
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("innovation covariance"));
    }

    let svals = s.clone().svd(false, false).singular_values;
    let smax = svals.iter().copied().fold(0.0_f64, f64::max);
    let smin = svals.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < COND_LIMIT) {
        return Err(Error::SingularInnovation { cond, s });
    }
    let chol = match nalgebra::Cholesky::new(s.clone()) {
        Some(c) => c,
        None => return Err(Error::SingularInnovation { cond, s }),
    };

    // K = P Hᵀ S⁻¹, via S Kᵀ = H Pᵀ (S symmetric).
    let k_gain = chol.solve(&(&model.h * p_pred)).transpose();

    let tau = z - &model.h * &state_pred.x;
    let x = &state_pred.x + &k_gain * &tau;

    let a = DMatrix::identity(model.n_x, model.n_x) - &k_gain * &model.h;
    let p = &a * p_pred * a.transpose() + &k_gain * r.entries() * k_gain.transpose();
    if !x.iter().all(|v| v.is_finite()) || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("posterior state"));
    }

    let post = FilterState { x, p: CovarianceMatrix::wrap(p), k: state_pred.k };
    let record = InnovationRecord { tau, s: CovarianceMatrix::wrap(s), hph };
    Ok((post, record))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
