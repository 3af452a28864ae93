//! Adaptive filter orchestration: one estimation–calibration–correction
//! cycle per measurement, plus the comparison filters.
//!
//! Each [`nc2_step`] runs the Kalman pair with the currently composed
//! covariances, pushes the innovation into the moment and calibration
//! buffers, re-estimates the two element distributions, and — once the
//! calibration buffer is warm — lets the calibrators adjust one of the noise
//! intensities. Corrected values take effect on the *next* step, which is
//! exactly the one-step lag the benchmark filter expects (prediction with
//! the process covariance from two steps back, update with the measurement
//! covariance from one step back).
//!
//! [`sage_step`] is the same loop with calibration and correction removed
//! and the PSD-projected raw moments adopted directly as covariances;
//! [`baseline_step`] is a plain Kalman step with either frozen or
//! ground-truth covariances.

use nalgebra::{DMatrix, DVector};

use crate::calib::{
    autocov_calibration, correction_step, gaussian_calibration, switch_flags, CalibrationReport,
    InnovationBuffer,
};
use crate::error::{Error, Result};
use crate::estimator::{
    compose_covariance, normalize_distribution, project_distribution, raw_measurement_moment,
    raw_process_moment, MomentWindow, NoiseFactorization,
};
use crate::model::{kf_predict, kf_update, CovarianceMatrix, FilterState, InnovationRecord, SystemModel};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which parts of the adaptive loop are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFlags {
    /// Re-estimate the element distribution matrices each step.
    pub estimate_distributions: bool,
    /// Run the calibrators once the buffer is warm.
    pub calibrate: bool,
    /// Let the calibration outcome correct the intensities.
    pub correct: bool,
    /// Use the plain windowed average instead of geometric weights for the
    /// measurement moment.
    pub uniform_moment_weights: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags {
            estimate_distributions: true,
            calibrate: true,
            correct: true,
            uniform_moment_weights: false,
        }
    }
}

/// Tunables of the adaptive loop. The defaults are the benchmark settings;
/// [`FilterConfig::for_tracking`] shortens the calibration buffer for short
/// object tracks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Correction gain.
    pub sigma: f64,
    /// Deadband on the Gaussian extreme.
    pub t_g: f64,
    /// Moment window capacity.
    pub n_window: usize,
    /// Slow forgetting factor.
    pub b1: f64,
    /// Fast forgetting factor.
    pub b2: f64,
    /// Calibration buffer capacity.
    pub n_cal: usize,
    /// Calibration warmup length.
    pub warmup: usize,
    pub flags: FeatureFlags,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            sigma: crate::calib::DEFAULT_SIGMA,
            t_g: crate::calib::DEFAULT_T_G,
            n_window: 20,
            b1: 0.95,
            b2: 0.05,
            n_cal: 60,
            warmup: 30,
            flags: FeatureFlags::default(),
        }
    }
}

impl FilterConfig {
    /// Short-buffer variant for object tracks, which rarely live long enough
    /// to fill the benchmark-sized buffers.
    pub fn for_tracking() -> Self {
        FilterConfig { n_cal: 30, warmup: 10, ..FilterConfig::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "correction gain must lie in (0,1), got {}",
                self.sigma
            )));
        }
        if !(self.t_g >= 0.0) {
            return Err(Error::InvalidConfig(format!("deadband must be ≥ 0, got {}", self.t_g)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Filter
// ---------------------------------------------------------------------------

/// Everything produced by one filter step, for the same step index `k`.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Posterior state.
    pub state: FilterState,
    /// Process-noise covariance after this step's estimation/correction.
    pub q_hat: CovarianceMatrix,
    /// Measurement-noise covariance after this step's estimation/correction.
    pub r_hat: CovarianceMatrix,
    pub report: CalibrationReport,
    pub innovation: InnovationRecord,
}

/// Adaptive Kalman filter holding the factorized noise estimates and the
/// two innovation buffers.
#[derive(Debug, Clone)]
pub struct NC2Filter {
    pub model: SystemModel,
    state: FilterState,
    q_fact: NoiseFactorization,
    r_fact: NoiseFactorization,
    moments: MomentWindow,
    calib: InnovationBuffer,
    pub config: FilterConfig,
    /// Posterior covariance from before the pending prediction; `Some`
    /// between a predict and its update, `None` otherwise.
    prev_post_p: Option<DMatrix<f64>>,
}

impl NC2Filter {
    /// Builds a filter starting from the all-zero state.
    pub fn new(
        model: SystemModel,
        q0: &CovarianceMatrix,
        r0: &CovarianceMatrix,
        config: FilterConfig,
    ) -> Result<Self> {
        let state = FilterState::zeros(model.n_x);
        NC2Filter::new_with_state(model, state, q0, r0, config)
    }

    /// Builds a filter from an explicit initial state (used when a track is
    /// born from a detection).
    pub fn new_with_state(
        model: SystemModel,
        state: FilterState,
        q0: &CovarianceMatrix,
        r0: &CovarianceMatrix,
        config: FilterConfig,
    ) -> Result<Self> {
        config.validate()?;
        if q0.dimension() != model.n_x {
            return Err(Error::dims("initial Q", model.n_x, q0.dimension()));
        }
        if r0.dimension() != model.n_z {
            return Err(Error::dims("initial R", model.n_z, r0.dimension()));
        }
        if state.x.len() != model.n_x {
            return Err(Error::dims("initial state", model.n_x, state.x.len()));
        }
        let moments = MomentWindow::new(config.n_window, config.b1, config.b2)?
            .with_uniform_weights(config.flags.uniform_moment_weights);
        let calib = InnovationBuffer::new(config.n_cal, config.warmup)?;
        Ok(NC2Filter {
            model,
            state,
            q_fact: NoiseFactorization::from_covariance(q0)?,
            r_fact: NoiseFactorization::from_covariance(r0)?,
            moments,
            calib,
            config,
            prev_post_p: None,
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn q_factorization(&self) -> &NoiseFactorization {
        &self.q_fact
    }

    pub fn r_factorization(&self) -> &NoiseFactorization {
        &self.r_fact
    }

    /// Current `(I_q, I_r)` pair.
    pub fn intensities(&self) -> (f64, f64) {
        (self.q_fact.intensity(), self.r_fact.intensity())
    }

    /// Overrides both intensities (floored at the global minimum). Used to
    /// freeze the intensity channel in diagnostic runs.
    pub fn set_intensities(&mut self, i_q: f64, i_r: f64) {
        self.q_fact.set_intensity(i_q);
        self.r_fact.set_intensity(i_r);
    }

    /// Runs the prediction half-step with the composed process covariance,
    /// leaving the filter ready for [`NC2Filter::update_phase`] or
    /// [`NC2Filter::coast`]. The state afterwards is the prior for step
    /// `k+1`.
    pub fn predict_phase(&mut self) -> Result<&FilterState> {
        let q = compose_covariance(&self.q_fact);
        let prev_p = self.state.p.entries().clone();
        self.state = kf_predict(&self.state, &self.model, &q)?;
        self.prev_post_p = Some(prev_p);
        Ok(&self.state)
    }

    /// Completes a predicted step without a measurement: the prediction
    /// becomes the new state and no estimation happens.
    pub fn coast(&mut self) -> Result<&FilterState> {
        if self.prev_post_p.is_none() {
            self.predict_phase()?;
        }
        self.prev_post_p = None;
        Ok(&self.state)
    }

    /// Completes a predicted step with a measurement: filter update, buffer
    /// pushes, distribution estimation, calibration, and correction.
    pub fn update_phase(&mut self, z: &DVector<f64>) -> Result<StepOutput> {
        self.update_with(z, false)
    }

    fn update_with(&mut self, z: &DVector<f64>, sage: bool) -> Result<StepOutput> {
        let prev_post_p = self.prev_post_p.take().ok_or_else(|| {
            Error::InvalidConfig("update requested without a preceding prediction".into())
        })?;
        let r_used = compose_covariance(&self.r_fact);
        let (post, innov) = kf_update(&self.state, &self.model, &r_used, z)?;
        self.state = post;
        self.moments.push(innov.tau.clone(), innov.hph.clone());
        self.calib.push(innov.tau.clone(), innov.s.entries().diagonal());

        if self.config.flags.estimate_distributions && self.moments.effective_n() >= 1 {
            let a_r = raw_measurement_moment(&self.moments, &innov.hph)?;
            let a_q = raw_process_moment(&self.moments, &a_r, &self.model, &prev_post_p)?;
            if sage {
                // Adopt the projected moments wholesale: both the spread and
                // the scale come from the window.
                if let Some((d, sum)) = project_distribution(&a_r) {
                    self.r_fact.set_intensity(sum);
                    self.r_fact.replace_distribution(d);
                }
                if let Some((d, sum)) = project_distribution(&a_q) {
                    self.q_fact.set_intensity(sum);
                    self.q_fact.replace_distribution(d);
                }
            } else {
                let d_r = normalize_distribution(&a_r, &self.r_fact);
                self.r_fact.replace_distribution(d_r);
                let d_q = normalize_distribution(&a_q, &self.q_fact);
                self.q_fact.replace_distribution(d_q);
            }
        }

        let report = if !sage && self.config.flags.calibrate && self.calib.is_ready() {
            let e_a = autocov_calibration(&self.calib)?;
            let e_g = gaussian_calibration(&self.calib)?;
            if self.config.flags.correct {
                let (report, (i_q, i_r)) = correction_step(
                    e_a,
                    e_g,
                    self.intensities(),
                    self.config.sigma,
                    self.config.t_g,
                );
                self.q_fact.set_intensity(i_q);
                self.r_fact.set_intensity(i_r);
                report
            } else {
                // Diagnose without acting: flags reflect the deadbanded
                // extreme, coefficients stay at one.
                let e_g_eff = if e_g.abs() < self.config.t_g { 0.0 } else { e_g };
                let (s_q, s_r) = switch_flags(e_a, e_g_eff);
                CalibrationReport { e_a_max: e_a, e_g_max: e_g, s_q, s_r, c_q: 1.0, c_r: 1.0 }
            }
        } else {
            CalibrationReport::inactive()
        };

        Ok(StepOutput {
            state: self.state.clone(),
            q_hat: compose_covariance(&self.q_fact),
            r_hat: compose_covariance(&self.r_fact),
            report,
            innovation: innov,
        })
    }
}

// ---------------------------------------------------------------------------
// Step entry points
// ---------------------------------------------------------------------------

/// One full adaptive step: predict, update, estimate, calibrate, correct.
pub fn nc2_step(f: &mut NC2Filter, z: &DVector<f64>) -> Result<StepOutput> {
    f.predict_phase()?;
    f.update_phase(z)
}

/// One step of the windowed-moment comparison filter: like [`nc2_step`] but
/// without calibration or correction, adopting the PSD-projected raw moments
/// directly as covariances.
pub fn sage_step(f: &mut NC2Filter, z: &DVector<f64>) -> Result<StepOutput> {
    f.predict_phase()?;
    f.update_with(z, true)
}

/// Covariance source for [`baseline_step`].
#[derive(Debug, Clone, Copy)]
pub enum BaselineMode<'a> {
    /// Keep the initial covariances forever.
    Uncorrected,
    /// Use the trial's true covariances for this step.
    Oracle {
        q_true: &'a CovarianceMatrix,
        r_true: &'a CovarianceMatrix,
    },
}

/// Plain Kalman step with fixed or ground-truth covariances; no buffers, no
/// estimation.
pub fn baseline_step(f: &mut NC2Filter, z: &DVector<f64>, mode: BaselineMode<'_>) -> Result<StepOutput> {
    let (q_used, r_used) = match mode {
        BaselineMode::Uncorrected => (compose_covariance(&f.q_fact), compose_covariance(&f.r_fact)),
        BaselineMode::Oracle { q_true, r_true } => (q_true.clone(), r_true.clone()),
    };
    let pred = kf_predict(&f.state, &f.model, &q_used)?;
    let (post, innov) = kf_update(&pred, &f.model, &r_used, z)?;
    f.state = post;
    f.prev_post_p = None;
    Ok(StepOutput {
        state: f.state.clone(),
        q_hat: q_used,
        r_hat: r_used,
        report: CalibrationReport::inactive(),
        innovation: innov,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
