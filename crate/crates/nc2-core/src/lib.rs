//! Online noise-covariance estimation for linear Kalman filters (NC2),
//! a Monte Carlo benchmark harness, and a 3D multi-object tracker.
//!
//! The NC2 scheme splits each noise covariance into a scalar *intensity*
//! (the sum of all matrix entries) times a unit-sum, positive-semidefinite
//! *element distribution* matrix. Distributions are estimated from
//! exponentially weighted innovation moments; intensities are diagnosed by
//! two innovation calibrators (a lag-1 autocovariance scan and a half-normal
//! Gaussian consistency check) and corrected through bounded multiplicative
//! negative feedback. The loop runs once per filter step.
//!
//! Modules:
//! - [`model`] — state-space types and the benchmark Kalman recursion
//!   (Joseph-form update, factorized solve of the innovation covariance).
//! - [`estimator`] — moment windows, raw covariance moments, PSD projection,
//!   and the intensity/distribution factorization.
//! - [`calib`] — innovation buffer, the two calibrators, switch flags, and
//!   the correction step.
//! - [`filter`] — the per-step orchestration ([`filter::nc2_step`]) plus the
//!   Sage-style and fixed/oracle baselines used by the benchmark.
//! - [`synth`] — random test-system generation, observability/detectability
//!   checks, time-varying noise schedules, and initialization perturbation.
//! - [`bench`] — per-trial error metrics, suite aggregation, and the
//!   parallel Monte Carlo driver.
//! - [`mot`] — constant-velocity multi-object tracking with gating, 3D IoU,
//!   Hungarian assignment, and track life-cycle management.
//! - [`io`] — CSV readers/writers for detections, tracks, suites, and
//!   per-step diagnostics.
//!
//! All randomness flows from a single `u64` seed through named substreams
//! (see [`streams`]); identical seeds produce bit-identical outputs.

pub mod bench;
pub mod calib;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod io;
pub mod model;
pub mod mot;
pub mod streams;
pub mod synth;

pub use bench::{
    aggregate, calibration_sweep, relative_error, run_suite, run_suite_with, state_error,
    FilterMode, SuiteOutcome, SuiteSummary, SweepCell, TrialResult,
};
pub use calib::{
    autocov_calibration, correction_step, gaussian_calibration, switch_flags, CalibrationReport,
    InnovationBuffer,
};
pub use error::{Error, Result};
pub use estimator::{
    compose_covariance, normalize_distribution, pseudo_inverse, raw_measurement_moment,
    raw_process_moment, MomentWindow, NoiseFactorization,
};
pub use filter::{baseline_step, nc2_step, sage_step, BaselineMode, FilterConfig, NC2Filter, StepOutput};
pub use model::{kf_predict, kf_update, CovarianceMatrix, FilterState, InnovationRecord, SystemModel};
pub use mot::{assign, build_cv_model, gate, iou3d, AssociationResult, Detection, Track, Tracker};
pub use synth::{
    check_detectability, check_observability, generate_measurements, generate_system,
    generate_trial, perturb_initial_covariances, SynthesisConfig, SystemClass, TrialData,
};
