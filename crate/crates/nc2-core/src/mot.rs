//! 3D multi-object tracking on top of the adaptive filter: one
//! constant-velocity filter per track, distance gating, IoU similarity,
//! optimal assignment, and a tentative/confirmed/coasting life cycle.
//!
//! Units: positions and box sizes are meters; the frame period is
//! normalized to 1, so velocities are meters per frame.

use nalgebra::{DMatrix, DVector};
use ordered_float::OrderedFloat;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as PfMatrix;

use crate::error::Result;
use crate::estimator::compose_covariance;
use crate::filter::{FilterConfig, NC2Filter};
use crate::model::{CovarianceMatrix, FilterState, SystemModel};

/// Minimum gate radius in meters; keeps the gate usable while a young
/// track's measurement-noise estimate is still the all-ones initialization.
pub const GATE_FLOOR: f64 = 0.5;

/// Consecutive hits needed to confirm a tentative track.
const CONFIRM_HITS: u32 = 3;

/// Consecutive misses at which a track is deleted.
const DELETE_MISSES: u32 = 3;

/// Diagonal jitter added to a new track's all-ones noise covariances. The
/// bare all-ones matrix is rank one, which leaves five measurement
/// directions exactly noiseless: one Joseph update zeroes their posterior
/// variance, and — the size states having no velocity coupling — the second
/// update's innovation covariance comes out exactly singular. A small
/// diagonal term keeps it invertible without visibly changing the
/// initialization (3·10⁻⁵ of the intensity).
const INIT_JITTER: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Detections and tracks
// ---------------------------------------------------------------------------

/// One detected 3D box. Sizes must be positive; `score` is carried through
/// for downstream consumers but plays no role in association.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: i64,
    /// Box center (p_x, p_y, p_z) in meters.
    pub center: [f64; 3],
    /// Box extents (l, w, h) in meters.
    pub size: [f64; 3],
    pub score: f64,
}

impl Detection {
    /// The 6-vector `[p_x p_y p_z l w h]` fed to the filter.
    pub fn measurement(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.center.iter().chain(self.size.iter()).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Newborn; not yet emitted.
    Tentative,
    /// Seen on enough consecutive frames to be trusted.
    Confirmed,
    /// Previously confirmed, currently propagating on prediction only.
    Coasting,
}

impl TrackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Coasting => "coasting",
        }
    }
}

impl std::fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tracked object and its private adaptive filter (9 states: position,
/// size, velocity; 6 measurements: position, size).
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub filter: NC2Filter,
    pub hit_streak: u32,
    pub miss_count: u32,
    pub status: TrackStatus,
}

fn triple(x: &DVector<f64>, at: usize) -> [f64; 3] {
    [x[at], x[at + 1], x[at + 2]]
}

impl Track {
    /// New tentative track seeded from a detection: state `[center, size,
    /// 0, 0, 0]`, unit state covariance, and all-ones initial noise
    /// covariances for the adaptive loop to reshape.
    fn spawn(id: u64, det: &Detection, model: &SystemModel, config: &FilterConfig) -> Result<Track> {
        debug_assert!(det.size.iter().all(|&s| s > 0.0), "detection sizes must be positive");
        let x = DVector::from_iterator(9, det.center.iter().chain(det.size.iter()).copied().chain([0.0; 3]));
        let state = FilterState::new(x, CovarianceMatrix::wrap(DMatrix::identity(9, 9)), 0);
        let q0 =
            CovarianceMatrix::wrap(DMatrix::from_element(9, 9, 1.0) + DMatrix::identity(9, 9) * INIT_JITTER);
        let r0 =
            CovarianceMatrix::wrap(DMatrix::from_element(6, 6, 1.0) + DMatrix::identity(6, 6) * INIT_JITTER);
        let filter = NC2Filter::new_with_state(model.clone(), state, &q0, &r0, config.clone())?;
        Ok(Track { id, filter, hit_streak: 1, miss_count: 0, status: TrackStatus::Tentative })
    }

    pub fn center(&self) -> [f64; 3] {
        triple(&self.filter.state().x, 0)
    }

    pub fn size(&self) -> [f64; 3] {
        triple(&self.filter.state().x, 3)
    }

    pub fn velocity(&self) -> [f64; 3] {
        triple(&self.filter.state().x, 6)
    }

    /// The track's current composed measurement-noise estimate.
    pub fn r_hat(&self) -> CovarianceMatrix {
        compose_covariance(self.filter.r_factorization())
    }
}

/// A confirmed or coasting track's state as emitted for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frame: i64,
    pub track_id: u64,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub velocity: [f64; 3],
    pub status: TrackStatus,
}

// ---------------------------------------------------------------------------
// Model, gating, similarity
// ---------------------------------------------------------------------------

/// Constant-velocity model: the 9×9 identity plus unit coupling from each
/// velocity component into its position, measured through the 6×9 selector
/// of position and size.
pub fn build_cv_model() -> SystemModel {
    let mut phi = DMatrix::identity(9, 9);
    for i in 0..3 {
        phi[(i, 6 + i)] = 1.0;
    }
    let mut h = DMatrix::zeros(6, 9);
    for i in 0..6 {
        h[(i, i)] = 1.0;
    }
    SystemModel::new(phi, h).expect("static dimensions")
}

/// Distance gate: the planar (x, y) distance between the detection center
/// and the track's predicted center must be strictly below
/// `max(0.5, sqrt((R̂₁₁ + R̂₂₂)/2))`. The track must hold a current
/// prediction.
pub fn gate(det: &Detection, track: &Track, r_hat: &CovarianceMatrix) -> bool {
    let c = track.center();
    let dx = det.center[0] - c[0];
    let dy = det.center[1] - c[1];
    let e = r_hat.entries();
    let t_md = ((e[(0, 0)] + e[(1, 1)]) / 2.0).sqrt().max(GATE_FLOOR);
    (dx * dx + dy * dy).sqrt() < t_md
}

/// Intersection-over-union of two axis-aligned boxes given as (center,
/// size). Nonpositive predicted extents yield zero overlap.
pub fn iou3d(center_a: &[f64; 3], size_a: &[f64; 3], center_b: &[f64; 3], size_b: &[f64; 3]) -> f64 {
    let mut inter = 1.0;
    let mut vol_a = 1.0;
    let mut vol_b = 1.0;
    for axis in 0..3 {
        let (ha, hb) = (size_a[axis] / 2.0, size_b[axis] / 2.0);
        let lo = (center_a[axis] - ha).max(center_b[axis] - hb);
        let hi = (center_a[axis] + ha).min(center_b[axis] + hb);
        inter *= (hi - lo).max(0.0);
        vol_a *= size_a[axis].max(0.0);
        vol_b *= size_b[axis].max(0.0);
    }
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

/// Outcome of one frame's association. Each detection and track index
/// appears in exactly one of the three lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationResult {
    /// (detection index, track index) pairs, sorted by detection index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Among equal-total optima, prefer the assignment that is lexicographically
/// smallest as a (detection, track) pair list: repoint matches at exact
/// similarity ties toward lower track indices, pairwise and individually.
fn canonicalize(matches: &mut [(usize, usize)], sim: &DMatrix<f64>) {
    matches.sort_unstable();
    let mut changed = true;
    while changed {
        changed = false;
        for a in 0..matches.len() {
            for b in (a + 1)..matches.len() {
                let (ia, ja) = matches[a];
                let (ib, jb) = matches[b];
                if jb < ja
                    && sim[(ia, jb)] > 0.0
                    && sim[(ib, ja)] > 0.0
                    && sim[(ia, jb)] + sim[(ib, ja)] == sim[(ia, ja)] + sim[(ib, jb)]
                {
                    matches[a] = (ia, jb);
                    matches[b] = (ib, ja);
                    changed = true;
                }
            }
        }
        for a in 0..matches.len() {
            let (i, j) = matches[a];
            let taken: Vec<usize> = matches.iter().map(|&(_, jj)| jj).collect();
            for j_new in 0..j {
                if !taken.contains(&j_new) && sim[(i, j_new)] == sim[(i, j)] && sim[(i, j_new)] > 0.0 {
                    matches[a] = (i, j_new);
                    changed = true;
                    break;
                }
            }
        }
    }
}

/// Maximum-total-similarity assignment of detections (rows) to tracks
/// (columns). Pairs with similarity exactly 0 — gated out or disjoint — are
/// never matched; ties go to the lowest (detection, track) indices.
pub fn assign(similarity: &DMatrix<f64>) -> AssociationResult {
    let (n_t, n_m) = similarity.shape();
    debug_assert!(similarity.iter().all(|&v| (0.0..=1.0).contains(&v)), "similarities must lie in [0,1]");
    let mut matches: Vec<(usize, usize)> = Vec::new();
    if n_t > 0 && n_m > 0 {
        // The solver wants at least as many columns as rows; run it on the
        // transpose when tracks are the short side.
        let transpose = n_t > n_m;
        let (rows, cols) = if transpose { (n_m, n_t) } else { (n_t, n_m) };
        let weights = PfMatrix::from_rows((0..rows).map(|i| {
            (0..cols).map(move |j| {
                let (d, t) = if transpose { (j, i) } else { (i, j) };
                OrderedFloat(similarity[(d, t)])
            })
        }))
        .expect("rectangular by construction");
        let (_, assignment) = kuhn_munkres(&weights);
        for (i, j) in assignment.into_iter().enumerate() {
            let (d, t) = if transpose { (j, i) } else { (i, j) };
            if similarity[(d, t)] > 0.0 {
                matches.push((d, t));
            }
        }
        canonicalize(&mut matches, similarity);
    }
    let unmatched_detections =
        (0..n_t).filter(|d| !matches.iter().any(|&(md, _)| md == *d)).collect();
    let unmatched_tracks =
        (0..n_m).filter(|t| !matches.iter().any(|&(_, mt)| mt == *t)).collect();
    AssociationResult { matches, unmatched_detections, unmatched_tracks }
}

// ---------------------------------------------------------------------------
// Tracker
// ---------------------------------------------------------------------------

/// Frame-by-frame multi-object tracker. Processes frames strictly in
/// order; track IDs are never reused within a run.
#[derive(Debug, Clone)]
pub struct Tracker {
    model: SystemModel,
    config: FilterConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
    /// Tracks dropped because their filter raised a numerical error.
    pub dropped_on_error: usize,
}

impl Default for Tracker {
    fn default() -> Self {
        Tracker::new()
    }
}

impl Tracker {
    pub fn new() -> Self {
        Tracker {
            model: build_cv_model(),
            config: FilterConfig::for_tracking(),
            tracks: Vec::new(),
            next_id: 1,
            dropped_on_error: 0,
        }
    }

    /// Advances one frame: predict every track, gate and associate the
    /// frame's detections, update matched tracks, age unmatched ones
    /// (confirmed tracks coast for up to two missed frames, deletion on the
    /// third), spawn tentative tracks from unmatched detections, and emit
    /// the confirmed and coasting tracks.
    pub fn step(&mut self, frame: i64, detections: &[Detection]) -> Vec<TrackRecord> {
        debug_assert!(detections.iter().all(|d| d.frame == frame), "detections must share the frame");

        // Predict; a numerical failure here drops the track immediately.
        let mut i = 0;
        while i < self.tracks.len() {
            if self.tracks[i].filter.predict_phase().is_ok() {
                i += 1;
            } else {
                self.tracks.remove(i);
                self.dropped_on_error += 1;
            }
        }

        let (n_t, n_m) = (detections.len(), self.tracks.len());
        let r_hats: Vec<CovarianceMatrix> = self.tracks.iter().map(Track::r_hat).collect();
        let mut similarity = DMatrix::zeros(n_t, n_m);
        for (d, det) in detections.iter().enumerate() {
            for (t, track) in self.tracks.iter().enumerate() {
                if gate(det, track, &r_hats[t]) {
                    similarity[(d, t)] =
                        iou3d(&det.center, &det.size, &track.center(), &track.size());
                }
            }
        }
        let assoc = assign(&similarity);

        let mut dead = vec![false; n_m];
        for &(d, t) in &assoc.matches {
            let track = &mut self.tracks[t];
            match track.filter.update_phase(&detections[d].measurement()) {
                Ok(_) => {
                    track.miss_count = 0;
                    track.hit_streak += 1;
                    match track.status {
                        TrackStatus::Tentative if track.hit_streak >= CONFIRM_HITS => {
                            track.status = TrackStatus::Confirmed;
                        }
                        TrackStatus::Coasting => track.status = TrackStatus::Confirmed,
                        _ => {}
                    }
                }
                Err(_) => {
                    dead[t] = true;
                    self.dropped_on_error += 1;
                }
            }
        }

        for &t in &assoc.unmatched_tracks {
            let track = &mut self.tracks[t];
            track.miss_count += 1;
            track.hit_streak = 0;
            if track.miss_count >= DELETE_MISSES {
                dead[t] = true;
                continue;
            }
            if track.status == TrackStatus::Confirmed {
                track.status = TrackStatus::Coasting;
            }
            // Keep the prediction as the frame's state and release the
            // pending-update marker.
            let _ = track.filter.coast();
        }

        for &d in &assoc.unmatched_detections {
            match Track::spawn(self.next_id, &detections[d], &self.model, &self.config) {
                Ok(track) => {
                    self.tracks.push(track);
                    dead.push(false);
                    self.next_id += 1;
                }
                Err(_) => self.dropped_on_error += 1,
            }
        }

        let mut idx = 0;
        self.tracks.retain(|_| {
            let keep = !dead[idx];
            idx += 1;
            keep
        });

        self.tracks
            .iter()
            .filter(|t| matches!(t.status, TrackStatus::Confirmed | TrackStatus::Coasting))
            .map(|t| TrackRecord {
                frame,
                track_id: t.id,
                center: t.center(),
                size: t.size(),
                velocity: t.velocity(),
                status: t.status,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::substream;
    use rand::Rng;

    fn det(frame: i64, center: [f64; 3], size: [f64; 3]) -> Detection {
        Detection { frame, center, size, score: 1.0 }
    }

    fn unit_det(frame: i64, x: f64, y: f64) -> Detection {
        det(frame, [x, y, 0.0], [2.0, 2.0, 2.0])
    }

    // -- model ---------------------------------------------------------------

    #[test]
    fn test_cv_model_advances_position_by_velocity() {
        let model = build_cv_model();
        assert_eq!((model.n_x, model.n_z), (9, 6));
        let mut x = DVector::zeros(9);
        x[6] = 1.0; // v_x
        let next = &model.phi * &x;
        assert_eq!(next[0], 1.0);
        assert_eq!(next[1], 0.0);
        assert_eq!(next[6], 1.0);
    }

    #[test]
    fn test_cv_model_measurement_selects_position_and_size() {
        let model = build_cv_model();
        let x = DVector::from_iterator(9, (1..=9).map(|v| v as f64));
        let z = &model.h * &x;
        assert_eq!(z.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // Velocities are only observable through the dynamics.
        assert_ne!(&model.h * &model.phi, model.h);
        assert!((model.phi.determinant() - 1.0).abs() < 1e-12);
        assert!(crate::synth::check_observability(&model));
    }

    // -- gating ----------------------------------------------------------------

    fn predicted_track_at(center: [f64; 3]) -> Track {
        let model = build_cv_model();
        let config = FilterConfig::for_tracking();
        let mut track =
            Track::spawn(1, &det(0, center, [1.0, 1.0, 1.0]), &model, &config).unwrap();
        track.filter.predict_phase().unwrap();
        track
    }

    #[test]
    fn test_gate_examples() {
        let track = predicted_track_at([0.0, 0.0, 0.0]);
        let mut diag = DMatrix::identity(6, 6);
        diag[(0, 0)] = 4.0;
        diag[(1, 1)] = 4.0;
        let r_hat = CovarianceMatrix::wrap(diag);
        // T_md = sqrt((4+4)/2) = 2.
        assert!(gate(&det(1, [0.0, 0.0, 0.0], [1.0; 3]), &track, &r_hat));
        assert!(!gate(&det(1, [3.0, 0.0, 0.0], [1.0; 3]), &track, &r_hat));
        assert!(gate(&det(1, [1.0, 1.0, 0.0], [1.0; 3]), &track, &r_hat));
        // Height offsets are ignored by the planar gate.
        assert!(gate(&det(1, [0.0, 0.0, 50.0], [1.0; 3]), &track, &r_hat));
    }

    #[test]
    fn test_gate_floor_applies_to_tiny_noise() {
        let track = predicted_track_at([0.0, 0.0, 0.0]);
        let r_hat = CovarianceMatrix::wrap(DMatrix::identity(6, 6) * 1e-6);
        // Without the 0.5 m floor this distance would fail the gate.
        assert!(gate(&det(1, [0.3, 0.0, 0.0], [1.0; 3]), &track, &r_hat));
        assert!(!gate(&det(1, [0.6, 0.0, 0.0], [1.0; 3]), &track, &r_hat));
    }

    // -- IoU -----------------------------------------------------------------------

    #[test]
    fn test_iou3d_examples() {
        let cube = [1.0, 1.0, 1.0];
        assert_eq!(iou3d(&[0.0; 3], &cube, &[0.0; 3], &cube), 1.0);
        assert_eq!(iou3d(&[0.0; 3], &cube, &[5.0, 0.0, 0.0], &cube), 0.0);
        let iou = iou3d(&[0.0; 3], &cube, &[0.5, 0.0, 0.0], &cube);
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn test_iou3d_matches_monte_carlo_volume() {
        // Independent volume oracle for the offset-cube case: sample the
        // bounding region uniformly and compare hit ratios.
        let mut rng = substream(101, 0x10_0D);
        let in_box = |p: [f64; 3], c: &[f64; 3], s: &[f64; 3]| {
            (0..3).all(|a| (p[a] - c[a]).abs() <= s[a] / 2.0)
        };
        let (ca, cb) = ([0.0; 3], [0.5, 0.0, 0.0]);
        let cube = [1.0, 1.0, 1.0];
        let (mut inter, mut union) = (0u32, 0u32);
        for _ in 0..200_000 {
            let p = [rng.gen_range(-0.5..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let (a, b) = (in_box(p, &ca, &cube), in_box(p, &cb, &cube));
            inter += (a && b) as u32;
            union += (a || b) as u32;
        }
        let mc = inter as f64 / union as f64;
        assert!((mc - 1.0 / 3.0).abs() < 0.01, "MC IoU {mc}");
    }

    #[test]
    fn test_iou3d_handles_degenerate_boxes() {
        let cube = [1.0, 1.0, 1.0];
        let flat = [1.0, 0.0, 1.0];
        assert_eq!(iou3d(&[0.0; 3], &flat, &[0.0; 3], &cube), 0.0);
        assert_eq!(iou3d(&[0.0; 3], &[-1.0, 1.0, 1.0], &[0.0; 3], &cube), 0.0);
    }

    // -- assignment ---------------------------------------------------------------

    fn brute_force_best(sim: &DMatrix<f64>) -> f64 {
        fn go(sim: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == sim.nrows() {
                return 0.0;
            }
            let mut best = go(sim, row + 1, used); // leave this row unmatched
            for j in 0..sim.ncols() {
                if !used[j] && sim[(row, j)] > 0.0 {
                    used[j] = true;
                    best = best.max(sim[(row, j)] + go(sim, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(sim, 0, &mut vec![false; sim.ncols()])
    }

    fn total(sim: &DMatrix<f64>, matches: &[(usize, usize)]) -> f64 {
        matches.iter().map(|&(d, t)| sim[(d, t)]).sum()
    }

    #[test]
    fn test_assign_prefers_diagonal() {
        let sim = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let result = assign(&sim);
        assert_eq!(result.matches, vec![(0, 0), (1, 1)]);
        assert!(result.unmatched_detections.is_empty());
        assert!(result.unmatched_tracks.is_empty());
    }

    #[test]
    fn test_assign_never_matches_zero_similarity() {
        let sim = DMatrix::zeros(3, 2);
        let result = assign(&sim);
        assert!(result.matches.is_empty());
        assert_eq!(result.unmatched_detections, vec![0, 1, 2]);
        assert_eq!(result.unmatched_tracks, vec![0, 1]);

        let sim = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 0.0]);
        let result = assign(&sim);
        assert_eq!(result.matches, vec![(0, 0)]);
        assert_eq!(result.unmatched_detections, vec![1]);
        assert_eq!(result.unmatched_tracks, vec![1]);
    }

    #[test]
    fn test_assign_breaks_ties_lexicographically() {
        let sim = DMatrix::from_element(2, 2, 0.5);
        assert_eq!(assign(&sim).matches, vec![(0, 0), (1, 1)]);
        let sim = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert_eq!(assign(&sim).matches, vec![(0, 0)]);
        let sim = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let result = assign(&sim);
        assert_eq!(result.matches, vec![(0, 0)]);
        assert_eq!(result.unmatched_detections, vec![1]);
    }

    #[test]
    fn test_assign_handles_rectangular_matrices() {
        // More detections than tracks.
        let sim = DMatrix::from_row_slice(3, 1, &[0.2, 0.9, 0.4]);
        let result = assign(&sim);
        assert_eq!(result.matches, vec![(1, 0)]);
        assert_eq!(result.unmatched_detections, vec![0, 2]);
        // More tracks than detections.
        let sim = DMatrix::from_row_slice(1, 3, &[0.2, 0.9, 0.4]);
        let result = assign(&sim);
        assert_eq!(result.matches, vec![(0, 1)]);
        assert_eq!(result.unmatched_tracks, vec![0, 2]);
    }

    #[test]
    fn test_assign_matches_brute_force_on_random_matrices() {
        let mut rng = substream(103, 0x10_0E);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=5);
            let cols = rng.gen_range(1..=5);
            let sim = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0));
            let result = assign(&sim);
            let best = brute_force_best(&sim);
            let got = total(&sim, &result.matches);
            assert!((got - best).abs() < 1e-12, "assign {got} vs brute force {best}\n{sim}");
        }
    }

    // -- tracker life cycle ------------------------------------------------------

    #[test]
    fn test_stationary_object_confirms_on_third_frame() {
        let mut tracker = Tracker::new();
        let mut emitted = Vec::new();
        for frame in 1..=5 {
            emitted.push(tracker.step(frame, &[unit_det(frame, 0.0, 0.0)]));
        }
        assert!(emitted[0].is_empty());
        assert!(emitted[1].is_empty());
        for frame_records in &emitted[2..] {
            assert_eq!(frame_records.len(), 1);
            assert_eq!(frame_records[0].track_id, 1);
            assert_eq!(frame_records[0].status, TrackStatus::Confirmed);
        }
        assert_eq!(tracker.tracks.len(), 1);
        assert_eq!(tracker.dropped_on_error, 0);
    }

    #[test]
    fn test_vanished_object_coasts_twice_then_dies() {
        let mut tracker = Tracker::new();
        for frame in 1..=5 {
            tracker.step(frame, &[unit_det(frame, 0.0, 0.0)]);
        }
        let coast1 = tracker.step(6, &[]);
        assert_eq!(coast1.len(), 1);
        assert_eq!(coast1[0].status, TrackStatus::Coasting);
        let coast2 = tracker.step(7, &[]);
        assert_eq!(coast2.len(), 1);
        assert_eq!(coast2[0].status, TrackStatus::Coasting);
        // Third consecutive miss: deleted, nothing emitted.
        assert!(tracker.step(8, &[]).is_empty());
        assert!(tracker.tracks.is_empty());
    }

    #[test]
    fn test_coasting_track_reconfirms_on_match() {
        let mut tracker = Tracker::new();
        for frame in 1..=4 {
            tracker.step(frame, &[unit_det(frame, 0.0, 0.0)]);
        }
        assert_eq!(tracker.step(5, &[])[0].status, TrackStatus::Coasting);
        let records = tracker.step(6, &[unit_det(6, 0.0, 0.0)]);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].status, TrackStatus::Confirmed);
        assert_eq!(records[0].track_id, 1);
    }

    #[test]
    fn test_spurious_detection_is_never_emitted() {
        let mut tracker = Tracker::new();
        assert!(tracker.step(1, &[unit_det(1, 10.0, 10.0)]).is_empty());
        for frame in 2..=4 {
            assert!(tracker.step(frame, &[]).is_empty());
        }
        assert!(tracker.tracks.is_empty());
    }

    #[test]
    fn test_track_ids_are_never_reused() {
        let mut tracker = Tracker::new();
        for frame in 1..=3 {
            tracker.step(frame, &[unit_det(frame, 0.0, 0.0)]);
        }
        // Let the first track die.
        for frame in 4..=6 {
            tracker.step(frame, &[]);
        }
        assert!(tracker.tracks.is_empty());
        // A new object in the same place gets a fresh ID.
        let mut last = Vec::new();
        for frame in 7..=9 {
            last = tracker.step(frame, &[unit_det(frame, 0.0, 0.0)]);
        }
        assert_eq!(last.len(), 1);
        assert_eq!(last[0].track_id, 2);
    }

    #[test]
    fn test_crossing_objects_keep_their_identities() {
        // Two objects cross in x while staying 6 m apart in y — far beyond
        // twice any plausible gate radius.
        let mut tracker = Tracker::new();
        let mut id_a = None;
        let mut id_b = None;
        let mut switches = 0;
        for frame in 0..30 {
            let t = frame as f64;
            let a = unit_det(frame, -7.0 + 0.5 * t, 3.0);
            let b = unit_det(frame, 7.0 - 0.5 * t, -3.0);
            let records = tracker.step(frame, &[a, b]);
            for rec in &records {
                // PSD noise estimates on every emitted track.
                let track = tracker.tracks.iter().find(|t| t.id == rec.track_id).unwrap();
                assert!(track.r_hat().min_eigenvalue() >= -1e-9);
                assert!(
                    compose_covariance(track.filter.q_factorization()).min_eigenvalue() >= -1e-9
                );
                let expect_a = rec.center[1] > 0.0;
                let id_slot = if expect_a { &mut id_a } else { &mut id_b };
                match id_slot {
                    None => *id_slot = Some(rec.track_id),
                    Some(known) if *known != rec.track_id => switches += 1,
                    _ => {}
                }
            }
            if frame >= 3 {
                assert_eq!(records.len(), 2, "frame {frame}");
            }
        }
        assert_eq!(switches, 0);
        assert_ne!(id_a, id_b);
    }

    #[test]
    fn test_empty_frames_on_empty_tracker_are_no_ops() {
        let mut tracker = Tracker::new();
        for frame in 0..3 {
            assert!(tracker.step(frame, &[]).is_empty());
        }
        assert!(tracker.tracks.is_empty());
        assert_eq!(tracker.dropped_on_error, 0);
    }
}
