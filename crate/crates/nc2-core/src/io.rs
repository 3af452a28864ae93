//! CSV input/output: detection files, track output, suite result tables,
//! and per-step filter diagnostics. All writers go through an atomic
//! temp-file-and-rename path so a crashed run never leaves a half-written
//! file, and all numbers use Rust's shortest-roundtrip float formatting so
//! fixed-seed reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::bench::{FilterMode, SuiteSummary, TrialResult};
use crate::error::{Error, Result};
use crate::filter::StepOutput;
use crate::mot::{Detection, TrackRecord};

/// Writes one CSV file atomically: the content lands in `<path>.tmp` and is
/// renamed over `path` only after a successful flush.
pub fn write_csv_atomic(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut writer = csv::Writer::from_writer(fs::File::create(&tmp)?);
        writer.write_record(header)?;
        for row in rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Filter diagnostics
// ---------------------------------------------------------------------------

/// Column order of the per-step diagnostics trace.
pub const DIAGNOSTICS_HEADER: &[&str] = &[
    "k", "e_a_max", "e_g_max", "s_q", "s_r", "c_q", "c_r", "i_q", "i_r", "q_norm", "r_norm",
];

/// One diagnostics row for step `k`, matching [`DIAGNOSTICS_HEADER`].
pub fn diagnostics_row(k: usize, out: &StepOutput) -> Vec<String> {
    vec![
        k.to_string(),
        fmt(out.report.e_a_max),
        fmt(out.report.e_g_max),
        out.report.s_q.to_string(),
        out.report.s_r.to_string(),
        fmt(out.report.c_q),
        fmt(out.report.c_r),
        fmt(out.q_hat.entry_sum()),
        fmt(out.r_hat.entry_sum()),
        fmt(out.q_hat.frobenius_norm()),
        fmt(out.r_hat.frobenius_norm()),
    ]
}

// ---------------------------------------------------------------------------
// Detections and tracks
// ---------------------------------------------------------------------------

const DETECTION_HEADER: &[&str] = &["frame", "px", "py", "pz", "l", "w", "h", "score"];

/// Column order of the emitted track table.
pub const TRACK_HEADER: &[&str] = &[
    "frame", "track_id", "px", "py", "pz", "l", "w", "h", "vx", "vy", "vz", "status",
];

/// Reads a detection CSV (`frame,px,py,pz,l,w,h,score`, header required;
/// extra columns are ignored). Rows with nonpositive sizes or unparseable
/// numbers are rejected with their line number.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut columns = Vec::with_capacity(DETECTION_HEADER.len());
    for name in DETECTION_HEADER {
        let idx = headers.iter().position(|h| h == *name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "detections file {} is missing column `{name}` (need header {})",
                path.display(),
                DETECTION_HEADER.join(",")
            ))
        })?;
        columns.push(idx);
    }

    let mut detections = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2; // 1-based, after the header
        let mut values = [0.0_f64; 8];
        for (slot, &idx) in values.iter_mut().zip(columns.iter()) {
            let raw = record.get(idx).unwrap_or("");
            *slot = raw.parse().map_err(|_| {
                Error::InvalidConfig(format!(
                    "detections file {}, line {line}: cannot parse `{raw}` as a number",
                    path.display()
                ))
            })?;
        }
        let size = [values[4], values[5], values[6]];
        if size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "detections file {}, line {line}: box sizes must be positive, got {size:?}",
                path.display()
            )));
        }
        detections.push(Detection {
            frame: values[0] as i64,
            center: [values[1], values[2], values[3]],
            size,
            score: values[7],
        });
    }
    Ok(detections)
}

/// Groups detections by frame index (ascending). Frames with no detections
/// simply have no entry; the tracker driver must still step through them.
pub fn group_by_frame(detections: &[Detection]) -> BTreeMap<i64, Vec<Detection>> {
    let mut frames: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    for det in detections {
        frames.entry(det.frame).or_default().push(det.clone());
    }
    frames
}

/// Writes emitted track records as CSV (one row per track per frame).
pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.frame.to_string(),
                r.track_id.to_string(),
                fmt(r.center[0]),
                fmt(r.center[1]),
                fmt(r.center[2]),
                fmt(r.size[0]),
                fmt(r.size[1]),
                fmt(r.size[2]),
                fmt(r.velocity[0]),
                fmt(r.velocity[1]),
                fmt(r.velocity[2]),
                r.status.as_str().to_string(),
            ]
        })
        .collect();
    write_csv_atomic(path, TRACK_HEADER, &rows)
}

// ---------------------------------------------------------------------------
// Suite tables
// ---------------------------------------------------------------------------

pub const TRIALS_HEADER: &[&str] = &[
    "trial", "mode", "delta_q", "delta_r", "state_error", "diverged_q", "diverged_r", "failed",
];

/// Writes the per-trial score table of a suite run.
pub fn write_trials(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let rows: Vec<Vec<String>> = trials
        .iter()
        .map(|t| {
            vec![
                t.trial.to_string(),
                t.mode.as_str().to_string(),
                fmt(t.delta_q),
                fmt(t.delta_r),
                fmt(t.state_error),
                t.diverged_q.to_string(),
                t.diverged_r.to_string(),
                t.failed.to_string(),
            ]
        })
        .collect();
    write_csv_atomic(path, TRIALS_HEADER, &rows)
}

pub const SUMMARY_HEADER: &[&str] = &[
    "class",
    "mode",
    "log_mean_q",
    "log_mean_r",
    "log_std_q",
    "log_std_r",
    "divergence_q",
    "divergence_r",
    "inability_q",
    "inability_r",
    "conv_log_mean_q",
    "conv_log_mean_r",
    "conv_log_std_q",
    "conv_log_std_r",
    "n_trials",
];

/// Writes one summary row per (class, mode).
pub fn write_suite_summary(path: &Path, rows: &[(String, FilterMode, SuiteSummary)]) -> Result<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(class, mode, s)| {
            vec![
                class.clone(),
                mode.as_str().to_string(),
                fmt(s.log_mean_q),
                fmt(s.log_mean_r),
                fmt(s.log_std_q),
                fmt(s.log_std_r),
                fmt(s.divergence_q),
                fmt(s.divergence_r),
                fmt(s.inability_q),
                fmt(s.inability_r),
                fmt(s.conv_log_mean_q),
                fmt(s.conv_log_mean_r),
                fmt(s.conv_log_std_q),
                fmt(s.conv_log_std_r),
                s.n_trials.to_string(),
            ]
        })
        .collect();
    write_csv_atomic(path, SUMMARY_HEADER, &table)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
