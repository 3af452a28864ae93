//! Command-line front end for the noise-covariance toolkit.
//!
//! The heavy lifting lives in `nc2-core`; this crate resolves configuration
//! (flags plus an optional plain-text `key=value` file, flags winning on
//! conflict), drives the library, and writes plot-ready CSV tables. Five
//! subcommands:
//!
//! - `bench` — Monte Carlo suites per system class; writes
//!   `suite_summary.csv` and per-class `trials_<class>.csv`, optionally a
//!   per-step diagnostics trace of trial 0 for every mode.
//! - `calib-sweep` — calibrator extremes over a grid of frozen covariance
//!   scalings; writes `sweep.csv` (long format, one row per step).
//! - `converge` — per-step adaptive-filter series over a suite of trials;
//!   writes `converge.csv`.
//! - `track` — runs the 3D tracker over a detection CSV.
//! - `synth` — dumps generated systems and measurement sequences.
//!
//! All randomness flows from the single `--seed`; identical invocations
//! produce byte-identical files. Exit codes: 0 success, 2 usage or
//! configuration error, 3 I/O error, 4 numerical failure inside a run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use nc2_core::bench::run_suite_with;
use nc2_core::filter::{baseline_step, nc2_step, sage_step, BaselineMode};
use nc2_core::io;
use nc2_core::mot::{Detection, Tracker};
use nc2_core::streams::trial_seed;
use nc2_core::synth::generate_trial;
use nc2_core::{
    calibration_sweep, Error as CoreError, FilterConfig, FilterMode, InnovationBuffer,
    MomentWindow, NC2Filter, StepOutput, SuiteOutcome, SynthesisConfig, SystemClass, TrialData,
};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// CLI failure, categorized so scripts can tell misuse (exit 2) from
/// environment problems (exit 3) from numerical breakdown inside a run
/// (exit 4).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Io(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_) | CoreError::Csv(_) => CliError::Io(e.to_string()),
            CoreError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// `--class` argument: one structural class, or all three (bench only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSelection {
    One(SystemClass),
    All,
}

impl ClassSelection {
    pub fn parse(s: &str) -> CliResult<Self> {
        if s == "all" {
            return Ok(ClassSelection::All);
        }
        s.parse::<SystemClass>().map(ClassSelection::One).map_err(|_| {
            usage(format!(
                "unknown system class `{s}` (expected ob-equal, ob-reduced, uo, or all)"
            ))
        })
    }

    fn classes(self) -> Vec<SystemClass> {
        match self {
            ClassSelection::One(c) => vec![c],
            ClassSelection::All => {
                vec![SystemClass::ObEqual, SystemClass::ObReduced, SystemClass::Uo]
            }
        }
    }

    fn single(self, command: &str) -> CliResult<SystemClass> {
        match self {
            ClassSelection::One(c) => Ok(c),
            ClassSelection::All => Err(usage(format!(
                "{command} runs one class at a time; pick ob-equal, ob-reduced, or uo"
            ))),
        }
    }
}

/// Keys accepted in the `key=value` configuration file. Each shadows the
/// library default; a flag naming the same parameter wins over the file.
pub const CONFIG_KEYS: &[&str] = &[
    "sigma", "t_g", "n_cal", "warmup", "b1", "b2", "trials", "steps", "class", "c1", "c2", "c3",
    "c4", "c5",
];

/// Optional parameter overrides, in file-or-flag form. `None` means "use
/// the library default".
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub sigma: Option<f64>,
    pub t_g: Option<f64>,
    pub n_cal: Option<usize>,
    pub warmup: Option<usize>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub trials: Option<usize>,
    pub steps: Option<usize>,
    pub class: Option<ClassSelection>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub c5: Option<f64>,
}

impl Overrides {
    /// Field-wise merge; `winner` takes precedence wherever both are set.
    pub fn overlay(self, winner: Overrides) -> Overrides {
        Overrides {
            sigma: winner.sigma.or(self.sigma),
            t_g: winner.t_g.or(self.t_g),
            n_cal: winner.n_cal.or(self.n_cal),
            warmup: winner.warmup.or(self.warmup),
            b1: winner.b1.or(self.b1),
            b2: winner.b2.or(self.b2),
            trials: winner.trials.or(self.trials),
            steps: winner.steps.or(self.steps),
            class: winner.class.or(self.class),
            c1: winner.c1.or(self.c1),
            c2: winner.c2.or(self.c2),
            c3: winner.c3.or(self.c3),
            c4: winner.c4.or(self.c4),
            c5: winner.c5.or(self.c5),
        }
    }

    /// Parses a plain-text configuration file: one `key=value` per line,
    /// `#` starts a comment, blank lines are ignored, the last duplicate of
    /// a key wins. Unknown keys are rejected with the full list of valid
    /// ones.
    pub fn from_file(path: &Path) -> CliResult<Overrides> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Io(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut ov = Overrides::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "config file {}, line {}: expected key=value, got `{line}`",
                    path.display(),
                    idx + 1
                ))
            })?;
            ov.set(key.trim(), value.trim())?;
        }
        Ok(ov)
    }

    fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
            value
                .parse()
                .map_err(|_| usage(format!("config key `{key}`: cannot parse `{value}`")))
        }
        match key {
            "sigma" => self.sigma = Some(num(key, value)?),
            "t_g" => self.t_g = Some(num(key, value)?),
            "n_cal" => self.n_cal = Some(num(key, value)?),
            "warmup" => self.warmup = Some(num(key, value)?),
            "b1" => self.b1 = Some(num(key, value)?),
            "b2" => self.b2 = Some(num(key, value)?),
            "trials" => self.trials = Some(num(key, value)?),
            "steps" => self.steps = Some(num(key, value)?),
            "class" => self.class = Some(ClassSelection::parse(value)?),
            "c1" => self.c1 = Some(num(key, value)?),
            "c2" => self.c2 = Some(num(key, value)?),
            "c3" => self.c3 = Some(num(key, value)?),
            "c4" => self.c4 = Some(num(key, value)?),
            "c5" => self.c5 = Some(num(key, value)?),
            other => {
                return Err(usage(format!(
                    "unknown configuration key `{other}` (valid keys: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Fully resolved invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub overrides: Overrides,
    /// Draw system-matrix entries with the quantized log-normal law instead
    /// of the rescaled-Gaussian default.
    pub lognormal_generator: bool,
}

#[derive(Debug, Clone)]
pub enum Command {
    Bench { modes: Vec<FilterMode>, trace: bool },
    CalibSweep { grid: Vec<f64>, systems: usize },
    Converge,
    Track { detections: PathBuf, out: Option<PathBuf> },
    Synth,
}

/// Parses a comma-separated mode list; order is kept, duplicates dropped.
pub fn parse_modes(s: &str) -> CliResult<Vec<FilterMode>> {
    let mut modes = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let mode = part.parse::<FilterMode>().map_err(|e| usage(e.to_string()))?;
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    if modes.is_empty() {
        return Err(usage("mode list is empty (expected e.g. nc2,uncorrected)"));
    }
    Ok(modes)
}

/// Parses the sweep grid: comma-separated positive scale factors.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let mut grid = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v: f64 =
            part.parse().map_err(|_| usage(format!("grid entry `{part}` is not a number")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(usage(format!("grid entries must be positive and finite, got {v}")));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(usage("sweep grid is empty"));
    }
    Ok(grid)
}

fn resolved_filter_config(ov: &Overrides) -> CliResult<FilterConfig> {
    let mut fc = FilterConfig::default();
    if let Some(v) = ov.sigma {
        fc.sigma = v;
    }
    if let Some(v) = ov.t_g {
        fc.t_g = v;
    }
    if let Some(v) = ov.n_cal {
        fc.n_cal = v;
    }
    if let Some(v) = ov.warmup {
        fc.warmup = v;
    }
    if let Some(v) = ov.b1 {
        fc.b1 = v;
    }
    if let Some(v) = ov.b2 {
        fc.b2 = v;
    }
    if !(fc.sigma > 0.0 && fc.sigma < 1.0) {
        return Err(usage(format!("correction gain must lie in (0,1), got {}", fc.sigma)));
    }
    if !(fc.t_g >= 0.0) {
        return Err(usage(format!("deadband must be ≥ 0, got {}", fc.t_g)));
    }
    // Build the window and buffer once up front so a bad shape is a usage
    // error here rather than a silently failed trial inside the suite.
    MomentWindow::new(fc.n_window, fc.b1, fc.b2).map_err(|e| usage(e.to_string()))?;
    InnovationBuffer::new(fc.n_cal, fc.warmup).map_err(|e| usage(e.to_string()))?;
    Ok(fc)
}

fn resolved_synthesis(
    class: SystemClass,
    seed: u64,
    ov: &Overrides,
    default_trials: usize,
    lognormal: bool,
) -> CliResult<SynthesisConfig> {
    let mut sc = SynthesisConfig::for_class(class, seed);
    sc.t_m = ov.steps.unwrap_or(sc.t_m);
    sc.l_trials = ov.trials.unwrap_or(default_trials);
    if let Some(v) = ov.c1 {
        sc.c1 = v;
    }
    if let Some(v) = ov.c2 {
        sc.c2 = v;
    }
    if let Some(v) = ov.c3 {
        sc.c3 = v;
    }
    if let Some(v) = ov.c4 {
        sc.c4 = v;
    }
    if let Some(v) = ov.c5 {
        sc.c5 = v;
    }
    sc.use_literal_generator = lognormal;
    if sc.l_trials == 0 {
        return Err(usage("trials must be positive"));
    }
    if sc.t_m == 0 {
        return Err(usage("steps must be positive"));
    }
    Ok(sc)
}

/// Per-class suite seed. Deriving it from (seed, class) rather than using
/// the master seed directly keeps the three classes' random draws
/// decorrelated under `--class all`, while `--class all` still reproduces
/// exactly the rows of the corresponding single-class runs.
fn class_seed(seed: u64, class: SystemClass) -> u64 {
    let tag = match class {
        SystemClass::ObEqual => 1u64,
        SystemClass::ObReduced => 2,
        SystemClass::Uo => 3,
    };
    trial_seed(seed, tag << 32)
}

fn selected_class(ov: &Overrides) -> ClassSelection {
    ov.class.unwrap_or(ClassSelection::One(SystemClass::ObEqual))
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Runs one resolved command to completion, writing its outputs under
/// `cfg.out_dir` (or the explicit `--out` path) and printing one summary
/// line per suite or artifact.
pub fn execute(cfg: &RunConfig) -> CliResult<()> {
    match &cfg.command {
        Command::Bench { modes, trace } => run_bench(cfg, modes, *trace),
        Command::CalibSweep { grid, systems } => run_sweep(cfg, grid, *systems),
        Command::Converge => run_converge(cfg),
        Command::Track { detections, out } => run_track(cfg, detections, out.as_deref()),
        Command::Synth => run_synth(cfg),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn mode_step(
    filter: &mut NC2Filter,
    mode: FilterMode,
    trial: &TrialData,
    i: usize,
) -> nc2_core::Result<StepOutput> {
    let z = &trial.y_m[i];
    match mode {
        FilterMode::Nc2 => nc2_step(filter, z),
        FilterMode::Sage => sage_step(filter, z),
        FilterMode::Uncorrected => baseline_step(filter, z, BaselineMode::Uncorrected),
        FilterMode::Oracle => baseline_step(
            filter,
            z,
            BaselineMode::Oracle { q_true: &trial.q_true[i], r_true: &trial.r_true[i] },
        ),
    }
}

fn run_bench(cfg: &RunConfig, modes: &[FilterMode], trace: bool) -> CliResult<()> {
    let fc = resolved_filter_config(&cfg.overrides)?;
    let mut summary_rows = Vec::new();
    for class in selected_class(&cfg.overrides).classes() {
        let sc = resolved_synthesis(
            class,
            class_seed(cfg.seed, class),
            &cfg.overrides,
            100,
            cfg.lognormal_generator,
        )?;
        let outcome = run_suite_with(&sc, modes, fc)?;
        io::write_trials(&cfg.out_dir.join(format!("trials_{class}.csv")), &outcome.trials)?;
        for (mode, summary) in &outcome.summaries {
            summary_rows.push((class.as_str().to_string(), *mode, summary.clone()));
        }
        println!("{}", suite_line(class, &sc, &outcome));
        if trace {
            write_traces(cfg, class, &sc, modes, fc)?;
        }
    }
    io::write_suite_summary(&cfg.out_dir.join("suite_summary.csv"), &summary_rows)?;
    Ok(())
}

fn suite_line(class: SystemClass, sc: &SynthesisConfig, outcome: &SuiteOutcome) -> String {
    let mut line = format!("bench {class}: {} trials ({} skipped)", sc.l_trials, outcome.skipped);
    for (mode, s) in &outcome.summaries {
        line.push_str(&format!(
            " | {mode} log10ΔQ/ΔR {:.2}/{:.2} div {:.0}%/{:.0}% fail {:.0}%",
            s.log_mean_q,
            s.log_mean_r,
            100.0 * s.divergence_q,
            100.0 * s.divergence_r,
            100.0 * s.inability_q,
        ));
    }
    line
}

/// Re-runs trial 0 of the suite under each mode, recording per-step
/// diagnostics. A numerical failure truncates that mode's trace at the
/// failing step; the rows up to it are still written.
fn write_traces(
    cfg: &RunConfig,
    class: SystemClass,
    sc: &SynthesisConfig,
    modes: &[FilterMode],
    fc: FilterConfig,
) -> CliResult<()> {
    let trial = generate_trial(&sc.for_trial(0))?;
    for &mode in modes {
        let mut filter = NC2Filter::new(trial.model.clone(), &trial.q0_hat, &trial.r0_hat, fc)?;
        let mut rows = Vec::with_capacity(trial.y_m.len());
        for i in 0..trial.y_m.len() {
            match mode_step(&mut filter, mode, &trial, i) {
                Ok(out) => rows.push(io::diagnostics_row(i + 1, &out)),
                Err(e) => {
                    eprintln!("trace {class}/{mode}: stopped at step {} ({e})", i + 1);
                    break;
                }
            }
        }
        io::write_csv_atomic(
            &cfg.out_dir.join(format!("trace_{class}_{mode}.csv")),
            io::DIAGNOSTICS_HEADER,
            &rows,
        )?;
    }
    Ok(())
}

const SWEEP_HEADER: &[&str] = &["system", "delta_q", "delta_r", "k", "e_a_max", "e_g_max"];

fn run_sweep(cfg: &RunConfig, grid: &[f64], systems: usize) -> CliResult<()> {
    if systems == 0 {
        return Err(usage("--systems must be positive"));
    }
    let steps = cfg.overrides.steps.unwrap_or(900);
    if steps == 0 {
        return Err(usage("steps must be positive"));
    }
    let cells = calibration_sweep(grid, systems, steps, cfg.seed)?;
    let mut rows = Vec::with_capacity(cells.len() * steps);
    for cell in &cells {
        for (i, (e_a, e_g)) in cell.e_a.iter().zip(&cell.e_g).enumerate() {
            rows.push(vec![
                cell.system.to_string(),
                fmt_f(cell.delta_q),
                fmt_f(cell.delta_r),
                (i + 1).to_string(),
                fmt_f(*e_a),
                fmt_f(*e_g),
            ]);
        }
    }
    let path = cfg.out_dir.join("sweep.csv");
    io::write_csv_atomic(&path, SWEEP_HEADER, &rows)?;
    println!(
        "calib-sweep: {systems} systems × {} cells × {steps} steps → {}",
        grid.len() * grid.len(),
        path.display()
    );
    Ok(())
}

fn run_converge(cfg: &RunConfig) -> CliResult<()> {
    let fc = resolved_filter_config(&cfg.overrides)?;
    let class = selected_class(&cfg.overrides).single("converge")?;
    let sc = resolved_synthesis(
        class,
        class_seed(cfg.seed, class),
        &cfg.overrides,
        50,
        cfg.lognormal_generator,
    )?;
    let header: Vec<&str> = std::iter::once("trial")
        .chain(io::DIAGNOSTICS_HEADER.iter().copied())
        .chain(["q_true_norm", "r_true_norm"])
        .collect();

    let mut rows = Vec::new();
    let (mut skipped, mut failed, mut in_band) = (0usize, 0usize, 0usize);
    for j in 0..sc.l_trials {
        let trial = match generate_trial(&sc.for_trial(j)) {
            Ok(t) => t,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let mut filter = NC2Filter::new(trial.model.clone(), &trial.q0_hat, &trial.r0_hat, fc)?;
        let final_third_from = 2 * sc.t_m / 3;
        let mut ratio_acc = 0.0;
        let mut ratio_n = 0usize;
        let mut died = false;
        for i in 0..trial.y_m.len() {
            match nc2_step(&mut filter, &trial.y_m[i]) {
                Ok(out) => {
                    if i >= final_third_from {
                        ratio_acc += out.r_hat.frobenius_norm() / trial.r_true[i].frobenius_norm();
                        ratio_n += 1;
                    }
                    let mut row = vec![j.to_string()];
                    row.extend(io::diagnostics_row(i + 1, &out));
                    row.push(fmt_f(trial.q_true[i].frobenius_norm()));
                    row.push(fmt_f(trial.r_true[i].frobenius_norm()));
                    rows.push(row);
                }
                Err(e) => {
                    eprintln!("converge trial {j}: stopped at step {} ({e})", i + 1);
                    failed += 1;
                    died = true;
                    break;
                }
            }
        }
        if !died && ratio_n > 0 && (0.5..=2.0).contains(&(ratio_acc / ratio_n as f64)) {
            in_band += 1;
        }
    }
    let path = cfg.out_dir.join("converge.csv");
    io::write_csv_atomic(&path, &header, &rows)?;
    println!(
        "converge {class}: {} trials ({skipped} skipped, {failed} failed), \
         final-third ‖R̂‖/‖R_true‖ in [0.5,2] for {in_band} → {}",
        sc.l_trials,
        path.display()
    );
    Ok(())
}

fn run_track(cfg: &RunConfig, detections: &Path, out: Option<&Path>) -> CliResult<()> {
    let dets = io::read_detections(detections)?;
    let frames = io::group_by_frame(&dets);
    let mut tracker = Tracker::new();
    let mut records = Vec::new();
    let span = match (frames.keys().next(), frames.keys().next_back()) {
        (Some(&first), Some(&last)) => Some((first, last)),
        _ => None,
    };
    if let Some((first, last)) = span {
        let empty: Vec<Detection> = Vec::new();
        // Step through every frame in the span, including ones with no
        // detections — tracks must coast and age through gaps.
        for frame in first..=last {
            let frame_dets = frames.get(&frame).map(Vec::as_slice).unwrap_or(&empty);
            records.extend(tracker.step(frame, frame_dets));
        }
    }
    let default_out = cfg.out_dir.join("tracks.csv");
    let out_path = out.unwrap_or(&default_out);
    io::write_tracks(out_path, &records)?;
    let mut ids: Vec<u64> = records.iter().map(|r| r.track_id).collect();
    ids.sort_unstable();
    ids.dedup();
    match span {
        Some((first, last)) => println!(
            "track: {} detections over frames {first}..={last}, {} tracks, {} track-frames → {}",
            dets.len(),
            ids.len(),
            records.len(),
            out_path.display()
        ),
        None => println!(
            "track: no detections in {} → {}",
            detections.display(),
            out_path.display()
        ),
    }
    Ok(())
}

const SYSTEMS_HEADER: &[&str] = &["trial", "matrix", "segment", "row", "col", "value"];
const MEASUREMENTS_HEADER: &[&str] = &["trial", "k", "idx", "y_m", "y_true"];

fn push_matrix(
    rows: &mut Vec<Vec<String>>,
    trial: usize,
    name: &str,
    segment: usize,
    m: &DMatrix<f64>,
) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            rows.push(vec![
                trial.to_string(),
                name.to_string(),
                segment.to_string(),
                r.to_string(),
                c.to_string(),
                fmt_f(m[(r, c)]),
            ]);
        }
    }
}

fn run_synth(cfg: &RunConfig) -> CliResult<()> {
    let class = selected_class(&cfg.overrides).single("synth")?;
    let sc = resolved_synthesis(
        class,
        class_seed(cfg.seed, class),
        &cfg.overrides,
        5,
        cfg.lognormal_generator,
    )?;
    let mut sys_rows = Vec::new();
    let mut meas_rows = Vec::new();
    let mut skipped = 0usize;
    for j in 0..sc.l_trials {
        let trial = match generate_trial(&sc.for_trial(j)) {
            Ok(t) => t,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        // Constant system matrices carry segment 0; the scheduled true
        // covariances get one block per noise segment.
        push_matrix(&mut sys_rows, j, "phi", 0, &trial.model.phi);
        push_matrix(&mut sys_rows, j, "h", 0, &trial.model.h);
        for s in 0..trial.coeffs.nrows() {
            push_matrix(&mut sys_rows, j, "q_true", s, &(trial.q_base.entries() * trial.coeffs[(s, 0)]));
            push_matrix(&mut sys_rows, j, "r_true", s, &(trial.r_base.entries() * trial.coeffs[(s, 1)]));
        }
        push_matrix(&mut sys_rows, j, "q0_hat", 0, trial.q0_hat.entries());
        push_matrix(&mut sys_rows, j, "r0_hat", 0, trial.r0_hat.entries());
        for (i, (y, y_true)) in trial.y_m.iter().zip(&trial.y_true).enumerate() {
            for idx in 0..y.len() {
                meas_rows.push(vec![
                    j.to_string(),
                    (i + 1).to_string(),
                    idx.to_string(),
                    fmt_f(y[idx]),
                    fmt_f(y_true[idx]),
                ]);
            }
        }
    }
    let sys_path = cfg.out_dir.join("systems.csv");
    io::write_csv_atomic(&sys_path, SYSTEMS_HEADER, &sys_rows)?;
    let meas_path = cfg.out_dir.join("measurements.csv");
    io::write_csv_atomic(&meas_path, MEASUREMENTS_HEADER, &meas_rows)?;
    println!(
        "synth {class}: {} trials ({skipped} skipped) → {}, {}",
        sc.l_trials,
        sys_path.display(),
        meas_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

/// Parsed command line. Parameters that can also come from the
/// configuration file are optional here; their effective defaults are
/// spelled out in the help text.
#[derive(Debug, Parser)]
#[command(
    name = "nc2",
    version,
    about = "Noise-covariance estimation toolkit: Monte Carlo benchmarks, calibrator sweeps, \
             convergence traces, 3D tracking, and test-system synthesis"
)]
pub struct Cli {
    /// Master seed; every random draw derives from it through named
    /// substreams, so identical invocations produce identical files.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory generated CSV files are written into.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,

    /// Plain-text key=value configuration file; flags win on conflict.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Correction gain on the noise intensities [default: 0.1].
    #[arg(long, global = true, value_name = "GAIN")]
    pub sigma: Option<f64>,

    /// Deadband on the Gaussian calibrator extreme [default: 0.02].
    #[arg(long, global = true, value_name = "T")]
    pub tg: Option<f64>,

    /// Trials per suite [default: 100 for bench, 50 for converge, 5 for synth].
    #[arg(long, global = true, value_name = "L")]
    pub trials: Option<usize>,

    /// Steps per trial [default: 900].
    #[arg(long, global = true, value_name = "N")]
    pub steps: Option<usize>,

    /// System class: ob-equal, ob-reduced, uo, or all (bench only)
    /// [default: ob-equal].
    #[arg(long, global = true, value_name = "CLASS")]
    pub class: Option<String>,

    /// Draw state-transition and observation entries with the quantized
    /// log-normal law instead of the rescaled-Gaussian default.
    #[arg(long, global = true)]
    pub lognormal_generator: bool,

    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run Monte Carlo suites and write per-trial and summary tables.
    Bench {
        /// Comma-separated filter modes to score.
        #[arg(long, value_name = "LIST", default_value = "nc2,sage,uncorrected,oracle")]
        modes: String,
        /// Also write per-step diagnostics for trial 0 of every mode.
        #[arg(long)]
        trace: bool,
    },
    /// Run the calibrators over a grid of frozen covariance scalings.
    CalibSweep {
        /// Comma-separated scale factors; the sweep covers the full
        /// (process × measurement) grid.
        #[arg(long, value_name = "LIST", default_value = "0.1,1,10")]
        grid: String,
        /// Number of seeded systems to sweep.
        #[arg(long, value_name = "N", default_value_t = 20)]
        systems: usize,
    },
    /// Record the adaptive filter's per-step series over a suite of trials.
    Converge,
    /// Run the 3D tracker over a detection CSV.
    Track {
        /// Detection file (columns frame,px,py,pz,l,w,h,score).
        #[arg(long, value_name = "FILE")]
        detections: PathBuf,
        /// Track output file [default: <out-dir>/tracks.csv].
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write generated systems and measurement sequences as CSV.
    Synth,
}

/// Resolves the parsed command line (plus the optional configuration file)
/// into a [`RunConfig`].
pub fn resolve(cli: Cli) -> CliResult<RunConfig> {
    let flag_overrides = Overrides {
        sigma: cli.sigma,
        t_g: cli.tg,
        trials: cli.trials,
        steps: cli.steps,
        class: cli.class.as_deref().map(ClassSelection::parse).transpose()?,
        ..Overrides::default()
    };
    let overrides = match &cli.config {
        Some(path) => Overrides::from_file(path)?.overlay(flag_overrides),
        None => flag_overrides,
    };
    let command = match cli.command {
        CliCommand::Bench { modes, trace } => {
            Command::Bench { modes: parse_modes(&modes)?, trace }
        }
        CliCommand::CalibSweep { grid, systems } => {
            Command::CalibSweep { grid: parse_grid(&grid)?, systems }
        }
        CliCommand::Converge => Command::Converge,
        CliCommand::Track { detections, out } => Command::Track { detections, out },
        CliCommand::Synth => Command::Synth,
    };
    Ok(RunConfig {
        command,
        seed: cli.seed,
        out_dir: cli.out_dir,
        overrides,
        lognormal_generator: cli.lognormal_generator,
    })
}

/// Full program: parse `args`, run, report errors on stderr, and return the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap formats its own usage/help/version output and uses exit
            // code 2 for misuse, matching CliError::Usage.
            let _ = e.print();
            return e.exit_code();
        }
    };
    match resolve(cli).and_then(|cfg| execute(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
