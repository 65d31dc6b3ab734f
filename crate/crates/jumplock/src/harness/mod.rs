//! Ensemble orchestration: runs closed-loop trajectories in parallel with
//! per-trajectory deterministic random streams, reduces them to summary
//! statistics, and exports artifacts that replay bit-for-bit.

mod config;
mod export;
mod summary;

pub use config::{
    builtin_preset, parse_preset, InitialState, ModelKind, PreparedModel, PreparedRun, RunConfig,
};
pub use export::{
    export_run, load_manifest, read_trajectory_csv, replay, summary_from_csv_dir, Manifest,
    TrajectoryRow,
};
pub use summary::{
    exponential_decay_rate, ks_statistic, summaries_bit_identical, summarize, total_variation,
    EnsembleSummary, WindowStats,
};

use crate::dynamics::DynamicsError;
use crate::feedback::{run_closed_loop, ControlRow};
use crate::jump::{FullLambdaPlant, JumpEvent, ReducedLambdaPlant, RngStream, TwoLevelPlant};
use rayon::prelude::*;
use std::time::{Duration, Instant};

/// Errors from configuration, orchestration, or artifact handling.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("preset parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("trajectory with seed {seed} failed: {source}")]
    Trajectory {
        seed: u64,
        #[source]
        source: DynamicsError,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("export mismatch: {0}")]
    ExportMismatch(String),
}

impl HarnessError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }
}

/// Everything one trajectory produced.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Position in the ensemble (0-based).
    pub index: u32,
    /// Seed of the dedicated random substream that drove this trajectory.
    pub seed: u64,
    /// Which plant was simulated.
    pub model: ModelKind,
    /// Detuning the controller started from.
    pub delta0: f64,
    /// Every jump, detected or not, in order.
    pub events: Vec<JumpEvent>,
    /// One row per detected click handled by the controller.
    pub history: Vec<ControlRow>,
    /// Controller detuning when the run stopped.
    pub final_delta: f64,
    /// Simulated span in the plant's clock.
    pub elapsed: f64,
    /// Integrator steps taken.
    pub steps: u64,
    /// Wall-clock cost (diagnostic only; never exported).
    pub wall: Duration,
}

impl TrajectoryRecord {
    /// Controller detuning indexed by matured-click count: entry 0 is the
    /// initial value, entry N the detuning after the Nth matured click.
    pub fn delta_series(&self) -> Vec<f64> {
        let mut series = Vec::with_capacity(self.history.len() + 1);
        series.push(self.delta0);
        series.extend(
            self.history
                .iter()
                .filter(|row| row.matured)
                .map(|row| row.delta),
        );
        series
    }

    /// Times of detected clicks, in order.
    pub fn detected_click_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.detected)
            .map(|e| e.t)
            .collect()
    }
}

/// Runs trajectory `index` of the prepared ensemble.
pub fn run_one(prepared: &PreparedRun, index: u32) -> Result<TrajectoryRecord, HarnessError> {
    let mut rng = RngStream::new(prepared.seed).substream(u64::from(index));
    let stream_seed = rng.seed();
    let started = Instant::now();
    let fail = |source: DynamicsError| HarnessError::Trajectory {
        seed: stream_seed,
        source,
    };
    let trace = match &prepared.model {
        PreparedModel::TwoLevel { params, start } => {
            let mut plant =
                TwoLevelPlant::new(*params, &prepared.propagator, prepared.detection, *start)
                    .map_err(fail)?;
            run_closed_loop(
                &mut plant,
                &prepared.feedback,
                prepared.delta0,
                &mut rng,
                prepared.stop,
            )
            .map_err(fail)?
        }
        PreparedModel::Reduced { params, start } => {
            let mut plant =
                ReducedLambdaPlant::new(*params, &prepared.propagator, prepared.detection, *start)
                    .map_err(fail)?;
            run_closed_loop(
                &mut plant,
                &prepared.feedback,
                prepared.delta0,
                &mut rng,
                prepared.stop,
            )
            .map_err(fail)?
        }
        PreparedModel::Full { params, start } => {
            let mut plant =
                FullLambdaPlant::new(*params, &prepared.propagator, prepared.detection, *start)
                    .map_err(fail)?;
            run_closed_loop(
                &mut plant,
                &prepared.feedback,
                prepared.delta0,
                &mut rng,
                prepared.stop,
            )
            .map_err(fail)?
        }
    };
    Ok(TrajectoryRecord {
        index,
        seed: stream_seed,
        model: match prepared.model {
            PreparedModel::TwoLevel { .. } => ModelKind::TwoLevel,
            PreparedModel::Reduced { .. } => ModelKind::LambdaReduced,
            PreparedModel::Full { .. } => ModelKind::LambdaFull,
        },
        delta0: prepared.delta0,
        events: trace.events,
        history: trace.history,
        final_delta: trace.final_delta,
        elapsed: trace.elapsed,
        steps: trace.steps,
        wall: started.elapsed(),
    })
}

/// Runs the whole ensemble in parallel and summarizes it.
///
/// Trajectory `k` always consumes substream `k` of the configured seed, so
/// results do not depend on how rayon schedules the work. On failure the
/// error names the seed of the offending trajectory, chosen as the
/// lowest-index failure for determinism.
pub fn run_ensemble(
    config: &RunConfig,
) -> Result<(Vec<TrajectoryRecord>, EnsembleSummary), HarnessError> {
    let prepared = config.prepare()?;
    let results: Vec<Result<TrajectoryRecord, HarnessError>> = (0..prepared.ensemble)
        .into_par_iter()
        .map(|k| run_one(&prepared, k))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for result in results {
        records.push(result?);
    }
    let summary = summarize(&records)?;
    Ok((records, summary))
}

/// Structural checks on a finished run. Returns one message per violation;
/// empty means every check passed.
pub fn check_invariants(
    config: &RunConfig,
    records: &[TrajectoryRecord],
    summary: &EnsembleSummary,
) -> Vec<String> {
    let mut problems = Vec::new();
    if records.len() != config.ensemble as usize {
        problems.push(format!(
            "expected {} trajectories, have {}",
            config.ensemble,
            records.len()
        ));
    }
    for record in records {
        let tag = format!("trajectory {}", record.index);
        for pair in record.events.windows(2) {
            if pair[1].t <= pair[0].t {
                problems.push(format!(
                    "{tag}: event times not strictly increasing at t = {}",
                    pair[1].t
                ));
                break;
            }
        }
        let detected = record.events.iter().filter(|e| e.detected).count();
        if record.history.len() != detected {
            problems.push(format!(
                "{tag}: {} detected clicks but {} controller rows",
                detected,
                record.history.len()
            ));
        }
        let mut expected_n = 0u64;
        for row in &record.history {
            if row.matured {
                expected_n += 1;
            }
            if row.n != expected_n {
                problems.push(format!(
                    "{tag}: matured count jumped to {} (expected {expected_n})",
                    row.n
                ));
                break;
            }
        }
        for row in &record.history {
            if row.delta.abs() > config.c_bound + 1e-12 {
                problems.push(format!(
                    "{tag}: detuning {} escaped the bound {}",
                    row.delta, config.c_bound
                ));
                break;
            }
        }
        if let Some(clicks) = config.clicks {
            let matured = record.history.iter().filter(|row| row.matured).count() as u64;
            if matured != clicks {
                problems.push(format!(
                    "{tag}: stopped after {matured} matured clicks, configured {clicks}"
                ));
            }
        }
        if let Some(time) = config.time {
            if record.elapsed + 1e-9 < time {
                problems.push(format!(
                    "{tag}: stopped at t = {} before the configured span {time}",
                    record.elapsed
                ));
            }
        }
    }
    let expected_len = records
        .iter()
        .map(|r| r.delta_series().len())
        .min()
        .unwrap_or(0);
    if summary.truncated_len != expected_len {
        problems.push(format!(
            "summary truncated to {} entries, shortest trajectory has {}",
            summary.truncated_len, expected_len
        ));
    }
    problems
}
