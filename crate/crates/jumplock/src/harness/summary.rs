//! Ensemble reduction: per-click statistics of the controller detuning,
//! click-count curves, and a settled window over the tail of the run.

use super::{HarnessError, TrajectoryRecord};

/// Pooled statistics over the last stretch of matured clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    /// First click index inside the window.
    pub start: usize,
    pub mean: f64,
    pub std: f64,
    pub mean_sq: f64,
}

/// Reduction of an ensemble, index-aligned on matured-click count.
///
/// Entry `i` of the per-index vectors describes the controller detuning
/// after `i` matured clicks (entry 0 is the initial detuning). Trajectories
/// are truncated to the shortest before reduction; the standard deviation
/// is the unbiased sample estimate, defined as 0 for a single trajectory.
/// The final window covers the last 20% of click indices, rounded up.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    /// Ensemble size.
    pub trajectories: usize,
    /// Common series length after truncation.
    pub truncated_len: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub final_window: WindowStats,
    /// Detected-click times per trajectory, untruncated.
    pub click_times: Vec<Vec<f64>>,
}

pub(crate) struct SeriesBundle {
    pub delta_series: Vec<Vec<f64>>,
    pub click_times: Vec<Vec<f64>>,
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub(crate) fn summarize_bundle(bundle: &SeriesBundle) -> Result<EnsembleSummary, HarnessError> {
    if bundle.delta_series.is_empty() {
        return Err(HarnessError::Config(
            "cannot summarize an empty ensemble".into(),
        ));
    }
    let truncated_len = bundle
        .delta_series
        .iter()
        .map(Vec::len)
        .min()
        .expect("non-empty");
    if truncated_len == 0 {
        return Err(HarnessError::Config(
            "cannot summarize: a trajectory has no detuning samples".into(),
        ));
    }
    let k = bundle.delta_series.len();
    let mut mean = Vec::with_capacity(truncated_len);
    let mut std = Vec::with_capacity(truncated_len);
    let mut mean_sq = Vec::with_capacity(truncated_len);
    let mut column = vec![0.0; k];
    for i in 0..truncated_len {
        for (slot, series) in column.iter_mut().zip(&bundle.delta_series) {
            *slot = series[i];
        }
        let m = mean_of(&column);
        mean.push(m);
        std.push(sample_std(&column, m));
        mean_sq.push(column.iter().map(|v| v * v).sum::<f64>() / k as f64);
    }

    let window_len = ((truncated_len as f64) * 0.2).ceil().max(1.0) as usize;
    let start = truncated_len - window_len;
    let mut pooled = Vec::with_capacity(window_len * k);
    for series in &bundle.delta_series {
        pooled.extend_from_slice(&series[start..truncated_len]);
    }
    let wmean = mean_of(&pooled);
    let final_window = WindowStats {
        start,
        mean: wmean,
        std: sample_std(&pooled, wmean),
        mean_sq: pooled.iter().map(|v| v * v).sum::<f64>() / pooled.len() as f64,
    };

    Ok(EnsembleSummary {
        trajectories: k,
        truncated_len,
        mean,
        std,
        mean_sq,
        final_window,
        click_times: bundle.click_times.clone(),
    })
}

/// Reduces finished trajectories to ensemble statistics. Empty input is an
/// error.
pub fn summarize(records: &[TrajectoryRecord]) -> Result<EnsembleSummary, HarnessError> {
    let bundle = SeriesBundle {
        delta_series: records.iter().map(TrajectoryRecord::delta_series).collect(),
        click_times: records
            .iter()
            .map(TrajectoryRecord::detected_click_times)
            .collect(),
    };
    summarize_bundle(&bundle)
}

/// True when every statistic matches bit-for-bit.
pub fn summaries_bit_identical(a: &EnsembleSummary, b: &EnsembleSummary) -> bool {
    let bits = |xs: &[f64], ys: &[f64]| {
        xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    a.trajectories == b.trajectories
        && a.truncated_len == b.truncated_len
        && bits(&a.mean, &b.mean)
        && bits(&a.std, &b.std)
        && bits(&a.mean_sq, &b.mean_sq)
        && a.final_window.start == b.final_window.start
        && a.final_window.mean.to_bits() == b.final_window.mean.to_bits()
        && a.final_window.std.to_bits() == b.final_window.std.to_bits()
        && a.final_window.mean_sq.to_bits() == b.final_window.mean_sq.to_bits()
        && a.click_times.len() == b.click_times.len()
        && a.click_times
            .iter()
            .zip(&b.click_times)
            .all(|(x, y)| bits(x, y))
}

/// Least-squares decay rate of a positive series: fits `ln y_i = b - rate*i`
/// and returns `rate`. `None` when fewer than two points or any entry is
/// not positive.
pub fn exponential_decay_rate(series: &[f64]) -> Option<f64> {
    if series.len() < 2 || series.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let n = series.len() as f64;
    let mean_i = (n - 1.0) / 2.0;
    let mean_ln = series.iter().map(|v| v.ln()).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in series.iter().enumerate() {
        let di = i as f64 - mean_i;
        num += di * (v.ln() - mean_ln);
        den += di * di;
    }
    Some(-num / den)
}

/// Kolmogorov-Smirnov distance between samples and a reference CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN samples"));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// Total-variation distance between two nonnegative weight vectors of equal
/// length; each is normalized to a probability vector first.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "weight vectors must align");
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    assert!(sp > 0.0 && sq > 0.0, "weights must have positive mass");
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a / sp - b / sq).abs())
        .sum::<f64>()
}
