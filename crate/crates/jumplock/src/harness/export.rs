//! Run artifacts: per-trajectory CSV event logs, ensemble summary tables,
//! two-column plot data, an SVG sketch, and a JSON manifest that replays
//! the run bit-for-bit.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so parsing
//! an exported file recovers every value exactly and recomputed statistics
//! match the in-memory ones bit-for-bit.

use super::summary::{summarize_bundle, SeriesBundle};
use super::{EnsembleSummary, HarnessError, RunConfig, TrajectoryRecord};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Replay input: the full configuration plus the code version that wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
}

/// One parsed line of a trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    /// Event time in the plant's clock.
    pub t: f64,
    /// Target ground state of the jump, 1-based.
    pub kind: u8,
    /// Whether the detector fired.
    pub detected: bool,
    /// Modulation phase at the event.
    pub phase: f64,
    /// Matured-click count after the controller handled the event.
    pub n: u64,
    /// Controller detuning after the controller handled the event.
    pub delta: f64,
}

fn trajectory_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("trajectory_{index}.csv"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents)
        .map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))
}

fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let mut out = String::new();
    out.push_str("t,kind,detected,phase,n,delta\n");
    let mut rows = record.history.iter();
    let mut n = 0u64;
    let mut delta = record.delta0;
    for event in &record.events {
        if event.detected {
            let row = rows.next().expect("one controller row per detected click");
            n = row.n;
            delta = row.delta;
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            event.t,
            event.channel + 1,
            event.detected,
            event.phase,
            n,
            delta
        );
    }
    out
}

/// Parses a trajectory CSV written by [`export_run`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, HarnessError> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::ExportMismatch(format!("{} is empty", path.display())))?;
    if header != "t,kind,detected,phase,n,delta" {
        return Err(HarnessError::ExportMismatch(format!(
            "{}: unexpected header '{header}'",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let mut next = || {
            fields.next().ok_or_else(|| {
                HarnessError::ExportMismatch(format!(
                    "{}, line {}: too few fields",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        let bad = |what: &str| {
            HarnessError::ExportMismatch(format!(
                "{}, line {}: bad {what}",
                path.display(),
                lineno + 2
            ))
        };
        let t = next()?.parse::<f64>().map_err(|_| bad("t"))?;
        let kind = next()?.parse::<u8>().map_err(|_| bad("kind"))?;
        let detected = next()?.parse::<bool>().map_err(|_| bad("detected"))?;
        let phase = next()?.parse::<f64>().map_err(|_| bad("phase"))?;
        let n = next()?.parse::<u64>().map_err(|_| bad("n"))?;
        let delta = next()?.parse::<f64>().map_err(|_| bad("delta"))?;
        if fields.next().is_some() {
            return Err(bad("row (too many fields)"));
        }
        rows.push(TrajectoryRow {
            t,
            kind,
            detected,
            phase,
            n,
            delta,
        });
    }
    Ok(rows)
}

fn summary_csv(summary: &EnsembleSummary) -> String {
    let mut out = String::new();
    out.push_str("click_index,mean,std,mean_sq\n");
    for i in 0..summary.truncated_len {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            i, summary.mean[i], summary.std[i], summary.mean_sq[i]
        );
    }
    out
}

fn final_window_csv(summary: &EnsembleSummary) -> String {
    let w = &summary.final_window;
    format!(
        "start,mean,std,mean_sq\n{},{},{},{}\n",
        w.start, w.mean, w.std, w.mean_sq
    )
}

fn two_column(data: impl Iterator<Item = (f64, f64)>) -> String {
    let mut out = String::new();
    for (x, y) in data {
        let _ = writeln!(out, "{x} {y}");
    }
    out
}

/// Minimal SVG of detuning against matured-click index, one polyline per
/// trajectory, with the admissible band marked.
fn detuning_svg(records: &[TrajectoryRecord], c_bound: f64) -> String {
    const W: f64 = 900.0;
    const H: f64 = 420.0;
    const PAD: f64 = 40.0;
    let max_len = records
        .iter()
        .map(|r| r.delta_series().len())
        .max()
        .unwrap_or(2)
        .max(2);
    let y_of = |delta: f64| PAD + (c_bound - delta) / (2.0 * c_bound) * (H - 2.0 * PAD);
    let x_of = |i: usize| PAD + i as f64 / (max_len - 1) as f64 * (W - 2.0 * PAD);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(
        out,
        "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>"
    );
    for (delta, label) in [(c_bound, "+C"), (0.0, "0"), (-c_bound, "-C")] {
        let y = y_of(delta);
        let _ = writeln!(
            out,
            "  <line x1=\"{PAD}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#bbbbbb\" \
             stroke-dasharray=\"4 4\"/>",
            W - PAD
        );
        let _ = writeln!(
            out,
            "  <text x=\"4\" y=\"{}\" font-size=\"12\" fill=\"#555555\">{label}</text>",
            y + 4.0
        );
    }
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
    ];
    for record in records {
        let series = record.delta_series();
        let mut points = String::new();
        for (i, delta) in series.iter().enumerate() {
            let _ = write!(points, "{:.2},{:.2} ", x_of(i), y_of(*delta));
        }
        let color = COLORS[record.index as usize % COLORS.len()];
        let _ = writeln!(
            out,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>",
            points.trim_end()
        );
    }
    let _ = writeln!(
        out,
        "  <text x=\"{PAD}\" y=\"{}\" font-size=\"12\" fill=\"#555555\">detuning vs matured \
         clicks (0..{})</text>",
        H - 8.0,
        max_len - 1
    );
    out.push_str("</svg>\n");
    out
}

/// Writes every artifact of a finished run into `out_dir` (created if
/// needed): `trajectory_<k>.csv`, `summary.csv`, `final_window.csv`,
/// `delta_vs_click_<k>.dat`, `clicks_vs_time_<k>.dat`, `detuning.svg`, and
/// `manifest.json`.
pub fn export_run(
    config: &RunConfig,
    records: &[TrajectoryRecord],
    summary: &EnsembleSummary,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::io(format!("creating {}", out_dir.display()), e))?;
    for record in records {
        write_file(
            &trajectory_file(out_dir, record.index as usize),
            &trajectory_csv(record),
        )?;
        let series = record.delta_series();
        write_file(
            &out_dir.join(format!("delta_vs_click_{}.dat", record.index)),
            &two_column(series.iter().enumerate().map(|(i, d)| (i as f64, *d))),
        )?;
        let times = record.detected_click_times();
        write_file(
            &out_dir.join(format!("clicks_vs_time_{}.dat", record.index)),
            &two_column(times.iter().enumerate().map(|(i, t)| (*t, (i + 1) as f64))),
        )?;
    }
    write_file(&out_dir.join("summary.csv"), &summary_csv(summary))?;
    write_file(
        &out_dir.join("final_window.csv"),
        &final_window_csv(summary),
    )?;
    write_file(
        &out_dir.join("detuning.svg"),
        &detuning_svg(records, config.c_bound),
    )?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Manifest(format!("serializing manifest: {e}")))?;
    write_file(&out_dir.join("manifest.json"), &(json + "\n"))?;
    Ok(())
}

/// Loads a manifest written by [`export_run`].
pub fn load_manifest(path: &Path) -> Result<Manifest, HarnessError> {
    let text = read_file(path)?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Manifest(format!("{}: {e}", path.display())))
}

/// Reruns the configuration stored in a manifest and exports into `out_dir`.
/// The rerun is driven purely by the manifest, so its artifacts match the
/// original export byte for byte.
pub fn replay(
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<(Vec<TrajectoryRecord>, EnsembleSummary), HarnessError> {
    let manifest = load_manifest(manifest_path)?;
    let (records, summary) = super::run_ensemble(&manifest.config)?;
    export_run(&manifest.config, &records, &summary, out_dir)?;
    Ok((records, summary))
}

/// Rebuilds the ensemble summary purely from exported artifacts: the
/// manifest supplies the configuration, the trajectory CSVs supply the
/// detuning series and click times. Matured clicks are recognized by the
/// matured-count column incrementing.
pub fn summary_from_csv_dir(dir: &Path) -> Result<EnsembleSummary, HarnessError> {
    let manifest = load_manifest(&dir.join("manifest.json"))?;
    let mut delta_series = Vec::new();
    let mut click_times = Vec::new();
    for k in 0..manifest.config.ensemble as usize {
        let rows = read_trajectory_csv(&trajectory_file(dir, k))?;
        let mut series = vec![manifest.config.delta0];
        let mut times = Vec::new();
        let mut last_n = 0u64;
        for row in &rows {
            if row.detected {
                times.push(row.t);
                if row.n != last_n {
                    series.push(row.delta);
                    last_n = row.n;
                }
            }
        }
        delta_series.push(series);
        click_times.push(times);
    }
    summarize_bundle(&SeriesBundle {
        delta_series,
        click_times,
    })
}
