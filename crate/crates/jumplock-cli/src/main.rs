use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use jumplock::feedback::ClipMode;
use jumplock::harness::{
    builtin_preset, check_invariants, export_run, parse_preset, replay, run_ensemble,
    summaries_bit_identical, summary_from_csv_dir, EnsembleSummary, ModelKind, RunConfig,
    TrajectoryRecord,
};
use jumplock::oracles::{report_text, verification_report};
use std::path::{Path, PathBuf};

/// Quantum-jump trajectory simulation with click-triggered frequency locking.
#[derive(Parser)]
#[command(name = "jumplock", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a two-level ensemble from a preset.
    TwoLevel(RunArgs),
    /// Run a reduced three-level ensemble from a preset.
    LambdaReduced(RunArgs),
    /// Run a full three-level ensemble from a preset.
    LambdaFull(RunArgs),
    /// Check the closed-form reference values and print one line per check.
    Oracle {
        /// Also write the checks as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Rerun a manifest and export identical artifacts.
    Replay {
        /// Path to a manifest.json written by a previous run.
        manifest: PathBuf,
        /// Directory for the replayed artifacts.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Preset name (two-level-lock, three-level-lock) or path to a preset file.
    #[arg(long)]
    preset: String,
    /// Directory for exported artifacts; omit to skip exporting.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of trajectories.
    #[arg(long)]
    ensemble: Option<u32>,
    /// Stop after this many matured detected clicks per trajectory.
    #[arg(long, conflicts_with = "time")]
    clicks: Option<u64>,
    /// Stop after this much simulated time per trajectory.
    #[arg(long)]
    time: Option<f64>,
    /// Override the detection efficiency (uniform across channels).
    #[arg(long)]
    eta: Option<f64>,
    /// Override the initial detuning.
    #[arg(long)]
    delta0: Option<f64>,
    /// Override the controller dead time.
    #[arg(long)]
    dead_time: Option<f64>,
    /// Clip rule for the detuning update: one-sided (snap to +C) or symmetric.
    #[arg(long, value_parser = parse_clip)]
    clip_mode: Option<ClipMode>,
}

fn parse_clip(s: &str) -> Result<ClipMode, String> {
    match s {
        "one-sided" | "asymmetric" => Ok(ClipMode::Asymmetric),
        "symmetric" => Ok(ClipMode::Symmetric),
        other => Err(format!(
            "unknown clip mode '{other}' (expected one-sided or symmetric)"
        )),
    }
}

fn load_config(args: &RunArgs, expect: ModelKind) -> Result<RunConfig> {
    let text = match builtin_preset(&args.preset) {
        Some(text) => text.to_string(),
        None => std::fs::read_to_string(&args.preset)
            .with_context(|| format!("reading preset '{}'", args.preset))?,
    };
    let mut config = parse_preset(&text)?;
    if config.model != expect {
        bail!(
            "preset '{}' configures model {}, but the subcommand expects {}",
            args.preset,
            config.model.tag(),
            expect.tag()
        );
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(ensemble) = args.ensemble {
        config.ensemble = ensemble;
    }
    if let Some(clicks) = args.clicks {
        config.clicks = Some(clicks);
        config.time = None;
    }
    if let Some(time) = args.time {
        config.time = Some(time);
        config.clicks = None;
    }
    if let Some(eta) = args.eta {
        config.eta = Some(eta);
        config.eta1 = None;
        config.eta2 = None;
    }
    if let Some(delta0) = args.delta0 {
        config.delta0 = delta0;
    }
    if let Some(dead_time) = args.dead_time {
        config.dead_time = dead_time;
    }
    if let Some(clip) = args.clip_mode {
        config.clip_mode = clip;
    }
    Ok(config)
}

fn print_summary(records: &[TrajectoryRecord], summary: &EnsembleSummary) {
    let total_steps: u64 = records.iter().map(|r| r.steps).sum();
    let wall: f64 = records.iter().map(|r| r.wall.as_secs_f64()).sum();
    println!(
        "ran {} trajectories, {} matured clicks each after truncation, {} integrator steps, {:.1} s of core time",
        summary.trajectories,
        summary.truncated_len.saturating_sub(1),
        total_steps,
        wall
    );
    let w = &summary.final_window;
    println!(
        "final window (from click {}): mean detuning {:.6}, std {:.6}, mean square {:.6}",
        w.start, w.mean, w.std, w.mean_sq
    );
}

fn run_model(args: &RunArgs, expect: ModelKind) -> Result<()> {
    let config = load_config(args, expect)?;
    let prepared = config.prepare()?;
    for warning in prepared.feedback.regime_warnings() {
        eprintln!("warning: {warning}");
    }
    let (records, summary) = run_ensemble(&config)?;
    print_summary(&records, &summary);

    let mut problems = check_invariants(&config, &records, &summary);
    if let Some(out) = &args.out {
        export_run(&config, &records, &summary, out)?;
        println!("artifacts written to {}", out.display());
        let recomputed = summary_from_csv_dir(out)?;
        if !summaries_bit_identical(&summary, &recomputed) {
            problems.push("summary recomputed from CSVs differs from the in-memory one".into());
        }
    }
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("invariant violation: {p}");
        }
        bail!("{} invariant check(s) failed", problems.len());
    }
    println!("all invariant checks passed");
    Ok(())
}

fn run_oracle(json: Option<&Path>) -> Result<()> {
    let checks = verification_report();
    print!("{}", report_text(&checks));
    if let Some(path) = json {
        let items: Vec<serde_json::Value> = checks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name,
                    "computed": c.computed,
                    "reference": c.reference,
                    "tolerance": c.tolerance,
                    "pass": c.pass,
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&items)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        bail!("{failed} oracle check(s) failed");
    }
    println!("all {} oracle checks passed", checks.len());
    Ok(())
}

fn run_replay(manifest: &Path, out: &Path) -> Result<()> {
    let (records, summary) = replay(manifest, out)?;
    print_summary(&records, &summary);
    let recomputed = summary_from_csv_dir(out)?;
    if !summaries_bit_identical(&summary, &recomputed) {
        return Err(anyhow!(
            "summary recomputed from replayed CSVs differs from the in-memory one"
        ));
    }
    println!("replayed artifacts written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::TwoLevel(args) => run_model(args, ModelKind::TwoLevel),
        Command::LambdaReduced(args) => run_model(args, ModelKind::LambdaReduced),
        Command::LambdaFull(args) => run_model(args, ModelKind::LambdaFull),
        Command::Oracle { json } => run_oracle(json.as_deref()),
        Command::Replay { manifest, out } => run_replay(manifest, out),
    }
}
