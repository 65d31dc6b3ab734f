//! Click-triggered frequency lock.
//!
//! The controller owns a stopwatch `S` and the detuning it applies to the
//! plant. Every integration step ticks the stopwatch; every detected click
//! consults it. A click arriving with `S` at or below the dead time only
//! resets the stopwatch. A click arriving later is "matured": the stopwatch
//! resets, the update counter increments, and the detuning moves against
//! the demodulated click phase, clipped to the prior bound `C`. Between
//! clicks the plant sees the current detuning as a constant.
//!
//! The clip rule is asymmetric by default: any candidate outside `[-C, C]`
//! is replaced by `+C`, including candidates below `-C`. A symmetric mode
//! that clamps to the nearest bound is available behind
//! [`FeedbackConfig::with_clip_mode`].

use crate::dynamics::DynamicsError;
use crate::jump::{JumpEvent, Plant, RngStream};
use serde::{Deserialize, Serialize};

/// Which demodulation the update uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeedbackVariant {
    /// Two-level plant: the update reads the sine of the click phase.
    TwoLevel,
    /// Three-level plants: the update reads the cosine of the click phase,
    /// scaled by the bright/dark mixing factor `sin(2 alpha)`.
    Lambda { sin_two_alpha: f64 },
}

/// How candidates outside the prior bound are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipMode {
    /// Replace any out-of-bound candidate by `+C`.
    Asymmetric,
    /// Clamp to the nearest bound.
    Symmetric,
}

/// Controller settings, in the plant's clock units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    c_bound: f64,
    delta_gain: f64,
    dead_time: f64,
    omega: f64,
    variant: FeedbackVariant,
    clip_mode: ClipMode,
}

impl FeedbackConfig {
    /// `c_bound` is the prior half-width `C`, `delta_gain` the per-click
    /// step `delta` (zero gives an open-loop run), `dead_time` the maturity
    /// threshold `T`, and `omega` the modulation frequency shared with the
    /// plant.
    pub fn new(
        c_bound: f64,
        delta_gain: f64,
        dead_time: f64,
        omega: f64,
        variant: FeedbackVariant,
    ) -> Result<Self, DynamicsError> {
        let check = |name: &str, v: f64, strict: bool| -> Result<(), DynamicsError> {
            if v.is_finite() && (v > 0.0 || (!strict && v == 0.0)) {
                Ok(())
            } else {
                Err(DynamicsError::InvalidParameter(format!(
                    "{name} must be {} and finite, got {v}",
                    if strict { "positive" } else { "non-negative" }
                )))
            }
        };
        check("c_bound", c_bound, true)?;
        check("delta_gain", delta_gain, false)?;
        check("dead_time", dead_time, false)?;
        check("omega", omega, true)?;
        if let FeedbackVariant::Lambda { sin_two_alpha } = variant {
            if !(sin_two_alpha > 0.0 && sin_two_alpha <= 1.0) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "sin_two_alpha must lie in (0, 1], got {sin_two_alpha}"
                )));
            }
        }
        Ok(Self {
            c_bound,
            delta_gain,
            dead_time,
            omega,
            variant,
            clip_mode: ClipMode::Asymmetric,
        })
    }

    pub fn with_clip_mode(mut self, mode: ClipMode) -> Self {
        self.clip_mode = mode;
        self
    }

    pub fn c_bound(&self) -> f64 {
        self.c_bound
    }

    pub fn delta_gain(&self) -> f64 {
        self.delta_gain
    }

    pub fn dead_time(&self) -> f64 {
        self.dead_time
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn variant(&self) -> FeedbackVariant {
        self.variant
    }

    pub fn clip_mode(&self) -> ClipMode {
        self.clip_mode
    }

    /// Non-fatal checks that the configuration sits where the lock is known
    /// to pull the right way.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        match self.variant {
            FeedbackVariant::TwoLevel => {
                let lhs = 4.0 * self.c_bound * self.c_bound + 1.0;
                let rhs = 4.0 * self.omega * self.omega;
                if lhs >= rhs {
                    warnings.push(format!(
                        "two-level update drift can change sign when \
                         4 C^2 + 1 >= 4 omega^2 (here {lhs:.3} >= {rhs:.3}); \
                         raise omega or shrink the bound C"
                    ));
                }
            }
            FeedbackVariant::Lambda { .. } => {
                if self.c_bound >= 0.5 {
                    warnings.push(format!(
                        "three-level lock is only guaranteed for bounds \
                         C < 1/2 (here C = {})",
                        self.c_bound
                    ));
                }
            }
        }
        warnings
    }
}

/// One history row: the update counter, click time, detuning in force
/// after handling the click, the click phase, and whether the click
/// matured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub n: u64,
    pub t: f64,
    pub delta: f64,
    pub phase: f64,
    pub matured: bool,
}

/// Mutable controller state.
#[derive(Debug, Clone)]
pub struct FeedbackState {
    delta: f64,
    stopwatch: f64,
    counter: u64,
    history: Vec<ControlRow>,
}

impl FeedbackState {
    /// Starts at `delta0`, which must respect the prior bound.
    pub fn new(delta0: f64, cfg: &FeedbackConfig) -> Result<Self, DynamicsError> {
        if !delta0.is_finite() || delta0.abs() > cfg.c_bound {
            return Err(DynamicsError::InvalidParameter(format!(
                "initial detuning {delta0} outside the prior bound [{}, {}]",
                -cfg.c_bound, cfg.c_bound
            )));
        }
        Ok(Self {
            delta: delta0,
            stopwatch: 0.0,
            counter: 0,
            history: Vec::new(),
        })
    }

    /// Detuning currently applied to the plant.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Time since the last detected click (or since the start).
    pub fn stopwatch(&self) -> f64 {
        self.stopwatch
    }

    /// Number of matured updates so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn history(&self) -> &[ControlRow] {
        &self.history
    }

    pub fn into_history(self) -> Vec<ControlRow> {
        self.history
    }

    /// Advances the stopwatch; nothing else changes.
    pub fn on_tick(&mut self, dt: f64) {
        self.stopwatch += dt;
    }

    /// Handles a detected click at time `t` with modulation phase `phase`.
    /// Returns true when the click matured and the detuning may have moved.
    pub fn on_detected_click(&mut self, t: f64, phase: f64, cfg: &FeedbackConfig) -> bool {
        if self.stopwatch <= cfg.dead_time {
            self.stopwatch = 0.0;
            self.history.push(ControlRow {
                n: self.counter,
                t,
                delta: self.delta,
                phase,
                matured: false,
            });
            return false;
        }
        self.stopwatch = 0.0;
        self.counter += 1;
        let step = match cfg.variant {
            FeedbackVariant::TwoLevel => cfg.delta_gain * phase.sin(),
            FeedbackVariant::Lambda { sin_two_alpha } => {
                cfg.delta_gain * sin_two_alpha * phase.cos()
            }
        };
        let candidate = self.delta - step;
        self.delta = if candidate.abs() <= cfg.c_bound {
            candidate
        } else {
            match cfg.clip_mode {
                ClipMode::Asymmetric => cfg.c_bound,
                ClipMode::Symmetric => cfg.c_bound.copysign(candidate),
            }
        };
        self.history.push(ControlRow {
            n: self.counter,
            t,
            delta: self.delta,
            phase,
            matured: true,
        });
        true
    }
}

/// When a closed-loop run ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopCondition {
    /// Stop once this many clicks have been detected.
    DetectedClicks(u64),
    /// Stop once this many detected clicks have matured.
    MaturedClicks(u64),
    /// Stop at this plant-clock time.
    Time(f64),
}

/// Everything one closed-loop trajectory produced.
#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    /// Every emission, detected or not.
    pub events: Vec<JumpEvent>,
    /// One row per detected click.
    pub history: Vec<ControlRow>,
    /// Detuning in force when the run stopped.
    pub final_delta: f64,
    /// Plant-clock time when the run stopped.
    pub elapsed: f64,
    /// Integration steps taken.
    pub steps: u64,
}

/// Runs the plant under the controller until the stop condition holds.
///
/// Each iteration advances the plant one step, ticks the stopwatch by that
/// step, and hands any detected click to the controller; a matured update
/// pushes the new detuning into the plant before the next step. The trace
/// contains exactly the events up to the stop condition.
pub fn run_closed_loop<P: Plant>(
    plant: &mut P,
    cfg: &FeedbackConfig,
    delta0: f64,
    rng: &mut RngStream,
    stop: StopCondition,
) -> Result<ClosedLoopTrace, DynamicsError> {
    let omega_mismatch = (plant.modulation_omega() - cfg.omega).abs() > 1e-9 * cfg.omega.max(1.0);
    if omega_mismatch {
        return Err(DynamicsError::InvalidParameter(format!(
            "plant modulation frequency {} differs from controller frequency {}",
            plant.modulation_omega(),
            cfg.omega
        )));
    }
    let mut fs = FeedbackState::new(delta0, cfg)?;
    plant.set_detuning(delta0);
    let dt = plant.dt();
    let mut events = Vec::new();
    let mut detected: u64 = 0;
    let mut steps: u64 = 0;
    loop {
        let done = match stop {
            StopCondition::DetectedClicks(n) => detected >= n,
            StopCondition::MaturedClicks(n) => fs.counter() >= n,
            StopCondition::Time(t_max) => plant.time() >= t_max,
        };
        if done {
            break;
        }
        let event = plant.step(rng);
        steps += 1;
        fs.on_tick(dt);
        if let Some(ev) = event {
            events.push(ev);
            if ev.detected {
                detected += 1;
                if fs.on_detected_click(ev.t, ev.phase, cfg) {
                    plant.set_detuning(fs.delta());
                }
            }
        }
    }
    Ok(ClosedLoopTrace {
        events,
        final_delta: fs.delta(),
        elapsed: plant.time(),
        steps,
        history: fs.into_history(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PropagatorConfig, TwoLevelParams};
    use crate::jump::{DetectionModel, TwoLevelPlant};
    use crate::qstate::BlochVector;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn two_level_cfg(c: f64, gain: f64, dead: f64) -> FeedbackConfig {
        FeedbackConfig::new(c, gain, dead, 1.0, FeedbackVariant::TwoLevel).unwrap()
    }

    #[test]
    fn ticks_accumulate_and_touch_nothing_else() {
        let cfg = two_level_cfg(0.5, 9e-4, 0.0);
        let mut fs = FeedbackState::new(0.25, &cfg).unwrap();
        fs.on_tick(0.5);
        assert_eq!(fs.stopwatch(), 0.5);
        for _ in 0..999 {
            fs.on_tick(0.5);
        }
        assert_eq!(fs.stopwatch(), 500.0);
        assert_eq!(fs.delta(), 0.25);
        assert_eq!(fs.counter(), 0);
        assert!(fs.history().is_empty());
    }

    #[test]
    fn early_click_only_resets_the_stopwatch() {
        let cfg = two_level_cfg(0.5, 9e-4, 1.0);
        let mut fs = FeedbackState::new(0.3, &cfg).unwrap();
        fs.on_tick(0.5);
        let matured = fs.on_detected_click(0.5, FRAC_PI_2, &cfg);
        assert!(!matured);
        assert_eq!(fs.stopwatch(), 0.0);
        assert_eq!(fs.delta(), 0.3);
        assert_eq!(fs.counter(), 0);
        assert_eq!(fs.history().len(), 1);
        assert!(!fs.history()[0].matured);
    }

    #[test]
    fn matured_click_moves_the_detuning_against_the_sine() {
        let cfg = two_level_cfg(0.5, 9e-4, 0.0);
        let mut fs = FeedbackState::new(0.5, &cfg).unwrap();
        fs.on_tick(0.1);
        let matured = fs.on_detected_click(0.1, FRAC_PI_2, &cfg);
        assert!(matured);
        assert!((fs.delta() - 0.4991).abs() < 1e-15);
        assert_eq!(fs.counter(), 1);
        let row = fs.history()[0];
        assert!(row.matured);
        assert_eq!(row.n, 1);
    }

    #[test]
    fn out_of_bound_candidates_go_to_plus_c_by_default() {
        let cfg = two_level_cfg(0.5, 9e-4, 0.0);
        // At the bound, a push outward keeps the detuning at +C.
        let mut fs = FeedbackState::new(0.5, &cfg).unwrap();
        fs.on_tick(0.1);
        fs.on_detected_click(0.1, -FRAC_PI_2, &cfg);
        assert_eq!(fs.delta(), 0.5);
        // The asymmetry: falling below -C also lands on +C.
        let mut fs = FeedbackState::new(-0.5, &cfg).unwrap();
        fs.on_tick(0.1);
        fs.on_detected_click(0.1, FRAC_PI_2, &cfg);
        assert_eq!(fs.delta(), 0.5);
    }

    #[test]
    fn symmetric_mode_clamps_to_the_nearest_bound() {
        let cfg = two_level_cfg(0.5, 9e-4, 0.0).with_clip_mode(ClipMode::Symmetric);
        let mut fs = FeedbackState::new(-0.5, &cfg).unwrap();
        fs.on_tick(0.1);
        fs.on_detected_click(0.1, FRAC_PI_2, &cfg);
        assert_eq!(fs.delta(), -0.5);
    }

    #[test]
    fn lambda_variant_demodulates_the_cosine() {
        let cfg = FeedbackConfig::new(
            0.5,
            0.015,
            0.0,
            20.0,
            FeedbackVariant::Lambda { sin_two_alpha: 0.8 },
        )
        .unwrap();
        let mut fs = FeedbackState::new(0.2, &cfg).unwrap();
        fs.on_tick(0.1);
        fs.on_detected_click(0.1, 0.0, &cfg); // cos = 1
        assert!((fs.delta() - (0.2 - 0.015 * 0.8)).abs() < 1e-15);
        fs.on_tick(0.1);
        fs.on_detected_click(0.2, PI, &cfg); // cos = -1
        assert!((fs.delta() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_never_moves_the_detuning() {
        let cfg = two_level_cfg(0.5, 0.0, 0.0);
        let mut fs = FeedbackState::new(0.37, &cfg).unwrap();
        for k in 0..100 {
            fs.on_tick(1.0);
            fs.on_detected_click(k as f64, (k as f64) * 0.7, &cfg);
        }
        assert_eq!(fs.delta(), 0.37);
        assert_eq!(fs.counter(), 100);
    }

    #[test]
    fn initial_detuning_must_respect_the_bound() {
        let cfg = two_level_cfg(0.5, 9e-4, 0.0);
        assert!(FeedbackState::new(0.5, &cfg).is_ok());
        assert!(FeedbackState::new(0.51, &cfg).is_err());
        assert!(FeedbackState::new(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn regime_warnings_fire_where_the_lock_is_unproven() {
        let good = two_level_cfg(0.5, 9e-4, 0.0);
        assert!(good.regime_warnings().is_empty());
        let slow = FeedbackConfig::new(0.5, 9e-4, 0.0, 0.5, FeedbackVariant::TwoLevel).unwrap();
        assert_eq!(slow.regime_warnings().len(), 1);
        let wide = FeedbackConfig::new(
            0.6,
            0.015,
            0.0,
            20.0,
            FeedbackVariant::Lambda { sin_two_alpha: 1.0 },
        )
        .unwrap();
        assert_eq!(wide.regime_warnings().len(), 1);
    }

    #[test]
    fn closed_loop_runs_to_the_exact_matured_count_and_replays() {
        let run = || {
            let params = TwoLevelParams::new(0.5, 0.06, 0.06, 1.0).unwrap();
            let pc = PropagatorConfig::new(4e-3, params.max_jump_rate()).unwrap();
            let mut plant = TwoLevelPlant::new(
                params,
                &pc,
                DetectionModel::uniform(0.9).unwrap(),
                BlochVector::new(0.0, 0.0, -1.0),
            )
            .unwrap();
            let cfg = two_level_cfg(0.5, 9e-4, 0.0);
            let mut rng = RngStream::new(314159);
            run_closed_loop(
                &mut plant,
                &cfg,
                0.5,
                &mut rng,
                StopCondition::MaturedClicks(50),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a.history.iter().filter(|r| r.matured).count(), 50);
        assert!(a.final_delta.abs() <= 0.5);
        assert!(a.events.iter().filter(|e| e.detected).count() >= 50);
        let b = run();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.delta.to_bits(), y.delta.to_bits());
            assert_eq!(x.t.to_bits(), y.t.to_bits());
        }
    }

    #[test]
    fn mismatched_modulation_frequency_is_rejected() {
        let params = TwoLevelParams::new(0.2, 0.06, 0.06, 2.0).unwrap();
        let pc = PropagatorConfig::new(4e-3, params.max_jump_rate()).unwrap();
        let mut plant = TwoLevelPlant::new(
            params,
            &pc,
            DetectionModel::uniform(0.9).unwrap(),
            BlochVector::new(0.0, 0.0, -1.0),
        )
        .unwrap();
        let cfg = two_level_cfg(0.5, 9e-4, 0.0); // omega = 1, plant has 2
        let mut rng = RngStream::new(1);
        assert!(
            run_closed_loop(&mut plant, &cfg, 0.2, &mut rng, StopCondition::Time(1.0)).is_err()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn detuning_never_leaves_the_prior_interval(
            delta0_frac in -1.0f64..1.0,
            phases in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 1..200),
            gain in 0.0f64..0.2,
            symmetric in proptest::bool::ANY,
        ) {
            let c = 0.5;
            let mut cfg = two_level_cfg(c, gain, 0.0);
            if symmetric {
                cfg = cfg.with_clip_mode(ClipMode::Symmetric);
            }
            let mut fs = FeedbackState::new(delta0_frac * c, &cfg).unwrap();
            for (k, phase) in phases.iter().enumerate() {
                fs.on_tick(0.5);
                fs.on_detected_click(k as f64, *phase, &cfg);
                prop_assert!(fs.delta().abs() <= c + 1e-15);
            }
        }

        #[test]
        fn unclipped_updates_move_at_most_the_gain(
            delta0 in -0.1f64..0.1,
            phase in 0.0f64..std::f64::consts::TAU,
        ) {
            let cfg = two_level_cfg(0.5, 9e-4, 0.0);
            let mut fs = FeedbackState::new(delta0, &cfg).unwrap();
            fs.on_tick(1.0);
            let before = fs.delta();
            fs.on_detected_click(1.0, phase, &cfg);
            // Far from the bound the clip branch cannot trigger.
            prop_assert!((fs.delta() - before).abs() <= 9e-4 + 1e-18);
        }
    }
}
