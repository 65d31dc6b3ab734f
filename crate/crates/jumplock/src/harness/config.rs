//! Run configuration: a flat, human-editable key/value format for presets,
//! the same structure serialized as JSON inside run manifests, and the
//! validation that turns a configuration into typed simulation inputs.

use crate::dynamics::{FullLambdaParams, PropagatorConfig, ReducedLambdaParams, TwoLevelParams};
use crate::feedback::{ClipMode, FeedbackConfig, FeedbackVariant, StopCondition};
use crate::jump::DetectionModel;
use crate::qstate::{BlochVector, BrightDarkBasis, DensityMatrix};
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Which plant a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "two-level")]
    TwoLevel,
    #[serde(rename = "lambda-reduced")]
    LambdaReduced,
    #[serde(rename = "lambda-full")]
    LambdaFull,
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::TwoLevel => "two-level",
            ModelKind::LambdaReduced => "lambda-reduced",
            ModelKind::LambdaFull => "lambda-full",
        }
    }

    fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "two-level" => Ok(ModelKind::TwoLevel),
            "lambda-reduced" => Ok(ModelKind::LambdaReduced),
            "lambda-full" => Ok(ModelKind::LambdaFull),
            other => Err(HarnessError::Config(format!(
                "unknown model '{other}' (expected two-level, lambda-reduced, or lambda-full)"
            ))),
        }
    }
}

/// Initial state of the ground doublet for the three-level models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Dark,
    Bright,
    Ground1,
    Ground2,
}

impl InitialState {
    fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "dark" => Ok(InitialState::Dark),
            "bright" => Ok(InitialState::Bright),
            "ground1" => Ok(InitialState::Ground1),
            "ground2" => Ok(InitialState::Ground2),
            other => Err(HarnessError::Config(format!(
                "unknown initial state '{other}' (expected dark, bright, ground1, or ground2)"
            ))),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_clip() -> ClipMode {
    ClipMode::Asymmetric
}

/// Everything one run needs, in the flat shape of the preset files.
///
/// Length/rate fields use the plant's own clock: decay units for the
/// two-level model, pumping units for both three-level models (the full
/// model's `rabi*`/`decay*` couplings are the exception; they are quoted in
/// their own reference units and the pumping-rate conversion is derived).
/// `clicks` counts matured detected clicks; exactly one of `clicks` and
/// `time` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    // Two-level drive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_bar: Option<f64>,
    // Reduced three-level model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    // Full three-level model (reference units).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<f64>,
    // Modulation (three-level models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub omega: f64,
    // Controller.
    pub delta0: f64,
    pub c_bound: f64,
    pub delta_gain: f64,
    #[serde(default)]
    pub dead_time: f64,
    #[serde(default = "default_clip")]
    pub clip_mode: ClipMode,
    // Detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    // Integration and orchestration.
    pub dt: f64,
    #[serde(default = "default_true")]
    pub renormalize: bool,
    pub ensemble: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clicks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialState>,
}

/// Typed inputs for one plant kind.
#[derive(Debug, Clone)]
pub enum PreparedModel {
    TwoLevel {
        params: TwoLevelParams,
        start: BlochVector,
    },
    Reduced {
        params: ReducedLambdaParams,
        start: DensityMatrix<2>,
    },
    Full {
        params: FullLambdaParams,
        start: DensityMatrix<3>,
    },
}

/// A validated run: typed parameters plus orchestration settings.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub model: PreparedModel,
    pub detection: DetectionModel,
    pub propagator: PropagatorConfig,
    pub feedback: FeedbackConfig,
    pub delta0: f64,
    pub stop: StopCondition,
    pub ensemble: u32,
    pub seed: u64,
}

impl RunConfig {
    /// Cross-checks the flat fields and builds the typed inputs.
    pub fn prepare(&self) -> Result<PreparedRun, HarnessError> {
        let bad = |msg: String| HarnessError::Config(msg);
        if self.ensemble == 0 {
            return Err(bad("ensemble must be at least 1".into()));
        }
        let stop = match (self.clicks, self.time) {
            (Some(n), None) => StopCondition::MaturedClicks(n),
            (None, Some(t)) if t > 0.0 => StopCondition::Time(t),
            (None, Some(t)) => return Err(bad(format!("time must be positive, got {t}"))),
            (Some(_), Some(_)) => return Err(bad("set either clicks or time, not both".into())),
            (None, None) => return Err(bad("one of clicks or time is required".into())),
        };

        let require = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| bad(format!("{name} is required for model {}", self.model.tag())))
        };
        let forbid = |name: &str, v: Option<f64>| {
            if v.is_some() {
                Err(bad(format!(
                    "{name} does not apply to model {}",
                    self.model.tag()
                )))
            } else {
                Ok(())
            }
        };

        let ground_start =
            |initial: Option<InitialState>, basis: &BrightDarkBasis| -> DensityMatrix<2> {
                match initial.unwrap_or(InitialState::Ground1) {
                    InitialState::Dark => {
                        DensityMatrix::pure(&basis.dark()).expect("dark state is normalized")
                    }
                    InitialState::Bright => {
                        DensityMatrix::pure(&basis.bright()).expect("bright state is normalized")
                    }
                    InitialState::Ground1 => DensityMatrix::basis_state(0),
                    InitialState::Ground2 => DensityMatrix::basis_state(1),
                }
            };

        let (model, detection, variant, omega_plant) = match self.model {
            ModelKind::TwoLevel => {
                let u_bar = require("u_bar", self.u_bar)?;
                let v_bar = require("v_bar", self.v_bar)?;
                for (name, v) in [
                    ("alpha", self.alpha),
                    ("gamma1", self.gamma1),
                    ("gamma2", self.gamma2),
                    ("rabi1", self.rabi1),
                    ("rabi2", self.rabi2),
                    ("decay1", self.decay1),
                    ("decay2", self.decay2),
                    ("delta_e", self.delta_e),
                    ("epsilon", self.epsilon),
                    ("eta1", self.eta1),
                    ("eta2", self.eta2),
                ] {
                    forbid(name, v)?;
                }
                if self.initial.is_some() {
                    return Err(bad(
                        "initial does not apply to the two-level model (it starts in the \
                         ground state)"
                            .into(),
                    ));
                }
                let eta = require("eta", self.eta)?;
                let params = TwoLevelParams::new(self.delta0, u_bar, v_bar, self.omega)?;
                (
                    PreparedModel::TwoLevel {
                        params,
                        start: BlochVector::new(0.0, 0.0, -1.0),
                    },
                    DetectionModel::uniform(eta)?,
                    FeedbackVariant::TwoLevel,
                    self.omega,
                )
            }
            ModelKind::LambdaReduced => {
                let alpha = require("alpha", self.alpha)?;
                let gamma1 = require("gamma1", self.gamma1)?;
                let gamma2 = require("gamma2", self.gamma2)?;
                let epsilon = require("epsilon", self.epsilon)?;
                for (name, v) in [
                    ("u_bar", self.u_bar),
                    ("v_bar", self.v_bar),
                    ("rabi1", self.rabi1),
                    ("rabi2", self.rabi2),
                    ("decay1", self.decay1),
                    ("decay2", self.decay2),
                    ("delta_e", self.delta_e),
                ] {
                    forbid(name, v)?;
                }
                let basis = BrightDarkBasis::from_alpha(alpha)
                    .map_err(|e| bad(format!("alpha invalid: {e}")))?;
                let params = ReducedLambdaParams::new(
                    self.delta0,
                    epsilon,
                    self.omega,
                    basis,
                    gamma1,
                    gamma2,
                )?;
                let detection = self.lambda_detection()?;
                let start = ground_start(self.initial, &basis);
                (
                    PreparedModel::Reduced { params, start },
                    detection,
                    FeedbackVariant::Lambda {
                        sin_two_alpha: basis.sin_two_alpha(),
                    },
                    self.omega,
                )
            }
            ModelKind::LambdaFull => {
                let rabi1 = require("rabi1", self.rabi1)?;
                let rabi2 = require("rabi2", self.rabi2)?;
                let decay1 = require("decay1", self.decay1)?;
                let decay2 = require("decay2", self.decay2)?;
                let epsilon = require("epsilon", self.epsilon)?;
                for (name, v) in [
                    ("u_bar", self.u_bar),
                    ("v_bar", self.v_bar),
                    ("alpha", self.alpha),
                    ("gamma1", self.gamma1),
                    ("gamma2", self.gamma2),
                ] {
                    forbid(name, v)?;
                }
                // omega, delta0, dt are quoted in pumping units; couplings in
                // reference units. Convert the modulation frequency and the
                // initial detuning through the derived pumping rate.
                let probe = FullLambdaParams::new(0.0, rabi1, rabi2, decay1, decay2, epsilon, 1.0)?;
                let pumping = probe.gamma();
                let params = FullLambdaParams::new(
                    self.delta0 * pumping,
                    rabi1,
                    rabi2,
                    decay1,
                    decay2,
                    epsilon,
                    self.omega * pumping,
                )?
                .with_excited_detuning(self.delta_e.unwrap_or(0.0))?;
                let detection = self.lambda_detection()?;
                let basis = params.bright_dark_basis();
                let ground = ground_start(self.initial, &basis);
                let g = ground.matrix();
                let mut m = crate::qstate::Matrix::<3>::zero();
                for i in 0..2 {
                    for j in 0..2 {
                        m[(i, j)] = g[(i, j)];
                    }
                }
                let start = DensityMatrix::from_matrix_unchecked(m);
                (
                    PreparedModel::Full { params, start },
                    detection,
                    FeedbackVariant::Lambda {
                        sin_two_alpha: basis.sin_two_alpha(),
                    },
                    self.omega,
                )
            }
        };

        let max_rate = match &model {
            PreparedModel::TwoLevel { params, .. } => params.max_jump_rate(),
            PreparedModel::Reduced { params, .. } => params.max_jump_rate(),
            PreparedModel::Full { params, .. } => params.max_jump_rate_gamma_units(),
        };
        let mut propagator = PropagatorConfig::new(self.dt, max_rate)?;
        if !self.renormalize {
            propagator = propagator.without_renormalization();
        }
        let feedback = FeedbackConfig::new(
            self.c_bound,
            self.delta_gain,
            self.dead_time,
            omega_plant,
            variant,
        )?
        .with_clip_mode(self.clip_mode);

        Ok(PreparedRun {
            model,
            detection,
            propagator,
            feedback,
            delta0: self.delta0,
            stop,
            ensemble: self.ensemble,
            seed: self.seed,
        })
    }

    fn lambda_detection(&self) -> Result<DetectionModel, HarnessError> {
        match (self.eta, self.eta1, self.eta2) {
            (Some(eta), None, None) => Ok(DetectionModel::uniform(eta)?),
            (None, Some(e1), Some(e2)) => Ok(DetectionModel::per_channel(e1, e2)?),
            (None, None, None) => Err(HarnessError::Config(
                "detection requires eta, or eta1 and eta2".into(),
            )),
            _ => Err(HarnessError::Config(
                "set either eta alone or both eta1 and eta2".into(),
            )),
        }
    }
}

/// Parses the flat `key = value` preset format: one pair per line, `#`
/// starts a comment, blank lines ignored.
pub fn parse_preset(text: &str) -> Result<RunConfig, HarnessError> {
    let mut model = None;
    let mut f64s: std::collections::HashMap<&'static str, f64> = Default::default();
    let mut ensemble = None;
    let mut seed = None;
    let mut clicks = None;
    let mut renormalize = None;
    let mut clip_mode = None;
    let mut initial = None;

    const F64_KEYS: [&str; 21] = [
        "u_bar",
        "v_bar",
        "alpha",
        "gamma1",
        "gamma2",
        "rabi1",
        "rabi2",
        "decay1",
        "decay2",
        "delta_e",
        "epsilon",
        "omega",
        "delta0",
        "c_bound",
        "delta_gain",
        "dead_time",
        "eta",
        "eta1",
        "eta2",
        "dt",
        "time",
    ];

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            HarnessError::Parse(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = || -> Result<f64, HarnessError> {
            value.parse::<f64>().map_err(|_| {
                HarnessError::Parse(format!(
                    "line {}: {key} wants a number, got '{value}'",
                    lineno + 1
                ))
            })
        };
        match key {
            "model" => model = Some(ModelKind::parse(value)?),
            "ensemble" => {
                ensemble = Some(value.parse::<u32>().map_err(|_| {
                    HarnessError::Parse(format!("line {}: ensemble wants an integer", lineno + 1))
                })?)
            }
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    HarnessError::Parse(format!("line {}: seed wants an integer", lineno + 1))
                })?)
            }
            "clicks" => {
                clicks = Some(value.parse::<u64>().map_err(|_| {
                    HarnessError::Parse(format!("line {}: clicks wants an integer", lineno + 1))
                })?)
            }
            "renormalize" => {
                renormalize = Some(value.parse::<bool>().map_err(|_| {
                    HarnessError::Parse(format!(
                        "line {}: renormalize wants true/false",
                        lineno + 1
                    ))
                })?)
            }
            "clip_mode" => {
                clip_mode = Some(match value {
                    "one-sided" | "asymmetric" => ClipMode::Asymmetric,
                    "symmetric" => ClipMode::Symmetric,
                    other => {
                        return Err(HarnessError::Parse(format!(
                            "line {}: unknown clip_mode '{other}'",
                            lineno + 1
                        )))
                    }
                })
            }
            "initial" => initial = Some(InitialState::parse(value)?),
            k if F64_KEYS.contains(&k) => {
                let v = parse_f64()?;
                let slot = F64_KEYS.iter().find(|s| **s == k).unwrap();
                f64s.insert(slot, v);
            }
            other => {
                return Err(HarnessError::Parse(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }

    let model = model.ok_or_else(|| HarnessError::Parse("missing key 'model'".into()))?;
    let need = |k: &str| -> Result<f64, HarnessError> {
        f64s.get(k)
            .copied()
            .ok_or_else(|| HarnessError::Parse(format!("missing key '{k}'")))
    };
    Ok(RunConfig {
        model,
        u_bar: f64s.get("u_bar").copied(),
        v_bar: f64s.get("v_bar").copied(),
        alpha: f64s.get("alpha").copied(),
        gamma1: f64s.get("gamma1").copied(),
        gamma2: f64s.get("gamma2").copied(),
        rabi1: f64s.get("rabi1").copied(),
        rabi2: f64s.get("rabi2").copied(),
        decay1: f64s.get("decay1").copied(),
        decay2: f64s.get("decay2").copied(),
        delta_e: f64s.get("delta_e").copied(),
        epsilon: f64s.get("epsilon").copied(),
        omega: need("omega")?,
        delta0: need("delta0")?,
        c_bound: need("c_bound")?,
        delta_gain: need("delta_gain")?,
        dead_time: f64s.get("dead_time").copied().unwrap_or(0.0),
        clip_mode: clip_mode.unwrap_or(ClipMode::Asymmetric),
        eta: f64s.get("eta").copied(),
        eta1: f64s.get("eta1").copied(),
        eta2: f64s.get("eta2").copied(),
        dt: need("dt")?,
        renormalize: renormalize.unwrap_or(true),
        ensemble: ensemble.ok_or_else(|| HarnessError::Parse("missing key 'ensemble'".into()))?,
        seed: seed.ok_or_else(|| HarnessError::Parse("missing key 'seed'".into()))?,
        clicks,
        time: f64s.get("time").copied(),
        initial,
    })
}

/// Preset text shipped with the binary, by short name.
pub fn builtin_preset(name: &str) -> Option<&'static str> {
    match name {
        "two-level-lock" | "two-level-lock.preset" => {
            Some(include_str!("../../../../presets/two-level-lock.preset"))
        }
        "three-level-lock" | "three-level-lock.preset" => {
            Some(include_str!("../../../../presets/three-level-lock.preset"))
        }
        _ => None,
    }
}
