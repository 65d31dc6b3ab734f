//! Click sampling on top of the deterministic flows: counter-based random
//! streams, detector efficiency, and the three stochastic plants.
//!
//! Each plant advances on a fixed grid `t = k * dt` in its own clock (the
//! two-level model counts decay times, both three-level models count
//! pumping times). A step draws exactly one uniform number to decide
//! between "no click" and "click on channel j", using the emission rates
//! evaluated at the step start; a click draws exactly one further uniform
//! for the detector. This fixed draw discipline is what makes a trajectory
//! a pure function of `(seed, configuration)`, so replay is bit-exact.
//!
//! On a click the state resets to the ground state the chosen channel
//! feeds, the event is stamped with the grid time `t + dt` and the
//! modulation phase there, and the detected flag records whether the
//! detector fired. Undetected clicks still reset the plant; only the
//! controller ignores them.

use crate::dynamics::{
    modulated_bright_projector, rk4_full_at, rk4_reduced_at, rk4_two_level_at, two_level_jump_rate,
    DynamicsError, FullLambdaParams, PropagatorConfig, ReducedLambdaParams, TwoLevelParams,
};
use crate::qstate::{BlochVector, DensityMatrix};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Counter-based uniform generator (the SplitMix64 output function applied
/// to `seed + counter * golden`).
///
/// Being a pure function of `(seed, counter)` it has no hidden state to
/// desynchronize: the n-th draw of a stream is always the same number.
/// Child streams for ensemble members come from [`substream`](Self::substream).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent child stream keyed by `index`; the mixing finalizer
    /// decorrelates children from each other and from the parent.
    pub fn substream(&self, index: u64) -> Self {
        let tag = mix64(index.wrapping_mul(GOLDEN).wrapping_add(0x243F6A8885A308D3));
        Self::new(mix64(self.seed ^ tag))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws made so far.
    pub fn draws(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }
}

/// Detector efficiencies per emission channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    eta: [f64; 2],
}

impl DetectionModel {
    fn validate(eta: f64) -> Result<f64, DynamicsError> {
        if eta > 0.0 && eta <= 1.0 {
            Ok(eta)
        } else {
            Err(DynamicsError::InvalidParameter(format!(
                "detection efficiency must lie in (0, 1], got {eta}"
            )))
        }
    }

    /// Same efficiency on every channel.
    pub fn uniform(eta: f64) -> Result<Self, DynamicsError> {
        let eta = Self::validate(eta)?;
        Ok(Self { eta: [eta, eta] })
    }

    /// Separate efficiencies for the two emission channels of the
    /// three-level models.
    pub fn per_channel(eta1: f64, eta2: f64) -> Result<Self, DynamicsError> {
        Ok(Self {
            eta: [Self::validate(eta1)?, Self::validate(eta2)?],
        })
    }

    pub fn eta(&self, channel: usize) -> f64 {
        self.eta[channel]
    }
}

/// One emission: when it happened (plant clock), which channel, whether the
/// detector fired, and the modulation phase at that instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    pub channel: u8,
    pub detected: bool,
    pub phase: f64,
}

/// Incrementally rotated `(cos, sin)` of the modulation phase, sampled on
/// half-step ticks so one phasor serves all three integrator stages.
///
/// Rotation round-off accumulates at most a few ulps per tick; a periodic
/// resync from the exact grid time keeps the phase error below 1e-12
/// radians indefinitely.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Phasor {
    omega: f64,
    half_dt: f64,
    rot_cos: f64,
    rot_sin: f64,
    cos: f64,
    sin: f64,
    half_ticks: u64,
}

const PHASOR_RESYNC_MASK: u64 = 8191; // resync every 4096 full steps

impl Phasor {
    pub(crate) fn new(omega: f64, dt: f64) -> Self {
        let half_dt = 0.5 * dt;
        let (rot_sin, rot_cos) = (omega * half_dt).sin_cos();
        Self {
            omega,
            half_dt,
            rot_cos,
            rot_sin,
            cos: 1.0,
            sin: 0.0,
            half_ticks: 0,
        }
    }

    #[inline]
    pub(crate) fn cos(&self) -> f64 {
        self.cos
    }

    #[inline]
    pub(crate) fn advance_half(&mut self) {
        let c = self.cos * self.rot_cos - self.sin * self.rot_sin;
        let s = self.sin * self.rot_cos + self.cos * self.rot_sin;
        self.cos = c;
        self.sin = s;
        self.half_ticks += 1;
        if self.half_ticks & PHASOR_RESYNC_MASK == 0 {
            let t = self.half_ticks as f64 * self.half_dt;
            let (s, c) = (self.omega * t).sin_cos();
            self.sin = s;
            self.cos = c;
        }
    }

    #[inline]
    pub(crate) fn advance_full_step(&mut self) {
        self.advance_half();
        self.advance_half();
    }
}

/// Common face of the three stochastic plants.
///
/// All times, rates, and detunings are in the plant's own clock: decay
/// units for the two-level model, pumping units for both three-level
/// models (the full model converts its reference-unit couplings
/// internally).
pub trait Plant {
    /// Integration step, plant clock.
    fn dt(&self) -> f64;

    /// Current time `k * dt`, plant clock.
    fn time(&self) -> f64;

    /// Modulation frequency, plant clock.
    fn modulation_omega(&self) -> f64;

    /// Detuning currently applied, plant clock.
    fn detuning(&self) -> f64;

    /// Applies a controller correction; takes effect from the next step.
    fn set_detuning(&mut self, delta: f64);

    /// Advances one step. Returns the emission event if the step ended in
    /// a click (the state has then been reset).
    fn step(&mut self, rng: &mut RngStream) -> Option<JumpEvent>;
}

/// Clamps a per-step click probability and flags steps that are too coarse
/// to resolve the rate. Construction-time checks keep operating-envelope
/// rates far below this; the clamp only matters for pathological states.
#[inline]
fn click_probability(rate: f64, dt: f64) -> f64 {
    let p = rate * dt;
    debug_assert!(p < 0.5, "step dt = {dt} does not resolve click rate {rate}");
    p.clamp(0.0, 1.0)
}

/// Probability that the two-level atom clicks within `dt`: the excited
/// population `(1 + Z)/2` times the step, clamped to `[0, 1]`.
pub fn jump_probability_two_level(r: &BlochVector, dt: f64) -> f64 {
    click_probability(two_level_jump_rate(r), dt)
}

/// Click probabilities of the reduced model within `dt`:
/// `(p_total, p_channel1, p_channel2)` with
/// `p_j = gamma_j * tr(P(t) rho) * dt` through the dressed bright
/// projector `P(t)`.
pub fn jump_probability_reduced_lambda(
    rho: &DensityMatrix<2>,
    params: &ReducedLambdaParams,
    t: f64,
    dt: f64,
) -> (f64, f64, f64) {
    let eps_cos = params.epsilon() * (params.omega() * t).cos();
    let rate = modulated_bright_projector(params.basis(), eps_cos)
        .trace_product(rho.matrix())
        .re
        .max(0.0);
    let p_total = click_probability(rate, dt);
    let p1 = p_total * params.gamma1();
    (p_total, p1, p_total - p1)
}

/// Click probabilities of the full model within `dt` (reference units):
/// `p_j = decay_j * rho_ee * dt`.
pub fn jump_probability_full_lambda(
    rho: &DensityMatrix<3>,
    params: &FullLambdaParams,
    dt: f64,
) -> (f64, f64, f64) {
    let excited = rho.matrix()[(2, 2)].re.max(0.0);
    let p_total = click_probability(params.decay_total() * excited, dt);
    let p1 = p_total * (params.decay1() / params.decay_total());
    (p_total, p1, p_total - p1)
}

fn check_step(dt: f64, max_rate: f64) -> Result<(), DynamicsError> {
    if dt * max_rate >= 0.1 {
        return Err(DynamicsError::StepTooLarge { dt, max_rate });
    }
    Ok(())
}

/// Driven two-level atom with click resets to the ground state.
#[derive(Debug, Clone)]
pub struct TwoLevelPlant {
    params: TwoLevelParams,
    detection: DetectionModel,
    r: BlochVector,
    dt: f64,
    renormalize: bool,
    step_index: u64,
    phasor: Phasor,
}

impl TwoLevelPlant {
    pub fn new(
        params: TwoLevelParams,
        cfg: &PropagatorConfig,
        detection: DetectionModel,
        r0: BlochVector,
    ) -> Result<Self, DynamicsError> {
        check_step(cfg.dt(), params.max_jump_rate())?;
        Ok(Self {
            params,
            detection,
            r: r0,
            dt: cfg.dt(),
            renormalize: cfg.renormalize(),
            step_index: 0,
            phasor: Phasor::new(params.omega(), cfg.dt()),
        })
    }

    pub fn bloch(&self) -> BlochVector {
        self.r
    }

    pub fn params(&self) -> &TwoLevelParams {
        &self.params
    }
}

impl Plant for TwoLevelPlant {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    fn modulation_omega(&self) -> f64 {
        self.params.omega()
    }

    fn detuning(&self) -> f64 {
        self.params.delta()
    }

    fn set_detuning(&mut self, delta: f64) {
        self.params.set_detuning(delta);
    }

    fn step(&mut self, rng: &mut RngStream) -> Option<JumpEvent> {
        let p = click_probability(two_level_jump_rate(&self.r), self.dt);
        let u = rng.next_f64();
        self.step_index += 1;
        if u < p {
            self.phasor.advance_full_step();
            self.r = BlochVector::new(0.0, 0.0, -1.0);
            let t = self.step_index as f64 * self.dt;
            let phase = (self.params.omega() * t).rem_euclid(TAU);
            let detected = rng.next_f64() < self.detection.eta(0);
            Some(JumpEvent {
                t,
                channel: 0,
                detected,
                phase,
            })
        } else {
            let v = self.params.v_bar();
            let c0 = v * self.phasor.cos();
            self.phasor.advance_half();
            let c_half = v * self.phasor.cos();
            self.phasor.advance_half();
            let c1 = v * self.phasor.cos();
            self.r = rk4_two_level_at(
                &self.r,
                self.params.delta(),
                self.params.u_bar(),
                self.dt,
                c0,
                c_half,
                c1,
            );
            if self.renormalize && self.r.norm_sqr() > 1.0 {
                self.r = self.r.normalized();
            }
            None
        }
    }
}

/// Reduced three-level plant: pumping out of the dressed bright state with
/// branching resets onto the two ground states.
#[derive(Debug, Clone)]
pub struct ReducedLambdaPlant {
    params: ReducedLambdaParams,
    detection: DetectionModel,
    state: DensityMatrix<2>,
    dt: f64,
    renormalize: bool,
    step_index: u64,
    phasor: Phasor,
}

impl ReducedLambdaPlant {
    pub fn new(
        params: ReducedLambdaParams,
        cfg: &PropagatorConfig,
        detection: DetectionModel,
        rho0: DensityMatrix<2>,
    ) -> Result<Self, DynamicsError> {
        check_step(cfg.dt(), params.max_jump_rate())?;
        Ok(Self {
            params,
            detection,
            state: rho0,
            dt: cfg.dt(),
            renormalize: cfg.renormalize(),
            step_index: 0,
            phasor: Phasor::new(params.omega(), cfg.dt()),
        })
    }

    pub fn state(&self) -> &DensityMatrix<2> {
        &self.state
    }

    pub fn params(&self) -> &ReducedLambdaParams {
        &self.params
    }
}

impl Plant for ReducedLambdaPlant {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    fn modulation_omega(&self) -> f64 {
        self.params.omega()
    }

    fn detuning(&self) -> f64 {
        self.params.delta()
    }

    fn set_detuning(&mut self, delta: f64) {
        self.params.set_detuning(delta);
    }

    fn step(&mut self, rng: &mut RngStream) -> Option<JumpEvent> {
        let eps_cos = self.params.epsilon() * self.phasor.cos();
        let rate = modulated_bright_projector(self.params.basis(), eps_cos)
            .trace_product(self.state.matrix())
            .re;
        let p_total = click_probability(rate.max(0.0), self.dt);
        let p_first = p_total * self.params.gamma1();
        let u = rng.next_f64();
        self.step_index += 1;
        if u < p_total {
            self.phasor.advance_full_step();
            let channel: u8 = if u < p_first { 0 } else { 1 };
            self.state = DensityMatrix::basis_state(channel as usize);
            let t = self.step_index as f64 * self.dt;
            let phase = (self.params.omega() * t).rem_euclid(TAU);
            let detected = rng.next_f64() < self.detection.eta(channel as usize);
            Some(JumpEvent {
                t,
                channel,
                detected,
                phase,
            })
        } else {
            let c0 = eps_cos;
            self.phasor.advance_half();
            let c_half = self.params.epsilon() * self.phasor.cos();
            self.phasor.advance_half();
            let c1 = self.params.epsilon() * self.phasor.cos();
            let next = rk4_reduced_at(
                self.state.matrix(),
                self.params.delta(),
                self.params.basis(),
                self.dt,
                c0,
                c_half,
                c1,
            );
            self.state = DensityMatrix::from_matrix_unchecked(next);
            if self.renormalize {
                self.state.renormalize();
            }
            None
        }
    }
}

/// Full three-level plant.
///
/// Public parameters are in the reference units of the decay rates; the
/// plant integrates and reports in pumping units (the slow clock), with
/// every coupling divided by the derived total pumping rate at
/// construction. The flow is invariant under that joint rescaling of rates
/// and time, so trajectories agree with reference-unit integration at the
/// corresponding times.
#[derive(Debug, Clone)]
pub struct FullLambdaPlant {
    params: FullLambdaParams,
    detection: DetectionModel,
    state: DensityMatrix<3>,
    dt: f64,
    renormalize: bool,
    step_index: u64,
    phasor: Phasor,
    // Couplings divided by the pumping rate, fixed at construction.
    delta_scaled: f64,
    delta_e_scaled: f64,
    rabi1_scaled: f64,
    rabi2_scaled: f64,
    decay1_scaled: f64,
    decay_total_scaled: f64,
    omega_scaled: f64,
    pumping_rate: f64,
}

impl FullLambdaPlant {
    /// `params` in reference units; `cfg` and `rho0` with `dt` in pumping
    /// units. The detuning reported and set through [`Plant`] is also in
    /// pumping units.
    pub fn new(
        params: FullLambdaParams,
        cfg: &PropagatorConfig,
        detection: DetectionModel,
        rho0: DensityMatrix<3>,
    ) -> Result<Self, DynamicsError> {
        check_step(cfg.dt(), params.max_jump_rate_gamma_units())?;
        let gamma = params.gamma();
        Ok(Self {
            params,
            detection,
            state: rho0,
            dt: cfg.dt(),
            renormalize: cfg.renormalize(),
            step_index: 0,
            phasor: Phasor::new(params.omega() / gamma, cfg.dt()),
            delta_scaled: params.delta() / gamma,
            delta_e_scaled: params.delta_e() / gamma,
            rabi1_scaled: params.rabi1() / gamma,
            rabi2_scaled: params.rabi2() / gamma,
            decay1_scaled: params.decay1() / gamma,
            decay_total_scaled: params.decay_total() / gamma,
            omega_scaled: params.omega() / gamma,
            pumping_rate: gamma,
        })
    }

    pub fn state(&self) -> &DensityMatrix<3> {
        &self.state
    }

    pub fn params(&self) -> &FullLambdaParams {
        &self.params
    }

    /// The derived total pumping rate used as the clock conversion.
    pub fn pumping_rate(&self) -> f64 {
        self.pumping_rate
    }
}

impl Plant for FullLambdaPlant {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    fn modulation_omega(&self) -> f64 {
        self.omega_scaled
    }

    fn detuning(&self) -> f64 {
        self.delta_scaled
    }

    fn set_detuning(&mut self, delta: f64) {
        self.delta_scaled = delta;
        self.params.set_detuning(delta * self.pumping_rate);
    }

    fn step(&mut self, rng: &mut RngStream) -> Option<JumpEvent> {
        let excited = self.state.matrix()[(2, 2)].re.max(0.0);
        let p_total = click_probability(self.decay_total_scaled * excited, self.dt);
        let p_first = p_total * (self.decay1_scaled / self.decay_total_scaled);
        let u = rng.next_f64();
        self.step_index += 1;
        if u < p_total {
            self.phasor.advance_full_step();
            let channel: u8 = if u < p_first { 0 } else { 1 };
            self.state = DensityMatrix::basis_state(channel as usize);
            let t = self.step_index as f64 * self.dt;
            let phase = (self.omega_scaled * t).rem_euclid(TAU);
            let detected = rng.next_f64() < self.detection.eta(channel as usize);
            Some(JumpEvent {
                t,
                channel,
                detected,
                phase,
            })
        } else {
            let eps = self.params.epsilon();
            let c0 = eps * self.phasor.cos();
            self.phasor.advance_half();
            let c_half = eps * self.phasor.cos();
            self.phasor.advance_half();
            let c1 = eps * self.phasor.cos();
            let next = rk4_full_at(
                self.state.matrix(),
                self.delta_scaled,
                self.delta_e_scaled,
                self.rabi1_scaled,
                self.rabi2_scaled,
                self.decay_total_scaled,
                self.dt,
                c0,
                c_half,
                c1,
            );
            self.state = DensityMatrix::from_matrix_unchecked(next);
            if self.renormalize {
                self.state.renormalize();
            }
            None
        }
    }
}

/// Emission rate of the full plant in pumping units; exposed for rate
/// diagnostics.
pub fn full_plant_click_rate(plant: &FullLambdaPlant) -> f64 {
    plant.decay_total_scaled * plant.state.matrix()[(2, 2)].re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{BrightDarkBasis, C64};

    #[test]
    fn stream_is_deterministic_and_substreams_differ() {
        let mut a = RngStream::new(0xDEADBEEF);
        let mut b = RngStream::new(0xDEADBEEF);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut child0 = RngStream::new(0xDEADBEEF).substream(0);
        let mut child1 = RngStream::new(0xDEADBEEF).substream(1);
        let mut parent = RngStream::new(0xDEADBEEF);
        let (c0, c1, p) = (child0.next_u64(), child1.next_u64(), parent.next_u64());
        assert_ne!(c0, c1);
        assert_ne!(c0, p);
        assert_ne!(c1, p);
    }

    #[test]
    fn stream_matches_reference_outputs_for_seed_zero() {
        // First outputs of the standard generator seeded with 0.
        let mut s = RngStream::new(0);
        assert_eq!(s.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(s.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(s.next_u64(), 0x06C45D188009454F);
    }

    #[test]
    fn uniforms_lie_in_the_unit_interval() {
        let mut s = RngStream::new(42);
        let mut lo = 1.0f64;
        let mut hi = 0.0f64;
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
            lo = lo.min(u);
            hi = hi.max(u);
        }
        assert!(lo < 0.01);
        assert!(hi > 0.99);
    }

    #[test]
    fn detection_model_requires_efficiencies_in_half_open_unit_interval() {
        assert!(DetectionModel::uniform(0.9).is_ok());
        assert!(DetectionModel::uniform(1.0).is_ok());
        assert!(DetectionModel::uniform(0.0).is_err());
        assert!(DetectionModel::uniform(-0.1).is_err());
        assert!(DetectionModel::per_channel(0.5, 1.1).is_err());
    }

    #[test]
    fn two_level_click_probability_examples() {
        let dt = 1e-3;
        assert_eq!(
            jump_probability_two_level(&BlochVector::new(0.0, 0.0, -1.0), dt),
            0.0
        );
        assert!(
            (jump_probability_two_level(&BlochVector::new(0.0, 0.0, 1.0), dt) - dt).abs() < 1e-18
        );
        assert!(
            (jump_probability_two_level(&BlochVector::new(0.3, 0.1, 0.0), dt) - 5e-4).abs() < 1e-18
        );
    }

    #[test]
    fn reduced_click_probability_examples() {
        let basis = BrightDarkBasis::from_alpha(0.6).unwrap();
        let dt = 1e-3;

        let quiet = ReducedLambdaParams::new(0.2, 0.0, 20.0, basis, 0.5, 0.5).unwrap();
        let dark = DensityMatrix::pure(&basis.dark()).unwrap();
        let (p, p1, p2) = jump_probability_reduced_lambda(&dark, &quiet, 0.37, dt);
        assert!(p < 1e-18 && p1 < 1e-18 && p2 < 1e-18);

        let bright = DensityMatrix::pure(&basis.bright()).unwrap();
        let (p, p1, p2) = jump_probability_reduced_lambda(&bright, &quiet, 0.37, dt);
        assert!((p - dt).abs() < 1e-15);
        assert!((p1 - 0.5 * dt).abs() < 1e-15);
        assert!((p2 - 0.5 * dt).abs() < 1e-15);

        // Modulated dark state at a crest: total probability epsilon^2 dt.
        let eps = 0.05;
        let modulated = ReducedLambdaParams::new(0.2, eps, 20.0, basis, 0.5, 0.5).unwrap();
        let (p, _, _) = jump_probability_reduced_lambda(&dark, &modulated, 0.0, dt);
        assert!((p - eps * eps * dt).abs() < 1e-15);
    }

    #[test]
    fn full_click_probability_examples() {
        let params = FullLambdaParams::new(0.0, 1.0, 1.0, 3.0, 3.0, 0.0, 5.0).unwrap();
        let dt = 1e-4;
        let ground = DensityMatrix::<3>::basis_state(0);
        let (p, p1, p2) = jump_probability_full_lambda(&ground, &params, dt);
        assert!(p == 0.0 && p1 == 0.0 && p2 == 0.0);

        let excited = DensityMatrix::<3>::basis_state(2);
        let (p, p1, p2) = jump_probability_full_lambda(&excited, &params, dt);
        assert!((p - 6e-4).abs() < 1e-18);
        assert!((p1 - 3e-4).abs() < 1e-18);
        assert!((p2 - 3e-4).abs() < 1e-18);

        // Channel split always follows the decay-rate ratio.
        let lopsided = FullLambdaParams::new(0.0, 1.0, 1.0, 10.0, 5.0, 0.0, 5.0).unwrap();
        let mut m = crate::qstate::Matrix::<3>::zero();
        m[(0, 0)] = C64::new(0.7, 0.0);
        m[(2, 2)] = C64::new(0.3, 0.0);
        let rho = DensityMatrix::from_matrix_unchecked(m);
        let (_, p1, p2) = jump_probability_full_lambda(&rho, &lopsided, dt);
        assert!((p1 / p2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn phasor_tracks_the_exact_cosine() {
        let omega = 1.3;
        let dt = 4e-3;
        let mut ph = Phasor::new(omega, dt);
        for tick in 1..=100_000u64 {
            ph.advance_half();
            if tick % 997 == 0 {
                let t = tick as f64 * 0.5 * dt;
                assert!(
                    (ph.cos() - (omega * t).cos()).abs() < 1e-10,
                    "tick {tick}: phasor drifted"
                );
            }
        }
    }

    fn quiet_two_level() -> TwoLevelPlant {
        let params = TwoLevelParams::new(0.2, 0.0, 0.0, 1.0).unwrap();
        let cfg = PropagatorConfig::new(4e-3, params.max_jump_rate()).unwrap();
        TwoLevelPlant::new(
            params,
            &cfg,
            DetectionModel::uniform(1.0).unwrap(),
            BlochVector::new(0.0, 0.0, -1.0),
        )
        .unwrap()
    }

    #[test]
    fn ground_state_without_drive_never_clicks() {
        let mut plant = quiet_two_level();
        let mut rng = RngStream::new(7);
        for _ in 0..1000 {
            assert!(plant.step(&mut rng).is_none());
        }
        assert_eq!(rng.draws(), 1000);
        assert!(plant.bloch().distance(&BlochVector::new(0.0, 0.0, -1.0)) < 1e-15);
        assert!((plant.time() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn click_resets_to_ground_and_stamps_grid_time_and_phase() {
        // Start near the north pole so the click rate is close to 1.
        let params = TwoLevelParams::new(0.0, 0.05, 0.0, 2.0).unwrap();
        let cfg = PropagatorConfig::new(2e-2, params.max_jump_rate()).unwrap();
        let mut plant = TwoLevelPlant::new(
            params,
            &cfg,
            DetectionModel::uniform(1.0).unwrap(),
            BlochVector::new(0.0, 0.0, 0.9999),
        )
        .unwrap();
        let mut rng = RngStream::new(11);
        let mut clicked = false;
        for _ in 0..500 {
            let before = rng.draws();
            if let Some(ev) = plant.step(&mut rng) {
                assert_eq!(rng.draws(), before + 2);
                assert!(ev.detected, "efficiency 1 must detect");
                assert_eq!(ev.channel, 0);
                assert!((ev.t - plant.time()).abs() < 1e-15);
                let expect_phase = (2.0 * ev.t).rem_euclid(TAU);
                assert!((ev.phase - expect_phase).abs() < 1e-12);
                assert!(plant.bloch().distance(&BlochVector::new(0.0, 0.0, -1.0)) < 1e-15);
                clicked = true;
                break;
            }
            assert_eq!(rng.draws(), before + 1);
        }
        assert!(clicked, "no click in 500 steps at rate near 1");
    }

    fn reduced_plant(delta: f64, epsilon: f64, gamma1: f64) -> ReducedLambdaPlant {
        let basis = BrightDarkBasis::from_alpha(std::f64::consts::FRAC_PI_4).unwrap();
        let params =
            ReducedLambdaParams::new(delta, epsilon, 20.0, basis, gamma1, 1.0 - gamma1).unwrap();
        let cfg = PropagatorConfig::new(4e-3, params.max_jump_rate()).unwrap();
        ReducedLambdaPlant::new(
            params,
            &cfg,
            DetectionModel::uniform(1.0).unwrap(),
            DensityMatrix::basis_state(0),
        )
        .unwrap()
    }

    #[test]
    fn reduced_clicks_branch_roughly_as_configured() {
        let mut plant = reduced_plant(0.3, 0.0, 2.0 / 3.0);
        let mut rng = RngStream::new(99);
        let mut counts = [0u64, 0];
        while counts[0] + counts[1] < 2000 {
            if let Some(ev) = plant.step(&mut rng) {
                counts[ev.channel as usize] += 1;
                // Reset lands on the chosen ground state.
                assert!((plant.state().population(ev.channel as usize) - 1.0).abs() < 1e-12);
            }
        }
        let frac = counts[0] as f64 / (counts[0] + counts[1]) as f64;
        assert!(
            (frac - 2.0 / 3.0).abs() < 0.05,
            "channel-0 fraction {frac} far from 2/3"
        );
    }

    #[test]
    fn reduced_trajectory_replays_bit_for_bit() {
        let run = || {
            let mut plant = reduced_plant(0.25, 0.03, 0.5);
            let mut rng = RngStream::new(4242);
            let mut events = Vec::new();
            for _ in 0..200_000 {
                if let Some(ev) = plant.step(&mut rng) {
                    events.push(ev);
                }
            }
            events
        };
        let a = run();
        let b = run();
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.t.to_bits(), y.t.to_bits());
            assert_eq!(x.phase.to_bits(), y.phase.to_bits());
            assert_eq!(x.channel, y.channel);
            assert_eq!(x.detected, y.detected);
        }
    }

    #[test]
    fn full_plant_reports_pumping_clock_quantities() {
        // Reference-unit inputs; everything observable comes out in
        // pumping units.
        let params = FullLambdaParams::new(
            0.5 * 4.0 / 15.0,
            1.0,
            1.0,
            15.0,
            15.0,
            0.03,
            20.0 * 4.0 / 15.0,
        )
        .unwrap();
        let cfg = PropagatorConfig::new(5e-3, params.max_jump_rate_gamma_units()).unwrap();
        let dark = {
            let basis = params.bright_dark_basis();
            let d = basis.dark();
            DensityMatrix::pure(&[d[0], d[1], C64::new(0.0, 0.0)]).unwrap()
        };
        let plant = FullLambdaPlant::new(
            params,
            &cfg,
            DetectionModel::per_channel(0.9, 1.0).unwrap(),
            dark,
        )
        .unwrap();
        assert!((plant.pumping_rate() - 4.0 / 15.0).abs() < 1e-15);
        assert!((plant.modulation_omega() - 20.0).abs() < 1e-12);
        assert!((plant.detuning() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn full_plant_clicks_and_resets_on_a_ground_state() {
        // Nonzero Raman detuning keeps rotating the dark state back into
        // the bright one, so clicks never die out.
        let params = FullLambdaParams::new(1.0, 1.0, 1.0, 3.0, 3.0, 0.0, 5.0).unwrap();
        let cfg = PropagatorConfig::new(5e-3, params.max_jump_rate_gamma_units()).unwrap();
        let mut plant = FullLambdaPlant::new(
            params,
            &cfg,
            DetectionModel::per_channel(1.0, 1.0).unwrap(),
            DensityMatrix::basis_state(0),
        )
        .unwrap();
        let mut rng = RngStream::new(5);
        let mut clicks = 0;
        for _ in 0..40_000 {
            if let Some(ev) = plant.step(&mut rng) {
                clicks += 1;
                assert!(ev.phase >= 0.0 && ev.phase < TAU);
                let pop = plant.state().population(ev.channel as usize);
                assert!((pop - 1.0).abs() < 1e-12);
            }
        }
        // 200 pumping times at a settled rate near 1 per pumping time.
        assert!(clicks > 50, "only {clicks} clicks in 200 pumping times");
    }

    #[test]
    fn detuning_updates_take_effect_in_pumping_units() {
        let params = FullLambdaParams::new(0.1, 1.0, 1.0, 15.0, 15.0, 0.03, 6.0).unwrap();
        let cfg = PropagatorConfig::new(5e-3, params.max_jump_rate_gamma_units()).unwrap();
        let mut plant = FullLambdaPlant::new(
            params,
            &cfg,
            DetectionModel::uniform(1.0).unwrap(),
            DensityMatrix::basis_state(0),
        )
        .unwrap();
        plant.set_detuning(0.42);
        assert!((plant.detuning() - 0.42).abs() < 1e-15);
        assert!((plant.params().delta() - 0.42 * 4.0 / 15.0).abs() < 1e-15);
    }
}
