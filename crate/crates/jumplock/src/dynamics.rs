//! Deterministic no-click evolution for the three plant models, plus a
//! fixed-step integrator.
//!
//! Between detector clicks every model follows a smooth nonlinear flow: the
//! usual Hamiltonian-plus-damping generator with a trace-restoring term, so
//! the state stays normalized while the click probability is accounted for
//! separately by the sampler. This module holds the right-hand sides of
//! those flows, the validated parameter sets, and a classical fourth-order
//! fixed-step propagator. Everything here is pure and deterministic: the
//! same inputs give bit-identical outputs, which is what makes trajectory
//! replay exact.
//!
//! Unit conventions:
//!
//! * two-level model: time in units of the spontaneous-decay rate, which is
//!   set to 1;
//! * reduced three-level model: time in units of the total optical-pumping
//!   rate out of the bright state, set to 1, with branching fractions
//!   `gamma1 + gamma2 = 1`;
//! * full three-level model: time in the reference units in which the decay
//!   rates `decay1`, `decay2` and Rabi frequencies are quoted. The derived
//!   pumping rates [`FullLambdaParams::gamma1`] and
//!   [`FullLambdaParams::gamma2`] convert to the slow clock of the reduced
//!   model.

use crate::qstate::{BlochVector, BrightDarkBasis, DensityMatrix, Matrix2, Matrix3, C64};
use thiserror::Error;

/// Errors from parameter validation and integrator configuration.
#[derive(Debug, Error)]
pub enum DynamicsError {
    /// A parameter failed its validity constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The integration step does not resolve the fastest click rate.
    #[error("step {dt} too large for peak jump rate {max_rate}: need dt * rate < 0.1")]
    StepTooLarge { dt: f64, max_rate: f64 },
}

fn require_finite(name: &str, value: f64) -> Result<(), DynamicsError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter(format!(
            "{name} must be finite, got {value}"
        )))
    }
}

fn require_positive(name: &str, value: f64) -> Result<(), DynamicsError> {
    require_finite(name, value)?;
    if value > 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter(format!(
            "{name} must be positive, got {value}"
        )))
    }
}

fn require_non_negative(name: &str, value: f64) -> Result<(), DynamicsError> {
    require_finite(name, value)?;
    if value >= 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter(format!(
            "{name} must be non-negative, got {value}"
        )))
    }
}

/// Driven two-level atom in decay-rate units.
///
/// The drive has a constant in-phase amplitude `u_bar` and a modulated
/// quadrature `v_bar * cos(omega * t)`; `delta` is the detuning the
/// controller steers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelParams {
    delta: f64,
    u_bar: f64,
    v_bar: f64,
    omega: f64,
}

impl TwoLevelParams {
    pub fn new(delta: f64, u_bar: f64, v_bar: f64, omega: f64) -> Result<Self, DynamicsError> {
        require_finite("delta", delta)?;
        require_non_negative("u_bar", u_bar)?;
        require_non_negative("v_bar", v_bar)?;
        require_positive("omega", omega)?;
        Ok(Self {
            delta,
            u_bar,
            v_bar,
            omega,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn u_bar(&self) -> f64 {
        self.u_bar
    }

    pub fn v_bar(&self) -> f64 {
        self.v_bar
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Replaces the detuning; the feedback loop calls this after each
    /// accepted correction.
    pub fn set_detuning(&mut self, delta: f64) {
        debug_assert!(delta.is_finite());
        self.delta = delta;
    }

    /// Largest instantaneous emission rate: `(1 + Z)/2 <= 1`.
    pub fn max_jump_rate(&self) -> f64 {
        1.0
    }
}

/// Reduced three-level model: pumping out of a weakly dressed bright state,
/// in pumping-rate units.
#[derive(Debug, Clone, Copy)]
pub struct ReducedLambdaParams {
    delta: f64,
    epsilon: f64,
    omega: f64,
    basis: BrightDarkBasis,
    gamma1: f64,
    gamma2: f64,
}

impl ReducedLambdaParams {
    pub fn new(
        delta: f64,
        epsilon: f64,
        omega: f64,
        basis: BrightDarkBasis,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<Self, DynamicsError> {
        require_finite("delta", delta)?;
        require_non_negative("epsilon", epsilon)?;
        require_positive("omega", omega)?;
        require_positive("gamma1", gamma1)?;
        require_positive("gamma2", gamma2)?;
        if ((gamma1 + gamma2) - 1.0).abs() > 1e-12 {
            return Err(DynamicsError::InvalidParameter(format!(
                "branching fractions must sum to 1, got {}",
                gamma1 + gamma2
            )));
        }
        Ok(Self {
            delta,
            epsilon,
            omega,
            basis,
            gamma1,
            gamma2,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn basis(&self) -> &BrightDarkBasis {
        &self.basis
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    /// Replaces the Raman detuning; the feedback loop calls this after each
    /// accepted correction.
    pub fn set_detuning(&mut self, delta: f64) {
        debug_assert!(delta.is_finite());
        self.delta = delta;
    }

    /// Largest instantaneous click rate: the top eigenvalue of the dressed
    /// projector, `1 + epsilon^2 cos^2 <= 1 + epsilon^2`.
    pub fn max_jump_rate(&self) -> f64 {
        1.0 + self.epsilon * self.epsilon
    }
}

/// Full three-level model in the reference units of its decay rates.
///
/// `rabi1`, `rabi2` couple the two ground states to the excited state, which
/// decays back at `decay1`, `decay2`. The modulation with depth `epsilon`
/// and frequency `omega` rocks the two coupling phases so that the dressed
/// bright superposition is `|b> + i epsilon cos(omega t)|d>`, the same phase
/// convention as the reduced model.
#[derive(Debug, Clone, Copy)]
pub struct FullLambdaParams {
    delta: f64,
    delta_e: f64,
    rabi1: f64,
    rabi2: f64,
    decay1: f64,
    decay2: f64,
    epsilon: f64,
    omega: f64,
}

impl FullLambdaParams {
    /// `delta` is the Raman (two-photon) detuning, `rabi1`/`rabi2` the two
    /// Rabi frequencies, `decay1`/`decay2` the excited-state decay rates
    /// into each ground state, `epsilon` the modulation depth, and `omega`
    /// the modulation frequency, all in the same reference units. The
    /// excited-state detuning defaults to zero; see
    /// [`with_excited_detuning`](Self::with_excited_detuning).
    pub fn new(
        delta: f64,
        rabi1: f64,
        rabi2: f64,
        decay1: f64,
        decay2: f64,
        epsilon: f64,
        omega: f64,
    ) -> Result<Self, DynamicsError> {
        require_finite("delta", delta)?;
        require_positive("rabi1", rabi1)?;
        require_positive("rabi2", rabi2)?;
        require_positive("decay1", decay1)?;
        require_positive("decay2", decay2)?;
        require_non_negative("epsilon", epsilon)?;
        require_positive("omega", omega)?;
        Ok(Self {
            delta,
            delta_e: 0.0,
            rabi1,
            rabi2,
            decay1,
            decay2,
            epsilon,
            omega,
        })
    }

    /// Sets a nonzero detuning of the excited state.
    pub fn with_excited_detuning(mut self, delta_e: f64) -> Result<Self, DynamicsError> {
        require_finite("delta_e", delta_e)?;
        self.delta_e = delta_e;
        Ok(self)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_e(&self) -> f64 {
        self.delta_e
    }

    pub fn rabi1(&self) -> f64 {
        self.rabi1
    }

    pub fn rabi2(&self) -> f64 {
        self.rabi2
    }

    pub fn decay1(&self) -> f64 {
        self.decay1
    }

    pub fn decay2(&self) -> f64 {
        self.decay2
    }

    pub fn decay_total(&self) -> f64 {
        self.decay1 + self.decay2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Effective pumping rate into ground state 1 when the excited state is
    /// adiabatically eliminated: `4 (rabi1^2 + rabi2^2) decay1 / decay_total^2`.
    pub fn gamma1(&self) -> f64 {
        let rabi_sq = self.rabi1 * self.rabi1 + self.rabi2 * self.rabi2;
        let total = self.decay_total();
        4.0 * rabi_sq * self.decay1 / (total * total)
    }

    /// Effective pumping rate into ground state 2.
    pub fn gamma2(&self) -> f64 {
        let rabi_sq = self.rabi1 * self.rabi1 + self.rabi2 * self.rabi2;
        let total = self.decay_total();
        4.0 * rabi_sq * self.decay2 / (total * total)
    }

    /// Total effective pumping rate; the slow clock of the reduced model
    /// ticks at this rate.
    pub fn gamma(&self) -> f64 {
        self.gamma1() + self.gamma2()
    }

    /// Bright/dark decomposition of the ground doublet set by the Rabi pair.
    pub fn bright_dark_basis(&self) -> BrightDarkBasis {
        crate::qstate::make_bright_dark(self.rabi1, self.rabi2)
            .expect("Rabi frequencies validated positive")
    }

    /// Replaces the Raman detuning (reference units); the feedback loop
    /// calls this after each accepted correction.
    pub fn set_detuning(&mut self, delta: f64) {
        debug_assert!(delta.is_finite());
        self.delta = delta;
    }

    /// Largest sustained emission rate in reference units. With the excited
    /// state overdamped its population is pinned near
    /// `4 (rabi1^2 + rabi2^2)(1 + epsilon^2) / decay_total^2`, so the
    /// emission rate stays below `gamma * (1 + epsilon^2)`. Transients that
    /// start with macroscopic excited population exceed this; the sampler
    /// guards against that separately.
    pub fn max_jump_rate(&self) -> f64 {
        self.gamma() * (1.0 + self.epsilon * self.epsilon)
    }

    /// [`max_jump_rate`](Self::max_jump_rate) expressed per unit of the slow
    /// clock: exactly `1 + epsilon^2`, independent of the couplings.
    pub fn max_jump_rate_gamma_units(&self) -> f64 {
        1.0 + self.epsilon * self.epsilon
    }
}

/// Fixed-step integrator settings.
///
/// Construction requires the peak click rate of the model the config will
/// drive, so that a step can never swallow more than a tenth of a click on
/// average.
#[derive(Debug, Clone, Copy)]
pub struct PropagatorConfig {
    dt: f64,
    renormalize: bool,
}

impl PropagatorConfig {
    pub fn new(dt: f64, max_jump_rate: f64) -> Result<Self, DynamicsError> {
        require_positive("dt", dt)?;
        require_non_negative("max_jump_rate", max_jump_rate)?;
        if dt * max_jump_rate >= 0.1 {
            return Err(DynamicsError::StepTooLarge {
                dt,
                max_rate: max_jump_rate,
            });
        }
        Ok(Self {
            dt,
            renormalize: true,
        })
    }

    /// Disables per-step renormalization (useful for convergence studies of
    /// the raw integrator).
    pub fn without_renormalization(mut self) -> Self {
        self.renormalize = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn renormalize(&self) -> bool {
        self.renormalize
    }
}

/// Two-level flow with the drive quadrature already evaluated:
/// `v_cos = v_bar * cos(omega * t)`.
#[inline]
pub(crate) fn two_level_rhs_at(r: &BlochVector, delta: f64, u_bar: f64, v_cos: f64) -> BlochVector {
    let half_excited = 0.5 * (1.0 + r.z);
    BlochVector::new(
        -delta * r.y - 0.5 * r.x + half_excited * r.x + 2.0 * v_cos * r.z,
        delta * r.x - 0.5 * r.y + half_excited * r.y - 2.0 * u_bar * r.z,
        -0.5 * (1.0 - r.z) * (1.0 + r.z) + 2.0 * u_bar * r.y - 2.0 * v_cos * r.x,
    )
}

/// Time derivative of the two-level Bloch vector under the no-click flow.
///
/// Components, with `c = cos(omega t)`:
///
/// ```text
/// dX/dt = -delta Y - X/2 + (1 + Z) X / 2 + 2 v_bar c Z
/// dY/dt =  delta X - Y/2 + (1 + Z) Y / 2 - 2 u_bar Z
/// dZ/dt = -(1 - Z)(1 + Z)/2 + 2 u_bar Y - 2 v_bar c X
/// ```
///
/// The quadratic terms restore the trace removed by conditioning on no
/// click, so the flow maps the unit ball into itself.
pub fn two_level_rhs(r: &BlochVector, params: &TwoLevelParams, t: f64) -> BlochVector {
    let v_cos = params.v_bar * (params.omega * t).cos();
    two_level_rhs_at(r, params.delta, params.u_bar, v_cos)
}

/// Instantaneous emission rate of the two-level model: the excited
/// population `(1 + Z)/2`.
pub fn two_level_jump_rate(r: &BlochVector) -> f64 {
    0.5 * (1.0 + r.z)
}

/// Projector onto the dressed bright state
/// `|b> + i eps_cos |d>` (unnormalized), where `eps_cos = epsilon * cos(omega t)`.
pub(crate) fn modulated_bright_projector(basis: &BrightDarkBasis, eps_cos: f64) -> Matrix2 {
    let b = basis.bright();
    let d = basis.dark();
    let ic = C64::new(0.0, eps_cos);
    let dressed = [b[0] + ic * d[0], b[1] + ic * d[1]];
    Matrix2::outer(&dressed, &dressed)
}

/// Reduced-model flow with the modulation already evaluated:
/// `eps_cos = epsilon * cos(omega * t)`.
pub(crate) fn reduced_lambda_rhs_at(
    rho: &Matrix2,
    delta: f64,
    basis: &BrightDarkBasis,
    eps_cos: f64,
) -> Matrix2 {
    let proj = modulated_bright_projector(basis, eps_cos);
    // G = -iH - P/2 with H = diag(-delta/2, +delta/2) on (g1, g2).
    let mut gen = proj.scale(-0.5);
    gen[(0, 0)] += C64::new(0.0, 0.5 * delta);
    gen[(1, 1)] += C64::new(0.0, -0.5 * delta);
    let g_rho = gen * *rho;
    let rate = proj.trace_product(rho).re;
    g_rho + g_rho.adjoint() + rho.scale(rate)
}

/// Time derivative of the reduced-model density matrix under the no-click
/// flow: ground-state splitting `delta`, damping through the dressed bright
/// projector, and the trace-restoring term.
pub fn reduced_lambda_rhs(rho: &Matrix2, params: &ReducedLambdaParams, t: f64) -> Matrix2 {
    let eps_cos = params.epsilon * (params.omega * t).cos();
    reduced_lambda_rhs_at(rho, params.delta, &params.basis, eps_cos)
}

/// Instantaneous click rate of the reduced model: the dressed-bright
/// population, in pumping-rate units.
pub fn reduced_jump_rate(rho: &Matrix2, params: &ReducedLambdaParams, t: f64) -> f64 {
    let eps_cos = params.epsilon * (params.omega * t).cos();
    modulated_bright_projector(&params.basis, eps_cos)
        .trace_product(rho)
        .re
}

/// Full-model flow with the modulation already evaluated:
/// `eps_cos = epsilon * cos(omega * t)`. Basis order is
/// `(ground 1, ground 2, excited)`.
pub(crate) fn full_lambda_rhs_at(
    rho: &Matrix3,
    delta: f64,
    delta_e: f64,
    rabi1: f64,
    rabi2: f64,
    decay_total: f64,
    eps_cos: f64,
) -> Matrix3 {
    // Dressed couplings W1 = rabi1 - i c rabi2, W2 = rabi2 + i c rabi1:
    // the phase choice that admixes +i c |d> into the bright state.
    let w1 = C64::new(rabi1, -eps_cos * rabi2);
    let w2 = C64::new(rabi2, eps_cos * rabi1);
    // Rows of G = -iH - (decay_total/2)|e><e| with
    // H = diag(delta_e, delta_e + delta, 0) + W1|g1><e| + W2|g2><e| + h.c.
    let a1 = C64::new(0.0, -delta_e);
    let a2 = C64::new(0.0, -(delta_e + delta));
    let ae = C64::new(-0.5 * decay_total, 0.0);
    let m1 = C64::new(w1.im, -w1.re);
    let m2 = C64::new(w2.im, -w2.re);
    let m1c = C64::new(-w1.im, -w1.re);
    let m2c = C64::new(-w2.im, -w2.re);
    let mut g_rho = Matrix3::zero();
    for j in 0..3 {
        g_rho[(0, j)] = a1 * rho[(0, j)] + m1 * rho[(2, j)];
        g_rho[(1, j)] = a2 * rho[(1, j)] + m2 * rho[(2, j)];
        g_rho[(2, j)] = m1c * rho[(0, j)] + m2c * rho[(1, j)] + ae * rho[(2, j)];
    }
    let rate = decay_total * rho[(2, 2)].re;
    g_rho + g_rho.adjoint() + rho.scale(rate)
}

/// Time derivative of the full-model density matrix under the no-click flow.
///
/// The Hamiltonian splits the ground doublet by `delta`, detunes the excited
/// state by `delta_e`, and couples each ground state to the excited state
/// with the dressed Rabi pair; decay at `decay_total` is conditioned on no
/// emission, with the trace-restoring term.
pub fn full_lambda_nojump_rhs(rho: &Matrix3, params: &FullLambdaParams, t: f64) -> Matrix3 {
    let eps_cos = params.epsilon * (params.omega * t).cos();
    full_lambda_rhs_at(
        rho,
        params.delta,
        params.delta_e,
        params.rabi1,
        params.rabi2,
        params.decay_total(),
        eps_cos,
    )
}

/// Instantaneous emission rates into the two ground states:
/// `decay_j * rho_ee`.
pub fn full_jump_rates(rho: &Matrix3, params: &FullLambdaParams) -> [f64; 2] {
    let excited = rho[(2, 2)].re;
    [params.decay1 * excited, params.decay2 * excited]
}

/// One classical fourth-order step of the two-level flow with the three
/// stage drive values precomputed: `vc0`, `vc_half`, `vc1` are
/// `v_bar * cos(omega * t_stage)` at `t`, `t + dt/2`, `t + dt`.
#[inline]
pub(crate) fn rk4_two_level_at(
    r: &BlochVector,
    delta: f64,
    u_bar: f64,
    dt: f64,
    vc0: f64,
    vc_half: f64,
    vc1: f64,
) -> BlochVector {
    let k1 = two_level_rhs_at(r, delta, u_bar, vc0);
    let k2 = two_level_rhs_at(&(*r + k1 * (0.5 * dt)), delta, u_bar, vc_half);
    let k3 = two_level_rhs_at(&(*r + k2 * (0.5 * dt)), delta, u_bar, vc_half);
    let k4 = two_level_rhs_at(&(*r + k3 * dt), delta, u_bar, vc1);
    *r + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// One fourth-order step of the reduced-model flow; `c0`, `c_half`, `c1`
/// are `epsilon * cos(omega * t_stage)` at the three stage times.
#[inline]
pub(crate) fn rk4_reduced_at(
    rho: &Matrix2,
    delta: f64,
    basis: &BrightDarkBasis,
    dt: f64,
    c0: f64,
    c_half: f64,
    c1: f64,
) -> Matrix2 {
    let k1 = reduced_lambda_rhs_at(rho, delta, basis, c0);
    let k2 = reduced_lambda_rhs_at(&(*rho + k1.scale(0.5 * dt)), delta, basis, c_half);
    let k3 = reduced_lambda_rhs_at(&(*rho + k2.scale(0.5 * dt)), delta, basis, c_half);
    let k4 = reduced_lambda_rhs_at(&(*rho + k3.scale(dt)), delta, basis, c1);
    *rho + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0)
}

/// One fourth-order step of the full-model flow; `c0`, `c_half`, `c1` are
/// `epsilon * cos(omega * t_stage)` at the three stage times.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn rk4_full_at(
    rho: &Matrix3,
    delta: f64,
    delta_e: f64,
    rabi1: f64,
    rabi2: f64,
    decay_total: f64,
    dt: f64,
    c0: f64,
    c_half: f64,
    c1: f64,
) -> Matrix3 {
    let k1 = full_lambda_rhs_at(rho, delta, delta_e, rabi1, rabi2, decay_total, c0);
    let k2 = full_lambda_rhs_at(
        &(*rho + k1.scale(0.5 * dt)),
        delta,
        delta_e,
        rabi1,
        rabi2,
        decay_total,
        c_half,
    );
    let k3 = full_lambda_rhs_at(
        &(*rho + k2.scale(0.5 * dt)),
        delta,
        delta_e,
        rabi1,
        rabi2,
        decay_total,
        c_half,
    );
    let k4 = full_lambda_rhs_at(
        &(*rho + k3.scale(dt)),
        delta,
        delta_e,
        rabi1,
        rabi2,
        decay_total,
        c1,
    );
    *rho + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0)
}

/// Splits `t1 - t0` into full steps of `dt` plus a remainder; remainders
/// below a relative sliver are dropped so exact multiples produce no extra
/// step.
fn step_schedule(t0: f64, t1: f64, dt: f64) -> Result<(u64, f64), DynamicsError> {
    if t0.is_nan() || t1.is_nan() || t1 < t0 {
        return Err(DynamicsError::InvalidParameter(format!(
            "t1 ({t1}) must be >= t0 ({t0})"
        )));
    }
    let span = t1 - t0;
    let n = (span / dt).floor() as u64;
    let rem = span - (n as f64) * dt;
    let rem = if rem > dt * 1e-9 { rem } else { 0.0 };
    Ok((n, rem))
}

/// Integrates the two-level flow from `t0` to `t1`.
///
/// Fourth-order fixed-step; when renormalization is on, a state that rounds
/// outside the unit ball is pulled back onto the sphere. `t1 == t0` returns
/// the input unchanged.
pub fn propagate_two_level(
    r0: &BlochVector,
    params: &TwoLevelParams,
    t0: f64,
    t1: f64,
    cfg: &PropagatorConfig,
) -> Result<BlochVector, DynamicsError> {
    let (n, rem) = step_schedule(t0, t1, cfg.dt)?;
    let mut r = *r0;
    let stage = |t: f64| params.v_bar * (params.omega * t).cos();
    for k in 0..n {
        let t = t0 + (k as f64) * cfg.dt;
        r = rk4_two_level_at(
            &r,
            params.delta,
            params.u_bar,
            cfg.dt,
            stage(t),
            stage(t + 0.5 * cfg.dt),
            stage(t + cfg.dt),
        );
        if cfg.renormalize && r.norm_sqr() > 1.0 {
            r = r.normalized();
        }
    }
    if rem > 0.0 {
        let t = t0 + (n as f64) * cfg.dt;
        r = rk4_two_level_at(
            &r,
            params.delta,
            params.u_bar,
            rem,
            stage(t),
            stage(t + 0.5 * rem),
            stage(t + rem),
        );
        if cfg.renormalize && r.norm_sqr() > 1.0 {
            r = r.normalized();
        }
    }
    Ok(r)
}

/// Integrates the reduced-model flow from `t0` to `t1`.
pub fn propagate_reduced_lambda(
    rho0: &DensityMatrix<2>,
    params: &ReducedLambdaParams,
    t0: f64,
    t1: f64,
    cfg: &PropagatorConfig,
) -> Result<DensityMatrix<2>, DynamicsError> {
    let (n, rem) = step_schedule(t0, t1, cfg.dt)?;
    let mut state = *rho0;
    let stage = |t: f64| params.epsilon * (params.omega * t).cos();
    let advance = |state: &mut DensityMatrix<2>, t: f64, h: f64| {
        let next = rk4_reduced_at(
            state.matrix(),
            params.delta,
            &params.basis,
            h,
            stage(t),
            stage(t + 0.5 * h),
            stage(t + h),
        );
        *state = DensityMatrix::from_matrix_unchecked(next);
        if cfg.renormalize {
            state.renormalize();
        }
    };
    for k in 0..n {
        advance(&mut state, t0 + (k as f64) * cfg.dt, cfg.dt);
    }
    if rem > 0.0 {
        advance(&mut state, t0 + (n as f64) * cfg.dt, rem);
    }
    Ok(state)
}

/// Integrates the full-model flow from `t0` to `t1` (reference units).
pub fn propagate_full_lambda(
    rho0: &DensityMatrix<3>,
    params: &FullLambdaParams,
    t0: f64,
    t1: f64,
    cfg: &PropagatorConfig,
) -> Result<DensityMatrix<3>, DynamicsError> {
    let (n, rem) = step_schedule(t0, t1, cfg.dt)?;
    let mut state = *rho0;
    let decay_total = params.decay_total();
    let stage = |t: f64| params.epsilon * (params.omega * t).cos();
    let advance = |state: &mut DensityMatrix<3>, t: f64, h: f64| {
        let next = rk4_full_at(
            state.matrix(),
            params.delta,
            params.delta_e,
            params.rabi1,
            params.rabi2,
            decay_total,
            h,
            stage(t),
            stage(t + 0.5 * h),
            stage(t + h),
        );
        *state = DensityMatrix::from_matrix_unchecked(next);
        if cfg.renormalize {
            state.renormalize();
        }
    };
    for k in 0..n {
        advance(&mut state, t0 + (k as f64) * cfg.dt, cfg.dt);
    }
    if rem > 0.0 {
        advance(&mut state, t0 + (n as f64) * cfg.dt, rem);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use crate::qstate::Matrix;
    use proptest::prelude::*;

    fn two_level(delta: f64, u_bar: f64, v_bar: f64, omega: f64) -> TwoLevelParams {
        TwoLevelParams::new(delta, u_bar, v_bar, omega).unwrap()
    }

    fn reduced(delta: f64, epsilon: f64, omega: f64, alpha: f64) -> ReducedLambdaParams {
        let basis = BrightDarkBasis::from_alpha(alpha).unwrap();
        let g1 = alpha.cos().powi(2);
        ReducedLambdaParams::new(delta, epsilon, omega, basis, g1, 1.0 - g1).unwrap()
    }

    #[test]
    fn ground_state_is_stationary_without_drive() {
        let p = two_level(0.3, 0.0, 0.0, 1.0);
        let d = two_level_rhs(&BlochVector::new(0.0, 0.0, -1.0), &p, 0.7);
        assert!(d.norm() < 1e-15);
    }

    #[test]
    fn constant_drive_tilts_ground_state_along_y() {
        // At a zero of the modulation the only drive term is -2 u_bar Z.
        let p = two_level(0.5, 0.06, 0.06, 1.0);
        let t = std::f64::consts::FRAC_PI_2;
        let d = two_level_rhs(&BlochVector::new(0.0, 0.0, -1.0), &p, t);
        assert!(d.x.abs() < 1e-12);
        assert!((d.y - 0.12).abs() < 1e-12);
        assert!(d.z.abs() < 1e-12);
    }

    #[test]
    fn north_pole_is_stationary_without_in_phase_drive() {
        let p = two_level(-0.4, 0.0, 0.3, 2.0);
        let t = std::f64::consts::FRAC_PI_4; // cos(omega t) = 0 at omega = 2
        let d = two_level_rhs(&BlochVector::new(0.0, 0.0, 1.0), &p, t);
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn dark_state_is_invariant_without_modulation() {
        let p = reduced(0.0, 0.0, 20.0, 0.6);
        let rho = DensityMatrix::pure(&p.basis().dark()).unwrap();
        let d = reduced_lambda_rhs(rho.matrix(), &p, 1.3);
        assert!(d.max_abs() < 1e-15);
    }

    #[test]
    fn bright_state_is_invariant_without_modulation() {
        // Damping removes the bright state at rate 1 and the trace term
        // restores it at the same rate.
        let p = reduced(0.0, 0.0, 20.0, 0.6);
        let rho = DensityMatrix::pure(&p.basis().bright()).unwrap();
        let d = reduced_lambda_rhs(rho.matrix(), &p, 1.3);
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn reduced_rhs_is_trace_free_and_hermitian() {
        let p = reduced(0.35, 0.08, 20.0, std::f64::consts::FRAC_PI_4);
        let rho = DensityMatrix::from_ground_bloch(&BlochVector::new(0.3, -0.5, 0.2)).unwrap();
        let d = reduced_lambda_rhs(rho.matrix(), &p, 0.42);
        assert!(d.trace().norm() < 1e-14);
        assert!(d.hermiticity_deviation() < 1e-14);
    }

    fn full_params() -> FullLambdaParams {
        FullLambdaParams::new(0.1, 1.0, 1.0, 15.0, 15.0, 0.03, 20.0 * 4.0 / 15.0).unwrap()
    }

    #[test]
    fn pumping_rates_follow_from_couplings() {
        let p = full_params();
        assert!((p.gamma1() - 2.0 / 15.0).abs() < 1e-15);
        assert!((p.gamma2() - 2.0 / 15.0).abs() < 1e-15);
        assert!((p.gamma() - 4.0 / 15.0).abs() < 1e-15);
        // Peak click rate per slow-clock unit is coupling-independent.
        assert!((p.max_jump_rate() / p.gamma() - p.max_jump_rate_gamma_units()).abs() < 1e-15);
        assert!((p.max_jump_rate_gamma_units() - 1.0009).abs() < 1e-12);
    }

    #[test]
    fn ground_subspace_evolves_by_splitting_alone_when_coupling_vanishes() {
        // Vanishingly weak couplings: only the ground-doublet splitting acts.
        let p = FullLambdaParams::new(0.7, 1e-300, 1e-300, 2.0, 3.0, 0.0, 1.0)
            .unwrap()
            .with_excited_detuning(0.25)
            .unwrap();
        let mut m = Matrix3::zero();
        m[(0, 0)] = C64::new(0.6, 0.0);
        m[(1, 1)] = C64::new(0.4, 0.0);
        m[(0, 1)] = C64::new(0.2, 0.1);
        m[(1, 0)] = C64::new(0.2, -0.1);
        let d = full_lambda_nojump_rhs(&m, &p, 0.9);
        // d rho_01 = -i(-delta) rho_01 = i delta rho_01; populations frozen.
        let expected01 = C64::new(0.0, p.delta()) * m[(0, 1)];
        assert!(d[(0, 0)].norm() < 1e-12);
        assert!(d[(1, 1)].norm() < 1e-12);
        assert!(d[(2, 2)].norm() < 1e-12);
        assert!((d[(0, 1)] - expected01).norm() < 1e-12);
        assert!(d[(0, 2)].norm() < 1e-12);
        assert!(d[(1, 2)].norm() < 1e-12);
    }

    #[test]
    fn fully_excited_population_is_a_fixed_point_of_the_conditioned_decay() {
        let p = full_params();
        let rho = DensityMatrix::<3>::basis_state(2);
        let d = full_lambda_nojump_rhs(rho.matrix(), &p, 0.0);
        // Conditioned on no emission, rho_ee = 1 cannot decay; coherences
        // to the ground states may still build through the coupling.
        assert!(d[(2, 2)].re.abs() < 1e-12);
        assert!(d[(0, 0)].norm() < 1e-12);
        assert!(d[(1, 1)].norm() < 1e-12);
        assert!(d.trace().norm() < 1e-12);
    }

    #[test]
    fn excited_population_decays_logistically() {
        // For diagonal rho the populations obey
        // d rho_ee/dt = -decay_total (1 - rho_ee) rho_ee.
        let p = full_params();
        let mut m = Matrix3::zero();
        m[(0, 0)] = C64::new(0.2, 0.0);
        m[(1, 1)] = C64::new(0.3, 0.0);
        m[(2, 2)] = C64::new(0.5, 0.0);
        let d = full_lambda_nojump_rhs(&m, &p, 0.0);
        let expected = -p.decay_total() * 0.5 * 0.5;
        assert!((d[(2, 2)].re - expected).abs() < 1e-12);
    }

    #[test]
    fn jump_rates_split_by_branching() {
        let p = FullLambdaParams::new(0.0, 1.0, 1.0, 10.0, 5.0, 0.0, 1.0).unwrap();
        let mut m = Matrix3::zero();
        m[(0, 0)] = C64::new(0.9, 0.0);
        m[(2, 2)] = C64::new(0.1, 0.0);
        let rates = full_jump_rates(&m, &p);
        assert!((rates[0] - 1.0).abs() < 1e-15);
        assert!((rates[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_steps_that_swallow_a_click() {
        assert!(PropagatorConfig::new(0.05, 1.0).is_ok());
        assert!(matches!(
            PropagatorConfig::new(0.2, 1.0),
            Err(DynamicsError::StepTooLarge { .. })
        ));
        assert!(PropagatorConfig::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn parameter_validation_rejects_out_of_range_values() {
        assert!(TwoLevelParams::new(0.0, -0.1, 0.0, 1.0).is_err());
        assert!(TwoLevelParams::new(0.0, 0.1, 0.1, 0.0).is_err());
        assert!(TwoLevelParams::new(f64::NAN, 0.1, 0.1, 1.0).is_err());
        let basis = BrightDarkBasis::from_alpha(0.7).unwrap();
        assert!(ReducedLambdaParams::new(0.0, 0.05, 20.0, basis, 0.6, 0.5).is_err());
        assert!(ReducedLambdaParams::new(0.0, 0.05, 20.0, basis, 0.6, -0.4).is_err());
        assert!(FullLambdaParams::new(0.0, 0.0, 1.0, 15.0, 15.0, 0.03, 5.0).is_err());
        assert!(FullLambdaParams::new(0.0, 1.0, 1.0, 0.0, 15.0, 0.03, 5.0).is_err());
    }

    #[test]
    fn zero_span_propagation_returns_input_bit_for_bit() {
        let p = two_level(0.3, 0.06, 0.06, 1.0);
        let cfg = PropagatorConfig::new(1e-3, p.max_jump_rate()).unwrap();
        let r0 = BlochVector::new(0.123456789, -0.4, 0.25);
        let r1 = propagate_two_level(&r0, &p, 2.5, 2.5, &cfg).unwrap();
        assert_eq!(r0.x.to_bits(), r1.x.to_bits());
        assert_eq!(r0.y.to_bits(), r1.y.to_bits());
        assert_eq!(r0.z.to_bits(), r1.z.to_bits());
    }

    #[test]
    fn undriven_flow_contracts_to_the_ground_state() {
        let p = two_level(0.2, 0.0, 0.0, 1.0);
        let cfg = PropagatorConfig::new(1e-3, p.max_jump_rate()).unwrap();
        let r =
            propagate_two_level(&BlochVector::new(0.3, 0.4, -0.5), &p, 0.0, 40.0, &cfg).unwrap();
        assert!(r.distance(&BlochVector::new(0.0, 0.0, -1.0)) < 1e-6);
    }

    #[test]
    fn driven_orbit_matches_closed_form_inversion() {
        let epsilon = 0.06;
        let (delta, omega) = (0.25, 1.0);
        let p = two_level(delta, epsilon, epsilon, omega);
        let cfg = PropagatorConfig::new(1e-3, p.max_jump_rate()).unwrap();
        let coeffs = oracles::orbit_coefficients(delta, omega, 1.0, 1.0);
        let mut r = BlochVector::new(0.0, 0.0, -1.0);
        let mut t = 0.0;
        // Settle onto the orbit, then compare Z(t) along one period.
        r = propagate_two_level(&r, &p, t, 60.0, &cfg).unwrap();
        t = 60.0;
        let period = 2.0 * std::f64::consts::PI / omega;
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let t_next = t + period / 8.0;
            r = propagate_two_level(&r, &p, t, t_next, &cfg).unwrap();
            t = t_next;
            let z_ref = oracles::asymptotic_z(&coeffs, epsilon, omega * t);
            worst = worst.max((r.z - z_ref).abs());
        }
        assert!(
            worst < 1e-3,
            "orbit deviates from closed form by {worst:.2e}"
        );
    }

    #[test]
    fn undriven_flow_never_inflates_purity_past_one() {
        // Conditioning on "no click" purifies: the radial derivative is
        // Z (|r|^2 - 1), so interior norms may grow toward 1, but the unit
        // ball is invariant and every start settles on the pure south pole.
        let p = two_level(0.45, 0.0, 0.0, 1.0);
        let cfg = PropagatorConfig::new(2e-3, p.max_jump_rate())
            .unwrap()
            .without_renormalization();
        for start in [
            BlochVector::new(0.3, 0.4, -0.5),
            BlochVector::new(-0.6, 0.1, 0.7),
            BlochVector::new(0.0, 0.0, 0.999),
        ] {
            let mut r = start;
            let mut t = 0.0;
            for _ in 0..400 {
                r = propagate_two_level(&r, &p, t, t + 0.1, &cfg).unwrap();
                t += 0.1;
                assert!(r.norm() <= 1.0 + 1e-9, "left the ball: norm {}", r.norm());
            }
            assert!(r.distance(&BlochVector::new(0.0, 0.0, -1.0)) < 1e-6);
        }
        // A pure start stays pure: the sphere is exactly invariant.
        let mut r = BlochVector::new(0.6, 0.0, -0.8);
        let mut t = 0.0;
        for _ in 0..100 {
            r = propagate_two_level(&r, &p, t, t + 0.1, &cfg).unwrap();
            t += 0.1;
            assert!((r.norm() - 1.0).abs() < 1e-9);
        }
    }

    // Same flow with the decay rate as an explicit parameter, for checking
    // that scaling all rates by s and time by 1/s reproduces the trajectory.
    fn scaled_rhs(r: &BlochVector, delta: f64, u: f64, v_cos: f64, decay: f64) -> BlochVector {
        let half_excited = 0.5 * decay * (1.0 + r.z);
        BlochVector::new(
            -delta * r.y - 0.5 * decay * r.x + half_excited * r.x + 2.0 * v_cos * r.z,
            delta * r.x - 0.5 * decay * r.y + half_excited * r.y - 2.0 * u * r.z,
            -0.5 * decay * (1.0 - r.z) * (1.0 + r.z) + 2.0 * u * r.y - 2.0 * v_cos * r.x,
        )
    }

    #[test]
    fn rescaling_all_rates_and_time_leaves_the_trajectory_unchanged() {
        let (delta, u_bar, v_bar, omega) = (0.3, 0.05, 0.04, 1.1);
        let p = two_level(delta, u_bar, v_bar, omega);
        let dt = 1e-3;
        let cfg = PropagatorConfig::new(dt, p.max_jump_rate()).unwrap();
        let horizon = 20.0;
        let reference =
            propagate_two_level(&BlochVector::new(0.2, -0.1, -0.8), &p, 0.0, horizon, &cfg)
                .unwrap();

        let s = 3.7;
        let (sd, su, sv, sw) = (s * delta, s * u_bar, s * v_bar, s * omega);
        let sdt = dt / s;
        let steps = (horizon / dt).round() as u64;
        let mut r = BlochVector::new(0.2, -0.1, -0.8);
        for k in 0..steps {
            let t = (k as f64) * sdt;
            let stage = |tt: f64| sv * (sw * tt).cos();
            let k1 = scaled_rhs(&r, sd, su, stage(t), s);
            let k2 = scaled_rhs(&(r + k1 * (0.5 * sdt)), sd, su, stage(t + 0.5 * sdt), s);
            let k3 = scaled_rhs(&(r + k2 * (0.5 * sdt)), sd, su, stage(t + 0.5 * sdt), s);
            let k4 = scaled_rhs(&(r + k3 * sdt), sd, su, stage(t + sdt), s);
            r = r + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (sdt / 6.0);
            if r.norm_sqr() > 1.0 {
                r = r.normalized();
            }
        }
        assert!(
            reference.distance(&r) < 1e-10,
            "rescaled trajectory differs by {:.2e}",
            reference.distance(&r)
        );
    }

    fn arbitrary_ball_point() -> impl Strategy<Value = BlochVector> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| {
            let r = BlochVector::new(x, y, z);
            if r.norm_sqr() > 1.0 {
                r.normalized() * 0.999
            } else {
                r
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn reduced_rhs_trace_free_for_random_states(
            r in arbitrary_ball_point(),
            delta in -2.0f64..2.0,
            epsilon in 0.0f64..0.2,
            alpha in 0.1f64..1.47,
            t in 0.0f64..10.0,
        ) {
            let basis = BrightDarkBasis::from_alpha(alpha).unwrap();
            let g1 = alpha.cos().powi(2);
            let p = ReducedLambdaParams::new(delta, epsilon, 20.0, basis, g1, 1.0 - g1).unwrap();
            let rho = DensityMatrix::from_ground_bloch(&r).unwrap();
            let d = reduced_lambda_rhs(rho.matrix(), &p, t);
            prop_assert!(d.trace().norm() < 1e-12);
            prop_assert!(d.hermiticity_deviation() < 1e-12);
        }

        #[test]
        fn full_rhs_trace_free_for_random_states(
            entries in proptest::array::uniform18(-1.0f64..1.0),
            delta in -2.0f64..2.0,
            delta_e in -2.0f64..2.0,
            rabi1 in 0.1f64..3.0,
            rabi2 in 0.1f64..3.0,
            decay1 in 0.5f64..20.0,
            decay2 in 0.5f64..20.0,
            epsilon in 0.0f64..0.1,
            t in 0.0f64..10.0,
        ) {
            // Random valid state: M M^dagger normalized to unit trace.
            let mut m = Matrix::<3>::zero();
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = C64::new(entries[2 * (3 * i + j)], entries[2 * (3 * i + j) + 1]);
                }
            }
            let mm = m * m.adjoint();
            let tr = mm.trace().re;
            prop_assume!(tr > 1e-6);
            let rho = mm.scale(1.0 / tr);
            let p = FullLambdaParams::new(delta, rabi1, rabi2, decay1, decay2, epsilon, 5.0)
                .unwrap()
                .with_excited_detuning(delta_e)
                .unwrap();
            let d = full_lambda_nojump_rhs(&rho, &p, t);
            prop_assert!(d.trace().norm() < 1e-12 * p.decay_total().max(1.0));
            prop_assert!(d.hermiticity_deviation() < 1e-12 * p.decay_total().max(1.0));
        }

        #[test]
        fn two_level_flow_keeps_the_ball_invariant(
            r in arbitrary_ball_point(),
            delta in -2.0f64..2.0,
            u_bar in 0.0f64..0.2,
            v_bar in 0.0f64..0.2,
            t in 0.0f64..10.0,
        ) {
            // On the sphere the radial component of the flow vanishes:
            // pure states stay pure under the no-click evolution.
            let p = TwoLevelParams::new(delta, u_bar, v_bar, 1.0).unwrap();
            let surface = if r.norm() < 1e-6 {
                BlochVector::new(0.0, 0.0, 1.0)
            } else {
                r.normalized()
            };
            let d = two_level_rhs(&surface, &p, t);
            prop_assert!(surface.dot(&d).abs() < 1e-12);
        }
    }
}
