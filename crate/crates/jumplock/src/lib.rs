//! Monte-Carlo quantum-jump simulation of a driven atom whose photon clicks
//! steer a frequency lock.
//!
//! The crate simulates two plants: a resonantly driven two-level atom and a
//! Raman-pumped three-level Lambda atom (plus its rank-one reduced model on
//! the ground manifold).  Between photon detections the conditional state
//! follows a deterministic nonlinear flow; each detected click carries the
//! modulation phase at the click time, and a feedback rule nudges the probe
//! detuning by a small amount demodulated at that phase.  Iterating the rule
//! drags the detuning estimate toward atomic resonance.
//!
//! Module layout:
//! - [`qstate`]: small complex matrices, density-matrix invariants, Bloch
//!   coordinates, bright/dark ground basis.
//! - [`dynamics`]: deterministic no-click propagators for all three plants.
//! - [`jump`]: counter-based RNG, detection model, per-step jump sampling.
//! - [`feedback`]: stopwatch, clip rule, detuning update, closed-loop driver.
//! - [`oracles`]: closed-form predictions (averaged orbit, click-phase
//!   densities, pumping-flow equilibria, contraction rates) used to verify
//!   the simulator.
//! - [`harness`]: ensemble runner, summary statistics, CSV/JSON/SVG export,
//!   presets and byte-exact replay.

pub mod dynamics;
pub mod feedback;
pub mod harness;
pub mod jump;
pub mod oracles;
pub mod qstate;
