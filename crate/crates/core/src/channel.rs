//! Fiber channel: fixed attenuation, a scrambled polarization unitary and a
//! slowly drifting interferometric phase.
//!
//! The scrambler is an isotropic SU(2) random walk. Each step rotates by
//! `exp(-i δ/2 n̂·σ)` with `n̂` uniform on the sphere and `δ` drawn from a
//! half-normal distribution of scale `scramble_rate · dt`. The phase offset is
//! a Wiener process of diffusion `phase_drift_sigma` (rad/√s), wrapped to
//! (−π, π].

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::jones::{JonesMatrix, JonesVector};

/// Steps between re-orthonormalizations of the accumulated unitary.
pub const RENORMALIZE_EVERY: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Channel loss L_C in dB.
    pub loss_db: f64,
    /// Scrambler speed, rad/s.
    pub scramble_rate: f64,
    /// Phase drift diffusion, rad/√s.
    pub phase_drift_sigma: f64,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            loss_db: 12.6,
            scramble_rate: 2.0,
            phase_drift_sigma: 0.05,
            seed: 1,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("loss_db", self.loss_db),
            ("scramble_rate", self.scramble_rate),
            ("phase_drift_sigma", self.phase_drift_sigma),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value >= 0.0) {
                return Err(invalid(format!("channel.{name} must be finite and >= 0, got {value}")));
            }
        }
        Ok(())
    }

    /// A quiet channel: no scrambling and no drift.
    pub fn static_loss(loss_db: f64) -> Self {
        Self {
            loss_db,
            scramble_rate: 0.0,
            phase_drift_sigma: 0.0,
            seed: 1,
        }
    }
}

/// Channel transmittance `10^{-L_C/10}`.
pub fn transmittance(params: &ChannelParams) -> f64 {
    db_to_fraction(params.loss_db)
}

pub fn db_to_fraction(db: f64) -> f64 {
    10f64.powf(-0.1 * db)
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub unitary: JonesMatrix,
    pub phase_offset: f64,
    pub time: f64,
}

impl Default for ChannelState {
    fn default() -> Self {
        Self {
            unitary: JonesMatrix::IDENTITY,
            phase_offset: 0.0,
            time: 0.0,
        }
    }
}

/// Polarization seen by Bob: `unitary · e_in`.
pub fn apply_polarization(state: &ChannelState, e_in: &JonesVector) -> JonesVector {
    state.unitary.apply(e_in)
}

/// `exp(-i (δ/2) n̂·σ)` for a unit axis `n`.
pub fn su2_rotation(axis: [f64; 3], angle: f64) -> JonesMatrix {
    let (s, c) = (0.5 * angle).sin_cos();
    let [nx, ny, nz] = axis;
    JonesMatrix::new(
        Complex64::new(c, -s * nz),
        Complex64::new(-s * ny, -s * nx),
        Complex64::new(s * ny, -s * nx),
        Complex64::new(c, s * nz),
    )
}

/// Projects a near-SU(2) matrix back onto SU(2) using its first column.
pub fn renormalize_su2(m: &JonesMatrix) -> JonesMatrix {
    let norm = (m.m00.norm_sqr() + m.m10.norm_sqr()).sqrt();
    let a = m.m00 / norm;
    let b = m.m10 / norm;
    JonesMatrix::new(a, -b.conj(), b, a.conj())
}

/// A seeded channel trajectory. Identical seeds and step sequences reproduce
/// bit-identical states.
#[derive(Debug, Clone)]
pub struct ChannelProcess {
    params: ChannelParams,
    state: ChannelState,
    rng: ChaCha8Rng,
    steps: u64,
}

impl ChannelProcess {
    pub fn new(params: ChannelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::with_state(params, ChannelState::default()))
    }

    pub fn with_state(params: ChannelParams, state: ChannelState) -> Self {
        Self {
            params,
            state,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            steps: 0,
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances by `dt` seconds and returns the new state.
    pub fn advance(&mut self, dt: f64) -> Result<ChannelState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        self.step(dt);
        Ok(self.state)
    }

    /// Advance without validating `dt`; returns the rotation angle drawn.
    pub(crate) fn step(&mut self, dt: f64) -> f64 {
        let mut angle = 0.0;
        if self.params.scramble_rate > 0.0 {
            let axis = self.random_axis();
            let z: f64 = StandardNormal.sample(&mut self.rng);
            angle = (z * self.params.scramble_rate * dt).abs();
            self.state.unitary = su2_rotation(axis, angle) * self.state.unitary;
        }
        if self.params.phase_drift_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let dphi = z * self.params.phase_drift_sigma * dt.sqrt();
            self.state.phase_offset = wrap_phase(self.state.phase_offset + dphi);
        }
        self.state.time += dt;
        self.steps += 1;
        if self.steps.is_multiple_of(RENORMALIZE_EVERY) {
            self.state.unitary = renormalize_su2(&self.state.unitary);
        }
        angle
    }

    fn random_axis(&mut self) -> [f64; 3] {
        loop {
            let x: f64 = StandardNormal.sample(&mut self.rng);
            let y: f64 = StandardNormal.sample(&mut self.rng);
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let n = (x * x + y * y + z * z).sqrt();
            if n > 1e-12 {
                return [x / n, y / n, z / n];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::jones::{detection_probabilities, smzi_outputs, PhaseSettings};

    #[test]
    fn transmittance_values() {
        assert_eq!(transmittance(&ChannelParams::static_loss(0.0)), 1.0);
        assert_abs_diff_eq!(transmittance(&ChannelParams::static_loss(10.0)), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(
            transmittance(&ChannelParams::static_loss(12.6)),
            0.054954,
            epsilon = 5e-7
        );
    }

    #[test]
    fn quiet_channel_only_advances_time() {
        let mut ch = ChannelProcess::new(ChannelParams::static_loss(3.0)).unwrap();
        for _ in 0..100 {
            ch.advance(0.01).unwrap();
        }
        assert_eq!(ch.state().unitary, JonesMatrix::IDENTITY);
        assert_eq!(ch.state().phase_offset, 0.0);
        assert_abs_diff_eq!(ch.state().time, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_params_and_dt() {
        let p = ChannelParams {
            loss_db: -1.0,
            ..Default::default()
        };
        assert!(ChannelProcess::new(p).is_err());
        let mut ch = ChannelProcess::new(ChannelParams::default()).unwrap();
        assert!(ch.advance(0.0).is_err());
        assert!(ch.advance(f64::NAN).is_err());
    }

    #[test]
    fn unitarity_after_million_steps() {
        let p = ChannelParams {
            scramble_rate: 50.0,
            ..Default::default()
        };
        let mut ch = ChannelProcess::new(p).unwrap();
        for _ in 0..1_000_000 {
            ch.step(0.01);
        }
        assert!(ch.state().unitary.unitarity_error() < 1e-10);
        let out = apply_polarization(ch.state(), &JonesVector::from_angles(0.3, 0.9));
        assert_abs_diff_eq!(out.intensity(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let run = |seed| {
            let mut ch = ChannelProcess::new(ChannelParams {
                seed,
                ..Default::default()
            })
            .unwrap();
            (0..1000).map(|_| ch.advance(0.05).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn step_angle_is_half_normal() {
        // E|N(0, s²)| = s·√(2/π), sd = s·√(1 − 2/π)
        let mut ch = ChannelProcess::new(ChannelParams {
            scramble_rate: 2.0,
            phase_drift_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| ch.step(0.01)).sum::<f64>() / n as f64;
        let s = 0.02;
        let want = s * (2.0 / PI).sqrt();
        let se = s * (1.0 - 2.0 / PI).sqrt() / (n as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * se, "mean {mean} vs {want}");
    }

    #[test]
    fn scrambled_polarization_covers_both_quartiles() {
        let mut ch = ChannelProcess::new(ChannelParams::default()).unwrap();
        let mut low = 0;
        let mut high = 0;
        for _ in 0..100_000 {
            let s = ch.advance(0.01).unwrap();
            let (theta, _) = apply_polarization(&s, &JonesVector::HORIZONTAL).angles();
            if theta < PI / 8.0 {
                low += 1;
            }
            if theta > 3.0 * PI / 8.0 {
                high += 1;
            }
        }
        assert!(low > 1000 && high > 1000, "low {low} high {high}");
    }

    #[test]
    fn smzi_ignores_channel_polarization() {
        let mut ch = ChannelProcess::new(ChannelParams::default()).unwrap();
        for i in 0..2000 {
            let s = ch.advance(0.1).unwrap();
            let e = apply_polarization(&s, &JonesVector::HORIZONTAL);
            let phases = PhaseSettings::new(0.01 * i as f64, 1.3);
            let (o1, o2) = smzi_outputs(&e, phases).unwrap();
            let (i1, i2) = detection_probabilities(phases);
            assert!((o1.intensity() - i1).abs() < 1e-12);
            assert!((o2.intensity() - i2).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert_abs_diff_eq!(wrap_phase(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(0.25), 0.25, epsilon = 1e-15);
        for k in -50..50 {
            let w = wrap_phase(k as f64 * 0.77);
            assert!(w > -PI && w <= PI);
        }
    }
}
