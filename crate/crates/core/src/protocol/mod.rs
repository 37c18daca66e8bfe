//! Decoy-state BB84 source and detector statistics.
//!
//! [`rate_model`] evaluates the analytic gain/error model of the link;
//! [`montecarlo`] draws pulse-level detection tallies from the same physics
//! routed through the SMZI Jones model; [`tracking`] closes the phase loop on
//! mismatched-basis detections.

pub mod montecarlo;
pub mod tracking;

use serde::{Deserialize, Serialize};

use crate::channel::db_to_fraction;
use crate::error::{invalid, Error, Result};

pub use montecarlo::{
    simulate_block, simulate_block_with, sift, CellTally, LinkSimulator, McOptions,
    PulseBatchRecord,
};
pub use tracking::{phase_track_update, MismatchedCounts, PhaseTracker};

/// Intensity class of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Signal,
    Decoy,
    Vacuum,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Signal, Class::Decoy, Class::Vacuum];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Signal => "signal",
            Class::Decoy => "decoy",
            Class::Vacuum => "vacuum",
        }
    }
}

/// Mean photon numbers of the signal, weak decoy and vacuum states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensities {
    pub mu: f64,
    pub nu1: f64,
    pub nu2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probabilities {
    pub p_mu: f64,
    pub p_nu1: f64,
    pub p_nu2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Pulse repetition rate, Hz.
    pub rep_rate: f64,
    pub intensities: Intensities,
    pub probabilities: Probabilities,
    /// Detector efficiency (average of the two channels).
    pub eta_d: f64,
    /// Dark-count probability per gate, summed over both detectors.
    pub p_dc: f64,
    /// After-pulse probability.
    pub p_ap: f64,
    /// Receiver insertion loss L_B, dB.
    pub receiver_loss_db: f64,
    /// Phase-independent probability that a photon reaches the wrong detector.
    pub e_mis: f64,
    /// Throughput factor κ applied to sifted rates (gating and dead time).
    pub duty_factor: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            rep_rate: 40e6,
            intensities: Intensities {
                mu: 0.6,
                nu1: 0.1,
                nu2: 0.0,
            },
            probabilities: Probabilities {
                p_mu: 29.0 / 32.0,
                p_nu1: 2.0 / 32.0,
                p_nu2: 1.0 / 32.0,
            },
            eta_d: 0.10,
            p_dc: 3.5e-6,
            p_ap: 0.005,
            receiver_loss_db: 5.95,
            e_mis: 0.0056,
            duty_factor: 0.79,
        }
    }
}

impl SystemParams {
    pub fn intensity(&self, class: Class) -> f64 {
        match class {
            Class::Signal => self.intensities.mu,
            Class::Decoy => self.intensities.nu1,
            Class::Vacuum => self.intensities.nu2,
        }
    }

    pub fn probability(&self, class: Class) -> f64 {
        match class {
            Class::Signal => self.probabilities.p_mu,
            Class::Decoy => self.probabilities.p_nu1,
            Class::Vacuum => self.probabilities.p_nu2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("eta_d", self.eta_d),
            ("p_dc", self.p_dc),
            ("p_ap", self.p_ap),
            ("e_mis", self.e_mis),
            ("probabilities.p_mu", self.probabilities.p_mu),
            ("probabilities.p_nu1", self.probabilities.p_nu1),
            ("probabilities.p_nu2", self.probabilities.p_nu2),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("system.{name} must lie in [0, 1], got {v}")));
            }
        }
        let p = &self.probabilities;
        let total = p.p_mu + p.p_nu1 + p.p_nu2;
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("intensity probabilities sum to {total}, not 1")));
        }
        let i = &self.intensities;
        if !(i.nu2 >= 0.0 && i.nu1 > i.nu2 && i.mu > i.nu1 + i.nu2 && i.mu.is_finite()) {
            return Err(invalid(format!(
                "intensities must satisfy mu > nu1 + nu2, nu1 > nu2 >= 0 (got {}, {}, {})",
                i.mu, i.nu1, i.nu2
            )));
        }
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(invalid("system.rep_rate must be positive"));
        }
        if !(self.receiver_loss_db >= 0.0 && self.receiver_loss_db.is_finite()) {
            return Err(invalid("system.receiver_loss_db must be >= 0"));
        }
        if !(self.duty_factor > 0.0 && self.duty_factor <= 1.0) {
            return Err(invalid(format!(
                "system.duty_factor must lie in (0, 1], got {}",
                self.duty_factor
            )));
        }
        Ok(())
    }
}

/// `η = 10^{-(L_C + L_B)/10} · η_d`.
pub fn overall_efficiency(params: &SystemParams, channel_loss_db: f64) -> f64 {
    db_to_fraction(channel_loss_db + params.receiver_loss_db) * params.eta_d
}

/// Gain without after-pulses, `1 − (1 − P_dc) e^{−kη}`.
pub fn gain_no_afterpulse(k: f64, eta: f64, p_dc: f64) -> f64 {
    1.0 - (1.0 - p_dc) * (-k * eta).exp()
}

/// Analytic gains and error rates at one channel loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateModel {
    pub eta: f64,
    /// Gain without after-pulses, indexed by [`Class::index`].
    pub q0: [f64; 3],
    pub q: [f64; 3],
    /// Average gain per pulse sent.
    pub q_t: f64,
    pub e: [f64; 3],
}

impl RateModel {
    pub fn gain(&self, class: Class) -> f64 {
        self.q[class.index()]
    }

    pub fn error_rate(&self, class: Class) -> f64 {
        self.e[class.index()]
    }

    /// After-pulse click probability per pulse, `Q_t · P_ap`.
    pub fn afterpulse(&self, params: &SystemParams) -> f64 {
        self.q_t * params.p_ap
    }
}

/// Evaluates `Q_k = Q_t P_ap + Q_k⁰` and
/// `E_k = [½P_dc + e_mis(1 − e^{−kη}) + ½Q_t P_ap] / Q_k` for every intensity.
pub fn rate_model(params: &SystemParams, channel_loss_db: f64) -> Result<RateModel> {
    let eta = overall_efficiency(params, channel_loss_db);
    let mut q0 = [0.0; 3];
    for c in Class::ALL {
        q0[c.index()] = gain_no_afterpulse(params.intensity(c), eta, params.p_dc);
    }
    let q_t: f64 = Class::ALL
        .iter()
        .map(|&c| params.probability(c) * q0[c.index()])
        .sum();
    let ap = q_t * params.p_ap;
    let mut q = [0.0; 3];
    let mut e = [0.0; 3];
    for c in Class::ALL {
        let i = c.index();
        q[i] = ap + q0[i];
        if q[i] <= 0.0 {
            return Err(Error::UndefinedErrorRate(params.intensity(c)));
        }
        let k = params.intensity(c);
        e[i] = (0.5 * params.p_dc + params.e_mis * (1.0 - (-k * eta).exp()) + 0.5 * ap) / q[i];
    }
    Ok(RateModel { eta, q0, q, q_t, e })
}

/// Signal-state sifted key rate, `f · p_μ · Q_μ · ½ · κ` (bits/s).
pub fn sifted_rate(params: &SystemParams, model: &RateModel) -> f64 {
    params.rep_rate * params.probabilities.p_mu * model.gain(Class::Signal) * 0.5 * params.duty_factor
}

/// Misalignment error that makes the signal QBER equal `target_qber` at
/// `channel_loss_db`. `E_μ` is affine in `e_mis`, so this is solved directly.
pub fn calibrate_misalignment(params: &SystemParams, channel_loss_db: f64, target_qber: f64) -> Result<f64> {
    let model = rate_model(params, channel_loss_db)?;
    let mu = params.intensities.mu;
    let floor = 0.5 * params.p_dc + 0.5 * model.afterpulse(params);
    let slope = 1.0 - (-mu * model.eta).exp();
    let e_mis = (target_qber * model.gain(Class::Signal) - floor) / slope;
    if !(0.0..=0.5).contains(&e_mis) {
        return Err(invalid(format!(
            "QBER {target_qber} at {channel_loss_db} dB needs e_mis = {e_mis}, outside [0, 0.5]"
        )));
    }
    Ok(e_mis)
}

/// Duty factor that makes the signal sifted rate equal `target_bps`.
pub fn calibrate_duty_factor(params: &SystemParams, channel_loss_db: f64, target_bps: f64) -> Result<f64> {
    let model = rate_model(params, channel_loss_db)?;
    let raw = params.rep_rate * params.probabilities.p_mu * model.gain(Class::Signal) * 0.5;
    Ok(target_bps / raw)
}
