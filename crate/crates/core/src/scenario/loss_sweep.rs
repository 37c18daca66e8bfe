//! Key rate versus channel loss: the analytic model evaluated at the table
//! losses and over a fine grid, optionally cross-checked by Monte Carlo blocks
//! at each table loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, positive, run_channel, stream, Report, ScenarioConfig, ScenarioKind, SummaryRow};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::postproc::{expected_block_stats, key_report, skr_curve, LeakModel};
use crate::protocol::{
    calibrate_duty_factor, calibrate_misalignment, rate_model, sifted_rate, simulate_block_with, Class, McOptions,
    SystemParams,
};

/// Reference measurement used to fix `e_mis` and the duty factor before the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub loss_db: f64,
    /// Signal QBER to reproduce, fraction.
    pub qber: f64,
    /// Signal sifted rate to reproduce, bits/s.
    pub sifted_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossGrid {
    pub start_db: f64,
    pub stop_db: f64,
    pub step_db: f64,
}

impl LossGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop_db - self.start_db) / self.step_db + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start_db + i as f64 * self.step_db).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSweepConfig {
    pub losses_db: Vec<f64>,
    pub curve: LossGrid,
    pub calibration: Option<Calibration>,
    /// Run a Monte Carlo block at every entry of `losses_db`.
    pub monte_carlo: bool,
    pub mc_pulses: u64,
    pub mc_pulses_per_step: u64,
}

impl Default for LossSweepConfig {
    fn default() -> Self {
        Self {
            losses_db: vec![10.0, 12.6, 15.0, 20.0, 25.0],
            curve: LossGrid {
                start_db: 0.0,
                stop_db: 40.0,
                step_db: 0.5,
            },
            calibration: None,
            monte_carlo: false,
            mc_pulses: 100_000_000,
            mc_pulses_per_step: 10_000,
        }
    }
}

impl LossSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.losses_db.is_empty() {
            return Err(Error::Config("loss_sweep.losses_db must not be empty".into()));
        }
        if let Some(&bad) = self.losses_db.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Config(format!("loss_sweep.losses_db entry {bad} must be >= 0")));
        }
        positive("loss_sweep.curve.step_db", self.curve.step_db)?;
        if !(self.curve.start_db >= 0.0 && self.curve.stop_db >= self.curve.start_db && self.curve.stop_db.is_finite()) {
            return Err(Error::Config("loss_sweep.curve needs 0 <= start_db <= stop_db".into()));
        }
        if let Some(c) = &self.calibration {
            positive("loss_sweep.calibration.qber", c.qber)?;
            positive("loss_sweep.calibration.sifted_bps", c.sifted_bps)?;
            if !(c.loss_db >= 0.0 && c.loss_db.is_finite()) {
                return Err(Error::Config("loss_sweep.calibration.loss_db must be >= 0".into()));
            }
        }
        if self.monte_carlo && (self.mc_pulses == 0 || self.mc_pulses_per_step == 0) {
            return Err(Error::Config("loss_sweep.mc_pulses and mc_pulses_per_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub loss_db: f64,
    pub sifted_bps: f64,
    pub secure_bps: f64,
    pub qber_signal: f64,
    pub qber_decoy: f64,
    pub qber_vacuum: f64,
    pub gain_signal: f64,
    pub gain_decoy: f64,
    pub gain_vacuum: f64,
    pub s1_lower: f64,
    pub phi1_upper: f64,
    pub key_bits_per_block: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub loss_db: f64,
    pub sifted_bps: f64,
    pub secure_bps: f64,
    pub qber: f64,
}

/// Monte Carlo estimate against the model; `z_*` are deviations in binomial σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRow {
    pub loss_db: f64,
    pub pulses: u64,
    pub class: &'static str,
    pub sent: u64,
    pub gain_mc: f64,
    pub gain_model: f64,
    pub z_gain: f64,
    pub qber_mc: f64,
    pub qber_model: f64,
    pub z_qber: f64,
}

/// System parameters after applying the calibration, if any.
pub fn calibrated_system(system: &SystemParams, calibration: Option<&Calibration>) -> Result<SystemParams> {
    let Some(c) = calibration else {
        return Ok(*system);
    };
    let e_mis = calibrate_misalignment(system, c.loss_db, c.qber)?;
    let with_emis = SystemParams { e_mis, ..*system };
    let duty_factor = calibrate_duty_factor(&with_emis, c.loss_db, c.sifted_bps)?;
    Ok(SystemParams {
        duty_factor,
        ..with_emis
    })
}

fn sweep_row(system: &SystemParams, config: &ScenarioConfig, loss: f64) -> Result<SweepRow> {
    let model = rate_model(system, loss)?;
    let stats = expected_block_stats(system, &model, config.security.block_size as f64);
    let sifted = sifted_rate(system, &model);
    let report = key_report(&stats, system, &config.security, LeakModel::Efficiency, sifted)?;
    Ok(SweepRow {
        loss_db: loss,
        sifted_bps: sifted,
        secure_bps: report.skr,
        qber_signal: model.error_rate(Class::Signal),
        qber_decoy: model.error_rate(Class::Decoy),
        qber_vacuum: model.error_rate(Class::Vacuum),
        gain_signal: model.gain(Class::Signal),
        gain_decoy: model.gain(Class::Decoy),
        gain_vacuum: model.gain(Class::Vacuum),
        s1_lower: report.s1_lower,
        phi1_upper: report.phi1_upper,
        key_bits_per_block: report.ell,
    })
}

/// Monte Carlo block at `loss` with the configured scrambler; the channel
/// phase is held fixed, standing in for an ideally tracked link.
fn mc_rows(system: &SystemParams, config: &ScenarioConfig, index: usize, loss: f64) -> Result<Vec<McRow>> {
    let cfg = &config.scenario.loss_sweep;
    let channel = ChannelParams {
        loss_db: loss,
        phase_drift_sigma: 0.0,
        ..run_channel(config, index as u64)
    };
    let opts = McOptions {
        pulses_per_step: cfg.mc_pulses_per_step,
        ..Default::default()
    };
    let seed = derive_seed(config.seed(), stream::DETECTION, index as u64);
    let record = simulate_block_with(system, &channel, cfg.mc_pulses, seed, &opts)?;
    let stats = crate::protocol::sift(&record);
    let model = rate_model(system, loss)?;
    Ok(Class::ALL
        .iter()
        .map(|&c| {
            let i = c.index();
            let sent = record.sent(c);
            let gain_mc = record.gain(c);
            let gain_model = model.gain(c);
            let sigma_q = (gain_model * (1.0 - gain_model) / sent.max(1) as f64).sqrt();
            let sifted = stats.sifted[i];
            let qber_mc = stats.qber(c);
            let qber_model = model.error_rate(c);
            let sigma_e = (qber_model * (1.0 - qber_model) / sifted.max(1.0)).sqrt();
            let z = |x: f64, m: f64, s: f64| if s > 0.0 { (x - m) / s } else { 0.0 };
            McRow {
                loss_db: loss,
                pulses: cfg.mc_pulses,
                class: c.name(),
                sent,
                gain_mc,
                gain_model,
                z_gain: z(gain_mc, gain_model, sigma_q),
                qber_mc,
                qber_model,
                z_qber: z(qber_mc, qber_model, sigma_e),
            }
        })
        .collect())
}

pub fn run_loss_sweep(config: &ScenarioConfig) -> Result<Report> {
    config.validate(ScenarioKind::LossSweep)?;
    let cfg = &config.scenario.loss_sweep;
    let system = calibrated_system(&config.system, cfg.calibration.as_ref())?;

    let table: Vec<SweepRow> = cfg
        .losses_db
        .iter()
        .map(|&l| sweep_row(&system, config, l))
        .collect::<Result<_>>()?;
    let curve: Vec<CurveRow> = skr_curve(&system, &config.security, &cfg.curve.points())?
        .into_iter()
        .map(|p| CurveRow {
            loss_db: p.loss_db,
            sifted_bps: p.sifted_bps,
            secure_bps: p.skr_bps,
            qber: p.qber,
        })
        .collect();

    let mut report = Report::new(ScenarioKind::LossSweep, config);
    report.summary.rows = table
        .iter()
        .map(|r| SummaryRow {
            loss_db: r.loss_db,
            sifted_bps: r.sifted_bps,
            secure_bps: r.secure_bps,
            qber: r.qber_signal,
        })
        .collect();
    report.metric("e_mis", system.e_mis);
    report.metric("duty_factor", system.duty_factor);
    let cutoff = curve
        .iter()
        .filter(|p| p.secure_bps > 0.0)
        .map(|p| p.loss_db)
        .fold(f64::NAN, f64::max);
    if cutoff.is_finite() {
        report.metric("max_positive_loss_db", cutoff);
    }
    report.table("loss_sweep_table.csv", &table)?;
    report.table("loss_sweep_curve.csv", &curve)?;

    if cfg.monte_carlo {
        let mc: Vec<McRow> = cfg
            .losses_db
            .par_iter()
            .enumerate()
            .map(|(i, &l)| mc_rows(&system, config, i, l))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let max_z = mc
            .iter()
            .map(|r| r.z_gain.abs().max(r.z_qber.abs()))
            .fold(0.0, f64::max);
        report.metric("mc_max_abs_z", max_z);
        report.table("loss_sweep_mc.csv", &mc)?;
    }
    Ok(report)
}
