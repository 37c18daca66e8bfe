//! Long continuous operation with scrambler, phase drift and (optionally) the
//! phase-tracking loop.
//!
//! `duration_s / compression` seconds of link time are simulated continuously
//! at the real pulse rate; the reported time axis is stretched back by
//! `compression`. Statistics are accumulated into fine bins and aggregated
//! into coarse bins, each with its own finite-key rate for a block scaled to
//! the configured block size.

use serde::{Deserialize, Serialize};

use super::{derive_seed, positive, run_channel, stream, Report, ScenarioConfig, ScenarioKind, SummaryRow};
use crate::channel::wrap_phase;
use crate::error::{Error, Result};
use crate::postproc::{key_report, BlockStats, LeakModel, SecurityParams};
use crate::protocol::tracking::PhaseLoop;
use crate::protocol::{sift, Class, LinkSimulator, PhaseTracker, PulseBatchRecord, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongRunConfig {
    /// Reported operating time, seconds.
    pub duration_s: f64,
    /// Reported seconds per simulated second.
    pub compression: f64,
    pub tracking: bool,
    pub tracker: PhaseTracker,
    /// Pulses sharing one channel state.
    pub pulses_per_step: u64,
    /// Coarse averaging window in reported seconds.
    pub bin_s: f64,
    /// Fine resolution in reported seconds; must divide `bin_s`.
    pub fine_bin_s: f64,
}

impl Default for LongRunConfig {
    fn default() -> Self {
        Self {
            duration_s: 10.0 * 86_400.0,
            compression: 1000.0,
            tracking: true,
            tracker: PhaseTracker::default(),
            pulses_per_step: 400_000,
            bin_s: 3.0 * 3600.0,
            fine_bin_s: 300.0,
        }
    }
}

impl LongRunConfig {
    pub fn validate(&self) -> Result<()> {
        positive("long_run.duration_s", self.duration_s)?;
        positive("long_run.compression", self.compression)?;
        positive("long_run.bin_s", self.bin_s)?;
        positive("long_run.fine_bin_s", self.fine_bin_s)?;
        if self.pulses_per_step == 0 {
            return Err(Error::Config("long_run.pulses_per_step must be positive".into()));
        }
        let ratio = self.bin_s / self.fine_bin_s;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config("long_run.fine_bin_s must divide bin_s".into()));
        }
        self.tracker.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn fine_per_bin(&self) -> usize {
        (self.bin_s / self.fine_bin_s).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinRow {
    pub start_h: f64,
    pub end_h: f64,
    pub pulses: u64,
    pub gain_signal: f64,
    pub gain_decoy: f64,
    pub gain_vacuum: f64,
    pub qber_signal: f64,
    pub qber_decoy: f64,
    pub qber_vacuum: f64,
    pub sifted_bps: f64,
    pub secure_bps: f64,
    /// RMS of the uncorrected channel phase seen by the pulses, rad.
    pub residual_phase_rms: f64,
    pub tracker_offset: f64,
}

/// Statistics accumulated over one bin.
#[derive(Debug, Clone, Default)]
struct Accumulator {
    record: PulseBatchRecord,
    link_seconds: f64,
    residual_sq: f64,
}

impl Accumulator {
    fn merge(&mut self, other: &Accumulator) {
        self.record.merge(&other.record);
        self.link_seconds += other.link_seconds;
        self.residual_sq += other.residual_sq;
    }

    fn row(
        &self,
        start: f64,
        end: f64,
        system: &SystemParams,
        security: &SecurityParams,
        tracker_offset: f64,
    ) -> Result<BinRow> {
        let stats = sift(&self.record);
        let pulses = self.record.total_sent();
        let (sifted_bps, secure_bps) = rates(&stats, self.link_seconds, system, security)?;
        Ok(BinRow {
            start_h: start / 3600.0,
            end_h: end / 3600.0,
            pulses,
            gain_signal: self.record.gain(Class::Signal),
            gain_decoy: self.record.gain(Class::Decoy),
            gain_vacuum: self.record.gain(Class::Vacuum),
            qber_signal: stats.qber(Class::Signal),
            qber_decoy: stats.qber(Class::Decoy),
            qber_vacuum: stats.qber(Class::Vacuum),
            sifted_bps,
            secure_bps,
            residual_phase_rms: if pulses > 0 {
                (self.residual_sq / pulses as f64).sqrt()
            } else {
                0.0
            },
            tracker_offset,
        })
    }
}

/// Signal sifted rate and finite-key rate of a block with the measured
/// statistics, scaled to the configured block size.
fn rates(stats: &BlockStats, seconds: f64, system: &SystemParams, security: &SecurityParams) -> Result<(f64, f64)> {
    let sifted = stats.sifted[Class::Signal.index()];
    if sifted <= 0.0 || seconds <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let sifted_bps = sifted / seconds * system.duty_factor;
    let block = stats.scaled(security.block_size as f64 / sifted);
    let report = key_report(&block, system, security, LeakModel::Efficiency, sifted_bps)?;
    Ok((sifted_bps, report.skr))
}

pub fn run_long_run(config: &ScenarioConfig) -> Result<Report> {
    config.validate(ScenarioKind::LongRun)?;
    let cfg = &config.scenario.long_run;
    let system = &config.system;
    let security = &config.security;

    let mut sim = LinkSimulator::new(
        system,
        &run_channel(config, 0),
        derive_seed(config.seed(), stream::DETECTION, 0),
    )?;
    let mut tracking = if cfg.tracking {
        Some(PhaseLoop::new(cfg.tracker)?)
    } else {
        None
    };

    let fine_link_s = cfg.fine_bin_s / cfg.compression;
    let fine_pulses = (fine_link_s * system.rep_rate).round() as u64;
    if fine_pulses == 0 {
        return Err(Error::Config("long_run.fine_bin_s / compression is shorter than one pulse".into()));
    }
    let n_fine = (cfg.duration_s / cfg.fine_bin_s).ceil() as usize;
    let per_bin = cfg.fine_per_bin();

    let mut fine_rows = Vec::with_capacity(n_fine);
    let mut coarse_rows = Vec::with_capacity(n_fine.div_ceil(per_bin));
    let mut coarse = Accumulator::default();
    let mut coarse_start = 0.0;
    let mut total = Accumulator::default();

    for f in 0..n_fine {
        let start = f as f64 * cfg.fine_bin_s;
        let end = ((f + 1) as f64 * cfg.fine_bin_s).min(cfg.duration_s);
        let pulses = if end < start + cfg.fine_bin_s {
            ((end - start) / cfg.compression * system.rep_rate).round() as u64
        } else {
            fine_pulses
        };

        let mut fine = Accumulator::default();
        let mut left = pulses;
        while left > 0 {
            let n = left.min(cfg.pulses_per_step);
            let correction = tracking.as_ref().map_or(0.0, |l| l.correction());
            let residual = wrap_phase(sim.channel_state().phase_offset - correction);
            let record = sim.run_chunk(n, correction)?;
            if let Some(l) = tracking.as_mut() {
                l.observe(&record);
            }
            fine.record.merge(&record);
            fine.residual_sq += residual * residual * n as f64;
            left -= n;
        }
        fine.link_seconds = pulses as f64 / system.rep_rate;

        let offset = tracking.as_ref().map_or(0.0, |l| l.correction());
        fine_rows.push(fine.row(start, end, system, security, offset)?);
        coarse.merge(&fine);
        total.merge(&fine);
        if (f + 1) % per_bin == 0 || f + 1 == n_fine {
            coarse_rows.push(coarse.row(coarse_start, end, system, security, offset)?);
            coarse = Accumulator::default();
            coarse_start = end;
        }
    }

    let stats = sift(&total.record);
    let (sifted_bps, _) = rates(&stats, total.link_seconds, system, security)?;
    let mean_secure = coarse_rows.iter().map(|r| r.secure_bps).sum::<f64>() / coarse_rows.len() as f64;
    let mean_of = |f: fn(&BinRow) -> f64| coarse_rows.iter().map(f).sum::<f64>() / coarse_rows.len() as f64;

    let mut report = Report::new(ScenarioKind::LongRun, config);
    report.summary.rows.push(SummaryRow {
        loss_db: config.channel.loss_db,
        sifted_bps,
        secure_bps: mean_secure,
        qber: stats.qber(Class::Signal),
    });
    report.metric("link_seconds", total.link_seconds);
    report.metric("qber_signal", stats.qber(Class::Signal));
    report.metric("qber_decoy", stats.qber(Class::Decoy));
    report.metric("qber_vacuum", stats.qber(Class::Vacuum));
    report.metric("qber_signal_bin_mean", mean_of(|r| r.qber_signal));
    report.metric(
        "qber_signal_bin_max",
        coarse_rows.iter().map(|r| r.qber_signal).fold(0.0, f64::max),
    );
    report.metric("gain_signal", total.record.gain(Class::Signal));
    report.metric(
        "residual_phase_rms",
        (total.residual_sq / total.record.total_sent().max(1) as f64).sqrt(),
    );
    report.metric(
        "tracker_updates",
        tracking.as_ref().map_or(0.0, |l| l.updates() as f64),
    );
    report.table("long_run_bins.csv", &coarse_rows)?;
    report.table("long_run_fine.csv", &fine_rows)?;
    Ok(report)
}
