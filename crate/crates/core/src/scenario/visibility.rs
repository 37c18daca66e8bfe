//! Fringe-visibility scan: Bob's modulator voltage is stepped across the
//! configured range while Alice sends signal pulses at a fixed phase and the
//! scrambler keeps rotating the input polarization. One pass over the voltage
//! grid is a round; each round yields one visibility from the SPD1 counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, positive, run_channel, stream, Report, ScenarioConfig, ScenarioKind, SummaryRow};
use crate::channel::{apply_polarization, ChannelProcess, ChannelState};
use crate::error::{Error, Result};
use crate::jones::{visibility_u64, voltage_to_phase, JonesVector, PhaseSettings};
use crate::postproc::skr_curve;
use crate::protocol::montecarlo::{multinomial, outcome_probabilities};
use crate::protocol::{gain_no_afterpulse, overall_efficiency, RateModel, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityScanConfig {
    pub rounds: u32,
    /// Pulses sent at each voltage point.
    pub pulses_per_point: u64,
    /// Half-wave voltage of Bob's modulator, V.
    pub v_pi: f64,
    pub v_start: f64,
    pub v_stop: f64,
    pub v_step: f64,
    /// Alice's fixed phase during the scan, rad.
    pub alice_phase: f64,
    /// Phase-independent wrong-detector probability applied during the scan.
    pub misalignment: f64,
    /// Histogram bin width in visibility units.
    pub histogram_bin: f64,
}

impl Default for VisibilityScanConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            pulses_per_point: 10_000_000,
            v_pi: 2.5,
            v_start: -5.0,
            v_stop: 5.0,
            v_step: 0.05,
            alice_phase: 0.0,
            misalignment: 0.0,
            histogram_bin: 0.0005,
        }
    }
}

impl VisibilityScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.pulses_per_point == 0 {
            return Err(Error::Config("visibility_scan.rounds and pulses_per_point must be positive".into()));
        }
        positive("visibility_scan.v_pi", self.v_pi)?;
        positive("visibility_scan.v_step", self.v_step)?;
        positive("visibility_scan.histogram_bin", self.histogram_bin)?;
        if !(self.v_stop > self.v_start && self.v_start.is_finite() && self.v_stop.is_finite()) {
            return Err(Error::Config("visibility_scan needs v_start < v_stop".into()));
        }
        if !(0.0..=0.5).contains(&self.misalignment) {
            return Err(Error::Config("visibility_scan.misalignment must lie in [0, 0.5]".into()));
        }
        if !self.alice_phase.is_finite() {
            return Err(Error::Config("visibility_scan.alice_phase must be finite".into()));
        }
        Ok(())
    }

    /// Voltage grid from `v_start` to `v_stop` inclusive.
    pub fn voltages(&self) -> Vec<f64> {
        let n = ((self.v_stop - self.v_start) / self.v_step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.v_start + i as f64 * self.v_step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPointRow {
    pub round: u32,
    pub voltage: f64,
    pub phase_b: f64,
    pub spd1_counts: u64,
    pub spd2_counts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRow {
    pub round: u32,
    pub start_s: f64,
    pub visibility: f64,
    pub visibility_spd2: f64,
    pub counts_max: u64,
    pub counts_min: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub rounds: u32,
}

pub fn run_visibility_scan(config: &ScenarioConfig) -> Result<Report> {
    config.validate(ScenarioKind::VisibilityScan)?;
    let cfg = &config.scenario.visibility_scan;
    let system = SystemParams {
        e_mis: cfg.misalignment,
        ..config.system
    };
    let model = scan_model(&system, config.channel.loss_db);
    let voltages = cfg.voltages();
    let dwell = cfg.pulses_per_point as f64 / system.rep_rate;

    // the channel evolves continuously across all rounds
    let mut process = ChannelProcess::new(run_channel(config, 0))?;
    let mut states: Vec<Vec<ChannelState>> = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let mut round = Vec::with_capacity(voltages.len());
        for _ in &voltages {
            round.push(*process.state());
            process.advance(dwell)?;
        }
        states.push(round);
    }

    let seed = config.seed();
    let points: Vec<Vec<ScanPointRow>> = states
        .par_iter()
        .enumerate()
        .map(|(r, round_states)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::DETECTION, r as u64));
            voltages
                .iter()
                .zip(round_states)
                .map(|(&v, state)| {
                    let e_in = apply_polarization(state, &JonesVector::HORIZONTAL);
                    let phase_b = voltage_to_phase(v, cfg.v_pi);
                    let phases = PhaseSettings::new(cfg.alice_phase + state.phase_offset, phase_b);
                    let probs = outcome_probabilities(&system, &model, &e_in, phases, system.intensities.mu)?;
                    let [_, c1, c2, d] = multinomial(&mut rng, cfg.pulses_per_point, &probs);
                    Ok(ScanPointRow {
                        round: r as u32,
                        voltage: v,
                        phase_b,
                        spd1_counts: c1 + d,
                        spd2_counts: c2 + d,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rounds = Vec::with_capacity(points.len());
    for (r, pts) in points.iter().enumerate() {
        let c1: Vec<u64> = pts.iter().map(|p| p.spd1_counts).collect();
        let c2: Vec<u64> = pts.iter().map(|p| p.spd2_counts).collect();
        rounds.push(RoundRow {
            round: r as u32,
            start_s: states[r][0].time,
            visibility: visibility_u64(&c1)?,
            visibility_spd2: visibility_u64(&c2)?,
            counts_max: c1.iter().copied().max().unwrap_or(0),
            counts_min: c1.iter().copied().min().unwrap_or(0),
        });
    }

    let vs: Vec<f64> = rounds.iter().map(|r| r.visibility).collect();
    let n = vs.len() as f64;
    let mean = vs.iter().sum::<f64>() / n;
    let std = if vs.len() > 1 {
        (vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = vs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut report = Report::new(ScenarioKind::VisibilityScan, config);
    // no analytic row when the model is undefined (e.g. a noiseless detector)
    let analytic = match skr_curve(&config.system, &config.security, &[config.channel.loss_db]) {
        Err(Error::UndefinedErrorRate(_)) => Vec::new(),
        other => other?,
    };
    report.summary.rows = analytic
        .iter()
        .map(|p| SummaryRow {
            loss_db: p.loss_db,
            sifted_bps: p.sifted_bps,
            secure_bps: p.skr_bps,
            qber: p.qber,
        })
        .collect();
    report.metric("rounds", n);
    report.metric("voltage_points", voltages.len() as f64);
    report.metric("visibility_mean", mean);
    report.metric("visibility_std", std);
    report.metric("visibility_min", min);
    report.metric("visibility_max", max);

    let flat: Vec<ScanPointRow> = points.into_iter().flatten().collect();
    report.table("visibility_counts.csv", &flat)?;
    report.table("visibility_rounds.csv", &rounds)?;
    report.table("visibility_histogram.csv", &histogram(&vs, cfg.histogram_bin))?;
    Ok(report)
}

/// Detector model for a stream of signal pulses only: the after-pulse load
/// comes from the signal gain alone.
fn scan_model(system: &SystemParams, loss_db: f64) -> RateModel {
    let eta = overall_efficiency(system, loss_db);
    let q = gain_no_afterpulse(system.intensities.mu, eta, system.p_dc);
    RateModel {
        eta,
        q0: [q, 0.0, 0.0],
        q: [q * (1.0 + system.p_ap), 0.0, 0.0],
        q_t: q,
        e: [0.0; 3],
    }
}

/// Fixed-width histogram over bins aligned to multiples of `width`.
fn histogram(values: &[f64], width: f64) -> Vec<HistogramRow> {
    let index = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| index(v)).min().unwrap_or(0);
    let hi = values.iter().map(|&v| index(v)).max().unwrap_or(0);
    let mut rows: Vec<HistogramRow> = (lo..=hi)
        .map(|i| HistogramRow {
            bin_low: i as f64 * width,
            bin_high: (i + 1) as f64 * width,
            rounds: 0,
        })
        .collect();
    for &v in values {
        rows[(index(v) - lo) as usize].rounds += 1;
    }
    rows
}
