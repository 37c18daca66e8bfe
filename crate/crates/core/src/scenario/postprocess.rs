//! End-to-end block: Monte Carlo link with phase tracking until one block of
//! signal bits is sifted, then Cascade on keys carrying exactly the simulated
//! number of errors, the finite-key length with the measured leakage, and
//! Toeplitz privacy amplification of both parties' keys.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, positive, run_channel, stream, Report, ScenarioConfig, ScenarioKind, SummaryRow};
use crate::error::{Error, Result};
use crate::postproc::{cascade_correct_with, h2, key_report, toeplitz_hash, CascadeConfig, LeakModel};
use crate::protocol::tracking::PhaseLoop;
use crate::protocol::{sift, Class, LinkSimulator, PhaseTracker, PulseBatchRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessDemoConfig {
    pub tracking: bool,
    pub tracker: PhaseTracker,
    pub pulses_per_step: u64,
    /// Link time after which the run gives up collecting a block, seconds.
    pub max_link_s: f64,
    pub cascade: CascadeConfig,
}

impl Default for PostprocessDemoConfig {
    fn default() -> Self {
        Self {
            tracking: true,
            tracker: PhaseTracker::default(),
            pulses_per_step: 400_000,
            max_link_s: 3600.0,
            cascade: CascadeConfig::default(),
        }
    }
}

impl PostprocessDemoConfig {
    pub fn validate(&self) -> Result<()> {
        positive("postprocess_demo.max_link_s", self.max_link_s)?;
        if self.pulses_per_step == 0 {
            return Err(Error::Config("postprocess_demo.pulses_per_step must be positive".into()));
        }
        let c = &self.cascade;
        if c.passes == 0 || c.max_passes < c.passes || c.block_constant.is_nan() || c.block_constant <= 0.0 {
            return Err(Error::Config(
                "postprocess_demo.cascade needs 1 <= passes <= max_passes and block_constant > 0".into(),
            ));
        }
        self.tracker.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PostprocessRow {
    pub loss_db: f64,
    pub link_seconds: f64,
    pub block_bits: u64,
    pub block_errors: u64,
    pub qber: f64,
    pub cascade_passes: usize,
    pub cascade_leak_bits: u64,
    pub cascade_efficiency: f64,
    pub s0_lower: f64,
    pub s1_lower: f64,
    pub phi1_upper: f64,
    pub final_key_bits: u64,
    pub keys_match: bool,
    pub sifted_bps: f64,
    pub secure_bps: f64,
}

pub fn run_postprocess_demo(config: &ScenarioConfig) -> Result<Report> {
    config.validate(ScenarioKind::PostprocessDemo)?;
    let cfg = &config.scenario.postprocess_demo;
    let system = &config.system;
    let security = &config.security;
    let seed = config.seed();
    let block = security.block_size;

    let mut sim = LinkSimulator::new(system, &run_channel(config, 0), derive_seed(seed, stream::DETECTION, 0))?;
    let mut tracking = if cfg.tracking {
        Some(PhaseLoop::new(cfg.tracker)?)
    } else {
        None
    };
    let max_pulses = (cfg.max_link_s * system.rep_rate).round() as u64;
    let mut record = PulseBatchRecord::default();
    let mut sifted_signal = 0.0;
    while sifted_signal < block as f64 {
        let sent = record.total_sent();
        if sent >= max_pulses {
            return Err(Error::InsufficientData(format!(
                "collected {sifted_signal} of {block} signal bits within {} s of link time",
                cfg.max_link_s
            )));
        }
        let correction = tracking.as_ref().map_or(0.0, |l| l.correction());
        let chunk = sim.run_chunk(cfg.pulses_per_step.min(max_pulses - sent), correction)?;
        if let Some(l) = tracking.as_mut() {
            l.observe(&chunk);
        }
        record.merge(&chunk);
        sifted_signal = sift(&record).sifted[Class::Signal.index()];
    }
    let link_seconds = record.total_sent() as f64 / system.rep_rate;
    let stats = sift(&record);
    let qber = stats.qber(Class::Signal);
    let block_stats = stats.scaled(block as f64 / sifted_signal);
    let block_errors = block_stats.errors[Class::Signal.index()].round() as u64;

    // keys with exactly the simulated error count at uniformly random positions
    let n = block as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::KEY, 0));
    let key_a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let mut key_b = key_a.clone();
    let mut err_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::ERRORS, 0));
    for i in sample(&mut err_rng, n, block_errors as usize) {
        key_b[i] ^= 1;
    }

    let estimate = qber.max(1.0 / n as f64);
    let outcome = cascade_correct_with(
        &key_a,
        &key_b,
        estimate,
        derive_seed(seed, stream::CASCADE, 0),
        &cfg.cascade,
    )?;
    let sifted_bps = sifted_signal / link_seconds * system.duty_factor;
    let key = key_report(
        &block_stats,
        system,
        security,
        LeakModel::Measured(outcome.leak_bits),
        sifted_bps,
    )?;
    let ell = key.ell as usize;

    let (final_a, final_b) = if ell > 0 {
        let mut seed_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::TOEPLITZ, 0));
        let seed_bits: Vec<u8> = (0..n + ell - 1).map(|_| seed_rng.random_range(0..2u8)).collect();
        (
            toeplitz_hash(&key_a, &seed_bits, ell)?,
            toeplitz_hash(&outcome.corrected, &seed_bits, ell)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let keys_match = final_a == final_b;
    let true_qber = block_errors as f64 / n as f64;

    let row = PostprocessRow {
        loss_db: config.channel.loss_db,
        link_seconds,
        block_bits: block,
        block_errors,
        qber,
        cascade_passes: outcome.passes,
        cascade_leak_bits: outcome.leak_bits,
        cascade_efficiency: if true_qber > 0.0 {
            outcome.leak_bits as f64 / (n as f64 * h2(true_qber))
        } else {
            0.0
        },
        s0_lower: key.s0_lower,
        s1_lower: key.s1_lower,
        phi1_upper: key.phi1_upper,
        final_key_bits: ell as u64,
        keys_match,
        sifted_bps,
        secure_bps: key.skr,
    };

    let mut report = Report::new(ScenarioKind::PostprocessDemo, config);
    report.summary.rows.push(SummaryRow {
        loss_db: row.loss_db,
        sifted_bps,
        secure_bps: key.skr,
        qber,
    });
    report.metric("final_key_bits", ell as f64);
    report.metric("cascade_leak_bits", outcome.leak_bits as f64);
    report.metric("cascade_efficiency", row.cascade_efficiency);
    report.metric("keys_match", if keys_match { 1.0 } else { 0.0 });
    report.metric("link_seconds", link_seconds);
    report.table("postprocess_demo.csv", &[row])?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.security.block_size = 1 << 16;
        c
    }

    #[test]
    fn block_distills_matching_keys() {
        let report = run_postprocess_demo(&small()).unwrap();
        let m = &report.summary.metrics;
        assert_eq!(m["keys_match"], 1.0);
        assert!(m["final_key_bits"] > 0.0);
        assert!((1.0..1.5).contains(&m["cascade_efficiency"]), "{}", m["cascade_efficiency"]);
    }

    #[test]
    fn too_short_a_link_time_fails_at_runtime() {
        let mut c = small();
        c.scenario.postprocess_demo.max_link_s = 0.01;
        assert!(matches!(run_postprocess_demo(&c), Err(Error::InsufficientData(_))));
    }
}
