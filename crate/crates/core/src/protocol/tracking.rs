//! Phase tracking from mismatched-basis detections.
//!
//! With ideal BB84 phases a mismatched-basis pulse sees a nominal phase
//! difference of ±π/2 and splits 50/50 between the detectors. A residual
//! phase δ tilts the split to `½(1 ± sin δ)`, the sign set by the nominal
//! difference. Folding every mismatched cell onto the "+" orientation gives
//! `r = (C₁ − C₂)/(C₁ + C₂) ≈ sin δ`, which the tracker inverts with arcsin and
//! feeds back into Bob's modulator settings. Matched-basis (key) data are
//! never used.

use serde::{Deserialize, Serialize};

use super::montecarlo::{nominal_phases, LinkSimulator, PulseBatchRecord};
use crate::channel::wrap_phase;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseTracker {
    /// Current estimate of the channel phase offset, applied to Bob's PM.
    pub estimated_offset: f64,
    /// Mismatched-basis single clicks accumulated per update.
    pub window: u64,
    /// Loop gain.
    pub gain: f64,
}

impl Default for PhaseTracker {
    fn default() -> Self {
        Self {
            estimated_offset: 0.0,
            window: 10_000,
            gain: 1.0,
        }
    }
}

impl PhaseTracker {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(invalid("tracker.window must be positive"));
        }
        if !(self.gain > 0.0 && self.gain <= 2.0) {
            return Err(invalid(format!("tracker.gain must lie in (0, 2], got {}", self.gain)));
        }
        Ok(())
    }
}

/// Mismatched-basis single clicks, folded so that a positive residual phase
/// increases `aligned`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MismatchedCounts {
    pub aligned: u64,
    pub opposed: u64,
}

impl MismatchedCounts {
    pub fn new(aligned: u64, opposed: u64) -> Self {
        Self { aligned, opposed }
    }

    pub fn total(&self) -> u64 {
        self.aligned + self.opposed
    }

    pub fn from_record(record: &PulseBatchRecord) -> Self {
        let mut out = Self::default();
        for ((_, ab, bit, bb), c) in record.iter() {
            if ab == bb {
                continue;
            }
            let p = nominal_phases(ab, bit, bb);
            // SPD1 intensity is ½(1 + sin(Δ) sin δ) for Δ = ±π/2
            if (p.phi_a - p.phi_b).sin() > 0.0 {
                out.aligned += c.click1;
                out.opposed += c.click2;
            } else {
                out.aligned += c.click2;
                out.opposed += c.click1;
            }
        }
        out
    }

    fn add(&mut self, o: MismatchedCounts) {
        self.aligned += o.aligned;
        self.opposed += o.opposed;
    }
}

/// One tracker update. Returns the new tracker and the phase step applied,
/// or the unchanged tracker and `None` when there are no counts.
pub fn phase_track_update(tracker: &PhaseTracker, counts: MismatchedCounts) -> (PhaseTracker, Option<f64>) {
    let total = counts.total();
    if total == 0 {
        return (*tracker, None);
    }
    let r = (counts.aligned as f64 - counts.opposed as f64) / total as f64;
    let delta = r.clamp(-1.0, 1.0).asin();
    let next = PhaseTracker {
        estimated_offset: wrap_phase(tracker.estimated_offset + tracker.gain * delta),
        ..*tracker
    };
    (next, Some(delta))
}

/// Feedback loop state: accumulates mismatched counts until a window fills.
#[derive(Debug, Clone)]
pub struct PhaseLoop {
    tracker: PhaseTracker,
    pending: MismatchedCounts,
    updates: u64,
}

impl PhaseLoop {
    pub fn new(tracker: PhaseTracker) -> Result<Self> {
        tracker.validate()?;
        Ok(Self {
            tracker,
            pending: MismatchedCounts::default(),
            updates: 0,
        })
    }

    pub fn tracker(&self) -> &PhaseTracker {
        &self.tracker
    }

    pub fn correction(&self) -> f64 {
        self.tracker.estimated_offset
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Feeds one chunk's tallies; returns the phase step if an update fired.
    pub fn observe(&mut self, record: &PulseBatchRecord) -> Option<f64> {
        self.pending.add(MismatchedCounts::from_record(record));
        if self.pending.total() < self.tracker.window {
            return None;
        }
        let (next, step) = phase_track_update(&self.tracker, self.pending);
        self.tracker = next;
        self.pending = MismatchedCounts::default();
        self.updates += 1;
        step
    }
}

/// Per-chunk observation handed to [`run_closed_loop`] callers.
#[derive(Debug, Clone, Copy)]
pub struct LoopTick<'a> {
    /// Link time at the end of the chunk, seconds.
    pub time: f64,
    pub record: &'a PulseBatchRecord,
    /// Channel offset minus the applied correction during the chunk, wrapped.
    pub residual: f64,
}

/// Runs the link for `duration` seconds in chunks of `pulses_per_step`,
/// optionally with phase tracking in the loop, reporting each chunk.
pub fn run_closed_loop<F>(
    sim: &mut LinkSimulator,
    mut tracking: Option<&mut PhaseLoop>,
    duration: f64,
    pulses_per_step: u64,
    mut on_chunk: F,
) -> Result<()>
where
    F: FnMut(LoopTick<'_>) -> Result<()>,
{
    if pulses_per_step == 0 {
        return Err(invalid("pulses_per_step must be positive"));
    }
    let total = (duration * sim.params().rep_rate).round() as u64;
    let mut sent = 0u64;
    while sent < total {
        let n = pulses_per_step.min(total - sent);
        let correction = tracking.as_ref().map_or(0.0, |l| l.correction());
        let residual = wrap_phase(sim.channel_state().phase_offset - correction);
        let record = sim.run_chunk(n, correction)?;
        sent += n;
        if let Some(l) = tracking.as_deref_mut() {
            l.observe(&record);
        }
        on_chunk(LoopTick {
            time: sent as f64 / sim.params().rep_rate,
            record: &record,
            residual,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, ChannelState};
    use crate::protocol::{Class, SystemParams};
    use crate::protocol::montecarlo::sift;

    #[test]
    fn balanced_counts_leave_tracker_unchanged() {
        let t = PhaseTracker {
            estimated_offset: 0.2,
            ..Default::default()
        };
        let (next, step) = phase_track_update(&t, MismatchedCounts::new(500, 500));
        assert_eq!(step, Some(0.0));
        assert_eq!(next, t);
    }

    #[test]
    fn empty_counts_flag_no_update() {
        let t = PhaseTracker::default();
        let (next, step) = phase_track_update(&t, MismatchedCounts::default());
        assert_eq!(step, None);
        assert_eq!(next, t);
    }

    #[test]
    fn extreme_counts_stay_in_domain() {
        let (next, step) = phase_track_update(&PhaseTracker::default(), MismatchedCounts::new(10, 0));
        assert!((step.unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(next.estimated_offset.is_finite());
    }

    #[test]
    fn estimates_injected_drift() {
        let p = SystemParams {
            e_mis: 0.0,
            ..Default::default()
        };
        let ch = ChannelParams::static_loss(12.6);
        let state = ChannelState {
            phase_offset: 0.1,
            ..Default::default()
        };
        let mut sim = LinkSimulator::new(&p, &ch, 9).unwrap().with_initial_state(state);
        let mut lp = PhaseLoop::new(PhaseTracker::default()).unwrap();
        let mut step = None;
        while step.is_none() {
            let rec = sim.run_chunk(100_000, 0.0).unwrap();
            step = lp.observe(&rec);
        }
        // 3σ of arcsin(r) for ~1e4 counts
        assert!((lp.correction() - 0.1).abs() < 0.03, "{}", lp.correction());
    }

    #[test]
    fn closed_loop_holds_qber_under_drift() {
        let p = SystemParams::default();
        let ch = ChannelParams {
            loss_db: 12.6,
            phase_drift_sigma: 0.05,
            ..Default::default()
        };
        let mut sim = LinkSimulator::new(&p, &ch, 4).unwrap();
        let mut lp = PhaseLoop::new(PhaseTracker::default()).unwrap();
        let mut total = PulseBatchRecord::default();
        run_closed_loop(&mut sim, Some(&mut lp), 60.0, 400_000, |t| {
            total.merge(t.record);
            Ok(())
        })
        .unwrap();
        assert!(lp.updates() > 50);
        let e = sift(&total).qber(Class::Signal);
        assert!(e < 0.0099 * 1.3, "{e}");
    }
}
