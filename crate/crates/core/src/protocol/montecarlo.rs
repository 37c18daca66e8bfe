//! Pulse-level Monte Carlo of the decoy BB84 link.
//!
//! Pulses are simulated in chunks that share one channel state. Within a chunk
//! every pulse is independent and identically distributed over the 24 cells
//! (intensity class × Alice basis × Alice bit × Bob basis), so the chunk's
//! tallies are drawn as multinomials: first the cell counts, then the
//! none/SPD1/SPD2/double outcome split inside each cell. This has exactly the
//! law of per-pulse Bernoulli sampling and costs O(cells) per chunk.
//!
//! Click model per pulse, matching the analytic rate model:
//! - one photon-induced click with probability `1 − e^{−kη}`, routed to SPD1
//!   with probability `(1 − e_mis)·I₁ + e_mis·I₂`, where `I₁, I₂` come from
//!   the SMZI Jones model with the channel's polarization and phase offset;
//! - independent noise clicks per detector from dark counts `P_dc/2` and
//!   after-pulses `Q_t·P_ap/2`.
//!
//! Each chunk draws from its own ChaCha stream (`seed`, chunk index), so
//! results do not depend on how chunks are spread over threads.

use std::f64::consts::FRAC_PI_2;
use std::ops::AddAssign;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use super::{rate_model, Class, RateModel, SystemParams};
use crate::channel::{apply_polarization, ChannelParams, ChannelProcess, ChannelState};
use crate::error::{invalid, Result};
use crate::jones::{smzi_outputs, JonesVector, PhaseSettings};
use crate::postproc::BlockStats;

pub const CELLS: usize = 24;

/// Outcome tallies for one (class, Alice basis, Alice bit, Bob basis) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CellTally {
    pub sent: u64,
    /// SPD1 fired alone.
    pub click1: u64,
    /// SPD2 fired alone.
    pub click2: u64,
    pub double: u64,
    /// Double clicks whose random bit came out as 1.
    pub double_bit1: u64,
}

impl CellTally {
    pub fn detections(&self) -> u64 {
        self.click1 + self.click2 + self.double
    }
}

impl AddAssign for CellTally {
    fn add_assign(&mut self, o: CellTally) {
        self.sent += o.sent;
        self.click1 += o.click1;
        self.click2 += o.click2;
        self.double += o.double;
        self.double_bit1 += o.double_bit1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PulseBatchRecord {
    cells: [CellTally; CELLS],
}

impl Default for PulseBatchRecord {
    fn default() -> Self {
        Self {
            cells: [CellTally::default(); CELLS],
        }
    }
}

/// Cell index; bases are 0 (phases 0/π) and 1 (phases π/2 / 3π/2).
pub fn cell_index(class: Class, alice_basis: u8, alice_bit: u8, bob_basis: u8) -> usize {
    ((class.index() * 2 + alice_basis as usize) * 2 + alice_bit as usize) * 2 + bob_basis as usize
}

fn cell_key(i: usize) -> (Class, u8, u8, u8) {
    let bob = (i & 1) as u8;
    let bit = ((i >> 1) & 1) as u8;
    let alice = ((i >> 2) & 1) as u8;
    (Class::ALL[i >> 3], alice, bit, bob)
}

impl PulseBatchRecord {
    pub fn cell(&self, class: Class, alice_basis: u8, alice_bit: u8, bob_basis: u8) -> &CellTally {
        &self.cells[cell_index(class, alice_basis, alice_bit, bob_basis)]
    }

    pub fn cell_mut(&mut self, class: Class, alice_basis: u8, alice_bit: u8, bob_basis: u8) -> &mut CellTally {
        &mut self.cells[cell_index(class, alice_basis, alice_bit, bob_basis)]
    }

    /// Iterates `((class, alice_basis, alice_bit, bob_basis), tally)`.
    pub fn iter(&self) -> impl Iterator<Item = ((Class, u8, u8, u8), &CellTally)> {
        self.cells.iter().enumerate().map(|(i, c)| (cell_key(i), c))
    }

    pub fn total_sent(&self) -> u64 {
        self.cells.iter().map(|c| c.sent).sum()
    }

    pub fn sent(&self, class: Class) -> u64 {
        self.iter().filter(|(k, _)| k.0 == class).map(|(_, c)| c.sent).sum()
    }

    pub fn detections(&self, class: Class) -> u64 {
        self.iter().filter(|(k, _)| k.0 == class).map(|(_, c)| c.detections()).sum()
    }

    /// Detections per pulse sent, over both bases.
    pub fn gain(&self, class: Class) -> f64 {
        let sent = self.sent(class);
        if sent == 0 {
            0.0
        } else {
            self.detections(class) as f64 / sent as f64
        }
    }

    pub fn merge(&mut self, other: &PulseBatchRecord) {
        for (a, b) in self.cells.iter_mut().zip(other.cells.iter()) {
            *a += *b;
        }
    }
}

impl AddAssign<&PulseBatchRecord> for PulseBatchRecord {
    fn add_assign(&mut self, rhs: &PulseBatchRecord) {
        self.merge(rhs);
    }
}

/// Basis sifting: keeps matched-basis cells and counts bit errors.
///
/// SPD1 reads as bit 1. Double clicks carry the random bit drawn at
/// simulation time.
pub fn sift(record: &PulseBatchRecord) -> BlockStats {
    let mut stats = BlockStats::default();
    for ((class, alice_basis, bit, bob_basis), c) in record.iter() {
        let k = class.index();
        stats.sent[k] += c.sent as f64;
        if alice_basis != bob_basis {
            continue;
        }
        stats.sifted[k] += c.detections() as f64;
        let errors = if bit == 0 {
            c.click1 + c.double_bit1
        } else {
            c.click2 + (c.double - c.double_bit1)
        };
        stats.errors[k] += errors as f64;
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    /// Pulses sharing one channel state; the channel advances by
    /// `pulses_per_step / rep_rate` between chunks.
    pub pulses_per_step: u64,
    /// Phase added to Bob's modulator settings (phase-tracking correction).
    pub bob_phase_correction: f64,
    /// Polarization leaving Alice's interferometer.
    pub input_polarization: JonesVector,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            pulses_per_step: 10_000,
            bob_phase_correction: 0.0,
            input_polarization: JonesVector::HORIZONTAL,
        }
    }
}

/// Outcome probabilities `[none, SPD1 only, SPD2 only, double]` per cell.
pub type CellProbabilities = [[f64; 4]; CELLS];

/// Nominal Alice and Bob phases for a cell.
pub fn nominal_phases(alice_basis: u8, alice_bit: u8, bob_basis: u8) -> PhaseSettings {
    PhaseSettings::new(
        alice_basis as f64 * FRAC_PI_2 + alice_bit as f64 * std::f64::consts::PI,
        bob_basis as f64 * FRAC_PI_2,
    )
}

/// Sequential, seeded link simulator.
#[derive(Debug, Clone)]
pub struct LinkSimulator {
    params: SystemParams,
    model: RateModel,
    channel: ChannelProcess,
    seed: u64,
    chunk: u64,
    input: JonesVector,
}

impl LinkSimulator {
    pub fn new(params: &SystemParams, channel: &ChannelParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let process = ChannelProcess::new(*channel)?;
        let model = rate_model(params, channel.loss_db)?;
        Ok(Self {
            params: *params,
            model,
            channel: process,
            seed,
            chunk: 0,
            input: JonesVector::HORIZONTAL,
        })
    }

    pub fn with_input_polarization(mut self, e: JonesVector) -> Self {
        self.input = e;
        self
    }

    /// Restarts the channel trajectory from `state`.
    pub fn with_initial_state(mut self, state: ChannelState) -> Self {
        self.channel = ChannelProcess::with_state(*self.channel.params(), state);
        self
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn rate_model(&self) -> &RateModel {
        &self.model
    }

    pub fn channel_state(&self) -> &ChannelState {
        self.channel.state()
    }

    /// Seconds of link time per pulse.
    pub fn pulse_period(&self) -> f64 {
        1.0 / self.params.rep_rate
    }

    pub fn cell_probabilities(&self, state: &ChannelState, correction: f64) -> Result<CellProbabilities> {
        cell_probabilities(&self.params, &self.model, state, &self.input, correction)
    }

    /// Simulates `n_pulses` at the current channel state, then advances the
    /// channel by their duration.
    pub fn run_chunk(&mut self, n_pulses: u64, correction: f64) -> Result<PulseBatchRecord> {
        let probs = self.cell_probabilities(self.channel.state(), correction)?;
        let record = sample_chunk(&self.params, &probs, n_pulses, self.seed, self.chunk);
        self.chunk += 1;
        if n_pulses > 0 {
            self.channel.advance(n_pulses as f64 * self.pulse_period())?;
        }
        Ok(record)
    }

    /// Advances the channel without sending pulses.
    pub fn idle(&mut self, dt: f64) -> Result<()> {
        self.channel.advance(dt)?;
        Ok(())
    }
}

pub fn cell_probabilities(
    params: &SystemParams,
    model: &RateModel,
    state: &ChannelState,
    input: &JonesVector,
    correction: f64,
) -> Result<CellProbabilities> {
    let e_in = apply_polarization(state, input);
    let mut out = [[0.0; 4]; CELLS];
    for (i, slot) in out.iter_mut().enumerate() {
        let (class, ab, bit, bb) = cell_key(i);
        let nominal = nominal_phases(ab, bit, bb);
        let phases = PhaseSettings::new(
            nominal.phi_a + state.phase_offset,
            nominal.phi_b + correction,
        );
        *slot = outcome_probabilities(params, model, &e_in, phases, params.intensity(class))?;
    }
    Ok(out)
}

/// Per-pulse `[none, SPD1 only, SPD2 only, double]` probabilities for a pulse
/// of mean photon number `k` arriving at Bob with polarization `e_in` and
/// interferometer phases `phases`.
pub fn outcome_probabilities(
    params: &SystemParams,
    model: &RateModel,
    e_in: &JonesVector,
    phases: PhaseSettings,
    k: f64,
) -> Result<[f64; 4]> {
    let noise = 1.0 - (1.0 - 0.5 * params.p_dc) * (1.0 - 0.5 * model.afterpulse(params));
    let (o1, o2) = smzi_outputs(e_in, phases)?;
    let (i1, i2) = (o1.intensity(), o2.intensity());
    let to1 = (((1.0 - params.e_mis) * i1 + params.e_mis * i2) / (i1 + i2)).clamp(0.0, 1.0);
    let light = 1.0 - (-k * model.eta).exp();
    let (l1, l2, l0) = (light * to1, light * (1.0 - to1), 1.0 - light);
    let quiet = 1.0 - noise;
    Ok([
        l0 * quiet * quiet,
        l1 * quiet + l0 * noise * quiet,
        l2 * quiet + l0 * noise * quiet,
        (l1 + l2) * noise + l0 * noise * noise,
    ])
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

/// Multinomial split of `n` over `weights` (need not be normalized).
pub(crate) fn multinomial<R: Rng, const N: usize>(rng: &mut R, n: u64, weights: &[f64; N]) -> [u64; N] {
    let mut out = [0u64; N];
    let mut remaining = n;
    let mut mass: f64 = weights.iter().sum();
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == N - 1 {
            out[i] = remaining;
            break;
        }
        let x = binomial(rng, remaining, if mass > 0.0 { w / mass } else { 0.0 });
        out[i] = x;
        remaining -= x;
        mass -= w;
    }
    out
}

/// Draws one chunk of `n_pulses` from the stream `(seed, chunk)`.
pub fn sample_chunk(
    params: &SystemParams,
    probs: &CellProbabilities,
    n_pulses: u64,
    seed: u64,
    chunk: u64,
) -> PulseBatchRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);

    let mut weights = [0.0; CELLS];
    for (i, w) in weights.iter_mut().enumerate() {
        // uniform basis and bit for Alice, uniform basis for Bob
        *w = params.probability(cell_key(i).0) / 8.0;
    }
    let sent = multinomial(&mut rng, n_pulses, &weights);

    let mut record = PulseBatchRecord::default();
    for (i, cell) in record.cells.iter_mut().enumerate() {
        let [_, c1, c2, d] = multinomial(&mut rng, sent[i], &probs[i]);
        cell.sent = sent[i];
        cell.click1 = c1;
        cell.click2 = c2;
        cell.double = d;
        cell.double_bit1 = binomial(&mut rng, d, 0.5);
    }
    record
}

/// Simulates `n_pulses` with default options.
pub fn simulate_block(
    params: &SystemParams,
    channel: &ChannelParams,
    n_pulses: u64,
    seed: u64,
) -> Result<PulseBatchRecord> {
    simulate_block_with(params, channel, n_pulses, seed, &McOptions::default())
}

/// Simulates `n_pulses` starting from a fresh channel trajectory.
///
/// The channel states are generated sequentially, then the chunks are drawn
/// in parallel and merged; the result equals running [`LinkSimulator::run_chunk`]
/// over the same chunk sequence.
pub fn simulate_block_with(
    params: &SystemParams,
    channel: &ChannelParams,
    n_pulses: u64,
    seed: u64,
    opts: &McOptions,
) -> Result<PulseBatchRecord> {
    if n_pulses == 0 {
        return Err(invalid("n_pulses must be positive"));
    }
    if opts.pulses_per_step == 0 {
        return Err(invalid("pulses_per_step must be positive"));
    }
    let sim = LinkSimulator::new(params, channel, seed)?.with_input_polarization(opts.input_polarization);
    let mut process = sim.channel.clone();
    let dt = opts.pulses_per_step as f64 * sim.pulse_period();

    let n_chunks = n_pulses.div_ceil(opts.pulses_per_step);
    let mut plan = Vec::with_capacity(n_chunks as usize);
    let mut left = n_pulses;
    for chunk in 0..n_chunks {
        let n = left.min(opts.pulses_per_step);
        plan.push((chunk, n, *process.state()));
        left -= n;
        process.step(dt);
    }

    plan.par_iter()
        .map(|(chunk, n, state)| {
            let probs = sim.cell_probabilities(state, opts.bob_phase_correction)?;
            Ok(sample_chunk(params, &probs, *n, seed, *chunk))
        })
        .try_reduce(PulseBatchRecord::default, |mut a, b| {
            a.merge(&b);
            Ok(a)
        })
}
