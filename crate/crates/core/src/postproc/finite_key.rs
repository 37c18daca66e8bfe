//! Decoy-state bounds and finite-key secure key length.
//!
//! Vacuum + weak decoy bounds in the concise form for three intensities
//! `μ > ν₁ > ν₂ ≥ 0`:
//!
//! ```text
//! n±_k = e^k / p_k · (n_k ± δ(n_k)),   δ(x) = sqrt(x/2 · ln(21/ε_sec))
//! s₀ ≥ τ₀ (ν₁ n⁻_ν₂ − ν₂ n⁺_ν₁) / (ν₁ − ν₂)
//! s₁ ≥ τ₁ μ [n⁻_ν₁ − n⁺_ν₂ − (ν₁² − ν₂²)/μ² (n⁺_μ − s₀/τ₀)] / [μ(ν₁ − ν₂) − ν₁² + ν₂²]
//! v₁ ≤ τ₁ (m⁺_ν₁ − m⁻_ν₂) / (ν₁ − ν₂)
//! φ₁ ≤ v₁/s₁ + γ(ε_sec, v₁/s₁, s₁^key, s₁)
//! ℓ = ⌊s₀^key + s₁^key (1 − h₂(φ₁)) − leak_EC − 6 log₂(21/ε_sec) − log₂(2/ε_cor)⌋
//! ```
//!
//! with `τ_n = Σ_k p_k e^{−k} k^n / n!`. Deviations are taken per intensity
//! from that intensity's own count. The key is distilled from signal-state
//! bits only, so the vacuum and single-photon bounds are apportioned to the
//! signal share `p_μ e^{−μ}/τ₀` and `p_μ μ e^{−μ}/τ₁`.

use serde::Serialize;

use super::{h2, BlockStats, SecurityParams};
use crate::error::{invalid, Result};
use crate::protocol::{rate_model, sifted_rate, Class, RateModel, SystemParams};

/// Human-readable tag of the bound variant, embedded in reports.
pub const METHOD: &str = "decoy(vacuum+weak) concise bounds; per-intensity Hoeffding deviations; \
                          signal-only key; l = s0 + s1(1-h2(phi1)) - leak - 6log2(21/eps_sec) - log2(2/eps_cor)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoyBounds {
    /// Vacuum events in the signal key block (lower bound).
    pub s0_lower: f64,
    /// Single-photon events in the signal key block (lower bound).
    pub s1_lower: f64,
    /// Single-photon phase-error rate (upper bound).
    pub phi1_upper: f64,
    /// Vacuum events over all intensities.
    pub s0_total: f64,
    /// Single-photon events over all intensities.
    pub s1_total: f64,
    /// Single-photon bit errors over all intensities (upper bound).
    pub v1_upper: f64,
    /// The decoy statistics could not certify any single-photon events.
    pub degenerate: bool,
}

/// Finite-sample deviation `sqrt(x/2 · ln(21/ε))`.
pub fn hoeffding_deviation(count: f64, epsilon_sec: f64) -> f64 {
    (count.max(0.0) / 2.0 * (21.0 / epsilon_sec).ln()).sqrt()
}

/// `γ(a, b, c, d)` finite-sampling correction for the phase-error rate.
pub fn gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let b = b.clamp(1e-12, 0.5);
    let cd = c * d;
    let arg = (c + d) / (cd * (1.0 - b) * b * a * a);
    if arg <= 1.0 {
        return 0.0;
    }
    ((c + d) * (1.0 - b) * b / (cd * std::f64::consts::LN_2) * arg.log2()).sqrt()
}

fn tau(params: &SystemParams, photons: u32) -> f64 {
    Class::ALL
        .iter()
        .map(|&c| {
            let k = params.intensity(c);
            params.probability(c) * (-k).exp() * k.powi(photons as i32)
        })
        .sum()
}

pub fn decoy_bounds(stats: &BlockStats, params: &SystemParams, security: &SecurityParams) -> Result<DecoyBounds> {
    stats.validate()?;
    let s = Class::Signal.index();
    if stats.sifted[s] <= 0.0 || stats.sifted[Class::Decoy.index()] <= 0.0 {
        return Err(invalid("decoy bounds need sifted signal and decoy detections"));
    }
    let dev = |x: f64| {
        if security.finite_size {
            hoeffding_deviation(x, security.epsilon_sec)
        } else {
            0.0
        }
    };
    let weight = |c: Class| params.intensity(c).exp() / params.probability(c);
    let upper = |counts: &[f64; 3], c: Class| weight(c) * (counts[c.index()] + dev(counts[c.index()]));
    let lower = |counts: &[f64; 3], c: Class| weight(c) * (counts[c.index()] - dev(counts[c.index()]));

    let (mu, nu1, nu2) = (params.intensities.mu, params.intensities.nu1, params.intensities.nu2);
    let (tau0, tau1) = (tau(params, 0), tau(params, 1));
    let n = &stats.sifted;
    let m = &stats.errors;

    let s0 = (tau0 * (nu1 * lower(n, Class::Vacuum) - nu2 * upper(n, Class::Decoy)) / (nu1 - nu2)).max(0.0);
    let s1_raw = tau1 * mu
        * (lower(n, Class::Decoy)
            - upper(n, Class::Vacuum)
            - (nu1 * nu1 - nu2 * nu2) / (mu * mu) * (upper(n, Class::Signal) - s0 / tau0))
        / (mu * (nu1 - nu2) - nu1 * nu1 + nu2 * nu2);
    let v1 = (tau1 * (upper(m, Class::Decoy) - lower(m, Class::Vacuum)) / (nu1 - nu2)).max(0.0);

    let p_mu = params.probabilities.p_mu;
    let share0 = p_mu * (-mu).exp() / tau0;
    let share1 = p_mu * mu * (-mu).exp() / tau1;
    let block = stats.sifted[s];

    let s0_key = (s0 * share0).min(block);
    let s1_total = s1_raw.max(0.0);
    let s1_key = (s1_total * share1).min(block);

    let degenerate = s1_total <= 0.0 || v1 / s1_total >= 0.5;
    let phi1 = if degenerate {
        0.5
    } else {
        let ratio = v1 / s1_total;
        let g = if security.finite_size {
            gamma(security.epsilon_sec, ratio, s1_key, s1_total)
        } else {
            0.0
        };
        (ratio + g).min(0.5)
    };

    Ok(DecoyBounds {
        s0_lower: s0_key,
        s1_lower: if degenerate { 0.0 } else { s1_key },
        phi1_upper: phi1,
        s0_total: s0,
        s1_total,
        v1_upper: v1,
        degenerate,
    })
}

/// How the error-correction leakage is accounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum LeakModel {
    /// `f_EC · n_μ · h₂(E_μ)` with `f_EC` from the security parameters.
    Efficiency,
    /// Bits actually disclosed by the reconciliation run.
    Measured(u64),
}

/// Leakage in bits for the signal block under `leak`.
pub fn leak_bits(stats: &BlockStats, security: &SecurityParams, leak: LeakModel) -> f64 {
    match leak {
        LeakModel::Efficiency => {
            security.f_ec * stats.sifted[Class::Signal.index()] * h2(stats.qber(Class::Signal))
        }
        LeakModel::Measured(bits) => bits as f64,
    }
}

/// Secure key length in bits, floored and clamped at zero.
pub fn key_length(stats: &BlockStats, bounds: &DecoyBounds, security: &SecurityParams, leak: LeakModel) -> f64 {
    if bounds.degenerate {
        return 0.0;
    }
    let ell = bounds.s0_lower + bounds.s1_lower * (1.0 - h2(bounds.phi1_upper))
        - leak_bits(stats, security, leak)
        - 6.0 * (21.0 / security.epsilon_sec).log2()
        - (2.0 / security.epsilon_cor).log2();
    ell.floor().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyReport {
    pub s0_lower: f64,
    pub s1_lower: f64,
    pub phi1_upper: f64,
    /// Secure bits per block.
    pub ell: f64,
    /// Secure key rate, bits/s.
    pub skr: f64,
    pub leak_ec: f64,
    pub degenerate: bool,
}

/// Bounds, key length and rate for one block whose signal bits accrue at
/// `sifted_bps`.
pub fn key_report(
    stats: &BlockStats,
    params: &SystemParams,
    security: &SecurityParams,
    leak: LeakModel,
    sifted_bps: f64,
) -> Result<KeyReport> {
    let bounds = decoy_bounds(stats, params, security)?;
    let ell = key_length(stats, &bounds, security, leak);
    let block = stats.sifted[Class::Signal.index()];
    Ok(KeyReport {
        s0_lower: bounds.s0_lower,
        s1_lower: bounds.s1_lower,
        phi1_upper: bounds.phi1_upper,
        ell,
        skr: ell * sifted_bps / block,
        leak_ec: leak_bits(stats, security, leak),
        degenerate: bounds.degenerate,
    })
}

/// Expected block statistics when the signal sifted count equals `block_size`.
pub fn expected_block_stats(params: &SystemParams, model: &RateModel, block_size: f64) -> BlockStats {
    let sent_total = block_size / (params.probabilities.p_mu * model.gain(Class::Signal) * 0.5);
    let mut stats = BlockStats::default();
    for c in Class::ALL {
        let i = c.index();
        stats.sent[i] = sent_total * params.probability(c);
        stats.sifted[i] = stats.sent[i] * model.q[i] * 0.5;
        stats.errors[i] = stats.sifted[i] * model.e[i];
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub loss_db: f64,
    pub sifted_bps: f64,
    pub qber: f64,
    pub skr_bps: f64,
    pub ell: f64,
    pub phi1_upper: f64,
}

/// Analytic rate model → expected block → bounds → key length, per loss.
pub fn skr_curve(params: &SystemParams, security: &SecurityParams, losses: &[f64]) -> Result<Vec<CurvePoint>> {
    params.validate()?;
    security.validate()?;
    losses
        .iter()
        .map(|&loss| {
            let model = rate_model(params, loss)?;
            let stats = expected_block_stats(params, &model, security.block_size as f64);
            let sifted = sifted_rate(params, &model);
            let report = key_report(&stats, params, security, LeakModel::Efficiency, sifted)?;
            Ok(CurvePoint {
                loss_db: loss,
                sifted_bps: sifted,
                qber: model.error_rate(Class::Signal),
                skr_bps: report.skr,
                ell: report.ell,
                phi1_upper: report.phi1_upper,
            })
        })
        .collect()
}
