//! C ABI for the qkdsim simulator.
//!
//! Conventions:
//! - every fallible function returns a [`QkdStatus`]; results go through out
//!   pointers, which are written only on success;
//! - `qkd_last_error_message` returns a description of the most recent
//!   failure on the calling thread;
//! - handles ([`QkdSystem`], [`QkdChannel`]) are opaque, created by a `*_new`
//!   function and released with the matching `*_free`;
//! - bit arrays are `uint8_t` per bit, each 0 or 1;
//! - panics never cross the boundary; they surface as `QKD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use qkdsim_core::channel::{apply_polarization, ChannelParams, ChannelProcess};
use qkdsim_core::jones::{smzi_outputs, visibility_u64, JonesVector, PhaseSettings};
use qkdsim_core::postproc::{cascade_correct, skr_curve, toeplitz_hash, SecurityParams};
use qkdsim_core::protocol::{rate_model, sifted_rate, Class, SystemParams};
use qkdsim_core::scenario::{self, ScenarioConfig, ScenarioKind};
use qkdsim_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QkdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A quantity is undefined for the inputs (e.g. all counts zero).
    Undefined = 3,
    CorrectionFailed = 4,
    Config = 5,
    InsufficientData = 6,
    Io = 7,
    Panic = 8,
}

/// Analytic gains and error rates at one channel loss, indexed signal, decoy, vacuum.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QkdRateModel {
    pub eta: f64,
    pub gain: [f64; 3],
    pub error_rate: [f64; 3],
    pub sifted_bps: f64,
}

/// Finite-key operating point at one channel loss.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QkdKeyRate {
    pub loss_db: f64,
    pub sifted_bps: f64,
    pub qber: f64,
    pub secure_bps: f64,
    pub key_bits_per_block: f64,
    pub phi1_upper: f64,
}

/// System and security parameters.
pub struct QkdSystem {
    system: SystemParams,
    security: SecurityParams,
}

/// A seeded fiber channel trajectory.
pub struct QkdChannel {
    process: ChannelProcess,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> QkdStatus {
    match err {
        Error::InvalidInput(_) => QkdStatus::InvalidArgument,
        Error::UndefinedVisibility | Error::UndefinedErrorRate(_) => QkdStatus::Undefined,
        Error::CorrectionFailed { .. } => QkdStatus::CorrectionFailed,
        Error::Config(_) => QkdStatus::Config,
        Error::InsufficientData(_) => QkdStatus::InsufficientData,
        Error::Io { .. } | Error::Csv { .. } | Error::Json(_) => QkdStatus::Io,
    }
}

/// Failure inside the boundary layer, before a core error exists.
struct Fault(QkdStatus, String);

impl From<Error> for Fault {
    fn from(e: Error) -> Self {
        Fault(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fault {
    Fault(QkdStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard<F>(f: F) -> QkdStatus
where
    F: FnOnce() -> Result<(), Fault>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            QkdStatus::Ok
        }
        Ok(Err(Fault(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside qkdsim");
            QkdStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fault> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fault> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fault> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fault(QkdStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn write<T>(p: *mut T, value: T, name: &str) -> Result<(), Fault> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

/// Description of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next qkdsim call on the same thread.
#[no_mangle]
pub extern "C" fn qkd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Output intensities of the receiver for an input polarization given by the
/// ellipse angles `theta`, `beta` and modulator phases `phi_a`, `phi_b`.
///
/// # Safety
/// `i1` and `i2` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_smzi_intensities(
    theta: f64,
    beta: f64,
    phi_a: f64,
    phi_b: f64,
    i1: *mut f64,
    i2: *mut f64,
) -> QkdStatus {
    guard(|| {
        let e = JonesVector::from_angles(theta, beta);
        let (o1, o2) = smzi_outputs(&e, PhaseSettings::new(phi_a, phi_b))?;
        write(i1, o1.intensity(), "i1")?;
        write(i2, o2.intensity(), "i2")
    })
}

/// Fringe visibility `(max - min) / (max + min)` of `n` detector counts.
///
/// # Safety
/// `counts` must point to `n` readable values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_visibility(counts: *const u64, n: usize, out: *mut f64) -> QkdStatus {
    guard(|| {
        let counts = slice_in(counts, n, "counts")?;
        write(out, visibility_u64(counts)?, "out")
    })
}

/// Handle with the default system and security parameters.
#[no_mangle]
pub extern "C" fn qkd_system_new_default() -> *mut QkdSystem {
    Box::into_raw(Box::new(QkdSystem {
        system: SystemParams::default(),
        security: SecurityParams::default(),
    }))
}

/// Parses a scenario config (JSON; only `system` and `security` are used)
/// into a new handle stored in `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_system_from_json(json: *const c_char, out: *mut *mut QkdSystem) -> QkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ScenarioConfig::from_json(str_in(json, "json")?)?;
        config.system.validate().map_err(|e| Fault(QkdStatus::Config, e.to_string()))?;
        config.security.validate().map_err(|e| Fault(QkdStatus::Config, e.to_string()))?;
        let handle = Box::into_raw(Box::new(QkdSystem {
            system: config.system,
            security: config.security,
        }));
        write(out, handle, "out")
    })
}

/// Releases a system handle; null is ignored.
///
/// # Safety
/// `system` must come from `qkd_system_new_default` or `qkd_system_from_json`
/// and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qkd_system_free(system: *mut QkdSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Analytic gains, error rates and signal sifted rate at `loss_db`.
///
/// # Safety
/// `system` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_rate_model(system: *const QkdSystem, loss_db: f64, out: *mut QkdRateModel) -> QkdStatus {
    guard(|| {
        let s = system.as_ref().ok_or_else(|| null("system"))?;
        let m = rate_model(&s.system, loss_db)?;
        let result = QkdRateModel {
            eta: m.eta,
            gain: Class::ALL.map(|c| m.gain(c)),
            error_rate: Class::ALL.map(|c| m.error_rate(c)),
            sifted_bps: sifted_rate(&s.system, &m),
        };
        write(out, result, "out")
    })
}

/// Finite-key secure key rate at `loss_db` for the handle's block size.
///
/// # Safety
/// `system` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_key_rate(system: *const QkdSystem, loss_db: f64, out: *mut QkdKeyRate) -> QkdStatus {
    guard(|| {
        let s = system.as_ref().ok_or_else(|| null("system"))?;
        let p = skr_curve(&s.system, &s.security, &[loss_db])?[0];
        let result = QkdKeyRate {
            loss_db: p.loss_db,
            sifted_bps: p.sifted_bps,
            qber: p.qber,
            secure_bps: p.skr_bps,
            key_bits_per_block: p.ell,
            phi1_upper: p.phi1_upper,
        };
        write(out, result, "out")
    })
}

/// New channel trajectory stored in `*out`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_channel_new(
    loss_db: f64,
    scramble_rate: f64,
    phase_drift_sigma: f64,
    seed: u64,
    out: *mut *mut QkdChannel,
) -> QkdStatus {
    guard(|| {
        let process = ChannelProcess::new(ChannelParams {
            loss_db,
            scramble_rate,
            phase_drift_sigma,
            seed,
        })?;
        write(out, Box::into_raw(Box::new(QkdChannel { process })), "out")
    })
}

/// Releases a channel handle; null is ignored.
///
/// # Safety
/// `channel` must come from `qkd_channel_new` and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qkd_channel_free(channel: *mut QkdChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Advances the channel by `dt` seconds.
///
/// # Safety
/// `channel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qkd_channel_advance(channel: *mut QkdChannel, dt: f64) -> QkdStatus {
    guard(|| {
        let c = channel.as_mut().ok_or_else(|| null("channel"))?;
        c.process.advance(dt)?;
        Ok(())
    })
}

/// Current channel phase offset (rad) and elapsed time (s).
///
/// # Safety
/// `channel` must be a live handle; `phase` and `time` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_channel_state(channel: *const QkdChannel, phase: *mut f64, time: *mut f64) -> QkdStatus {
    guard(|| {
        let c = channel.as_ref().ok_or_else(|| null("channel"))?;
        write(phase, c.process.state().phase_offset, "phase")?;
        write(time, c.process.state().time, "time")
    })
}

/// Receiver output intensities for light that left Alice with polarization
/// `theta`, `beta` and crossed the channel in its current state. The channel
/// phase offset is added to `phi_a`.
///
/// # Safety
/// `channel` must be a live handle; `i1` and `i2` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_channel_intensities(
    channel: *const QkdChannel,
    theta: f64,
    beta: f64,
    phi_a: f64,
    phi_b: f64,
    i1: *mut f64,
    i2: *mut f64,
) -> QkdStatus {
    guard(|| {
        let c = channel.as_ref().ok_or_else(|| null("channel"))?;
        let state = c.process.state();
        let e = apply_polarization(state, &JonesVector::from_angles(theta, beta));
        let (o1, o2) = smzi_outputs(&e, PhaseSettings::new(phi_a + state.phase_offset, phi_b))?;
        write(i1, o1.intensity(), "i1")?;
        write(i2, o2.intensity(), "i2")
    })
}

/// Toeplitz hash of `key` (`n` bits) with `n + out_len - 1` seed bits into `out`.
///
/// # Safety
/// `key`, `seed` and `out` must point to `n`, `seed_len` and `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qkd_toeplitz_hash(
    key: *const u8,
    n: usize,
    seed: *const u8,
    seed_len: usize,
    out: *mut u8,
    out_len: usize,
) -> QkdStatus {
    guard(|| {
        let key = slice_in(key, n, "key")?;
        let seed = slice_in(seed, seed_len, "seed")?;
        let hashed = toeplitz_hash(key, seed, out_len)?;
        slice_out(out, out_len, "out")?.copy_from_slice(&hashed);
        Ok(())
    })
}

/// Cascade reconciliation of `key_b` towards `key_a` (`n` bits each). Writes
/// Bob's corrected key to `corrected` and the disclosed bit count to `leak_bits`.
///
/// # Safety
/// `key_a`, `key_b` and `corrected` must point to `n` bytes; `leak_bits` must
/// be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qkd_cascade_correct(
    key_a: *const u8,
    key_b: *const u8,
    n: usize,
    qber_estimate: f64,
    seed: u64,
    corrected: *mut u8,
    leak_bits: *mut u64,
) -> QkdStatus {
    guard(|| {
        let a = slice_in(key_a, n, "key_a")?;
        let b = slice_in(key_b, n, "key_b")?;
        if leak_bits.is_null() {
            return Err(null("leak_bits"));
        }
        let out = slice_out(corrected, n, "corrected")?;
        let outcome = cascade_correct(a, b, qber_estimate, seed)?;
        out.copy_from_slice(&outcome.corrected);
        write(leak_bits, outcome.leak_bits, "leak_bits")
    })
}

/// Runs a scenario (`"visibility-scan"`, `"long-run"`, `"loss-sweep"` or
/// `"postprocess-demo"`) with a JSON config and writes its reports to `out_dir`.
///
/// # Safety
/// All arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn qkd_run_scenario(
    scenario_name: *const c_char,
    config_json: *const c_char,
    out_dir: *const c_char,
) -> QkdStatus {
    guard(|| {
        let kind: ScenarioKind = str_in(scenario_name, "scenario_name")?.parse()?;
        let config = ScenarioConfig::from_json(str_in(config_json, "config_json")?)?;
        let out = Path::new(str_in(out_dir, "out_dir")?);
        scenario::run(kind, &config)?.write_to(out)?;
        Ok(())
    })
}

