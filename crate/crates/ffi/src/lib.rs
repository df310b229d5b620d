//! C interface to `beamsweep`.
//!
//! Every function returns a [`BsStatus`]; results go through out-pointers.
//! On failure, `bs_last_error_message` returns a description that stays
//! valid until the next failing call on the same thread. Objects created
//! here must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use beamsweep::array::{AngleInterval, ArrayConfig, FadingModel, NoiseModel, PathSet};
use beamsweep::codebook::{HierarchicalCodebook, Vertex};
use beamsweep::complexity::{lambert_w0, predicted_level_samples};
use beamsweep::config::Settings;
use beamsweep::harness::{run_campaign, wilson_interval, CampaignReport};
use beamsweep::sse::{run_sse, ChannelSource, PruningVector, SseConfig};
use beamsweep::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Domain = 3,
    BudgetExhausted = 4,
    Config = 5,
    Internal = 6,
}

/// Opaque codebook handle.
pub struct BsCodebook(HierarchicalCodebook);

/// Opaque campaign report handle.
pub struct BsCampaign(CampaignReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BsStatus {
    match e {
        Error::InvalidArgument(_) | Error::InvalidState(_) => BsStatus::InvalidArgument,
        Error::Domain(_) | Error::InfiniteHardness { .. } | Error::UnboundedPrediction(_) => BsStatus::Domain,
        Error::Config(_) => BsStatus::Config,
        Error::Internal(_) | Error::Io(_) => BsStatus::Internal,
    }
}

struct Fail(BsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null() -> Fail {
    Fail(BsStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BsStatus::Internal
        }
    }
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

/// Message for the most recent failure on this thread; empty if none.
#[no_mangle]
pub extern "C" fn bs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a codebook with the averaged-steering design over
/// `[theta_min_deg, theta_max_deg]`, `m` antennas at half-wavelength spacing.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_codebook_new(
    h_levels: u32,
    theta_min_deg: f64,
    theta_max_deg: f64,
    m_antennas: usize,
    gain_db: f64,
    out: *mut *mut BsCodebook,
) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        if !(1..=16).contains(&h_levels) {
            return Err(Fail(BsStatus::InvalidArgument, "h_levels must be in 1..=16".into()));
        }
        let range = AngleInterval::from_degrees(theta_min_deg, theta_max_deg)?;
        let cfg = ArrayConfig::new(m_antennas, 0.5, false)?;
        let cb = HierarchicalCodebook::build(h_levels, range, cfg, 32 << h_levels, 10f64.powf(gain_db / 10.0))?;
        write(out, Box::into_raw(Box::new(BsCodebook(cb))))
    })
}

/// # Safety
/// `cb` must come from `bs_codebook_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_codebook_free(cb: *mut BsCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_codebook_num_vectors(cb: *const BsCodebook, out: *mut usize) -> BsStatus {
    guard(|| write(out, borrow(cb)?.0.num_vectors()))
}

/// Pointing angle of vertex `(level, index)` in radians.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_codebook_pointing_angle(
    cb: *const BsCodebook,
    level: u32,
    index: u32,
    out: *mut f64,
) -> BsStatus {
    guard(|| {
        let cb = &borrow(cb)?.0;
        let v = Vertex::new(level, index);
        if !cb.contains(v) {
            return Err(Fail(BsStatus::InvalidArgument, format!("vertex ({level}, {index}) outside codebook")));
        }
        write(out, cb.pointing_angle(v))
    })
}

/// One policy run against a single static path at `aoa_rad`. Uses the
/// default operating point (`B = C = 0.1`) with the given `epsilon`, `delta`
/// and pruning vector `p_dec`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_run_sse(
    cb: *const BsCodebook,
    p_dec: u64,
    epsilon: f64,
    delta: f64,
    snr_db: f64,
    aoa_rad: f64,
    seed: u64,
    out_leaf: *mut u32,
    out_samples: *mut u64,
) -> BsStatus {
    guard(|| {
        let cb = &borrow(cb)?.0;
        if out_leaf.is_null() || out_samples.is_null() {
            return Err(null());
        }
        let mut cfg = SseConfig::new(PruningVector::from_dec(p_dec, cb.h_levels())?);
        cfg.epsilon = epsilon;
        cfg.delta = delta;
        cfg.gain = cb.gain();
        cfg.check_invariants = false;
        let sigma2 = NoiseModel::from_snr_db(snr_db).sigma2;
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src = ChannelSource::new(cb, PathSet::single(aoa_rad), FadingModel::default(), sigma2, rng);
        let out = run_sse(&cfg, cb, &mut src, None)?;
        write(out_leaf, out.chosen_leaf)?;
        write(out_samples, out.total_samples)?;
        if out.budget_exhausted {
            return Err(Fail(BsStatus::BudgetExhausted, "per-level sample budget exhausted".into()));
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_predict_level_samples(
    h_eps: f64,
    s_size: usize,
    delta: f64,
    n_total: usize,
    out: *mut u64,
) -> BsStatus {
    guard(|| write(out, predicted_level_samples(h_eps, s_size, delta, n_total)?))
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_lambert_w0(x: f64, out: *mut f64) -> BsStatus {
    guard(|| write(out, lambert_w0(x)?))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_wilson_interval(
    p_hat: f64,
    l: usize,
    confidence: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> BsStatus {
    guard(|| {
        if out_lo.is_null() || out_hi.is_null() {
            return Err(null());
        }
        let (lo, hi) = wilson_interval(p_hat, l, confidence)?;
        write(out_lo, lo)?;
        write(out_hi, hi)
    })
}

/// Run a campaign described by a TOML configuration string (same keys as the
/// command-line tool). `threads = 0` uses every core.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_run(
    config_toml: *const c_char,
    threads: usize,
    out: *mut *mut BsCampaign,
) -> BsStatus {
    guard(|| {
        if config_toml.is_null() || out.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|_| Fail(BsStatus::InvalidArgument, "config is not UTF-8".into()))?;
        let settings = Settings::from_toml_str(text, &[])?;
        let cb = settings.build_codebook()?;
        let report = run_campaign(&settings.campaign_config(threads)?, &cb)?;
        write(out, Box::into_raw(Box::new(BsCampaign(report))))
    })
}

/// # Safety
/// `c` must come from `bs_campaign_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_free(c: *mut BsCampaign) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_num_sims(c: *const BsCampaign, out: *mut usize) -> BsStatus {
    guard(|| write(out, borrow(c)?.0.l_sims))
}

/// Fraction of runs returning a correct leaf.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_p_hat(c: *const BsCampaign, out: *mut f64) -> BsStatus {
    guard(|| write(out, borrow(c)?.0.p_hat))
}

/// Mean total samples per run.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_t_hat(c: *const BsCampaign, out: *mut f64) -> BsStatus {
    guard(|| write(out, borrow(c)?.0.t_hat))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_wilson(c: *const BsCampaign, out_lo: *mut f64, out_hi: *mut f64) -> BsStatus {
    guard(|| {
        let (lo, hi) = borrow(c)?.0.wilson;
        write(out_lo, lo)?;
        write(out_hi, hi)
    })
}

/// 1 if the interval reached the target width, 0 if `max_sims` ended the run.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_converged(c: *const BsCampaign, out: *mut i32) -> BsStatus {
    guard(|| write(out, borrow(c)?.0.converged as i32))
}

/// Length of the records CSV including the trailing NUL.
///
/// # Safety
/// `c` must be valid. `buf` may be null to query the size; otherwise it must
/// hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn bs_campaign_records_csv(
    c: *const BsCampaign,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> BsStatus {
    guard(|| {
        let mut bytes = Vec::new();
        borrow(c)?.0.write_records_csv(&mut bytes)?;
        write(out_len, bytes.len() + 1)?;
        if buf.is_null() {
            return Ok(());
        }
        if cap < bytes.len() + 1 {
            return Err(Fail(BsStatus::InvalidArgument, "buffer too small".into()));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        buf.add(bytes.len()).write(0);
        Ok(())
    })
}
