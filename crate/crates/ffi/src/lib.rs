//! C interface to the value codec and to trained agents.
//!
//! Every fallible function returns an [`LfStatus`]; on failure the message is
//! available from [`lf_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use labelfree::agent::{load_checkpoint, ActMode, Agent};
use labelfree::rollout::StepView;
use labelfree::value_codec::{symexp, symlog, BinSpace};
use labelfree::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Config = 4,
    Format = 5,
    Io = 6,
    Rollout = 7,
    Training = 8,
    NotApplicable = 9,
    NotReady = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: LfStatus, msg: impl Into<String>) -> LfStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> LfStatus {
    let status = match &e {
        Error::Domain(_) => LfStatus::Domain,
        Error::Config(_) => LfStatus::Config,
        Error::Training(_) | Error::DegenerateBatch(_) => LfStatus::Training,
        Error::NotReady(_) => LfStatus::NotReady,
        Error::Rollout(_) => LfStatus::Rollout,
        Error::Format(_) => LfStatus::Format,
        Error::NotApplicable(_) => LfStatus::NotApplicable,
        Error::Io(_) => LfStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), LfStatus>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(LfStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, LfStatus>;
}

impl<T> OrStatus<T> for labelfree::Result<T> {
    fn or_status(self) -> Result<T, LfStatus> {
        self.map_err(from_error)
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), LfStatus> {
    if p.is_null() {
        Err(fail(LfStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn lf_symlog(y: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = symlog(y).or_status()?;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn lf_symexp(b: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = symexp(b).or_status()?;
        Ok(())
    })
}

/// Opaque two-hot bin layout.
pub struct LfBins(BinSpace);

/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`lf_bins_free`].
#[no_mangle]
pub unsafe extern "C" fn lf_bins_new(num_bins: usize, low: f64, high: f64, use_symlog: bool, out: *mut *mut LfBins) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let bins = BinSpace::new(num_bins, low, high, use_symlog).or_status()?;
        *out = Box::into_raw(Box::new(LfBins(bins)));
        Ok(())
    })
}

/// # Safety
/// `bins` must come from [`lf_bins_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lf_bins_free(bins: *mut LfBins) {
    if !bins.is_null() {
        drop(Box::from_raw(bins));
    }
}

/// # Safety
/// `bins` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_bins_count(bins: *const LfBins) -> usize {
    bins.as_ref().map_or(0, |b| b.0.num_bins())
}

/// Writes the two-hot encoding of `y` into `probs[0..len]`; `len` must equal the bin count.
///
/// # Safety
/// `bins` must be a live handle and `probs` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_bins_encode(bins: *const LfBins, y: f64, probs: *mut f64, len: usize) -> LfStatus {
    guard(|| {
        non_null(bins, "bins")?;
        non_null(probs, "probs")?;
        let b = &(*bins).0;
        if len != b.num_bins() {
            return Err(fail(LfStatus::InvalidArgument, format!("buffer holds {len} values, space has {} bins", b.num_bins())));
        }
        let enc = b.encode_twohot(y).or_status()?;
        std::slice::from_raw_parts_mut(probs, len).copy_from_slice(&enc);
        Ok(())
    })
}

/// Expected value of a bin distribution.
///
/// # Safety
/// `bins` must be a live handle, `probs` must point to `len` doubles and
/// `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn lf_bins_decode(bins: *const LfBins, probs: *const f64, len: usize, out: *mut f64) -> LfStatus {
    guard(|| {
        non_null(bins, "bins")?;
        non_null(probs, "probs")?;
        non_null(out, "out")?;
        let p = std::slice::from_raw_parts(probs, len);
        *out = (*bins).0.decode(p).or_status()?;
        Ok(())
    })
}

/// Opaque trained agent plus the history of the episode it is playing.
pub struct LfAgent {
    agent: Agent,
    history: Vec<StepView>,
    rng: ChaCha8Rng,
}

/// Loads a checkpoint file. `seed` drives action sampling.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer; on
/// success it receives a handle to free with [`lf_agent_free`].
#[no_mangle]
pub unsafe extern "C" fn lf_agent_load(path: *const c_char, seed: u64, out: *mut *mut LfAgent) -> LfStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path).to_str().map_err(|_| fail(LfStatus::InvalidArgument, "path is not UTF-8"))?;
        let ck = load_checkpoint(Path::new(path)).or_status()?;
        let handle = LfAgent { agent: ck.agent, history: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `agent` must come from [`lf_agent_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lf_agent_free(agent: *mut LfAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// # Safety
/// `agent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_agent_obs_dim(agent: *const LfAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.agent.config().obs_dim)
}

/// # Safety
/// `agent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_agent_action_count(agent: *const LfAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.agent.config().action_count)
}

/// Forgets the history; call before a new meta-rollout.
///
/// # Safety
/// `agent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_agent_reset(agent: *mut LfAgent) -> LfStatus {
    guard(|| {
        non_null(agent, "agent")?;
        (*agent).history.clear();
        Ok(())
    })
}

/// Appends one timestep and picks the next action.
///
/// `prev_action` is negative on the first step of a meta-rollout.
///
/// # Safety
/// `agent` must be a live handle, `obs` must point to `obs_len` doubles and
/// `action` to one writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn lf_agent_step(
    agent: *mut LfAgent,
    obs: *const f64,
    obs_len: usize,
    prev_action: i32,
    prev_reward: f64,
    prev_done: bool,
    greedy: bool,
    action: *mut u32,
) -> LfStatus {
    guard(|| {
        non_null(agent, "agent")?;
        non_null(obs, "obs")?;
        non_null(action, "action")?;
        let h = &mut *agent;
        let cfg = h.agent.config();
        if obs_len != cfg.obs_dim {
            return Err(fail(LfStatus::InvalidArgument, format!("observation has {obs_len} values, agent expects {}", cfg.obs_dim)));
        }
        let prev_action = match prev_action {
            a if a < 0 => None,
            a if (a as usize) < cfg.action_count => Some(a as u16),
            a => return Err(fail(LfStatus::InvalidArgument, format!("action {a} out of range"))),
        };
        if !prev_reward.is_finite() {
            return Err(fail(LfStatus::InvalidArgument, "reward is not finite"));
        }
        h.history.push(StepView {
            obs: std::slice::from_raw_parts(obs, obs_len).iter().map(|v| *v as f32).collect(),
            prev_action,
            prev_reward: prev_reward as f32,
            prev_done,
            terminal: false,
            episode_index: 0,
            objective_mask: true,
        });
        let mode = if greedy { ActMode::Greedy } else { ActMode::Sample };
        let a = h.agent.act(&h.history, mode, &mut h.rng).or_status()?;
        *action = a as u32;
        Ok(())
    })
}
