//! C interface. Every function returns a [`DsStatus`]; on failure the message
//! is available from [`ds_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with the matching `*_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diffsim2d::adjoint::{evaluate, Evaluation};
use diffsim2d::fd::grad_check;
use diffsim2d::forward::{simulate, static_solve, Trajectory};
use diffsim2d::io::{parse_scene, parse_scene_str, scene_to_json};
use diffsim2d::scene::{Block, Scene};
use diffsim2d::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    /// Unclassified failure (I/O and similar).
    Other = 1,
    /// Malformed or inconsistent scene input.
    Input = 2,
    /// A forward, adjoint or line-search solve failed.
    Solver = 3,
    /// A gradient check exceeded its tolerance.
    GradCheck = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    /// Buffer too small, or index out of range.
    OutOfRange = 7,
    Panic = 8,
}

/// Parameter blocks, in gradient order.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsBlock {
    Shape = 0,
    Lambda = 1,
    Mu = 2,
    Gamma = 3,
    Damping = 4,
    U0 = 5,
    V0 = 6,
}

impl From<DsBlock> for Block {
    fn from(b: DsBlock) -> Block {
        Block::ALL[b as usize]
    }
}

pub struct DsScene(Scene);

pub struct DsRun(Trajectory);

pub struct DsEvaluation(Evaluation);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => DsStatus::Input,
            3 => DsStatus::Solver,
            _ => DsStatus::Other,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {m}"));
            DsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail(
            DsStatus::OutOfRange,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and validates a scene file.
#[no_mangle]
pub unsafe extern "C" fn ds_scene_load(path: *const c_char, out: *mut *mut DsScene) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = parse_scene(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DsScene(scene)));
        Ok(())
    })
}

/// Parses a scene from a JSON string; mesh file references are resolved
/// against the working directory.
#[no_mangle]
pub unsafe extern "C" fn ds_scene_from_json(json: *const c_char, out: *mut *mut DsScene) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = parse_scene_str(str_arg(json, "json")?, None)?;
        *out = Box::into_raw(Box::new(DsScene(scene)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_scene_free(scene: *mut DsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Serializes the scene with all defaults explicit. The string must be
/// released with [`ds_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ds_scene_to_json(scene: *const DsScene, out: *mut *mut c_char) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = handle(scene, "scene")?;
        let json = scene_to_json(&s.0)?;
        *out = CString::new(json).map_err(|e| Fail(DsStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of entries in a parameter block.
#[no_mangle]
pub unsafe extern "C" fn ds_scene_param_len(scene: *const DsScene, block: DsBlock, len: *mut usize) -> DsStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        *out_arg(len, "len")? = s.0.params().block(block.into()).len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_scene_get_params(scene: *const DsScene, block: DsBlock, buf: *mut f64, len: usize) -> DsStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        copy_out(s.0.params().block(block.into()), buf, len)
    })
}

/// Replaces one parameter block; `len` must equal the block length.
#[no_mangle]
pub unsafe extern "C" fn ds_scene_set_params(scene: *mut DsScene, block: DsBlock, buf: *const f64, len: usize) -> DsStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| null("scene"))?;
        let mut q = s.0.params();
        let b: Block = block.into();
        if len != q.block(b).len() {
            return Err(Fail(
                DsStatus::OutOfRange,
                format!("{b} block has {} entries, got {len}", q.block(b).len()),
            ));
        }
        if len > 0 && buf.is_null() {
            return Err(null("buffer"));
        }
        let vals = if len == 0 { &[][..] } else { std::slice::from_raw_parts(buf, len) };
        q.block_mut(b).copy_from_slice(vals);
        let next = s.0.with_params(&q)?;
        next.validate()?;
        s.0 = next;
        Ok(())
    })
}

/// Forward simulation (a static scene stores one state with zero velocity).
#[no_mangle]
pub unsafe extern "C" fn ds_simulate(scene: *const DsScene, out: *mut *mut DsRun) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = &handle(scene, "scene")?.0;
        let traj = if s.is_transient() {
            simulate(s)?
        } else {
            let u = static_solve(s)?;
            let v = vec![0.0; u.len()];
            Trajectory {
                u: vec![u],
                v: vec![v],
                ..Default::default()
            }
        };
        *out = Box::into_raw(Box::new(DsRun(traj)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_run_free(run: *mut DsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of stored states and DOFs per state.
#[no_mangle]
pub unsafe extern "C" fn ds_run_shape(run: *const DsRun, n_states: *mut usize, n_dofs: *mut usize) -> DsStatus {
    guard(|| {
        let r = &handle(run, "run")?.0;
        *out_arg(n_states, "n_states")? = r.u.len();
        *out_arg(n_dofs, "n_dofs")? = r.u.first().map_or(0, |u| u.len());
        Ok(())
    })
}

/// Copies displacement and velocity of state `index`; either buffer may be null.
#[no_mangle]
pub unsafe extern "C" fn ds_run_state(run: *const DsRun, index: usize, u: *mut f64, v: *mut f64, len: usize) -> DsStatus {
    guard(|| {
        let r = &handle(run, "run")?.0;
        if index >= r.u.len() {
            return Err(Fail(
                DsStatus::OutOfRange,
                format!("state {index} of {}", r.u.len()),
            ));
        }
        if !u.is_null() {
            copy_out(&r.u[index], u, len)?;
        }
        if !v.is_null() {
            copy_out(&r.v[index], v, len)?;
        }
        Ok(())
    })
}

/// Objective value and adjoint gradient of the scene's objective.
#[no_mangle]
pub unsafe extern "C" fn ds_evaluate(scene: *const DsScene, out: *mut *mut DsEvaluation) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ev = evaluate(&handle(scene, "scene")?.0)?;
        *out = Box::into_raw(Box::new(DsEvaluation(ev)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_evaluation_free(ev: *mut DsEvaluation) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ds_evaluation_value(ev: *const DsEvaluation, value: *mut f64) -> DsStatus {
    guard(|| {
        *out_arg(value, "value")? = handle(ev, "evaluation")?.0.value;
        Ok(())
    })
}

/// Wall times in seconds of the forward solve and of the adjoint pass.
#[no_mangle]
pub unsafe extern "C" fn ds_evaluation_times(ev: *const DsEvaluation, forward: *mut f64, adjoint: *mut f64) -> DsStatus {
    guard(|| {
        let e = &handle(ev, "evaluation")?.0;
        *out_arg(forward, "forward")? = e.forward_time;
        *out_arg(adjoint, "adjoint")? = e.adjoint_time;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_evaluation_gradient(ev: *const DsEvaluation, block: DsBlock, buf: *mut f64, len: usize) -> DsStatus {
    guard(|| {
        let e = &handle(ev, "evaluation")?.0;
        copy_out(e.gradient.block(block.into()), buf, len)
    })
}

/// Finite-difference check of one block over `directions` random directions.
/// Returns [`DsStatus::GradCheck`] when any direction exceeds the tolerance;
/// `max_rel_error` is written in both cases.
#[no_mangle]
pub unsafe extern "C" fn ds_grad_check(
    scene: *const DsScene,
    block: DsBlock,
    directions: usize,
    seed: u64,
    max_rel_error: *mut f64,
) -> DsStatus {
    guard(|| {
        let s = &handle(scene, "scene")?.0;
        let out = out_arg(max_rel_error, "max_rel_error")?;
        let gc = grad_check(s, &[block.into()], directions, seed, None)?;
        *out = gc.rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
        if gc.passed() {
            Ok(())
        } else {
            Err(Fail(
                DsStatus::GradCheck,
                format!("max relative error {:.3e}", *out),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_order_matches_core() {
        let all = [
            DsBlock::Shape,
            DsBlock::Lambda,
            DsBlock::Mu,
            DsBlock::Gamma,
            DsBlock::Damping,
            DsBlock::U0,
            DsBlock::V0,
        ];
        for (k, b) in all.into_iter().enumerate() {
            assert_eq!(Block::from(b), Block::ALL[k]);
        }
    }

    #[test]
    fn status_follows_error_class() {
        let Fail(s, _) = Fail::from(Error::schema("/x", "bad"));
        assert_eq!(s, DsStatus::Input);
        let Fail(s, _) = Fail::from(Error::SingularSystem { step: None });
        assert_eq!(s, DsStatus::Solver);
    }

    #[test]
    fn panics_become_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, DsStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ds_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), DsStatus::Ok);
        assert!(ds_last_error().is_null());
    }
}
