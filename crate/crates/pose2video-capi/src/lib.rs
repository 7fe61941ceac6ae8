//! C bindings for the pose2video pipeline.
//!
//! Every fallible function returns a [`P2vStatus`]. On any status other than
//! `Ok` a human-readable message is recorded in thread-local storage and can
//! be read with [`p2v_last_error`]. Pointers returned by the library stay
//! valid as documented per function; handles must be released exactly once
//! with their matching close function.
//!
//! Image buffers are `float` arrays in channel-major layout `(3, height,
//! width)` with values in `[0, 1]`. Keypoint buffers are `(x, y, confidence)`
//! triplets, one per joint, in canvas pixel coordinates; a confidence of zero
//! or less marks the joint as undetected.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pose2video::data::Frame;
use pose2video::infer::InferencePipeline;
use pose2video::metrics::ssim;
use pose2video::pose::{
    default_thickness, rasterize_pose_map, Keypoint, PoseSkeleton, SkeletonTopology,
};

/// Result of every fallible call. Anything other than `Ok` leaves a message
/// readable via `p2v_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2vStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was structurally invalid (wrong length, bad value).
    InvalidArgument = 3,
    /// An output buffer was too small for the result.
    BufferTooSmall = 4,
    /// The underlying operation failed; see `p2v_last_error`.
    OperationFailed = 5,
    /// A panic was caught at the language boundary.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: P2vStatus, message: impl AsRef<str>) -> P2vStatus {
    set_error(message.as_ref());
    status
}

fn core_error(e: pose2video::Error) -> P2vStatus {
    fail(P2vStatus::OperationFailed, e.to_string())
}

/// Run a body under `catch_unwind`, converting panics into `P2vStatus::Panic`.
fn guarded(f: impl FnOnce() -> Result<(), P2vStatus>) -> P2vStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => P2vStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(P2vStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn utf8_arg<'a>(name: &str, ptr: *const c_char) -> Result<&'a str, P2vStatus> {
    if ptr.is_null() {
        return Err(fail(P2vStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(P2vStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn out_ref<'a, T>(name: &str, ptr: *mut T) -> Result<&'a mut T, P2vStatus> {
    ptr.as_mut()
        .ok_or_else(|| fail(P2vStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a>(
    name: &str,
    ptr: *const f32,
    len: usize,
) -> Result<&'a [f32], P2vStatus> {
    if ptr.is_null() {
        return Err(fail(P2vStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_slice<'a>(
    name: &str,
    ptr: *mut f32,
    len: usize,
) -> Result<&'a mut [f32], P2vStatus> {
    if ptr.is_null() {
        return Err(fail(P2vStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Parse `(x, y, confidence)` triplets into a skeleton for the builtin body.
fn skeleton_from_triplets(keypoints: &[f32], topology: &SkeletonTopology) -> Result<PoseSkeleton, P2vStatus> {
    let expected = topology.joint_count() * 3;
    if keypoints.len() != expected {
        return Err(fail(
            P2vStatus::InvalidArgument,
            format!(
                "expected {expected} floats ({} joints x 3), got {}",
                topology.joint_count(),
                keypoints.len()
            ),
        ));
    }
    let joints = keypoints
        .chunks_exact(3)
        .map(|t| Keypoint {
            x: t[0],
            y: t[1],
            confidence: t[2],
        })
        .collect();
    Ok(PoseSkeleton::new(joints, 0))
}

fn frame_from_planes(data: &[f32], height: usize, width: usize) -> Result<Frame, P2vStatus> {
    let arr = ndarray_from(data, height, width)?;
    Ok(Frame::from_array(arr))
}

fn ndarray_from(
    data: &[f32],
    height: usize,
    width: usize,
) -> Result<ndarray::Array3<f32>, P2vStatus> {
    ndarray::Array3::from_shape_vec((3, height, width), data.to_vec())
        .map_err(|e| fail(P2vStatus::InvalidArgument, format!("bad image buffer: {e}")))
}

// ---------------------------------------------------------------------------
// Library-level queries
// ---------------------------------------------------------------------------

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn p2v_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on the calling thread, as a
/// NUL-terminated string. Empty until a call fails. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn p2v_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Number of joints in the builtin skeleton (one `(x, y, confidence)` triplet
/// each).
#[no_mangle]
pub extern "C" fn p2v_pose_joint_count() -> u32 {
    SkeletonTopology::builtin_15().joint_count() as u32
}

/// Number of channels in a rasterized pose map (one per body part).
#[no_mangle]
pub extern "C" fn p2v_pose_map_channels() -> u32 {
    SkeletonTopology::builtin_15().part_count() as u32
}

// ---------------------------------------------------------------------------
// Stateless utilities
// ---------------------------------------------------------------------------

/// Rasterize one skeleton into part-channel occupancy maps.
///
/// `keypoints` holds `3 * p2v_pose_joint_count()` floats in canvas pixels.
/// `thickness` is the stroke width in pixels; pass 0 to use the default for
/// the canvas height. `out` receives `p2v_pose_map_channels() * height *
/// width` floats (0 or 1), channel-major.
///
/// # Safety
/// `keypoints` must point to `keypoint_len` readable floats and `out` to
/// `out_len` writable floats; the ranges must not overlap.
#[no_mangle]
pub unsafe extern "C" fn p2v_rasterize_pose(
    keypoints: *const f32,
    keypoint_len: usize,
    height: u32,
    width: u32,
    thickness: f32,
    out: *mut f32,
    out_len: usize,
) -> P2vStatus {
    let keypoints = match slice_arg("keypoints", keypoints, keypoint_len) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let out = match out_slice("out", out, out_len) {
        Ok(s) => s,
        Err(e) => return e,
    };
    guarded(|| {
        let topology = SkeletonTopology::builtin_15();
        let (h, w) = (height as usize, width as usize);
        let needed = topology.part_count() * h * w;
        if out.len() < needed {
            return Err(fail(
                P2vStatus::BufferTooSmall,
                format!("out needs {needed} floats, got {}", out.len()),
            ));
        }
        let skeleton = skeleton_from_triplets(keypoints, &topology)?;
        let thickness = if thickness == 0.0 {
            default_thickness(h)
        } else {
            thickness
        };
        let map = rasterize_pose_map(&skeleton, &topology, (h, w), thickness)
            .map_err(core_error)?;
        for (dst, src) in out.iter_mut().zip(map.data().iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Structural similarity between two images of the same size, both given as
/// `3 * height * width` floats in `[0, 1]`, channel-major. Writes a value in
/// `[-1, 1]` to `out`.
///
/// # Safety
/// `a` and `b` must each point to `3 * height * width` readable floats and
/// `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn p2v_ssim(
    a: *const f32,
    b: *const f32,
    height: u32,
    width: u32,
    out: *mut f64,
) -> P2vStatus {
    let len = 3 * height as usize * width as usize;
    let a = match slice_arg("a", a, len) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let b = match slice_arg("b", b, len) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let out = match out_ref("out", out) {
        Ok(r) => r,
        Err(e) => return e,
    };
    guarded(|| {
        let fa = frame_from_planes(a, height as usize, width as usize)?;
        let fb = frame_from_planes(b, height as usize, width as usize)?;
        *out = ssim(&fa, &fb).map_err(core_error)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Pipeline handle
// ---------------------------------------------------------------------------

/// Opaque handle to a loaded generator pair. Create with
/// `p2v_pipeline_open`, release with `p2v_pipeline_close`.
pub struct P2vPipeline {
    inner: InferencePipeline,
}

/// Load a pipeline from checkpoint files. `stage2_path` may be null to run
/// the coarse generator alone. On success writes a handle to `out`; the
/// caller owns it and must release it with `p2v_pipeline_close`.
///
/// # Safety
/// `stage1_path` must be a NUL-terminated string, `stage2_path` null or
/// NUL-terminated, and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_open(
    stage1_path: *const c_char,
    stage2_path: *const c_char,
    out: *mut *mut P2vPipeline,
) -> P2vStatus {
    let out = match out_ref("out", out) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let stage1 = match utf8_arg("stage1_path", stage1_path) {
        Ok(s) => PathBuf::from(s),
        Err(e) => return e,
    };
    let stage2 = if stage2_path.is_null() {
        None
    } else {
        match utf8_arg("stage2_path", stage2_path) {
            Ok(s) => Some(PathBuf::from(s)),
            Err(e) => return e,
        }
    };
    guarded(|| {
        let pipeline =
            InferencePipeline::load(&stage1, stage2.as_deref()).map_err(core_error)?;
        *out = Box::into_raw(Box::new(P2vPipeline { inner: pipeline }));
        Ok(())
    })
}

/// Release a pipeline handle. Null is ignored.
///
/// # Safety
/// `pipeline` must be null or a handle from `p2v_pipeline_open` that has not
/// been closed yet.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_close(pipeline: *mut P2vPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

unsafe fn pipeline_ref<'a>(ptr: *const P2vPipeline) -> Result<&'a P2vPipeline, P2vStatus> {
    ptr.as_ref()
        .ok_or_else(|| fail(P2vStatus::NullPointer, "pipeline is null"))
}

/// Output canvas size of the loaded generators.
///
/// # Safety
/// `pipeline` must be a live handle; `height`/`width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_resolution(
    pipeline: *const P2vPipeline,
    height: *mut u32,
    width: *mut u32,
) -> P2vStatus {
    let p = match pipeline_ref(pipeline) {
        Ok(p) => p,
        Err(e) => return e,
    };
    let height = match out_ref("height", height) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let width = match out_ref("width", width) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let (h, w) = p.inner.resolution();
    *height = h as u32;
    *width = w as u32;
    P2vStatus::Ok
}

/// Temporal context radius K: each output frame conditions on poses
/// `t - K ..= t + K` (or a causal window when the checkpoint was trained
/// that way).
///
/// # Safety
/// `pipeline` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_context_radius(
    pipeline: *const P2vPipeline,
    out: *mut u32,
) -> P2vStatus {
    let p = match pipeline_ref(pipeline) {
        Ok(p) => p,
        Err(e) => return e,
    };
    let out = match out_ref("out", out) {
        Ok(r) => r,
        Err(e) => return e,
    };
    *out = p.inner.k() as u32;
    P2vStatus::Ok
}

/// Whether a stage-2 refinement checkpoint is loaded.
///
/// # Safety
/// `pipeline` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_has_refinement(
    pipeline: *const P2vPipeline,
    out: *mut bool,
) -> P2vStatus {
    let p = match pipeline_ref(pipeline) {
        Ok(p) => p,
        Err(e) => return e,
    };
    let out = match out_ref("out", out) {
        Ok(r) => r,
        Err(e) => return e,
    };
    *out = p.inner.has_refinement();
    P2vStatus::Ok
}

/// Render a keypoint file to numbered PNG frames (`000000.png`, ...) in
/// `out_dir`, creating the directory if needed. Wild sequences are rescaled
/// and torso-normalized exactly as the `infer` command does. Writes the
/// number of frames to `frames_written` when non-null.
///
/// # Safety
/// `pipeline` must be a live handle; paths must be NUL-terminated strings;
/// `frames_written` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_render_file(
    pipeline: *const P2vPipeline,
    keypoints_path: *const c_char,
    out_dir: *const c_char,
    frames_written: *mut usize,
) -> P2vStatus {
    let p = match pipeline_ref(pipeline) {
        Ok(p) => p,
        Err(e) => return e,
    };
    let keypoints_path = match utf8_arg("keypoints_path", keypoints_path) {
        Ok(s) => PathBuf::from(s),
        Err(e) => return e,
    };
    let out_dir = match utf8_arg("out_dir", out_dir) {
        Ok(s) => PathBuf::from(s),
        Err(e) => return e,
    };
    guarded(|| {
        let frames = p.inner.render_file(&keypoints_path).map_err(core_error)?;
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| pose2video::Error::io(&out_dir, e))
            .map_err(core_error)?;
        for (t, frame) in frames.iter().enumerate() {
            frame
                .save_png(&out_dir.join(format!("{t:06}.png")))
                .map_err(core_error)?;
        }
        if let Some(n) = frames_written.as_mut() {
            *n = frames.len();
        }
        Ok(())
    })
}

/// Render a single pose to one frame. The pose is replicated across the
/// temporal window, so this is the still-image path; for sequences use
/// `p2v_pipeline_render_file`. `keypoints` holds `3 *
/// p2v_pose_joint_count()` floats in canvas pixels (no rescaling is
/// applied). `out` receives `3 * height * width` floats in `[0, 1]`,
/// channel-major.
///
/// # Safety
/// `keypoints` must point to `keypoint_len` readable floats and `out` to
/// `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn p2v_pipeline_render_pose(
    pipeline: *const P2vPipeline,
    keypoints: *const f32,
    keypoint_len: usize,
    out: *mut f32,
    out_len: usize,
) -> P2vStatus {
    let p = match pipeline_ref(pipeline) {
        Ok(p) => p,
        Err(e) => return e,
    };
    let keypoints = match slice_arg("keypoints", keypoints, keypoint_len) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let out = match out_slice("out", out, out_len) {
        Ok(s) => s,
        Err(e) => return e,
    };
    guarded(|| {
        let (h, w) = p.inner.resolution();
        let needed = 3 * h * w;
        if out.len() < needed {
            return Err(fail(
                P2vStatus::BufferTooSmall,
                format!("out needs {needed} floats, got {}", out.len()),
            ));
        }
        let topology = SkeletonTopology::builtin_15();
        let skeleton = skeleton_from_triplets(keypoints, &topology)?;
        let frames = p.inner.render_sequence(&[skeleton]).map_err(core_error)?;
        for (dst, src) in out.iter_mut().zip(frames[0].data().iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    use std::ffi::CString;
    use std::path::Path;
    use std::ptr;

    use pose2video::config::TrainConfig;
    use pose2video::nets::GeneratorSpec;
    use pose2video::nn::ParamSet;
    use pose2video::pose::{serialize_keypoints, KeypointSequence};
    use pose2video::trainer::{
        save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION,
    };

    fn last_error() -> String {
        unsafe {
            CStr::from_ptr(p2v_last_error())
                .to_string_lossy()
                .into_owned()
        }
    }

    fn tiny_checkpoint(dir: &Path, stage: u8, resolution: (usize, usize)) -> CString {
        let k = 1;
        let mut config = TrainConfig::default();
        config.k = k;
        config.resolutions = vec![resolution];
        config.steps_per_resolution = vec![1];
        let topology = SkeletonTopology::builtin_15();
        let spec = match stage {
            1 => GeneratorSpec::stage1(topology.part_count(), k, 4, 2, 1, resolution),
            _ => GeneratorSpec::stage2(k, 4, 2, 1, resolution),
        };
        let mut params = ParamSet::new();
        pose2video::nets::build_generator(
            &format!("g{stage}"),
            &spec,
            &mut params,
            60 + u64::from(stage),
        )
        .unwrap();
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            stage,
            step: 1,
            resolution,
            config,
            gen_spec: spec,
            disc_specs: Vec::new(),
            torso_median: 0.0,
            param_names: Vec::new(),
            param_shapes: Vec::new(),
        };
        let path = dir.join(format!("stage{stage}.ckpt"));
        save_checkpoint(&path, &header, &params).unwrap();
        CString::new(path.to_str().unwrap()).unwrap()
    }

    /// A centered upright pose with every joint detected, as raw triplets.
    fn upright_triplets(resolution: (usize, usize)) -> Vec<f32> {
        let (h, w) = (resolution.0 as f32, resolution.1 as f32);
        let (cx, top) = (w / 2.0, h * 0.1);
        let joints: [(f32, f32); 15] = [
            (cx, top),
            (cx, top + 0.15 * h),
            (cx + 0.15 * w, top + 0.15 * h),
            (cx + 0.2 * w, top + 0.35 * h),
            (cx + 0.22 * w, top + 0.5 * h),
            (cx - 0.15 * w, top + 0.15 * h),
            (cx - 0.2 * w, top + 0.35 * h),
            (cx - 0.22 * w, top + 0.5 * h),
            (cx, top + 0.45 * h),
            (cx + 0.1 * w, top + 0.45 * h),
            (cx + 0.1 * w, top + 0.65 * h),
            (cx + 0.1 * w, top + 0.85 * h),
            (cx - 0.1 * w, top + 0.45 * h),
            (cx - 0.1 * w, top + 0.65 * h),
            (cx - 0.1 * w, top + 0.85 * h),
        ];
        joints
            .iter()
            .flat_map(|&(x, y)| [x, y, 1.0])
            .collect()
    }

    #[test]
    fn version_and_error_start_empty() {
        let version = unsafe { CStr::from_ptr(p2v_version()) };
        assert!(!version.to_str().unwrap().is_empty());
        // No failure yet on this thread: the message is empty.
        assert!(last_error().is_empty());
    }

    #[test]
    fn null_arguments_are_rejected_with_messages() {
        let status = unsafe {
            p2v_pipeline_open(ptr::null(), ptr::null(), ptr::null_mut())
        };
        assert_eq!(status, P2vStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut out = 0.0f64;
        let status =
            unsafe { p2v_ssim(ptr::null(), ptr::null(), 8, 8, &mut out) };
        assert_eq!(status, P2vStatus::NullPointer);
    }

    #[test]
    fn missing_checkpoint_reports_operation_failed() {
        let path = CString::new("/nonexistent/stage1.ckpt").unwrap();
        let mut handle: *mut P2vPipeline = ptr::null_mut();
        let status = unsafe {
            p2v_pipeline_open(path.as_ptr(), ptr::null(), &mut handle)
        };
        assert_eq!(status, P2vStatus::OperationFailed);
        assert!(handle.is_null());
        assert!(last_error().contains("stage1.ckpt"), "{}", last_error());
    }

    #[test]
    fn pipeline_queries_and_file_render_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, (16, 16));
        let s2 = tiny_checkpoint(dir.path(), 2, (16, 16));

        let mut handle: *mut P2vPipeline = ptr::null_mut();
        let status = unsafe { p2v_pipeline_open(s1.as_ptr(), s2.as_ptr(), &mut handle) };
        assert_eq!(status, P2vStatus::Ok);
        assert!(!handle.is_null());

        let (mut h, mut w, mut k) = (0u32, 0u32, 0u32);
        let mut refined = false;
        unsafe {
            assert_eq!(
                p2v_pipeline_resolution(handle, &mut h, &mut w),
                P2vStatus::Ok
            );
            assert_eq!(
                p2v_pipeline_context_radius(handle, &mut k),
                P2vStatus::Ok
            );
            assert_eq!(
                p2v_pipeline_has_refinement(handle, &mut refined),
                P2vStatus::Ok
            );
        }
        assert_eq!((h, w, k), (16, 16, 1));
        assert!(refined);
        assert_eq!(p2v_pose_joint_count(), 15);
        assert_eq!(p2v_pose_map_channels(), 14);

        // Three frames of a wild sequence at a different source resolution.
        let topology = SkeletonTopology::builtin_15();
        let triplets = upright_triplets((64, 64));
        let mut skeletons = Vec::new();
        for t in 0..3 {
            let mut sk = skeleton_from_triplets(&triplets, &topology).unwrap();
            sk.frame_index = t;
            skeletons.push(sk);
        }
        let seq = KeypointSequence {
            fps: 10.0,
            source_resolution: (64, 64),
            skeletons,
        };
        let kp_path = dir.path().join("wild.p2vk");
        std::fs::write(&kp_path, serialize_keypoints(&seq, &topology)).unwrap();

        let kp_c = CString::new(kp_path.to_str().unwrap()).unwrap();
        let out_dir = dir.path().join("frames");
        let out_c = CString::new(out_dir.to_str().unwrap()).unwrap();
        let mut written = 0usize;
        let status = unsafe {
            p2v_pipeline_render_file(handle, kp_c.as_ptr(), out_c.as_ptr(), &mut written)
        };
        assert_eq!(status, P2vStatus::Ok, "{}", last_error());
        assert_eq!(written, 3);
        for t in 0..3 {
            let frame = Frame::load_png(&out_dir.join(format!("{t:06}.png"))).unwrap();
            assert_eq!((frame.height(), frame.width()), (16, 16));
        }

        unsafe { p2v_pipeline_close(handle) };
    }

    #[test]
    fn single_pose_render_fills_buffer_and_checks_length() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, (16, 16));
        let mut handle: *mut P2vPipeline = ptr::null_mut();
        unsafe {
            assert_eq!(
                p2v_pipeline_open(s1.as_ptr(), ptr::null(), &mut handle),
                P2vStatus::Ok
            );
        }

        let triplets = upright_triplets((16, 16));
        let mut buf = vec![-1.0f32; 3 * 16 * 16];
        let status = unsafe {
            p2v_pipeline_render_pose(
                handle,
                triplets.as_ptr(),
                triplets.len(),
                buf.as_mut_ptr(),
                buf.len(),
            )
        };
        assert_eq!(status, P2vStatus::Ok, "{}", last_error());
        assert!(buf.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));

        // Too-small output buffer.
        let status = unsafe {
            p2v_pipeline_render_pose(
                handle,
                triplets.as_ptr(),
                triplets.len(),
                buf.as_mut_ptr(),
                buf.len() - 1,
            )
        };
        assert_eq!(status, P2vStatus::BufferTooSmall);

        // Wrong keypoint count.
        let status = unsafe {
            p2v_pipeline_render_pose(
                handle,
                triplets.as_ptr(),
                triplets.len() - 3,
                buf.as_mut_ptr(),
                buf.len(),
            )
        };
        assert_eq!(status, P2vStatus::InvalidArgument);
        assert!(last_error().contains("joints"), "{}", last_error());

        unsafe { p2v_pipeline_close(handle) };
    }

    #[test]
    fn ssim_identity_through_the_c_interface() {
        let (h, w) = (16usize, 16usize);
        let a: Vec<f32> = (0..3 * h * w)
            .map(|i| (i % 97) as f32 / 96.0)
            .collect();
        let mut value = 0.0f64;
        let status = unsafe { p2v_ssim(a.as_ptr(), a.as_ptr(), 16, 16, &mut value) };
        assert_eq!(status, P2vStatus::Ok, "{}", last_error());
        assert!((value - 1.0).abs() < 1e-9);

        let mut b = a.clone();
        for v in b.iter_mut().take(3 * w * 4) {
            *v = 1.0 - *v;
        }
        let status = unsafe { p2v_ssim(a.as_ptr(), b.as_ptr(), 16, 16, &mut value) };
        assert_eq!(status, P2vStatus::Ok);
        assert!(value < 0.999);
    }

    #[test]
    fn rasterize_matches_the_core_library() {
        let (h, w) = (24usize, 20usize);
        let topology = SkeletonTopology::builtin_15();
        let triplets = upright_triplets((h, w));
        let mut out = vec![0.0f32; topology.part_count() * h * w];
        let status = unsafe {
            p2v_rasterize_pose(
                triplets.as_ptr(),
                triplets.len(),
                h as u32,
                w as u32,
                0.0,
                out.as_mut_ptr(),
                out.len(),
            )
        };
        assert_eq!(status, P2vStatus::Ok, "{}", last_error());

        let skeleton = skeleton_from_triplets(&triplets, &topology).unwrap();
        let expected =
            rasterize_pose_map(&skeleton, &topology, (h, w), default_thickness(h)).unwrap();
        let got: Vec<f32> = expected.data().iter().copied().collect();
        assert_eq!(out, got);
        assert!(out.iter().any(|&v| v == 1.0), "some pixels covered");

        // Undetected joints leave their channels empty.
        let mut undetected = triplets.clone();
        for t in undetected.chunks_exact_mut(3) {
            t[2] = 0.0;
        }
        let status = unsafe {
            p2v_rasterize_pose(
                undetected.as_ptr(),
                undetected.len(),
                h as u32,
                w as u32,
                0.0,
                out.as_mut_ptr(),
                out.len(),
            )
        };
        assert_eq!(status, P2vStatus::Ok);
        assert!(out.iter().all(|&v| v == 0.0));

        // Short output buffer is reported before any rasterization.
        let status = unsafe {
            p2v_rasterize_pose(
                triplets.as_ptr(),
                triplets.len(),
                h as u32,
                w as u32,
                0.0,
                out.as_mut_ptr(),
                out.len() - 1,
            )
        };
        assert_eq!(status, P2vStatus::BufferTooSmall);
    }
}
