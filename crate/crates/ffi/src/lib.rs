//! C ABI over `azsl-core`.
//!
//! Every fallible call returns an [`AzslStatus`]; on failure the message is
//! available from [`azsl_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Byte buffers returned to the
//! caller are released with [`azsl_bytes_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use azsl_core::cli::{self, ExperimentConfig};
use azsl_core::datasets::{
    load_features, make_synthetic, save_features, split_azsl, Dataset, FileFormat, SplitOptions, SyntheticSpec,
    TeacherMode,
};
use azsl_core::eval::harmonic_mean;
use azsl_core::teacher::{fit_regularizer, train_teacher, RegularizerKind, TeacherConfig, TeacherServer};
use azsl_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AzslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Parse = 4,
    Config = 5,
    Protocol = 6,
    Refused = 7,
    Io = 8,
    Utf8 = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AzslTeacherMode {
    Inductive = 0,
    Transductive = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AzslRegularizer {
    None = 0,
    GaussianKl = 1,
    RbfMmd = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzslSyntheticSpec {
    pub classes: usize,
    pub seen: usize,
    pub dim_x: usize,
    pub dim_a: usize,
    pub per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub semantic_rank: usize,
    pub link_seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzslTeacherOptions {
    pub teacher_mode: AzslTeacherMode,
    pub regularizer: AzslRegularizer,
    pub alpha: f64,
    /// Hidden widths; a zero width ends the list.
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AzslDatasetInfo {
    pub rows: usize,
    pub dim_x: usize,
    pub dim_a: usize,
    pub classes: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzslRunSummary {
    pub czsl_u: f64,
    pub gzsl_u: f64,
    pub gzsl_s: f64,
    pub gzsl_h: f64,
}

/// Owned byte buffer handed to the caller.
#[repr(C)]
#[derive(Debug)]
pub struct AzslBytes {
    pub data: *mut u8,
    pub len: usize,
}

/// Opaque dataset handle.
pub struct AzslDataset {
    inner: Dataset,
    unseen: Vec<usize>,
}

/// Opaque teacher server handle.
pub struct AzslServer {
    inner: TeacherServer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AzslStatus {
    match err {
        Error::Shape(_) => AzslStatus::Shape,
        Error::InvalidArgument(_) => AzslStatus::InvalidArgument,
        Error::Parse { .. } => AzslStatus::Parse,
        Error::Config { .. } => AzslStatus::Config,
        Error::Protocol { .. } => AzslStatus::Protocol,
        Error::Refused(_) => AzslStatus::Refused,
        Error::Io(_) => AzslStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (AzslStatus, String)>) -> AzslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AzslStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AzslStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (AzslStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (AzslStatus, String) {
    (AzslStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (AzslStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (AzslStatus::Utf8, format!("`{name}` is not UTF-8")))
}

fn into_bytes(v: Vec<u8>) -> AzslBytes {
    let boxed = v.into_boxed_slice();
    let len = boxed.len();
    AzslBytes {
        data: Box::into_raw(boxed) as *mut u8,
        len,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn azsl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn azsl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a buffer returned by the library. Safe on an empty buffer.
///
/// # Safety
/// `bytes` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn azsl_bytes_free(bytes: AzslBytes) {
    if !bytes.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes.data, bytes.len)));
    }
}

#[no_mangle]
pub extern "C" fn azsl_synthetic_spec_default() -> AzslSyntheticSpec {
    let s = SyntheticSpec::default();
    AzslSyntheticSpec {
        classes: s.classes,
        seen: s.seen,
        dim_x: s.dim_x,
        dim_a: s.dim_a,
        per_class: s.per_class,
        separation: s.separation,
        noise: s.noise,
        semantic_rank: s.semantic_rank,
        link_seed: s.link_seed,
    }
}

/// Samples a synthetic dataset; its last `classes - seen` classes are unseen.
///
/// # Safety
/// `spec` must point to a valid spec and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn azsl_dataset_synthetic(
    spec: *const AzslSyntheticSpec,
    seed: u64,
    out: *mut *mut AzslDataset,
) -> AzslStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = SyntheticSpec {
            classes: spec.classes,
            seen: spec.seen,
            dim_x: spec.dim_x,
            dim_a: spec.dim_a,
            per_class: spec.per_class,
            separation: spec.separation,
            noise: spec.noise,
            semantic_rank: spec.semantic_rank,
            link_seed: spec.link_seed,
        };
        let inner = make_synthetic(&s, seed).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AzslDataset {
            inner,
            unseen: s.unseen_classes(),
        }));
        Ok(())
    })
}

/// Loads a `.csv` or `.azb` feature file. No class is unseen until
/// [`azsl_dataset_set_unseen`] is called.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_dataset_load(path: *const c_char, out: *mut *mut AzslDataset) -> AzslStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let format = FileFormat::from_path(&path)
            .ok_or_else(|| (AzslStatus::InvalidArgument, "path must end in .csv or .azb".to_string()))?;
        let inner = load_features(&path, format).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AzslDataset {
            inner,
            unseen: Vec::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn azsl_dataset_save(ds: *const AzslDataset, path: *const c_char) -> AzslStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let path = path_arg(path, "path")?;
        let format = FileFormat::from_path(&path)
            .ok_or_else(|| (AzslStatus::InvalidArgument, "path must end in .csv or .azb".to_string()))?;
        save_features(&ds.inner, &path, format).map_err(core_err)
    })
}

/// Marks dense class ids as unseen.
///
/// # Safety
/// `ds` must be a live handle and `classes` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn azsl_dataset_set_unseen(ds: *mut AzslDataset, classes: *const u32, len: usize) -> AzslStatus {
    guard(|| {
        let ds = ds.as_mut().ok_or_else(|| null("ds"))?;
        if classes.is_null() && len > 0 {
            return Err(null("classes"));
        }
        let ids: Vec<usize> = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(classes, len)
                .iter()
                .map(|&c| c as usize)
                .collect()
        };
        if let Some(bad) = ids.iter().find(|&&c| c >= ds.inner.class_count()) {
            return Err((AzslStatus::InvalidArgument, format!("class {bad} out of range")));
        }
        ds.unseen = ids;
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `info` writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_dataset_info(ds: *const AzslDataset, info: *mut AzslDatasetInfo) -> AzslStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        *info = AzslDatasetInfo {
            rows: ds.inner.len(),
            dim_x: ds.inner.dim_x(),
            dim_a: ds.inner.dim_a(),
            classes: ds.inner.class_count(),
        };
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn azsl_dataset_free(ds: *mut AzslDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

#[no_mangle]
pub extern "C" fn azsl_teacher_options_default() -> AzslTeacherOptions {
    let t = TeacherConfig::default();
    AzslTeacherOptions {
        teacher_mode: AzslTeacherMode::Transductive,
        regularizer: AzslRegularizer::GaussianKl,
        alpha: 0.5,
        hidden: [t.hidden[0], t.hidden[1]],
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        seed: 0,
    }
}

/// Splits the dataset, trains the teacher and fits the regularizer.
///
/// # Safety
/// `ds` must be a live handle, `opts` valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_server_new(
    ds: *const AzslDataset,
    opts: *const AzslTeacherOptions,
    out: *mut *mut AzslServer,
) -> AzslStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let o = opts.as_ref().ok_or_else(|| null("opts"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if ds.unseen.is_empty() {
            return Err((AzslStatus::InvalidArgument, "dataset has no unseen classes".into()));
        }
        let mode = match o.teacher_mode {
            AzslTeacherMode::Inductive => TeacherMode::Inductive,
            AzslTeacherMode::Transductive => TeacherMode::Transductive,
        };
        let kind = match o.regularizer {
            AzslRegularizer::None => RegularizerKind::None,
            AzslRegularizer::GaussianKl => RegularizerKind::GaussianKl,
            AzslRegularizer::RbfMmd => RegularizerKind::RbfMmd,
        };
        let split = split_azsl(&ds.inner, &SplitOptions::new(ds.unseen.clone(), mode, o.seed)).map_err(core_err)?;
        let cfg = TeacherConfig {
            hidden: o.hidden.iter().copied().take_while(|&w| w > 0).collect(),
            epochs: o.epochs,
            batch_size: o.batch_size,
            learning_rate: o.learning_rate,
            seed: o.seed,
        };
        let teacher = train_teacher(&ds.inner, &split, &cfg).map_err(core_err)?;
        let reg = fit_regularizer(&ds.inner, &split, kind, o.alpha).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AzslServer {
            inner: TeacherServer::new(teacher, reg),
        }));
        Ok(())
    })
}

/// Answers one protocol frame given as kind and payload. The answer frame's
/// kind and payload are written to `out_kind` and `out_payload`; an error
/// frame is still a successful call.
///
/// # Safety
/// `server` must be live, `payload` must hold `len` bytes, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_server_handle(
    server: *const AzslServer,
    kind: u8,
    payload: *const u8,
    len: usize,
    out_kind: *mut u8,
    out_payload: *mut AzslBytes,
) -> AzslStatus {
    guard(|| {
        let server = server.as_ref().ok_or_else(|| null("server"))?;
        if payload.is_null() && len > 0 {
            return Err(null("payload"));
        }
        if out_kind.is_null() || out_payload.is_null() {
            return Err(null("out"));
        }
        let bytes = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(payload, len)
        };
        let reply = server.inner.handle(kind, bytes);
        *out_kind = reply.kind;
        *out_payload = into_bytes(reply.payload);
        Ok(())
    })
}

/// Number of logged messages and how many of them are mid-risk.
///
/// # Safety
/// `server` must be live and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_server_log_counts(
    server: *const AzslServer,
    total: *mut usize,
    mid_risk: *mut usize,
) -> AzslStatus {
    guard(|| {
        let server = server.as_ref().ok_or_else(|| null("server"))?;
        let total = total.as_mut().ok_or_else(|| null("total"))?;
        let mid = mid_risk.as_mut().ok_or_else(|| null("mid_risk"))?;
        let log = server.inner.log();
        *total = log.len();
        *mid = log.mid_risk_count();
        Ok(())
    })
}

/// Server transcript as a JSON document (not NUL-terminated).
///
/// # Safety
/// `server` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_server_transcript_json(server: *const AzslServer, out: *mut AzslBytes) -> AzslStatus {
    guard(|| {
        let server = server.as_ref().ok_or_else(|| null("server"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = into_bytes(server.inner.log().to_json().into_bytes());
        Ok(())
    })
}

/// # Safety
/// `server` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn azsl_server_free(server: *mut AzslServer) {
    if !server.is_null() {
        drop(Box::from_raw(server));
    }
}

/// `2us / (u + s)`; fails on negative input.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_harmonic_mean(u: f64, s: f64, out: *mut f64) -> AzslStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = harmonic_mean(u, s).map_err(core_err)?;
        Ok(())
    })
}

/// Runs a full experiment from a config file, writing its output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn azsl_run_config(config_path: *const c_char, out: *mut AzslRunSummary) -> AzslStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mut cfg = ExperimentConfig::from_file(&path).map_err(core_err)?;
        cli::apply_env_seed(&mut cfg).map_err(core_err)?;
        let run = cli::cmd_run(&cfg).map_err(core_err)?;
        *out = AzslRunSummary {
            czsl_u: run.czsl.u,
            gzsl_u: run.gzsl.u,
            gzsl_s: run.gzsl.s.unwrap_or(0.0),
            gzsl_h: run.gzsl.h.unwrap_or(0.0),
        };
        Ok(())
    })
}
