//! C ABI over `irsfl`.
//!
//! Every fallible function returns an [`IrsflStatus`]. On failure a message is
//! stored per thread and can be read with [`irsfl_last_error_message`].
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use irsfl::acquisition::{Dataset, TrainingSample};
use irsfl::baselines::{overhead_cl, overhead_fl};
use irsfl::nn::{Checkpoint, NetworkSpec};
use irsfl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrsflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    /// A caller-provided buffer has the wrong length.
    BufferSize = 7,
    Panic = 8,
}

impl From<&Error> for IrsflStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::DatasetTooLarge { .. } => IrsflStatus::InvalidArgument,
            Error::Config { .. } | Error::ConfigDatasetConflict { .. } => IrsflStatus::Config,
            Error::Io { .. } => IrsflStatus::Io,
            Error::Format { .. } => IrsflStatus::Format,
            Error::NumericFailure(_) | Error::DegenerateSignal(_) | Error::UndefinedMetric(_) => IrsflStatus::Numeric,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(IrsflStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn fail<T>(status: IrsflStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IrsflStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IrsflStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            IrsflStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return fail(IrsflStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(IrsflStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn out_arg<'a, T>(out: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    out.as_mut()
        .map_or_else(|| fail(IrsflStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn slice_arg<'a, T>(data: *const T, len: usize, want: usize, what: &str) -> Result<&'a [T], Failure> {
    if data.is_null() {
        return fail(IrsflStatus::NullPointer, format!("{what} is null"));
    }
    if len != want {
        return fail(IrsflStatus::BufferSize, format!("{what} has {len} entries, expected {want}"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut_arg<'a, T>(data: *mut T, len: usize, want: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if data.is_null() {
        return fail(IrsflStatus::NullPointer, format!("{what} is null"));
    }
    if len != want {
        return fail(IrsflStatus::BufferSize, format!("{what} has {len} entries, expected {want}"));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn irsfl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Symbols uploaded when every user ships its raw dataset to the server.
///
/// # Safety
/// `out` must be null or point to writable storage for one `u64`.
#[no_mangle]
pub unsafe extern "C" fn irsfl_overhead_cl(m_bar: u64, m: u64, l: u64, samples: u64, out: *mut u64) -> IrsflStatus {
    guard(|| {
        *out_arg(out, "out")? = overhead_cl(m_bar, m, l, samples)?;
        Ok(())
    })
}

/// Symbols exchanged by federated training: one upload and one download of
/// `parameters` values per user per round.
///
/// # Safety
/// `out` must be null or point to writable storage for one `u64`.
#[no_mangle]
pub unsafe extern "C" fn irsfl_overhead_fl(parameters: u64, rounds: u64, users: u64, out: *mut u64) -> IrsflStatus {
    guard(|| {
        *out_arg(out, "out")? = overhead_fl(parameters, rounds, users)?;
        Ok(())
    })
}

/// Transmitted-parameter count of the standard ten-layer network for `m`
/// antennas, `l` IRS elements and `m_bar` pilots.
///
/// # Safety
/// `out` must be null or point to writable storage for one `u64`.
#[no_mangle]
pub unsafe extern "C" fn irsfl_standard_parameter_count(m: usize, l: usize, m_bar: usize, out: *mut u64) -> IrsflStatus {
    guard(|| {
        let spec = NetworkSpec::standard(m, l, m_bar);
        spec.validate()?;
        *out_arg(out, "out")? = spec.parameter_count();
        Ok(())
    })
}

/// A trained network loaded from a checkpoint file.
pub struct IrsflModel {
    ckpt: Checkpoint,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn irsfl_model_load(path: *const c_char, out: *mut *mut IrsflModel) -> IrsflStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = ptr::null_mut();
        let ckpt = Checkpoint::read(&path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(IrsflModel { ckpt }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`irsfl_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irsfl_model_free(model: *mut IrsflModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the network input `3 (L + 1) M̄`; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irsfl_model_input_len(model: *const IrsflModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.network.spec.input_len())
}

/// Length of the predicted label `2 M (L + 1)`; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irsfl_model_output_len(model: *const IrsflModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.network.spec.output_dim)
}

/// Predicts the channel label for one raw input tensor (the layout stored in
/// datasets). Scaling to and from network units is applied internally.
///
/// # Safety
/// `model` must be a live handle; `input` and `output` must be valid for
/// `input_len` and `output_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn irsfl_model_predict(
    model: *const IrsflModel,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> IrsflStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(IrsflStatus::NullPointer, "model is null");
        };
        let ck = &model.ckpt;
        let x = slice_arg(input, input_len, ck.network.spec.input_len(), "input")?;
        let y = slice_mut_arg(output, output_len, ck.network.spec.output_dim, "output")?;
        let mut x = x.to_vec();
        ck.scaling.scale_input(&mut x);
        let pred = ck.network.forward(&ck.theta, &x, None)?;
        for (dst, v) in y.iter_mut().zip(pred) {
            *dst = v * ck.scaling.label;
        }
        Ok(())
    })
}

/// A generated dataset; samples are indexed user by user.
pub struct IrsflDataset {
    samples: Vec<TrainingSample>,
    input_len: usize,
    label_len: usize,
    users: usize,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_load(path: *const c_char, out: *mut *mut IrsflDataset) -> IrsflStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = ptr::null_mut();
        let ds = Dataset::read(&path_arg(path)?)?;
        let handle = IrsflDataset {
            input_len: ds.meta.input_len(),
            label_len: ds.meta.label_len(),
            users: ds.users.len(),
            samples: ds.users.into_iter().flatten().collect(),
        };
        *slot = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from [`irsfl_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_free(dataset: *mut IrsflDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_len(dataset: *const IrsflDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.samples.len())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_users(dataset: *const IrsflDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.users)
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_input_len(dataset: *const IrsflDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.input_len)
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_label_len(dataset: *const IrsflDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.label_len)
}

/// Copies sample `index` into the caller's buffers. `user` and `snr_db` may be
/// null.
///
/// # Safety
/// `dataset` must be a live handle; buffers must be valid for the given
/// lengths; `user` and `snr_db` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn irsfl_dataset_sample(
    dataset: *const IrsflDataset,
    index: usize,
    input: *mut f64,
    input_len: usize,
    label: *mut f64,
    label_len: usize,
    user: *mut usize,
    snr_db: *mut f64,
) -> IrsflStatus {
    guard(|| {
        let Some(ds) = dataset.as_ref() else {
            return fail(IrsflStatus::NullPointer, "dataset is null");
        };
        let Some(s) = ds.samples.get(index) else {
            return fail(
                IrsflStatus::InvalidArgument,
                format!("sample {index} out of range (dataset has {})", ds.samples.len()),
            );
        };
        let x = slice_mut_arg(input, input_len, ds.input_len, "input")?;
        let y = slice_mut_arg(label, label_len, ds.label_len, "label")?;
        for (d, &v) in x.iter_mut().zip(&s.input) {
            *d = v as f64;
        }
        for (d, &v) in y.iter_mut().zip(&s.label) {
            *d = v as f64;
        }
        if let Some(u) = user.as_mut() {
            *u = s.user;
        }
        if let Some(snr) = snr_db.as_mut() {
            *snr = s.snr_db;
        }
        Ok(())
    })
}
