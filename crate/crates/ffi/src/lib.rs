//! C ABI over the `temponet` crate.
//!
//! Every function returns a [`TpnStatus`]; on failure a description is kept
//! per thread and can be read with [`tpn_last_error_message`]. Models are
//! opaque [`TpnModel`] handles created by [`tpn_model_new`] or
//! [`tpn_model_load`] and released with [`tpn_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use temponet::model::{ForecastBatch, Model, ModelConfig, ModelKind};
use temponet::report::relative_improvement;
use temponet::tensor::Tensor;
use temponet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TpnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericError = 4,
    Panic = 5,
}

/// Values accepted wherever a model kind is passed as `uint32_t`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TpnModelKind {
    Temponet = 0,
    VanillaTransformer = 1,
    Dlinear = 2,
    Nlinear = 3,
    Persistence = 4,
}

/// Architecture settings; fill with [`tpn_config_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpnConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_temporal_blocks: usize,
    pub in_channels: usize,
    pub time_features: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub label_len: usize,
    pub moving_avg: usize,
    pub dropout: f64,
}

impl From<&ModelConfig> for TpnConfig {
    fn from(c: &ModelConfig) -> Self {
        TpnConfig {
            d_model: c.d_model,
            heads: c.heads,
            d_ff: c.d_ff,
            n_enc: c.n_enc,
            n_dec: c.n_dec,
            n_temporal_blocks: c.n_temporal_blocks,
            in_channels: c.in_channels,
            time_features: c.time_features,
            lookback: c.lookback,
            horizon: c.horizon,
            label_len: c.label_len,
            moving_avg: c.moving_avg,
            dropout: c.dropout,
        }
    }
}

impl TpnConfig {
    fn to_model_config(self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            n_enc: self.n_enc,
            n_dec: self.n_dec,
            n_temporal_blocks: self.n_temporal_blocks,
            in_channels: self.in_channels,
            time_features: self.time_features,
            lookback: self.lookback,
            horizon: self.horizon,
            label_len: self.label_len,
            moving_avg: self.moving_avg,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }
}

/// Opaque model handle.
pub struct TpnModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("NUL bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TpnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_data() {
            TpnStatus::DataError
        } else if e.is_numeric() {
            TpnStatus::NumericError
        } else {
            TpnStatus::InvalidArgument
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TpnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TpnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TpnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TpnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TpnStatus::Panic
        }
    }
}

fn kind_from(raw: u32) -> Result<ModelKind, Failure> {
    Ok(match raw {
        0 => ModelKind::Temponet,
        1 => ModelKind::VanillaTransformer,
        2 => ModelKind::Dlinear,
        3 => ModelKind::Nlinear,
        4 => ModelKind::Persistence,
        _ => return Err(invalid(format!("unknown model kind {raw}"))),
    })
}

/// # Safety
/// `path` must be null or a NUL-terminated string.
unsafe fn path_from<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice_from<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Writes the default architecture into `*out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `TpnConfig`.
#[no_mangle]
pub unsafe extern "C" fn tpn_config_default(out: *mut TpnConfig) -> TpnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = TpnConfig::from(&ModelConfig::default());
        Ok(())
    })
}

/// Creates a freshly initialized model of `kind` (a [`TpnModelKind`] value).
///
/// # Safety
/// `config` must be null or point to a valid `TpnConfig`; `out` must be null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_new(
    kind: u32,
    config: *const TpnConfig,
    seed: u64,
    out: *mut *mut TpnModel,
) -> TpnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let model = Model::new(kind_from(kind)?, config.to_model_config(), seed)?;
        *out = Box::into_raw(Box::new(TpnModel { inner: model }));
        Ok(())
    })
}

/// Loads a checkpoint written by [`tpn_model_save`] or the command line.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_load(path: *const c_char, out: *mut *mut TpnModel) -> TpnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let model = Model::load(path_from(path)?)?;
        *out = Box::into_raw(Box::new(TpnModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_save(model: *const TpnModel, path: *const c_char) -> TpnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        model.inner.save(path_from(path)?)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_free(model: *mut TpnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_param_count(model: *const TpnModel, out: *mut usize) -> TpnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = model.inner.param_count();
        Ok(())
    })
}

/// Writes the model's kind (a [`TpnModelKind`] value) and architecture.
///
/// # Safety
/// `model` must be null or a live handle; `kind` and `config` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_describe(
    model: *const TpnModel,
    kind: *mut u32,
    config: *mut TpnConfig,
) -> TpnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let k = ModelKind::ALL
            .iter()
            .position(|&k| k == model.inner.kind())
            .expect("every kind is listed");
        *kind.as_mut().ok_or_else(|| null("kind"))? = k as u32;
        *config.as_mut().ok_or_else(|| null("config"))? = TpnConfig::from(model.inner.config());
        Ok(())
    })
}

/// Forecasts `batch` windows. Row-major inputs:
/// `enc_in` is `[batch, lookback, in_channels]`,
/// `dec_in` is `[batch, label_len + horizon, in_channels]` with zeroed
/// placeholder rows, `past_target` is `[batch, lookback]`, and the optional
/// marks are `[batch, lookback, time_features]` and
/// `[batch, label_len + horizon, time_features]`. `out` receives
/// `[batch, horizon]` values and `out_len` must equal that size.
///
/// # Safety
/// Every non-null pointer must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn tpn_model_predict(
    model: *const TpnModel,
    batch: usize,
    enc_in: *const f64,
    dec_in: *const f64,
    past_target: *const f64,
    enc_mark: *const f64,
    dec_mark: *const f64,
    out: *mut f64,
    out_len: usize,
) -> TpnStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let c = model.config();
        if batch == 0 {
            return Err(invalid("batch must be >= 1"));
        }
        let (l, ld, ch, tf) = (c.lookback, c.decoder_len(), c.in_channels, c.time_features);
        let want = batch * c.horizon * c.out_channels;
        if out_len != want {
            return Err(invalid(format!("out_len is {out_len}, expected {want}")));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let tensor = |p: *const f64, dims: &[usize], what: &str| -> Result<Tensor, Failure> {
            let n = dims.iter().product();
            Ok(Tensor::new(dims, slice_from(p, n, what)?.to_vec())?)
        };
        let mark = |p: *const f64, len: usize, what: &str| -> Result<Option<Tensor>, Failure> {
            if p.is_null() {
                Ok(None)
            } else {
                tensor(p, &[batch, len, tf], what).map(Some)
            }
        };
        let input = ForecastBatch {
            enc_in: tensor(enc_in, &[batch, l, ch], "enc_in")?,
            dec_in: tensor(dec_in, &[batch, ld, ch], "dec_in")?,
            target: Tensor::zeros(&[batch, c.horizon, c.out_channels])?,
            past_target: tensor(past_target, &[batch, l, 1], "past_target")?,
            enc_mark: mark(enc_mark, l, "enc_mark")?,
            dec_mark: mark(dec_mark, ld, "dec_mark")?,
        };
        let y = model.predict(&input)?;
        std::slice::from_raw_parts_mut(out, want).copy_from_slice(y.data());
        Ok(())
    })
}

/// `100 * (other - reference) / reference`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tpn_relative_improvement(other: f64, reference: f64, out: *mut f64) -> TpnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = relative_improvement(other, reference)?;
        Ok(())
    })
}

/// Description of the last failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tpn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
