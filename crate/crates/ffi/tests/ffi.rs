use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use temponet_ffi::*;

fn small_config() -> TpnConfig {
    let mut c = unsafe {
        let mut c = std::mem::zeroed();
        assert_eq!(tpn_config_default(&mut c), TpnStatus::Ok);
        c
    };
    c.d_model = 8;
    c.heads = 2;
    c.d_ff = 16;
    c.n_enc = 1;
    c.n_dec = 1;
    c.in_channels = 3;
    c.lookback = 12;
    c.horizon = 4;
    c.label_len = 6;
    c.moving_avg = 5;
    c.dropout = 0.0;
    c
}

fn last_error() -> String {
    let p = tpn_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_model(kind: TpnModelKind, cfg: &TpnConfig) -> *mut TpnModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tpn_model_new(kind as u32, cfg, 5, &mut m) }, TpnStatus::Ok);
    assert!(!m.is_null());
    m
}

struct Inputs {
    enc: Vec<f64>,
    dec: Vec<f64>,
    past: Vec<f64>,
}

fn inputs(cfg: &TpnConfig, batch: usize) -> Inputs {
    let ld = cfg.label_len + cfg.horizon;
    let enc: Vec<f64> = (0..batch * cfg.lookback * cfg.in_channels).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut dec = vec![0.0; batch * ld * cfg.in_channels];
    for b in 0..batch {
        for t in 0..cfg.label_len {
            for c in 0..cfg.in_channels {
                let src = (b * cfg.lookback + cfg.lookback - cfg.label_len + t) * cfg.in_channels + c;
                dec[(b * ld + t) * cfg.in_channels + c] = enc[src];
            }
        }
    }
    let past = (0..batch * cfg.lookback)
        .map(|i| enc[i * cfg.in_channels + cfg.in_channels - 1])
        .collect();
    Inputs { enc, dec, past }
}

fn predict(m: *const TpnModel, cfg: &TpnConfig, x: &Inputs, batch: usize) -> Result<Vec<f64>, TpnStatus> {
    let mut out = vec![0.0; batch * cfg.horizon];
    let s = unsafe {
        tpn_model_predict(
            m,
            batch,
            x.enc.as_ptr(),
            x.dec.as_ptr(),
            x.past.as_ptr(),
            ptr::null(),
            ptr::null(),
            out.as_mut_ptr(),
            out.len(),
        )
    };
    if s == TpnStatus::Ok {
        Ok(out)
    } else {
        Err(s)
    }
}

#[test]
fn create_predict_save_load_round_trip() {
    let cfg = small_config();
    let m = new_model(TpnModelKind::Temponet, &cfg);
    let x = inputs(&cfg, 2);
    let y = predict(m, &cfg, &x, 2).unwrap();
    assert!(y.iter().all(|v| v.is_finite()));

    let mut count = 0;
    assert_eq!(unsafe { tpn_model_param_count(m, &mut count) }, TpnStatus::Ok);
    assert!(count > 0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tpn_model_save(m, path.as_ptr()) }, TpnStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { tpn_model_load(path.as_ptr(), &mut loaded) }, TpnStatus::Ok);
    assert_eq!(predict(loaded, &cfg, &x, 2).unwrap(), y);

    let (mut kind, mut desc) = (99u32, small_config());
    desc.d_model = 0;
    assert_eq!(unsafe { tpn_model_describe(loaded, &mut kind, &mut desc) }, TpnStatus::Ok);
    assert_eq!(kind, TpnModelKind::Temponet as u32);
    assert_eq!(desc, cfg);

    unsafe {
        tpn_model_free(m);
        tpn_model_free(loaded);
        tpn_model_free(ptr::null_mut());
    }
}

#[test]
fn persistence_repeats_the_last_observation() {
    let cfg = small_config();
    let m = new_model(TpnModelKind::Persistence, &cfg);
    let x = inputs(&cfg, 3);
    let y = predict(m, &cfg, &x, 3).unwrap();
    for b in 0..3 {
        let last = x.past[b * cfg.lookback + cfg.lookback - 1];
        assert!(y[b * cfg.horizon..(b + 1) * cfg.horizon].iter().all(|&v| v == last));
    }
    unsafe { tpn_model_free(m) };
}

#[test]
fn bad_arguments_report_status_and_message() {
    let cfg = small_config();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tpn_model_new(42, &cfg, 0, &mut m) }, TpnStatus::InvalidArgument);
    assert!(last_error().contains("unknown model kind 42"));
    assert_eq!(unsafe { tpn_model_new(0, ptr::null(), 0, &mut m) }, TpnStatus::NullPointer);
    assert!(last_error().contains("config"));

    let mut bad = cfg;
    bad.heads = 3;
    assert_eq!(unsafe { tpn_model_new(0, &bad, 0, &mut m) }, TpnStatus::InvalidArgument);
    assert!(m.is_null());

    let model = new_model(TpnModelKind::Nlinear, &cfg);
    let x = inputs(&cfg, 1);
    let mut out = vec![0.0; 3];
    let s = unsafe {
        tpn_model_predict(model, 1, x.enc.as_ptr(), x.dec.as_ptr(), x.past.as_ptr(), ptr::null(), ptr::null(), out.as_mut_ptr(), 3)
    };
    assert_eq!(s, TpnStatus::InvalidArgument);
    assert!(last_error().contains("out_len"));
    let mut out = vec![0.0; 4];
    let s = unsafe {
        tpn_model_predict(model, 1, ptr::null(), x.dec.as_ptr(), x.past.as_ptr(), ptr::null(), ptr::null(), out.as_mut_ptr(), 4)
    };
    assert_eq!(s, TpnStatus::NullPointer);
    assert_eq!(unsafe { tpn_model_param_count(ptr::null(), ptr::null_mut()) }, TpnStatus::NullPointer);
    unsafe { tpn_model_free(model) };
}

#[test]
fn missing_and_corrupt_checkpoints_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ckpt");
    let path = CString::new(missing.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tpn_model_load(path.as_ptr(), &mut m) }, TpnStatus::DataError);
    assert!(last_error().contains("absent.ckpt"));
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let path = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tpn_model_load(path.as_ptr(), &mut m) }, TpnStatus::DataError);
    assert!(m.is_null());
}

#[test]
fn relative_improvement_through_the_c_abi() {
    let mut v = 0.0;
    assert_eq!(unsafe { tpn_relative_improvement(1.463, 1.327, &mut v) }, TpnStatus::Ok);
    assert!((v - 10.25).abs() < 0.01, "{v}");
    assert_eq!(unsafe { tpn_relative_improvement(1.0, 0.0, &mut v) }, TpnStatus::InvalidArgument);
    assert_eq!(unsafe { tpn_relative_improvement(1.0, 1.0, ptr::null_mut()) }, TpnStatus::NullPointer);
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/temponet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tpn_config_default",
        "tpn_model_new",
        "tpn_model_load",
        "tpn_model_save",
        "tpn_model_free",
        "tpn_model_param_count",
        "tpn_model_describe",
        "tpn_model_predict",
        "tpn_relative_improvement",
        "tpn_last_error_message",
        "typedef struct TpnModel TpnModel",
        "TPN_STATUS_NUMERIC_ERROR = 4",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; skipping header compile");
        return;
    };
    assert!(status.success());
}
