//! C ABI for the Attention-ResUNet workbench.
//!
//! Conventions:
//! - Handles (`AruDataset`, `AruNet`) are opaque pointers created and freed by
//!   this library; never free them with `free()`.
//! - Every fallible call returns an [`AruStatus`]; on anything but `ARU_OK`
//!   the thread-local message from [`aru_last_error`] describes the failure.
//!   The message pointer stays valid until the next failing call on the same
//!   thread.
//! - Output buffers are caller-allocated; their length is always passed and
//!   validated.
//! - Images are row-major `float` in [0,1], masks row-major `uint8_t` in
//!   {0,1}, both of size `h * w` as reported by `aru_dataset_size`.
//!
//! The matching header `include/aru.h` is regenerated by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aru_core::data::phantom::generate_dataset;
use aru_core::data::{Dataset, Difficulty, Split};
use aru_core::error::AruError;
use aru_core::eval::evaluate;
use aru_core::nn::{ArchKind, Network, NetworkConfig};
use aru_core::train::{train, TrainConfig};

/// Result of every fallible API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AruStatus {
    AruOk = 0,
    /// Bad argument: wrong buffer size, unknown name, out-of-range value.
    AruInvalidArgument = 1,
    /// File or dataset problem: missing path, corrupt checkpoint, bad layout.
    AruDataError = 2,
    /// Non-finite values encountered during computation.
    AruNumericError = 3,
    /// A required pointer argument was null.
    AruNullPointer = 4,
    /// Internal panic caught at the boundary; state may be inconsistent.
    AruPanic = 5,
}

/// Training hyperparameters; obtain defaults from
/// [`aru_train_options_default`] and override selectively.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct AruTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Validate every N epochs (the last epoch always validates).
    pub val_every: usize,
    /// Validation rounds without improvement before early stop.
    pub patience: usize,
    pub seed: u64,
    pub augment: bool,
}

/// Aggregate segmentation quality on one dataset split.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct AruMetrics {
    /// Samples evaluated.
    pub n: usize,
    pub mean_dice: f64,
    pub sd_dice: f64,
    pub mean_iou: f64,
    /// Pooled ROC AUC; NaN when undefined (single-class split).
    pub auc_roc: f64,
}

/// Static description of a constructed network.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct AruNetInfo {
    pub parameters: usize,
    pub flops_per_image: u64,
    pub input_h: usize,
    pub input_w: usize,
    pub levels: usize,
    pub attention_gates: usize,
    pub residual: bool,
}

/// Opaque dataset handle.
pub struct AruDataset {
    inner: Dataset,
    ids: Vec<CString>,
}

/// Opaque network handle (single precision).
pub struct AruNet {
    inner: Network<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn fail(err: &AruError) -> AruStatus {
    set_error(&err.to_string());
    match err.exit_code() {
        1 => AruStatus::AruInvalidArgument,
        3 => AruStatus::AruNumericError,
        _ => AruStatus::AruDataError,
    }
}

fn invalid(msg: &str) -> AruStatus {
    set_error(msg);
    AruStatus::AruInvalidArgument
}

fn null_arg(what: &str) -> AruStatus {
    set_error(&format!("{what} must not be null"));
    AruStatus::AruNullPointer
}

/// Run a body with panic containment; a panic never crosses the C boundary.
fn guarded(f: impl FnOnce() -> AruStatus) -> AruStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            AruStatus::AruPanic
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, AruStatus> {
    if ptr.is_null() {
        return Err(null_arg(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

fn split_from(raw: i32) -> Result<Split, AruStatus> {
    match raw {
        0 => Ok(Split::Train),
        1 => Ok(Split::Val),
        2 => Ok(Split::Test),
        _ => Err(invalid("split must be 0 (train), 1 (val), or 2 (test)")),
    }
}

/// Message for the most recent failure on this thread; empty string when no
/// failure has occurred. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn aru_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aru_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn dataset_handle(inner: Dataset) -> *mut AruDataset {
    let ids = inner
        .samples
        .iter()
        .map(|s| CString::new(s.id.as_str()).unwrap_or_default())
        .collect();
    Box::into_raw(Box::new(AruDataset { inner, ids }))
}

/// Generate a synthetic phantom dataset of `n` samples at `size`x`size`
/// (80/20 train/val split). `hard` toggles the noisy difficulty tier.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_generate(
    n: usize,
    size: usize,
    hard: bool,
    seed: u64,
    out: *mut *mut AruDataset,
) -> AruStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let difficulty = if hard { Difficulty::Hard } else { Difficulty::Easy };
        match generate_dataset(n, (size, size), difficulty, seed) {
            Ok(ds) => {
                *out = dataset_handle(ds);
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a dataset directory produced by `aru_dataset_save` or the CLI.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` as in `aru_dataset_generate`.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_load(dir: *const c_char, out: *mut *mut AruDataset) -> AruStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let dir = match utf8_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match Dataset::load_dir(Path::new(dir)) {
            Ok(ds) => {
                *out = dataset_handle(ds);
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Write the dataset (images, masks, manifest, metadata) into `dir`.
///
/// # Safety
/// `ds` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_save(ds: *const AruDataset, dir: *const c_char) -> AruStatus {
    guarded(|| {
        let Some(ds) = ds.as_ref() else {
            return null_arg("ds");
        };
        let dir = match utf8_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match ds.inner.save_dir(Path::new(dir)) {
            Ok(()) => AruStatus::AruOk,
            Err(e) => fail(&e),
        }
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_len(ds: *const AruDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.samples.len())
}

/// Image height and width in pixels.
///
/// # Safety
/// All pointers must be valid; `h`/`w` point to writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_size(
    ds: *const AruDataset,
    h: *mut usize,
    w: *mut usize,
) -> AruStatus {
    guarded(|| {
        let Some(ds) = ds.as_ref() else {
            return null_arg("ds");
        };
        if h.is_null() || w.is_null() {
            return null_arg("h/w");
        }
        *h = ds.inner.size.0;
        *w = ds.inner.size.1;
        AruStatus::AruOk
    })
}

/// Sample id as a NUL-terminated string owned by the handle (valid while the
/// handle lives). Null for an out-of-range index.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_sample_id(ds: *const AruDataset, index: usize) -> *const c_char {
    match ds.as_ref().and_then(|d| d.ids.get(index)) {
        Some(id) => id.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Split of sample `index`: 0 train, 1 val, 2 test; -1 on bad input.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_sample_split(ds: *const AruDataset, index: usize) -> i32 {
    match ds.as_ref().and_then(|d| d.inner.samples.get(index)) {
        Some(s) => match s.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        },
        None => -1,
    }
}

/// Copy the image of sample `index` into `buf` (row-major, `h*w` floats).
///
/// # Safety
/// `buf` must point to `buf_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_image(
    ds: *const AruDataset,
    index: usize,
    buf: *mut f32,
    buf_len: usize,
) -> AruStatus {
    guarded(|| {
        let Some(ds) = ds.as_ref() else {
            return null_arg("ds");
        };
        if buf.is_null() {
            return null_arg("buf");
        }
        let Some(sample) = ds.inner.samples.get(index) else {
            return invalid(&format!(
                "index {index} out of range for {} samples",
                ds.inner.samples.len()
            ));
        };
        if buf_len != sample.image.len() {
            return invalid(&format!(
                "buffer holds {buf_len} values, image needs {}",
                sample.image.len()
            ));
        }
        std::ptr::copy_nonoverlapping(sample.image.as_ptr(), buf, buf_len);
        AruStatus::AruOk
    })
}

/// Copy the binary mask of sample `index` into `buf` (`h*w` bytes of 0/1).
///
/// # Safety
/// `buf` must point to `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_mask(
    ds: *const AruDataset,
    index: usize,
    buf: *mut u8,
    buf_len: usize,
) -> AruStatus {
    guarded(|| {
        let Some(ds) = ds.as_ref() else {
            return null_arg("ds");
        };
        if buf.is_null() {
            return null_arg("buf");
        }
        let Some(sample) = ds.inner.samples.get(index) else {
            return invalid(&format!(
                "index {index} out of range for {} samples",
                ds.inner.samples.len()
            ));
        };
        if buf_len != sample.mask.len() {
            return invalid(&format!(
                "buffer holds {buf_len} values, mask needs {}",
                sample.mask.len()
            ));
        }
        std::ptr::copy_nonoverlapping(sample.mask.as_ptr(), buf, buf_len);
        AruStatus::AruOk
    })
}

/// Destroy a dataset handle (null is a no-op).
///
/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn aru_dataset_free(ds: *mut AruDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Construct a randomly initialized network.
///
/// `arch` is one of `unet`, `resunet`, `attunet`, `attresunet`. `channels`
/// may be null (with `n_channels` 0) for the default 64,128,256,512 encoder
/// ladder; `bottleneck` 0 means twice the last encoder width.
///
/// # Safety
/// `channels` must point to `n_channels` values when non-null; `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn aru_net_new(
    arch: *const c_char,
    input_h: usize,
    input_w: usize,
    channels: *const usize,
    n_channels: usize,
    bottleneck: usize,
    seed: u64,
    out: *mut *mut AruNet,
) -> AruStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let arch = match utf8_arg(arch, "arch") {
            Ok(a) => a,
            Err(s) => return s,
        };
        let kind = match ArchKind::parse(arch) {
            Ok(k) => k,
            Err(e) => return fail(&e),
        };
        let ladder: Vec<usize> = if channels.is_null() {
            if n_channels != 0 {
                return invalid("channels is null but n_channels is nonzero");
            }
            vec![64, 128, 256, 512]
        } else {
            std::slice::from_raw_parts(channels, n_channels).to_vec()
        };
        if ladder.is_empty() || ladder.iter().any(|&c| c == 0) {
            return invalid("channels must be a non-empty list of positive widths");
        }
        let bottleneck = if bottleneck == 0 {
            ladder.last().unwrap() * 2
        } else {
            bottleneck
        };
        let config = NetworkConfig {
            encoder_channels: ladder,
            bottleneck_channels: bottleneck,
            input_size: (input_h, input_w),
            ..NetworkConfig::for_arch(kind)
        };
        if let Err(e) = config.validate() {
            return fail(&e);
        }
        match Network::<f32>::build(config, seed) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(AruNet { inner: net }));
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a checkpoint written by `aru_net_save` or the CLI trainer.
///
/// # Safety
/// `path` must be a NUL-terminated path; `out` as in `aru_net_new`.
#[no_mangle]
pub unsafe extern "C" fn aru_net_load(path: *const c_char, out: *mut *mut AruNet) -> AruStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Network::<f32>::load_checkpoint(Path::new(path)) {
            Ok((net, _)) => {
                *out = Box::into_raw(Box::new(AruNet { inner: net }));
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Save parameters, buffers, and architecture metadata to `path`.
///
/// # Safety
/// `net` must be a live handle; `path` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn aru_net_save(net: *const AruNet, path: *const c_char) -> AruStatus {
    guarded(|| {
        let Some(net) = net.as_ref() else {
            return null_arg("net");
        };
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match net.inner.save_checkpoint(Path::new(path), &[]) {
            Ok(()) => AruStatus::AruOk,
            Err(e) => fail(&e),
        }
    })
}

/// Fill `info` with parameter/FLOP counts and topology facts.
///
/// # Safety
/// `net` must be a live handle; `info` writable.
#[no_mangle]
pub unsafe extern "C" fn aru_net_info(net: *const AruNet, info: *mut AruNetInfo) -> AruStatus {
    guarded(|| {
        let Some(net) = net.as_ref() else {
            return null_arg("net");
        };
        if info.is_null() {
            return null_arg("info");
        }
        let (h, w) = net.inner.config.input_size;
        *info = AruNetInfo {
            parameters: net.inner.count_parameters().total,
            flops_per_image: net.inner.count_flops((h, w)),
            input_h: h,
            input_w: w,
            levels: net.inner.config.levels(),
            attention_gates: net.inner.num_gates(),
            residual: net.inner.config.use_residual,
        };
        AruStatus::AruOk
    })
}

/// Segment one image: `image` is `h*w` floats in [0,1], `probs` receives
/// `h*w` foreground probabilities.
///
/// # Safety
/// `image` must hold `image_len` floats and `probs` `probs_len` writable
/// floats.
#[no_mangle]
pub unsafe extern "C" fn aru_net_predict(
    net: *mut AruNet,
    image: *const f32,
    image_len: usize,
    probs: *mut f32,
    probs_len: usize,
) -> AruStatus {
    guarded(|| {
        let Some(net) = net.as_mut() else {
            return null_arg("net");
        };
        if image.is_null() || probs.is_null() {
            return null_arg("image/probs");
        }
        let (h, w) = net.inner.config.input_size;
        if image_len != h * w || probs_len != h * w {
            return invalid(&format!(
                "network expects {h}x{w}: image_len {image_len}, probs_len {probs_len}, need {}",
                h * w
            ));
        }
        let x = match aru_core::tensor::Tensor::from_vec(
            std::slice::from_raw_parts(image, image_len).to_vec(),
            [1, 1, h, w],
        ) {
            Ok(x) => x,
            Err(e) => return fail(&e),
        };
        match net.inner.predict(&x) {
            Ok(p) => {
                std::ptr::copy_nonoverlapping(p.data().as_ptr(), probs, probs_len);
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Defaults mirroring the published protocol: 25 epochs, lr 1e-4, batch 8,
/// validation every 5 epochs, patience 3, seed 42, augmentation on.
#[no_mangle]
pub extern "C" fn aru_train_options_default() -> AruTrainOptions {
    let d = TrainConfig::default();
    AruTrainOptions {
        epochs: d.epochs,
        lr: d.lr,
        batch: d.batch_size,
        val_every: d.val_every,
        patience: d.patience,
        seed: d.seed,
        augment: d.augment,
    }
}

/// Train in place on the dataset's train split, keeping the best-validation
/// weights. Optional outputs receive the best mean validation Dice and the
/// epoch it occurred at.
///
/// # Safety
/// `net`/`ds` must be live handles; `opts` null (defaults) or valid;
/// `best_val_dice`/`best_epoch` null or writable.
#[no_mangle]
pub unsafe extern "C" fn aru_net_train(
    net: *mut AruNet,
    ds: *const AruDataset,
    opts: *const AruTrainOptions,
    best_val_dice: *mut f64,
    best_epoch: *mut usize,
) -> AruStatus {
    guarded(|| {
        let Some(net) = net.as_mut() else {
            return null_arg("net");
        };
        let Some(ds) = ds.as_ref() else {
            return null_arg("ds");
        };
        let o = if opts.is_null() {
            aru_train_options_default()
        } else {
            *opts
        };
        let cfg = TrainConfig {
            epochs: o.epochs,
            lr: o.lr,
            batch_size: o.batch,
            val_every: o.val_every,
            patience: o.patience,
            seed: o.seed,
            augment: o.augment,
        };
        match train(&mut net.inner, &ds.inner, &cfg, None, |_| {}) {
            Ok(outcome) => {
                if !best_val_dice.is_null() {
                    *best_val_dice = outcome.best_val_dice;
                }
                if !best_epoch.is_null() {
                    *best_epoch = outcome.best_epoch;
                }
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Evaluate on one split (0 train, 1 val, 2 test) at `threshold`, writing the
/// aggregate numbers into `metrics`.
///
/// # Safety
/// `net`/`ds` must be live handles; `metrics` writable.
#[no_mangle]
pub unsafe extern "C" fn aru_net_evaluate(
    net: *mut AruNet,
    ds: *const AruDataset,
    split: i32,
    threshold: f64,
    batch: usize,
    metrics: *mut AruMetrics,
) -> AruStatus {
    guarded(|| {
        let Some(net) = net.as_mut() else {
            return null_arg("net");
        };
        let Some(ds) = ds.as_ref() else {
            return null_arg("ds");
        };
        if metrics.is_null() {
            return null_arg("metrics");
        }
        let split = match split_from(split) {
            Ok(s) => s,
            Err(s) => return s,
        };
        if !(0.0..=1.0).contains(&threshold) {
            return invalid(&format!("threshold must lie in [0,1], got {threshold}"));
        }
        match evaluate(&mut net.inner, &ds.inner, split, threshold, batch.max(1)) {
            Ok(report) => {
                let dice = &report.aggregates["dice"];
                let iou = &report.aggregates["iou"];
                *metrics = AruMetrics {
                    n: dice.n,
                    mean_dice: dice.mean,
                    sd_dice: dice.sd,
                    mean_iou: iou.mean,
                    auc_roc: report.auc_roc.unwrap_or(f64::NAN),
                };
                AruStatus::AruOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Destroy a network handle (null is a no-op).
///
/// # Safety
/// `net` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn aru_net_free(net: *mut AruNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
