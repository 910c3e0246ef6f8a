//! C ABI for the srnn forecasting engine.
//!
//! All engine state lives behind opaque handles (`SrnnGraph`, `SrnnDataset`,
//! `SrnnCheckpoint`). Functions return `SrnnStatus`; on any non-OK status the
//! thread-local message from [`srnn_last_error_message`] describes the
//! failure. Every handle returned by this library must be released with its
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rand::SeedableRng;
use srnn::autodiff::{Matrix, Mode, Tape};
use srnn::dataset::{align_to_graph, load_prepared, parse_speeds_csv, prepare, PreparedDataset};
use srnn::error::Error;
use srnn::evaluation::evaluate;
use srnn::graph::{load_adjacency_csv, RoadGraph};
use srnn::model::{
    forward_window, load_checkpoint, param_count, save_checkpoint, Checkpoint, Hyperparams,
};
use srnn::train::{train, TrainConfig};

/// Status codes shared with the CLI exit-code classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrnnStatus {
    Ok = 0,
    /// A null pointer or malformed argument was passed.
    InvalidArgument = 1,
    /// Bad configuration values.
    Config = 2,
    /// Data, parse, io or checkpoint failure.
    Data = 3,
    /// Training diverged or aborted.
    Training = 4,
}

pub struct SrnnGraph(RoadGraph);
pub struct SrnnDataset(PreparedDataset);
pub struct SrnnCheckpoint(Checkpoint);

/// Model sizes for training.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrnnHyperparams {
    pub node_hidden: usize,
    pub spatial_hidden: usize,
    pub temporal_hidden: usize,
    pub embed: usize,
    pub dropout: f64,
}

/// Training-loop options. A non-positive `grad_clip` disables clipping.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrnnTrainOptions {
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub window_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> SrnnStatus {
    match err {
        Error::Config(_) => SrnnStatus::Config,
        Error::Training(_) => SrnnStatus::Training,
        _ => SrnnStatus::Data,
    }
}

fn fail(err: &Error) -> SrnnStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn invalid(msg: &str) -> SrnnStatus {
    set_error(msg);
    SrnnStatus::InvalidArgument
}

/// Run a body, converting panics into InvalidArgument rather than unwinding
/// across the FFI boundary.
fn guarded(body: impl FnOnce() -> SrnnStatus) -> SrnnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => invalid("internal panic"),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, SrnnStatus> {
    if path.is_null() {
        return Err(invalid("path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(invalid("path is not valid UTF-8")),
    }
}

/// Message for the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn srnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Default hyperparameters: hidden 64 everywhere, embedding 32, dropout 0.5.
#[no_mangle]
pub extern "C" fn srnn_hyperparams_default() -> SrnnHyperparams {
    let hp = Hyperparams::default();
    SrnnHyperparams {
        node_hidden: hp.node_hidden,
        spatial_hidden: hp.spatial_hidden,
        temporal_hidden: hp.temporal_hidden,
        embed: hp.embed,
        dropout: hp.dropout,
    }
}

/// Default training options: 10 epochs, lr 0.0005 with 0.99 decay, clip 5.0,
/// shuffled windows of length 10.
#[no_mangle]
pub extern "C" fn srnn_train_options_default() -> SrnnTrainOptions {
    let cfg = TrainConfig::default();
    SrnnTrainOptions {
        epochs: cfg.epochs,
        lr0: cfg.lr0,
        decay: cfg.decay,
        grad_clip: cfg.grad_clip.unwrap_or(0.0),
        seed: cfg.seed,
        shuffle: cfg.shuffle,
        window_len: cfg.window_len,
    }
}

/// Load a road graph from an adjacency CSV.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn srnn_graph_load(
    path: *const c_char,
    out: *mut *mut SrnnGraph,
) -> SrnnStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_adjacency_csv(&path) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(SrnnGraph(g)));
                SrnnStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `graph` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn srnn_graph_free(graph: *mut SrnnGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn srnn_graph_node_count(graph: *const SrnnGraph) -> usize {
    if graph.is_null() {
        return 0;
    }
    (*graph).0.node_count()
}

/// # Safety
/// `graph` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn srnn_graph_spatial_edge_count(graph: *const SrnnGraph) -> usize {
    if graph.is_null() {
        return 0;
    }
    (*graph).0.spatial_edges().len()
}

/// Load and prepare a dataset for a graph. `path` may be a speeds CSV (it is
/// imputed, split at `split_fraction` and scaled) or a prepared-dataset JSON
/// written by the CLI. Columns are aligned to the graph's node order.
///
/// # Safety
/// `path` must be NUL-terminated; `graph` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srnn_dataset_load(
    path: *const c_char,
    graph: *const SrnnGraph,
    split_fraction: f64,
    window_len: usize,
    out: *mut *mut SrnnDataset,
) -> SrnnStatus {
    guarded(|| {
        if out.is_null() || graph.is_null() {
            return invalid("graph or out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let g = &(*graph).0;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                return fail(&Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })
            }
        };
        let result = if text.trim_start().starts_with('{') {
            load_prepared(&path).and_then(|p| {
                Ok(PreparedDataset {
                    dataset: align_to_graph(&p.dataset, g)?,
                    ..p
                })
            })
        } else {
            parse_speeds_csv(&text)
                .and_then(|ds| align_to_graph(&ds, g))
                .and_then(|ds| prepare(&ds, split_fraction, window_len))
        };
        match result {
            Ok(p) => {
                *out = Box::into_raw(Box::new(SrnnDataset(p)));
                SrnnStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `dataset` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn srnn_dataset_free(dataset: *mut SrnnDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn srnn_dataset_rows(dataset: *const SrnnDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).0.dataset.time_steps()
}

/// # Safety
/// `dataset` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn srnn_dataset_segments(dataset: *const SrnnDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).0.dataset.segment_count()
}

/// Train a model; on success `out` receives a new checkpoint handle.
///
/// # Safety
/// `graph` and `dataset` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srnn_train(
    graph: *const SrnnGraph,
    dataset: *const SrnnDataset,
    hyperparams: SrnnHyperparams,
    options: SrnnTrainOptions,
    out: *mut *mut SrnnCheckpoint,
) -> SrnnStatus {
    guarded(|| {
        if graph.is_null() || dataset.is_null() || out.is_null() {
            return invalid("graph, dataset or out is null");
        }
        let hp = Hyperparams {
            node_hidden: hyperparams.node_hidden,
            spatial_hidden: hyperparams.spatial_hidden,
            temporal_hidden: hyperparams.temporal_hidden,
            embed: hyperparams.embed,
            dropout: hyperparams.dropout,
        };
        let cfg = TrainConfig {
            epochs: options.epochs,
            lr0: options.lr0,
            decay: options.decay,
            grad_clip: (options.grad_clip > 0.0).then_some(options.grad_clip),
            seed: options.seed,
            shuffle: options.shuffle,
            window_len: options.window_len,
        };
        match train(&(*graph).0, &(*dataset).0, &hp, &cfg) {
            Ok((ckpt, _history)) => {
                *out = Box::into_raw(Box::new(SrnnCheckpoint(ckpt)));
                SrnnStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srnn_checkpoint_load(
    path: *const c_char,
    out: *mut *mut SrnnCheckpoint,
) -> SrnnStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(&path) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(SrnnCheckpoint(ckpt)));
                SrnnStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `checkpoint` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn srnn_checkpoint_save(
    checkpoint: *const SrnnCheckpoint,
    path: *const c_char,
) -> SrnnStatus {
    guarded(|| {
        if checkpoint.is_null() {
            return invalid("checkpoint is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_checkpoint(&(*checkpoint).0, &path) {
            Ok(()) => SrnnStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `checkpoint` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn srnn_checkpoint_free(checkpoint: *mut SrnnCheckpoint) {
    if !checkpoint.is_null() {
        drop(Box::from_raw(checkpoint));
    }
}

/// Number of trainable scalars; independent of any graph.
///
/// # Safety
/// `checkpoint` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn srnn_checkpoint_param_count(
    checkpoint: *const SrnnCheckpoint,
) -> usize {
    if checkpoint.is_null() {
        return 0;
    }
    param_count(&(*checkpoint).0.hyperparams)
}

/// Final-step evaluation RMSE in km/h over the dataset's held-out rows.
///
/// # Safety
/// All handles must be live; `out_rmse` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn srnn_evaluate(
    checkpoint: *const SrnnCheckpoint,
    graph: *const SrnnGraph,
    dataset: *const SrnnDataset,
    window_len: usize,
    out_rmse: *mut f64,
) -> SrnnStatus {
    guarded(|| {
        if checkpoint.is_null() || graph.is_null() || dataset.is_null() || out_rmse.is_null() {
            return invalid("checkpoint, graph, dataset or out_rmse is null");
        }
        let prepared = &(*dataset).0;
        match evaluate(
            &(*checkpoint).0,
            &(*graph).0,
            &prepared.dataset,
            prepared.eval_rows(),
            window_len,
        ) {
            Ok(outcome) => {
                *out_rmse = outcome.rmse;
                SrnnStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// One-step forecast from raw history.
///
/// `history` is row-major with `window_len + 1` rows of `node_count` speeds
/// in km/h (oldest first; the extra leading row feeds the temporal lookback).
/// `out` receives `node_count` predicted speeds in km/h.
///
/// # Safety
/// `history` must hold (window_len + 1) * node_count doubles; `out` must hold
/// node_count doubles; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn srnn_predict_next(
    checkpoint: *const SrnnCheckpoint,
    graph: *const SrnnGraph,
    history: *const f64,
    window_len: usize,
    out: *mut f64,
) -> SrnnStatus {
    guarded(|| {
        if checkpoint.is_null() || graph.is_null() || history.is_null() || out.is_null() {
            return invalid("checkpoint, graph, history or out is null");
        }
        if window_len == 0 {
            return invalid("window_len must be at least 1");
        }
        let ckpt = &(*checkpoint).0;
        let g = &(*graph).0;
        let n = g.node_count();
        let rows = window_len + 1;
        let raw = std::slice::from_raw_parts(history, rows * n);
        let scaled: Vec<f64> = raw.iter().map(|&x| ckpt.scaler.apply(x)).collect();
        let scaled = match Matrix::from_vec(rows, n, scaled) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let mut tape = Tape::new();
        let tp = ckpt.params.register(&mut tape);
        // dropout is off in eval mode, so the rng seed is irrelevant
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        match forward_window(
            &mut tape,
            g,
            &tp,
            &ckpt.hyperparams,
            &scaled,
            1,
            window_len,
            Mode::Eval,
            &mut rng,
        ) {
            Ok(win) => {
                let y = tape.value(win.steps[window_len - 1].y);
                for u in 0..n {
                    *out.add(u) = ckpt.scaler.invert(y.get(u, 0));
                }
                SrnnStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
