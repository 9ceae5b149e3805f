//! C ABI over `pcnlab`.
//!
//! Graphs are opaque handles created by `pcn_graph_new`, `pcn_graph_generate`
//! or `pcn_graph_from_json` and released with `pcn_graph_free`. Every fallible
//! call returns a [`PcnStatus`]; on failure a description is available from
//! `pcn_last_error_message` on the same thread. Strings returned by the
//! library are released with `pcn_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pcnlab::graph::{GraphError, NodeId, PcnGraph, Sat};
use pcnlab::harness::{build_fixture, ExperimentConfig};
use pcnlab::htlc::HtlcEngine;
use pcnlab::metrics::{self, MetricsReport};
use pcnlab::planner::{run_attack_round, RoundConfig, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PcnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownNode = 3,
    DuplicateNode = 4,
    DuplicateChannel = 5,
    NoSuchChannel = 6,
    InsufficientBalance = 7,
    GraphError = 8,
    PlannerError = 9,
    MetricsError = 10,
    GenerationFailed = 11,
    InvalidJson = 12,
    Panic = 99,
}

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PcnStrategy {
    MinPay = 0,
    SpcrMax = 1,
    Random = 2,
    General = 3,
}

fn strategy_from_code(code: u32) -> Option<Strategy> {
    Some(match code {
        c if c == PcnStrategy::MinPay as u32 => Strategy::MinPay,
        c if c == PcnStrategy::SpcrMax as u32 => Strategy::SpcrMax,
        c if c == PcnStrategy::Random as u32 => Strategy::Random,
        c if c == PcnStrategy::General as u32 => Strategy::General,
        _ => return None,
    })
}

/// Metrics of one attack round.
#[repr(C)]
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct PcnRoundSummary {
    pub locked_payment: u64,
    pub mean_pcr: f64,
    pub mean_spcr: f64,
    pub mean_deviation: f64,
    pub gamma: f64,
    pub path_count: u64,
    pub unusable_paths: u64,
    /// Percent of paths per PCR bin: [0,25), [25,50), [50,75), [75,100].
    pub pcr_histogram: [f64; 4],
}

/// Opaque graph handle, plus the Sybil pairs attacks run between.
pub struct PcnGraphHandle {
    graph: PcnGraph,
    pairs: Vec<(NodeId, NodeId)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PcnStatus, msg: impl Into<String>) -> PcnStatus {
    set_error(msg);
    status
}

fn graph_status(e: &GraphError) -> PcnStatus {
    let code = match e {
        GraphError::UnknownNode(_) => PcnStatus::UnknownNode,
        GraphError::DuplicateNode(_) => PcnStatus::DuplicateNode,
        GraphError::DuplicateChannel(..) => PcnStatus::DuplicateChannel,
        GraphError::NoSuchChannel(..) => PcnStatus::NoSuchChannel,
        GraphError::InsufficientBalance { .. } => PcnStatus::InsufficientBalance,
        GraphError::InvalidDocument(_) => PcnStatus::InvalidJson,
        _ => PcnStatus::GraphError,
    };
    fail(code, e.to_string())
}

/// Runs `f`, turning a panic into `PcnStatus::Panic`.
fn guard(f: impl FnOnce() -> PcnStatus) -> PcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == PcnStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(PcnStatus::Panic, "internal panic"),
    }
}

unsafe fn handle_mut<'a>(h: *mut PcnGraphHandle) -> Result<&'a mut PcnGraphHandle, PcnStatus> {
    h.as_mut()
        .ok_or_else(|| fail(PcnStatus::NullPointer, "null graph handle"))
}

unsafe fn handle_ref<'a>(h: *const PcnGraphHandle) -> Result<&'a PcnGraphHandle, PcnStatus> {
    h.as_ref()
        .ok_or_else(|| fail(PcnStatus::NullPointer, "null graph handle"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn pcn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New empty graph. Never returns NULL.
#[no_mangle]
pub extern "C" fn pcn_graph_new() -> *mut PcnGraphHandle {
    Box::into_raw(Box::new(PcnGraphHandle {
        graph: PcnGraph::new(),
        pairs: Vec::new(),
    }))
}

/// Releases a graph; NULL is ignored.
///
/// # Safety
/// `h` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_free(h: *mut PcnGraphHandle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Generates a calibrated topology with `pair_count` Sybil pairs attached,
/// using the default generator settings otherwise.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_generate(
    honest_node_count: u32,
    pair_count: u32,
    seed: u64,
    out: *mut *mut PcnGraphHandle,
) -> PcnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        let mut cfg = ExperimentConfig {
            pair_count: pair_count as usize,
            seed,
            ..ExperimentConfig::default()
        };
        cfg.topology.honest_node_count = honest_node_count as usize;
        if let Err(e) = cfg.topology.validate().and(cfg.effective_sybil().validate()) {
            return fail(PcnStatus::InvalidArgument, e.to_string());
        }
        match build_fixture(&cfg, 0) {
            Ok(fx) => {
                *out = Box::into_raw(Box::new(PcnGraphHandle {
                    graph: fx.graph,
                    pairs: fx.pairs,
                }));
                PcnStatus::Ok
            }
            Err(e) => fail(PcnStatus::GenerationFailed, e.to_string()),
        }
    })
}

/// # Safety
/// `h` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_add_node(h: *mut PcnGraphHandle, id: u32) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_mut(h));
        match h.graph.add_node(NodeId(id)) {
            Ok(()) => PcnStatus::Ok,
            Err(e) => graph_status(&e),
        }
    })
}

/// Opens a channel funded with `fund_xy` on `x`'s side and `fund_yx` on `y`'s.
///
/// # Safety
/// `h` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_open_channel(
    h: *mut PcnGraphHandle,
    x: u32,
    y: u32,
    fund_xy: u64,
    fund_yx: u64,
) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_mut(h));
        match h.graph.open_channel(NodeId(x), NodeId(y), fund_xy, fund_yx) {
            Ok(_) => PcnStatus::Ok,
            Err(e) => graph_status(&e),
        }
    })
}

/// Registers an attacking (sender, receiver) pair; both become Sybils.
///
/// # Safety
/// `h` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_add_attack_pair(h: *mut PcnGraphHandle, sender: u32, receiver: u32) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_mut(h));
        if sender == receiver {
            return fail(PcnStatus::InvalidArgument, "sender and receiver must differ");
        }
        for n in [sender, receiver] {
            if let Err(e) = h.graph.mark_sybil(NodeId(n)) {
                return graph_status(&e);
            }
        }
        h.pairs.push((NodeId(sender), NodeId(receiver)));
        PcnStatus::Ok
    })
}

/// Funds `from` can currently send to `to` over their channel.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_balance(h: *const PcnGraphHandle, from: u32, to: u32, out: *mut u64) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_ref(h));
        if out.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        match h.graph.directed_balance(NodeId(from), NodeId(to)) {
            Ok(b) => {
                *out = b;
                PcnStatus::Ok
            }
            Err(e) => graph_status(&e),
        }
    })
}

/// # Safety
/// `h` and the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_counts(
    h: *const PcnGraphHandle,
    nodes: *mut u64,
    channels: *mut u64,
    attack_pairs: *mut u64,
) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_ref(h));
        if nodes.is_null() || channels.is_null() || attack_pairs.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        *nodes = h.graph.node_count() as u64;
        *channels = h.graph.channel_count() as u64;
        *attack_pairs = h.pairs.len() as u64;
        PcnStatus::Ok
    })
}

/// Serializes the graph to JSON; free the result with `pcn_string_free`.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_to_json(h: *const PcnGraphHandle, out: *mut *mut c_char) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_ref(h));
        if out.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        let mut doc = h.graph.to_document();
        doc.attack_pairs = h.pairs.clone();
        let text = serde_json::to_string(&doc).expect("graph document serializes");
        *out = CString::new(text).expect("json has no NUL").into_raw();
        PcnStatus::Ok
    })
}

/// Parses a graph produced by `pcn_graph_to_json` or the `gen` command.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcn_graph_from_json(json: *const c_char, out: *mut *mut PcnGraphHandle) -> PcnStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(PcnStatus::NullPointer, "null pointer argument");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(PcnStatus::InvalidJson, "input is not UTF-8");
        };
        let doc: pcnlab::graph::GraphDocument = match serde_json::from_str(text) {
            Ok(d) => d,
            Err(e) => return fail(PcnStatus::InvalidJson, e.to_string()),
        };
        match PcnGraph::from_document(&doc) {
            Ok(graph) => {
                *out = Box::into_raw(Box::new(PcnGraphHandle {
                    graph,
                    pairs: doc.attack_pairs,
                }));
                PcnStatus::Ok
            }
            Err(e) => graph_status(&e),
        }
    })
}

/// Releases a string returned by the library; NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pcn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn balances<'a>(ptr: *const u64, len: usize) -> Result<&'a [Sat], PcnStatus> {
    if ptr.is_null() {
        return Err(fail(PcnStatus::NullPointer, "null balance array"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Path congestion ratio of `alpha` over the given channel balances.
///
/// # Safety
/// `balances` must point to `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcn_metrics_pcr(alpha: u64, balances_ptr: *const u64, len: usize, out: *mut f64) -> PcnStatus {
    guard(|| {
        let b = tri!(balances(balances_ptr, len));
        if out.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        match metrics::pcr(alpha, b) {
            Ok(v) => {
                *out = v;
                PcnStatus::Ok
            }
            Err(e) => fail(PcnStatus::MetricsError, e.to_string()),
        }
    })
}

/// Scaled path congestion ratio for a path of `length` channels.
///
/// # Safety
/// `balances` must point to `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcn_metrics_spcr(
    alpha: u64,
    balances_ptr: *const u64,
    len: usize,
    length: usize,
    l_max: usize,
    out: *mut f64,
) -> PcnStatus {
    guard(|| {
        let b = tri!(balances(balances_ptr, len));
        if out.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        match metrics::spcr(alpha, b, length, l_max) {
            Ok(v) => {
                *out = v;
                PcnStatus::Ok
            }
            Err(e) => fail(PcnStatus::MetricsError, e.to_string()),
        }
    })
}

/// Runs one attack round with every registered sender spending up to
/// `budget`, scores it against `threshold`, then lets all HTLCs expire so
/// the graph returns to its previous balances. `strategy` is a
/// `PcnStrategy` value.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pcn_run_round(
    h: *mut PcnGraphHandle,
    strategy: u32,
    budget: u64,
    threshold: f64,
    seed: u64,
    out: *mut PcnRoundSummary,
) -> PcnStatus {
    guard(|| {
        let h = tri!(handle_mut(h));
        if out.is_null() {
            return fail(PcnStatus::NullPointer, "null output pointer");
        }
        let Some(strategy) = strategy_from_code(strategy) else {
            return fail(PcnStatus::InvalidArgument, format!("unknown strategy code {strategy}"));
        };
        if h.pairs.is_empty() {
            return fail(PcnStatus::InvalidArgument, "graph has no attack pairs");
        }
        let mut senders: Vec<NodeId> = Vec::new();
        for &(s, _) in &h.pairs {
            if !senders.contains(&s) {
                senders.push(s);
            }
        }
        let cfg = RoundConfig::default();
        let mut engine = HtlcEngine::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budgets = vec![budget; senders.len()];
        let mut outcome = match run_attack_round(
            &mut h.graph,
            &mut engine,
            &h.pairs,
            strategy,
            &budgets,
            threshold,
            &cfg,
            &mut rng,
        ) {
            Ok(o) => o,
            Err(e) => return fail(PcnStatus::PlannerError, e.to_string()),
        };
        let report = MetricsReport::build(&outcome.samples(), cfg.l_max, Some(threshold));
        let release_at = outcome
            .htlcs
            .iter()
            .map(|x| x.expiry)
            .max()
            .unwrap_or(h.graph.block_height());
        engine.withhold_and_expire(&mut h.graph, &mut outcome.htlcs, release_at);
        let report = match report {
            Ok(r) => r,
            Err(e) => return fail(PcnStatus::MetricsError, e.to_string()),
        };
        *out = PcnRoundSummary {
            locked_payment: outcome.locked_payment(),
            mean_pcr: report.totals.mean_pcr,
            mean_spcr: report.totals.mean_spcr,
            mean_deviation: report.totals.mean_deviation,
            gamma: report.totals.gamma,
            path_count: report.totals.path_count as u64,
            unusable_paths: outcome.unusable_count() as u64,
            pcr_histogram: report.pcr_histogram,
        };
        PcnStatus::Ok
    })
}
