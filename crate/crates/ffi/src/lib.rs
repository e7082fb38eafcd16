//! Flat C ABI over the simulator: opaque handles, integer status codes,
//! and a thread-local last-error message. The generated header lands in
//! `include/alcim.h` at build time.
//!
//! Ownership: every `*_new`/`*_create` output is released with the matching
//! `*_free`; strings returned by the library are released with
//! `alcim_string_free`. Handles are not thread-safe; use one per thread.

use alcim_core::alsim::{simulate, SimOptions, SimResult};
use alcim_core::energy::{compare_dataflows, EnergyTable};
use alcim_core::hnn::{Supermask, WeightDistribution, WeightGenConfig};
use alcim_core::lpt::{max_activation, plan_lpt, validate_plan, FootprintMode, SchedulePlan};
use alcim_core::netspec::{builtin_network, CoreGeometry, NetworkSpec, QTensor};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlcimStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    Infeasible = 3,
    MaskMismatch = 4,
    VerifyFailed = 5,
    InternalError = 6,
}

/// Footprint accounting modes.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub enum AlcimFootprintMode {
    LayerByLayer = 0,
    CrossLayer = 1,
    Lpt = 2,
}

/// Access-counter selectors for `alcim_sim_counter`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub enum AlcimCounter {
    IcimRead = 0,
    IcimWrite = 1,
    OcimRead = 2,
    OcimWrite = 3,
    TmemRead = 4,
    TmemWrite = 5,
    MmemRead = 6,
    WbufAccess = 7,
    OffchipRead = 8,
    OffchipWrite = 9,
    Cycles = 10,
}

/// Dataflow comparison ratios (relative energies and access counts).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct AlcimRatios {
    pub as_vs_al_energy: f64,
    pub ws_vs_as_energy: f64,
    pub baseline_vs_al_accesses: f64,
    pub baseline_vs_al_energy: f64,
    pub tc_overhead: f64,
}

pub struct AlcimNetwork {
    net: NetworkSpec,
    geom: CoreGeometry,
}

pub struct AlcimPlan {
    plan: SchedulePlan,
}

pub struct AlcimSim {
    result: SimResult,
    verified: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let c = CString::new(msg.as_ref().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &alcim_core::Error) -> AlcimStatus {
    use alcim_core::Error as E;
    match e {
        E::Infeasible { .. } => AlcimStatus::Infeasible,
        E::MaskMismatch(_) => AlcimStatus::MaskMismatch,
        E::MalformedFile(_) | E::Json(_) => AlcimStatus::ParseError,
        E::UnknownNetwork(_) | E::InvalidArg(_) | E::InvalidNetwork(_) | E::InvalidTensor(_)
        | E::ShapeMismatch { .. } | E::InvalidEnergyTable(_) | E::PlanMismatch(_) => {
            AlcimStatus::InvalidArgument
        }
        _ => AlcimStatus::InternalError,
    }
}

fn fail(e: alcim_core::Error) -> AlcimStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

/// Message for the most recent error on this thread. Valid until the next
/// failing call; do not free.
#[no_mangle]
pub extern "C" fn alcim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as major*10000 + minor*100 + patch.
#[no_mangle]
pub extern "C" fn alcim_version() -> u32 {
    100
}

/// Frees a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alcim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

/// Builds a builtin network (`resnet18`, `resnet50`, `toy_vgg`).
///
/// # Safety
/// `name` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_network_builtin(
    name: *const c_char,
    input_side: u32,
    out: *mut *mut AlcimNetwork,
) -> AlcimStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return AlcimStatus::InvalidArgument;
    }
    let Some(name) = cstr(name) else {
        set_error("name is null or not UTF-8");
        return AlcimStatus::InvalidArgument;
    };
    match builtin_network(name, input_side as usize) {
        Ok(net) => {
            *out = Box::into_raw(Box::new(AlcimNetwork { net, geom: CoreGeometry::default() }));
            AlcimStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Parses a network descriptor from JSON text.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_network_from_json(
    json: *const c_char,
    out: *mut *mut AlcimNetwork,
) -> AlcimStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return AlcimStatus::InvalidArgument;
    }
    let Some(json) = cstr(json) else {
        set_error("json is null or not UTF-8");
        return AlcimStatus::InvalidArgument;
    };
    match NetworkSpec::from_json(json) {
        Ok(net) => {
            *out = Box::into_raw(Box::new(AlcimNetwork { net, geom: CoreGeometry::default() }));
            AlcimStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn alcim_network_layer_count(net: *const AlcimNetwork) -> u32 {
    if net.is_null() {
        return 0;
    }
    (*net).net.layers.len() as u32
}

/// # Safety
/// `net` must come from a network constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alcim_network_free(net: *mut AlcimNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Plans the tiling schedule for a network.
///
/// # Safety
/// `net` must be a live network handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_plan_create(
    net: *const AlcimNetwork,
    out: *mut *mut AlcimPlan,
) -> AlcimStatus {
    if net.is_null() || out.is_null() {
        set_error("null handle");
        return AlcimStatus::InvalidArgument;
    }
    let n = &*net;
    match plan_lpt(&n.net, &n.geom) {
        Ok(plan) => {
            *out = Box::into_raw(Box::new(AlcimPlan { plan }));
            AlcimStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn alcim_plan_tc_event_count(plan: *const AlcimPlan) -> u32 {
    if plan.is_null() {
        return 0;
    }
    (*plan).plan.tc_events.len() as u32
}

/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn alcim_plan_tmem_bytes(plan: *const AlcimPlan) -> u64 {
    if plan.is_null() {
        return 0;
    }
    (*plan).plan.tmem_bytes_required as u64
}

/// Serializes the plan to JSON; release with `alcim_string_free`.
///
/// # Safety
/// `plan` must be a live plan handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_plan_to_json(
    plan: *const AlcimPlan,
    out: *mut *mut c_char,
) -> AlcimStatus {
    if plan.is_null() || out.is_null() {
        set_error("null handle");
        return AlcimStatus::InvalidArgument;
    }
    match (*plan).plan.to_json() {
        Ok(js) => {
            *out = CString::new(js).unwrap_or_default().into_raw();
            AlcimStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Re-derives the plan's invariants; returns the violation count.
///
/// # Safety
/// `plan` and `net` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn alcim_plan_validate(
    plan: *const AlcimPlan,
    net: *const AlcimNetwork,
) -> u32 {
    if plan.is_null() || net.is_null() {
        return u32::MAX;
    }
    validate_plan(&(*plan).plan, &(*net).net, &(*net).geom).len() as u32
}

/// # Safety
/// `plan` must come from `alcim_plan_create` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alcim_plan_free(plan: *mut AlcimPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Max live activation bytes under the given accounting mode.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_footprint_max(
    net: *const AlcimNetwork,
    mode: AlcimFootprintMode,
    out: *mut u64,
) -> AlcimStatus {
    if net.is_null() || out.is_null() {
        set_error("null handle");
        return AlcimStatus::InvalidArgument;
    }
    let n = &*net;
    let mode = match mode {
        AlcimFootprintMode::LayerByLayer => FootprintMode::LayerByLayer,
        AlcimFootprintMode::CrossLayer => FootprintMode::CrossLayer,
        AlcimFootprintMode::Lpt => FootprintMode::Lpt,
    };
    match max_activation(&n.net, mode, &n.geom) {
        Ok(r) => {
            *out = r.max_live_activation_bytes as u64;
            AlcimStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs the simulator. With `count_only` nonzero, values are skipped and
/// no golden verification happens; otherwise a seed-derived input image is
/// executed and the output is verified against the golden model.
///
/// # Safety
/// `net` and `plan` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_sim_run(
    net: *const AlcimNetwork,
    plan: *const AlcimPlan,
    seed: u64,
    sparsity: f64,
    weight_bits: u32,
    count_only: u8,
    out: *mut *mut AlcimSim,
) -> AlcimStatus {
    if net.is_null() || plan.is_null() || out.is_null() {
        set_error("null handle");
        return AlcimStatus::InvalidArgument;
    }
    let n = &*net;
    let p = &*plan;
    let cfg = match WeightGenConfig::new(seed, weight_bits, WeightDistribution::UniformSigned) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mask = match Supermask::random(seed, &n.net, sparsity) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let input = if count_only != 0 { None } else { Some(synth_input(&n.net, seed)) };
    let opts = SimOptions { count_only: count_only != 0, trace: false };
    let result = match simulate(&n.net, &p.plan, &n.geom, &cfg, &mask, input.as_ref(), opts) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let verified = if count_only != 0 {
        false
    } else {
        let weights = match alcim_core::hnn::materialize(&cfg, &mask, &n.net) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        let golden =
            match alcim_core::refconv::run_reference(&n.net, &weights, input.as_ref().unwrap(), &p.plan) {
                Ok(g) => g,
                Err(e) => return fail(e),
            };
        if result.output.as_ref() != Some(&golden.output) {
            set_error("simulator output differs from the golden model");
            return AlcimStatus::VerifyFailed;
        }
        true
    };
    *out = Box::into_raw(Box::new(AlcimSim { result, verified }));
    AlcimStatus::Ok
}

/// # Safety
/// `sim` must be null or a live simulation handle.
#[no_mangle]
pub unsafe extern "C" fn alcim_sim_counter(sim: *const AlcimSim, counter: AlcimCounter) -> u64 {
    if sim.is_null() {
        return 0;
    }
    let t = &(*sim).result.counters.total;
    match counter {
        AlcimCounter::IcimRead => t.icim_read,
        AlcimCounter::IcimWrite => t.icim_write,
        AlcimCounter::OcimRead => t.ocim_read,
        AlcimCounter::OcimWrite => t.ocim_write,
        AlcimCounter::TmemRead => t.tmem_read,
        AlcimCounter::TmemWrite => t.tmem_write,
        AlcimCounter::MmemRead => t.mmem_read,
        AlcimCounter::WbufAccess => t.wbuf_access,
        AlcimCounter::OffchipRead => t.offchip_read,
        AlcimCounter::OffchipWrite => t.offchip_write,
        AlcimCounter::Cycles => t.cycles,
    }
}

/// Nonzero when the run was verified bitwise against the golden model.
///
/// # Safety
/// `sim` must be null or a live simulation handle.
#[no_mangle]
pub unsafe extern "C" fn alcim_sim_verified(sim: *const AlcimSim) -> u8 {
    if sim.is_null() {
        return 0;
    }
    (*sim).verified as u8
}

/// # Safety
/// `sim` must come from `alcim_sim_run` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alcim_sim_free(sim: *mut AlcimSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Dataflow comparison with the default energy table.
///
/// # Safety
/// `net` and `plan` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alcim_compare_ratios(
    net: *const AlcimNetwork,
    plan: *const AlcimPlan,
    out: *mut AlcimRatios,
) -> AlcimStatus {
    if net.is_null() || plan.is_null() || out.is_null() {
        set_error("null handle");
        return AlcimStatus::InvalidArgument;
    }
    let n = &*net;
    let p = &*plan;
    match compare_dataflows(&n.net, &p.plan, &n.geom, &EnergyTable::default()) {
        Ok(cmp) => {
            *out = AlcimRatios {
                as_vs_al_energy: cmp.as_al_energy_ratio,
                ws_vs_as_energy: cmp.ws_as_energy_ratio,
                baseline_vs_al_accesses: cmp.baseline_access_ratio,
                baseline_vs_al_energy: cmp.baseline_energy_ratio,
                tc_overhead: cmp.tc_overhead_ratio,
            };
            AlcimStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Deterministic pseudo-random 8-bit input derived from the seed; matches
/// the CLI's default input.
fn synth_input(net: &NetworkSpec, seed: u64) -> QTensor {
    let s = net.input_shape;
    let mut t = QTensor::zeros(s.h, s.w, s.c);
    for (i, v) in t.values.iter_mut().enumerate() {
        let mut x = seed ^ 0x414c_4349_4d00_0000u64 ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        x ^= x >> 30;
        x = x.wrapping_mul(0xbf58476d1ce4e5b9);
        x ^= x >> 27;
        *v = (x % 256) as i32;
    }
    t
}
