//! Exercises the C ABI through the exported extern functions.

use alcim_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn builtin(name: &str, side: u32) -> *mut AlcimNetwork {
    let cname = CString::new(name).unwrap();
    let mut net: *mut AlcimNetwork = ptr::null_mut();
    let st = unsafe { alcim_network_builtin(cname.as_ptr(), side, &mut net) };
    assert_eq!(st, AlcimStatus::Ok);
    assert!(!net.is_null());
    net
}

#[test]
fn builtin_network_and_plan_lifecycle() {
    let net = builtin("resnet50", 256);
    assert_eq!(unsafe { alcim_network_layer_count(net) }, 68);

    let mut plan: *mut AlcimPlan = ptr::null_mut();
    let st = unsafe { alcim_plan_create(net, &mut plan) };
    assert_eq!(st, AlcimStatus::Ok);
    assert_eq!(unsafe { alcim_plan_tc_event_count(plan) }, 3);
    assert_eq!(unsafe { alcim_plan_tmem_bytes(plan) }, 24_576);
    assert_eq!(unsafe { alcim_plan_validate(plan, net) }, 0);

    let mut js: *mut std::ffi::c_char = ptr::null_mut();
    let st = unsafe { alcim_plan_to_json(plan, &mut js) };
    assert_eq!(st, AlcimStatus::Ok);
    let text = unsafe { CStr::from_ptr(js) }.to_str().unwrap().to_owned();
    assert!(text.contains("tc_events"));
    unsafe { alcim_string_free(js) };

    unsafe {
        alcim_plan_free(plan);
        alcim_network_free(net);
    }
}

#[test]
fn unknown_builtin_reports_error() {
    let cname = CString::new("alexnet").unwrap();
    let mut net: *mut AlcimNetwork = ptr::null_mut();
    let st = unsafe { alcim_network_builtin(cname.as_ptr(), 224, &mut net) };
    assert_eq!(st, AlcimStatus::InvalidArgument);
    let msg = unsafe { CStr::from_ptr(alcim_last_error()) }.to_str().unwrap();
    assert!(msg.contains("alexnet"), "got: {msg}");
}

#[test]
fn footprints_through_the_abi() {
    let net = builtin("resnet50", 256);
    let mut v = 0u64;
    assert_eq!(
        unsafe { alcim_footprint_max(net, AlcimFootprintMode::LayerByLayer, &mut v) },
        AlcimStatus::Ok
    );
    assert_eq!(v, 1_048_576);
    assert_eq!(
        unsafe { alcim_footprint_max(net, AlcimFootprintMode::Lpt, &mut v) },
        AlcimStatus::Ok
    );
    assert_eq!(v, 40_960);
    unsafe { alcim_network_free(net) };
}

#[test]
fn verified_simulation_and_counters() {
    let net = builtin("toy_vgg", 16);
    let mut plan: *mut AlcimPlan = ptr::null_mut();
    assert_eq!(unsafe { alcim_plan_create(net, &mut plan) }, AlcimStatus::Ok);

    let mut sim: *mut AlcimSim = ptr::null_mut();
    let st = unsafe { alcim_sim_run(net, plan, 7, 0.5, 4, 0, &mut sim) };
    assert_eq!(st, AlcimStatus::Ok);
    assert_eq!(unsafe { alcim_sim_verified(sim) }, 1);
    assert!(unsafe { alcim_sim_counter(sim, AlcimCounter::Cycles) } > 0);
    assert!(unsafe { alcim_sim_counter(sim, AlcimCounter::OcimWrite) } > 0);
    assert_eq!(unsafe { alcim_sim_counter(sim, AlcimCounter::TmemRead) }, 0);
    unsafe {
        alcim_sim_free(sim);
        alcim_plan_free(plan);
        alcim_network_free(net);
    }
}

#[test]
fn dataflow_ratios_through_the_abi() {
    let net = builtin("resnet50", 256);
    let mut plan: *mut AlcimPlan = ptr::null_mut();
    assert_eq!(unsafe { alcim_plan_create(net, &mut plan) }, AlcimStatus::Ok);
    let mut r = AlcimRatios::default();
    assert_eq!(unsafe { alcim_compare_ratios(net, plan, &mut r) }, AlcimStatus::Ok);
    assert!(r.as_vs_al_energy > 1.0);
    assert!(r.ws_vs_as_energy > 1.0);
    assert!(r.baseline_vs_al_accesses > 1.0);
    assert!(r.tc_overhead > 1.0 && r.tc_overhead < 1.1);
    unsafe {
        alcim_plan_free(plan);
        alcim_network_free(net);
    }
}

#[test]
fn network_from_json_round_trip() {
    let js = alcim_core::netspec::builtin_network("toy_vgg", 16)
        .unwrap()
        .to_json()
        .unwrap();
    let cjs = CString::new(js).unwrap();
    let mut net: *mut AlcimNetwork = ptr::null_mut();
    assert_eq!(unsafe { alcim_network_from_json(cjs.as_ptr(), &mut net) }, AlcimStatus::Ok);
    assert_eq!(unsafe { alcim_network_layer_count(net) }, 12);
    unsafe { alcim_network_free(net) };
}

#[test]
fn generated_header_exists_and_names_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/alcim.h");
    let text = std::fs::read_to_string(&header).expect("header generated at build time");
    for sym in [
        "alcim_network_builtin",
        "alcim_plan_create",
        "alcim_sim_run",
        "alcim_compare_ratios",
        "alcim_last_error",
        "AlcimStatus",
        "AlcimRatios",
    ] {
        assert!(text.contains(sym), "header is missing {sym}");
    }
}
