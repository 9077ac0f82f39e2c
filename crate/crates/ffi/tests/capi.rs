use std::ffi::{c_void, CStr, CString};
use std::ptr;

use abcprune::arch::{cost_report, load_architecture};
use abcprune::search::history::read_jsonl;
use abcprune::search::replay::validate_history;
use abcprune_ffi::*;

fn descriptor(name: &str) -> CString {
    CString::new(format!("{}/../../descriptors/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn last_error() -> String {
    let p = abc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut AbcArch {
    let mut arch = ptr::null_mut();
    assert_eq!(unsafe { abc_arch_load(descriptor(name).as_ptr(), &mut arch) }, AbcStatus::Ok);
    arch
}

fn space(arch: *const AbcArch, tenths: u8) -> *mut AbcSpace {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { abc_space_build(arch, tenths, &mut s) }, AbcStatus::Ok);
    s
}

#[test]
fn cost_matches_the_core_crate() {
    let arch = load("vgg16-cifar");
    let spec = load_architecture(descriptor("vgg16-cifar").to_str().unwrap()).unwrap();
    let mut cost = AbcCost::default();
    assert_eq!(unsafe { abc_arch_cost(arch, ptr::null(), 0, &mut cost) }, AbcStatus::Ok);
    let base = cost_report(&spec, None).unwrap();
    assert_eq!((cost.channels, cost.flops, cost.params), (base.channels, base.flops, base.params));
    assert_eq!(cost.channels, 4224);
    assert!(abc_last_error().is_null());

    let halved: Vec<usize> = spec.base_channels().iter().map(|c| c / 2).collect();
    let want = cost_report(&spec, Some(&abcprune::space::PrunedStructure::new(halved.clone()))).unwrap();
    assert_eq!(unsafe { abc_arch_cost(arch, halved.as_ptr(), halved.len(), &mut cost) }, AbcStatus::Ok);
    assert_eq!(cost.flops, want.flops);

    assert_eq!(unsafe { abc_arch_cost(arch, halved.as_ptr(), 3, &mut cost) }, AbcStatus::InvalidArgument);
    assert!(last_error().contains("searchable dimensions"));
    unsafe { abc_arch_free(arch) };
}

#[test]
fn base_channels_with_short_buffer() {
    let arch = load("vgg16-cifar");
    assert_eq!(unsafe { abc_arch_dimensions(arch) }, 13);
    let mut len = 0;
    let mut small = [0usize; 4];
    let status = unsafe { abc_arch_base_channels(arch, small.as_mut_ptr(), small.len(), &mut len) };
    assert_eq!(status, AbcStatus::BufferTooSmall);
    assert_eq!(len, 13);
    assert_eq!(small, [0; 4]);
    let mut buf = vec![0usize; len];
    assert_eq!(unsafe { abc_arch_base_channels(arch, buf.as_mut_ptr(), buf.len(), &mut len) }, AbcStatus::Ok);
    assert_eq!(&buf[..3], &[64, 64, 128]);
    unsafe { abc_arch_free(arch) };
}

#[test]
fn load_errors_are_classified() {
    let mut arch = ptr::null_mut();
    let missing = CString::new("/nonexistent/arch.json").unwrap();
    assert_eq!(unsafe { abc_arch_load(missing.as_ptr(), &mut arch) }, AbcStatus::Io);
    assert!(arch.is_null());

    let bad = CString::new(r#"{"name": "x"}"#).unwrap();
    assert_eq!(unsafe { abc_arch_from_json(bad.as_ptr(), &mut arch) }, AbcStatus::Parse);
    assert!(last_error().contains("malformed"));

    assert_eq!(unsafe { abc_arch_load(ptr::null(), &mut arch) }, AbcStatus::NullPointer);
    assert_eq!(unsafe { abc_arch_cost(ptr::null(), ptr::null(), 0, ptr::null_mut()) }, AbcStatus::NullPointer);
    assert_eq!(unsafe { abc_arch_dimensions(ptr::null()) }, 0);
    unsafe {
        abc_arch_free(ptr::null_mut());
        abc_space_free(ptr::null_mut());
        abc_result_free(ptr::null_mut());
    }
}

#[test]
fn space_candidates_snap_and_size() {
    let json = CString::new(
        r#"{"name":"one","input":{"h":4,"w":4,"c":3},"num_classes":2,"layers":[
            {"name":"c","kind":"conv","predecessors":[],"kernel":3,"stride":1,"out_channels":64,"prunable":true},
            {"name":"gap","kind":"global-pool","predecessors":["c"],"prunable":false},
            {"name":"fc","kind":"fc","predecessors":["gap"],"out_channels":2,"prunable":false}]}"#,
    )
    .unwrap();
    let mut arch = ptr::null_mut();
    assert_eq!(unsafe { abc_arch_from_json(json.as_ptr(), &mut arch) }, AbcStatus::Ok);
    let s = space(arch, 5);
    assert_eq!(unsafe { abc_space_dimensions(s) }, 1);
    let mut buf = [0usize; 16];
    let mut len = 0;
    assert_eq!(unsafe { abc_space_candidates(s, 0, buf.as_mut_ptr(), buf.len(), &mut len) }, AbcStatus::Ok);
    assert_eq!(&buf[..len], &[6, 13, 19, 26, 32]);
    assert_eq!(unsafe { abc_space_candidates(s, 1, buf.as_mut_ptr(), buf.len(), &mut len) }, AbcStatus::InvalidArgument);

    let mut v = 0;
    assert_eq!(unsafe { abc_space_snap(s, 22.0, 0, &mut v) }, AbcStatus::Ok);
    assert_eq!(v, 19);
    assert_eq!(unsafe { abc_space_snap(s, f64::NAN, 0, &mut v) }, AbcStatus::InvalidArgument);

    let mut text = [0 as std::ffi::c_char; 8];
    assert_eq!(unsafe { abc_space_size_string(s, text.as_mut_ptr(), text.len(), &mut len) }, AbcStatus::Ok);
    assert_eq!(len, 2);
    assert_eq!(unsafe { CStr::from_ptr(text.as_ptr()) }.to_str().unwrap(), "5");

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { abc_space_build(arch, 11, &mut bad) }, AbcStatus::InvalidArgument);
    assert_eq!(unsafe { abc_space_build(arch, 0, &mut bad) }, AbcStatus::InvalidArgument);
    unsafe {
        abc_space_free(s);
        abc_arch_free(arch);
    }
}

#[test]
fn large_space_size_is_exact() {
    let arch = load("vgg16-cifar");
    let s = space(arch, 10);
    let mut len = 0;
    assert_eq!(unsafe { abc_space_size_string(s, ptr::null_mut(), 0, &mut len) }, AbcStatus::BufferTooSmall);
    let mut text = vec![0 as std::ffi::c_char; len];
    assert_eq!(unsafe { abc_space_size_string(s, text.as_mut_ptr(), len, &mut len) }, AbcStatus::Ok);
    // ten candidates for each of 13 layers
    assert_eq!(unsafe { CStr::from_ptr(text.as_ptr()) }.to_str().unwrap(), "10000000000000");
    unsafe {
        abc_space_free(s);
        abc_arch_free(arch);
    }
}

struct Target {
    best: Vec<usize>,
    calls: usize,
    fail_from: usize,
}

unsafe extern "C" fn closeness(
    user_data: *mut c_void,
    channels: *const usize,
    len: usize,
    _seed: u64,
    epochs: u32,
    out_fitness: *mut f64,
) -> i32 {
    let t = &mut *user_data.cast::<Target>();
    t.calls += 1;
    if t.calls >= t.fail_from {
        return 7;
    }
    assert_eq!(epochs, 2);
    let s = std::slice::from_raw_parts(channels, len);
    let d: f64 = s.iter().zip(&t.best).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
    *out_fitness = 1.0 / (1.0 + d);
    0
}

fn vgg_target(fail_from: usize) -> Target {
    Target {
        best: vec![32; 13],
        calls: 0,
        fail_from,
    }
}

#[test]
fn search_through_a_callback() {
    let arch = load("vgg16-cifar");
    let s = space(arch, 5);
    let mut target = vgg_target(usize::MAX);
    let config = AbcSearchConfig {
        cycles: 4,
        ..abc_search_config_default()
    };
    let mut result = ptr::null_mut();
    let status = unsafe {
        abc_search_run(s, &config, Some(closeness), (&mut target as *mut Target).cast(), &mut result)
    };
    assert_eq!(status, AbcStatus::Ok);
    let evaluations = unsafe { abc_result_evaluations(result) };
    assert_eq!(evaluations, target.calls as u64);
    let fitness = unsafe { abc_result_fitness(result) };
    assert!(fitness > 0.0 && fitness <= 1.0);

    let mut structure = vec![0usize; 13];
    let mut len = 0;
    assert_eq!(
        unsafe { abc_result_structure(result, structure.as_mut_ptr(), structure.len(), &mut len) },
        AbcStatus::Ok
    );
    assert_eq!(len, 13);

    let mut len = 0;
    unsafe { abc_result_history(result, ptr::null_mut(), 0, &mut len) };
    let mut text = vec![0 as std::ffi::c_char; len];
    assert_eq!(unsafe { abc_result_history(result, text.as_mut_ptr(), len, &mut len) }, AbcStatus::Ok);
    let jsonl = unsafe { CStr::from_ptr(text.as_ptr()) }.to_str().unwrap().to_string();
    let events = read_jsonl(jsonl.as_bytes()).unwrap();
    let summary = validate_history(&events).unwrap();
    assert_eq!(summary.evaluations, evaluations);
    assert_eq!(summary.best_structure.unwrap().channels(), &structure[..]);
    unsafe {
        abc_result_free(result);
        abc_space_free(s);
        abc_arch_free(arch);
    }
}

#[test]
fn search_is_reproducible() {
    let arch = load("vgg16-cifar");
    let s = space(arch, 5);
    let run = || {
        let mut target = vgg_target(usize::MAX);
        let mut result = ptr::null_mut();
        let status = unsafe {
            abc_search_run(s, ptr::null(), Some(closeness), (&mut target as *mut Target).cast(), &mut result)
        };
        assert_eq!(status, AbcStatus::Ok);
        let mut buf = vec![0usize; 13];
        let mut len = 0;
        unsafe { abc_result_structure(result, buf.as_mut_ptr(), 13, &mut len) };
        let f = unsafe { abc_result_fitness(result) };
        unsafe { abc_result_free(result) };
        (buf, f)
    };
    assert_eq!(run(), run());
    unsafe {
        abc_space_free(s);
        abc_arch_free(arch);
    }
}

#[test]
fn callback_failures() {
    let arch = load("vgg16-cifar");
    let s = space(arch, 5);
    let mut result = ptr::null_mut();

    // after initialisation a failing callback only rejects candidates
    let mut target = vgg_target(5);
    let status = unsafe {
        abc_search_run(s, ptr::null(), Some(closeness), (&mut target as *mut Target).cast(), &mut result)
    };
    assert_eq!(status, AbcStatus::Ok);
    unsafe { abc_result_free(result) };

    let mut target = vgg_target(2);
    let status = unsafe {
        abc_search_run(s, ptr::null(), Some(closeness), (&mut target as *mut Target).cast(), &mut result)
    };
    assert_eq!(status, AbcStatus::Evaluator);
    assert!(last_error().contains("callback returned 7"));

    let status = unsafe { abc_search_run(s, ptr::null(), None, ptr::null_mut(), &mut result) };
    assert_eq!(status, AbcStatus::NullPointer);

    let config = AbcSearchConfig {
        population: 1,
        ..abc_search_config_default()
    };
    let mut target = vgg_target(usize::MAX);
    let status =
        unsafe { abc_search_run(s, &config, Some(closeness), (&mut target as *mut Target).cast(), &mut result) };
    assert_eq!(status, AbcStatus::InvalidArgument);
    assert_eq!(target.calls, 0);
    unsafe {
        abc_space_free(s);
        abc_arch_free(arch);
    }
}

#[test]
fn errors_are_per_thread() {
    let mut arch = ptr::null_mut();
    assert_eq!(unsafe { abc_arch_load(ptr::null(), &mut arch) }, AbcStatus::NullPointer);
    std::thread::spawn(|| assert!(abc_last_error().is_null())).join().unwrap();
    assert!(last_error().contains("path is null"));
}
