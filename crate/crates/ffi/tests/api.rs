use std::ffi::CStr;
use std::ptr;

use asynczo_ffi::*;

fn last_error() -> String {
    let p = azo_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn identity_quadratic() -> *mut AzoObjective {
    let dims = [1usize, 1];
    let a = [1.0, 0.0, 0.0, 1.0];
    let b = [0.0, 0.0];
    let mut q = ptr::null_mut();
    let s = unsafe { azo_quadratic_new(dims.as_ptr(), 2, a.as_ptr(), b.as_ptr(), 0.0, &mut q) };
    assert_eq!(s, AzoStatus::Ok);
    q
}

#[test]
fn quadratic_value_and_gradient() {
    let q = identity_quadratic();
    let x = [1.0, 2.0];
    let (mut v, mut g) = (0.0, [0.0; 2]);
    unsafe {
        assert_eq!(azo_objective_value(q, x.as_ptr(), 2, &mut v), AzoStatus::Ok);
        assert_eq!(azo_objective_gradient(q, x.as_ptr(), 2, g.as_mut_ptr()), AzoStatus::Ok);
        let (mut n, mut blocks) = (0, 0);
        assert_eq!(azo_objective_dims(q, &mut n, &mut blocks), AzoStatus::Ok);
        assert_eq!((n, blocks), (2, 2));
        azo_objective_free(q);
    }
    assert_eq!(v, 2.5);
    assert_eq!(g, [1.0, 2.0]);
}

#[test]
fn errors_map_to_status_codes() {
    let q = identity_quadratic();
    let x = [0.0; 3];
    let mut v = 0.0;
    unsafe {
        assert_eq!(azo_objective_value(q, x.as_ptr(), 3, &mut v), AzoStatus::Layout);
        assert!(last_error().contains("length 3"));
        assert_eq!(azo_objective_value(ptr::null(), x.as_ptr(), 2, &mut v), AzoStatus::NullPointer);
        assert_eq!(azo_objective_value(q, x.as_ptr(), 2, ptr::null_mut()), AzoStatus::NullPointer);
        azo_objective_free(q);
        azo_objective_free(ptr::null_mut());

        let asym = [1.0, 2.0, 0.0, 1.0];
        let dims = [2usize];
        let mut out = ptr::null_mut();
        let s = azo_quadratic_new(dims.as_ptr(), 1, asym.as_ptr(), [0.0, 0.0].as_ptr(), 0.0, &mut out);
        assert_eq!(s, AzoStatus::InvalidArgument);
        assert!(out.is_null());
        assert!(last_error().contains("symmetric"));
    }
}

#[test]
fn schedule_and_sequence_bound() {
    let (mut alpha, mut mu) = (0.0, 0.0);
    unsafe {
        assert_eq!(azo_rate_schedule(1.0, 1, 1.0, 1000, false, &mut alpha, &mut mu), AzoStatus::Ok);
    }
    assert!((alpha - 0.01).abs() < 1e-12);
    assert!((mu - 2.0 / 1000f64.powf(1.0 / 6.0)).abs() < 1e-12);

    let mut v = 0.0;
    unsafe {
        assert_eq!(azo_sequence_bound(0.3, 0.3, 1.0, 2.0, 3, &mut v), AzoStatus::Ok);
        assert!((v - 1.696).abs() < 1e-12);
        assert_eq!(azo_sequence_bound(0.6, 0.5, 1.0, 1.0, 3, &mut v), AzoStatus::InvalidArgument);
        assert_eq!(azo_sequence_bound(0.1, 0.2, 1.0, 1.0, 0, &mut v), AzoStatus::InvalidArgument);
    }
}

#[test]
fn run_spends_exact_budget_and_is_deterministic() {
    let mut bench = ptr::null_mut();
    unsafe {
        assert_eq!(azo_benchmark_new(5, 20, 10, 3, &mut bench), AzoStatus::Ok);
    }
    let mut opts = azo_run_options_default();
    opts.alpha = 0.5;
    let run = |opts: &AzoRunOptions| {
        let mut x = vec![0.1; 50];
        let mut stats = AzoRunStats::default();
        let s = unsafe { azo_run(bench, opts, x.as_mut_ptr(), x.len(), &mut stats) };
        assert_eq!(s, AzoStatus::Ok, "{}", last_error());
        (x, stats)
    };
    let (x1, s1) = run(&opts);
    let (x2, _) = run(&opts);
    assert_eq!(x1, x2);
    assert_eq!(s1.queries, 10_000);
    assert_eq!(s1.iterations, 10_000);
    assert_eq!(s1.bootstraps, 5);

    opts.estimator = AzoEstimator::TwoPointAsync;
    opts.budget_queries = 1001;
    let (_, s2) = run(&opts);
    assert_eq!(s2.queries, 1000);
    assert_eq!(s2.iterations, 500);
    unsafe { azo_objective_free(bench) };
}

#[test]
fn divergence_is_reported() {
    let dims = [1usize];
    let (a, b) = ([1.0], [0.0]);
    let mut q = ptr::null_mut();
    unsafe { azo_quadratic_new(dims.as_ptr(), 1, a.as_ptr(), b.as_ptr(), 0.0, &mut q) };
    let mut opts = azo_run_options_default();
    opts.alpha = 0.1;
    opts.mu = 1e-3;
    opts.budget_queries = 2000;
    let mut x = [1.0];
    let s = unsafe { azo_run(q, &opts, x.as_mut_ptr(), 1, ptr::null_mut()) };
    assert_eq!(s, AzoStatus::Diverged);
    assert!(last_error().contains("diverge"), "{}", last_error());
    unsafe { azo_objective_free(q) };
}
