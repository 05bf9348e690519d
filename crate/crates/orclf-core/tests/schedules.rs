mod common;

use std::sync::Arc;

use orclf_core::interleave::{check_nine_fold, check_three_fold, check_two_step_decrease, PairTables, Window};
use orclf_core::model::{self, builtin_system};
use orclf_core::scheduler::{check_containment, check_step_decrease, default_schedule, Scheduler};
use orclf_core::sim::{integrate, DisturbanceStrategy, StepPolicy};
use orclf_core::stabilize::raw_scheduler;
use orclf_core::Error;

fn p2(i: i32) -> f64 {
    2f64.powi(i)
}

#[test]
fn default_levels() {
    let (_, o) = builtin_system(model::S3).unwrap();
    let s = default_schedule(&o, -30, 6).unwrap();
    for i in -30..=6 {
        assert_eq!(s.r(i), p2(i));
        assert_eq!(s.a(i), p2(i) / 64.0);
        // rho(s) = s: a quarter of the band minimum
        assert!((s.mu(i) - p2(i - 1) / 4.0).abs() <= 1e-15 * p2(i));
    }
    assert_eq!(s.band_of(0.75), (0, false));
    assert_eq!(s.band_of(1.0), (1, false));
    assert_eq!(s.band_of(1e-20), (-30, true));
    assert_eq!(s.band_of(1e9), (6, true));
    assert_eq!(s.guard_band_of(1.0 - 2.0 / 64.0), 0);
    assert_eq!(s.guard_band_of(1.0 - 1.0 / 64.0), 1);
}

#[test]
fn s3_pair_constants() {
    // mu_i = 2^i/8, mu'_i = 3 2^i/16 give a_i = 3 2^i/256, a'_i = 2^i/64, gamma_i = 3 2^i/64
    let (_, o) = builtin_system(model::S3).unwrap();
    let t = PairTables::build(&o, common::WINDOW).unwrap();
    t.verify_invariants().unwrap();
    for i in -28..=5 {
        let tol = 1e-12 * p2(i);
        assert_eq!(t.sched.r(i), p2(i));
        assert_eq!(t.shift.r(i), 1.5 * p2(i));
        assert!((t.sched.a(i) - 3.0 * p2(i) / 256.0).abs() <= tol);
        assert!((t.shift.a(i) - p2(i) / 64.0).abs() <= tol);
        assert!((t.gamma(i) - 3.0 * p2(i) / 64.0).abs() <= tol);
        let edge = p2(i) - 2.0 * t.sched.a(i);
        assert!((t.rho_bar(edge) - 3.0 * p2(i) / 64.0).abs() <= tol);
        // linear between edges
        let e0 = p2(i - 1) - 2.0 * t.sched.a(i - 1);
        let mid = 0.5 * (e0 + edge);
        assert!((t.rho_bar(mid) - 0.75 * 3.0 * p2(i) / 64.0).abs() <= tol);
        assert!(t.rho_tilde(mid) <= mid);
        assert!(t.in_window(mid));
    }
    assert_eq!(t.rho_tilde(0.0), 0.0);
    assert_eq!(t.rho_bar(1e-30), t.rho_bar(1e-25));
    assert_eq!(t.rho_bar(1e6), t.rho_bar(1e7));
    assert!(!t.in_window(1e6));
}

#[test]
fn rho_bar_is_monotone_on_s1() {
    let (_, o) = builtin_system(model::S1).unwrap();
    let t = PairTables::build(&o, common::WINDOW).unwrap();
    let mut prev = 0.0;
    for k in 0..2000 {
        let s = 2f64.powf(-31.0 + 37.0 * k as f64 / 1999.0);
        let r = t.rho_bar(s);
        assert!(r >= prev && r > 0.0);
        prev = r;
    }
}

#[test]
fn vanishing_rho_is_rejected() {
    let (_, mut o) = builtin_system(model::S3).unwrap();
    o.rho = Arc::new(|s| if s > 1.0 { s } else { 0.0 });
    assert!(matches!(PairTables::build(&o, common::WINDOW), Err(Error::Schedule { .. })));
    assert!(matches!(
        PairTables::build(&o, Window { i_min: 2, i_max: 1 }),
        Err(Error::Config(_))
    ));
}

#[test]
fn scheduler_certificates_short_runs() {
    let fb = common::feedback(model::S3);
    let sched = default_schedule(&fb.orclf, -30, 6).unwrap();
    let s = Arc::new(Scheduler::new(fb, sched, common::clamp_cfg()).unwrap());
    let law = raw_scheduler(s.clone());
    for (j, x0) in [(0.0, 1.8), (1.0, -0.7), (2.0, 1.1)] {
        let tr = integrate(&law, j, &[x0], &DisturbanceStrategy::VertexAdversarial, 1.0, &StepPolicy::default()).unwrap();
        assert_eq!(check_containment(&tr, &s.sched).violations, 0);
        let i = s.sched.guard_band_of(tr.v[0]);
        let n = s.grid_n(j, &[x0]).unwrap();
        let e = check_step_decrease(&tr, &s.sched, i, n);
        assert!(e.checked > 0);
        assert_eq!(e.violations, 0, "{e:?}");
    }
}

#[test]
fn containment_negative_control() {
    let (_, o) = builtin_system(model::S3).unwrap();
    let s = default_schedule(&o, -30, 6).unwrap();
    // starts in band 1 and climbs past r_1 + 5/2 a_1
    let tr = common::synthetic(0.0, &[(0.0, 1.5), (0.5, 2.2), (0.9, 1.0), (1.0, 5.0)]);
    let e = check_containment(&tr, &s);
    assert_eq!((e.checked, e.violations), (3, 1));
    assert_eq!(e.witness.unwrap().t, 0.5);
}

#[test]
fn growth_and_two_step_negative_controls() {
    let (_, o) = builtin_system(model::S3).unwrap();
    let t = PairTables::build(&o, common::WINDOW).unwrap();
    let good = common::synthetic(0.0, &[(0.0, 1.0), (1.0, 0.8), (2.0, 0.5)]);
    assert_eq!(check_nine_fold(&good).violations, 0);
    assert_eq!(check_three_fold(&good).violations, 0);
    assert_eq!(check_two_step_decrease(&good, &t).violations, 0);
    let bad = common::synthetic(0.0, &[(0.0, 1.0), (1.0, 12.0), (2.0, 1.5)]);
    assert!(check_nine_fold(&bad).violations > 0);
    assert!(check_three_fold(&bad).violations > 0);
    // V(2) = V(0): no decrease
    let flat = common::synthetic(0.0, &[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
    assert!(check_two_step_decrease(&flat, &t).violations > 0);
}
