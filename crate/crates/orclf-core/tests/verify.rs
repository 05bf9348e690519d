mod common;

use orclf_core::interleave::PairTables;
use orclf_core::model::{self, builtin_system};
use orclf_core::sim::{batch, batch_plan, integrate, DisturbanceStrategy, StepPolicy, TrajStatus};
use orclf_core::stabilize::feedback_deadzone;
use orclf_core::verify::{
    attain_time, check_deadzone, check_rfc, check_rgaos, check_two_interval, check_urgaos, gamma_series, Property,
};

fn decaying(t0: f64, x0: f64, rate: f64, horizon: f64) -> orclf_core::sim::Trajectory {
    let mut s = Vec::new();
    let mut t = t0;
    while t <= t0 + horizon + 1e-12 {
        let x = x0 * (-rate * (t - t0)).exp();
        s.push((t, 0.5 * x * x));
        t += 0.125;
    }
    common::synthetic(t0, &s)
}

#[test]
fn attain_time_examples() {
    let tr = common::synthetic(1.0, &[(1.0, 2.0), (2.0, 0.5), (3.0, 1e-6), (4.0, 1e-7)]);
    assert_eq!(attain_time(&tr, 1e-2), Some(2.0));
    assert_eq!(attain_time(&tr, 10.0), Some(0.0));
    let tr = common::synthetic(0.0, &[(0.0, 1e-6), (1.0, 2.0)]);
    assert_eq!(attain_time(&tr, 1e-2), None);
}

#[test]
fn rfc_negative_control() {
    let mut bad = decaying(0.0, 1.0, 1.0, 2.0);
    bad.status = TrajStatus::BlowUp { t: 2.0 };
    let good = decaying(0.0, 1.0, 1.0, 2.0);
    let rep = check_rfc(&[good.clone()]);
    assert!(rep.passed());
    let rep = check_rfc(&[good, bad]);
    assert!(!rep.passed());
    let f = &rep.findings[0];
    assert_eq!(f.violations, 1);
    assert_eq!(f.witness.as_ref().unwrap().index, 1);
    assert!(rep.to_text().contains("FAIL"));
    assert!(rep.to_text().contains("witness=index:1"));
}

#[test]
fn rgaos_negative_control() {
    let good = decaying(0.0, 1.0, 2.0, 6.0);
    let rep = check_rgaos(&[good.clone()], &[1e-2], &[5.0], &[2.0]);
    assert!(rep.passed());
    assert!(rep.estimate("tau", "eps=0.01,T=5,R=2").unwrap() <= 2.5);
    let stuck = decaying(0.0, 1.0, 0.0, 6.0);
    let rep = check_rgaos(&[good, stuck], &[1e-2], &[5.0], &[2.0]);
    assert!(!rep.passed());
    assert_eq!(rep.property, Property::Rgaos);
}

#[test]
fn urgaos_flags_slowing_in_t0() {
    let a = decaying(0.0, 1.0, 2.0, 8.0);
    let b = decaying(5.0, 1.0, 2.0, 8.0);
    assert!(check_urgaos(&[a.clone(), b], &[1e-2], &[2.0]).passed());
    let slow = decaying(5.0, 1.0, 0.5, 16.0);
    let rep = check_urgaos(&[a, slow], &[1e-2], &[2.0]);
    let f = rep.findings.iter().find(|f| f.check == "uniform_in_t0").unwrap();
    assert_eq!(f.violations, 1);
}

#[test]
fn gamma_series_closed_form() {
    let s = gamma_series(&|t| 18.0 * (-t).exp());
    let want = 18.0 / (1.0 - (-2.0f64).exp());
    assert!((s - want).abs() <= 1e-9);
}

#[test]
fn deadzone_checks_negative_control() {
    let (_, o) = builtin_system(model::S3).unwrap();
    let t = PairTables::build(&o, common::WINDOW).unwrap();
    let tr = common::synthetic(0.0, &[(0.0, 1.0), (1.0, 50.0), (2.0, 40.0)]);
    let f = check_deadzone(&[tr.clone()], &t);
    assert!(f.iter().all(|f| !f.passed()));
    let rep = check_two_interval(&[tr], &t, &|s| 18.0 * (-s).exp());
    assert!(!rep.passed());
}

#[test]
fn witness_replays_bit_exactly() {
    let law = feedback_deadzone(common::pair(model::S3));
    let inits = vec![(0.0, vec![1.2]), (1.0, vec![-1.9])];
    let strategies = [DisturbanceStrategy::PiecewiseRandom { seed: 5, dwell: Some(0.5) }];
    let items = batch_plan(&inits, &strategies);
    let policy = StepPolicy::default();
    let runs: Vec<_> = batch(&law, &items, 3.0, &policy).into_iter().map(|r| r.unwrap()).collect();
    // eps too small to attain within the horizon: every run is a violation
    let rep = check_rgaos(&runs, &[1e-9], &[5.0], &[2.0]);
    let f = rep.findings.iter().find(|f| f.check == "output_attractivity").unwrap();
    let w = f.witness.as_ref().unwrap();
    let replay = integrate(&law, w.t0, &w.x0, &w.strategy, w.horizon, &policy).unwrap();
    assert_eq!(replay, runs[w.index]);
    let k = replay.index_at(w.t).unwrap();
    assert_eq!(1e-9 - replay.abs_y[k], w.margin);
}
