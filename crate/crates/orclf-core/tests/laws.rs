mod common;

use std::sync::Arc;

use orclf_core::model::{self, builtin_system};
use orclf_core::sim::Law;
use orclf_core::stabilize::{feedback_deadzone, feedback_uniform, raw_interleave, raw_segment, LawKind};
use orclf_core::unitloop::h;
use orclf_core::interleave::make_pair;
use orclf_core::Error;

#[test]
fn kinds_round_trip() {
    for k in [LawKind::Uniform, LawKind::Deadzone, LawKind::RawSegment, LawKind::RawScheduler, LawKind::RawInterleave] {
        assert_eq!(LawKind::parse(k.as_str()).unwrap(), k);
    }
    assert!(matches!(LawKind::parse("other"), Err(Error::Config(_))));
}

#[test]
fn uniform_preconditions() {
    // S2 has no small-control data
    let p = common::pair(model::S2);
    assert!(matches!(feedback_uniform(p), Err(Error::Precondition(_))));
    let (m, mut o) = builtin_system(model::S3).unwrap();
    o.beta = Arc::new(|t| 1.0 + t);
    let fb = Arc::new(orclf_core::unitloop::SegmentFeedback::new(m, o, Default::default(), Default::default()).unwrap());
    let p = Arc::new(make_pair(fb, common::WINDOW, common::clamp_cfg()).unwrap());
    assert!(matches!(feedback_uniform(p), Err(Error::Precondition(_))));
    assert!(feedback_uniform(common::pair(model::S1)).is_ok());
}

#[test]
fn zero_at_the_origin() {
    let p = common::pair(model::S1);
    let laws = [
        feedback_uniform(p.clone()).unwrap(),
        feedback_deadzone(p.clone()),
        raw_interleave(p.clone()),
        raw_segment(common::feedback(model::S1)),
    ];
    for law in &laws {
        for t in [0.0, 0.5, 3.0, 17.25] {
            let mut u = [1.0];
            law.control(t, &[0.0, 0.0], &mut u).unwrap();
            assert_eq!(u[0], 0.0, "{}", law.kind());
        }
    }
}

#[test]
fn deadzone_blend() {
    let p = common::pair(model::S3);
    let dz = feedback_deadzone(p.clone());
    let raw = raw_interleave(p);
    let mut u = [0.0];
    let mut k = [0.0];
    // V = x^2/2 = 0.3 < e^{-1}
    let x = [(0.6f64).sqrt()];
    dz.control(1.0, &x, &mut u).unwrap();
    assert_eq!(u[0], 0.0);
    assert_eq!(dz.deadzone_blend(1.0, &x), 0.0);
    // V = 1.5 e^{-t}: blend h(1/2) = 1/2
    for t in [0.2, 1.3] {
        let e = (-t as f64).exp();
        let x = [(3.0 * e).sqrt()];
        let b = dz.deadzone_blend(t, &x);
        assert!((b - h(0.5)).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
        dz.control(t, &x, &mut u).unwrap();
        raw.control(t, &x, &mut k).unwrap();
        assert!((u[0] - b * k[0]).abs() <= 1e-15 * k[0].abs());
    }
    // far above the threshold the blend is 1
    let x = [2.0];
    dz.control(0.5, &x, &mut u).unwrap();
    raw.control(0.5, &x, &mut k).unwrap();
    assert_eq!(u[0], k[0]);
}

#[test]
fn interleave_alternates_schedules() {
    let p = common::pair(model::S3);
    let x = [1.3];
    let mut a = [0.0];
    let mut b = [0.0];
    p.k_tilde(0.4, &x, &mut a).unwrap();
    p.even.k_ra(0.4, &x, &mut b).unwrap();
    assert_eq!(a, b);
    p.k_tilde(3.4, &x, &mut a).unwrap();
    p.odd.k_ra(3.4, &x, &mut b).unwrap();
    assert_eq!(a, b);
}
