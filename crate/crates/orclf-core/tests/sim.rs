mod common;

use common::Linear;
use orclf_core::model;
use orclf_core::sim::{batch, batch_plan, integrate, vdot_increment, DisturbanceStrategy, StepPolicy, TrajStatus};
use orclf_core::stabilize::{feedback_deadzone, raw_interleave};
use proptest::prelude::*;

fn err_at_one(base: f64) -> f64 {
    let law = Linear::new(model::S3, 1.0);
    let p = StepPolicy {
        base,
        record_spacing: None,
    };
    let tr = integrate(&law, 0.0, &[1.0], &DisturbanceStrategy::VertexAdversarial, 1.0, &p).unwrap();
    (tr.x_at(tr.len() - 1)[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_is_fourth_order() {
    // grid_n = 1 caps the step at 1/8
    let e1 = err_at_one(1.0 / 8.0);
    let e2 = err_at_one(1.0 / 16.0);
    let e3 = err_at_one(1.0 / 32.0);
    for (a, b) in [(e1, e2), (e2, e3)] {
        let ratio = a / b;
        assert!((13.0..19.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn time_stamps_are_exact() {
    let law = Linear::new(model::S3, 0.5);
    let p = StepPolicy {
        base: 1.0 / 64.0,
        record_spacing: Some(0.25),
    };
    let tr = integrate(&law, 0.5, &[2.0], &DisturbanceStrategy::VertexAdversarial, 3.0, &p).unwrap();
    assert_eq!(tr.len(), 13);
    for (k, t) in tr.t.iter().enumerate() {
        assert_eq!(*t, 0.5 + 0.25 * k as f64);
    }
    assert_eq!(tr.steps, 192);
    assert_eq!(tr.status, TrajStatus::Complete);
}

#[test]
fn blow_up_truncates() {
    // S1 with u = +x2 grows like e^t in x2; x1 like e^t
    let law = Linear::new(model::S1, -5.0);
    let tr = integrate(&law, 0.0, &[1.0, 1.0], &DisturbanceStrategy::VertexAdversarial, 10.0, &StepPolicy::default()).unwrap();
    assert!(tr.truncated());
    assert!(matches!(tr.status, TrajStatus::BlowUp { t } if t < 10.0));
}

#[test]
fn bad_inputs_fail_with_partial() {
    let law = Linear::new(model::S3, 1.0);
    let e = integrate(&law, 0.0, &[1.0, 2.0], &DisturbanceStrategy::VertexAdversarial, 1.0, &StepPolicy::default()).unwrap_err();
    assert!(e.partial.is_empty());
    let e = integrate(&law, 0.0, &[1.0], &DisturbanceStrategy::Constant { d: vec![3.0] }, 1.0, &StepPolicy::default()).unwrap_err();
    assert!(matches!(e.error, orclf_core::Error::Config(_)));
}

#[test]
fn origin_stays_put() {
    let p = common::pair(model::S3);
    let law = feedback_deadzone(p);
    let tr = integrate(&law, 0.0, &[0.0], &DisturbanceStrategy::VertexAdversarial, 2.0, &StepPolicy::default()).unwrap();
    assert!(tr.x.iter().all(|v| *v == 0.0));
    assert!(tr.u.iter().all(|v| *v == 0.0));
}

#[test]
fn batch_matches_sequential_and_repeats() {
    let law = Linear::new(model::S2, 1.0);
    let inits: Vec<(f64, Vec<f64>)> = (0..6).map(|k| (0.25 * k as f64, vec![0.5 + 0.2 * k as f64])).collect();
    let strategies = [
        DisturbanceStrategy::PiecewiseRandom { seed: 4, dwell: Some(0.125) },
        DisturbanceStrategy::PiecewiseRandom { seed: 4, dwell: None },
        DisturbanceStrategy::VertexAdversarial,
    ];
    let items = batch_plan(&inits, &strategies);
    assert_eq!(items.len(), 18);
    assert_ne!(items[0].strategy, items[3].strategy);
    let a = batch(&law, &items, 2.0, &StepPolicy::default());
    let b = batch(&law, &items, 2.0, &StepPolicy::default());
    for (it, (x, y)) in items.iter().zip(a.iter().zip(&b)) {
        let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
        assert_eq!(x, y);
        let s = integrate(&law, it.t0, &it.x0, &it.strategy, 2.0, &StepPolicy::default()).unwrap();
        assert_eq!(&s, x);
    }
}

#[test]
fn energy_accounting() {
    let law = feedback_deadzone(common::pair(model::S3));
    let tr = integrate(&law, 1.0, &[1.7], &DisturbanceStrategy::VertexAdversarial, 2.0, &StepPolicy::default()).unwrap();
    for k in 0..tr.len() - 1 {
        let q = vdot_increment(&law, &tr, k).unwrap();
        let dv = tr.v[k + 1] - tr.v[k];
        assert!((q - dv).abs() <= 1e-6 * tr.v[k], "step {k} at t={}: {q} vs {dv}", tr.t[k]);
    }
}

#[test]
fn raw_interleave_decreases_and_converges_in_step() {
    let law = raw_interleave(common::pair(model::S3));
    let s = DisturbanceStrategy::VertexAdversarial;
    let coarse = integrate(&law, 0.0, &[1.0], &s, 4.0, &StepPolicy::default()).unwrap();
    for k in 1..coarse.len() {
        assert!(coarse.v[k] <= coarse.v[k - 1]);
    }
    // a level of one schedule is interior to the other
    for j in 0..=2 {
        let a = coarse.index_at(j as f64).unwrap();
        let b = coarse.index_at((j + 2) as f64).unwrap();
        assert!(coarse.v[b] < coarse.v[a], "j={j}: {} {}", coarse.v[a], coarse.v[b]);
    }
    let fine = StepPolicy {
        base: 1.0 / 81920.0,
        record_spacing: Some(0.25),
    };
    let fine = integrate(&law, 0.0, &[1.0], &s, 4.0, &fine).unwrap();
    for k in 0..fine.len() {
        let c = coarse.index_at(fine.t[k]).unwrap();
        assert!((fine.v[k] - coarse.v[c]).abs() <= 1e-6 * coarse.v[c], "t={}", fine.t[k]);
    }
}

#[test]
fn single_vertex_is_constant_strategy() {
    let law = raw_interleave(common::pair(model::S1));
    let p = StepPolicy::default();
    let a = integrate(&law, 0.0, &[0.0, 1.5], &DisturbanceStrategy::VertexAdversarial, 1.0, &p).unwrap();
    let b = integrate(&law, 0.0, &[0.0, 1.5], &DisturbanceStrategy::Constant { d: vec![0.0] }, 1.0, &p).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.v, b.v);
}

#[test]
fn deadzone_holds_still_inside() {
    let law = feedback_deadzone(common::pair(model::S3));
    // V = 0.125 < e^{-1}
    let tr = integrate(&law, 1.0, &[0.5], &DisturbanceStrategy::VertexAdversarial, 1.0, &StepPolicy::default()).unwrap();
    assert!(tr.x.iter().all(|x| *x == 0.5));
    assert!(tr.u.iter().all(|u| *u == 0.0));
}

#[test]
fn empty_batch() {
    let law = Linear::new(model::S3, 1.0);
    assert!(batch(&law, &[], 1.0, &StepPolicy::default()).is_empty());
    assert!(batch_plan(&[], &[DisturbanceStrategy::VertexAdversarial]).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn linear_decay_is_monotone(x0 in -3.0f64..3.0, c in 0.1f64..2.0) {
        let law = Linear::new(model::S3, c);
        let tr = integrate(&law, 0.0, &[x0], &DisturbanceStrategy::VertexAdversarial, 1.0, &StepPolicy::default()).unwrap();
        for k in 1..tr.len() {
            prop_assert!(tr.v[k] <= tr.v[k - 1]);
        }
        let want = x0 * (-c).exp();
        prop_assert!((tr.x_at(tr.len() - 1)[0] - want).abs() <= 1e-8 * (1.0 + x0.abs()));
    }
}
