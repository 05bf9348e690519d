use orclf_core::model::{self, builtin_canonical, builtin_system, check_hypotheses, DisturbanceSet, SamplePlan};
use orclf_core::unitloop::{bump, h};
use orclf_core::Error;
use proptest::prelude::*;

fn plan(samples: usize) -> SamplePlan {
    SamplePlan {
        t_min: 0.0,
        t_max: 10.0,
        x_min: 1e-3,
        x_max: 1e3,
        samples,
        seed: 7,
    }
}

#[test]
fn builtins_pass_hypotheses() {
    for name in model::builtin_names() {
        let (m, o) = builtin_system(name).unwrap();
        let rep = check_hypotheses(&m, &o, &plan(400));
        assert_eq!(rep.violations(), 0, "{name}: {:?}", rep.entries);
        assert!(rep.entries.iter().all(|e| e.checked > 0 || e.name == "small_control"));
    }
}

#[test]
fn broken_sandwich_is_flagged() {
    let (m, mut o) = builtin_system(model::S3).unwrap();
    o.a1 = model::ComparisonFn::new(|s| s * s);
    let rep = check_hypotheses(&m, &o, &plan(200));
    let e = rep.entry("sandwich_lower").unwrap();
    assert!(e.violations > 0);
    let w = e.witness.as_ref().unwrap();
    assert!(w.margin < 0.0);
}

#[test]
fn names() {
    assert_eq!(builtin_canonical("S1"), Some(model::S1));
    assert_eq!(builtin_canonical(model::S2), Some(model::S2));
    assert_eq!(builtin_canonical("nope"), None);
    assert!(matches!(builtin_system("nope"), Err(Error::Config(_))));
}

#[test]
fn s1_uniform_data() {
    let (_, o) = builtin_system(model::S1).unwrap();
    assert!(o.beta_is_one());
    assert!(o.small_control.is_some());
    let (_, o2) = builtin_system(model::S2).unwrap();
    assert!(o2.small_control.is_none());
}

#[test]
fn box_contains_its_samples() {
    let d = DisturbanceSet::Box {
        lo: vec![-1.0, 0.0],
        hi: vec![1.0, 2.0],
        res: 3,
    };
    let mut rng = orclf_core::util::rng_from(1);
    for _ in 0..100 {
        assert!(d.contains(&d.sample(&mut rng)));
    }
    assert_eq!(d.vertices().len(), 4);
    assert!(!d.contains(&[0.0, 3.0]));
}

proptest! {
    #[test]
    fn h_is_a_symmetric_step(s in -1.0f64..2.0) {
        let v = h(s);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v + h(1.0 - s) - 1.0).abs() < 1e-12);
        if s <= 0.0 { prop_assert_eq!(v, 0.0); }
        if s >= 1.0 { prop_assert_eq!(v, 1.0); }
    }

    #[test]
    fn h_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(h(lo) <= h(hi));
    }

    #[test]
    fn bump_support(z in 0.0f64..3.0) {
        let b = bump(z);
        prop_assert!((0.0..=1.0).contains(&b));
        if z >= 1.0 { prop_assert_eq!(b, 0.0); }
        // e^{-1/s} underflows within about 1e-3 of the edge
        if z < 0.99 { prop_assert!(b > 0.0); }
    }

    #[test]
    fn comparison_inverse(y in 1e-6f64..1e3) {
        let (_, o) = builtin_system(model::S1).unwrap();
        let s = o.a1.inverse(y);
        prop_assert!((o.a1.eval(s) - y).abs() <= 1e-9 * y);
    }
}
