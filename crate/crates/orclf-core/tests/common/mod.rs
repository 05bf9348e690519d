#![allow(dead_code)]

use std::sync::Arc;

use orclf_core::interleave::{make_pair, InterleavePair, Window};
use orclf_core::minimax::MinimaxConfig;
use orclf_core::model::{builtin_system, Orclf, SystemModel};
use orclf_core::scheduler::{NPolicy, SchedulerConfig};
use orclf_core::sim::{DisturbanceStrategy, Law, StepPolicy, TrajMeta, Trajectory};
use orclf_core::unitloop::{CoveringConfig, SegmentFeedback};

pub const WINDOW: Window = Window { i_min: -30, i_max: 6 };

pub fn feedback(name: &str) -> Arc<SegmentFeedback> {
    let (m, o) = builtin_system(name).unwrap();
    Arc::new(SegmentFeedback::new(m, o, MinimaxConfig::default(), CoveringConfig::default()).unwrap())
}

pub fn clamp_cfg() -> SchedulerConfig {
    SchedulerConfig {
        n_policy: NPolicy::Clamp,
        ..Default::default()
    }
}

pub fn pair(name: &str) -> Arc<InterleavePair> {
    Arc::new(make_pair(feedback(name), WINDOW, clamp_cfg()).unwrap())
}

pub fn meta(t0: f64, x0: &[f64]) -> TrajMeta {
    TrajMeta {
        t0,
        x0: x0.to_vec(),
        law: "synthetic".into(),
        strategy: DisturbanceStrategy::VertexAdversarial,
        seed: 0,
        policy: StepPolicy::default(),
        horizon: 0.0,
    }
}

/// Scalar trajectory with `x = sqrt(2 V)` on the given samples.
pub fn synthetic(t0: f64, samples: &[(f64, f64)]) -> Trajectory {
    let x0 = (2.0 * samples[0].1).sqrt();
    let mut m = meta(t0, &[x0]);
    m.horizon = samples.last().unwrap().0 - t0;
    let mut tr = Trajectory::empty(1, 1, 1, m);
    for &(t, v) in samples {
        let x = (2.0 * v).sqrt();
        tr.push(t, &[x], &[0.0], &[0.0], v, x);
    }
    tr
}

/// Fixed linear feedback `u = -c x` on a builtin model.
pub struct Linear {
    pub model: SystemModel,
    pub orclf: Orclf,
    pub c: f64,
}

impl Linear {
    pub fn new(name: &str, c: f64) -> Self {
        let (model, orclf) = builtin_system(name).unwrap();
        Self { model, orclf, c }
    }
}

impl Law for Linear {
    fn model(&self) -> &SystemModel {
        &self.model
    }
    fn orclf(&self) -> &Orclf {
        &self.orclf
    }
    fn kind(&self) -> &str {
        "linear"
    }
    fn control(&self, _t: f64, x: &[f64], out: &mut [f64]) -> orclf_core::Result<()> {
        out[0] = -self.c * x[x.len() - 1];
        Ok(())
    }
}
