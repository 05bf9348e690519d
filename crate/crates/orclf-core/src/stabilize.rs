//! Final feedback laws: the uniform law `K = k~`, the deadzone law that
//! switches off below `V = e^{-t}`, and the raw constituents.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interleave::InterleavePair;
use crate::model::{Orclf, SystemModel};
use crate::scheduler::{self, Scheduler};
use crate::sim::{Law, ORIGIN_SNAP};
use crate::unitloop::{self, SegmentFeedback};
use crate::util::{self, MAXD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Uniform,
    Deadzone,
    RawSegment,
    RawScheduler,
    RawInterleave,
}

impl LawKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Deadzone => "deadzone",
            Self::RawSegment => "raw_segment",
            Self::RawScheduler => "raw_scheduler",
            Self::RawInterleave => "raw_interleave",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => Self::Uniform,
            "deadzone" => Self::Deadzone,
            "raw_segment" => Self::RawSegment,
            "raw_scheduler" => Self::RawScheduler,
            "raw_interleave" => Self::RawInterleave,
            other => return Err(Error::Config(format!("unknown law kind `{other}`"))),
        })
    }
}

#[derive(Clone)]
enum Engine {
    Segment(Arc<SegmentFeedback>),
    Scheduler(Arc<Scheduler>),
    Interleave(Arc<InterleavePair>),
}

#[derive(Clone)]
pub struct FeedbackLaw {
    kind: LawKind,
    engine: Engine,
}

impl std::fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackLaw").field("kind", &self.kind).finish()
    }
}

/// Segment profile replayed on every unit interval: `k(t - [t], [t], x)`.
pub fn raw_segment(fb: Arc<SegmentFeedback>) -> FeedbackLaw {
    FeedbackLaw {
        kind: LawKind::RawSegment,
        engine: Engine::Segment(fb),
    }
}

pub fn raw_scheduler(s: Arc<Scheduler>) -> FeedbackLaw {
    FeedbackLaw {
        kind: LawKind::RawScheduler,
        engine: Engine::Scheduler(s),
    }
}

pub fn raw_interleave(p: Arc<InterleavePair>) -> FeedbackLaw {
    FeedbackLaw {
        kind: LawKind::RawInterleave,
        engine: Engine::Interleave(p),
    }
}

/// Samples `b(t,x) <= a3(gamma(t)|x|)` over `t in [0, 10]`, `|x| in [1e-6, 10]`.
pub fn verify_small_control(orclf: &Orclf, n: usize, samples: usize, seed: u64) -> Result<()> {
    let sc = orclf.small_control.as_ref().ok_or_else(|| {
        Error::Precondition("the uniform law needs small-control data (a3, gamma); use the deadzone law".into())
    })?;
    let mut rng = util::rng_from(seed);
    let mut x = [0.0; MAXD];
    for _ in 0..samples {
        let t = rng.gen_range(0.0..10.0);
        let r = 10f64.powf(rng.gen_range(-6.0..1.0));
        util::unit_vector(&mut rng, &mut x[..n]);
        x[..n].iter_mut().for_each(|v| *v *= r);
        let b = orclf.b(t, &x[..n]);
        let cap = sc.a3.eval((sc.gamma)(t) * r);
        if !(b <= cap * (1.0 + 1e-9)) {
            return Err(Error::Precondition(format!(
                "small-control bound fails at t={t}, |x|={r}: b={b} > a3(gamma|x|)={cap}"
            )));
        }
    }
    Ok(())
}

/// `K = k~` off the origin and `K(t, 0) = 0`; needs small-control data and beta = 1.
pub fn feedback_uniform(p: Arc<InterleavePair>) -> Result<FeedbackLaw> {
    let orclf = &p.fb().orclf;
    if !orclf.beta_is_one() {
        return Err(Error::Precondition(
            "the uniform law needs beta = 1; use the deadzone law".into(),
        ));
    }
    verify_small_control(orclf, p.fb().model.n, 256, 0x736d_616c)?;
    Ok(FeedbackLaw {
        kind: LawKind::Uniform,
        engine: Engine::Interleave(p),
    })
}

/// `K = h((V - e^{-t}) / e^{-t}) k~` where `V > e^{-t}`, else 0.
pub fn feedback_deadzone(p: Arc<InterleavePair>) -> FeedbackLaw {
    FeedbackLaw {
        kind: LawKind::Deadzone,
        engine: Engine::Interleave(p),
    }
}

impl FeedbackLaw {
    pub fn law_kind(&self) -> LawKind {
        self.kind
    }

    pub fn segment(&self) -> &SegmentFeedback {
        match &self.engine {
            Engine::Segment(fb) => fb,
            Engine::Scheduler(s) => &s.fb,
            Engine::Interleave(p) => p.fb(),
        }
    }

    pub fn pair(&self) -> Option<&InterleavePair> {
        match &self.engine {
            Engine::Interleave(p) => Some(p),
            _ => None,
        }
    }

    pub fn scheduler(&self) -> Option<&Scheduler> {
        match &self.engine {
            Engine::Scheduler(s) => Some(s),
            _ => None,
        }
    }

    /// Deadzone blend at `(t, x)`; 1 for the other kinds.
    pub fn deadzone_blend(&self, t: f64, x: &[f64]) -> f64 {
        if self.kind != LawKind::Deadzone {
            return 1.0;
        }
        let v = self.segment().orclf.value(t, x);
        let e = (-t).exp();
        if v > e {
            unitloop::h((v - e) / e)
        } else {
            0.0
        }
    }
}

impl Law for FeedbackLaw {
    fn model(&self) -> &SystemModel {
        &self.segment().model
    }

    fn orclf(&self) -> &Orclf {
        &self.segment().orclf
    }

    fn kind(&self) -> &str {
        self.kind.as_str()
    }

    fn control(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.model().m;
        out[..m].iter_mut().for_each(|u| *u = 0.0);
        if util::norm(x) < ORIGIN_SNAP {
            return Ok(());
        }
        match &self.engine {
            Engine::Segment(fb) => {
                if !(t >= 0.0) {
                    return Err(Error::Domain(format!("feedback needs t >= 0, got {t}")));
                }
                let j = t.floor();
                fb.k_segment(t - j, j, x, out)
            }
            Engine::Scheduler(s) => s.k_ra(t, x, out).map(|_| ()),
            Engine::Interleave(p) => {
                let blend = self.deadzone_blend(t, x);
                if blend == 0.0 {
                    return Ok(());
                }
                p.k_tilde(t, x, out)?;
                if blend != 1.0 {
                    out[..m].iter_mut().for_each(|u| *u *= blend);
                }
                Ok(())
            }
        }
    }

    fn grid_n(&self, t: f64, x: &[f64]) -> Result<u64> {
        if util::norm(x) < ORIGIN_SNAP {
            return Ok(1);
        }
        match &self.engine {
            Engine::Segment(_) => Ok(1),
            Engine::Scheduler(s) => s.grid_n(t, x),
            Engine::Interleave(p) => p.grid_n(t, x),
        }
    }

    fn next_break(&self, t: f64, x: &[f64]) -> Result<Option<f64>> {
        if util::norm(x) < ORIGIN_SNAP || self.deadzone_blend(t, x) == 0.0 {
            return Ok(None);
        }
        match &self.engine {
            Engine::Segment(fb) => {
                let j = t.floor();
                Ok(scheduler::first_after(&fb.profile(j, x)?.breakpoints(), t + scheduler::BREAK_GAP, |b| j + b))
            }
            Engine::Scheduler(s) => s.next_break(t, x),
            Engine::Interleave(p) => p.next_break(t, x),
        }
    }
}

/// `(t, d, x) -> f(t, d, x, K(t, x))`, zero below the origin snap.
pub fn closed_loop_field(law: &FeedbackLaw) -> impl Fn(f64, &[f64], &[f64], &mut [f64]) -> Result<()> + '_ {
    move |t, d, x, out| {
        let mut u = [0.0; MAXD];
        let m = law.model().m;
        law.field(t, d, x, &mut u[..m], out)
    }
}
