//! Fixed-step RK4 integration of the closed loop under disturbance
//! strategies, snapped to the feedback's time subgrid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Orclf, SystemModel};
use crate::util::{self, MAXD};

/// Below this state norm the closed-loop field is exactly zero.
pub const ORIGIN_SNAP: f64 = 1e-12;
pub const BLOW_UP: f64 = 1e9;

/// A state feedback the integrator can drive.
pub trait Law: Send + Sync {
    fn model(&self) -> &SystemModel;
    fn orclf(&self) -> &Orclf;
    fn kind(&self) -> &str;
    fn control(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Points per unit time of the subgrid on which the law is smooth; 1 if none.
    fn grid_n(&self, _t: f64, _x: &[f64]) -> Result<u64> {
        Ok(1)
    }

    /// First ramp corner after `t` of the law at `x`.
    fn next_break(&self, _t: f64, _x: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }

    /// `f(t, d, x, K(t, x))`, zero below the origin snap. Returns the control used.
    fn field(&self, t: f64, d: &[f64], x: &[f64], u: &mut [f64], out: &mut [f64]) -> Result<()> {
        if util::norm(x) < ORIGIN_SNAP {
            u.iter_mut().for_each(|v| *v = 0.0);
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        self.control(t, x, u)?;
        self.model().eval_f(t, d, x, u, out);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceStrategy {
    Constant { d: Vec<f64> },
    /// New uniform draw from D every `dwell` time units; every step if unset.
    PiecewiseRandom { seed: u64, dwell: Option<f64> },
    /// Vertex of D maximizing the instantaneous derivative of V.
    VertexAdversarial,
}

impl DisturbanceStrategy {
    pub fn label(&self) -> String {
        match self {
            Self::Constant { d } => format!("constant{d:?}"),
            Self::PiecewiseRandom { seed, dwell } => match dwell {
                Some(w) => format!("piecewise_random(seed={seed},dwell={w})"),
                None => format!("piecewise_random(seed={seed})"),
            },
            Self::VertexAdversarial => "vertex_adversarial".into(),
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Self::PiecewiseRandom { seed, .. } => *seed,
            _ => 0,
        }
    }

    /// The strategy with its seed mixed with a batch index.
    pub fn reseeded(&self, index: u64) -> Self {
        match self {
            Self::PiecewiseRandom { seed, dwell } => Self::PiecewiseRandom {
                seed: util::seed_mix(*seed, index),
                dwell: *dwell,
            },
            s => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepPolicy {
    /// Largest step; a power of two keeps every time stamp exact.
    pub base: f64,
    /// Record only samples on multiples of this spacing (plus the last one).
    pub record_spacing: Option<f64>,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            base: 1.0 / 64.0,
            record_spacing: None,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::Config(format!("step base must be positive, got {}", self.base)));
        }
        if let Some(s) = self.record_spacing {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("record spacing must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub law: String,
    pub strategy: DisturbanceStrategy,
    pub seed: u64,
    pub policy: StepPolicy,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrajStatus {
    Complete,
    /// Stopped when `|x|` exceeded the guard.
    BlowUp { t: f64 },
    Failed { t: f64, msg: String },
}

/// Samples stored column-wise; `x`, `u`, `d` are flat with strides n, m, l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub v: Vec<f64>,
    pub abs_y: Vec<f64>,
    pub meta: TrajMeta,
    pub status: TrajStatus,
    pub steps: u64,
    pub max_grid_n: u64,
}

impl Trajectory {
    pub fn empty(n: usize, m: usize, l: usize, meta: TrajMeta) -> Self {
        Self {
            n,
            m,
            l,
            t: Vec::new(),
            x: Vec::new(),
            u: Vec::new(),
            d: Vec::new(),
            v: Vec::new(),
            abs_y: Vec::new(),
            meta,
            status: TrajStatus::Complete,
            steps: 0,
            max_grid_n: 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, t: f64, x: &[f64], u: &[f64], d: &[f64], v: f64, abs_y: f64) {
        self.t.push(t);
        self.x.extend_from_slice(x);
        self.u.extend_from_slice(u);
        self.d.extend_from_slice(d);
        self.v.push(v);
        self.abs_y.push(abs_y);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn u_at(&self, k: usize) -> &[f64] {
        &self.u[k * self.m..(k + 1) * self.m]
    }

    pub fn d_at(&self, k: usize) -> &[f64] {
        &self.d[k * self.l..(k + 1) * self.l]
    }

    pub fn truncated(&self) -> bool {
        !matches!(self.status, TrajStatus::Complete)
    }

    pub fn t_end(&self) -> f64 {
        self.t.last().copied().unwrap_or(self.meta.t0)
    }

    /// Index of the sample at time `t`, if recorded.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let k = self.t.partition_point(|s| *s < t - 1e-9);
        (k < self.len() && (self.t[k] - t).abs() <= 1e-9).then_some(k)
    }

    /// Largest recorded V with sample time in `[a, b]`.
    pub fn max_v_on(&self, a: f64, b: f64) -> Option<(usize, f64)> {
        let lo = self.t.partition_point(|s| *s < a - 1e-12);
        let mut best: Option<(usize, f64)> = None;
        for k in lo..self.len() {
            if self.t[k] > b + 1e-12 {
                break;
            }
            if best.map_or(true, |(_, v)| self.v[k] > v || self.v[k].is_nan()) {
                best = Some((k, self.v[k]));
            }
        }
        best
    }
}

/// A failed run together with what was integrated before the failure.
#[derive(Debug, Clone)]
pub struct IntegrationFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl std::fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} samples)", self.error, self.partial.len())
    }
}

impl std::error::Error for IntegrationFailure {}

fn next_multiple(t: f64, spacing: f64) -> f64 {
    let k = (t / spacing).floor() + 1.0;
    let mut g = k * spacing;
    if g <= t {
        g += spacing;
    }
    g
}

fn on_spacing(t: f64, spacing: f64) -> bool {
    (t / spacing).fract() == 0.0
}

struct DisturbanceSource {
    strategy: DisturbanceStrategy,
    rng: rand_chacha::ChaCha8Rng,
    current: Vec<f64>,
    next_switch: f64,
    vertices: Vec<Vec<f64>>,
}

impl DisturbanceSource {
    fn new(model: &SystemModel, strategy: &DisturbanceStrategy, t0: f64) -> Result<Self> {
        let seed = strategy.seed();
        if let DisturbanceStrategy::Constant { d } = strategy {
            if !model.dist.contains(d) {
                return Err(Error::Config(format!("constant disturbance {d:?} not in D")));
            }
        }
        if let DisturbanceStrategy::PiecewiseRandom { dwell: Some(w), .. } = strategy {
            if !(*w > 0.0) {
                return Err(Error::Config(format!("dwell must be positive, got {w}")));
            }
        }
        Ok(Self {
            strategy: strategy.clone(),
            rng: util::rng_from(seed),
            current: vec![0.0; model.l],
            next_switch: t0,
            vertices: model.dist.vertices(),
        })
    }

    /// Disturbance held on the step starting at `(t, x)` and the next switch time.
    fn at(&mut self, law: &dyn Law, t: f64, x: &[f64]) -> Result<(&[f64], Option<f64>)> {
        let model = law.model();
        match &self.strategy {
            DisturbanceStrategy::Constant { d } => {
                self.current.clone_from(d);
                Ok((&self.current, None))
            }
            DisturbanceStrategy::PiecewiseRandom { dwell, .. } => match dwell {
                None => {
                    self.current = model.dist.sample(&mut self.rng);
                    Ok((&self.current, None))
                }
                Some(w) => {
                    if t >= self.next_switch {
                        self.current = model.dist.sample(&mut self.rng);
                        while self.next_switch <= t {
                            self.next_switch += w;
                        }
                    }
                    Ok((&self.current, Some(self.next_switch)))
                }
            },
            DisturbanceStrategy::VertexAdversarial => {
                let n = model.n;
                let mut gx = [0.0; MAXD];
                let vt = law.orclf().gradient(t, x, &mut gx[..n]);
                let mut u = [0.0; MAXD];
                let mut f = [0.0; MAXD];
                let mut best = f64::NEG_INFINITY;
                let mut pick = 0;
                for (k, d) in self.vertices.iter().enumerate() {
                    law.field(t, d, x, &mut u[..model.m], &mut f[..n])?;
                    let vd = vt + util::dot(&gx[..n], &f[..n]);
                    if vd > best {
                        best = vd;
                        pick = k;
                    }
                }
                self.current.clone_from(&self.vertices[pick]);
                Ok((&self.current, None))
            }
        }
    }
}

fn record(traj: &mut Trajectory, law: &dyn Law, t: f64, x: &[f64], u: &[f64], d: &[f64]) {
    let model = law.model();
    let v = law.orclf().value(t, x);
    let y = model.output_norm(t, x);
    traj.push(t, x, u, d, v, y);
}

/// Integrates on `[t0, t0 + horizon]`. Blow-up gives a truncated trajectory;
/// a non-finite state or a feedback error gives a failure with the partial run.
pub fn integrate(
    law: &dyn Law,
    t0: f64,
    x0: &[f64],
    strategy: &DisturbanceStrategy,
    horizon: f64,
    policy: &StepPolicy,
) -> std::result::Result<Trajectory, Box<IntegrationFailure>> {
    let model = law.model();
    let (n, m, l) = (model.n, model.m, model.l);
    let meta = TrajMeta {
        t0,
        x0: x0.to_vec(),
        law: law.kind().to_string(),
        strategy: strategy.clone(),
        seed: strategy.seed(),
        policy: policy.clone(),
        horizon,
    };
    let mut traj = Trajectory::empty(n, m, l, meta);
    let fail = |traj: Trajectory, error: Error| Err(Box::new(IntegrationFailure { error, partial: traj }));
    if x0.len() != n {
        return fail(traj, Error::Config(format!("x0 has length {}, system needs {n}", x0.len())));
    }
    if !(horizon > 0.0) || !(t0 >= 0.0) {
        return fail(traj, Error::Config(format!("need t0 >= 0 and horizon > 0, got {t0}, {horizon}")));
    }
    if let Err(e) = policy.validate() {
        return fail(traj, e);
    }
    let mut src = match DisturbanceSource::new(model, strategy, t0) {
        Ok(s) => s,
        Err(e) => return fail(traj, e),
    };
    let t_end = t0 + horizon;
    let mut t = t0;
    let mut x = [0.0; MAXD];
    x[..n].copy_from_slice(x0);
    let mut u = [0.0; MAXD];
    let mut us = [0.0; MAXD];
    let mut k1 = [0.0; MAXD];
    let mut k2 = [0.0; MAXD];
    let mut k3 = [0.0; MAXD];
    let mut k4 = [0.0; MAXD];
    let mut y = [0.0; MAXD];
    let mut d = vec![0.0; l];
    loop {
        let (dv, switch) = match src.at(law, t, &x[..n]) {
            Ok((dv, s)) => (dv.to_vec(), s),
            Err(e) => return fail(traj, e),
        };
        d.copy_from_slice(&dv);
        if let Err(e) = law.field(t, &d, &x[..n], &mut u[..m], &mut k1[..n]) {
            return fail(traj, e);
        }
        let keep = t >= t_end || policy.record_spacing.map_or(true, |s| on_spacing(t, s)) || t == t0;
        if keep {
            record(&mut traj, law, t, &x[..n], &u[..m], &d);
        }
        if t >= t_end {
            break;
        }
        if x[..n].iter().any(|v| !v.is_finite()) {
            let e = Error::Integration {
                t,
                msg: "non-finite state".into(),
            };
            traj.status = TrajStatus::Failed { t, msg: e.to_string() };
            return fail(traj, e);
        }
        if util::norm(&x[..n]) > BLOW_UP {
            if !keep {
                record(&mut traj, law, t, &x[..n], &u[..m], &d);
            }
            traj.status = TrajStatus::BlowUp { t };
            return Ok(traj);
        }
        let gn = match law.grid_n(t, &x[..n]) {
            Ok(g) => g.max(1),
            Err(e) => return fail(traj, e),
        };
        traj.max_grid_n = traj.max_grid_n.max(gn);
        let nf = gn as f64;
        let h0 = policy.base.min(1.0 / (8.0 * nf));
        let mut t1 = (t + h0).min(next_multiple(t, 1.0 / nf)).min(t_end);
        if let Some(s) = policy.record_spacing {
            t1 = t1.min(next_multiple(t, s));
        }
        if let Some(sw) = switch {
            if sw > t {
                t1 = t1.min(sw);
            }
        }
        match law.next_break(t, &x[..n]) {
            Ok(Some(b)) if b > t => t1 = t1.min(b),
            Ok(_) => {}
            Err(e) => return fail(traj, e),
        }
        let h = t1 - t;
        let tm = t + 0.5 * h;
        let stages = (|| -> Result<()> {
            for i in 0..n {
                y[i] = x[i] + 0.5 * h * k1[i];
            }
            law.field(tm, &d, &y[..n], &mut us[..m], &mut k2[..n])?;
            for i in 0..n {
                y[i] = x[i] + 0.5 * h * k2[i];
            }
            law.field(tm, &d, &y[..n], &mut us[..m], &mut k3[..n])?;
            for i in 0..n {
                y[i] = x[i] + h * k3[i];
            }
            law.field(t1, &d, &y[..n], &mut us[..m], &mut k4[..n])?;
            Ok(())
        })();
        if let Err(e) = stages {
            traj.status = TrajStatus::Failed { t, msg: e.to_string() };
            return fail(traj, e);
        }
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = t1;
        traj.steps += 1;
    }
    Ok(traj)
}

/// One batch item: initial data and a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub index: usize,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub strategy: DisturbanceStrategy,
}

/// Cross product of initial data and strategies in index order, with
/// random strategies reseeded by the item index.
pub fn batch_plan(inits: &[(f64, Vec<f64>)], strategies: &[DisturbanceStrategy]) -> Vec<BatchItem> {
    let mut out = Vec::with_capacity(inits.len() * strategies.len());
    for (t0, x0) in inits {
        for s in strategies {
            let index = out.len();
            out.push(BatchItem {
                index,
                t0: *t0,
                x0: x0.clone(),
                strategy: s.reseeded(index as u64),
            });
        }
    }
    out
}

pub type BatchResult = std::result::Result<Trajectory, Box<IntegrationFailure>>;

/// Runs every item; results are in index order whatever the completion order.
pub fn batch(law: &dyn Law, items: &[BatchItem], horizon: f64, policy: &StepPolicy) -> Vec<BatchResult> {
    items
        .par_iter()
        .map(|it| integrate(law, it.t0, &it.x0, &it.strategy, horizon, policy))
        .collect()
}

fn rk4_step(law: &dyn Law, t: f64, d: &[f64], x: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
    let n = x.len();
    let m = law.model().m;
    let mut u = [0.0; MAXD];
    let mut k = [[0.0; MAXD]; 4];
    let mut y = [0.0; MAXD];
    law.field(t, d, x, &mut u[..m], &mut k[0][..n])?;
    for (s, c) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
        for i in 0..n {
            y[i] = x[i] + c * h * k[s - 1][i];
        }
        let mut kk = [0.0; MAXD];
        law.field(t + c * h, d, &y[..n], &mut u[..m], &mut kk[..n])?;
        k[s] = kk;
    }
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
    Ok(())
}

/// Simpson estimate of `V(t_{k+1}) - V(t_k)` from the derivative of V along
/// the closed loop, with the midpoint state from a half RK4 step.
pub fn vdot_increment(law: &dyn Law, traj: &Trajectory, k: usize) -> Result<f64> {
    let orclf = law.orclf();
    let model = law.model();
    let n = model.n;
    let d = traj.d_at(k);
    let vdot = |t: f64, x: &[f64]| -> Result<f64> {
        let mut gx = [0.0; MAXD];
        let vt = orclf.gradient(t, x, &mut gx[..n]);
        let mut u = [0.0; MAXD];
        let mut f = [0.0; MAXD];
        law.field(t, d, x, &mut u[..model.m], &mut f[..n])?;
        Ok(vt + util::dot(&gx[..n], &f[..n]))
    };
    let (t0, t1) = (traj.t[k], traj.t[k + 1]);
    let h = t1 - t0;
    let mut xm = [0.0; MAXD];
    rk4_step(law, t0, d, traj.x_at(k), 0.5 * h, &mut xm[..n])?;
    Ok(h / 6.0 * (vdot(t0, traj.x_at(k))? + 4.0 * vdot(t0 + 0.5 * h, &xm[..n])? + vdot(t1, traj.x_at(k + 1))?))
}
