//! Run configuration (TOML) and construction of the system and laws it names.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use orclf_core::interleave::{self, InterleavePair, Window};
use orclf_core::minimax::MinimaxConfig;
use orclf_core::model::{self, ComparisonFn, ControlSet, DisturbanceSet, Orclf, SmallControl, SystemModel};
use orclf_core::scheduler::{self, NPolicy, Scheduler, SchedulerConfig};
use orclf_core::sim::{BatchItem, DisturbanceStrategy, StepPolicy};
use orclf_core::stabilize::{self, FeedbackLaw, LawKind};
use orclf_core::unitloop::{CoveringConfig, SegmentFeedback, WorkingRegion};
use orclf_core::util;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::ToolError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    #[serde(default = "one")]
    pub l: usize,
    /// One expression per state coordinate in t, x1.., u1.., d1...
    pub f: Vec<String>,
    /// Output map in t, x1...
    pub h: Vec<String>,
    #[serde(rename = "V")]
    pub v: String,
    /// Comparison functions in s; mu and beta in t.
    pub rho: String,
    /// Control bound in t, x1.., and xnorm.
    pub b: String,
    pub a1: String,
    pub a2: String,
    pub mu: String,
    pub beta: String,
    pub a3: Option<String>,
    pub gamma: Option<String>,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub controls: ControlSpec,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DisturbanceSpec {
    Points { points: Vec<Vec<f64>> },
    Box { lo: Vec<f64>, hi: Vec<f64>, res: usize },
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self::Points { points: vec![vec![0.0]] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlSpec {
    #[default]
    Full,
    Orthant,
    Symbox(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub builtin: Option<String>,
    pub inline: Option<InlineSystem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub t_min: f64,
    pub t_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub v_floor: f64,
    pub v_ceil: f64,
    pub x_over_level: f64,
}

impl Default for RegionSection {
    fn default() -> Self {
        Self {
            t_min: 0.0,
            t_max: 2.0,
            r_min: 0.5,
            r_max: 2.0,
            v_floor: 0.05,
            v_ceil: f64::INFINITY,
            x_over_level: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub i_min: i32,
    pub i_max: i32,
    pub n_policy: NPolicy,
    pub n_cap: u64,
    pub n_max: u64,
    pub grid_times: usize,
    pub grid_levels: usize,
    pub grid_dirs: usize,
    pub u_steps: usize,
    pub delta_pairs: usize,
    pub delta_s: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let d = SchedulerConfig::default();
        Self {
            i_min: -30,
            i_max: 6,
            n_policy: NPolicy::Clamp,
            n_cap: d.n_cap,
            n_max: d.n_max,
            grid_times: d.grid_times,
            grid_levels: d.grid_levels,
            grid_dirs: d.grid_dirs,
            u_steps: d.u_steps,
            delta_pairs: d.delta_pairs,
            delta_s: d.delta_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawSection {
    pub kind: String,
}

impl Default for LawSection {
    fn default() -> Self {
        Self {
            kind: "deadzone".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInits {
    pub count: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Coordinates held at zero.
    #[serde(default)]
    pub zero: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSection {
    pub t0: Vec<f64>,
    pub x0: Vec<Vec<f64>>,
    pub random: Option<RandomInits>,
    pub strategies: Vec<DisturbanceStrategy>,
    pub horizon: f64,
    pub step_base: f64,
    pub record_spacing: Option<f64>,
}

impl Default for BatchSection {
    fn default() -> Self {
        Self {
            t0: vec![0.0],
            x0: Vec::new(),
            random: None,
            strategies: vec![DisturbanceStrategy::VertexAdversarial],
            horizon: 4.0,
            step_base: 1.0 / 64.0,
            record_spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Any of rfc, rgaos, urgaos, two_interval, deadzone, uniform,
    /// interleave, scheduler.
    pub checks: Vec<String>,
    pub eps: Vec<f64>,
    pub t_list: Vec<f64>,
    pub r_list: Vec<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            checks: vec!["rfc".into()],
            eps: vec![1e-2],
            t_list: vec![5.0],
            r_list: vec![2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    /// Mixed with the batch index into every random strategy seed.
    pub base: u64,
    pub minimax: u64,
    pub covering: u64,
    pub schedule: u64,
    pub inits: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            base: 7,
            minimax: MinimaxConfig::default().salt,
            covering: CoveringConfig::default().salt,
            schedule: SchedulerConfig::default().salt,
            inits: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted key to list of values; the sweep runs the cartesian product.
    pub params: BTreeMap<String, Vec<toml::Value>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub minimax: MinimaxConfig,
    pub covering: CoveringConfig,
    pub schedule: ScheduleSection,
    pub region: RegionSection,
    pub law: LawSection,
    pub batch: BatchSection,
    pub verify: VerifySection,
    pub seeds: SeedSection,
    pub sweep: SweepSection,
}

fn cfg_err(msg: impl Into<String>) -> ToolError {
    ToolError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ToolError> {
        let c: Self = toml::from_str(text).map_err(|e| cfg_err(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        match (&self.system.builtin, &self.system.inline) {
            (Some(_), Some(_)) => return Err(cfg_err("system: give either `builtin` or `inline`, not both")),
            (Some(b), None) if model::builtin_canonical(b).is_none() => {
                return Err(cfg_err(format!(
                    "system.builtin `{b}` is not one of {:?}",
                    model::builtin_names()
                )))
            }
            _ => {}
        }
        let r = &self.region;
        if !(r.v_ceil > r.v_floor) {
            return Err(cfg_err(format!(
                "region: v_ceil ({}) must exceed v_floor ({})",
                r.v_ceil, r.v_floor
            )));
        }
        if !(r.t_max > r.t_min && r.r_max > r.r_min && r.r_min > 0.0) {
            return Err(cfg_err("region: need t_max > t_min and r_max > r_min > 0"));
        }
        if !(r.x_over_level > 0.0) {
            return Err(cfg_err("region.x_over_level must be positive"));
        }
        Window {
            i_min: self.schedule.i_min,
            i_max: self.schedule.i_max,
        }
        .validate()
        .map_err(ToolError::from)?;
        LawKind::parse(&self.law.kind)?;
        let b = &self.batch;
        if !(b.horizon > 0.0) {
            return Err(cfg_err("batch.horizon must be positive"));
        }
        if b.t0.iter().any(|t| !(*t >= 0.0)) {
            return Err(cfg_err("batch.t0 entries must be >= 0"));
        }
        StepPolicy {
            base: b.step_base,
            record_spacing: b.record_spacing,
        }
        .validate()?;
        for c in &self.verify.checks {
            if !CHECKS.contains(&c.as_str()) {
                return Err(cfg_err(format!("verify: unknown check `{c}`; known: {CHECKS:?}")));
            }
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        Window {
            i_min: self.schedule.i_min,
            i_max: self.schedule.i_max,
        }
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        let s = &self.schedule;
        SchedulerConfig {
            n_policy: s.n_policy,
            n_cap: s.n_cap,
            n_max: s.n_max,
            x_over_level: self.region.x_over_level,
            grid_times: s.grid_times,
            grid_levels: s.grid_levels,
            grid_dirs: s.grid_dirs,
            u_steps: s.u_steps,
            delta_pairs: s.delta_pairs,
            delta_s: s.delta_s,
            salt: self.seeds.schedule,
        }
    }

    pub fn working_region(&self) -> WorkingRegion {
        let r = &self.region;
        WorkingRegion::new(r.t_min, r.t_max, r.r_min, r.r_max).with_levels(r.v_floor, r.v_ceil)
    }

    pub fn step_policy(&self) -> StepPolicy {
        StepPolicy {
            base: self.batch.step_base,
            record_spacing: self.batch.record_spacing,
        }
    }

    pub fn build_system(&self) -> Result<(SystemModel, Orclf), ToolError> {
        match (&self.system.builtin, &self.system.inline) {
            (_, Some(s)) => build_inline(s),
            (Some(b), None) => Ok(model::builtin_system(b)?),
            (None, None) => Err(cfg_err("system: `builtin` or `inline` required")),
        }
    }

    pub fn segment_feedback(&self) -> Result<SegmentFeedback, ToolError> {
        let (m, o) = self.build_system()?;
        let mm = MinimaxConfig {
            salt: self.seeds.minimax,
            ..self.minimax.clone()
        };
        let cov = CoveringConfig {
            salt: self.seeds.covering,
            ..self.covering.clone()
        };
        Ok(SegmentFeedback::new(m, o, mm, cov)?)
    }

    /// Initial data: explicit x0 list plus seeded random states, crossed with t0.
    pub fn initial_states(&self, n: usize) -> Result<Vec<(f64, Vec<f64>)>, ToolError> {
        let mut xs = self.batch.x0.clone();
        if let Some(r) = &self.batch.random {
            if !(r.r_max >= r.r_min && r.r_min >= 0.0) {
                return Err(cfg_err("batch.random: need r_max >= r_min >= 0"));
            }
            if r.zero.iter().any(|&k| k >= n) || r.zero.len() >= n {
                return Err(cfg_err("batch.random.zero lists invalid coordinates"));
            }
            let mut rng = util::rng_from(self.seeds.inits);
            for _ in 0..r.count {
                let mut x = vec![0.0; n];
                loop {
                    util::unit_vector(&mut rng, &mut x);
                    r.zero.iter().for_each(|&k| x[k] = 0.0);
                    let nx = util::norm(&x);
                    if nx > 1e-6 {
                        x.iter_mut().for_each(|v| *v /= nx);
                        break;
                    }
                }
                let rad = rng.gen_range(r.r_min..=r.r_max);
                x.iter_mut().for_each(|v| *v *= rad);
                xs.push(x);
            }
        }
        if let Some(x) = xs.iter().find(|x| x.len() != n) {
            return Err(cfg_err(format!("batch.x0 entry {x:?} does not have length {n}")));
        }
        let mut out = Vec::new();
        for &t0 in &self.batch.t0 {
            for x in &xs {
                out.push((t0, x.clone()));
            }
        }
        Ok(out)
    }

    pub fn batch_items(&self, n: usize) -> Result<Vec<BatchItem>, ToolError> {
        let inits = self.initial_states(n)?;
        let strategies: Vec<DisturbanceStrategy> = self
            .batch
            .strategies
            .iter()
            .map(|s| match s {
                DisturbanceStrategy::PiecewiseRandom { seed, dwell } => DisturbanceStrategy::PiecewiseRandom {
                    seed: util::seed_mix(self.seeds.base, *seed),
                    dwell: *dwell,
                },
                s => s.clone(),
            })
            .collect();
        Ok(orclf_core::sim::batch_plan(&inits, &strategies))
    }
}

pub const CHECKS: [&str; 8] = [
    "rfc",
    "rgaos",
    "urgaos",
    "two_interval",
    "deadzone",
    "uniform",
    "interleave",
    "scheduler",
];

/// What a law needs beyond the segment feedback.
pub enum Built {
    Segment(Arc<SegmentFeedback>),
    Scheduler(Arc<Scheduler>),
    Pair(Arc<InterleavePair>),
}

pub fn build_engine(cfg: &RunConfig, fb: Arc<SegmentFeedback>) -> Result<Built, ToolError> {
    let kind = LawKind::parse(&cfg.law.kind)?;
    Ok(match kind {
        LawKind::RawSegment => Built::Segment(fb),
        LawKind::RawScheduler => {
            let w = cfg.window();
            let sched = scheduler::default_schedule(&fb.orclf, w.i_min, w.i_max)?;
            Built::Scheduler(Arc::new(Scheduler::new(fb, sched, cfg.scheduler_config())?))
        }
        _ => Built::Pair(Arc::new(interleave::make_pair(fb, cfg.window(), cfg.scheduler_config())?)),
    })
}

pub fn make_law(kind: LawKind, built: &Built) -> Result<FeedbackLaw, ToolError> {
    Ok(match (kind, built) {
        (LawKind::RawSegment, Built::Segment(fb)) => stabilize::raw_segment(fb.clone()),
        (LawKind::RawScheduler, Built::Scheduler(s)) => stabilize::raw_scheduler(s.clone()),
        (LawKind::RawInterleave, Built::Pair(p)) => stabilize::raw_interleave(p.clone()),
        (LawKind::Deadzone, Built::Pair(p)) => stabilize::feedback_deadzone(p.clone()),
        (LawKind::Uniform, Built::Pair(p)) => stabilize::feedback_uniform(p.clone())?,
        _ => return Err(cfg_err("law kind does not match the synthesized artifacts")),
    })
}

fn compile(src: &str, vars: &[&str], what: &str) -> Result<Expr, ToolError> {
    Expr::compile(src, vars).map_err(|e| cfg_err(format!("system.inline.{what}: {e} in `{src}`")))
}

fn comparison(src: &str, what: &str) -> Result<ComparisonFn, ToolError> {
    let e = compile(src, &["s"], what)?;
    Ok(ComparisonFn::new(move |s| e.eval(&[s])))
}

fn time_fn(src: &str, what: &str) -> Result<Arc<dyn Fn(f64) -> f64 + Send + Sync>, ToolError> {
    let e = compile(src, &["t"], what)?;
    Ok(Arc::new(move |t| e.eval(&[t])))
}

fn build_inline(s: &InlineSystem) -> Result<(SystemModel, Orclf), ToolError> {
    let (n, m, l) = (s.n, s.m, s.l);
    if s.f.len() != n || s.h.is_empty() {
        return Err(cfg_err(format!(
            "system.inline: f needs {n} entries and h at least one, got {} and {}",
            s.f.len(),
            s.h.len()
        )));
    }
    if n == 0 || m == 0 || l == 0 || n > util::MAXD || m > util::MAXD || l > util::MAXD {
        return Err(cfg_err("system.inline: dimensions must be in 1..=8"));
    }
    let xs: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let us: Vec<String> = (1..=m).map(|i| format!("u{i}")).collect();
    let ds: Vec<String> = (1..=l).map(|i| format!("d{i}")).collect();
    let mut fvars: Vec<&str> = vec!["t"];
    fvars.extend(xs.iter().map(|s| s.as_str()));
    fvars.extend(us.iter().map(|s| s.as_str()));
    fvars.extend(ds.iter().map(|s| s.as_str()));
    let mut xvars: Vec<&str> = vec!["t"];
    xvars.extend(xs.iter().map(|s| s.as_str()));
    xvars.push("xnorm");
    let fe: Vec<Expr> = s.f.iter().map(|e| compile(e, &fvars, "f")).collect::<Result<_, _>>()?;
    let he: Vec<Expr> = s.h.iter().map(|e| compile(e, &xvars, "h")).collect::<Result<_, _>>()?;
    let ve = compile(&s.v, &xvars, "V")?;
    let be = compile(&s.b, &xvars, "b")?;
    let k = he.len();
    let f = Arc::new(move |t: f64, d: &[f64], x: &[f64], u: &[f64], out: &mut [f64]| {
        let mut slots = [0.0; 1 + 3 * util::MAXD];
        slots[0] = t;
        slots[1..1 + n].copy_from_slice(&x[..n]);
        slots[1 + n..1 + n + m].copy_from_slice(&u[..m]);
        slots[1 + n + m..1 + n + m + l].copy_from_slice(&d[..l]);
        for (o, e) in out.iter_mut().zip(&fe) {
            *o = e.eval(&slots);
        }
    });
    let xslots = move |t: f64, x: &[f64]| {
        let mut slots = [0.0; 2 + util::MAXD];
        slots[0] = t;
        slots[1..1 + n].copy_from_slice(&x[..n]);
        slots[1 + n] = util::norm(&x[..n]);
        slots
    };
    let h = Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        let sl = xslots(t, x);
        for (o, e) in out.iter_mut().zip(&he) {
            *o = e.eval(&sl);
        }
    });
    let dist = match &s.disturbance {
        DisturbanceSpec::Points { points } => DisturbanceSet::Points(points.clone()),
        DisturbanceSpec::Box { lo, hi, res } => DisturbanceSet::Box {
            lo: lo.clone(),
            hi: hi.clone(),
            res: *res,
        },
    };
    let controls = match &s.controls {
        ControlSpec::Full => ControlSet::Full,
        ControlSpec::Orthant => ControlSet::Orthant,
        ControlSpec::Symbox(v) => ControlSet::SymBox(v.clone()),
    };
    let model = SystemModel::new(s.name.clone(), n, m, k, f, h, dist, controls)?;
    if model.l != l {
        return Err(cfg_err(format!("system.inline: disturbance set has dimension {}, l = {l}", model.l)));
    }
    let small_control = match (&s.a3, &s.gamma) {
        (Some(a3), Some(g)) => Some(SmallControl {
            a3: comparison(a3, "a3")?,
            gamma: time_fn(g, "gamma")?,
        }),
        (None, None) => None,
        _ => return Err(cfg_err("system.inline: give both a3 and gamma or neither")),
    };
    let rho = compile(&s.rho, &["s"], "rho")?;
    let orclf = Orclf {
        v: Arc::new(move |t, x| ve.eval(&xslots(t, x))),
        grad: None,
        a1: comparison(&s.a1, "a1")?,
        a2: comparison(&s.a2, "a2")?,
        mu: time_fn(&s.mu, "mu")?,
        beta: time_fn(&s.beta, "beta")?,
        rho: Arc::new(move |v| rho.eval(&[v])),
        b: Arc::new(move |t, x| be.eval(&xslots(t, x))),
        small_control,
    };
    Ok((model, orclf))
}
