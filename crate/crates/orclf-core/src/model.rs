//! Plants, their ORCLF data, the built-in examples and the sampled
//! hypothesis checks.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{self, MAXD};

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `(t, d, x, u, out)` writes `f(t,d,x,u)` into `out`.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, out)` writes `H(t,x)` into `out`.
pub type OutputFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, dvdx)` returns `dV/dt` and writes `dV/dx`.
pub type GradFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) -> f64 + Send + Sync>;

/// Monotone map with a bisection inverse.
#[derive(Clone)]
pub struct ComparisonFn {
    f: RealFn,
}

impl fmt::Debug for ComparisonFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComparisonFn")
    }
}

impl ComparisonFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    /// Smallest `s >= 0` with `eval(s) >= y`, to tolerance 1e-12.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= self.eval(0.0) {
            return 0.0;
        }
        let mut hi = 1.0;
        let mut guard = 0;
        while self.eval(hi) < y && guard < 2000 {
            hi *= 2.0;
            guard += 1;
        }
        let mut lo = 0.0;
        while hi - lo > 1e-12 * hi.max(1e-300) && hi - lo > 1e-300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DisturbanceSet {
    Points(Vec<Vec<f64>>),
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        res: usize,
    },
}

impl DisturbanceSet {
    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSet::Points(p) => p.first().map_or(0, |v| v.len()),
            DisturbanceSet::Box { lo, .. } => lo.len(),
        }
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            DisturbanceSet::Points(p) => p.clone(),
            DisturbanceSet::Box { lo, hi, .. } => {
                let l = lo.len();
                (0..1usize << l)
                    .map(|mask| {
                        (0..l)
                            .map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// Vertices first, then the remaining uniform grid points.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        match self {
            DisturbanceSet::Points(p) => p.clone(),
            DisturbanceSet::Box { lo, hi, res } => {
                let l = lo.len();
                let mut out = self.vertices();
                let r = (*res).max(2);
                let total = r.pow(l as u32);
                for idx in 0..total {
                    let mut k = idx;
                    let mut p = Vec::with_capacity(l);
                    let mut vertex = true;
                    for i in 0..l {
                        let c = k % r;
                        k /= r;
                        if c != 0 && c != r - 1 {
                            vertex = false;
                        }
                        p.push(lo[i] + (hi[i] - lo[i]) * c as f64 / (r - 1) as f64);
                    }
                    if !vertex {
                        out.push(p);
                    }
                }
                out
            }
        }
    }

    pub fn contains(&self, d: &[f64]) -> bool {
        match self {
            DisturbanceSet::Points(p) => p.iter().any(|q| q.as_slice() == d),
            DisturbanceSet::Box { lo, hi, .. } => d
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            DisturbanceSet::Points(p) => p[rng.gen_range(0..p.len())].clone(),
            DisturbanceSet::Box { lo, hi, .. } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| if b > a { rng.gen_range(*a..=*b) } else { *a })
                .collect(),
        }
    }
}

/// Closed positive cone of admissible controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlSet {
    Full,
    /// Nonnegative orthant.
    Orthant,
    /// Symmetric box with the given half-widths.
    SymBox(Vec<f64>),
}

impl ControlSet {
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Full => u.iter().all(|v| v.is_finite()),
            ControlSet::Orthant => u.iter().all(|v| *v >= 0.0),
            ControlSet::SymBox(w) => u.iter().zip(w).all(|(v, c)| v.abs() <= *c),
        }
    }

    /// Maps a candidate into the set.
    pub fn project(&self, u: &mut [f64]) {
        match self {
            ControlSet::Full => {}
            ControlSet::Orthant => u.iter_mut().for_each(|v| *v = v.max(0.0)),
            ControlSet::SymBox(w) => u
                .iter_mut()
                .zip(w)
                .for_each(|(v, c)| *v = v.clamp(-*c, *c)),
        }
    }

    /// Search directions restricted to the cone.
    pub fn directions(&self, m: usize, count: usize) -> Vec<Vec<f64>> {
        let count = if count == 0 {
            if m <= 1 {
                2
            } else {
                64
            }
        } else {
            count
        };
        let dirs = util::direction_set(m, count);
        match self {
            ControlSet::Orthant => {
                let mut out: Vec<Vec<f64>> = dirs
                    .into_iter()
                    .map(|d| d.into_iter().map(f64::abs).collect::<Vec<_>>())
                    .collect();
                out.dedup();
                out
            }
            _ => dirs,
        }
    }
}

#[derive(Clone)]
pub struct SystemModel {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub f: FieldFn,
    pub h: OutputFn,
    pub dist: DisturbanceSet,
    pub controls: ControlSet,
    dgrid: Vec<f64>,
    nd: usize,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("l", &self.l)
            .field("k", &self.k)
            .field("dist", &self.dist)
            .field("controls", &self.controls)
            .finish()
    }
}

impl SystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        k: usize,
        f: FieldFn,
        h: OutputFn,
        dist: DisturbanceSet,
        controls: ControlSet,
    ) -> Result<Self> {
        let l = dist.dim();
        if n == 0 || m == 0 || k == 0 || l == 0 {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if n > MAXD || m > MAXD || l > MAXD || k > MAXD {
            return Err(Error::Config(format!("dimensions above {MAXD} are not supported")));
        }
        if let DisturbanceSet::Points(p) = &dist {
            if p.is_empty() || p.iter().any(|q| q.len() != l) {
                return Err(Error::Config("disturbance points must share one dimension".into()));
            }
        }
        if let DisturbanceSet::Box { lo, hi, .. } = &dist {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| a > b) {
                return Err(Error::Config("disturbance box needs lo <= hi".into()));
            }
        }
        if let ControlSet::SymBox(w) = &controls {
            if w.len() != m || w.iter().any(|c| *c < 0.0) {
                return Err(Error::Config("control box half-widths must be nonnegative".into()));
            }
        }
        let grid = dist.grid();
        let nd = grid.len();
        let dgrid = grid.into_iter().flatten().collect();
        Ok(Self {
            name: name.into(),
            n,
            m,
            l,
            k,
            f,
            h,
            dist,
            controls,
            dgrid,
            nd,
        })
    }

    /// Flattened D-discretization, `l` values per point.
    #[inline]
    pub fn dgrid(&self) -> impl Iterator<Item = &[f64]> {
        self.dgrid.chunks(self.l)
    }

    pub fn dgrid_len(&self) -> usize {
        self.nd
    }

    #[inline]
    pub fn eval_f(&self, t: f64, d: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.f)(t, d, x, u, out)
    }

    pub fn output_norm(&self, t: f64, x: &[f64]) -> f64 {
        let mut y = [0.0; MAXD];
        (self.h)(t, x, &mut y[..self.k]);
        util::norm(&y[..self.k])
    }
}

#[derive(Clone)]
pub struct SmallControl {
    pub a3: ComparisonFn,
    pub gamma: TimeFn,
}

#[derive(Clone)]
pub struct Orclf {
    pub v: ScalarFn,
    pub grad: Option<GradFn>,
    pub a1: ComparisonFn,
    pub a2: ComparisonFn,
    pub mu: TimeFn,
    pub beta: TimeFn,
    pub rho: RealFn,
    pub b: ScalarFn,
    pub small_control: Option<SmallControl>,
}

impl fmt::Debug for Orclf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Orclf")
            .field("analytic_grad", &self.grad.is_some())
            .field("small_control", &self.small_control.is_some())
            .finish()
    }
}

impl Orclf {
    #[inline]
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.v)(t, x)
    }

    #[inline]
    pub fn rho(&self, s: f64) -> f64 {
        (self.rho)(s)
    }

    #[inline]
    pub fn b(&self, t: f64, x: &[f64]) -> f64 {
        (self.b)(t, x)
    }

    /// Returns `dV/dt` and writes `dV/dx`; central differences with
    /// step `1e-6 max(1,|x|)` when no analytic gradient is given.
    pub fn gradient(&self, t: f64, x: &[f64], gx: &mut [f64]) -> f64 {
        if let Some(g) = &self.grad {
            return g(t, x, gx);
        }
        let n = x.len();
        let h = 1e-6 * util::norm(x).max(1.0);
        let mut y = [0.0; MAXD];
        y[..n].copy_from_slice(x);
        for i in 0..n {
            y[i] = x[i] + h;
            let p = (self.v)(t, &y[..n]);
            y[i] = x[i] - h;
            let q = (self.v)(t, &y[..n]);
            y[i] = x[i];
            gx[i] = (p - q) / (2.0 * h);
        }
        ((self.v)(t + h, x) - (self.v)(t - h, x)) / (2.0 * h)
    }

    /// Whether `beta` equals 1 on a sample grid of `[0, 100]`.
    pub fn beta_is_one(&self) -> bool {
        (0..=400).all(|k| ((self.beta)(k as f64 * 0.25) - 1.0).abs() <= 1e-12)
    }
}

pub const S1: &str = "S1_linear_output";
pub const S2: &str = "S2_cubic_uncertain";
pub const S3: &str = "S3_scalar_integrator";

pub fn builtin_names() -> [&'static str; 3] {
    [S1, S2, S3]
}

/// Full name of a builtin; `S1`, `S2`, `S3` are accepted as short forms.
pub fn builtin_canonical(name: &str) -> Option<&'static str> {
    builtin_names()
        .into_iter()
        .find(|full| *full == name || full.split('_').next() == Some(name))
}

pub fn builtin_system(name: &str) -> Result<(SystemModel, Orclf)> {
    let canon = builtin_canonical(name).unwrap_or("");
    match canon {
        S1 => {
            let model = SystemModel::new(
                S1,
                2,
                1,
                1,
                Arc::new(|_t, _d, x, u, out| {
                    out[0] = x[0];
                    out[1] = u[0];
                }),
                Arc::new(|_t, x, out| out[0] = x[1]),
                DisturbanceSet::Points(vec![vec![0.0]]),
                ControlSet::Full,
            )?;
            let orclf = Orclf {
                v: Arc::new(|t, x| 0.5 * (-4.0 * t).exp() * x[0] * x[0] + 0.5 * x[1] * x[1]),
                grad: Some(Arc::new(|t, x, g| {
                    let e = (-4.0 * t).exp();
                    g[0] = e * x[0];
                    g[1] = x[1];
                    -2.0 * e * x[0] * x[0]
                })),
                a1: ComparisonFn::new(|s| s * s / 16.0),
                a2: ComparisonFn::new(|s| s * s),
                mu: Arc::new(|t| (-2.0 * t).exp()),
                beta: Arc::new(|_| 1.0),
                rho: Arc::new(|s| s),
                b: Arc::new(|_t, x| util::norm(x)),
                small_control: Some(SmallControl {
                    a3: ComparisonFn::new(|s| s),
                    gamma: Arc::new(|_| 1.0),
                }),
            };
            Ok((model, orclf))
        }
        S2 => {
            let model = SystemModel::new(
                S2,
                1,
                1,
                1,
                Arc::new(|_t, d, x, u, out| out[0] = d[0] * x[0] + u[0] * u[0] * u[0]),
                Arc::new(|_t, x, out| out[0] = x[0]),
                DisturbanceSet::Box {
                    lo: vec![-1.0],
                    hi: vec![1.0],
                    res: 5,
                },
                ControlSet::Full,
            )?;
            let orclf = Orclf {
                v: Arc::new(|_t, x| 0.5 * x[0] * x[0]),
                grad: Some(Arc::new(|_t, x, g| {
                    g[0] = x[0];
                    0.0
                })),
                a1: ComparisonFn::new(|s| s * s / 8.0),
                a2: ComparisonFn::new(|s| s * s),
                mu: Arc::new(|_| 1.0),
                beta: Arc::new(|_| 1.0),
                rho: Arc::new(|s| s),
                b: Arc::new(|_t, _x| 2.0),
                small_control: None,
            };
            Ok((model, orclf))
        }
        S3 => {
            let model = SystemModel::new(
                S3,
                1,
                1,
                1,
                Arc::new(|_t, _d, _x, u, out| out[0] = u[0]),
                Arc::new(|_t, x, out| out[0] = x[0]),
                DisturbanceSet::Points(vec![vec![0.0]]),
                ControlSet::Full,
            )?;
            let orclf = Orclf {
                v: Arc::new(|_t, x| 0.5 * x[0] * x[0]),
                grad: Some(Arc::new(|_t, x, g| {
                    g[0] = x[0];
                    0.0
                })),
                a1: ComparisonFn::new(|s| s * s / 8.0),
                a2: ComparisonFn::new(|s| s * s),
                mu: Arc::new(|_| 1.0),
                beta: Arc::new(|_| 1.0),
                rho: Arc::new(|s| s),
                b: Arc::new(|_t, x| 2.0 * x[0].abs()),
                small_control: Some(SmallControl {
                    a3: ComparisonFn::new(|s| 2.0 * s),
                    gamma: Arc::new(|_| 1.0),
                }),
            };
            Ok((model, orclf))
        }
        _ => Err(Error::Config(format!("unknown builtin system `{name}`"))),
    }
}

/// Piecewise-constant right-continuous disturbance signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbancePath {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl DisturbancePath {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>, dist: &DisturbanceSet) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::Domain("one value per breakpoint required".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !dist.contains(v)) {
            return Err(Error::Domain(format!("disturbance value {v:?} not in D")));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(d: Vec<f64>) -> Self {
        Self {
            breakpoints: vec![f64::NEG_INFINITY],
            values: vec![d],
        }
    }

    /// Random path on `[t0, t1)` with `pieces` equal dwell intervals.
    pub fn random<R: Rng>(dist: &DisturbanceSet, t0: f64, t1: f64, pieces: usize, rng: &mut R) -> Self {
        let pieces = pieces.max(1);
        let breakpoints = (0..pieces)
            .map(|k| t0 + (t1 - t0) * k as f64 / pieces as f64)
            .collect();
        let values = (0..pieces).map(|_| dist.sample(rng)).collect();
        Self { breakpoints, values }
    }

    pub fn eval(&self, t: f64) -> &[f64] {
        let idx = self.breakpoints.partition_point(|b| *b <= t);
        &self.values[idx.saturating_sub(1)]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePlan {
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub samples: usize,
    pub seed: u64,
}

impl SamplePlan {
    pub fn empty() -> Self {
        Self {
            t_min: 0.0,
            t_max: 0.0,
            x_min: 1.0,
            x_max: 1.0,
            samples: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub d: Option<Vec<f64>>,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub witness: Option<Witness>,
}

impl CheckEntry {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            witness: None,
        }
    }

    pub fn record(&mut self, margin: f64, t: f64, x: &[f64], d: Option<&[f64]>) {
        self.checked += 1;
        let bad = !(margin >= 0.0);
        if bad {
            self.violations += 1;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.witness = Some(Witness {
                t,
                x: x.to_vec(),
                d: d.map(|v| v.to_vec()),
                margin,
            });
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub entries: Vec<CheckEntry>,
    /// Largest sampled Lipschitz quotient of `f`, informational.
    pub lipschitz_quotient: f64,
}

impl HypothesisReport {
    pub fn violations(&self) -> usize {
        self.entries.iter().map(|e| e.violations).sum()
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn rel_margin(upper: f64, lower: f64) -> f64 {
    let scale = upper.abs().max(lower.abs()).max(1e-300);
    (upper * (1.0 + 1e-9) - lower) / scale
}

/// Samples the equilibrium and cone hypotheses, the two-sided bound on V and,
/// when present, the small-control bound.
pub fn check_hypotheses(model: &SystemModel, orclf: &Orclf, plan: &SamplePlan) -> HypothesisReport {
    let mut report = HypothesisReport::default();
    if plan.samples == 0 {
        return report;
    }
    let n = model.n;
    let m = model.m;
    let mut rng = util::rng_from(plan.seed);
    let mut eq = CheckEntry::new("equilibrium");
    let mut cone = CheckEntry::new("cone");
    let mut lower = CheckEntry::new("sandwich_lower");
    let mut upper = CheckEntry::new("sandwich_upper");
    let mut rho_pd = CheckEntry::new("rho_positive_definite");
    let mut small = model_small_entry(orclf);
    let zero_x = [0.0; MAXD];
    let zero_u = [0.0; MAXD];
    let mut out = [0.0; MAXD];
    let mut out2 = [0.0; MAXD];
    let mut x = [0.0; MAXD];
    let mut dir = [0.0; MAXD];
    let mut u = [0.0; MAXD];
    let mut lq = 0.0_f64;
    let dgrid: Vec<Vec<f64>> = model.dgrid().map(|d| d.to_vec()).collect();

    let r0 = orclf.rho(0.0);
    rho_pd.record(if r0 == 0.0 { 0.0 } else { -r0.abs() }, 0.0, &[0.0], None);

    let (lx, hx) = (plan.x_min.max(1e-300).ln(), plan.x_max.max(1e-300).ln());
    for _ in 0..plan.samples {
        let t = if plan.t_max > plan.t_min {
            rng.gen_range(plan.t_min..plan.t_max)
        } else {
            plan.t_min
        };
        let d = &dgrid[rng.gen_range(0..dgrid.len())];

        model.eval_f(t, d, &zero_x[..n], &zero_u[..m], &mut out[..n]);
        let fz = util::norm(&out[..n]);
        (model.h)(t, &zero_x[..n], &mut out2[..model.k]);
        let hz = util::norm(&out2[..model.k]);
        eq.record(1e-12 - fz.max(hz), t, &zero_x[..n], Some(d));

        let r = if hx > lx { rng.gen_range(lx..hx).exp() } else { plan.x_min };
        util::unit_vector(&mut rng, &mut dir[..n]);
        for i in 0..n {
            x[i] = r * dir[i];
        }
        let xs = &x[..n];
        let v = orclf.value(t, xs);
        let ynorm = model.output_norm(t, xs);
        let lhs = orclf.a1.eval(ynorm + (orclf.mu)(t) * r);
        lower.record(rel_margin(v, lhs), t, xs, None);
        let rhs = orclf.a2.eval((orclf.beta)(t) * r);
        upper.record(rel_margin(rhs, v), t, xs, None);
        let rv = orclf.rho(v);
        rho_pd.record(if v > 0.0 { rv } else { 0.0 }, t, xs, None);

        if let (Some(sc), Some(entry)) = (&orclf.small_control, small.as_mut()) {
            let bound = sc.a3.eval((sc.gamma)(t) * r);
            entry.record(rel_margin(bound, orclf.b(t, xs)), t, xs, None);
        }

        // cone property on a random admissible control
        for ui in u[..m].iter_mut() {
            *ui = util::gauss(&mut rng) * r;
        }
        model.controls.project(&mut u[..m]);
        let lam: f64 = rng.gen();
        let mut scaled = [0.0; MAXD];
        for i in 0..m {
            scaled[i] = lam * u[i];
        }
        let ok = model.controls.contains(&u[..m]) && model.controls.contains(&scaled[..m]);
        cone.record(if ok { 0.0 } else { -1.0 }, t, xs, None);

        // Lipschitz quotient against a nearby pair
        let mut y = [0.0; MAXD];
        let mut w = [0.0; MAXD];
        for i in 0..n {
            y[i] = xs[i] * (1.0 + 1e-3 * util::gauss(&mut rng));
        }
        for i in 0..m {
            w[i] = u[i] + 1e-3 * r * util::gauss(&mut rng);
        }
        model.controls.project(&mut w[..m]);
        model.eval_f(t, d, xs, &u[..m], &mut out[..n]);
        model.eval_f(t, d, &y[..n], &w[..m], &mut out2[..n]);
        let num = util::dist(&out[..n], &out2[..n]);
        let den = util::dist(xs, &y[..n]) + util::dist(&u[..m], &w[..m]);
        if den > 0.0 && num.is_finite() {
            lq = lq.max(num / den);
        }
    }
    report.entries.push(eq);
    report.entries.push(cone);
    report.entries.push(lower);
    report.entries.push(upper);
    report.entries.push(rho_pd);
    if let Some(s) = small {
        report.entries.push(s);
    }
    report.lipschitz_quotient = lq;
    report
}

fn model_small_entry(orclf: &Orclf) -> Option<CheckEntry> {
    orclf.small_control.as_ref().map(|_| CheckEntry::new("small_control"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_examples() {
        let (m1, o1) = builtin_system(S1).unwrap();
        let mut out = [0.0; 2];
        m1.eval_f(0.0, &[0.0], &[1.0, 1.0], &[0.0], &mut out);
        assert_eq!(out, [1.0, 0.0]);
        assert_eq!(o1.value(0.0, &[1.0, 1.0]), 1.0);

        let (m2, _) = builtin_system(S2).unwrap();
        let mut o = [0.0];
        m2.eval_f(0.3, &[1.0], &[2.0], &[-(2.0f64).cbrt()], &mut o);
        assert!(o[0].abs() < 1e-12);
        assert!(builtin_system("nope").is_err());
    }

    #[test]
    fn inverse_bisection() {
        let a = ComparisonFn::new(|s| s * s / 16.0);
        let s = a.inverse(0.25);
        assert!((s - 2.0).abs() < 1e-11);
        assert_eq!(a.inverse(0.0), 0.0);
    }

    #[test]
    fn box_grid_has_vertices_first() {
        let d = DisturbanceSet::Box {
            lo: vec![-1.0],
            hi: vec![1.0],
            res: 5,
        };
        let g = d.grid();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], vec![-1.0]);
        assert_eq!(g[1], vec![1.0]);
    }

    #[test]
    fn path_is_right_continuous() {
        let d = DisturbanceSet::Box {
            lo: vec![-1.0],
            hi: vec![1.0],
            res: 5,
        };
        let p = DisturbancePath::new(vec![0.0, 0.5], vec![vec![-1.0], vec![1.0]], &d).unwrap();
        assert_eq!(p.eval(0.49), &[-1.0]);
        assert_eq!(p.eval(0.5), &[1.0]);
        assert!(DisturbancePath::new(vec![0.0, 0.0], vec![vec![0.0], vec![0.0]], &d).is_err());
        assert!(DisturbancePath::new(vec![0.0], vec![vec![2.0]], &d).is_err());
    }

    #[test]
    fn empty_plan_gives_empty_report() {
        let (m, o) = builtin_system(S3).unwrap();
        let r = check_hypotheses(&m, &o, &SamplePlan::empty());
        assert!(r.entries.is_empty());
    }

    #[test]
    fn fd_gradient_matches_analytic() {
        let (_, o) = builtin_system(S1).unwrap();
        let mut fd = o.clone();
        fd.grad = None;
        let x = [0.7, -1.3];
        let mut g1 = [0.0; 2];
        let mut g2 = [0.0; 2];
        let t1 = o.gradient(0.4, &x, &mut g1);
        let t2 = fd.gradient(0.4, &x, &mut g2);
        assert!((t1 - t2).abs() < 1e-6);
        assert!((g1[0] - g2[0]).abs() < 1e-6 && (g1[1] - g2[1]).abs() < 1e-6);
    }
}
