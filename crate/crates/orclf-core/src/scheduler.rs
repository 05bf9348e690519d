//! Level-set scheduled feedback k_{r,a}: value bands `[r_{i-1}, r_i)` with
//! guard widths `a_i`, a time subgrid of `N_ij` points per unit interval,
//! and the segment feedback replayed on each subinterval.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minimax::{self, PointCtx};
use crate::model::{CheckEntry, Orclf};
use crate::sim::Trajectory;
use crate::unitloop::{self, SegmentFeedback};
use crate::util::{self, MAXD};

/// Padding kept on both sides of the window for `i-3 .. i+2` lookups.
const PAD: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub id: String,
    pub i_min: i32,
    pub i_max: i32,
    r: Vec<f64>,
    a: Vec<f64>,
    mu: Vec<f64>,
}

/// Quarter of the sampled minimum of rho on `[lo, hi]`.
pub fn quarter_min_rho(orclf: &Orclf, lo: f64, hi: f64) -> f64 {
    let mut m = orclf.rho(lo).min(orclf.rho(hi));
    for k in 1..256 {
        let s = lo + (hi - lo) * k as f64 / 256.0;
        m = m.min(orclf.rho(s));
    }
    0.25 * m
}

impl LevelSchedule {
    /// Tabulates `r`, `a` on the padded window and derives `mu`.
    pub fn from_fns(
        id: impl Into<String>,
        i_min: i32,
        i_max: i32,
        orclf: &Orclf,
        r: impl Fn(i32) -> f64,
        a: impl Fn(i32) -> f64,
    ) -> Result<Self> {
        if i_min > i_max {
            return Err(Error::Config(format!("empty schedule window [{i_min}, {i_max}]")));
        }
        let idx: Vec<i32> = (i_min - PAD..=i_max + PAD).collect();
        let rv: Vec<f64> = idx.iter().map(|&i| r(i)).collect();
        let av: Vec<f64> = idx.iter().map(|&i| a(i)).collect();
        let mut mu = vec![0.0; idx.len()];
        for k in 1..idx.len() {
            mu[k] = quarter_min_rho(orclf, rv[k - 1], rv[k]);
        }
        mu[0] = mu[1];
        let s = Self {
            id: id.into(),
            i_min,
            i_max,
            r: rv,
            a: av,
            mu,
        };
        s.validate()?;
        Ok(s)
    }

    fn slot(&self, i: i32) -> usize {
        (i.clamp(self.i_min - PAD, self.i_max + PAD) - (self.i_min - PAD)) as usize
    }

    #[inline]
    pub fn r(&self, i: i32) -> f64 {
        self.r[self.slot(i)]
    }

    #[inline]
    pub fn a(&self, i: i32) -> f64 {
        self.a[self.slot(i)]
    }

    /// Quarter of the minimum of rho over the band `[r_{i-1}, r_i]`.
    #[inline]
    pub fn mu(&self, i: i32) -> f64 {
        self.mu[self.slot(i)]
    }

    pub fn rho_i(&self, i: i32) -> f64 {
        self.a(i - 2).min(self.a(i - 1)).min(self.a(i)).min(self.a(i + 1))
    }

    pub fn validate(&self) -> Result<()> {
        for i in self.i_min - PAD..=self.i_max + PAD {
            let (r, a) = (self.r(i), self.a(i));
            if !(r > 0.0 && a > 0.0 && r.is_finite() && a.is_finite()) {
                return Err(Error::Schedule {
                    band: i,
                    msg: format!("needs r > 0 and a > 0, got r={r}, a={a}"),
                });
            }
        }
        for i in self.i_min - PAD..self.i_max + PAD {
            if !(self.r(i) + 2.0 * self.a(i) < self.r(i + 1) - 2.0 * self.a(i + 1)) {
                return Err(Error::Schedule {
                    band: i,
                    msg: "bands with guards overlap".into(),
                });
            }
        }
        Ok(())
    }

    /// Band `i` with `r_{i-1} <= v < r_i`, clamped into the window.
    pub fn band_of(&self, v: f64) -> (i32, bool) {
        if v < self.r(self.i_min - 1) {
            return (self.i_min, true);
        }
        if v >= self.r(self.i_max) {
            return (self.i_max, true);
        }
        let (mut lo, mut hi) = (self.i_min, self.i_max);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if v < self.r(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        (lo, false)
    }

    /// Band `i` with `r_{i-1} - 2a_{i-1} < v <= r_i - 2a_i`.
    pub fn guard_band_of(&self, v: f64) -> i32 {
        let mut i = self.i_min;
        while i < self.i_max && v > self.r(i) - 2.0 * self.a(i) {
            i += 1;
        }
        i
    }
}

pub fn default_schedule(orclf: &Orclf, i_min: i32, i_max: i32) -> Result<LevelSchedule> {
    LevelSchedule::from_fns(
        "default",
        i_min,
        i_max,
        orclf,
        |i| 2f64.powi(i),
        |i| 2f64.powi(i) / 64.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NPolicy {
    Certify,
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub n_policy: NPolicy,
    pub n_cap: u64,
    pub n_max: u64,
    pub x_over_level: f64,
    pub grid_times: usize,
    pub grid_levels: usize,
    pub grid_dirs: usize,
    pub u_steps: usize,
    pub delta_pairs: usize,
    pub delta_s: usize,
    pub salt: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            n_policy: NPolicy::Certify,
            n_cap: 1 << 20,
            n_max: 1024,
            x_over_level: 2.0,
            grid_times: 3,
            grid_levels: 6,
            grid_dirs: 16,
            u_steps: 16,
            delta_pairs: 512,
            delta_s: 64,
            salt: 0x6261_6e64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub i: i32,
    pub j: i64,
    pub max_vdot: f64,
    pub max_f: f64,
    pub mu_i: f64,
    pub rho_i: f64,
    /// Lower bound on N from the derivative condition.
    pub need_vdot: f64,
    /// Lower bound on N from the displacement condition, when computed.
    pub need_step: Option<f64>,
    pub delta_t: Option<f64>,
    pub delta_x: Option<f64>,
    pub n_cert: u64,
    pub n: u64,
}

impl BandEntry {
    pub fn clamped(&self) -> bool {
        self.n < self.n_cert || self.need_step.is_none()
    }
}

fn pow2_at_least(need: f64, floor: u64) -> u64 {
    let mut n = floor.max(2);
    while (n as f64) < need {
        if n >= 1 << 62 {
            return u64::MAX;
        }
        n *= 2;
    }
    n
}

/// Solves `V(t, r dir) = level` for r on `(0, cap]` by bisection; `None`
/// if the level is out of reach below the cap.
pub fn ray_point(orclf: &Orclf, t: f64, dir: &[f64], level: f64, cap: f64) -> Option<f64> {
    let n = dir.len();
    let mut y = [0.0; MAXD];
    let mut vat = |r: f64| {
        for i in 0..n {
            y[i] = r * dir[i];
        }
        orclf.value(t, &y[..n])
    };
    if vat(cap) < level {
        return None;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if vat(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

pub struct Scheduler {
    pub fb: Arc<SegmentFeedback>,
    pub sched: LevelSchedule,
    pub cfg: SchedulerConfig,
    bank: RwLock<HashMap<(i32, i64), Arc<BandEntry>>>,
    clamp_events: AtomicU64,
}

impl std::fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scheduler")
            .field("schedule", &self.sched.id)
            .field("entries", &self.bank.read().len())
            .finish()
    }
}

/// What one evaluation of k_{r,a} used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KraInfo {
    pub band: i32,
    pub n: u64,
    pub clamped: bool,
}

impl Scheduler {
    pub fn new(fb: Arc<SegmentFeedback>, sched: LevelSchedule, cfg: SchedulerConfig) -> Result<Self> {
        if cfg.n_max < 2 || cfg.n_cap < 2 {
            return Err(Error::Config("schedule.n_max and schedule.n_cap must be at least 2".into()));
        }
        Ok(Self {
            fb,
            sched,
            cfg,
            bank: RwLock::new(HashMap::new()),
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn entries(&self) -> Vec<BandEntry> {
        let mut v: Vec<BandEntry> = self.bank.read().values().map(|e| (**e).clone()).collect();
        v.sort_by_key(|e| (e.i, e.j));
        v
    }

    pub fn import_entries(&self, entries: Vec<BandEntry>) {
        let mut map = self.bank.write();
        for e in entries {
            map.insert((e.i, e.j), Arc::new(e));
        }
    }

    fn x_cap(&self, level: f64, t0: f64, t1: f64) -> f64 {
        let orclf = &self.fb.orclf;
        let mut bmin = f64::INFINITY;
        for k in 0..=16 {
            bmin = bmin.min((orclf.beta)(t0 + (t1 - t0) * k as f64 / 16.0));
        }
        self.cfg.x_over_level * orclf.a2.inverse(level) / bmin
    }

    /// Grid points of `{t in [t0,t1], V in [lo,hi], |x| <= cap}` on rays.
    fn level_points(&self, t0: f64, t1: f64, lo: f64, hi: f64, cap: f64, times: usize) -> Vec<(f64, Vec<f64>)> {
        let n = self.fb.model.n;
        let orclf = &self.fb.orclf;
        let dirs = util::direction_set(n, self.cfg.grid_dirs);
        let nl = self.cfg.grid_levels.max(2);
        let mut pts = Vec::new();
        for kt in 0..times.max(1) {
            let t = if times <= 1 { t0 } else { t0 + (t1 - t0) * kt as f64 / (times - 1) as f64 };
            for kl in 0..nl {
                let level = lo * (hi / lo).powf(kl as f64 / (nl - 1) as f64);
                for d in &dirs {
                    let r = match ray_point(orclf, t, d, level, cap) {
                        Some(r) => r,
                        None => {
                            let y: Vec<f64> = d.iter().map(|v| v * cap).collect();
                            if orclf.value(t, &y) >= lo {
                                cap
                            } else {
                                continue;
                            }
                        }
                    };
                    pts.push((t, d.iter().map(|v| v * r).collect()));
                }
            }
        }
        pts
    }

    fn grid_maxima(&self, pts: &[(f64, Vec<f64>)]) -> Result<(f64, f64)> {
        let fb = &self.fb;
        let model = &fb.model;
        let n = model.n;
        let mut max_vdot = 0.0_f64;
        let mut max_f = 0.0_f64;
        let mut f = [0.0; MAXD];
        for (t, x) in pts {
            let ctx = PointCtx::new(&fb.orclf, *t, x)?;
            let bt = minimax::b_tilde(&fb.orclf, &fb.minimax, *t, x);
            for u in minimax::control_grid(model, &fb.minimax, bt, self.cfg.u_steps) {
                for d in model.dgrid() {
                    model.eval_f(*t, d, x, &u, &mut f[..n]);
                    let vd = ctx.vt + util::dot(&ctx.gx[..n], &f[..n]);
                    let fa = util::norm(&f[..n]);
                    if !vd.is_finite() || !fa.is_finite() {
                        return Err(Error::NumericDomain {
                            t: *t,
                            x: x.clone(),
                            what: "band grid maxima".into(),
                        });
                    }
                    max_vdot = max_vdot.max(vd.abs());
                    max_f = max_f.max(fa);
                }
            }
        }
        Ok((max_vdot, max_f))
    }

    /// Sampled left side of the modulus condition at one pair.
    fn modulus_lhs(&self, t0: f64, x0: &[f64], t: f64, x: &[f64], p0: &unitloop::SegmentProfile) -> Result<f64> {
        let fb = &self.fb;
        let model = &fb.model;
        let (n, m) = (model.n, model.m);
        let c0 = PointCtx::new(&fb.orclf, t0, x0)?;
        let c1 = PointCtx::new(&fb.orclf, t, x)?;
        let dgx = util::dist(&c1.gx[..n], &c0.gx[..n]);
        let bt = minimax::b_tilde(&fb.orclf, &fb.minimax, t, x);
        let mut fmax = 0.0_f64;
        let mut f = [0.0; MAXD];
        for u in minimax::control_grid(model, &fb.minimax, bt, 4) {
            for d in model.dgrid() {
                model.eval_f(t, d, x, &u, &mut f[..n]);
                fmax = fmax.max(util::norm(&f[..n]));
            }
        }
        let p1 = fb.profile(t0, x)?;
        let ns = self.cfg.delta_s.max(2);
        let mut u0 = [0.0; MAXD];
        let mut u1 = [0.0; MAXD];
        let mut f0 = [0.0; MAXD];
        let mut integral = 0.0;
        for k in 0..ns {
            let s = (k as f64 + 0.5) / ns as f64;
            p0.eval(s, &mut u0[..m]);
            p1.eval(s, &mut u1[..m]);
            let mut w = 0.0_f64;
            for d in model.dgrid() {
                model.eval_f(t, d, x, &u1[..m], &mut f[..n]);
                model.eval_f(t0, d, x0, &u0[..m], &mut f0[..n]);
                w = w.max(util::dist(&f[..n], &f0[..n]));
            }
            integral += w / ns as f64;
        }
        Ok((c1.vt - c0.vt).abs() + dgx * fmax + util::norm(&c0.gx[..n]) * integral)
    }

    fn find_delta(&self, i: i32, j: i64) -> Result<(f64, f64)> {
        let fb = &self.fb;
        let n = fb.model.n;
        let orclf = &fb.orclf;
        let (lo, hi) = (self.sched.r(i - 1), self.sched.r(i));
        let cap = self.x_cap(hi, j as f64, j as f64 + 1.0);
        let mut rng = util::rng_from(util::seed_mix(self.cfg.salt, ((i as i64) << 32 ^ j) as u64));
        let mut pairs = Vec::with_capacity(self.cfg.delta_pairs);
        let mut dir = [0.0; MAXD];
        let mut guard = 0;
        while pairs.len() < self.cfg.delta_pairs && guard < 50 * self.cfg.delta_pairs.max(1) {
            guard += 1;
            let t0 = j as f64 + rng.gen::<f64>();
            let level = rng.gen_range(lo..=hi);
            util::unit_vector(&mut rng, &mut dir[..n]);
            let Some(r) = ray_point(orclf, t0, &dir[..n], level, cap) else {
                continue;
            };
            let x0: Vec<f64> = dir[..n].iter().map(|v| v * r).collect();
            let a: f64 = rng.gen();
            let mut e = [0.0; MAXD];
            util::unit_vector(&mut rng, &mut e[..n]);
            let b: f64 = rng.gen::<f64>().powf(1.0 / n as f64);
            pairs.push((t0, x0, a, e, b));
        }
        if pairs.is_empty() {
            return Err(Error::Schedule {
                band: i,
                msg: format!("no sampled state reaches the band at j={j}"),
            });
        }
        let rmin = pairs.iter().map(|p| util::norm(&p.1)).fold(f64::INFINITY, f64::min);
        let mut dt: f64 = 1.0;
        let mut dx = 0.5 * rmin;
        let profiles: Vec<_> = pairs.iter().map(|p| fb.profile(p.0, &p.1)).collect::<Result<_>>()?;
        for _ in 0..48 {
            let mut ok = true;
            for (p, prof) in pairs.iter().zip(&profiles) {
                let (t0, x0, a, e, b) = (p.0, &p.1, p.2, &p.3, p.4);
                let t = t0 + a * dt;
                let x: Vec<f64> = (0..n).map(|k| x0[k] + b * dx * e[k]).collect();
                let lhs = self.modulus_lhs(t0, x0, t, &x, prof)?;
                if !(lhs <= 0.25 * orclf.rho(orclf.value(t0, x0))) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok((dt, dx));
            }
            dt *= 0.5;
            dx *= 0.5;
        }
        Err(Error::BandGridExplosion {
            i,
            j,
            which: "modulus radius".into(),
            needed: f64::INFINITY,
            cap: self.cfg.n_cap,
        })
    }

    fn compute_entry(&self, i: i32, j: i64) -> Result<BandEntry> {
        let sc = &self.sched;
        let (lo, hi) = (sc.r(i - 3), sc.r(i + 2));
        let (t0, t1) = (j as f64, j as f64 + 2.0);
        let cap = self.x_cap(hi, t0, t1);
        let pts = self.level_points(t0, t1, lo, hi, cap, self.cfg.grid_times);
        let (max_vdot, max_f) = self.grid_maxima(&pts)?;
        let rho_i = sc.rho_i(i);
        let need_vdot = 4.0 * max_vdot / rho_i;
        let n43 = pow2_at_least(need_vdot, 2);
        let mut need_step = None;
        let mut delta_t = None;
        let mut delta_x = None;
        let skip_delta = self.cfg.n_policy == NPolicy::Clamp && n43 >= self.cfg.n_max;
        if !skip_delta {
            let (dt, dx) = self.find_delta(i, j)?;
            delta_t = Some(dt);
            delta_x = Some(dx);
            need_step = Some((2.0 / dt).max(2.0 * max_f / dx));
        }
        let n_cert = pow2_at_least(need_vdot.max(need_step.unwrap_or(0.0)), 2);
        let n = match self.cfg.n_policy {
            NPolicy::Certify => {
                if n_cert > self.cfg.n_cap {
                    let (which, needed) = if n43 > self.cfg.n_cap {
                        ("derivative bound", need_vdot)
                    } else {
                        ("displacement bound", need_step.unwrap_or(f64::NAN))
                    };
                    return Err(Error::BandGridExplosion {
                        i,
                        j,
                        which: which.into(),
                        needed,
                        cap: self.cfg.n_cap,
                    });
                }
                n_cert
            }
            NPolicy::Clamp => n_cert.min(self.cfg.n_max),
        };
        Ok(BandEntry {
            i,
            j,
            max_vdot,
            max_f,
            mu_i: sc.mu(i),
            rho_i,
            need_vdot,
            need_step,
            delta_t,
            delta_x,
            n_cert,
            n,
        })
    }

    pub fn band_grid(&self, i: i32, j: i64) -> Result<Arc<BandEntry>> {
        if let Some(e) = self.bank.read().get(&(i, j)) {
            return Ok(e.clone());
        }
        let e = Arc::new(self.compute_entry(i, j)?);
        Ok(self.bank.write().entry((i, j)).or_insert(e).clone())
    }

    /// Evaluates k_{r,a}(t, x) into `out`.
    pub fn k_ra(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<KraInfo> {
        let m = self.fb.model.m;
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("scheduled feedback needs t >= 0, got {t}")));
        }
        let v = self.fb.orclf.value(t, x);
        let (i, clamped) = self.sched.band_of(v);
        if clamped {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        let j = t.floor();
        let entry = self.band_grid(i, j as i64)?;
        let nf = entry.n as f64;
        let pos = nf * (t - j);
        let l = pos.floor();
        let s = pos - l;
        let (r0, r1) = (self.sched.r(i - 1), self.sched.r(i));
        let w = self.sched.a(i - 1).min(self.sched.a(i));
        let blend = if v < 0.5 * (r0 + r1) {
            unitloop::h(2.0 * (v - r0) / w)
        } else {
            unitloop::h(2.0 * (r1 - v) / w)
        };
        let info = KraInfo {
            band: i,
            n: entry.n,
            clamped,
        };
        if blend == 0.0 || s == 0.0 {
            out[..m].iter_mut().for_each(|u| *u = 0.0);
            return Ok(info);
        }
        let prof = self.fb.profile(j + l / nf, x)?;
        prof.eval(s, out);
        for u in out[..m].iter_mut() {
            *u *= blend;
        }
        Ok(info)
    }

    /// First ramp corner after `t` in the current subinterval.
    pub fn next_break(&self, t: f64, x: &[f64]) -> Result<Option<f64>> {
        let v = self.fb.orclf.value(t, x);
        let (i, _) = self.sched.band_of(v);
        let j = t.floor();
        let entry = self.band_grid(i, j as i64)?;
        let nf = entry.n as f64;
        let pos = nf * (t - j);
        let l = pos.floor();
        let anchor = j + l / nf;
        let after = t + BREAK_GAP / nf;
        Ok(first_after(&self.fb.profile(anchor, x)?.breakpoints(), after, |b| j + (l + b) / nf))
    }

    /// Subgrid size at `(t, x)`, used by the integrator to snap steps.
    pub fn grid_n(&self, t: f64, x: &[f64]) -> Result<u64> {
        let v = self.fb.orclf.value(t, x);
        let (i, _) = self.sched.band_of(v);
        Ok(self.band_grid(i, t.max(0.0).floor() as i64)?.n)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("i\tj\tr_i\ta_i\tN_ij\tN_cert\tdelta_t\tdelta_x\tmu_i\n");
        for e in self.entries() {
            let fmt = |o: Option<f64>| o.map_or("-".to_string(), |v| format!("{v:.6e}"));
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6e}\t{:.6e}\t{}\t{}\t{}\t{}\t{:.6e}",
                e.i,
                e.j,
                self.sched.r(e.i),
                self.sched.a(e.i),
                e.n,
                e.n_cert,
                fmt(e.delta_t),
                fmt(e.delta_x),
                e.mu_i
            );
        }
        s
    }
}

/// Relative slack used by the trajectory certificates.
/// First breakpoint below 1 whose time `time(b)` is after `t`.
/// Corners closer than this fraction of a subgrid cell to the current time are skipped.
pub const BREAK_GAP: f64 = 1e-6;

pub fn first_after(breaks: &[f64], t: f64, time: impl Fn(f64) -> f64) -> Option<f64> {
    breaks.iter().copied().filter(|b| *b < 1.0).map(time).find(|tb| *tb > t)
}

pub const CERT_REL_TOL: f64 = 1e-9 + 1e-6;

/// `V <= r_i + 5/2 a_i` on `[t0, floor(t0) + 1)` for the band holding `V(t0)`.
pub fn check_containment(traj: &Trajectory, sched: &LevelSchedule) -> CheckEntry {
    let mut e = CheckEntry::new("containment");
    if traj.is_empty() {
        return e;
    }
    let t0 = traj.t[0];
    let (i, _) = sched.band_of(traj.v[0]);
    let bound = sched.r(i) + 2.5 * sched.a(i);
    let end = t0.floor() + 1.0;
    for k in 0..traj.len() {
        if traj.t[k] >= end {
            break;
        }
        e.record(bound * (1.0 + CERT_REL_TOL) - traj.v[k], traj.t[k], traj.x_at(k), None);
    }
    e
}

/// Step decrease on the grid `j + s/N`, `s = 0..N`, for a run starting at
/// the integer `j` with `V(j) <= r_i - 2a_i`.
pub fn check_step_decrease(traj: &Trajectory, sched: &LevelSchedule, i: i32, n: u64) -> CheckEntry {
    let mut e = CheckEntry::new("step_decrease");
    if traj.is_empty() {
        return e;
    }
    let j = traj.t[0];
    let v0 = traj.v[0];
    if v0 > sched.r(i) - 2.0 * sched.a(i) {
        e.record(f64::NAN, j, traj.x_at(0), None);
        return e;
    }
    let floor = sched.r(i - 1) + 2.0 * sched.a(i - 1);
    let mu = sched.mu(i);
    let nf = n as f64;
    let mut k = 0;
    for s in 0..=n {
        let ts = j + s as f64 / nf;
        while k < traj.len() && traj.t[k] < ts - 1e-12 {
            k += 1;
        }
        if k >= traj.len() {
            break;
        }
        if (traj.t[k] - ts).abs() > 1e-9 {
            continue;
        }
        let bound = floor.max(v0 - s as f64 / nf * mu);
        e.record(bound * (1.0 + CERT_REL_TOL) - traj.v[k], traj.t[k], traj.x_at(k), None);
    }
    e
}

/// Largest `|V(t) - V(t_l)|` over each subinterval `[j + l/N, j + (l+1)/N]`.
pub fn subgrid_excursion(traj: &Trajectory, n: u64) -> f64 {
    let nf = n as f64;
    let mut worst = 0.0_f64;
    let mut anchor: Option<f64> = None;
    let mut cell = i64::MIN;
    for k in 0..traj.len() {
        let c = (traj.t[k] * nf + 1e-9).floor() as i64;
        if c != cell {
            if let Some(v) = anchor {
                worst = worst.max((traj.v[k] - v).abs());
            }
            cell = c;
            anchor = Some(traj.v[k]);
        } else if let Some(v) = anchor {
            worst = worst.max((traj.v[k] - v).abs());
        }
    }
    worst
}
