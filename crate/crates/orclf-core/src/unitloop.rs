//! Segment feedback k(s,t,x) on s in [0,1] built from a lazy covering of
//! time x (state minus origin) by bump-weighted cells.
//!
//! Space is cut into sup-norm shells `2^k <= |x|_inf < 2^(k+1)`, each shell
//! into cubes of side `2^k/m0`, time into slices of length `tau0`. A base
//! cell is refined uniformly until every sub-cell has a control with
//! `Psi <= 0` on its support box.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minimax::{self, MinimaxConfig, PointCtx};
use crate::model::{DisturbancePath, Orclf, SystemModel};
use crate::util::{self, MAXD};

/// Smooth step: 0 for s <= 0, 1 for s >= 1.
#[inline]
pub fn h(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

/// One-dimensional bump on `z = |offset|/halfwidth`: 1 for z <= 1/2, 0 for z >= 1.
#[inline]
pub fn bump(z: f64) -> f64 {
    h(2.0 * (1.0 - z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoveringConfig {
    /// Base cubes per unit of `2^k`; a power of two, at least 1.5 sqrt(n).
    pub m0: u32,
    pub tau0: f64,
    pub max_level: u32,
    /// Seeded random points per support box on top of corners and faces.
    pub cert_random: usize,
    pub salt: u64,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self {
            m0: 4,
            tau0: 0.125,
            max_level: 7,
            cert_random: 16,
            salt: 0x636f_7665,
        }
    }
}

impl CoveringConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !self.m0.is_power_of_two() || (self.m0 as f64) < 1.5 * (n as f64).sqrt() {
            return Err(Error::Config(format!(
                "covering.m0 = {} must be a power of two >= 1.5 sqrt(n)",
                self.m0
            )));
        }
        if !(self.tau0 > 0.0 && self.tau0 <= 1.0) {
            return Err(Error::Config("covering.tau0 must lie in (0, 1]".into()));
        }
        if n as u32 * self.max_level > 24 {
            return Err(Error::Config("covering.max_level too large for this dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub k: i32,
    pub q: i64,
    pub c: [i32; MAXD],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub level: u32,
    /// `m` values per sub-cell, sub-cells in row-major order.
    pub controls: Vec<f64>,
    pub eps_b: f64,
}

/// Time interval times a Euclidean-norm annulus, optionally cut to
/// `v_lo <= V(t,x) <= v_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingRegion {
    pub t_min: f64,
    pub t_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    #[serde(default)]
    pub v_lo: f64,
    #[serde(default = "inf")]
    pub v_hi: f64,
}

fn inf() -> f64 {
    f64::INFINITY
}

impl WorkingRegion {
    pub fn new(t_min: f64, t_max: f64, r_min: f64, r_max: f64) -> Self {
        Self {
            t_min,
            t_max,
            r_min,
            r_max,
            v_lo: 0.0,
            v_hi: f64::INFINITY,
        }
    }

    pub fn with_levels(mut self, v_lo: f64, v_hi: f64) -> Self {
        self.v_lo = v_lo;
        self.v_hi = v_hi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min >= 0.0 && self.t_max >= self.t_min && self.r_min > 0.0 && self.r_max >= self.r_min) {
            return Err(Error::Config("working region needs 0 <= t_min <= t_max and 0 < r_min <= r_max".into()));
        }
        if !(self.v_lo >= 0.0 && self.v_hi >= self.v_lo) {
            return Err(Error::Config("working region needs 0 <= v_lo <= v_hi".into()));
        }
        Ok(())
    }

    pub fn contains(&self, orclf: &Orclf, t: f64, x: &[f64]) -> bool {
        let r = util::norm(x);
        let v = orclf.value(t, x);
        t >= self.t_min && t <= self.t_max && r >= self.r_min && r <= self.r_max && v >= self.v_lo && v <= self.v_hi
    }

    /// Rejection sample, uniform in t and radius, uniform direction.
    pub fn sample<R: Rng>(&self, rng: &mut R, orclf: &Orclf, n: usize) -> Result<(f64, Vec<f64>)> {
        for _ in 0..100_000 {
            let t = if self.t_max > self.t_min {
                rng.gen_range(self.t_min..self.t_max)
            } else {
                self.t_min
            };
            let r = if self.r_max > self.r_min {
                rng.gen_range(self.r_min..self.r_max)
            } else {
                self.r_min
            };
            let mut x = vec![0.0; n];
            util::unit_vector(rng, &mut x);
            x.iter_mut().for_each(|v| *v *= r);
            if self.contains(orclf, t, &x) {
                return Ok((t, x));
            }
        }
        Err(Error::Config("working region has no sampled point inside its level bounds".into()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    lo: f64,
    hi: f64,
    g: f64,
    amp: f64,
    u: [f64; MAXD],
}

thread_local! {
    static LAST_PROFILE: RefCell<Option<((u64, u64, [u64; MAXD]), SegmentProfile)>> = const { RefCell::new(None) };
}

/// Everything k(., t, x) needs at a fixed (t, x).
#[derive(Debug, Clone)]
pub struct SegmentProfile {
    m: usize,
    entries: Vec<Entry>,
    thetas: Vec<f64>,
    pub eps_hat: f64,
    pub guard: f64,
    pub omega: f64,
}

impl SegmentProfile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalized weights of the active elements in global order.
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Segment ends `T_j` in s, starting with the lower guard edge.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.entries.len() + 1);
        if let Some(e) = self.entries.first() {
            out.push(e.lo);
        }
        out.extend(self.entries.iter().map(|e| e.hi));
        out
    }

    /// `(start, end, control)` of each full plateau.
    pub fn plateaus(&self) -> Vec<(f64, f64, Vec<f64>)> {
        self.entries
            .iter()
            .filter(|e| e.amp >= 1.0)
            .map(|e| (e.lo + 0.4 * e.g, e.hi - 0.4 * e.g, e.u[..self.m].to_vec()))
            .collect()
    }

    /// Element ramp widths `g_j` in s.
    pub fn widths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.g).collect()
    }

    /// `k(s)` for s in [0, 1], unchecked.
    #[inline]
    pub fn eval(&self, s: f64, out: &mut [f64]) {
        out[..self.m].iter_mut().for_each(|v| *v = 0.0);
        let Some(first) = self.entries.first() else {
            return;
        };
        if s <= first.lo || s >= self.entries[self.entries.len() - 1].hi {
            return;
        }
        let idx = self.entries.partition_point(|e| e.hi < s);
        let e = &self.entries[idx.min(self.entries.len() - 1)];
        let w = 0.2 * e.g;
        let half = 0.5 * (e.hi - e.lo);
        let ramp = if s <= e.lo + half {
            h((s - e.lo - w) / w)
        } else {
            h((e.hi - w - s) / w)
        };
        if ramp == 0.0 {
            return;
        }
        let c = e.amp * ramp;
        for i in 0..self.m {
            out[i] = c * e.u[i];
        }
    }

    /// Breakpoints separating the smooth pieces of `k`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![0.0, 1.0];
        for e in &self.entries {
            let w = 0.2 * e.g;
            b.extend_from_slice(&[e.lo, e.lo + w, e.lo + 2.0 * w, e.hi - 2.0 * w, e.hi - w, e.hi]);
        }
        b.retain(|v| (0.0..=1.0).contains(v));
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Largest amplitude `max_s |k(s)|`, attained on plateaus or ramp tops.
    pub fn max_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.amp * util::norm(&e.u[..self.m]))
            .fold(0.0, f64::max)
    }
}

/// Composite Simpson of a vector integrand over `[breaks[0], breaks[last]]`,
/// at least `panels` panels in total and at least two per piece.
pub fn quad_vec(breaks: &[f64], panels: usize, out: &mut [f64], mut f: impl FnMut(f64, &mut [f64])) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if breaks.len() < 2 {
        return;
    }
    let dim = out.len();
    let span = breaks[breaks.len() - 1] - breaks[0];
    let mut buf = [0.0; MAXD];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mut p = ((panels as f64) * (b - a) / span).ceil() as usize;
        p = p.max(2);
        if p % 2 == 1 {
            p += 1;
        }
        let hstep = (b - a) / p as f64;
        for k in 0..=p {
            let s = if k == p { b } else { a + k as f64 * hstep };
            let wgt = if k == 0 || k == p {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            f(s, &mut buf[..dim]);
            for i in 0..dim {
                out[i] += wgt * hstep / 3.0 * buf[i];
            }
        }
    }
}

pub struct SegmentFeedback {
    pub model: SystemModel,
    pub orclf: Orclf,
    pub minimax: MinimaxConfig,
    pub cfg: CoveringConfig,
    pub omega: f64,
    cells: RwLock<HashMap<CellKey, Arc<Cell>>>,
    id: u64,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

impl std::fmt::Debug for SegmentFeedback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentFeedback")
            .field("model", &self.model.name)
            .field("cfg", &self.cfg)
            .field("cells", &self.cells.read().len())
            .finish()
    }
}

fn shell_of(v: f64) -> i32 {
    let mut k = v.log2().floor() as i32;
    while 2f64.powi(k) > v {
        k -= 1;
    }
    while 2f64.powi(k + 1) <= v {
        k += 1;
    }
    k
}

impl SegmentFeedback {
    pub fn new(model: SystemModel, orclf: Orclf, minimax: MinimaxConfig, cfg: CoveringConfig) -> Result<Self> {
        cfg.validate(model.n)?;
        let omega = 1.0 / (2.0 * 4f64.powi(model.n as i32));
        Ok(Self {
            model,
            orclf,
            minimax,
            cfg,
            omega,
            cells: RwLock::new(HashMap::default()),
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    fn side(&self, k: i32) -> f64 {
        2f64.powi(k) / self.cfg.m0 as f64
    }

    fn in_shell(&self, c: &[i32]) -> bool {
        let m = self.cfg.m0 as i32;
        c.iter().all(|&v| v >= -2 * m && v < 2 * m) && c.iter().any(|&v| v < -m || v >= m)
    }

    fn slice_center(&self, q: i64) -> f64 {
        (q as f64 + 0.5) * self.cfg.tau0
    }

    pub fn cell_count(&self) -> usize {
        self.cells.read().len()
    }

    /// Built cells in key order.
    pub fn export_cells(&self) -> Vec<(CellKey, Cell)> {
        let map = self.cells.read();
        let mut v: Vec<_> = map.iter().map(|(k, c)| (*k, (**c).clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn import_cells(&self, cells: Vec<(CellKey, Cell)>) -> Result<()> {
        let per = self.model.m;
        let mut map = self.cells.write();
        for (k, c) in cells {
            let subs = 1usize << (c.level as usize * self.model.n);
            if c.controls.len() != subs * per || !self.in_shell(&k.c[..self.model.n]) {
                return Err(Error::Config(format!("malformed covering cell {k:?}")));
            }
            map.insert(k, Arc::new(c));
        }
        Ok(())
    }

    pub fn cell(&self, key: &CellKey) -> Result<Arc<Cell>> {
        if let Some(c) = self.cells.read().get(key) {
            return Ok(c.clone());
        }
        let built = Arc::new(self.build_cell(key)?);
        let mut map = self.cells.write();
        Ok(map.entry(*key).or_insert(built).clone())
    }

    fn box_points(&self, key: &CellKey, sub: usize, tc: f64, xc: &[f64], ht: f64, hx: f64) -> Vec<(f64, [f64; MAXD])> {
        let n = xc.len();
        let dims = n + 1;
        let mut pts = Vec::new();
        let mut push = |off: &[f64]| {
            let mut y = [0.0; MAXD];
            for i in 0..n {
                y[i] = xc[i] + off[i + 1] * hx;
            }
            pts.push((tc + off[0] * ht, y));
        };
        let mut off = [0.0; MAXD + 1];
        push(&off[..dims]);
        for mask in 0..1usize << dims {
            for (i, o) in off[..dims].iter_mut().enumerate() {
                *o = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
            }
            push(&off[..dims]);
        }
        for i in 0..dims {
            for sg in [1.0, -1.0] {
                off[..dims].iter_mut().for_each(|o| *o = 0.0);
                off[i] = sg;
                push(&off[..dims]);
            }
        }
        let seed = util::seed_mix(
            util::seed_from_point(self.cfg.salt, key.q as f64, &key.c[..n].iter().map(|v| *v as f64).collect::<Vec<_>>()),
            (key.k as i64 as u64) << 32 ^ sub as u64,
        );
        let mut rng = util::rng_from(seed);
        for _ in 0..self.cfg.cert_random {
            for o in off[..dims].iter_mut() {
                *o = rng.gen_range(-1.0..=1.0);
            }
            push(&off[..dims]);
        }
        pts
    }

    fn certify_sub(&self, key: &CellKey, sub: usize, tc: f64, xc: &[f64], hx: f64) -> Result<Option<[f64; MAXD]>> {
        let model = &self.model;
        let orclf = &self.orclf;
        let m = model.m;
        let te = tc.max(0.0);
        let ctx = PointCtx::new(orclf, te, xc)?;
        let bound = orclf.b(te, xc);
        let (u_star, margin) = minimax::minimize_psi(model, orclf, &self.minimax, &ctx, bound);
        let required = -self.minimax.kappa_slack * orclf.rho(ctx.v);
        if !(margin <= required) || !(margin < 0.0) {
            return Err(Error::CertificateNotVerifiable {
                t: tc,
                x: xc.to_vec(),
                best_margin: margin,
                required,
            });
        }
        let pts = self.box_points(key, sub, tc, xc, 0.75 * self.cfg.tau0, 0.75 * hx);
        let mut ctxs = Vec::with_capacity(pts.len());
        for (tau, y) in &pts {
            ctxs.push(PointCtx::new(orclf, tau.max(0.0), &y[..xc.len()])?);
        }
        let worst = |u: &[f64]| {
            let mut w = f64::NEG_INFINITY;
            for c in &ctxs {
                let p = c.psi(model, orclf, u);
                if !(p <= 0.0) {
                    return if p.is_nan() { f64::INFINITY } else { p };
                }
                w = w.max(p);
            }
            w
        };
        if worst(&u_star[..m]) <= 0.0 {
            return Ok(Some(u_star));
        }
        let mut best: Option<(f64, [f64; MAXD])> = None;
        for u in minimax::control_grid(model, &self.minimax, bound, self.minimax.u_radii) {
            let w = worst(&u);
            if w <= 0.0 && best.as_ref().map_or(true, |b| w < b.0) {
                let mut a = [0.0; MAXD];
                a[..m].copy_from_slice(&u);
                best = Some((w, a));
            }
        }
        Ok(best.map(|b| b.1))
    }

    fn eps_for_cell(&self, key: &CellKey, lo: &[f64], s: f64) -> Result<f64> {
        let n = lo.len();
        let tc = self.slice_center(key.q);
        let ht = 0.75 * self.cfg.tau0;
        let margin = 0.25 * s;
        let dims = n + 1;
        let mut best = f64::INFINITY;
        let mut y = [0.0; MAXD];
        for mask in 0..=(1usize << dims) {
            let t = if mask == 1 << dims {
                for i in 0..n {
                    y[i] = lo[i] + 0.5 * s;
                }
                tc
            } else {
                for i in 0..n {
                    y[i] = if mask >> (i + 1) & 1 == 1 { lo[i] + s + margin } else { lo[i] - margin };
                }
                if mask & 1 == 1 {
                    tc + ht
                } else {
                    tc - ht
                }
            };
            let e = minimax::epsilon_fn(&self.model, &self.orclf, &self.minimax, t, &y[..n])?;
            best = best.min(e);
        }
        if !(best > 0.0) {
            return Err(Error::NumericDomain {
                t: tc,
                x: lo.to_vec(),
                what: "epsilon vanishes on a covering cell".into(),
            });
        }
        Ok(best)
    }

    fn build_cell(&self, key: &CellKey) -> Result<Cell> {
        let n = self.model.n;
        let m = self.model.m;
        if !self.in_shell(&key.c[..n]) {
            return Err(Error::Domain(format!("cell {key:?} lies outside its shell")));
        }
        let s = self.side(key.k);
        let lo: Vec<f64> = key.c[..n].iter().map(|&c| c as f64 * s).collect();
        let tc = self.slice_center(key.q);
        let eps_b = self.eps_for_cell(key, &lo, s)?;
        let mut witness = lo.clone();
        for level in 0..=self.cfg.max_level {
            let per = 1usize << level;
            let hx = s / per as f64;
            let total = per.pow(n as u32);
            let mut controls = Vec::with_capacity(total * m);
            let mut ok = true;
            let mut xc = [0.0; MAXD];
            for sub in 0..total {
                let mut r = sub;
                for i in (0..n).rev() {
                    let a = r % per;
                    r /= per;
                    xc[i] = lo[i] + (a as f64 + 0.5) * hx;
                }
                match self.certify_sub(key, sub, tc, &xc[..n], hx)? {
                    Some(u) => controls.extend_from_slice(&u[..m]),
                    None => {
                        ok = false;
                        witness = xc[..n].to_vec();
                        break;
                    }
                }
            }
            if ok {
                return Ok(Cell { level, controls, eps_b });
            }
        }
        Err(Error::CoverageGap {
            t: tc,
            x: witness,
            level: self.cfg.max_level,
        })
    }

    /// Builds every cell meeting the region; returns the number of cells.
    pub fn build_covering(&self, region: &WorkingRegion) -> Result<usize> {
        region.validate()?;
        let n = self.model.n;
        let m0 = self.cfg.m0 as i32;
        let k_lo = shell_of(region.r_min / (n as f64).sqrt());
        let k_hi = shell_of(region.r_max);
        let q_lo = (region.t_min / self.cfg.tau0).floor() as i64 - 1;
        let q_hi = (region.t_max / self.cfg.tau0).floor() as i64 + 1;
        let mut keys = Vec::new();
        for k in k_lo..=k_hi {
            let s = self.side(k);
            let per = (4 * m0) as usize;
            for idx in 0..per.pow(n as u32) {
                let mut c = [0i32; MAXD];
                let mut r = idx;
                for ci in c[..n].iter_mut().rev() {
                    *ci = (r % per) as i32 - 2 * m0;
                    r /= per;
                }
                if !self.in_shell(&c[..n]) {
                    continue;
                }
                let (mut dmin, mut dmax) = (0.0, 0.0);
                for &ci in &c[..n] {
                    let a = ci as f64 * s;
                    let b = a + s;
                    let near = if a > 0.0 { a } else if b < 0.0 { -b } else { 0.0 };
                    let far = a.abs().max(b.abs());
                    dmin += near * near;
                    dmax += far * far;
                }
                if dmin.sqrt() > region.r_max || dmax.sqrt() < region.r_min {
                    continue;
                }
                for q in q_lo..=q_hi {
                    keys.push(CellKey { k, q, c });
                }
            }
        }
        keys.par_iter().try_for_each(|k| self.cell(k).map(|_| ()))?;
        Ok(keys.len())
    }

    /// Weights, controls and thresholds of k(., t, x).
    /// Profile at `(t, x)`; the last one built on this thread is reused.
    pub fn profile(&self, t: f64, x: &[f64]) -> Result<SegmentProfile> {
        let mut key = (self.id, t.to_bits(), [0u64; MAXD]);
        for (k, v) in key.2.iter_mut().zip(x) {
            *k = v.to_bits();
        }
        if let Some(p) = LAST_PROFILE.with(|c| c.borrow().as_ref().filter(|(k, _)| *k == key).map(|(_, p)| p.clone())) {
            return Ok(p);
        }
        let p = self.build_profile(t, x)?;
        LAST_PROFILE.with(|c| *c.borrow_mut() = Some((key, p.clone())));
        Ok(p)
    }

    fn build_profile(&self, t: f64, x: &[f64]) -> Result<SegmentProfile> {
        let n = self.model.n;
        let m = self.model.m;
        let vinf = util::norm_inf(x);
        if !(vinf > 0.0) || !vinf.is_finite() || !t.is_finite() {
            return Err(Error::Domain(format!("segment feedback needs finite t and x != 0, got t={t}, x={x:?}")));
        }
        let tau0 = self.cfg.tau0;
        let ht = 0.75 * tau0;
        let q0 = (t / tau0).floor() as i64;
        let k0 = shell_of(vinf);
        type Key = (i32, i64, [i32; MAXD], [u32; MAXD]);
        let mut found: Vec<(Key, f64, [f64; MAXD], f64)> = Vec::with_capacity(16);
        for k in k0 - 1..=k0 + 1 {
            let s = self.side(k);
            let w = 0.25 * s;
            let mut lo_i = [0i32; MAXD];
            let mut cnt = [0usize; MAXD];
            let mut total = 1usize;
            for i in 0..n {
                let a = ((x[i] - w) / s).floor() as i32;
                let b = ((x[i] + w) / s).floor() as i32;
                lo_i[i] = a;
                cnt[i] = (b - a + 1) as usize;
                total *= cnt[i];
            }
            for idx in 0..total {
                let mut c = [0i32; MAXD];
                let mut r = idx;
                for i in 0..n {
                    c[i] = lo_i[i] + (r % cnt[i]) as i32;
                    r /= cnt[i];
                }
                if !self.in_shell(&c[..n]) {
                    continue;
                }
                for q in q0 - 1..=q0 + 1 {
                    let zt = (t - self.slice_center(q)).abs() / ht;
                    if zt >= 1.0 {
                        continue;
                    }
                    let bt = bump(zt);
                    let key = CellKey { k, q, c };
                    let cell = self.cell(&key)?;
                    let per = 1usize << cell.level;
                    let hx = s / per as f64;
                    let hw = 0.75 * hx;
                    let mut slo = [0usize; MAXD];
                    let mut scnt = [0usize; MAXD];
                    let mut stot = 1usize;
                    let mut empty = false;
                    for i in 0..n {
                        let p = (x[i] - c[i] as f64 * s) / hx;
                        let a = (p - 1.25).ceil().max(0.0);
                        let b = (p + 0.25).floor().min(per as f64 - 1.0);
                        if b < a {
                            empty = true;
                            break;
                        }
                        slo[i] = a as usize;
                        scnt[i] = (b - a) as usize + 1;
                        stot *= scnt[i];
                    }
                    if empty {
                        continue;
                    }
                    for sidx in 0..stot {
                        let mut r = sidx;
                        let mut sub = [0u32; MAXD];
                        let mut raw = bt;
                        let mut flat = 0usize;
                        for i in 0..n {
                            let a = slo[i] + r % scnt[i];
                            r /= scnt[i];
                            sub[i] = a as u32;
                            let ctr = c[i] as f64 * s + (a as f64 + 0.5) * hx;
                            let z = (x[i] - ctr).abs() / hw;
                            raw *= if z >= 1.0 { 0.0 } else { bump(z) };
                        }
                        if raw <= 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            flat = flat * per + sub[i] as usize;
                        }
                        let mut u = [0.0; MAXD];
                        u[..m].copy_from_slice(&cell.controls[flat * m..flat * m + m]);
                        found.push(((k, q, c, sub), raw, u, cell.eps_b));
                    }
                }
            }
        }
        let sum: f64 = found.iter().map(|f| f.1).sum();
        if !(sum > 0.0) {
            return Err(Error::CoverageGap {
                t,
                x: x.to_vec(),
                level: self.cfg.max_level,
            });
        }
        found.sort_by(|a, b| a.0.cmp(&b.0));
        let thetas: Vec<f64> = found.iter().map(|f| f.1 / sum).collect();
        let eps_hat: f64 = found.iter().zip(&thetas).map(|(f, th)| th * f.3).sum();
        let guard = eps_hat / 8.0;
        let eo = 0.75 * eps_hat * self.omega;
        let span = 1.0 - 2.0 * guard;
        let mut entries = Vec::with_capacity(found.len());
        let mut cum = 0.0;
        let last = found.len() - 1;
        for (idx, (f, &th)) in found.iter().zip(&thetas).enumerate() {
            let lo = guard + span * cum;
            cum += th;
            let hi = if idx == last { 1.0 - guard } else { guard + span * cum };
            let g0 = 0.5 * th + 0.5 * (eo - th) * h((th - 0.5 * eo) / (0.5 * eo));
            let amp = (g0 / (0.5 * eo)).powi(2).min(1.0);
            entries.push(Entry {
                lo,
                hi,
                g: span * g0,
                amp,
                u: f.2,
            });
        }
        Ok(SegmentProfile {
            m,
            entries,
            thetas,
            eps_hat,
            guard,
            omega: self.omega,
        })
    }

    pub fn partition_sum(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.profile(t, x)?.thetas.iter().sum())
    }

    pub fn k_segment(&self, s: f64, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("segment parameter s={s} outside [0,1]")));
        }
        self.profile(t, x)?.eval(s, out);
        Ok(())
    }

    /// `V_t + V_x . integral_0^1 f(t, d(s), x, k(s,t,x)) ds`.
    pub fn average_decrease(&self, t: f64, x: &[f64], d: &DisturbancePath) -> Result<f64> {
        let n = self.model.n;
        let m = self.model.m;
        let prof = self.profile(t, x)?;
        let ctx = PointCtx::new(&self.orclf, t, x)?;
        let mut br = prof.breakpoints();
        br.extend(d.breakpoints.iter().copied().filter(|b| *b > 0.0 && *b < 1.0));
        br.sort_by(f64::total_cmp);
        br.dedup();
        let mut acc = [0.0; MAXD];
        let mut u = [0.0; MAXD];
        let model = &self.model;
        quad_vec(&br, 256, &mut acc[..n], |s, out| {
            prof.eval(s, &mut u[..m]);
            model.eval_f(t, d.eval(s), x, &u[..m], out);
        });
        let v = ctx.vt + util::dot(&ctx.gx[..n], &acc[..n]);
        if !v.is_finite() {
            return Err(Error::NumericDomain {
                t,
                x: x.to_vec(),
                what: "average decrease".into(),
            });
        }
        Ok(v)
    }

    pub fn boundary_smoothness_check(&self, t: f64, x: &[f64], step: f64) -> Result<SmoothnessReport> {
        let n = self.model.n;
        let m = self.model.m;
        let base = self.profile(t, x)?;
        let mut k0 = [0.0; MAXD];
        let mut k1 = [0.0; MAXD];
        let diff = |a: &[f64], b: &[f64]| util::dist(a, b);
        let mut partials = |s: f64, sdir: f64| -> Result<f64> {
            let mut worst = 0.0_f64;
            // s direction, one-sided at the ends
            base.eval(s, &mut k0[..m]);
            if sdir == 0.0 {
                base.eval((s + step).min(1.0), &mut k1[..m]);
                let mut k2 = [0.0; MAXD];
                base.eval((s - step).max(0.0), &mut k2[..m]);
                worst = worst.max(diff(&k1[..m], &k2[..m]) / (2.0 * step));
            } else {
                base.eval(s + sdir * step, &mut k1[..m]);
                worst = worst.max(diff(&k1[..m], &k0[..m]) / step);
            }
            let (tp, tm) = if t >= step { (t + step, t - step) } else { (t + step, t) };
            let p = self.profile(tp, x)?;
            let q = self.profile(tm, x)?;
            p.eval(s, &mut k1[..m]);
            let mut k2 = [0.0; MAXD];
            q.eval(s, &mut k2[..m]);
            worst = worst.max(diff(&k1[..m], &k2[..m]) / (tp - tm));
            let mut y = [0.0; MAXD];
            for i in 0..n {
                y[..n].copy_from_slice(x);
                y[i] = x[i] + step;
                self.profile(t, &y[..n])?.eval(s, &mut k1[..m]);
                y[i] = x[i] - step;
                self.profile(t, &y[..n])?.eval(s, &mut k2[..m]);
                worst = worst.max(diff(&k1[..m], &k2[..m]) / (2.0 * step));
            }
            Ok(worst)
        };
        let at_zero = partials(0.0, 1.0)?;
        let at_one = partials(1.0, -1.0)?;
        let th = base.thresholds();
        let mut interior = 0.0_f64;
        for &s in th.iter().skip(1).take(th.len().saturating_sub(2)) {
            interior = interior.max(partials(s, 0.0)?);
        }
        Ok(SmoothnessReport {
            step,
            at_zero,
            at_one,
            interior,
        })
    }
}

/// Largest finite-difference partial of k in s, t, x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub step: f64,
    pub at_zero: f64,
    pub at_one: f64,
    pub interior: f64,
}
