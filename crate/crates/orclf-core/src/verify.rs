//! Empirical stability checks over trajectory batches: forward
//! completeness, output stability and attractivity (uniform or not in the
//! initial time), and the two-interval growth and decrease hypotheses.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::interleave::PairTables;
use crate::model::{CheckEntry, Orclf};
use crate::scheduler::CERT_REL_TOL;
use crate::sim::{DisturbanceStrategy, Trajectory};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "RFC")]
    Rfc,
    #[serde(rename = "RGAOS")]
    Rgaos,
    #[serde(rename = "URGAOS")]
    Urgaos,
    #[serde(rename = "TwoInterval")]
    TwoInterval,
    #[serde(rename = "Uniform")]
    Uniform,
}

impl Property {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rfc => "RFC",
            Self::Rgaos => "RGAOS",
            Self::Urgaos => "URGAOS",
            Self::TwoInterval => "TwoInterval",
            Self::Uniform => "Uniform",
        }
    }
}

/// Enough to rerun the failing trajectory bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayWitness {
    pub index: usize,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub strategy: DisturbanceStrategy,
    pub horizon: f64,
    pub t: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    pub cell: String,
    pub checked: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub witness: Option<ReplayWitness>,
}

impl Finding {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub cell: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub property: Property,
    /// The disturbance classes the batch actually exercised.
    pub tested_class: Vec<String>,
    pub findings: Vec<Finding>,
    pub estimates: Vec<Estimate>,
}

impl StabilityReport {
    pub fn new(property: Property, batch: &[Trajectory]) -> Self {
        let mut tested: Vec<String> = batch
            .iter()
            .map(|t| match &t.meta.strategy {
                DisturbanceStrategy::Constant { .. } => "constant".to_string(),
                DisturbanceStrategy::PiecewiseRandom { .. } => "piecewise_random".to_string(),
                DisturbanceStrategy::VertexAdversarial => "vertex_adversarial".to_string(),
            })
            .collect();
        tested.sort();
        tested.dedup();
        Self {
            property,
            tested_class: tested,
            findings: Vec::new(),
            estimates: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.findings.iter().all(Finding::passed)
    }

    pub fn violations(&self) -> usize {
        self.findings.iter().map(|f| f.violations).sum()
    }

    pub fn estimate(&self, name: &str, cell: &str) -> Option<f64> {
        self.estimates
            .iter()
            .find(|e| e.name == name && e.cell == cell)
            .map(|e| e.value)
    }

    fn estimate_push(&mut self, name: &str, cell: &str, value: f64) {
        self.estimates.push(Estimate {
            name: name.into(),
            cell: cell.into(),
            value,
        });
    }

    /// One line per finding and per estimate.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let cls = self.tested_class.join("+");
        for f in &self.findings {
            let status = if f.passed() { "pass" } else { "FAIL" };
            let _ = write!(
                s,
                "{}\t{}\t{}\t{status}\tchecked={}\tviolations={}\tworst_margin={:.6e}\tclass={cls}",
                self.property.as_str(),
                f.check,
                f.cell,
                f.checked,
                f.violations,
                f.worst_margin
            );
            if let Some(w) = &f.witness {
                let _ = write!(
                    s,
                    "\twitness=index:{} t0:{} x0:{:?} strategy:{} t:{} margin:{:.6e}",
                    w.index,
                    w.t0,
                    w.x0,
                    w.strategy.label(),
                    w.t,
                    w.margin
                );
            }
            s.push('\n');
        }
        for e in &self.estimates {
            let _ = writeln!(
                s,
                "{}\testimate\t{}\t{}\t{:.17e}",
                self.property.as_str(),
                e.name,
                e.cell,
                e.value
            );
        }
        s
    }
}

/// Accumulates a check over a batch, keeping the worst witness.
struct Acc {
    f: Finding,
}

impl Acc {
    fn new(check: &str, cell: &str) -> Self {
        Self {
            f: Finding {
                check: check.into(),
                cell: cell.into(),
                checked: 0,
                violations: 0,
                worst_margin: f64::INFINITY,
                witness: None,
            },
        }
    }

    fn record(&mut self, index: usize, traj: &Trajectory, t: f64, margin: f64) {
        self.f.checked += 1;
        if !(margin >= 0.0) {
            self.f.violations += 1;
        }
        if margin < self.f.worst_margin || (margin.is_nan() && !self.f.worst_margin.is_nan()) {
            self.f.worst_margin = margin;
            self.f.witness = Some(witness(index, traj, t, margin));
        }
    }

    fn merge(&mut self, index: usize, traj: &Trajectory, e: &CheckEntry) {
        self.f.checked += e.checked;
        self.f.violations += e.violations;
        if e.checked > 0 && (e.worst_margin < self.f.worst_margin || e.worst_margin.is_nan()) {
            self.f.worst_margin = e.worst_margin;
            let t = e.witness.as_ref().map_or(traj.meta.t0, |w| w.t);
            self.f.witness = Some(witness(index, traj, t, e.worst_margin));
        }
    }

    fn done(mut self) -> Finding {
        if self.f.checked == 0 {
            self.f.worst_margin = 0.0;
        }
        if self.f.violations == 0 {
            self.f.witness = None;
        }
        self.f
    }
}

fn witness(index: usize, traj: &Trajectory, t: f64, margin: f64) -> ReplayWitness {
    ReplayWitness {
        index,
        t0: traj.meta.t0,
        x0: traj.meta.x0.clone(),
        strategy: traj.meta.strategy.clone(),
        horizon: traj.meta.horizon,
        t,
        margin,
    }
}

pub fn check_rfc(batch: &[Trajectory]) -> StabilityReport {
    let mut rep = StabilityReport::new(Property::Rfc, batch);
    let mut acc = Acc::new("no_blow_up", "all");
    let mut sup = 0.0_f64;
    for (k, tr) in batch.iter().enumerate() {
        acc.record(k, tr, tr.t_end(), if tr.truncated() { -1.0 } else { 0.0 });
        for i in 0..tr.len() {
            sup = sup.max(util::norm(tr.x_at(i)));
        }
    }
    rep.findings.push(acc.done());
    rep.estimate_push("sup_state_norm", "all", sup);
    rep
}

fn cell_name(eps: f64, t: Option<f64>, r: f64) -> String {
    match t {
        Some(t) => format!("eps={eps},T={t},R={r}"),
        None => format!("eps={eps},R={r}"),
    }
}

fn sup_abs_y(tr: &Trajectory) -> f64 {
    tr.abs_y.iter().fold(0.0_f64, |m, y| if y.is_nan() { f64::NAN } else { m.max(*y) })
}

/// Time after `t0` past which every recorded `|Y| <= eps`; `None` if the
/// last sample still exceeds eps.
pub fn attain_time(tr: &Trajectory, eps: f64) -> Option<f64> {
    if tr.is_empty() {
        return Some(0.0);
    }
    let last_bad = tr.abs_y.iter().rposition(|y| !(*y <= eps));
    match last_bad {
        None => Some(0.0),
        Some(k) if k + 1 < tr.len() => Some(tr.t[k + 1] - tr.meta.t0),
        Some(_) => None,
    }
}

/// Largest sampled `|x0|` such that every run with smaller or equal `|x0|`
/// keeps `|Y| <= eps`.
fn delta_estimate(runs: &[(usize, &Trajectory)], eps: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = runs.iter().map(|(_, t)| (util::norm(&t.meta.x0), sup_abs_y(t))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut delta = 0.0;
    for (r, y) in pts {
        if !(y <= eps) {
            break;
        }
        delta = r;
    }
    delta
}

fn cell_runs(batch: &[Trajectory], t_max: Option<f64>, r: f64) -> Vec<(usize, &Trajectory)> {
    batch
        .iter()
        .enumerate()
        .filter(|(_, t)| util::norm(&t.meta.x0) <= r * (1.0 + 1e-12) && t_max.map_or(true, |tm| t.meta.t0 <= tm))
        .collect()
}

fn attractivity(rep: &mut StabilityReport, runs: &[(usize, &Trajectory)], eps: f64, cell: &str) -> Option<f64> {
    let mut acc = Acc::new("output_attractivity", cell);
    let mut tau = 0.0_f64;
    let mut ok = true;
    for (k, tr) in runs {
        match attain_time(tr, eps) {
            Some(t) => {
                tau = tau.max(t);
                acc.record(*k, tr, tr.meta.t0 + t, 0.0);
            }
            None => {
                ok = false;
                let y = tr.abs_y.last().copied().unwrap_or(f64::NAN);
                acc.record(*k, tr, tr.t_end(), eps - y);
            }
        }
    }
    rep.findings.push(acc.done());
    if ok {
        rep.estimate_push("tau", cell, tau);
        Some(tau)
    } else {
        None
    }
}

fn lagrange(rep: &mut StabilityReport, runs: &[(usize, &Trajectory)], cell: &str) {
    let mut acc = Acc::new("output_lagrange", cell);
    let mut sup = 0.0_f64;
    for (k, tr) in runs {
        let y = sup_abs_y(tr);
        acc.record(*k, tr, tr.t_end(), if y.is_finite() && !tr.truncated() { 0.0 } else { -1.0 });
        if y.is_finite() {
            sup = sup.max(y);
        }
    }
    rep.findings.push(acc.done());
    rep.estimate_push("sup_abs_y", cell, sup);
}

/// Per `(eps, T, R)` cell: bounded output, a sampled delta(eps, T) and the
/// attractivity time tau(eps, T, R).
pub fn check_rgaos(batch: &[Trajectory], eps_list: &[f64], t_list: &[f64], r_list: &[f64]) -> StabilityReport {
    let mut rep = StabilityReport::new(Property::Rgaos, batch);
    for &eps in eps_list {
        for &tm in t_list {
            for &r in r_list {
                let cell = cell_name(eps, Some(tm), r);
                let runs = cell_runs(batch, Some(tm), r);
                lagrange(&mut rep, &runs, &cell);
                rep.estimate_push("delta", &cell, delta_estimate(&runs, eps));
                attractivity(&mut rep, &runs, eps, &cell);
            }
        }
    }
    rep
}

/// As [`check_rgaos`] with estimates split by initial time; a tau or delta
/// that degrades by more than 2x across the initial times is a failure.
pub fn check_urgaos(batch: &[Trajectory], eps_list: &[f64], r_list: &[f64]) -> StabilityReport {
    let mut rep = StabilityReport::new(Property::Urgaos, batch);
    let mut t0s: Vec<f64> = batch.iter().map(|t| t.meta.t0).collect();
    t0s.sort_by(f64::total_cmp);
    t0s.dedup();
    for &eps in eps_list {
        for &r in r_list {
            let cell = cell_name(eps, None, r);
            let runs = cell_runs(batch, None, r);
            lagrange(&mut rep, &runs, &cell);
            let mut taus = Vec::new();
            let mut deltas = Vec::new();
            for &t0 in &t0s {
                let sub: Vec<_> = runs.iter().copied().filter(|(_, t)| t.meta.t0 == t0).collect();
                if sub.is_empty() {
                    continue;
                }
                let c = format!("{cell},t0={t0}");
                let d = delta_estimate(&sub, eps);
                rep.estimate_push("delta", &c, d);
                deltas.push((t0, d, sub[0]));
                if let Some(tau) = attractivity(&mut rep, &sub, eps, &c) {
                    taus.push((t0, tau, sub[0]));
                }
            }
            let mut acc = Acc::new("uniform_in_t0", &cell);
            // a tau below one grid step is treated as one step
            let floor = 1.0 / 64.0;
            if let (Some(lo), Some(hi)) = (
                taus.iter().map(|x| x.1.max(floor)).reduce(f64::min),
                taus.iter().max_by(|a, b| a.1.total_cmp(&b.1)),
            ) {
                let (k, tr) = hi.2;
                acc.record(k, tr, hi.0, 2.0 * lo - hi.1.max(floor));
            }
            let dpos: Vec<_> = deltas.iter().filter(|d| d.1 > 0.0).collect();
            if let (Some(hi), Some(lo)) = (
                dpos.iter().map(|d| d.1).reduce(f64::max),
                dpos.iter().min_by(|a, b| a.1.total_cmp(&b.1)),
            ) {
                let (k, tr) = lo.2;
                acc.record(k, tr, lo.0, lo.1 - 0.5 * hi);
            }
            rep.findings.push(acc.done());
        }
    }
    rep
}

/// `r = min rho~` over `[a1(eps)/9, a1(eps)/9 + 9 a2(R)]`, sampled log-uniformly.
pub fn decrease_floor(orclf: &Orclf, tables: &PairTables, eps: f64, r: f64) -> f64 {
    let lo = orclf.a1.eval(eps) / 9.0;
    let hi = lo + 9.0 * orclf.a2.eval(r);
    let mut m = tables.rho_tilde(lo).min(tables.rho_tilde(hi));
    let k = 4096;
    for i in 1..k {
        let s = lo * (hi / lo).powf(i as f64 / k as f64);
        m = m.min(tables.rho_tilde(s));
    }
    m
}

/// `2 + 18 a2(R) / r`.
pub fn tau_cap(orclf: &Orclf, tables: &PairTables, eps: f64, r: f64) -> f64 {
    2.0 + 18.0 * orclf.a2.eval(r) / decrease_floor(orclf, tables, eps, r)
}

/// `S(eps) = a^{-1}(a1(eps) / 2)` with `a(s) = 9s`.
pub fn s_of_eps(orclf: &Orclf, eps: f64) -> f64 {
    orclf.a1.eval(eps) / 18.0
}

/// Bound `V(t) <= factor V(t_s) + offset(t_s)` on `[t_s, end(t_s)]` from the
/// start and from every integer time of each run.
fn growth_from_restarts(
    acc: &mut Acc,
    batch: &[Trajectory],
    factor: f64,
    offset: &dyn Fn(f64) -> f64,
    end: &dyn Fn(f64) -> f64,
) {
    for (k, tr) in batch.iter().enumerate() {
        if tr.is_empty() {
            continue;
        }
        let mut starts = vec![0usize];
        let mut j = tr.t[0].floor() + 1.0;
        while j <= tr.t_end() {
            if let Some(i) = tr.index_at(j) {
                starts.push(i);
            }
            j += 1.0;
        }
        for s in starts {
            let ts = tr.t[s];
            let bound = factor * tr.v[s] + offset(ts);
            let e = end(ts).min(tr.t_end());
            if let Some((i, v)) = tr.max_v_on(ts, e) {
                acc.record(k, tr, tr.t[i], bound * (1.0 + CERT_REL_TOL) - v);
            }
        }
    }
}

/// Two-interval growth and two-step decrease with `a(s) = 9s`, the given
/// gamma and rho~, plus the series of gamma at even integers.
pub fn check_two_interval(batch: &[Trajectory], tables: &PairTables, gamma: &dyn Fn(f64) -> f64) -> StabilityReport {
    let mut rep = StabilityReport::new(Property::TwoInterval, batch);
    let mut acc = Acc::new("growth_9s_plus_gamma", "all");
    growth_from_restarts(&mut acc, batch, 9.0, gamma, &|t| t + 2.0);
    rep.findings.push(acc.done());
    let mut acc = Acc::new("two_step_rho_tilde_plus_gamma", "all");
    for (k, tr) in batch.iter().enumerate() {
        let e = crate::interleave::check_two_step_with(tr, tables, gamma);
        acc.merge(k, tr, &e);
    }
    rep.findings.push(acc.done());
    rep.estimate_push("gamma_even_sum", "all", gamma_series(gamma));
    rep
}

/// `sum_{j >= 0} gamma(2j)`, summed until the terms stop changing the total.
pub fn gamma_series(gamma: &dyn Fn(f64) -> f64) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for j in 0..100_000 {
        let term = gamma(2.0 * j as f64);
        // Kahan summation
        let y = term - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
        if term == 0.0 || term.abs() < 1e-18 * s.abs() {
            break;
        }
    }
    s
}

/// Deadzone loop: growth `9.9 V(t0) + 19.8 e^{-t0}` on `[t0, [t0] + 2]` and
/// two-step decrease with slack `18 e^{-2j}`.
pub fn check_deadzone(batch: &[Trajectory], tables: &PairTables) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut acc = Acc::new("deadzone_growth", "all");
    growth_from_restarts(&mut acc, batch, 9.9, &|t| 19.8 * (-t).exp(), &|t| t.floor() + 2.0);
    out.push(acc.done());
    let mut acc = Acc::new("deadzone_two_step", "all");
    for (k, tr) in batch.iter().enumerate() {
        let e = crate::interleave::check_two_step_with(tr, tables, |j| 18.0 * (-j).exp());
        acc.merge(k, tr, &e);
    }
    out.push(acc.done());
    out
}

/// Uniform loop: `V(t) <= 85 V(t0)` for all recorded `t >= t0`, from every
/// restart; V at even integers below `a1(eps)/9` once `i >= j + 9 a2(R)/r`;
/// attractivity time against the cap `2 + 18 a2(R)/r`.
pub fn check_uniform(batch: &[Trajectory], orclf: &Orclf, tables: &PairTables, eps: f64, r: f64) -> StabilityReport {
    let mut rep = StabilityReport::new(Property::Uniform, batch);
    let mut acc = Acc::new("eighty_one_fold", "all");
    growth_from_restarts(&mut acc, batch, 85.0, &|_| 0.0, &|_| f64::INFINITY);
    rep.findings.push(acc.done());

    let cell = cell_name(eps, None, r);
    let floor = decrease_floor(orclf, tables, eps, r);
    let level = orclf.a1.eval(eps) / 9.0;
    let steps = 9.0 * orclf.a2.eval(r) / floor;
    let mut acc = Acc::new("even_time_level", &cell);
    for (k, tr) in cell_runs(batch, None, r) {
        let j = (tr.meta.t0 / 2.0).ceil();
        let mut i = (j + steps).ceil();
        while 2.0 * i <= tr.t_end() {
            if let Some(s) = tr.index_at(2.0 * i) {
                acc.record(k, tr, tr.t[s], level * (1.0 + CERT_REL_TOL) - tr.v[s]);
            }
            i += 1.0;
        }
    }
    rep.findings.push(acc.done());

    let cap = 2.0 + 18.0 * orclf.a2.eval(r) / floor;
    rep.estimate_push("decrease_floor", &cell, floor);
    rep.estimate_push("tau_cap", &cell, cap);
    let runs = cell_runs(batch, None, r);
    let mut acc = Acc::new("tau_below_cap", &cell);
    let mut tau = 0.0_f64;
    for (k, tr) in &runs {
        match attain_time(tr, eps) {
            Some(t) => {
                tau = tau.max(t);
                acc.record(*k, tr, tr.meta.t0 + t, cap - t);
            }
            None => {
                // not attained within the horizon: only a violation if the horizon exceeds the cap
                let h = tr.t_end() - tr.meta.t0;
                acc.record(*k, tr, tr.t_end(), if h >= cap { -1.0 } else { 0.0 });
            }
        }
    }
    rep.findings.push(acc.done());
    rep.estimate_push("tau", &cell, tau);
    rep
}
