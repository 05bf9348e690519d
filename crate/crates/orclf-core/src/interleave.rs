//! Two level schedules offset by half a band, alternated on even and odd
//! unit intervals, and the certified two-step decrease function.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CheckEntry, Orclf};
use crate::scheduler::{quarter_min_rho, KraInfo, LevelSchedule, Scheduler, SchedulerConfig, CERT_REL_TOL};
use crate::sim::Trajectory;
use crate::unitloop::SegmentFeedback;

/// Window `[i_min, i_max]` of band indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub i_min: i32,
    pub i_max: i32,
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if self.i_min > self.i_max {
            return Err(Error::Config(format!(
                "empty schedule window [{}, {}]",
                self.i_min, self.i_max
            )));
        }
        Ok(())
    }
}

/// Band constants and both schedules; immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTables {
    pub window: Window,
    pub sched: LevelSchedule,
    pub shift: LevelSchedule,
    /// gamma_i for i in `i_min - 1 ..= i_max + 1`.
    gamma: Vec<f64>,
}

fn r(i: i32) -> f64 {
    2f64.powi(i)
}

fn r_shift(i: i32) -> f64 {
    0.5 * (r(i) + r(i + 1))
}

impl PairTables {
    pub fn build(orclf: &Orclf, window: Window) -> Result<Self> {
        window.validate()?;
        let mu = |i: i32| quarter_min_rho(orclf, r(i - 1), r(i));
        let mu_s = |i: i32| quarter_min_rho(orclf, r_shift(i - 1), r_shift(i));
        let a = |i: i32| {
            0.5 * (0.4 * r(i - 1))
                .min((r(i + 1) - r(i)) / 8.0)
                .min((r(i) - r(i - 1)) / 8.0)
                .min(mu_s(i) / 8.0)
        };
        let a_s = |i: i32| {
            0.5 * (0.4 * r_shift(i - 1))
                .min((r(i + 1) - r(i)) / 8.0)
                .min(mu(i + 1) / 8.0)
        };
        for i in window.i_min - 4..=window.i_max + 4 {
            let (ai, asi) = (a(i), a_s(i));
            if !(ai > 0.0 && asi > 0.0) {
                return Err(Error::Schedule {
                    band: i,
                    msg: format!("amplitude bound is not positive (a={ai}, a'={asi}); rho vanishes on the band"),
                });
            }
        }
        let sched = LevelSchedule::from_fns("r", window.i_min, window.i_max, orclf, r, a)?;
        let shift = LevelSchedule::from_fns("r_shift", window.i_min, window.i_max, orclf, r_shift, a_s)?;
        let gamma = (window.i_min - 1..=window.i_max + 1)
            .map(|i| 0.25 * (r(i - 1) - r(i - 2)).min(2.0 * shift.mu(i - 1)).min(2.0 * sched.mu(i)))
            .collect();
        let t = Self {
            window,
            sched,
            shift,
            gamma,
        };
        t.verify_invariants()?;
        Ok(t)
    }

    /// Re-checks the amplitude and separation constraints on the window.
    pub fn verify_invariants(&self) -> Result<()> {
        let (s, p) = (&self.sched, &self.shift);
        let fail = |band: i32, what: &str| {
            Err(Error::Schedule {
                band,
                msg: format!("{what} violated"),
            })
        };
        for i in self.window.i_min - 2..=self.window.i_max + 2 {
            if !(2.5 * s.a(i) <= s.r(i - 1) && 2.5 * p.a(i) <= p.r(i - 1)) {
                return fail(i, "guard width vs previous level");
            }
            if !(s.r(i) + 2.0 * s.a(i) < s.r(i + 1) - 2.0 * s.a(i + 1)
                && p.r(i) + 2.0 * p.a(i) < p.r(i + 1) - 2.0 * p.a(i + 1))
            {
                return fail(i, "band separation");
            }
            if !(s.a(i) + p.a(i) <= (s.r(i + 1) - s.r(i)) / 8.0 && s.a(i) + p.a(i - 1) <= (s.r(i) - s.r(i - 1)) / 8.0) {
                return fail(i, "paired amplitude sum");
            }
            if !(s.a(i) <= p.mu(i) / 8.0 && p.a(i) <= s.mu(i + 1) / 8.0) {
                return fail(i, "amplitude vs decrease rate");
            }
        }
        Ok(())
    }

    pub fn gamma(&self, i: i32) -> f64 {
        let k = (i.clamp(self.window.i_min - 1, self.window.i_max + 1) - (self.window.i_min - 1)) as usize;
        self.gamma[k]
    }

    fn edge(&self, i: i32) -> f64 {
        self.sched.r(i) - 2.0 * self.sched.a(i)
    }

    /// Interpolated band constant; constant extension outside the window.
    pub fn rho_bar(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let (lo_i, hi_i) = (self.window.i_min, self.window.i_max);
        let left = |i: i32| self.gamma(i - 1).min(self.gamma(i));
        let right = |i: i32| self.gamma(i).min(self.gamma(i + 1));
        if s <= self.edge(lo_i - 1) {
            return left(lo_i);
        }
        if s > self.edge(hi_i) {
            return right(hi_i);
        }
        let i = self.sched.guard_band_of(s);
        let (e0, e1) = (self.edge(i - 1), self.edge(i));
        left(i) + (right(i) - left(i)) * (s - e0) / (e1 - e0)
    }

    pub fn rho_tilde(&self, s: f64) -> f64 {
        if !(s > 0.0) {
            return 0.0;
        }
        self.rho_bar(s).min(s)
    }

    /// Whether `s` lies in the window's value range.
    pub fn in_window(&self, s: f64) -> bool {
        s > self.edge(self.window.i_min - 1) && s <= self.edge(self.window.i_max)
    }

    /// Plain-text `(s, rho_tilde(s))` samples, log spaced over the window.
    pub fn rho_table(&self, per_band: usize) -> String {
        let mut out = String::from("s\trho_tilde\n");
        let per = per_band.max(1);
        let lo = self.sched.r(self.window.i_min - 1).log2();
        let hi = self.sched.r(self.window.i_max).log2();
        let steps = ((hi - lo).round() as usize).max(1) * per;
        for k in 0..=steps {
            let s = 2f64.powf(lo + (hi - lo) * k as f64 / steps as f64);
            let _ = writeln!(out, "{s:.17e}\t{:.17e}", self.rho_tilde(s));
        }
        out
    }
}

/// Both schedulers over one segment feedback.
pub struct InterleavePair {
    pub tables: PairTables,
    pub even: Arc<Scheduler>,
    pub odd: Arc<Scheduler>,
}

impl std::fmt::Debug for InterleavePair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InterleavePair")
            .field("window", &self.tables.window)
            .field("even", &self.even)
            .field("odd", &self.odd)
            .finish()
    }
}

pub fn make_pair(fb: Arc<SegmentFeedback>, window: Window, cfg: SchedulerConfig) -> Result<InterleavePair> {
    let tables = PairTables::build(&fb.orclf, window)?;
    let even = Arc::new(Scheduler::new(fb.clone(), tables.sched.clone(), cfg.clone())?);
    let odd = Arc::new(Scheduler::new(fb, tables.shift.clone(), cfg)?);
    Ok(InterleavePair { tables, even, odd })
}

impl InterleavePair {
    pub fn fb(&self) -> &SegmentFeedback {
        &self.even.fb
    }

    fn active(&self, t: f64) -> &Scheduler {
        if (t.floor() as i64).rem_euclid(2) == 0 {
            &self.even
        } else {
            &self.odd
        }
    }

    /// The even-interval scheduler on `[2j, 2j+1)`, the shifted one on `[2j+1, 2j+2)`.
    pub fn k_tilde(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<KraInfo> {
        self.active(t).k_ra(t, x, out)
    }

    pub fn next_break(&self, t: f64, x: &[f64]) -> Result<Option<f64>> {
        self.active(t).next_break(t, x)
    }

    pub fn grid_n(&self, t: f64, x: &[f64]) -> Result<u64> {
        self.active(t).grid_n(t, x)
    }

    pub fn rho_tilde(&self, s: f64) -> f64 {
        self.tables.rho_tilde(s)
    }

    pub fn clamp_events(&self) -> u64 {
        self.even.clamp_events() + self.odd.clamp_events()
    }
}

/// `V(2j+2) <= V(2j) - rho_tilde(V(2j)) + slack(2j)` at every even integer
/// pair of recorded samples; `slack` is 0 for the plain statement.
pub fn check_two_step_with(traj: &Trajectory, tables: &PairTables, slack: impl Fn(f64) -> f64) -> CheckEntry {
    let mut e = CheckEntry::new("two_step_decrease");
    if traj.is_empty() {
        return e;
    }
    let mut j = (traj.t[0] / 2.0).ceil() * 2.0;
    while j + 2.0 <= traj.t_end() + 1e-12 {
        if let (Some(a), Some(b)) = (traj.index_at(j), traj.index_at(j + 2.0)) {
            let v0 = traj.v[a];
            let bound = v0 - tables.rho_tilde(v0) + slack(j);
            e.record(bound + CERT_REL_TOL * v0 - traj.v[b], traj.t[b], traj.x_at(b), None);
        }
        j += 2.0;
    }
    e
}

pub fn check_two_step_decrease(traj: &Trajectory, tables: &PairTables) -> CheckEntry {
    check_two_step_with(traj, tables, |_| 0.0)
}

/// `V(t) <= factor V(t0) + offset` for `t` in `[t0, floor(t0) + span]`.
pub fn check_growth(name: &str, traj: &Trajectory, factor: f64, offset: f64, span: f64) -> CheckEntry {
    let mut e = CheckEntry::new(name);
    if traj.is_empty() {
        return e;
    }
    let t0 = traj.t[0];
    let end = t0.floor() + span;
    let bound = factor * traj.v[0] + offset;
    for k in 0..traj.len() {
        if traj.t[k] > end + 1e-12 {
            break;
        }
        e.record(bound - traj.v[k], traj.t[k], traj.x_at(k), None);
    }
    e
}

/// Nine-fold bound over two unit intervals, tested at 9.9.
pub fn check_nine_fold(traj: &Trajectory) -> CheckEntry {
    check_growth("nine_fold", traj, 9.9, 0.0, 2.0)
}

/// Three-fold bound over one unit interval, tested at 3.3.
pub fn check_three_fold(traj: &Trajectory) -> CheckEntry {
    check_growth("three_fold", traj, 3.3, 0.0, 1.0)
}
