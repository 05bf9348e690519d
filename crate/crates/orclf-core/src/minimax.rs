//! Decrease certificates: worst-case derivative over D, the margin Psi,
//! the pointwise control selector and the auxiliary bounds b~, phi, eps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Orclf, SystemModel};
use crate::util::{self, MAXD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimaxConfig {
    pub u_radii: usize,
    /// 0 picks 2 directions for m = 1 and 64 otherwise.
    pub u_dirs: usize,
    pub ball_samples: usize,
    pub kappa_slack: f64,
    pub btilde_radial: usize,
    pub btilde_angular: usize,
    pub btilde_time: usize,
    pub phi_radii: usize,
    pub max_halvings: u32,
    pub salt: u64,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self {
            u_radii: 32,
            u_dirs: 0,
            ball_samples: 64,
            kappa_slack: 0.125,
            btilde_radial: 16,
            btilde_angular: 16,
            btilde_time: 16,
            phi_radii: 16,
            max_halvings: 48,
            salt: 0x6d69_6e69,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSelection {
    pub u_star: Vec<f64>,
    pub delta: f64,
    pub margin: f64,
}

/// V and its partials at one point, shared by many control evaluations.
#[derive(Debug, Clone, Copy)]
pub struct PointCtx {
    pub t: f64,
    pub v: f64,
    pub vt: f64,
    pub gx: [f64; MAXD],
    pub x: [f64; MAXD],
    pub n: usize,
}

impl PointCtx {
    pub fn new(orclf: &Orclf, t: f64, x: &[f64]) -> Result<Self> {
        let n = x.len();
        let mut gx = [0.0; MAXD];
        let vt = orclf.gradient(t, x, &mut gx[..n]);
        let v = orclf.value(t, x);
        if !v.is_finite() || !vt.is_finite() || gx[..n].iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericDomain {
                t,
                x: x.to_vec(),
                what: "V or its gradient".into(),
            });
        }
        let mut xs = [0.0; MAXD];
        xs[..n].copy_from_slice(x);
        Ok(Self { t, v, vt, gx, x: xs, n })
    }

    #[inline]
    pub fn xs(&self) -> &[f64] {
        &self.x[..self.n]
    }

    /// `V_t + V_x . f(t,d,x,u)` for one disturbance value.
    #[inline]
    pub fn along(&self, model: &SystemModel, d: &[f64], u: &[f64]) -> f64 {
        let mut f = [0.0; MAXD];
        model.eval_f(self.t, d, self.xs(), u, &mut f[..self.n]);
        self.vt + util::dot(&self.gx[..self.n], &f[..self.n])
    }

    /// Max over the D grid.
    #[inline]
    pub fn worst(&self, model: &SystemModel, u: &[f64]) -> f64 {
        let mut w = f64::NEG_INFINITY;
        for d in model.dgrid() {
            let a = self.along(model, d, u);
            if a.is_nan() {
                return f64::NAN;
            }
            w = w.max(a);
        }
        w
    }

    #[inline]
    pub fn psi(&self, model: &SystemModel, orclf: &Orclf, u: &[f64]) -> f64 {
        self.worst(model, u) + 0.75 * orclf.rho(self.v)
    }
}

fn finite_or(v: f64, t: f64, x: &[f64], what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericDomain {
            t,
            x: x.to_vec(),
            what: what.into(),
        })
    }
}

pub fn worst_derivative(model: &SystemModel, orclf: &Orclf, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let ctx = PointCtx::new(orclf, t, x)?;
    finite_or(ctx.worst(model, u), t, x, "f along the D grid")
}

/// Negative times are evaluated at t = 0.
pub fn psi(model: &SystemModel, orclf: &Orclf, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let te = t.max(0.0);
    let ctx = PointCtx::new(orclf, te, x)?;
    finite_or(ctx.psi(model, orclf, u), te, x, "Psi")
}

/// Scales `u` back into the ball `|u| <= r` and projects onto U.
fn admissible(model: &SystemModel, u: &mut [f64], r: f64) {
    model.controls.project(u);
    let nu = util::norm(u);
    if nu > r {
        let s = if nu > 0.0 { r / nu } else { 0.0 };
        u.iter_mut().for_each(|v| *v *= s);
    }
}

/// Deterministic scan over the radius ladder and direction set, then a
/// coordinate pattern search. Returns the best control and its Psi.
pub fn minimize_psi(model: &SystemModel, orclf: &Orclf, cfg: &MinimaxConfig, ctx: &PointCtx, bound: f64) -> ([f64; MAXD], f64) {
    let m = model.m;
    let mut best = [0.0; MAXD];
    let mut best_val = ctx.psi(model, orclf, &best[..m]);
    if !(bound > 0.0) {
        return (best, best_val);
    }
    let dirs = model.controls.directions(m, cfg.u_dirs);
    let nr = cfg.u_radii.max(1);
    let mut u = [0.0; MAXD];
    for k in 0..nr {
        let r = if nr == 1 {
            bound
        } else {
            bound * 10f64.powf(-4.0 * k as f64 / (nr - 1) as f64)
        };
        for d in &dirs {
            for i in 0..m {
                u[i] = r * d[i];
            }
            admissible(model, &mut u[..m], bound);
            let v = ctx.psi(model, orclf, &u[..m]);
            if v < best_val {
                best_val = v;
                best = u;
            }
        }
    }
    let mut step = 0.25 * bound;
    let floor = 1e-12 * bound;
    while step > floor {
        let mut improved = false;
        for i in 0..m {
            for sgn in [1.0, -1.0] {
                let mut c = best;
                c[i] += sgn * step;
                admissible(model, &mut c[..m], bound);
                let v = ctx.psi(model, orclf, &c[..m]);
                if v < best_val {
                    best_val = v;
                    best = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, best_val)
}

/// Point of `{|tau - t| + |y - x| < delta}`, uniform in radius fraction.
fn ball_point<R: Rng>(rng: &mut R, t: f64, x: &[f64], delta: f64, y: &mut [f64]) -> f64 {
    let n = x.len();
    let r = delta * rng.gen::<f64>().powf(1.0 / (n as f64 + 1.0)) * (1.0 - 1e-12);
    let a: f64 = rng.gen();
    let mut dir = [0.0; MAXD];
    util::unit_vector(rng, &mut dir[..n]);
    let rs = (1.0 - a) * r;
    for i in 0..n {
        y[i] = x[i] + rs * dir[i];
    }
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    t + sign * a * r
}

/// Whether every sampled point of the ball satisfies Psi <= 0.
pub fn ball_certifies<R: Rng>(
    model: &SystemModel,
    orclf: &Orclf,
    t: f64,
    x: &[f64],
    u: &[f64],
    delta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<bool> {
    let n = x.len();
    let mut y = [0.0; MAXD];
    for _ in 0..samples {
        let tau = ball_point(rng, t, x, delta, &mut y[..n]);
        let p = psi(model, orclf, tau, &y[..n], u)?;
        if !(p <= 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn select_control(model: &SystemModel, orclf: &Orclf, cfg: &MinimaxConfig, t: f64, x: &[f64]) -> Result<ControlSelection> {
    let nx = util::norm(x);
    if nx == 0.0 {
        return Err(Error::Domain("select_control needs x != 0".into()));
    }
    let m = model.m;
    let te = t.max(0.0);
    let ctx = PointCtx::new(orclf, te, x)?;
    let bound = orclf.b(te, x);
    let (u, margin) = minimize_psi(model, orclf, cfg, &ctx, bound);
    let required = -cfg.kappa_slack * orclf.rho(ctx.v);
    if !(margin <= required) || !(margin < 0.0) {
        return Err(Error::CertificateNotVerifiable {
            t,
            x: x.to_vec(),
            best_margin: margin,
            required,
        });
    }
    let mut rng = util::rng_from(util::seed_from_point(cfg.salt, t, x));
    let mut delta = (0.5 * nx).min(1.0);
    for _ in 0..cfg.max_halvings {
        if ball_certifies(model, orclf, t, x, &u[..m], delta, cfg.ball_samples, &mut rng)?
            && ball_certifies(model, orclf, t, x, &u[..m], delta, 64, &mut rng)?
        {
            return Ok(ControlSelection {
                u_star: u[..m].to_vec(),
                delta,
                margin,
            });
        }
        delta *= 0.5;
    }
    Err(Error::CertificateNotVerifiable {
        t,
        x: x.to_vec(),
        best_margin: margin,
        required,
    })
}

/// Grid max of b over `{2/3|x| <= |y| <= 2|x|, 0 <= tau <= t+1}`,
/// including the point itself.
pub fn b_tilde(orclf: &Orclf, cfg: &MinimaxConfig, t: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let nx = util::norm(x);
    let mut best = orclf.b(t.max(0.0), x);
    let dirs = util::direction_set(n, cfg.btilde_angular.max(1));
    let nr = cfg.btilde_radial.max(2);
    let nt = cfg.btilde_time.max(2);
    let t1 = (t + 1.0).max(0.0);
    let mut y = [0.0; MAXD];
    for kt in 0..nt {
        let tau = t1 * kt as f64 / (nt - 1) as f64;
        for kr in 0..nr {
            let r = nx * (2.0 / 3.0 + (2.0 - 2.0 / 3.0) * kr as f64 / (nr - 1) as f64);
            for d in &dirs {
                for i in 0..n {
                    y[i] = r * d[i];
                }
                let b = orclf.b(tau, &y[..n]);
                if b > best {
                    best = b;
                }
            }
        }
    }
    best
}

/// Admissible controls with `|u| <= radius`: the origin, then the radius
/// ladder `radius k/steps` times the direction set.
pub fn control_grid(model: &SystemModel, cfg: &MinimaxConfig, radius: f64, steps: usize) -> Vec<Vec<f64>> {
    let m = model.m;
    let mut out = vec![vec![0.0; m]];
    if !(radius > 0.0) {
        return out;
    }
    let dirs = model.controls.directions(m, cfg.u_dirs);
    for k in 1..=steps.max(1) {
        let r = radius * k as f64 / steps.max(1) as f64;
        for d in &dirs {
            let mut u: Vec<f64> = d.iter().map(|v| v * r).collect();
            admissible(model, &mut u, radius);
            out.push(u);
        }
    }
    out
}

pub fn phi_bound(model: &SystemModel, orclf: &Orclf, cfg: &MinimaxConfig, t: f64, x: &[f64]) -> Result<f64> {
    let te = t.max(0.0);
    let ctx = PointCtx::new(orclf, te, x)?;
    let bt = b_tilde(orclf, cfg, t, x);
    let mut best = f64::NEG_INFINITY;
    for u in control_grid(model, cfg, bt, cfg.phi_radii) {
        let w = ctx.worst(model, &u);
        best = best.max(finite_or(w, te, x, "f in phi bound")?);
    }
    Ok((1.1 * best).max(1.0))
}

pub fn epsilon_fn(model: &SystemModel, orclf: &Orclf, cfg: &MinimaxConfig, t: f64, x: &[f64]) -> Result<f64> {
    let rho = orclf.rho(orclf.value(t.max(0.0), x));
    let phi = phi_bound(model, orclf, cfg, t, x)?;
    Ok(rho / (8.0 * (rho + phi)))
}
