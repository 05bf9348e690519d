//! Acceptance criteria AC1..AC11, one line each.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use orclf_core::interleave::{check_nine_fold, check_two_step_decrease, make_pair, InterleavePair, Window};
use orclf_core::minimax::{b_tilde, psi, select_control, MinimaxConfig};
use orclf_core::model::{self, builtin_system, check_hypotheses, DisturbancePath, SamplePlan};
use orclf_core::scheduler::{check_containment, check_step_decrease, default_schedule, NPolicy, Scheduler, SchedulerConfig};
use orclf_core::sim::{batch, batch_plan, BatchItem, DisturbanceStrategy, StepPolicy, Trajectory};
use orclf_core::stabilize::{feedback_deadzone, feedback_uniform, raw_interleave, raw_scheduler, FeedbackLaw};
use orclf_core::unitloop::{CoveringConfig, SegmentFeedback, WorkingRegion};
use orclf_core::util;
use orclf_core::verify::{check_deadzone, check_rgaos, check_two_interval, check_uniform, gamma_series};
use orclf_tools::config::RunConfig;
use orclf_tools::pipeline;
use rand::Rng;

const WINDOW: Window = Window { i_min: -30, i_max: 6 };

// AC1
const HYP_SAMPLES: usize = 2000;
const HYP_BUDGET: Duration = Duration::from_secs(10);
// AC2
const DECREASE_POINTS: usize = 200;
const DECREASE_PATHS: usize = 20;
const DECREASE_TOL: f64 = 1e-6;
const DECREASE_BUDGET: Duration = Duration::from_secs(120);
// AC3
const BOUNDARY_SAMPLES: usize = 100;
const BOUNDARY_VALUE_TOL: f64 = 1e-12;
const BOUNDARY_PARTIAL_TOL: f64 = 1e-8;
const BOUNDARY_FD_STEP: f64 = 1e-5;
// AC4
const AMPLITUDE_S_GRID: usize = 1024;
// AC5
const SCHED_RUNS: usize = 50;
const SCHED_BUDGET: Duration = Duration::from_secs(180);
// AC6
const PAIR_RUNS: usize = 50;
// AC7
const DZ_T0: [f64; 3] = [0.0, 1.0, 5.0];
const DZ_SEEDS: u64 = 10;
const DZ_HORIZON: f64 = 40.0;
const DZ_EPS: f64 = 1e-2;
const DZ_BUDGET: Duration = Duration::from_secs(300);
// AC8
const UNIFORM_T0: [f64; 3] = [0.0, 5.0, 25.0];
const UNIFORM_EPS: f64 = 1e-2;
const UNIFORM_R: f64 = 2.0;
const UNIFORM_HORIZON: f64 = 40.0;
// AC9
const ORACLE_POINTS: usize = 50;
const ORACLE_U_GRID: usize = 10_000;
const ORACLE_TOL: f64 = 1e-3;
// AC10
const SERIES_TOL: f64 = 1e-9;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
    took: Duration,
}

fn feedback(name: &str) -> Arc<SegmentFeedback> {
    let (m, o) = builtin_system(name).unwrap();
    Arc::new(SegmentFeedback::new(m, o, MinimaxConfig::default(), CoveringConfig::default()).unwrap())
}

fn sched_cfg() -> SchedulerConfig {
    SchedulerConfig {
        n_policy: NPolicy::Clamp,
        ..Default::default()
    }
}

fn pair(name: &str) -> Arc<InterleavePair> {
    Arc::new(make_pair(feedback(name), WINDOW, sched_cfg()).unwrap())
}

fn region() -> WorkingRegion {
    WorkingRegion::new(0.0, 2.0, 0.5, 2.0).with_levels(0.05, f64::INFINITY)
}

/// x1 = 0 for S1; growth of x1 leaves the covered region otherwise.
fn initial_state<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let r: f64 = rng.gen_range(lo..hi);
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let mut x = vec![0.0; n];
    x[n - 1] = sign * r;
    x
}

fn run_all(law: &FeedbackLaw, items: &[BatchItem], horizon: f64, policy: &StepPolicy) -> Result<Vec<Trajectory>, String> {
    batch(law, items, horizon, policy)
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect()
}

fn ac1() -> (bool, String) {
    let plan = SamplePlan {
        t_min: 0.0,
        t_max: 10.0,
        x_min: 1e-3,
        x_max: 1e3,
        samples: HYP_SAMPLES,
        seed: 7,
    };
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in model::builtin_names() {
        let (m, o) = builtin_system(name).unwrap();
        let rep = check_hypotheses(&m, &o, &plan);
        pass &= rep.violations() == 0;
        parts.push(format!("{name}: {} violations", rep.violations()));
    }
    let el = start.elapsed();
    pass &= el < HYP_BUDGET;
    (pass, format!("{} ({} samples, budget {:?})", parts.join(", "), HYP_SAMPLES, HYP_BUDGET))
}

fn ac2() -> (bool, String) {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in [model::S1, model::S3] {
        let fb = feedback(name);
        let mut rng = util::rng_from(21);
        let (mut worst, mut bad, mut errors) = (f64::INFINITY, 0, 0);
        for _ in 0..DECREASE_POINTS {
            let (t, x) = region().sample(&mut rng, &fb.orclf, fb.model.n).unwrap();
            let rho = fb.orclf.rho(fb.orclf.value(t, &x));
            for _ in 0..DECREASE_PATHS {
                let pieces = rng.gen_range(1..=8);
                let d = DisturbancePath::random(&fb.model.dist, 0.0, 1.0, pieces, &mut rng);
                match fb.average_decrease(t, &x, &d) {
                    Ok(avg) => {
                        let margin = -0.5 * rho + DECREASE_TOL - avg;
                        worst = worst.min(margin);
                        if !(margin >= 0.0) {
                            bad += 1;
                        }
                    }
                    Err(_) => errors += 1,
                }
            }
        }
        pass &= bad == 0 && errors == 0;
        parts.push(format!("{name}: {bad} violations, {errors} errors, worst margin {worst:.3e}"));
    }
    let el = start.elapsed();
    pass &= el < DECREASE_BUDGET;
    (pass, format!("{} (tol {DECREASE_TOL:e})", parts.join("; ")))
}

fn ac3() -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in model::builtin_names() {
        let fb = feedback(name);
        let m = fb.model.m;
        let mut rng = util::rng_from(31);
        let (mut kmax, mut pmax) = (0.0_f64, 0.0_f64);
        let mut errors = 0;
        for _ in 0..BOUNDARY_SAMPLES {
            let (t, x) = region().sample(&mut rng, &fb.orclf, fb.model.n).unwrap();
            let mut k = vec![0.0; m];
            for s in [0.0, 1.0] {
                if fb.k_segment(s, t, &x, &mut k).is_err() {
                    errors += 1;
                }
                kmax = kmax.max(util::norm(&k));
            }
            match fb.boundary_smoothness_check(t, &x, BOUNDARY_FD_STEP) {
                Ok(r) => pmax = pmax.max(r.at_zero).max(r.at_one),
                Err(_) => errors += 1,
            }
        }
        pass &= kmax <= BOUNDARY_VALUE_TOL && pmax < BOUNDARY_PARTIAL_TOL && errors == 0;
        parts.push(format!("{name}: max |k| {kmax:.1e}, max partial {pmax:.1e}"));
    }
    (pass, format!("{} (tol {BOUNDARY_VALUE_TOL:e} / {BOUNDARY_PARTIAL_TOL:e})", parts.join("; ")))
}

fn ac4() -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in [model::S1, model::S2, model::S3] {
        let p = pair(name);
        let fb = p.fb();
        let sch = Scheduler::new(feedback(name), default_schedule(&fb.orclf, WINDOW.i_min, WINDOW.i_max).unwrap(), sched_cfg()).unwrap();
        let m = fb.model.m;
        let mut rng = util::rng_from(41);
        let (mut bad, mut checked) = (0, 0);
        let mut worst = f64::INFINITY;
        let mut k = vec![0.0; m];
        for _ in 0..40 {
            let (t, x) = region().sample(&mut rng, &fb.orclf, fb.model.n).unwrap();
            let bt = b_tilde(&fb.orclf, &fb.minimax, t, &x);
            let prof = fb.profile(t, &x).unwrap();
            let mut amp = 0.0_f64;
            for q in 0..=AMPLITUDE_S_GRID {
                prof.eval(q as f64 / AMPLITUDE_S_GRID as f64, &mut k);
                amp = amp.max(util::norm(&k));
            }
            let mut vals = vec![amp];
            for q in 0..16 {
                let tq = t.floor() + q as f64 / 16.0 + rng.gen_range(0.0..1.0 / 16.0);
                let btq = b_tilde(&fb.orclf, &fb.minimax, tq, &x);
                sch.k_ra(tq, &x, &mut k).unwrap();
                let a = util::norm(&k);
                p.k_tilde(tq, &x, &mut k).unwrap();
                let b = util::norm(&k);
                for v in [a, b] {
                    checked += 1;
                    worst = worst.min(btq - v);
                    if !(v <= btq) {
                        bad += 1;
                    }
                }
            }
            for v in vals.drain(..) {
                checked += 1;
                worst = worst.min(bt - v);
                if !(v <= bt) {
                    bad += 1;
                }
            }
        }
        pass &= bad == 0;
        parts.push(format!("{name}: {bad}/{checked} over, min slack {worst:.3e}"));
    }
    (pass, format!("{} (zero tolerance)", parts.join("; ")))
}

fn ac5() -> (bool, String) {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in [model::S3, model::S1] {
        let fb = feedback(name);
        let sched = default_schedule(&fb.orclf, WINDOW.i_min, WINDOW.i_max).unwrap();
        let s = Arc::new(Scheduler::new(fb.clone(), sched, sched_cfg()).unwrap());
        let law = raw_scheduler(s.clone());
        let mut rng = util::rng_from(5);
        let inits: Vec<(f64, Vec<f64>)> = (0..SCHED_RUNS)
            .map(|k| {
                let j = (k % 3) as f64;
                if fb.model.n == 1 {
                    (j, initial_state(&mut rng, 1, 0.5, 2.0))
                } else {
                    let x2: f64 = rng.gen_range(0.5..2.0);
                    (j, vec![rng.gen_range(-0.5..0.5) * x2, x2])
                }
            })
            .collect();
        let items = batch_plan(&inits, &[DisturbanceStrategy::VertexAdversarial]);
        let runs = match run_all(&law, &items, 1.0, &StepPolicy::default()) {
            Ok(r) => r,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let (mut cv, mut sv, mut sc) = (0, 0, 0);
        let (mut cw, mut sw) = (f64::INFINITY, f64::INFINITY);
        for tr in &runs {
            let c = check_containment(tr, &s.sched);
            let i = s.sched.guard_band_of(tr.v[0]);
            let n = s.grid_n(tr.meta.t0, &tr.meta.x0).unwrap();
            let d = check_step_decrease(tr, &s.sched, i, n);
            cv += c.violations;
            sv += d.violations;
            sc += d.checked;
            cw = cw.min(c.worst_margin);
            sw = sw.min(d.worst_margin);
        }
        pass &= cv == 0 && sv == 0 && sc > 0;
        parts.push(format!(
            "{name}: containment {cv} violations (worst {cw:.2e}), step decrease {sv}/{sc} (worst {sw:.2e})"
        ));
    }
    let el = start.elapsed();
    pass &= el < SCHED_BUDGET;
    (pass, format!("{} (rel tol 1e-9 + 1e-6)", parts.join("; ")))
}

fn ac6() -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in [model::S3, model::S1] {
        let p = pair(name);
        let law = raw_interleave(p.clone());
        let n = p.fb().model.n;
        let mut rng = util::rng_from(6);
        let inits: Vec<(f64, Vec<f64>)> = (0..PAIR_RUNS)
            .map(|k| ((k % 3) as f64 + if k % 2 == 0 { 0.0 } else { 0.5 }, initial_state(&mut rng, n, 0.5, 2.0)))
            .collect();
        let items = batch_plan(&inits, &[DisturbanceStrategy::VertexAdversarial]);
        let policy = StepPolicy {
            record_spacing: Some(1.0 / 64.0),
            ..Default::default()
        };
        let runs = match run_all(&law, &items, 4.0, &policy) {
            Ok(r) => r,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        let (mut nv, mut tv, mut tc) = (0, 0, 0);
        let (mut nw, mut tw) = (f64::INFINITY, f64::INFINITY);
        for tr in &runs {
            let a = check_nine_fold(tr);
            let b = check_two_step_decrease(tr, &p.tables);
            nv += a.violations;
            tv += b.violations;
            tc += b.checked;
            nw = nw.min(a.worst_margin);
            tw = tw.min(b.worst_margin);
        }
        pass &= nv == 0 && tv == 0 && tc > 0;
        parts.push(format!("{name}: 9.9x {nv} violations (worst {nw:.2e}), two-step {tv}/{tc} (worst {tw:.2e})"));
    }
    (pass, parts.join("; "))
}

fn deadzone_batch() -> Result<(Arc<InterleavePair>, Vec<Trajectory>), String> {
    let p = pair(model::S1);
    let law = feedback_deadzone(p.clone());
    let mut rng = util::rng_from(7);
    let mut inits = Vec::new();
    for &t0 in &DZ_T0 {
        for _ in 0..DZ_SEEDS {
            inits.push((t0, initial_state(&mut rng, 2, 0.25, 2.0)));
        }
    }
    let strategies = [DisturbanceStrategy::PiecewiseRandom { seed: 70, dwell: None }];
    let items = batch_plan(&inits, &strategies);
    let policy = StepPolicy {
        record_spacing: Some(1.0 / 64.0),
        ..Default::default()
    };
    Ok((p, run_all(&law, &items, DZ_HORIZON, &policy)?))
}

fn ac7(data: &Result<(Arc<InterleavePair>, Vec<Trajectory>), String>, took: Duration) -> (bool, String) {
    let (p, runs) = match data {
        Ok(d) => d,
        Err(e) => return (false, e.clone()),
    };
    let f = check_deadzone(runs, &p.tables);
    let rep = check_rgaos(runs, &[DZ_EPS], &[5.0], &[2.0]);
    let tau = rep.estimate("tau", "eps=0.01,T=5,R=2");
    let mut pass = f.iter().all(|f| f.passed() && f.checked > 0) && rep.passed();
    pass &= took < DZ_BUDGET;
    let parts: Vec<String> = f
        .iter()
        .chain(rep.findings.iter())
        .map(|f| format!("{} {}/{} (worst {:.2e})", f.check, f.violations, f.checked, f.worst_margin))
        .collect();
    (
        pass,
        format!(
            "{} trajectories: {}; tau(|Y| <= {DZ_EPS:e}) = {}",
            runs.len(),
            parts.join(", "),
            tau.map_or("not attained".into(), |t| format!("{t:.3}"))
        ),
    )
}

fn ac8() -> (bool, String) {
    let p = pair(model::S1);
    let law = match feedback_uniform(p.clone()) {
        Ok(l) => l,
        Err(e) => return (false, e.to_string()),
    };
    let mut inits = Vec::new();
    for &t0 in &UNIFORM_T0 {
        for r in [2.0, -1.5, 1.0, -0.5] {
            inits.push((t0, vec![0.0, r]));
        }
    }
    let items = batch_plan(&inits, &[DisturbanceStrategy::VertexAdversarial]);
    let policy = StepPolicy {
        record_spacing: Some(1.0 / 64.0),
        ..Default::default()
    };
    let runs = match run_all(&law, &items, UNIFORM_HORIZON, &policy) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let fb = p.fb();
    let rep = check_uniform(&runs, &fb.orclf, &p.tables, UNIFORM_EPS, UNIFORM_R);
    let cell = format!("eps={UNIFORM_EPS},R={UNIFORM_R}");
    let parts: Vec<String> = rep
        .findings
        .iter()
        .map(|f| format!("{} {}/{} (worst {:.2e})", f.check, f.violations, f.checked, f.worst_margin))
        .collect();
    let pass = rep.passed() && rep.findings[0].checked > 0;
    let vacuous: Vec<&str> = rep.findings.iter().filter(|f| f.checked == 0).map(|f| f.check.as_str()).collect();
    (
        pass,
        format!(
            "{}{}; r = {:.3e}, tau cap {:.3e}, tau {:.3}",
            parts.join(", "),
            if vacuous.is_empty() { String::new() } else { format!(" ({} has no index inside the horizon)", vacuous.join(", ")) },
            rep.estimate("decrease_floor", &cell).unwrap_or(f64::NAN),
            rep.estimate("tau_cap", &cell).unwrap_or(f64::NAN),
            rep.estimate("tau", &cell).unwrap_or(f64::NAN)
        ),
    )
}

fn ac9() -> (bool, String) {
    let cfg = MinimaxConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in model::builtin_names() {
        let (m, o) = builtin_system(name).unwrap();
        let mut rng = util::rng_from(9);
        let mut worst = 0.0_f64;
        let mut errors = 0;
        for _ in 0..ORACLE_POINTS {
            let (t, x) = region().sample(&mut rng, &o, m.n).unwrap();
            let sel = match select_control(&m, &o, &cfg, t, &x) {
                Ok(s) => s,
                Err(_) => {
                    errors += 1;
                    continue;
                }
            };
            let b = o.b(t, &x);
            let mut best = f64::INFINITY;
            for k in 0..ORACLE_U_GRID {
                let u = -b + 2.0 * b * k as f64 / (ORACLE_U_GRID - 1) as f64;
                best = best.min(psi(&m, &o, t, &x, &[u]).unwrap());
            }
            worst = worst.max((sel.margin - best).abs());
        }
        pass &= worst <= ORACLE_TOL && errors == 0;
        parts.push(format!("{name}: max |margin - scan| {worst:.2e}"));
    }
    (pass, format!("{} (tol {ORACLE_TOL:e})", parts.join("; ")))
}

fn ac10(data: &Result<(Arc<InterleavePair>, Vec<Trajectory>), String>) -> (bool, String) {
    let (p, runs) = match data {
        Ok(d) => d,
        Err(e) => return (false, e.clone()),
    };
    let gamma = |t: f64| 18.0 * (-t).exp();
    let rep = check_two_interval(runs, &p.tables, &gamma);
    let sum = gamma_series(&gamma);
    let want = 18.0 / (1.0 - (-2.0f64).exp());
    let pass = rep.passed() && rep.findings.iter().all(|f| f.checked > 0) && (sum - want).abs() <= SERIES_TOL;
    let parts: Vec<String> = rep
        .findings
        .iter()
        .map(|f| format!("{} {}/{} (worst {:.2e})", f.check, f.violations, f.checked, f.worst_margin))
        .collect();
    (pass, format!("{}; sum gamma(2j) = {sum:.15} vs {want:.15}", parts.join(", ")))
}

const DETERMINISM_CONFIG: &str = r#"
[system]
builtin = "S3"

[batch]
t0 = [0.0, 1.0]
x0 = [[2.0], [-1.0]]
strategies = [{ kind = "piecewise_random", seed = 3, dwell = 0.25 }, { kind = "vertex_adversarial" }]
horizon = 3.0
record_spacing = 0.0625

[verify]
checks = ["rfc", "deadzone"]
"#;

fn pipeline_once(dir: &Path) -> Result<(String, Vec<Vec<u8>>, String), String> {
    let cfg = RunConfig::from_toml(DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let s = pipeline::cmd_synthesize(&cfg, dir).map_err(|e| e.to_string())?;
    pipeline::cmd_simulate(&cfg, dir).map_err(|e| e.to_string())?;
    let v = pipeline::cmd_verify(&cfg, dir, &pipeline::sim_dir(dir)).map_err(|e| e.to_string())?;
    let mut names: Vec<_> = std::fs::read_dir(pipeline::sim_dir(dir))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    let bytes = names.iter().map(|p| std::fs::read(p).unwrap()).collect();
    Ok((s.digest, bytes, v.text))
}

fn ac11() -> (bool, String) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    match (pipeline_once(a.path()), pipeline_once(b.path())) {
        (Ok(x), Ok(y)) => {
            let pass = x.0 == y.0 && x.1 == y.1 && x.2 == y.2;
            (
                pass,
                format!(
                    "digest {} {}, {} files byte-identical: {}, reports identical: {}",
                    &x.0[..16],
                    if x.0 == y.0 { "==" } else { "!=" },
                    x.1.len(),
                    x.1 == y.1,
                    x.2 == y.2
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => (false, e),
    }
}

fn timed(id: &'static str, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (pass, detail) = f();
    report(Line {
        id,
        pass,
        detail,
        took: start.elapsed(),
    })
}

fn report(l: Line) -> Line {
    println!(
        "{} {} [{:.1}s] {}",
        l.id,
        if l.pass { "PASS" } else { "FAIL" },
        l.took.as_secs_f64(),
        l.detail
    );
    l
}

fn main() {
    let mut lines = vec![
        timed("AC1", ac1),
        timed("AC2", ac2),
        timed("AC3", ac3),
        timed("AC4", ac4),
        timed("AC5", ac5),
        timed("AC6", ac6),
    ];
    let start = Instant::now();
    let dz = deadzone_batch();
    let dz_took = start.elapsed();
    let (pass, detail) = ac7(&dz, dz_took);
    lines.push(report(Line {
        id: "AC7",
        pass,
        detail,
        took: start.elapsed(),
    }));
    lines.push(timed("AC8", ac8));
    lines.push(timed("AC9", ac9));
    lines.push(timed("AC10", || ac10(&dz)));
    lines.push(timed("AC11", ac11));
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
