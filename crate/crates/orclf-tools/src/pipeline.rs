//! synthesize, simulate, verify and sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use orclf_core::interleave::{self, PairTables};
use orclf_core::scheduler::{self, BandEntry, Scheduler};
use orclf_core::sim::{self, Law, TrajMeta, TrajStatus, Trajectory};
use orclf_core::stabilize::{FeedbackLaw, LawKind};
use orclf_core::verify::{self, Finding, StabilityReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{self, Archive, Summary};
use crate::config::{self, Built, RunConfig};
use crate::csvio;
use crate::{io_err, ToolError};

pub fn archive_path(out: &Path) -> PathBuf {
    out.join("archive.json")
}

pub fn sim_dir(out: &Path) -> PathBuf {
    out.join("sim")
}

fn mkdir(p: &Path) -> Result<(), ToolError> {
    std::fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write(p: &Path, text: &str) -> Result<(), ToolError> {
    std::fs::write(p, text).map_err(|e| io_err(p, e))
}

fn schedulers(built: &Built) -> Vec<&Scheduler> {
    match built {
        Built::Segment(_) => vec![],
        Built::Scheduler(s) => vec![s],
        Built::Pair(p) => vec![&p.even, &p.odd],
    }
}

/// Band indices and unit intervals the working region touches.
fn region_bands(cfg: &RunConfig, s: &Scheduler) -> Vec<(i32, i64)> {
    let orclf = &s.fb.orclf;
    let r = &cfg.region;
    let mut bmax: f64 = 0.0;
    for k in 0..=32 {
        bmax = bmax.max((orclf.beta)(r.t_min + (r.t_max - r.t_min) * k as f64 / 32.0));
    }
    let hi = r.v_ceil.min(orclf.a2.eval(bmax * r.r_max));
    let lo = r.v_floor.max(s.sched.r(s.sched.i_min - 1));
    let (i0, _) = s.sched.band_of(lo);
    let (i1, _) = s.sched.band_of(hi);
    let j0 = r.t_min.floor() as i64;
    let j1 = (r.t_max.ceil() as i64 - 1).max(j0);
    let mut out = Vec::new();
    for i in i0..=i1 {
        for j in j0..=j1 {
            out.push((i, j));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub digest: String,
    pub summary: Summary,
    pub table: String,
}

pub fn cmd_synthesize(cfg: &RunConfig, out: &Path) -> Result<SynthOutcome, ToolError> {
    mkdir(out)?;
    let kind = LawKind::parse(&cfg.law.kind)?;
    let fb = Arc::new(cfg.segment_feedback()?);
    fb.build_covering(&cfg.working_region())?;
    let built = config::build_engine(cfg, fb.clone())?;
    // the uniform law checks its preconditions here
    config::make_law(kind, &built)?;
    for s in schedulers(&built) {
        region_bands(cfg, s)
            .par_iter()
            .map(|&(i, j)| s.band_grid(i, j).map(|_| ()))
            .collect::<Result<Vec<()>, _>>()?;
    }
    let entries: Vec<Vec<BandEntry>> = schedulers(&built).iter().map(|s| s.entries()).collect();
    let tables: Option<PairTables> = match &built {
        Built::Pair(p) => Some(p.tables.clone()),
        _ => None,
    };
    let all: Vec<&BandEntry> = entries.iter().flatten().collect();
    let rho_samples = match &tables {
        Some(t) => (t.window.i_min..=t.window.i_max).map(|i| {
            let s = 2f64.powi(i);
            (s, t.rho_tilde(s))
        }).collect(),
        None => vec![],
    };
    let summary = Summary {
        system: fb.model.name.clone(),
        law: kind.as_str().into(),
        cells: fb.cell_count(),
        band_entries: all.len(),
        n_min: all.iter().map(|e| e.n).min().unwrap_or(0),
        n_max: all.iter().map(|e| e.n).max().unwrap_or(0),
        n_cert_max: all.iter().map(|e| e.n_cert).max().unwrap_or(0),
        clamped_entries: all.iter().filter(|e| e.clamped()).count(),
        rho_tilde: rho_samples,
    };
    let ar = Archive {
        format: archive::FORMAT,
        config: toml::to_string(cfg).map_err(|e| ToolError::Config(e.to_string()))?,
        cells: fb.export_cells(),
        entries,
        tables: tables.clone(),
        summary: summary.clone(),
    };
    let digest = ar.save(&archive_path(out))?;
    let mut table = String::new();
    let _ = writeln!(
        table,
        "system {}  law {}  cells {}  band entries {}  N {}..{} (certified up to {}, {} clamped)",
        summary.system,
        summary.law,
        summary.cells,
        summary.band_entries,
        summary.n_min,
        summary.n_max,
        summary.n_cert_max,
        summary.clamped_entries
    );
    for (k, s) in schedulers(&built).iter().enumerate() {
        let _ = writeln!(table, "schedule {} ({})", k, s.sched.id);
        table.push_str(&s.table());
    }
    if let Some(t) = &tables {
        table.push_str("rho_tilde samples\n");
        for (s, r) in &summary.rho_tilde {
            let _ = writeln!(table, "{s:.6e}\t{r:.6e}");
        }
        write(&out.join("rho_tilde.txt"), &t.rho_table(8))?;
    }
    write(&out.join("bands.txt"), &table)?;
    let _ = writeln!(table, "archive digest {digest}");
    Ok(SynthOutcome { digest, summary, table })
}

/// The law rebuilt from an archive, with its cached cells and band entries.
pub struct Loaded {
    pub cfg: RunConfig,
    pub law: FeedbackLaw,
    pub built: Built,
    pub archive: Archive,
}

pub fn load_law(out: &Path) -> Result<Loaded, ToolError> {
    let path = archive_path(out);
    if !path.exists() {
        return Err(ToolError::Archive(format!("missing archive {}; run synthesize first", path.display())));
    }
    let ar = Archive::load(&path)?;
    let cfg = RunConfig::from_toml(&ar.config)?;
    let fb = Arc::new(cfg.segment_feedback()?);
    fb.import_cells(ar.cells.clone())?;
    let built = config::build_engine(&cfg, fb)?;
    let scheds = schedulers(&built);
    if scheds.len() != ar.entries.len() {
        return Err(ToolError::Archive("band tables do not match the law".into()));
    }
    for (s, e) in scheds.iter().zip(&ar.entries) {
        s.import_entries(e.clone());
    }
    let law = config::make_law(LawKind::parse(&cfg.law.kind)?, &built)?;
    Ok(Loaded {
        cfg,
        law,
        built,
        archive: ar,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: usize,
    pub file: String,
    pub meta: TrajMeta,
    pub status: TrajStatus,
    pub samples: usize,
    pub steps: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub written: usize,
    pub failures: Vec<String>,
}

/// Runs the batch plan of `cfg` against the archived law in `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimOutcome, ToolError> {
    let loaded = load_law(out)?;
    let law = &loaded.law;
    let items = cfg.batch_items(law.model().n)?;
    let results = sim::batch(law, &items, cfg.batch.horizon, &cfg.step_policy());
    let dir = sim_dir(out);
    mkdir(&dir)?;
    let mut index = Vec::new();
    let mut failures = Vec::new();
    for (it, r) in items.iter().zip(results) {
        let (tr, err) = match r {
            Ok(t) => (t, None),
            Err(f) => {
                failures.push(format!("trajectory {}: {}", it.index, f.error));
                (f.partial, Some(f.error.to_string()))
            }
        };
        let file = format!("traj_{:05}.csv", it.index);
        csvio::write_csv(&tr, &dir.join(&file))?;
        index.push(IndexEntry {
            index: it.index,
            file,
            meta: tr.meta.clone(),
            status: tr.status.clone(),
            samples: tr.len(),
            steps: tr.steps,
            error: err,
        });
    }
    let text = serde_json::to_string_pretty(&index).map_err(|e| ToolError::Io(e.to_string()))?;
    write(&dir.join("index.json"), &(text + "\n"))?;
    Ok(SimOutcome {
        written: index.len(),
        failures,
    })
}

pub fn read_batch(dir: &Path) -> Result<Vec<Trajectory>, ToolError> {
    let ip = dir.join("index.json");
    let text = std::fs::read_to_string(&ip).map_err(|e| io_err(&ip, e))?;
    let index: Vec<IndexEntry> = serde_json::from_str(&text).map_err(|e| ToolError::Config(format!("{}: {e}", ip.display())))?;
    index
        .into_iter()
        .map(|e| csvio::read_csv(&dir.join(&e.file), e.meta, e.status))
        .collect()
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub passed: bool,
    pub text: String,
    pub reports: Vec<StabilityReport>,
}

fn local_report(property: verify::Property, batch: &[Trajectory], findings: Vec<Finding>) -> StabilityReport {
    let mut r = StabilityReport::new(property, batch);
    r.findings = findings;
    r
}

fn per_traj(name: &str, batch: &[Trajectory], f: impl Fn(&Trajectory) -> orclf_core::model::CheckEntry) -> Finding {
    let mut out = Finding {
        check: name.into(),
        cell: "all".into(),
        checked: 0,
        violations: 0,
        worst_margin: 0.0,
        witness: None,
    };
    let mut worst = f64::INFINITY;
    for (k, tr) in batch.iter().enumerate() {
        let e = f(tr);
        out.checked += e.checked;
        out.violations += e.violations;
        if e.checked > 0 && (e.worst_margin < worst || e.worst_margin.is_nan()) {
            worst = e.worst_margin;
            if e.violations > 0 {
                out.witness = Some(verify::ReplayWitness {
                    index: k,
                    t0: tr.meta.t0,
                    x0: tr.meta.x0.clone(),
                    strategy: tr.meta.strategy.clone(),
                    horizon: tr.meta.horizon,
                    t: e.witness.as_ref().map_or(tr.meta.t0, |w| w.t),
                    margin: e.worst_margin,
                });
            }
        }
    }
    if out.checked > 0 {
        out.worst_margin = worst;
    }
    out
}

pub fn run_checks(cfg: &RunConfig, batch: &[Trajectory], loaded: Option<&Loaded>) -> Result<VerifyOutcome, ToolError> {
    let v = &cfg.verify;
    let mut reports = Vec::new();
    let tables = || -> Result<PairTables, ToolError> {
        if let Some(t) = loaded.and_then(|l| l.archive.tables.clone()) {
            return Ok(t);
        }
        let (_, o) = cfg.build_system()?;
        Ok(PairTables::build(&o, cfg.window())?)
    };
    let orclf = || -> Result<orclf_core::model::Orclf, ToolError> { Ok(cfg.build_system()?.1) };
    for c in &v.checks {
        match c.as_str() {
            "rfc" => reports.push(verify::check_rfc(batch)),
            "rgaos" => reports.push(verify::check_rgaos(batch, &v.eps, &v.t_list, &v.r_list)),
            "urgaos" => reports.push(verify::check_urgaos(batch, &v.eps, &v.r_list)),
            "two_interval" => {
                let t = tables()?;
                reports.push(verify::check_two_interval(batch, &t, &|s: f64| 18.0 * (-s).exp()));
            }
            "deadzone" => {
                let t = tables()?;
                let f = verify::check_deadzone(batch, &t);
                reports.push(local_report(verify::Property::Rgaos, batch, f));
            }
            "uniform" => {
                let t = tables()?;
                let o = orclf()?;
                for &eps in &v.eps {
                    for &r in &v.r_list {
                        reports.push(verify::check_uniform(batch, &o, &t, eps, r));
                    }
                }
            }
            "interleave" => {
                let t = tables()?;
                let f = vec![
                    per_traj("nine_fold", batch, interleave::check_nine_fold),
                    per_traj("three_fold", batch, interleave::check_three_fold),
                    per_traj("two_step_decrease", batch, |tr| interleave::check_two_step_decrease(tr, &t)),
                ];
                reports.push(local_report(verify::Property::Rgaos, batch, f));
            }
            "scheduler" => {
                let l = loaded.ok_or_else(|| ToolError::Archive("the scheduler check needs the archive".into()))?;
                let s = match &l.built {
                    Built::Scheduler(s) => s.clone(),
                    _ => return Err(ToolError::Config("the scheduler check needs law.kind = raw_scheduler".into())),
                };
                let grid = |tr: &Trajectory| s.grid_n(tr.meta.t0, &tr.meta.x0);
                let mut ns = Vec::with_capacity(batch.len());
                for tr in batch {
                    ns.push(grid(tr)?);
                }
                let f = vec![
                    per_traj("containment", batch, |tr| scheduler::check_containment(tr, &s.sched)),
                    per_traj("step_decrease", batch, |tr| {
                        let k = batch.iter().position(|b| std::ptr::eq(b, tr)).unwrap_or(0);
                        let i = s.sched.guard_band_of(tr.v.first().copied().unwrap_or(0.0));
                        scheduler::check_step_decrease(tr, &s.sched, i, ns[k])
                    }),
                ];
                reports.push(local_report(verify::Property::Rgaos, batch, f));
            }
            other => return Err(ToolError::Config(format!("unknown check `{other}`"))),
        }
    }
    let mut text = String::new();
    if reports.is_empty() {
        text.push_str("no checks enabled\n");
    }
    for r in &reports {
        text.push_str(&r.to_text());
    }
    let passed = reports.iter().all(|r| r.passed());
    Ok(VerifyOutcome { passed, text, reports })
}

/// Verifies the CSV batch in `dir`; writes `report.txt` and `summary.json` to `out`.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, dir: &Path) -> Result<VerifyOutcome, ToolError> {
    let batch = read_batch(dir)?;
    let loaded = if archive_path(out).exists() {
        Some(load_law(out)?)
    } else {
        None
    };
    let res = run_checks(cfg, &batch, loaded.as_ref())?;
    mkdir(out)?;
    write(&out.join("report.txt"), &res.text)?;
    let summary = serde_json::json!({
        "passed": res.passed,
        "trajectories": batch.len(),
        "reports": res.reports,
    });
    let s = serde_json::to_string_pretty(&summary).map_err(|e| ToolError::Io(e.to_string()))?;
    write(&out.join("summary.json"), &(s + "\n"))?;
    Ok(res)
}

fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), ToolError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, p) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| ToolError::Config(format!("sweep key `{key}`: `{p}` is not a table")))?;
        if k + 1 == parts.len() {
            table.insert(p.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// Expands `[sweep] params` into the cartesian product of configurations.
pub fn sweep_configs(cfg: &RunConfig) -> Result<Vec<(String, RunConfig)>, ToolError> {
    let base = toml::Value::try_from(cfg).map_err(|e| ToolError::Config(e.to_string()))?;
    let mut combos: Vec<(String, toml::Value)> = vec![(String::new(), base)];
    for (key, vals) in &cfg.sweep.params {
        if vals.is_empty() {
            return Err(ToolError::Config(format!("sweep key `{key}` has no values")));
        }
        let mut next = Vec::new();
        for (label, v) in &combos {
            for val in vals {
                let mut c = v.clone();
                set_dotted(&mut c, key, val.clone())?;
                let l = if label.is_empty() {
                    format!("{key}={val}")
                } else {
                    format!("{label} {key}={val}")
                };
                next.push((l, c));
            }
        }
        combos = next;
    }
    combos
        .into_iter()
        .map(|(l, mut v)| {
            if let Some(t) = v.as_table_mut() {
                t.remove("sweep");
            }
            let text = toml::to_string(&v).map_err(|e| ToolError::Config(e.to_string()))?;
            Ok((l, RunConfig::from_toml(&text)?))
        })
        .collect()
}

/// Runs synthesize, simulate and verify for every sweep case; the code is
/// the worst exit code over the cases.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(i32, String), ToolError> {
    let cases = sweep_configs(cfg)?;
    mkdir(out)?;
    let mut text = String::new();
    let mut worst = 0;
    for (k, (label, c)) in cases.iter().enumerate() {
        let dir = out.join(format!("case_{k:03}"));
        let code = (|| -> Result<i32, ToolError> {
            cmd_synthesize(c, &dir)?;
            let s = cmd_simulate(c, &dir)?;
            if !s.failures.is_empty() {
                return Ok(3);
            }
            let v = cmd_verify(c, &dir, &sim_dir(&dir))?;
            Ok(if v.passed { 0 } else { 1 })
        })()
        .unwrap_or_else(|e| e.exit_code());
        // 2 outranks 1 and 3 outranks 2
        worst = worst.max(code);
        let _ = writeln!(text, "case_{k:03}\t{label}\texit={code}");
    }
    write(&out.join("sweep.txt"), &text)?;
    Ok((worst, text))
}
