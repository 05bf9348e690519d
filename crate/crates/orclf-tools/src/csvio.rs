//! Trajectory CSV: `t,x_1..,u_1..,d_1..,V,absY`, 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use orclf_core::sim::{TrajMeta, TrajStatus, Trajectory};

use crate::{io_err, ToolError};

pub fn header(n: usize, m: usize, l: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    cols.extend((1..=l).map(|i| format!("d_{i}")));
    cols.push("V".into());
    cols.push("absY".into());
    cols.join(",")
}

fn num(s: &mut String, v: f64) {
    let _ = write!(s, "{v:.16e}");
}

pub fn to_csv(tr: &Trajectory) -> String {
    let mut s = header(tr.n, tr.m, tr.l);
    s.push('\n');
    for k in 0..tr.len() {
        num(&mut s, tr.t[k]);
        for v in tr.x_at(k).iter().chain(tr.u_at(k)).chain(tr.d_at(k)) {
            s.push(',');
            num(&mut s, *v);
        }
        s.push(',');
        num(&mut s, tr.v[k]);
        s.push(',');
        num(&mut s, tr.abs_y[k]);
        s.push('\n');
    }
    s
}

pub fn write_csv(tr: &Trajectory, path: &Path) -> Result<(), ToolError> {
    std::fs::write(path, to_csv(tr)).map_err(|e| io_err(path, e))
}

pub fn parse_csv(text: &str, meta: TrajMeta, status: TrajStatus) -> Result<Trajectory, ToolError> {
    let bad = |msg: String| ToolError::Config(format!("trajectory csv: {msg}"));
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = head.split(',').collect();
    let count = |p: &str| cols.iter().filter(|c| c.starts_with(p)).count();
    let (n, m, l) = (count("x_"), count("u_"), count("d_"));
    if head != header(n, m, l) {
        return Err(bad(format!("unexpected header `{head}`")));
    }
    let mut tr = Trajectory::empty(n, m, l, meta);
    tr.status = status;
    let width = 3 + n + m + l;
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
        if vals.len() != width {
            return Err(bad(format!("row {} has {} fields, expected {width}", row + 1, vals.len())));
        }
        let (x, rest) = vals[1..].split_at(n);
        let (u, rest) = rest.split_at(m);
        let (d, rest) = rest.split_at(l);
        tr.push(vals[0], x, u, d, rest[0], rest[1]);
    }
    Ok(tr)
}

pub fn read_csv(path: &Path, meta: TrajMeta, status: TrajStatus) -> Result<Trajectory, ToolError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_csv(&text, meta, status)
}
