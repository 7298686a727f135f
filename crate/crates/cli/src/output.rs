//! CSV tables and the run manifest.
//!
//! Every CSV starts with a `# config_sha256=…,seed=…` line, then a header.
//! Bodies contain no timestamps, so reruns with the same seeds are
//! byte-identical. Timing lives only in `manifest.json`.
//!
//! | file | columns |
//! |------|---------|
//! | `report.csv` | `quantity,value,target,tolerance,pass` |
//! | `plot.csv` | `series,x,y,yerr` (long format) |
//! | `trajectories.csv` | `trajectory_id,n,outcome,step_prob` |
//! | `measures.csv` | `word,start,mode,value,stderr` |
//! | `lln.csv` | `pattern,trajectories,steps,mean,stderr,target,target_stderr,z,z_crit,pass` |
//! | `annealed_lln.csv` | `n,term,cesaro,target,gap` |
//! | `stationary.csv` | `anchor,point,row,col,re,im` |
//! | `cells.csv` | `omega,theta,point,mean,stderr` |

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

/// Identifies the inputs behind every emitted number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!("# config_sha256={},seed={}\n", self.config_hash, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub quantity: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ReportRow {
    /// `|value − target| ≤ tolerance`.
    pub fn within(quantity: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        ReportRow { quantity: quantity.into(), value, target, tolerance, pass: (value - target).abs() <= tolerance }
    }

    /// `value ≤ tolerance`.
    pub fn at_most(quantity: impl Into<String>, value: f64, tolerance: f64) -> Self {
        ReportRow { quantity: quantity.into(), value, target: 0.0, tolerance, pass: value <= tolerance }
    }

    pub fn flag(quantity: impl Into<String>, ok: bool) -> Self {
        ReportRow { quantity: quantity.into(), value: ok as u8 as f64, target: 1.0, tolerance: 0.0, pass: ok }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
}

/// Shortest round-trip formatting, in exponent form for very small or
/// large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn report_csv(prov: &Provenance, rows: &[ReportRow]) -> String {
    let mut s = prov.header();
    s.push_str("quantity,value,target,tolerance,pass\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.quantity, num(r.value), num(r.target), num(r.tolerance), verdict(r.pass)).unwrap();
    }
    s
}

pub fn plot_csv(prov: &Provenance, rows: &[PlotRow]) -> String {
    let mut s = prov.header();
    s.push_str("series,x,y,yerr\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.series, num(r.x), num(r.y), num(r.yerr)).unwrap();
    }
    s
}

/// Generic table with the provenance line prepended.
pub fn table_csv(prov: &Provenance, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = prov.header();
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub status: String,
    pub outputs: Vec<String>,
}

pub fn write_manifest(path: &Path, m: &Manifest) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}
