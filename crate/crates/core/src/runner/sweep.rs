//! Master-equation sweeps over `(N, omega)` with checkpointed resume and
//! log-log slope fits.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{join, validate_value, Backend, Checker, Model, Observable, RunConfig};
use super::run::{execute, resolve_out_dir, write_row};
use crate::error::{Error, Result};
use crate::observables::csv_float;
use crate::spin::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reduction {
    MaxC2OverN2,
    MaxC3OverN3,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::MaxC2OverN2 => "max_c2_over_n2",
            Reduction::MaxC3OverN3 => "max_c3_over_n3",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [Reduction::MaxC2OverN2, Reduction::MaxC3OverN3]
            .into_iter()
            .find(|r| r.name() == s)
    }

    fn observable(self) -> Observable {
        match self {
            Reduction::MaxC2OverN2 => Observable::C2,
            Reduction::MaxC3OverN3 => Observable::C3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub n_atoms: Vec<usize>,
    pub omegas: Vec<f64>,
    pub reductions: Vec<Reduction>,
    /// Grid points evaluated concurrently.
    pub parallelism: usize,
}

impl SweepConfig {
    /// Grid in row-major `(N, omega)` order.
    pub fn points(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &n in &self.n_atoms {
            for &w in &self.omegas {
                out.push((n, w));
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "base": self.base.to_json(),
            "n_atoms": self.n_atoms,
            "omega": self.omegas,
            "reductions": self.reductions.iter().map(|r| r.name()).collect::<Vec<_>>(),
            "parallelism": self.parallelism,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("config serializes")
    }

    /// Configuration of one grid point.
    pub fn point_config(&self, n_atoms: usize, omega: f64) -> Result<RunConfig> {
        let base = match self.base.model {
            Model::Params(p) => p,
            Model::Schedule(_) => return Err(Error::Config(vec!["base: sweeps need params, not a schedule".into()])),
        };
        let mut cfg = self.base.clone();
        cfg.model = Model::Params(ModelParams::new(n_atoms, base.kappa(), omega, base.lambda())?);
        cfg.observables = self.reductions.iter().map(|r| r.observable()).collect();
        cfg.observables.sort();
        cfg.qfunction = None;
        cfg.output.prefix = format!("{}_n{}_w{}", self.base.output.prefix, n_atoms, omega);
        Ok(cfg)
    }
}

pub fn validate_sweep(text: &str) -> Result<SweepConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    validate_sweep_value(&value)
}

pub(crate) fn validate_sweep_value(value: &Value) -> Result<SweepConfig> {
    let mut c = Checker::default();
    let Some(top) = c.object(value, "(root)") else {
        return c.finish(None);
    };
    c.allow_keys(top, "", &["base", "n_atoms", "omega", "reductions", "parallelism"]);
    let base = match top.get("base") {
        Some(v) => match validate_value(v, "base") {
            Ok(b) => Some(b),
            Err(Error::Config(errs)) => {
                c.errors.extend(errs);
                None
            }
            Err(e) => {
                c.err("base", e);
                None
            }
        },
        None => {
            c.err("base", "missing required field");
            None
        }
    };
    if let Some(b) = &base {
        if b.backend != Backend::Master {
            c.err("base.backend", "sweeps run the master backend");
        }
        if matches!(b.model, Model::Schedule(_)) {
            c.err("base.schedule", "sweeps need params, not a schedule");
        }
    }
    let base_params = base.as_ref().and_then(|b| match b.model {
        Model::Params(p) => Some(p),
        Model::Schedule(_) => None,
    });

    let n_atoms = match top.get("n_atoms") {
        None => base_params.map(|p| vec![p.n_atoms()]),
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for (i, x) in items.iter().enumerate() {
                match x.as_u64() {
                    Some(n) if n >= 1 => out.push(n as usize),
                    _ => c.err(&format!("n_atoms[{i}]"), "expected a positive integer"),
                }
            }
            Some(out)
        }
        Some(_) => {
            c.err("n_atoms", "expected an array of positive integers");
            None
        }
    };
    let omegas = match top.get("omega") {
        None => base_params.map(|p| vec![p.omega()]),
        Some(v) => c.f64_list(v, "omega"),
    };
    if n_atoms.as_ref().is_some_and(Vec::is_empty) {
        c.err("n_atoms", "axis must not be empty");
    }
    if omegas.as_ref().is_some_and(Vec::is_empty) {
        c.err("omega", "axis must not be empty");
    }
    if let (Some(ns), Some(b)) = (&n_atoms, &base) {
        if ns.iter().any(|&n| n != b.n_atoms()) && !super::run::is_angles(b) {
            c.err("n_atoms", "varying N needs an initial state given by angles");
        }
    }
    if let (Some(ws), Some(p)) = (&omegas, base_params) {
        for (i, &w) in ws.iter().enumerate() {
            if let Err(e) = ModelParams::new(p.n_atoms(), p.kappa(), w, p.lambda()) {
                c.err(&format!("omega[{i}]"), e);
            }
        }
    }
    let reductions = match top.get("reductions") {
        None => Some(vec![Reduction::MaxC2OverN2, Reduction::MaxC3OverN3]),
        Some(Value::Array(items)) if !items.is_empty() => {
            let mut out = Vec::new();
            for (i, x) in items.iter().enumerate() {
                match x.as_str().and_then(Reduction::from_name) {
                    Some(r) => out.push(r),
                    None => c.err(
                        &format!("reductions[{i}]"),
                        "expected max_c2_over_n2 or max_c3_over_n3",
                    ),
                }
            }
            out.sort();
            out.dedup();
            Some(out)
        }
        Some(_) => {
            c.err("reductions", "expected a nonempty array");
            None
        }
    };
    let parallelism = match top.get("parallelism") {
        None | Some(Value::Null) => 1,
        Some(v) => match v.as_u64() {
            Some(p) if p >= 1 => p as usize,
            _ => {
                c.err(&join("", "parallelism"), "expected a positive integer");
                1
            }
        },
    };
    let cfg = (|| {
        Some(SweepConfig {
            base: base?,
            n_atoms: n_atoms?,
            omegas: omegas?,
            reductions: reductions?,
            parallelism,
        })
    })();
    c.finish(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_atoms: usize,
    pub omega: f64,
    pub max_c2_over_n2: Option<f64>,
    pub t_c2_peak: Option<f64>,
    pub max_c3_over_n3: Option<f64>,
    pub t_c3_peak: Option<f64>,
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn value(&self, r: Reduction) -> Option<f64> {
        match r {
            Reduction::MaxC2OverN2 => self.max_c2_over_n2,
            Reduction::MaxC3OverN3 => self.max_c3_over_n3,
        }
    }
}

/// Least-squares fit of `ln y = intercept + slope ln N` at one `omega`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub omega: f64,
    pub reduction: String,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// In grid order.
    pub points: Vec<SweepPoint>,
    pub slopes: Vec<SlopeFit>,
}

impl SweepOutput {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.ok()).count()
    }

    pub fn slope(&self, omega: f64, r: Reduction) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.omega == omega && s.reduction == r.name())
            .map(|s| s.slope)
    }
}

/// `(slope, intercept)` of the least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn fit_slopes(config: &SweepConfig, points: &[SweepPoint]) -> Vec<SlopeFit> {
    let mut out = Vec::new();
    for &w in &config.omegas {
        for &r in &config.reductions {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| p.omega == w && p.ok())
                .filter_map(|p| p.value(r).filter(|v| *v > 0.0).map(|v| ((p.n_atoms as f64).ln(), v.ln())))
                .unzip();
            if let Some((slope, intercept)) = linear_fit(&xs, &ys) {
                out.push(SlopeFit {
                    omega: w,
                    reduction: r.name().into(),
                    slope,
                    intercept,
                    points: xs.len(),
                });
            }
        }
    }
    out
}

fn evaluate_point(config: &SweepConfig, n_atoms: usize, omega: f64) -> SweepPoint {
    let mut point = SweepPoint {
        n_atoms,
        omega,
        max_c2_over_n2: None,
        t_c2_peak: None,
        max_c3_over_n3: None,
        t_c3_peak: None,
        error: None,
    };
    let result = config.point_config(n_atoms, omega).and_then(|c| execute(&c));
    match result {
        Ok(out) => {
            let s = out.summary;
            point.max_c2_over_n2 = s.max_c2_over_n2;
            point.t_c2_peak = s.peaks.get("c2").map(|p| p.t);
            point.max_c3_over_n3 = s.max_c3_over_n3;
            point.t_c3_peak = s.peaks.get("c3").map(|p| p.t);
        }
        Err(e) => point.error = Some(e.to_string()),
    }
    point
}

fn point_key(n: usize, w: f64) -> (usize, u64) {
    (n, w.to_bits())
}

/// Reads completed points from a checkpoint written for the same sweep.
fn load_checkpoint(path: &Path, header: &str) -> Result<BTreeMap<(usize, u64), SweepPoint>> {
    let mut done = BTreeMap::new();
    let Ok(file) = fs::File::open(path) else {
        return Ok(done);
    };
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(first)) if first == header => {}
        None => return Ok(done),
        _ => {
            return Err(Error::Config(vec![format!(
                "checkpoint {} belongs to a different sweep; remove it to start over",
                path.display()
            )]))
        }
    }
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted run is skipped
        if let Ok(p) = serde_json::from_str::<SweepPoint>(&line) {
            if p.ok() {
                done.insert(point_key(p.n_atoms, p.omega), p);
            }
        }
    }
    Ok(done)
}

/// Evaluates the grid without writing anything.
pub fn execute_sweep(config: &SweepConfig) -> Result<SweepOutput> {
    sweep_inner(config, None)
}

fn sweep_inner(config: &SweepConfig, checkpoint: Option<&Path>) -> Result<SweepOutput> {
    let header = json!({ "sweep": config.to_json() }).to_string();
    let done = match checkpoint {
        Some(p) => load_checkpoint(p, &header)?,
        None => BTreeMap::new(),
    };
    let writer = match checkpoint {
        Some(p) => {
            let fresh = done.is_empty();
            let file = if fresh {
                fs::File::create(p)?
            } else {
                OpenOptions::new().append(true).open(p)?
            };
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "{header}")?;
                w.flush()?;
            }
            Some(Mutex::new(w))
        }
        None => None,
    };
    let grid = config.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        grid.par_iter()
            .map(|&(n, w)| {
                if let Some(p) = done.get(&point_key(n, w)) {
                    return Ok(p.clone());
                }
                let p = evaluate_point(config, n, w);
                if let Some(wr) = &writer {
                    let mut wr = wr.lock().expect("checkpoint lock");
                    writeln!(wr, "{}", serde_json::to_string(&p)?)?;
                    wr.flush()?;
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let slopes = fit_slopes(config, &points);
    Ok(SweepOutput { points, slopes })
}

/// Runs the sweep with a checkpoint in `dir`, then writes the table, the
/// slope summary and a JSON sidecar.
pub fn sweep(config: &SweepConfig, out_dir: Option<&Path>) -> Result<(SweepOutput, Vec<PathBuf>)> {
    let dir = resolve_out_dir(&config.base, out_dir);
    fs::create_dir_all(&dir)?;
    let prefix = &config.base.output.prefix;
    let checkpoint = dir.join(format!("{prefix}_checkpoint.jsonl"));
    let out = sweep_inner(config, Some(&checkpoint))?;
    let mut files = vec![checkpoint];

    let table = dir.join(format!("{prefix}_sweep.csv"));
    let mut w = BufWriter::new(fs::File::create(&table)?);
    let mut header = vec!["n_atoms".to_string(), "omega".to_string()];
    for r in &config.reductions {
        header.push(r.name().into());
    }
    writeln!(w, "{}", header.join(","))?;
    for p in &out.points {
        let mut row = vec![p.n_atoms as f64, p.omega];
        for &r in &config.reductions {
            row.push(p.value(r).unwrap_or(f64::NAN));
        }
        write_row(&mut w, &row)?;
    }
    w.flush()?;
    files.push(table);

    let slopes = dir.join(format!("{prefix}_slopes.csv"));
    let mut w = BufWriter::new(fs::File::create(&slopes)?);
    writeln!(w, "omega,reduction,slope,intercept,points")?;
    for s in &out.slopes {
        writeln!(
            w,
            "{},{},{},{},{}",
            csv_float(s.omega),
            s.reduction,
            csv_float(s.slope),
            csv_float(s.intercept),
            s.points
        )?;
    }
    w.flush()?;
    files.push(slopes);

    let summary = dir.join(format!("{prefix}_sweep_summary.json"));
    let mut w = BufWriter::new(fs::File::create(&summary)?);
    serde_json::to_writer_pretty(
        &mut w,
        &json!({
            "points": out.points,
            "slopes": out.slopes,
            "failures": out.failures(),
            "config": config.to_json(),
        }),
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    files.push(summary);
    Ok((out, files))
}
