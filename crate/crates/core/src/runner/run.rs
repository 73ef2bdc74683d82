//! Backend dispatch, per-sample observables and output files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Backend, InitialState, Model, Observable, PulseTime, RunConfig};
use crate::cumulant::{integrate_cumulant2, CumulantInitial, SECOND_PAIRS};
use crate::error::{Error, Result};
use crate::lindblad::{evolve, uniform_times, DensityMatrix, EvolveOptions};
use crate::meanfield::{integrate_meanfield, BlochAngles};
use crate::observables::{c_total, csv_float, chi_squared, cn_total_symmetrized, q_function, MomentTable, QGrid};
use crate::schedule::{peak_c3_time, Drive, RampSchedule};
use crate::spin::{CollectiveOperators, C64};
use crate::trajectories::{average_records, run_trajectory, TrajectoryConfig, TrajectoryRecord};

/// Time and value of a column maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub steps_accepted: Option<usize>,
    pub steps_rejected: Option<usize>,
    pub max_trace_drift: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub total_jumps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub backend: String,
    pub n_atoms: usize,
    pub t_span: (f64, f64),
    pub samples: usize,
    /// `t_pulse` actually used by a schedule run.
    pub t_pulse: Option<f64>,
    pub peaks: BTreeMap<String, Peak>,
    pub max_c2_over_n2: Option<f64>,
    pub max_c3_over_n3: Option<f64>,
    /// `<J,-J| rho |J,-J>` at the final sample; the cumulant backend has no
    /// state to evaluate it on.
    pub final_south_pole_fidelity: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// In-memory result of [`execute`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub q_snapshots: Vec<(f64, QGrid)>,
    /// Per-trajectory records when individual output was requested.
    pub trajectories: Vec<TrajectoryRecord>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.column("t").unwrap_or_default()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            write_row(&mut w, row)?;
        }
        Ok(())
    }
}

pub(crate) fn write_row<W: Write>(w: &mut W, row: &[f64]) -> Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        w.write_all(csv_float(*v).as_bytes())?;
    }
    w.write_all(b"\n")?;
    Ok(())
}

const SECOND_NAMES: [&str; 6] = ["jxx", "jxy", "jxz", "jyy", "jyz", "jzz"];

/// Column names in output order for `config`.
pub fn columns(config: &RunConfig) -> Vec<String> {
    let mut c = vec!["t".to_string()];
    let b = config.backend;
    if config.wants(Observable::Moments) {
        if b == Backend::MeanField {
            c.extend(["theta", "phi"].map(String::from));
        }
        c.extend(["jx", "jy", "jz"].map(String::from));
        if b == Backend::Trajectories {
            c.extend(["jx_se", "jy_se", "jz_se"].map(String::from));
        }
        if b != Backend::MeanField {
            c.extend(SECOND_NAMES.map(String::from));
        }
        if matches!(b, Backend::Master | Backend::Trajectories) {
            c.push("p_south".into());
        }
    }
    if config.wants(Observable::Chi2) {
        c.extend(["chi2", "phi_max", "phi_min"].map(String::from));
    }
    if config.wants(Observable::C2) {
        c.push("c2".into());
    }
    if config.wants(Observable::C3) {
        c.push("c3".into());
    }
    if config.wants(Observable::Cn) {
        c.push(format!("c{}_sym", config.cn_order));
    }
    c
}

/// Moment data of one sample, whatever the backend.
struct Sample<'a> {
    t: f64,
    angles: Option<BlochAngles>,
    mean_se: Option<[f64; 3]>,
    table: Option<&'a MomentTable>,
    first: [f64; 3],
    p_south: f64,
}

fn sample_row(config: &RunConfig, s: &Sample) -> Result<Vec<f64>> {
    let n = config.n_atoms();
    let mut row = vec![s.t];
    let b = config.backend;
    if config.wants(Observable::Moments) {
        if let Some(a) = s.angles {
            row.extend([a.theta, a.phi]);
        }
        row.extend(s.first);
        if let Some(se) = s.mean_se {
            row.extend(se);
        }
        if let Some(t) = s.table {
            for &(j, k) in &SECOND_PAIRS {
                row.push((0.5 * (t.get(&[j, k]) + t.get(&[k, j]))).re);
            }
        }
        if matches!(b, Backend::Master | Backend::Trajectories) {
            row.push(s.p_south);
        }
    }
    let table = s.table;
    if config.wants(Observable::Chi2) {
        match chi_squared(table.expect("table for chi2"), n) {
            Ok(c) => row.extend([c.chi2, c.phi_max, c.phi_min]),
            Err(Error::UndefinedMeanSpin { .. }) => row.extend([f64::NAN; 3]),
            Err(e) => return Err(e),
        }
    }
    if config.wants(Observable::C2) {
        row.push(c_total(table.expect("table for c2"), 2)?);
    }
    if config.wants(Observable::C3) {
        row.push(c_total(table.expect("table for c3"), 3)?);
    }
    if config.wants(Observable::Cn) {
        row.push(cn_total_symmetrized(table.expect("table for cn"), config.cn_order)?);
    }
    Ok(row)
}

fn table_order(config: &RunConfig) -> usize {
    let mut order = 1;
    if config.wants(Observable::Moments) || config.wants(Observable::Chi2) || config.wants(Observable::C2) {
        order = 2;
    }
    if config.wants(Observable::C3) {
        order = 3;
    }
    if config.wants(Observable::Cn) {
        order = order.max(config.cn_order);
    }
    order
}

/// Drive of the run, resolving an automatic pulse time.
pub fn build_drive(config: &RunConfig, t_span: (f64, f64)) -> Result<(Box<dyn Drive>, Option<f64>)> {
    match &config.model {
        Model::Params(p) => Ok((Box::new(*p), None)),
        Model::Schedule(s) => {
            let t_pulse = match s.t_pulse {
                PulseTime::Fixed(t) => t,
                PulseTime::PeakC3 => {
                    let probe = s.with_t_pulse(f64::MAX)?;
                    let psi = config.initial.to_vector(s.n_atoms)?;
                    let samples = config.time.samples.max(101);
                    peak_c3_time(&probe, &psi, t_span, samples, config.tolerances.ode)?.t_peak
                }
            };
            let schedule: RampSchedule = s.with_t_pulse(t_pulse)?;
            Ok((Box::new(schedule), Some(t_pulse)))
        }
    }
}

struct Grid {
    times: Vec<f64>,
    csv: Vec<bool>,
    q: Vec<bool>,
}

fn sample_grid(config: &RunConfig, t_span: (f64, f64)) -> Grid {
    let csv_times = uniform_times(t_span.0, t_span.1, config.time.samples);
    let q_times = config.qfunction.as_ref().map(|q| q.times.clone()).unwrap_or_default();
    let mut all: Vec<(f64, bool, bool)> = csv_times.iter().map(|&t| (t, true, false)).collect();
    for t in q_times {
        match all.iter_mut().find(|e| e.0 == t) {
            Some(e) => e.2 = true,
            None => all.push((t, false, true)),
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    Grid {
        times: all.iter().map(|e| e.0).collect(),
        csv: all.iter().map(|e| e.1).collect(),
        q: all.iter().map(|e| e.2).collect(),
    }
}

fn peaks(columns: &[String], rows: &[Vec<f64>]) -> BTreeMap<String, Peak> {
    let mut out = BTreeMap::new();
    for (k, name) in columns.iter().enumerate() {
        if !(name == "chi2" || name == "c2" || name == "c3" || name.ends_with("_sym")) {
            continue;
        }
        let best = rows
            .iter()
            .filter(|r| !r[k].is_nan())
            .max_by(|a, b| a[k].total_cmp(&b[k]));
        if let Some(r) = best {
            out.insert(name.clone(), Peak { t: r[0], value: r[k] });
        }
    }
    out
}

/// Runs the configured backend and evaluates every requested observable,
/// without touching the file system.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    let t_span = config.t_span()?;
    let (drive, t_pulse) = build_drive(config, t_span)?;
    let grid = sample_grid(config, t_span);
    let n = config.n_atoms();
    let columns = columns(config);
    let mut rows = Vec::with_capacity(config.time.samples);
    let mut q_snapshots = Vec::new();
    let mut trajectories = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let mut final_fidelity = None;

    match config.backend {
        Backend::MeanField => {
            let (theta, phi) = config.initial.angles(n)?;
            let traj = integrate_meanfield(
                BlochAngles::new(theta, phi),
                drive.as_ref(),
                t_span,
                &grid.times,
                config.tolerances.ode,
            )?;
            let spins = traj.mean_spin(n);
            for (i, &t) in traj.times.iter().enumerate() {
                let s = Sample {
                    t,
                    angles: Some(traj.angles[i]),
                    mean_se: None,
                    table: None,
                    first: spins[i],
                    p_south: 0.0,
                };
                rows.push(sample_row(config, &s)?);
            }
            if let Some(a) = traj.angles.last() {
                // |<J,-J|theta,phi>|^2 = sin^(2N)(theta/2)
                final_fidelity = Some((2.0 * n as f64 * (a.theta / 2.0).sin().ln()).exp());
            }
        }
        Backend::Cumulant2 => {
            let psi = config.initial.to_vector(n)?;
            let traj = integrate_cumulant2(
                &CumulantInitial::State(psi),
                drive.as_ref(),
                t_span,
                &grid.times,
                config.tolerances.ode,
            )?;
            for (i, &t) in traj.times.iter().enumerate() {
                let m = traj.moments[i];
                let table = MomentTable::from_second_order(m.first, m.second);
                let s = Sample {
                    t,
                    angles: None,
                    mean_se: None,
                    table: Some(&table),
                    first: m.first,
                    p_south: 0.0,
                };
                rows.push(sample_row(config, &s)?);
            }
        }
        Backend::Master => {
            let ops = CollectiveOperators::new(n)?;
            let rho0 = DensityMatrix::from_pure(&config.initial.to_vector(n)?);
            let opts = EvolveOptions {
                tol: config.tolerances.ode,
                check_positivity: config.tolerances.check_positivity,
                trace_abort: config.tolerances.trace_abort,
                ..EvolveOptions::default()
            };
            let order = table_order(config);
            let q = config.qfunction.as_ref();
            let mut idx = 0;
            let report = evolve(&rho0, drive.as_ref(), t_span, &grid.times, &opts, |t, rho| {
                if grid.csv[idx] {
                    let table = MomentTable::from_density(rho, &ops, order)?;
                    let s = Sample {
                        t,
                        angles: None,
                        mean_se: None,
                        table: Some(&table),
                        first: table.mean_spin(),
                        p_south: rho.south_pole_fidelity(),
                    };
                    rows.push(sample_row(config, &s)?);
                }
                if grid.q[idx] {
                    let spec = q.expect("q grid requested");
                    q_snapshots.push((t, q_function(rho, spec.n_theta, spec.n_phi)?));
                }
                if idx + 1 == grid.times.len() {
                    final_fidelity = Some(rho.south_pole_fidelity());
                }
                idx += 1;
                Ok(())
            })?;
            diagnostics.steps_accepted = Some(report.stats.accepted);
            diagnostics.steps_rejected = Some(report.stats.rejected);
            diagnostics.max_trace_drift = Some(report.max_trace_drift);
            diagnostics.min_eigenvalue = report.min_eigenvalue;
        }
        Backend::Trajectories => {
            let spec = config.trajectories.unwrap_or_default();
            let psi0 = config.initial.to_vector(n)?;
            let mut tc = TrajectoryConfig::new(spec.n_trajectories, config.seed, grid.times.clone());
            tc.dt_max = spec.dt_max;
            tc.jump_tolerance = spec.jump_tolerance;
            tc.record_second_moments = table_order(config) >= 2;
            tc.record_states = config.qfunction.is_some();
            let records: Vec<TrajectoryRecord> = (0..spec.n_trajectories)
                .into_par_iter()
                .map(|i| {
                    run_trajectory(&psi0, drive.as_ref(), t_span, &tc, i).map_err(|e| Error::Trajectory {
                        index: i,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_>>()?;
            let avg = average_records(&records);
            for (i, &t) in avg.times.iter().enumerate() {
                if grid.csv[i] {
                    let table = tc
                        .record_second_moments
                        .then(|| MomentTable::from_second_order(avg.mean_spin[i], avg.second_moments[i]));
                    let s = Sample {
                        t,
                        angles: None,
                        mean_se: Some(avg.mean_spin_se[i]),
                        table: table.as_ref(),
                        first: avg.mean_spin[i],
                        p_south: avg.south_pole_population[i],
                    };
                    rows.push(sample_row(config, &s)?);
                }
                if grid.q[i] {
                    let q = config.qfunction.as_ref().expect("q grid requested");
                    let rho = mixture(&records, i, n);
                    q_snapshots.push((t, q_function(&rho, q.n_theta, q.n_phi)?));
                }
            }
            final_fidelity = avg.south_pole_population.last().copied();
            diagnostics.total_jumps = Some(avg.total_jumps);
            if spec.write_individual {
                trajectories = records;
                for r in trajectories.iter_mut() {
                    r.states.clear();
                }
            }
        }
    }

    let peaks = peaks(&columns, &rows);
    let nf = n as f64;
    let summary = RunSummary {
        backend: config.backend.name().into(),
        n_atoms: n,
        t_span,
        samples: rows.len(),
        t_pulse,
        max_c2_over_n2: peaks.get("c2").map(|p| p.value / (nf * nf)),
        max_c3_over_n3: peaks.get("c3").map(|p| p.value / (nf * nf * nf)),
        peaks,
        final_south_pole_fidelity: final_fidelity,
        diagnostics,
    };
    Ok(RunOutput {
        columns,
        rows,
        q_snapshots,
        trajectories,
        summary,
    })
}

/// `(1/M) sum |psi><psi|` over the trajectory states at sample `i`.
fn mixture(records: &[TrajectoryRecord], i: usize, n: usize) -> DensityMatrix {
    let d = n + 1;
    let mut rho = DMatrix::<C64>::zeros(d, d);
    for r in records {
        let psi = &r.states[i].amplitudes;
        rho += psi * psi.adjoint();
    }
    rho /= C64::new(records.len() as f64, 0.0);
    DensityMatrix { rho }
}

/// Output directory: explicit override, then the config, then
/// `SUPERPULSE_OUT_DIR`, then `superpulse-out`.
pub fn resolve_out_dir(config: &RunConfig, override_dir: Option<&Path>) -> PathBuf {
    if let Some(d) = override_dir {
        return d.to_path_buf();
    }
    if let Some(d) = &config.output.dir {
        return PathBuf::from(d);
    }
    default_out_dir()
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(super::OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("superpulse-out"))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes the CSV series, Q snapshots, optional per-trajectory series and
/// the JSON summary into `dir`. Returns the written paths.
pub fn write_outputs(config: &RunConfig, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let prefix = &config.output.prefix;
    let mut files = Vec::new();

    let csv = dir.join(format!("{prefix}.csv"));
    let mut w = create(&csv)?;
    out.write_csv(&mut w)?;
    w.flush()?;
    files.push(csv);

    let mut snapshots = Vec::new();
    for (k, (t, grid)) in out.q_snapshots.iter().enumerate() {
        let path = dir.join(format!("{prefix}_q{k:03}.csv"));
        let mut w = create(&path)?;
        grid.write_csv(&mut w)?;
        w.flush()?;
        snapshots.push(json!({
            "t": t,
            "file": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "normalization": grid.normalization(),
            "max": grid.max_value(),
        }));
        files.push(path);
    }

    if !out.trajectories.is_empty() {
        let path = dir.join(format!("{prefix}_trajectories.csv"));
        let mut w = create(&path)?;
        writeln!(w, "trajectory,t,jx,jy,jz,jumps")?;
        for r in &out.trajectories {
            for (i, &t) in r.times.iter().enumerate() {
                let jumps = r.jump_times.iter().filter(|&&tj| tj <= t).count();
                let m = r.mean_spin[i];
                write_row(&mut w, &[r.index as f64, t, m[0], m[1], m[2], jumps as f64])?;
            }
        }
        w.flush()?;
        files.push(path);
    }

    let summary_path = dir.join(format!("{prefix}_summary.json"));
    let mut summary = serde_json::to_value(&out.summary)?;
    if let Value::Object(m) = &mut summary {
        m.insert("columns".into(), json!(out.columns));
        m.insert("q_snapshots".into(), Value::Array(snapshots));
        m.insert(
            "files".into(),
            json!(files
                .iter()
                .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
                .collect::<Vec<_>>()),
        );
        m.insert("config".into(), config.to_json());
    }
    let mut w = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    files.push(summary_path);
    Ok(files)
}

/// [`execute`] followed by [`write_outputs`].
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<(RunOutput, Vec<PathBuf>)> {
    let out = execute(config)?;
    let dir = resolve_out_dir(config, out_dir);
    let files = write_outputs(config, &out, &dir)?;
    Ok((out, files))
}

pub(crate) fn is_angles(config: &RunConfig) -> bool {
    matches!(config.initial, InitialState::Angles { .. })
}
