//! Built-in presets producing the data of each figure.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{
    validate_value, Backend, EndTime, InitialState, Model, Observable, OutputSpec, PulseTime, QFunctionSpec, RunConfig,
    ScheduleSpec, TimeSpec, Tolerances, TrajectorySpec,
};
use super::run::{execute, write_outputs, write_row, RunOutput};
use super::sweep::{sweep, validate_sweep_value, Reduction, SweepConfig};
use crate::error::{Error, Result};
use crate::meanfield::closed_form_crossing_time;
use crate::spin::ModelParams;

pub const SCENARIO_NAMES: [&str; 7] = [
    "fig1c",
    "fig2-dissipative",
    "fig2-dispersive",
    "fig2-unitary",
    "fig3",
    "fig4",
    "fig5",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    /// Independent runs; `merge` names a column collected from every run
    /// into one table on the shared time grid.
    Runs { runs: Vec<RunConfig>, merge: Option<String> },
    Sweep(SweepConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub plan: Plan,
}

impl Scenario {
    pub fn to_json(&self) -> Value {
        match &self.plan {
            Plan::Runs { runs, merge } => json!({
                "name": self.name,
                "description": self.description,
                "runs": runs.iter().map(RunConfig::to_json).collect::<Vec<_>>(),
                "merge": merge,
            }),
            Plan::Sweep(s) => json!({
                "name": self.name,
                "description": self.description,
                "sweep": s.to_json(),
            }),
        }
    }

    /// Parses the form produced by [`Scenario::to_json`].
    pub fn from_json(value: &Value) -> Result<Self> {
        let name = value
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config(vec!["name: missing required field".into()]))?
            .to_string();
        let description = value.get("description").and_then(Value::as_str).unwrap_or("").to_string();
        let plan = if let Some(s) = value.get("sweep") {
            Plan::Sweep(validate_sweep_value(s)?)
        } else {
            let runs = value
                .get("runs")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Config(vec!["runs: missing required field".into()]))?;
            let mut parsed = Vec::new();
            let mut errors = Vec::new();
            for (i, r) in runs.iter().enumerate() {
                match validate_value(r, &format!("runs[{i}]")) {
                    Ok(c) => parsed.push(c),
                    Err(Error::Config(e)) => errors.extend(e),
                    Err(e) => errors.push(format!("runs[{i}]: {e}")),
                }
            }
            if !errors.is_empty() {
                return Err(Error::Config(errors));
            }
            let merge = value.get("merge").and_then(Value::as_str).map(String::from);
            Plan::Runs { runs: parsed, merge }
        };
        Ok(Self { name, description, plan })
    }

    /// Applies command-line overrides to every run.
    pub fn override_with(&mut self, seed: Option<u64>, tol: Option<f64>) {
        let apply = |c: &mut RunConfig| {
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(t) = tol {
                c.tolerances.ode = t;
            }
        };
        match &mut self.plan {
            Plan::Runs { runs, .. } => runs.iter_mut().for_each(apply),
            Plan::Sweep(s) => apply(&mut s.base),
        }
    }
}

const THETA0: f64 = PI / 10.0;
const PHI0: f64 = PI / 2.0;

fn params(n: usize, kappa: f64, omega: f64, lambda: f64) -> ModelParams {
    ModelParams::new(n, kappa, omega, lambda).expect("preset parameters are valid")
}

fn run_config(backend: Backend, model: Model, prefix: &str, observables: &[Observable]) -> RunConfig {
    let mut obs = observables.to_vec();
    obs.sort();
    RunConfig {
        backend,
        model,
        initial: InitialState::Angles {
            theta: THETA0,
            phi: PHI0,
        },
        time: TimeSpec {
            t_start: 0.0,
            end: EndTime::PulseMultiple(3.0),
            samples: 301,
        },
        observables: obs,
        cn_order: 3,
        qfunction: None,
        output: OutputSpec {
            dir: None,
            prefix: prefix.into(),
        },
        seed: 0,
        tolerances: Tolerances {
            ode: backend.default_tol(),
            trace_abort: crate::lindblad::DEFAULT_TRACE_ABORT,
            check_positivity: false,
        },
        trajectories: (backend == Backend::Trajectories).then(TrajectorySpec::default),
    }
}

/// Snapshot times at the given fractions of the crossing time, rounded to
/// one decimal.
fn snapshot_times(p: &ModelParams, fractions: &[f64]) -> Vec<f64> {
    let t = closed_form_crossing_time(THETA0, p).expect("pulse starts above the equator");
    fractions.iter().map(|f| (f * t * 10.0).round() / 10.0).collect()
}

fn with_q(mut c: RunConfig, times: Vec<f64>, n_theta: usize, n_phi: usize) -> RunConfig {
    c.observables.push(Observable::QFunction);
    c.observables.sort();
    c.qfunction = Some(QFunctionSpec { times, n_theta, n_phi });
    c
}

const Q_FRACTIONS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

fn pulse_runs(name: &str, p: ModelParams, extra: &[Observable]) -> Vec<RunConfig> {
    let mut obs = vec![Observable::Moments, Observable::Chi2];
    obs.extend_from_slice(extra);
    let master = with_q(
        run_config(Backend::Master, Model::Params(p), &format!("{name}_master"), &obs),
        snapshot_times(&p, &Q_FRACTIONS),
        101,
        202,
    );
    let mf = run_config(
        Backend::MeanField,
        Model::Params(p),
        &format!("{name}_meanfield"),
        &[Observable::Moments],
    );
    vec![master, mf]
}

/// Preset by name.
pub fn scenario(name: &str) -> Option<Scenario> {
    let dispersive = params(200, 1.0, 5.0, 0.5);
    let s = match name {
        "fig1c" => {
            let mut traj = run_config(
                Backend::Trajectories,
                Model::Params(dispersive),
                "fig1c_trajectories",
                &[Observable::Moments],
            );
            traj.seed = 1;
            traj.trajectories = Some(TrajectorySpec {
                n_trajectories: 6,
                write_individual: true,
                ..TrajectorySpec::default()
            });
            let master = with_q(
                run_config(Backend::Master, Model::Params(dispersive), "fig1c_master", &[Observable::Moments]),
                snapshot_times(&dispersive, &Q_FRACTIONS),
                101,
                202,
            );
            Scenario {
                name: name.into(),
                description: "Six quantum trajectories of a dispersive pulse (N=200, omega=5, lambda=0.5) with Q-function snapshots of the ensemble".into(),
                plan: Plan::Runs {
                    runs: vec![traj, master],
                    merge: None,
                },
            }
        }
        "fig2-dissipative" => Scenario {
            name: name.into(),
            description: "Dissipative pulse (omega=0, lambda=0.5, N=200): mean field, moments, chi2 and Q-function".into(),
            plan: Plan::Runs {
                runs: pulse_runs("fig2_dissipative", params(200, 1.0, 0.0, 0.5), &[]),
                merge: None,
            },
        },
        "fig2-dispersive" => Scenario {
            name: name.into(),
            description: "Dispersive pulse (omega=5, lambda=0.5, N=200): mean field, moments, chi2 and Q-function".into(),
            plan: Plan::Runs {
                runs: pulse_runs("fig2_dispersive", dispersive, &[]),
                merge: None,
            },
        },
        "fig2-unitary" => {
            let p = params(200, 0.0, 5.0, 0.5);
            let mut runs = Vec::new();
            for (backend, prefix, obs) in [
                (
                    Backend::Master,
                    "fig2_unitary_master",
                    &[Observable::Moments, Observable::Chi2][..],
                ),
                (Backend::MeanField, "fig2_unitary_meanfield", &[Observable::Moments][..]),
            ] {
                let mut c = run_config(backend, Model::Params(p), prefix, obs);
                c.initial = InitialState::Angles {
                    theta: PI / 2.0,
                    phi: PI / 2.0,
                };
                c.time = TimeSpec {
                    t_start: 0.0,
                    end: EndTime::Fixed(800.0),
                    samples: 401,
                };
                if backend == Backend::Master {
                    c = with_q(c, vec![0.0, 200.0, 400.0, 800.0], 101, 202);
                }
                runs.push(c);
            }
            Scenario {
                name: name.into(),
                description: "Unitary twisting (kappa=0, omega=5, lambda=0.5, N=200) from the equator over T=800".into(),
                plan: Plan::Runs { runs, merge: None },
            }
        }
        "fig3" => {
            let obs = [Observable::Moments];
            let mf = run_config(Backend::MeanField, Model::Params(dispersive), "fig3_meanfield", &obs);
            let cu = run_config(Backend::Cumulant2, Model::Params(dispersive), "fig3_cumulant2", &obs);
            let master = with_q(
                run_config(
                    Backend::Master,
                    Model::Params(dispersive),
                    "fig3_master",
                    &[Observable::Moments, Observable::Chi2, Observable::C2, Observable::C3],
                ),
                snapshot_times(&dispersive, &[0.5, 1.0, 1.5]),
                101,
                202,
            );
            Scenario {
                name: name.into(),
                description: "Dispersive pulse (N=200, omega=5, lambda=0.5): <Jx> from mean field, cumulant and master equation, and C3(t)".into(),
                plan: Plan::Runs {
                    runs: vec![mf, cu, master],
                    merge: Some("jx".into()),
                },
            }
        }
        "fig4" => {
            let base = run_config(Backend::Master, Model::Params(dispersive), "fig4", &[Observable::C2, Observable::C3]);
            let base = RunConfig {
                time: TimeSpec {
                    samples: 241,
                    ..base.time
                },
                ..base
            };
            Scenario {
                name: name.into(),
                description: "Scaling of max C2/N^2 and max C3/N^3 with N for omega in {0, 2, 5}".into(),
                plan: Plan::Sweep(SweepConfig {
                    base,
                    n_atoms: vec![50, 100, 200, 400, 600],
                    omegas: vec![0.0, 2.0, 5.0],
                    reductions: vec![Reduction::MaxC2OverN2, Reduction::MaxC3OverN3],
                    parallelism: 1,
                }),
            }
        }
        "fig5" => {
            let obs = [Observable::Moments, Observable::C3];
            let t_end = 6000.0;
            let time = TimeSpec {
                t_start: 0.0,
                end: EndTime::Fixed(t_end),
                samples: 601,
            };
            let mut noquench = run_config(
                Backend::Master,
                Model::Params(params(200, 1.0, 5.0, 0.2)),
                "fig5_noquench",
                &obs,
            );
            noquench.time = time;
            let mut runs = vec![noquench];
            for t_ramp in [0.0, 500.0, 1000.0] {
                let spec = ScheduleSpec {
                    n_atoms: 200,
                    kappa: 1.0,
                    omega_max: 5.0,
                    omega_min: 0.0,
                    lambda_max: 0.2,
                    lambda_min: 0.02,
                    t_pulse: PulseTime::PeakC3,
                    t_ramp,
                };
                let mut c = run_config(
                    Backend::Master,
                    Model::Schedule(spec),
                    &format!("fig5_ramp{}", t_ramp as u32),
                    &obs,
                );
                c.time = time;
                if t_ramp == 500.0 {
                    c = with_q(c, vec![600.0, 1200.0, 2400.0, 6000.0], 101, 202);
                }
                runs.push(c);
            }
            Scenario {
                name: name.into(),
                description: "Quench from (omega, lambda) = (5, 0.2) to (0, 0.02) at the C3 peak, N=200, ramp times 0, 500 and 1000, against no quench".into(),
                plan: Plan::Runs {
                    runs,
                    merge: Some("c3".into()),
                },
            }
        }
        _ => return None,
    };
    Some(s)
}

/// Writes `column` of every run side by side. The runs must share their
/// time grid.
fn write_merged(name: &str, column: &str, runs: &[(RunConfig, RunOutput)], dir: &Path) -> Result<PathBuf> {
    let times = runs[0].1.times();
    let mut cols = Vec::new();
    let mut header = vec!["t".to_string()];
    for (cfg, out) in runs {
        let Some(c) = out.column(column) else {
            continue;
        };
        if out.times() != times {
            return Err(Error::InvalidParams(format!(
                "cannot merge {column}: run {} has a different time grid",
                cfg.output.prefix
            )));
        }
        header.push(format!("{column}_{}", cfg.output.prefix));
        cols.push(c);
    }
    let path = dir.join(format!("{}_{column}.csv", name.replace('-', "_")));
    let mut w = BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "{}", header.join(","))?;
    for (i, &t) in times.iter().enumerate() {
        let mut row = vec![t];
        row.extend(cols.iter().map(|c| c[i]));
        write_row(&mut w, &row)?;
    }
    w.flush()?;
    Ok(path)
}

/// Runs a scenario into `dir` and returns every written path. A sweep with
/// failed points still writes its table and then reports an error.
pub fn run_scenario(s: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let spec_path = dir.join(format!("{}_scenario.json", s.name.replace('-', "_")));
    fs::write(&spec_path, serde_json::to_string_pretty(&s.to_json())? + "\n")?;
    files.push(spec_path);
    match &s.plan {
        Plan::Runs { runs, merge } => {
            let mut outputs = Vec::new();
            for cfg in runs {
                let out = execute(cfg)?;
                files.extend(write_outputs(cfg, &out, dir)?);
                outputs.push((cfg.clone(), out));
            }
            if let Some(col) = merge {
                files.push(write_merged(&s.name, col, &outputs, dir)?);
            }
        }
        Plan::Sweep(sw) => {
            let (out, written) = sweep(sw, Some(dir))?;
            files.extend(written);
            if out.failures() > 0 {
                return Err(Error::SweepFailures(out.failures()));
            }
        }
    }
    Ok(files)
}
