//! Configuration-driven runs, parameter sweeps and figure presets.
//!
//! A run is described by one JSON document:
//!
//! ```json
//! {
//!   "backend": "master",
//!   "params": {"n_atoms": 200, "kappa": 1.0, "omega": 5.0, "lambda": 0.5},
//!   "initial": {"theta": 0.3141592653589793, "phi": 1.5707963267948966},
//!   "time": {"t_start": 0.0, "pulse_multiple": 3.0, "samples": 301},
//!   "observables": ["moments", "chi2", "c3"],
//!   "output": {"dir": "out", "prefix": "dispersive"},
//!   "seed": 0,
//!   "tolerances": {"ode": 1e-8}
//! }
//! ```
//!
//! See [`validate_config`] for the full schema and defaults.

mod config;
mod run;
mod scenarios;
mod sweep;

pub use config::{
    validate_config, Backend, EndTime, InitialState, Model, Observable, OutputSpec, PulseTime, QFunctionSpec,
    RunConfig, ScheduleSpec, TimeSpec, Tolerances, TrajectorySpec,
};
pub use run::{
    build_drive, columns, default_out_dir, execute, resolve_out_dir, run, write_outputs, Diagnostics, Peak, RunOutput,
    RunSummary,
};
pub use scenarios::{run_scenario, scenario, Plan, Scenario, SCENARIO_NAMES};
pub use sweep::{
    execute_sweep, linear_fit, sweep, validate_sweep, Reduction, SlopeFit, SweepConfig, SweepOutput, SweepPoint,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SUPERPULSE_OUT_DIR";

/// Process exit code for a run result: 0 on success, 2 for configuration
/// or I/O problems, 3 for numerical failures.
pub fn exit_code(result: &crate::Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_numerical() => 3,
        Err(_) => 2,
    }
}
