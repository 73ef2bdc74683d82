//! Simulation engine for the dissipative one-axis-twisting model of an atomic
//! ensemble after cavity elimination.
//!
//! Four dynamical backends share one set of conventions (Dicke basis ordered
//! by `p = J - m`, rates in units of the cavity decay):
//!
//! * [`meanfield`]: semiclassical angles on the Bloch sphere,
//! * [`cumulant`]: second-order cumulant (Gaussian) moment equations,
//! * [`lindblad`]: the full `(N+1) x (N+1)` density matrix,
//! * [`trajectories`]: Monte-Carlo wave-function unraveling.
//!
//! [`observables`] turns states into fluctuation diagnostics and
//! [`schedule`] supplies time-dependent quench drives, and [`runner`] turns
//! JSON configurations into CSV/JSON output.

pub mod cumulant;
pub mod error;
pub mod lindblad;
pub mod meanfield;
pub mod observables;
pub mod ode;
pub mod quadrature;
pub mod runner;
pub mod schedule;
pub mod spin;
pub mod trajectories;

pub use error::{Error, Result};
pub use schedule::{Drive, RampSchedule};
pub use spin::{coherent_state, Axis, CollectiveOperators, DickeVector, ModelParams, C64};
