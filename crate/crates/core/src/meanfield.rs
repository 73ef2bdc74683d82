//! Semiclassical dynamics on the Bloch sphere.
//!
//! Integrated in angles: `dtheta/dt = eta lambda^2 sin(theta)`,
//! `dphi/dt = xi lambda^2 cos(theta)`, radius fixed at `1/2`. The azimuth is
//! never wrapped so reversal tests can compare it across the equator.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{self, Dopri5Options};
use crate::schedule::Drive;
use crate::spin::ModelParams;

pub const DEFAULT_TOL: f64 = 1e-9;
const POLE_MARGIN: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochAngles {
    pub theta: f64,
    pub phi: f64,
}

impl BlochAngles {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    /// `(<Jx>, <Jy>, <Jz>) / N` at radius 1/2.
    pub fn bloch_xyz(&self) -> [f64; 3] {
        let r = 0.5;
        [
            r * self.theta.sin() * self.phi.cos(),
            r * self.theta.sin() * self.phi.sin(),
            r * self.theta.cos(),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanFieldTrajectory {
    pub times: Vec<f64>,
    pub angles: Vec<BlochAngles>,
}

impl MeanFieldTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bloch_xyz(&self) -> Vec<[f64; 3]> {
        self.angles.iter().map(BlochAngles::bloch_xyz).collect()
    }

    /// `<J>` for `n_atoms` spins.
    pub fn mean_spin(&self, n_atoms: usize) -> Vec<[f64; 3]> {
        let n = n_atoms as f64;
        self.angles
            .iter()
            .map(|a| {
                let b = a.bloch_xyz();
                [n * b[0], n * b[1], n * b[2]]
            })
            .collect()
    }
}

pub fn meanfield_rhs(angles: BlochAngles, params: &ModelParams) -> (f64, f64) {
    (
        params.dissipative_coupling() * angles.theta.sin(),
        params.dispersive_coupling() * angles.theta.cos(),
    )
}

/// Inversion-dependent Rabi frequency `2 xi lambda^2 gamma`, with
/// `gamma = <Jz>/N` in `[-1/2, 1/2]`.
pub fn rabi_frequency(gamma: f64, params: &ModelParams) -> f64 {
    2.0 * params.dispersive_coupling() * gamma
}

pub fn integrate_meanfield(
    initial: BlochAngles,
    drive: &dyn Drive,
    t_span: (f64, f64),
    sample_times: &[f64],
    tol: f64,
) -> Result<MeanFieldTrajectory> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidParams(format!(
            "tolerance {tol} outside (0, 1e-2]"
        )));
    }
    if !(0.0..=PI).contains(&initial.theta) || !initial.phi.is_finite() {
        return Err(Error::InvalidParams(format!(
            "initial angles ({}, {}) out of range",
            initial.theta, initial.phi
        )));
    }
    let mut out = MeanFieldTrajectory {
        times: Vec::with_capacity(sample_times.len()),
        angles: Vec::with_capacity(sample_times.len()),
    };

    // exact poles stay put in theta; only the azimuth turns
    if initial.theta == 0.0 || initial.theta == PI {
        let sign = if initial.theta == 0.0 { 1.0 } else { -1.0 };
        for &t in sample_times {
            if t < t_span.0 || t > t_span.1 {
                return Err(Error::InvalidParams(
                    "sample times must lie within the time span".into(),
                ));
            }
            let (x, _) = drive.integrated_couplings(t_span.0, t);
            out.times.push(t);
            out.angles
                .push(BlochAngles::new(initial.theta, initial.phi + sign * x));
        }
        return Ok(out);
    }

    let theta0 = initial.theta.clamp(POLE_MARGIN, PI - POLE_MARGIN);
    let opts = Dopri5Options::with_tol(tol);
    ode::integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            let p = drive.params_at(t);
            let (a, b) = meanfield_rhs(BlochAngles::new(y[0], initial.phi + y[1]), &p);
            dy[0] = a;
            dy[1] = b;
        },
        t_span.0,
        // azimuth tracked relative to its start so step control ignores phi0
        &[theta0, 0.0],
        t_span.1,
        sample_times,
        &drive.breakpoints(),
        &opts,
        |t, y| {
            out.times.push(t);
            out.angles.push(BlochAngles::new(y[0].clamp(0.0, PI), initial.phi + y[1]));
            Ok(())
        },
    )?;
    Ok(out)
}

/// Closed-form polar angle for constant parameters:
/// `tan(theta/2) = tan(theta0/2) exp(eta lambda^2 t)`.
pub fn closed_form_theta(theta0: f64, params: &ModelParams, t: f64) -> f64 {
    2.0 * ((theta0 / 2.0).tan() * (params.dissipative_coupling() * t).exp()).atan()
}

/// Time at which the mean-field state would cross the equator from `theta0`
/// with constant parameters, if it ever does.
pub fn closed_form_crossing_time(theta0: f64, params: &ModelParams) -> Option<f64> {
    let rate = params.dissipative_coupling();
    if theta0 > PI / 2.0 || theta0 <= 0.0 || rate <= 0.0 {
        return if theta0 == PI / 2.0 { Some(0.0) } else { None };
    }
    Some(-(theta0 / 2.0).tan().ln() / rate)
}

/// Root of `theta(t) = pi/2`, located by inverse cubic interpolation on the
/// samples bracketing the first upward crossing.
pub fn equator_crossing_time(trajectory: &MeanFieldTrajectory) -> Option<f64> {
    let th = |i: usize| trajectory.angles[i].theta - PI / 2.0;
    let n = trajectory.len();
    if n == 0 {
        return None;
    }
    if th(0) == 0.0 {
        return Some(trajectory.times[0]);
    }
    if th(0) > 0.0 {
        return None;
    }
    let k = (1..n).find(|&i| th(i) >= 0.0)?;
    if th(k) == 0.0 {
        return Some(trajectory.times[k]);
    }
    // up to four points around the bracket [k-1, k]
    let lo = k.saturating_sub(2);
    let hi = (k + 1).min(n - 1);
    let idx: Vec<usize> = (lo..=hi).collect();
    let xs: Vec<f64> = idx.iter().map(|&i| th(i)).collect();
    let ts: Vec<f64> = idx.iter().map(|&i| trajectory.times[i]).collect();
    let monotone = xs.windows(2).all(|w| w[1] > w[0]);
    if !monotone {
        let (x0, x1) = (th(k - 1), th(k));
        let (t0, t1) = (trajectory.times[k - 1], trajectory.times[k]);
        return Some(t0 - x0 * (t1 - t0) / (x1 - x0));
    }
    // Lagrange interpolation of t(x) at x = 0
    let mut t_star = 0.0;
    for i in 0..xs.len() {
        let mut w = 1.0;
        for j in 0..xs.len() {
            if i != j {
                w *= (0.0 - xs[j]) / (xs[i] - xs[j]);
            }
        }
        t_star += w * ts[i];
    }
    Some(t_star)
}
