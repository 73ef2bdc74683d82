//! Time-dependent drive: the piecewise-linear quench of `(omega, lambda)`.
//!
//! Before `t_pulse - t_ramp` the drive sits at `(omega_max, lambda_max)`
//! (dispersive stage), ramps linearly to `(omega_min, lambda_min)` by
//! `t_pulse`, and stays there (dissipative stage). With `t_ramp = 0` the
//! change is a step at `t_pulse`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{evolve, uniform_times, DensityMatrix, EvolveOptions};
use crate::observables::{c_total, MomentTable};
use crate::quadrature;
use crate::spin::{CollectiveOperators, DickeVector, ModelParams};

/// A source of model parameters as a function of time.
pub trait Drive: Send + Sync {
    fn n_atoms(&self) -> usize;

    fn params_at(&self, t: f64) -> ModelParams;

    /// Times at which the parameters have a kink or jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// `(integral of xi*lambda^2, integral of eta*lambda^2)` over `[t0, t1]`.
    fn integrated_couplings(&self, t0: f64, t1: f64) -> (f64, f64);
}

impl Drive for ModelParams {
    fn n_atoms(&self) -> usize {
        ModelParams::n_atoms(self)
    }

    fn params_at(&self, _t: f64) -> ModelParams {
        *self
    }

    fn integrated_couplings(&self, t0: f64, t1: f64) -> (f64, f64) {
        let dt = t1 - t0;
        (self.dispersive_coupling() * dt, self.dissipative_coupling() * dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub n_atoms: usize,
    pub kappa: f64,
    pub omega_max: f64,
    pub omega_min: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub t_pulse: f64,
    pub t_ramp: f64,
}

impl RampSchedule {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_atoms: usize,
        kappa: f64,
        omega_max: f64,
        omega_min: f64,
        lambda_max: f64,
        lambda_min: f64,
        t_pulse: f64,
        t_ramp: f64,
    ) -> Result<Self> {
        let s = Self {
            n_atoms,
            kappa,
            omega_max,
            omega_min,
            lambda_max,
            lambda_min,
            t_pulse,
            t_ramp,
        };
        let problems = s.problems();
        if problems.is_empty() {
            Ok(s)
        } else {
            Err(Error::InvalidParams(problems.join("; ")))
        }
    }

    /// A schedule that never changes, equivalent to fixed `params`.
    pub fn constant(params: &ModelParams) -> Self {
        Self {
            n_atoms: params.n_atoms(),
            kappa: params.kappa(),
            omega_max: params.omega(),
            omega_min: params.omega(),
            lambda_max: params.lambda(),
            lambda_min: params.lambda(),
            t_pulse: 0.0,
            t_ramp: 0.0,
        }
    }

    /// Every violated invariant, as readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_atoms == 0 {
            out.push("n_atoms must be at least 1".to_string());
        }
        let values = [
            ("kappa", self.kappa),
            ("omega_max", self.omega_max),
            ("omega_min", self.omega_min),
            ("lambda_max", self.lambda_max),
            ("lambda_min", self.lambda_min),
            ("t_pulse", self.t_pulse),
            ("t_ramp", self.t_ramp),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                out.push(format!("{name} must be finite"));
            }
        }
        if self.kappa < 0.0 {
            out.push("kappa must be non-negative".to_string());
        }
        if self.lambda_max < 0.0 || self.lambda_min < 0.0 {
            out.push("lambda must be non-negative".to_string());
        }
        if self.t_ramp < 0.0 {
            out.push("t_ramp must be non-negative".to_string());
        }
        if self.t_ramp > self.t_pulse {
            out.push("t_ramp must not exceed t_pulse".to_string());
        }
        if self.kappa == 0.0 {
            // omega(t) sweeps the segment between the two values
            let same_sign = (self.omega_max > 0.0 && self.omega_min > 0.0)
                || (self.omega_max < 0.0 && self.omega_min < 0.0);
            if !same_sign {
                out.push(
                    "with kappa = 0, omega(t) must stay nonzero (xi, eta undefined)".to_string(),
                );
            }
        }
        out
    }

    fn ramp_start(&self) -> f64 {
        self.t_pulse - self.t_ramp
    }

    /// `(omega(t), lambda(t))`.
    pub fn values_at(&self, t: f64) -> (f64, f64) {
        let start = self.ramp_start();
        if t < start || (self.t_ramp == 0.0 && t < self.t_pulse) {
            (self.omega_max, self.lambda_max)
        } else if t >= self.t_pulse {
            (self.omega_min, self.lambda_min)
        } else {
            let s = (t - start) / self.t_ramp;
            (
                self.omega_max + (self.omega_min - self.omega_max) * s,
                self.lambda_max + (self.lambda_min - self.lambda_max) * s,
            )
        }
    }

    fn couplings_at(&self, t: f64) -> (f64, f64) {
        let (omega, lambda) = self.values_at(t);
        let denom = self.kappa * self.kappa + omega * omega;
        let l2 = lambda * lambda;
        (omega / denom * l2, self.kappa / denom * l2)
    }
}

/// Parameters in effect at time `t`; `xi` and `eta` are recomputed from
/// `(kappa, omega(t))`.
pub fn params_at(schedule: &RampSchedule, t: f64) -> ModelParams {
    let (omega, lambda) = schedule.values_at(t);
    ModelParams::from_validated(schedule.n_atoms, schedule.kappa, omega, lambda)
}

impl Drive for RampSchedule {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    fn params_at(&self, t: f64) -> ModelParams {
        params_at(self, t)
    }

    fn breakpoints(&self) -> Vec<f64> {
        if self.omega_max == self.omega_min && self.lambda_max == self.lambda_min {
            return Vec::new();
        }
        if self.t_ramp == 0.0 {
            vec![self.t_pulse]
        } else {
            vec![self.ramp_start(), self.t_pulse]
        }
    }

    fn integrated_couplings(&self, t0: f64, t1: f64) -> (f64, f64) {
        if t1 <= t0 {
            return (0.0, 0.0);
        }
        let mut cuts = vec![t0];
        for b in self.breakpoints() {
            if b > t0 && b < t1 {
                cuts.push(b);
            }
        }
        cuts.push(t1);
        let mut acc = (0.0, 0.0);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let inside_ramp = self.t_ramp > 0.0 && mid > self.ramp_start() && mid < self.t_pulse;
            if inside_ramp {
                let panels = (((b - a) / self.t_ramp) * 16.0).ceil().max(1.0) as usize;
                acc.0 += quadrature::integrate(|t| self.couplings_at(t).0, a, b, panels, 10);
                acc.1 += quadrature::integrate(|t| self.couplings_at(t).1, a, b, panels, 10);
            } else {
                let (x, e) = self.couplings_at(mid);
                acc.0 += x * (b - a);
                acc.1 += e * (b - a);
            }
        }
        acc
    }
}

/// Peak of `C3(t)` during a pulse at the dispersive-stage parameters
/// `(omega_max, lambda_max)` of `schedule`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakC3 {
    pub t_peak: f64,
    pub c3_peak: f64,
}

/// Master-equation pre-pass locating the peak of `C3`, refined by a parabola
/// through the three samples around the largest one. The result is a natural
/// `t_pulse` for a quench.
pub fn peak_c3_time(
    schedule: &RampSchedule,
    initial: &DickeVector,
    t_span: (f64, f64),
    samples: usize,
    tol: f64,
) -> Result<PeakC3> {
    if samples < 3 {
        return Err(Error::InvalidParams("peak search needs at least 3 samples".into()));
    }
    let params = ModelParams::new(schedule.n_atoms, schedule.kappa, schedule.omega_max, schedule.lambda_max)?;
    let ops = CollectiveOperators::new(schedule.n_atoms)?;
    let times = uniform_times(t_span.0, t_span.1, samples);
    let mut c3 = Vec::with_capacity(samples);
    evolve(
        &DensityMatrix::from_pure(initial),
        &params,
        t_span,
        &times,
        &EvolveOptions::with_tol(tol),
        |_, rho| {
            c3.push(c_total(&MomentTable::from_density(rho, &ops, 3)?, 3)?);
            Ok(())
        },
    )?;
    let k = c3
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if k == 0 || k + 1 == c3.len() {
        return Ok(PeakC3 {
            t_peak: times[k],
            c3_peak: c3[k],
        });
    }
    let (a, b, c) = (c3[k - 1], c3[k], c3[k + 1]);
    let h = times[k + 1] - times[k];
    let curv = a - 2.0 * b + c;
    let shift = if curv < 0.0 { 0.5 * (a - c) / curv } else { 0.0 };
    Ok(PeakC3 {
        t_peak: times[k] + shift.clamp(-0.5, 0.5) * h,
        c3_peak: b - 0.25 * (a - c) * shift,
    })
}
