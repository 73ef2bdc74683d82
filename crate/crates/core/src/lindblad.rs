//! Exact reference backend: the atom-only master equation
//!
//! ```text
//! d rho/dt = -i[H, rho] + (eta lambda^2 / N) (2 J- rho J+ - J+ J- rho - rho J+ J-)
//! H        = -(xi lambda^2 / N) (N^2/4 - Jz^2)
//! ```
//!
//! The dissipator carries the explicit factor 2, i.e. the standard-form jump
//! operator is `sqrt(2 eta lambda^2 / N) J-`.
//!
//! `H` is diagonal and `J-` has a single subdiagonal, so element `(p, q)` of
//! the right-hand side only involves `(p, q)` and `(p-1, q-1)`. Each diagonal
//! band `q - p = k` is therefore an independent linear system; the propagator
//! stores the upper bands packed (Hermiticity supplies the rest) and the
//! right-hand side costs O(N^2).

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ode::{self, Dopri5Options, IntegrationStats};
use crate::schedule::Drive;
use crate::spin::{check_square, CollectiveOperators, DickeVector, Expectation, ModelParams, C64};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_TRACE_ABORT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn new(rho: DMatrix<C64>) -> Result<Self> {
        if rho.nrows() != rho.ncols() || rho.nrows() < 2 {
            return Err(Error::DimensionMismatch {
                expected: rho.nrows().max(2),
                actual: rho.ncols(),
            });
        }
        Ok(Self { rho })
    }

    pub fn from_pure(psi: &DickeVector) -> Self {
        Self {
            rho: &psi.amplitudes * psi.amplitudes.adjoint(),
        }
    }

    pub fn maximally_mixed(n_atoms: usize) -> Self {
        let d = n_atoms + 1;
        Self {
            rho: DMatrix::identity(d, d) * C64::new(1.0 / d as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.dim() - 1
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr(rho^2) = sum |rho_pq|^2 for Hermitian rho
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `max |rho - rho^dagger|` elementwise.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for q in 0..d {
            for p in 0..=q {
                worst = worst.max((self.rho[(p, q)] - self.rho[(q, p)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue, O(N^3). NaN if the eigensolver breaks down.
    pub fn min_eigenvalue(&self) -> f64 {
        // entries whose squares underflow derail the Householder reduction;
        // zeroing them moves the spectrum by at most dim * 1e-50
        let herm = ((&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0))
            .map(|z| if z.norm() < 1e-50 { C64::new(0.0, 0.0) } else { z });
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.min(v) })
    }

    /// Population of `|J, -J>`.
    pub fn south_pole_fidelity(&self) -> f64 {
        let n = self.n_atoms();
        self.rho[(n, n)].re
    }

    /// `e^{-i angle Jz} rho e^{i angle Jz}`.
    pub fn rotated_about_z(&self, angle: f64) -> Self {
        let d = self.dim();
        let j = self.n_atoms() as f64 / 2.0;
        let mut rho = self.rho.clone();
        for q in 0..d {
            for p in 0..d {
                let dm = (j - p as f64) - (j - q as f64);
                rho[(p, q)] *= C64::from_polar(1.0, -angle * dm);
            }
        }
        Self { rho }
    }

    fn to_packed(&self) -> Vec<C64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for k in 0..d {
            for p in 0..d - k {
                out.push(self.rho[(p, p + k)]);
            }
        }
        out
    }

    fn from_packed(d: usize, packed: &[C64]) -> Self {
        let mut rho = DMatrix::zeros(d, d);
        let mut idx = 0;
        for k in 0..d {
            for p in 0..d - k {
                let v = packed[idx];
                rho[(p, p + k)] = v;
                if k > 0 {
                    rho[(p + k, p)] = v.conj();
                }
                idx += 1;
            }
        }
        Self { rho }
    }
}

impl Expectation for DensityMatrix {
    fn dim(&self) -> usize {
        self.rho.nrows()
    }

    fn expectation(&self, operator: &DMatrix<C64>) -> Result<C64> {
        check_square(operator, self.dim())?;
        let mut acc = C64::new(0.0, 0.0);
        for p in 0..self.dim() {
            for r in 0..self.dim() {
                acc += operator[(p, r)] * self.rho[(r, p)];
            }
        }
        Ok(acc)
    }
}

/// One-axis-twisting Hamiltonian, diagonal with entries
/// `-(xi lambda^2 / N)(N^2/4 - m^2)`.
pub fn hamiltonian(params: &ModelParams, ops: &CollectiveOperators) -> DMatrix<C64> {
    let d = ops.dim();
    let kernel = LindbladKernel::new(ops);
    let mut h = DMatrix::zeros(d, d);
    for p in 0..d {
        h[(p, p)] = C64::new(-params.dispersive_coupling() * kernel.twist[p], 0.0);
    }
    h
}

/// Precomputed band coefficients of the master equation.
#[derive(Debug, Clone)]
pub struct LindbladKernel {
    dim: usize,
    n_atoms: usize,
    /// `<p|J-|p-1>`, zero at p = 0.
    lowering: Vec<f64>,
    /// `(J+ J-)_pp`.
    decay: Vec<f64>,
    /// `(N^2/4 - m^2)/N`.
    twist: Vec<f64>,
}

impl LindbladKernel {
    pub fn new(ops: &CollectiveOperators) -> Self {
        let n = ops.n_atoms();
        let d = n + 1;
        let mut lowering = vec![0.0; d];
        lowering[1..].copy_from_slice(ops.lowering());
        let decay = (0..d)
            .map(|p| if p + 1 < d { lowering[p + 1].powi(2) } else { 0.0 })
            .collect();
        let nf = n as f64;
        let twist = (0..d)
            .map(|p| {
                let m = ops.m_value(p);
                (nf * nf / 4.0 - m * m) / nf
            })
            .collect();
        Self {
            dim: d,
            n_atoms: n,
            lowering,
            decay,
            twist,
        }
    }

    fn band_offset(&self, k: usize) -> usize {
        k * self.dim - k * (k.saturating_sub(1)) / 2
    }

    /// Right-hand side on the packed upper bands in the lab frame.
    fn rhs_lab(&self, params: &ModelParams, y: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let xi_c = params.dispersive_coupling();
        let g = params.dissipative_coupling() / self.n_atoms as f64;
        for k in 0..d {
            let off = self.band_offset(k);
            let len = d - k;
            for i in 0..len {
                let (p, q) = (i, i + k);
                // -i (H_p - H_q), H_p = -xi_c * twist_p
                let freq = -xi_c * (self.twist[p] - self.twist[q]);
                let cur = y[off + i];
                let mut v = C64::new(freq * cur.im, -freq * cur.re)
                    - cur * (g * (self.decay[p] + self.decay[q]));
                if p > 0 {
                    v += y[off + i - 1] * (2.0 * g * self.lowering[p] * self.lowering[q]);
                }
                out[off + i] = v;
            }
        }
    }

    /// Right-hand side in the frame rotating with `H`, with `twist_phase`
    /// the accumulated `integral of xi lambda^2`.
    fn rhs_interaction(&self, params: &ModelParams, twist_phase: f64, y: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let g = params.dissipative_coupling() / self.n_atoms as f64;
        // w_p = a_p exp(-i (h_p - h_{p-1}) F)
        let mut w = vec![C64::new(0.0, 0.0); d];
        for p in 1..d {
            let angle = -(self.twist[p] - self.twist[p - 1]) * twist_phase;
            w[p] = C64::from_polar(self.lowering[p], angle);
        }
        for k in 0..d {
            let off = self.band_offset(k);
            let len = d - k;
            for i in 0..len {
                let (p, q) = (i, i + k);
                let cur = y[off + i];
                let mut v = -cur * (g * (self.decay[p] + self.decay[q]));
                if p > 0 {
                    v += y[off + i - 1] * (w[p] * w[q].conj()) * (2.0 * g);
                }
                out[off + i] = v;
            }
        }
    }

    /// Maps a packed interaction-frame state back to the lab frame.
    fn to_lab(&self, twist_phase: f64, y: &[C64]) -> Vec<C64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(y.len());
        for k in 0..d {
            let off = self.band_offset(k);
            for i in 0..d - k {
                let angle = (self.twist[i] - self.twist[i + k]) * twist_phase;
                out.push(y[off + i] * C64::from_polar(1.0, angle));
            }
        }
        out
    }
}

/// `L(rho)` as a dense matrix.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    params: &ModelParams,
    ops: &CollectiveOperators,
) -> Result<DMatrix<C64>> {
    if rho.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            actual: rho.dim(),
        });
    }
    let d = ops.dim();
    let kernel = LindbladKernel::new(ops);
    let xi_c = params.dispersive_coupling();
    let g = params.dissipative_coupling() / ops.n_atoms() as f64;
    // general (non-Hermitian-safe) form on the full matrix
    let mut out = DMatrix::zeros(d, d);
    for q in 0..d {
        for p in 0..d {
            let freq = -xi_c * (kernel.twist[p] - kernel.twist[q]);
            let cur = rho.rho[(p, q)];
            let mut v = C64::new(0.0, -freq) * cur
                - cur * (g * (kernel.decay[p] + kernel.decay[q]));
            if p > 0 && q > 0 {
                v += rho.rho[(p - 1, q - 1)] * (2.0 * g * kernel.lowering[p] * kernel.lowering[q]);
            }
            out[(p, q)] = v;
        }
    }
    Ok(out)
}

/// Propagation frame for [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frame {
    /// Integrate `rho` directly.
    Lab,
    /// Integrate `e^{iHt} rho e^{-iHt}`, removing the fast twisting phases.
    #[default]
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub tol: f64,
    pub check_positivity: bool,
    /// Abort once `|Tr rho - 1|` exceeds this.
    pub trace_abort: f64,
    pub frame: Frame,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            check_positivity: false,
            trace_abort: DEFAULT_TRACE_ABORT,
            frame: Frame::Interaction,
        }
    }
}

impl EvolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Quality monitors gathered over every reported sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionReport {
    pub stats: IntegrationStats,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// Only populated when positivity checks are enabled.
    pub min_eigenvalue: Option<f64>,
}

/// Propagates `rho0` under `drive`, handing the density matrix at each
/// sample time to `observer`. Parameters are re-read from the drive at every
/// right-hand-side evaluation.
pub fn evolve<F>(
    rho0: &DensityMatrix,
    drive: &dyn Drive,
    t_span: (f64, f64),
    sample_times: &[f64],
    options: &EvolveOptions,
    mut observer: F,
) -> Result<EvolutionReport>
where
    F: FnMut(f64, &DensityMatrix) -> Result<()>,
{
    let n = drive.n_atoms();
    if rho0.dim() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            actual: rho0.dim(),
        });
    }
    let herm0 = rho0.hermiticity_error();
    if herm0 > 1e-10 {
        return Err(Error::InvalidParams(format!(
            "initial density matrix is not Hermitian (error {herm0:e})"
        )));
    }
    let ops = CollectiveOperators::new(n)?;
    let kernel = LindbladKernel::new(&ops);
    let d = n + 1;
    let y0 = rho0.to_packed();
    let t0 = t_span.0;
    let mut report = EvolutionReport {
        stats: IntegrationStats::default(),
        max_trace_drift: 0.0,
        max_hermiticity_error: herm0,
        min_eigenvalue: None,
    };
    let opts = Dopri5Options::with_tol(options.tol);
    let frame = options.frame;
    let twist_phase = |t: f64| drive.integrated_couplings(t0, t).0;
    let (_, stats) = ode::integrate(
        |t, y: &[C64], dy: &mut [C64]| {
            let p = drive.params_at(t);
            match frame {
                Frame::Lab => kernel.rhs_lab(&p, y, dy),
                Frame::Interaction => kernel.rhs_interaction(&p, twist_phase(t), y, dy),
            }
        },
        t0,
        &y0,
        t_span.1,
        sample_times,
        &drive.breakpoints(),
        &opts,
        |t, y| {
            let state = match frame {
                Frame::Lab => DensityMatrix::from_packed(d, y),
                Frame::Interaction => DensityMatrix::from_packed(d, &kernel.to_lab(twist_phase(t), y)),
            };
            if state.rho.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NonFinite { t });
            }
            let drift = (state.trace() - C64::new(1.0, 0.0)).norm();
            report.max_trace_drift = report.max_trace_drift.max(drift);
            if drift > options.trace_abort {
                return Err(Error::TraceDrift {
                    t,
                    drift,
                    limit: options.trace_abort,
                });
            }
            report.max_hermiticity_error = report.max_hermiticity_error.max(state.hermiticity_error());
            if options.check_positivity {
                let ev = state.min_eigenvalue();
                report.min_eigenvalue = Some(report.min_eigenvalue.map_or(ev, |m: f64| m.min(ev)));
            }
            observer(t, &state)
        },
    )?;
    report.stats = stats;
    Ok(report)
}

/// Convenience wrapper collecting every sampled density matrix.
pub fn evolve_collect(
    rho0: &DensityMatrix,
    drive: &dyn Drive,
    t_span: (f64, f64),
    sample_times: &[f64],
    options: &EvolveOptions,
) -> Result<(Vec<(f64, DensityMatrix)>, EvolutionReport)> {
    let mut out = Vec::with_capacity(sample_times.len());
    let report = evolve(rho0, drive, t_span, sample_times, options, |t, rho| {
        out.push((t, rho.clone()));
        Ok(())
    })?;
    Ok((out, report))
}

/// Uniform grid of `samples` times over `[t0, t1]`.
pub fn uniform_times(t0: f64, t1: f64, samples: usize) -> Vec<f64> {
    match samples {
        0 => Vec::new(),
        1 => vec![t1],
        _ => (0..samples)
            .map(|k| {
                if k + 1 == samples {
                    t1
                } else {
                    t0 + (t1 - t0) * k as f64 / (samples - 1) as f64
                }
            })
            .collect(),
    }
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<DensityMatrix>();
    check::<LindbladKernel>();
    let _ = PI;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::coherent_state;
    use crate::RampSchedule;

    fn dense_lindblad(rho: &DMatrix<C64>, p: &ModelParams, ops: &CollectiveOperators) -> DMatrix<C64> {
        let h = hamiltonian(p, ops);
        let g = C64::new(p.dissipative_coupling() / ops.n_atoms() as f64, 0.0);
        let i = C64::new(0.0, 1.0);
        let jpjm = &ops.j_plus * &ops.j_minus;
        -(&h * rho - rho * &h) * i
            + (&ops.j_minus * rho * &ops.j_plus * C64::new(2.0, 0.0) - &jpjm * rho - rho * &jpjm) * g
    }

    #[test]
    fn hamiltonian_entries() {
        let ops = CollectiveOperators::new(2).unwrap();
        let p = ModelParams::new(2, 1.0, 5.0, 0.5).unwrap();
        let h = hamiltonian(&p, &ops);
        assert!((h[(1, 1)].re - (-0.0240384615384615)).abs() < 1e-12);
        assert_eq!(h[(0, 0)].re, 0.0);
        assert_eq!(h[(2, 2)].re, 0.0);
        let q = ModelParams::new(2, 1.0, 0.0, 0.5).unwrap();
        assert!(hamiltonian(&q, &ops).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn banded_rhs_matches_dense_formula() {
        for n in [1, 2, 5, 9] {
            let ops = CollectiveOperators::new(n).unwrap();
            let p = ModelParams::new(n, 1.0, 3.0, 0.7).unwrap();
            let psi = coherent_state(n, 0.9, 0.4).unwrap();
            let mix = coherent_state(n, 2.1, 4.0).unwrap();
            let rho = DensityMatrix::new(
                (DensityMatrix::from_pure(&psi).rho * C64::new(0.6, 0.0))
                    + DensityMatrix::from_pure(&mix).rho * C64::new(0.4, 0.0),
            )
            .unwrap();
            let fast = lindblad_rhs(&rho, &p, &ops).unwrap();
            let slow = dense_lindblad(&rho.rho, &p, &ops);
            assert!((&fast - &slow).norm() < 1e-13, "N={n}");
            assert!(fast.trace().norm() < 1e-12);
            // packed kernel agrees on the upper bands
            let kernel = LindbladKernel::new(&ops);
            let y = rho.to_packed();
            let mut out = vec![C64::new(0.0, 0.0); y.len()];
            kernel.rhs_lab(&p, &y, &mut out);
            let back = DensityMatrix::from_packed(n + 1, &out);
            assert!((&back.rho - &slow).norm() < 1e-13);
        }
    }

    #[test]
    fn dark_state_is_stationary() {
        let n = 6;
        let ops = CollectiveOperators::new(n).unwrap();
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        let rho = DensityMatrix::from_pure(&DickeVector::south_pole(n));
        assert!(lindblad_rhs(&rho, &p, &ops).unwrap().norm() == 0.0);
    }

    #[test]
    fn spin_half_decay_rate() {
        let ops = CollectiveOperators::new(1).unwrap();
        let p = ModelParams::new(1, 1.0, 0.0, 0.5).unwrap();
        let rho = DensityMatrix::from_pure(&DickeVector::basis(1, 0));
        let drho = DensityMatrix::new(lindblad_rhs(&rho, &p, &ops).unwrap()).unwrap();
        assert!((drho.expectation(&ops.j_z).unwrap().re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let ops = CollectiveOperators::new(3).unwrap();
        let p = ModelParams::new(3, 1.0, 0.0, 0.5).unwrap();
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(matches!(
            lindblad_rhs(&rho, &p, &ops),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(evolve(&rho, &p, (0.0, 1.0), &[], &EvolveOptions::default(), |_, _| Ok(())).is_err());
    }

    #[test]
    fn unitary_limit_matches_phases() {
        let n = 12;
        let p = ModelParams::new(n, 0.0, 5.0, 0.5).unwrap();
        let ops = CollectiveOperators::new(n).unwrap();
        let rho0 = DensityMatrix::from_pure(&coherent_state(n, PI / 2.0, 0.3).unwrap());
        let ts = uniform_times(0.0, 60.0, 7);
        let h = hamiltonian(&p, &ops);
        for frame in [Frame::Lab, Frame::Interaction] {
            let opts = EvolveOptions {
                tol: 1e-10,
                frame,
                ..Default::default()
            };
            let (states, _) = evolve_collect(&rho0, &p, (0.0, 60.0), &ts, &opts).unwrap();
            for (t, rho) in states {
                assert!((rho.purity() - 1.0).abs() < 1e-8);
                let mut worst: f64 = 0.0;
                for q in 0..=n {
                    for r in 0..=n {
                        let phase = C64::from_polar(1.0, -(h[(q, q)].re - h[(r, r)].re) * t);
                        worst = worst.max((rho.rho[(q, r)] - rho0.rho[(q, r)] * phase).norm());
                    }
                }
                assert!(worst < 1e-8, "{frame:?} t={t}: {worst}");
            }
        }
    }

    #[test]
    fn frames_agree_with_dissipation() {
        let n = 10;
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        let rho0 = DensityMatrix::from_pure(&coherent_state(n, PI / 10.0, PI / 2.0).unwrap());
        let ts = uniform_times(0.0, 300.0, 11);
        let run = |frame| {
            let opts = EvolveOptions {
                tol: 1e-10,
                frame,
                ..Default::default()
            };
            evolve_collect(&rho0, &p, (0.0, 300.0), &ts, &opts).unwrap().0
        };
        let a = run(Frame::Lab);
        let b = run(Frame::Interaction);
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            assert!((&x.rho - &y.rho).norm() < 1e-8);
        }
    }

    #[test]
    fn z_rotation_covariance() {
        let n = 8;
        let p = ModelParams::new(n, 1.0, 2.0, 0.6).unwrap();
        let rho0 = DensityMatrix::from_pure(&coherent_state(n, 0.5, 0.1).unwrap());
        let delta = 0.77;
        let ts = [40.0];
        let opts = EvolveOptions::with_tol(1e-10);
        let a = evolve_collect(&rho0, &p, (0.0, 40.0), &ts, &opts).unwrap().0;
        let b = evolve_collect(&rho0.rotated_about_z(delta), &p, (0.0, 40.0), &ts, &opts)
            .unwrap()
            .0;
        let rotated = a[0].1.rotated_about_z(delta);
        assert!((&rotated.rho - &b[0].1.rho).norm() < 1e-8);
    }

    #[test]
    fn trace_and_positivity_monitored() {
        let n = 6;
        let p = ModelParams::new(n, 1.0, 1.0, 0.5).unwrap();
        let rho0 = DensityMatrix::from_pure(&coherent_state(n, 0.3, 0.0).unwrap());
        let opts = EvolveOptions {
            check_positivity: true,
            ..Default::default()
        };
        let report = evolve(&rho0, &p, (0.0, 100.0), &uniform_times(0.0, 100.0, 21), &opts, |_, _| Ok(()))
            .unwrap();
        assert!(report.max_trace_drift < 1e-10);
        assert!(report.min_eigenvalue.unwrap() > -1e-8);
        assert_eq!(report.max_hermiticity_error, 0.0);
    }

    #[test]
    fn trace_abort_triggers() {
        let n = 3;
        let p = ModelParams::new(n, 1.0, 1.0, 0.5).unwrap();
        let mut rho0 = DensityMatrix::from_pure(&coherent_state(n, 0.3, 0.0).unwrap());
        rho0.rho *= C64::new(1.01, 0.0);
        let r = evolve(&rho0, &p, (0.0, 1.0), &[0.5], &EvolveOptions::default(), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::TraceDrift { .. })));
    }

    #[test]
    fn constant_schedule_is_indistinguishable() {
        let n = 8;
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        let s = RampSchedule::constant(&p);
        let rho0 = DensityMatrix::from_pure(&coherent_state(n, 0.4, 1.0).unwrap());
        let ts = uniform_times(0.0, 200.0, 5);
        let opts = EvolveOptions::default();
        let a = evolve_collect(&rho0, &p, (0.0, 200.0), &ts, &opts).unwrap().0;
        let b = evolve_collect(&rho0, &s, (0.0, 200.0), &ts, &opts).unwrap().0;
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    proptest::proptest! {
        #[test]
        fn uniform_grid_stays_inside_span(t1 in 1e-3f64..1e4, samples in 2usize..500) {
            let ts = uniform_times(0.0, t1, samples);
            proptest::prop_assert_eq!(ts.len(), samples);
            proptest::prop_assert_eq!(*ts.last().unwrap(), t1);
            proptest::prop_assert!(ts.windows(2).all(|w| w[0] <= w[1] && w[1] <= t1));
        }
    }

    #[test]
    fn min_eigenvalue_survives_wide_dynamic_range() {
        for n in [100, 200, 400] {
            for theta in [0.05, PI / 10.0, PI / 2.0, 3.0] {
                let rho = DensityMatrix::from_pure(&coherent_state(n, theta, 1.0).unwrap());
                let ev = rho.min_eigenvalue();
                assert!(ev.abs() < 1e-12, "N={n} theta={theta}: {ev}");
            }
        }
    }
}
