//! Collective spin algebra on the symmetric `J = N/2` manifold.
//!
//! Basis states are ordered by `p = J - m`, so index 0 is `|J, J>` (all atoms
//! up) and index `N` is `|J, -J>`. Every other module relies on this ordering.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Cartesian spin component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }
}

/// Levi-Civita symbol on axis indices.
pub fn levi_civita(j: usize, k: usize, l: usize) -> f64 {
    match (j, k, l) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// System size and rates of the atom-only model, with the derived dispersive
/// and dissipative coefficients `xi = omega/(kappa^2+omega^2)` and
/// `eta = kappa/(kappa^2+omega^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    n_atoms: usize,
    kappa: f64,
    omega: f64,
    lambda: f64,
    xi: f64,
    eta: f64,
}

impl ModelParams {
    pub fn new(n_atoms: usize, kappa: f64, omega: f64, lambda: f64) -> Result<Self> {
        let mut problems = Vec::new();
        if n_atoms == 0 {
            problems.push("n_atoms must be at least 1".to_string());
        }
        for (name, v) in [("kappa", kappa), ("omega", omega), ("lambda", lambda)] {
            if !v.is_finite() {
                problems.push(format!("{name} must be finite"));
            }
        }
        if kappa < 0.0 {
            problems.push("kappa must be non-negative".to_string());
        }
        if lambda < 0.0 {
            problems.push("lambda must be non-negative".to_string());
        }
        if kappa * kappa + omega * omega <= 0.0 {
            problems.push("kappa^2 + omega^2 must be positive (xi, eta undefined)".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidParams(problems.join("; ")));
        }
        Ok(Self::from_validated(n_atoms, kappa, omega, lambda))
    }

    pub(crate) fn from_validated(n_atoms: usize, kappa: f64, omega: f64, lambda: f64) -> Self {
        let denom = kappa * kappa + omega * omega;
        Self {
            n_atoms,
            kappa,
            omega,
            lambda,
            xi: omega / denom,
            eta: kappa / denom,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn xi(&self) -> f64 {
        self.xi
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `xi * lambda^2`, the twisting strength.
    pub fn dispersive_coupling(&self) -> f64 {
        self.xi * self.lambda * self.lambda
    }

    /// `eta * lambda^2`, the collective decay strength.
    pub fn dissipative_coupling(&self) -> f64 {
        self.eta * self.lambda * self.lambda
    }

    pub fn spin_length(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn with_n_atoms(&self, n_atoms: usize) -> Result<Self> {
        Self::new(n_atoms, self.kappa, self.omega, self.lambda)
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        Self::new(self.n_atoms, self.kappa, omega, self.lambda)
    }
}

/// Tridiagonal matrix stored by bands: `lower[p]` is entry `(p+1, p)`,
/// `upper[p]` is entry `(p, p+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<C64>,
    pub diag: Vec<C64>,
    pub upper: Vec<C64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for p in 0..d {
            m[(p, p)] = self.diag[p];
            if p + 1 < d {
                m[(p + 1, p)] = self.lower[p];
                m[(p, p + 1)] = self.upper[p];
            }
        }
        m
    }

    /// `self * v`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let d = self.dim();
        let mut out = vec![C64::new(0.0, 0.0); d];
        for p in 0..d {
            let mut acc = self.diag[p] * v[p];
            if p > 0 {
                acc += self.lower[p - 1] * v[p - 1];
            }
            if p + 1 < d {
                acc += self.upper[p] * v[p + 1];
            }
            out[p] = acc;
        }
        out
    }

    /// `self * m` in O(d^2).
    pub fn left_mul(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            for p in 0..d {
                let mut acc = self.diag[p] * col[p];
                if p > 0 {
                    acc += self.lower[p - 1] * col[p - 1];
                }
                if p + 1 < d {
                    acc += self.upper[p] * col[p + 1];
                }
                out[(p, c)] = acc;
            }
        }
        out
    }

    /// `Tr(self * m)` in O(d).
    pub fn trace_product(&self, m: &DMatrix<C64>) -> C64 {
        let d = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for p in 0..d {
            acc += self.diag[p] * m[(p, p)];
            if p + 1 < d {
                // self[p+1,p] * m[p,p+1] + self[p,p+1] * m[p+1,p]
                acc += self.lower[p] * m[(p, p + 1)] + self.upper[p] * m[(p + 1, p)];
            }
        }
        acc
    }
}

/// Collective spin matrices in the Dicke basis, in dense and banded form.
#[derive(Debug, Clone)]
pub struct CollectiveOperators {
    n_atoms: usize,
    pub j_plus: DMatrix<C64>,
    pub j_minus: DMatrix<C64>,
    pub j_z: DMatrix<C64>,
    pub j_x: DMatrix<C64>,
    pub j_y: DMatrix<C64>,
    banded: [Tridiagonal; 3],
    /// `<p+1| J_- |p>` for p = 0..N-1.
    lowering: Vec<f64>,
}

/// Matrix element `<J, m-1| J_- |J, m>`.
fn lowering_element(j: f64, m: f64) -> f64 {
    (j * (j + 1.0) - m * (m - 1.0)).max(0.0).sqrt()
}

impl CollectiveOperators {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidParams("n_atoms must be at least 1".into()));
        }
        let d = n_atoms + 1;
        let j = n_atoms as f64 / 2.0;
        let lowering: Vec<f64> = (0..n_atoms)
            .map(|p| lowering_element(j, j - p as f64))
            .collect();
        let zero = C64::new(0.0, 0.0);
        let m_values: Vec<C64> = (0..d).map(|p| C64::new(j - p as f64, 0.0)).collect();

        let half: Vec<C64> = lowering.iter().map(|&a| C64::new(a / 2.0, 0.0)).collect();
        let jx = Tridiagonal {
            lower: half.clone(),
            diag: vec![zero; d],
            upper: half.clone(),
        };
        // J_y = (J_+ - J_-)/(2i): upper band a/(2i) = -i a/2, lower band -a/(2i) = i a/2
        let jy = Tridiagonal {
            lower: lowering.iter().map(|&a| C64::new(0.0, a / 2.0)).collect(),
            diag: vec![zero; d],
            upper: lowering.iter().map(|&a| C64::new(0.0, -a / 2.0)).collect(),
        };
        let jz = Tridiagonal {
            lower: vec![zero; n_atoms],
            diag: m_values,
            upper: vec![zero; n_atoms],
        };
        let jm = Tridiagonal {
            lower: lowering.iter().map(|&a| C64::new(a, 0.0)).collect(),
            diag: vec![zero; d],
            upper: vec![zero; n_atoms],
        };
        let j_minus = jm.to_dense();
        let j_plus = j_minus.transpose();
        Ok(Self {
            n_atoms,
            j_x: jx.to_dense(),
            j_y: jy.to_dense(),
            j_z: jz.to_dense(),
            j_plus,
            j_minus,
            banded: [jx, jy, jz],
            lowering,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn spin_length(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    /// `m` quantum number of basis index `p`.
    pub fn m_value(&self, p: usize) -> f64 {
        self.spin_length() - p as f64
    }

    pub fn cartesian(&self, axis: Axis) -> &DMatrix<C64> {
        match axis {
            Axis::X => &self.j_x,
            Axis::Y => &self.j_y,
            Axis::Z => &self.j_z,
        }
    }

    pub fn banded(&self, axis: Axis) -> &Tridiagonal {
        &self.banded[axis.index()]
    }

    /// Subdiagonal entries of `J_-`.
    pub fn lowering(&self) -> &[f64] {
        &self.lowering
    }

    /// `J_- psi` in O(N).
    pub fn lower_state(&self, psi: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for (p, &a) in self.lowering.iter().enumerate() {
            out[p + 1] = psi[p] * a;
        }
        out
    }
}

/// Pure state amplitudes in the Dicke basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DickeVector {
    pub amplitudes: DVector<C64>,
}

impl DickeVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidParams(
                "a Dicke vector needs at least two amplitudes".into(),
            ));
        }
        Ok(Self {
            amplitudes: DVector::from_vec(amplitudes),
        })
    }

    /// Basis state with index `p = J - m`.
    pub fn basis(n_atoms: usize, p: usize) -> Self {
        let mut amps = DVector::zeros(n_atoms + 1);
        amps[p] = C64::new(1.0, 0.0);
        Self { amplitudes: amps }
    }

    /// `|J, -J>`, the dark state of `J_-`.
    pub fn south_pole(n_atoms: usize) -> Self {
        Self::basis(n_atoms, n_atoms)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.dim() - 1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self {
            amplitudes: self.amplitudes.map(|a| a / n),
        }
    }

    pub fn inner(&self, other: &DickeVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }
}

/// Spin coherent state `|theta, phi>`, amplitude
/// `sqrt(C(N,p)) cos(theta/2)^(N-p) sin(theta/2)^p e^(i p phi)` at index `p`.
///
/// Evaluated in log space so that neither the binomial nor the powers
/// overflow for large `N` or near the poles.
pub fn coherent_state(n_atoms: usize, theta: f64, phi: f64) -> Result<DickeVector> {
    if n_atoms == 0 {
        return Err(Error::InvalidParams("n_atoms must be at least 1".into()));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(Error::InvalidParams(format!(
            "theta = {theta} outside [0, pi]"
        )));
    }
    if !phi.is_finite() {
        return Err(Error::InvalidParams("phi must be finite".into()));
    }
    let amps = coherent_amplitudes(n_atoms, theta)
        .into_iter()
        .enumerate()
        .map(|(p, a)| C64::from_polar(a, p as f64 * phi))
        .collect::<Vec<_>>();
    Ok(DickeVector {
        amplitudes: DVector::from_vec(amps),
    })
}

/// Real magnitudes `sqrt(C(N,p)) c^(N-p) s^p` of the coherent state at polar
/// angle `theta`.
pub fn coherent_amplitudes(n_atoms: usize, theta: f64) -> Vec<f64> {
    let n = n_atoms;
    let c = (theta / 2.0).cos().abs();
    let s = (theta / 2.0).sin().abs();
    let mut out = vec![0.0; n + 1];
    if s == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if c == 0.0 {
        out[n] = 1.0;
        return out;
    }
    let (ln_c, ln_s) = (c.ln(), s.ln());
    let mut ln_binom = 0.0;
    for (p, slot) in out.iter_mut().enumerate() {
        if p > 0 {
            ln_binom += ((n - p + 1) as f64).ln() - (p as f64).ln();
        }
        let ln_amp = 0.5 * ln_binom + (n - p) as f64 * ln_c + p as f64 * ln_s;
        *slot = ln_amp.exp();
    }
    out
}

/// States that can produce expectation values of dense operators.
pub trait Expectation {
    fn dim(&self) -> usize;

    /// `<psi|A|psi>` or `Tr(A rho)`.
    fn expectation(&self, operator: &DMatrix<C64>) -> Result<C64>;
}

pub(crate) fn check_square(op: &DMatrix<C64>, dim: usize) -> Result<()> {
    if op.nrows() != dim || op.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: if op.nrows() != dim { op.nrows() } else { op.ncols() },
        });
    }
    Ok(())
}

impl Expectation for DickeVector {
    fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    fn expectation(&self, operator: &DMatrix<C64>) -> Result<C64> {
        check_square(operator, self.dim())?;
        Ok(self.amplitudes.dotc(&(operator * &self.amplitudes)))
    }
}

/// Free-function form of [`Expectation::expectation`].
pub fn expectation<S: Expectation + ?Sized>(operator: &DMatrix<C64>, state: &S) -> Result<C64> {
    state.expectation(operator)
}

/// `<J>` of a pure state using the banded operators (O(N)).
pub fn mean_spin(ops: &CollectiveOperators, psi: &[C64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for axis in Axis::ALL {
        let v = ops.banded(axis).apply(psi);
        let e: C64 = psi.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        out[axis.index()] = e.re;
    }
    out
}

/// Symmetrized second moments `<{J_a, J_b}>/2` of a pure state in the order
/// xx, xy, xz, yy, yz, zz.
pub fn symmetric_second_moments(ops: &CollectiveOperators, psi: &[C64]) -> [f64; 6] {
    let applied: Vec<Vec<C64>> = Axis::ALL
        .iter()
        .map(|&a| ops.banded(a).apply(psi))
        .collect();
    let mut out = [0.0; 6];
    let mut k = 0;
    for a in 0..3 {
        for b in a..3 {
            // <J_a J_b> = (J_a psi)^dagger (J_b psi) for Hermitian J_a
            let v: C64 = applied[a]
                .iter()
                .zip(&applied[b])
                .map(|(x, y)| x.conj() * y)
                .sum();
            out[k] = v.re;
            k += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    const I: C64 = C64::new(0.0, 1.0);

    fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
        a * b - b * a
    }

    #[test]
    fn spin_half_jz() {
        let ops = CollectiveOperators::new(1).unwrap();
        assert_eq!(ops.j_z[(0, 0)].re, 0.5);
        assert_eq!(ops.j_z[(1, 1)].re, -0.5);
    }

    #[test]
    fn spin_one_lowering() {
        let ops = CollectiveOperators::new(2).unwrap();
        assert_eq!(
            (0..3).map(|p| ops.j_z[(p, p)].re).collect::<Vec<_>>(),
            vec![1.0, 0.0, -1.0]
        );
        assert_abs_diff_eq!(ops.j_minus[(1, 0)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(ops.j_minus[(2, 1)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(ops.j_minus[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn rejects_zero_atoms() {
        assert!(CollectiveOperators::new(0).is_err());
        assert!(coherent_state(0, 0.0, 0.0).is_err());
        assert!(ModelParams::new(0, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn model_params_derived_rates() {
        let p = ModelParams::new(10, 1.0, 5.0, 0.5).unwrap();
        assert_abs_diff_eq!(p.xi(), 5.0 / 26.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eta(), 1.0 / 26.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.xi() * p.omega() + p.eta() * p.kappa(), 1.0, epsilon = 1e-15);
        assert!(ModelParams::new(10, 0.0, 0.0, 0.5).is_err());
        assert!(ModelParams::new(10, -1.0, 1.0, 0.5).is_err());
        assert!(ModelParams::new(10, 1.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn cartesian_from_ladder() {
        for n in [1, 2, 5, 12] {
            let ops = CollectiveOperators::new(n).unwrap();
            let jx = (&ops.j_plus + &ops.j_minus) / C64::new(2.0, 0.0);
            let jy = (&ops.j_plus - &ops.j_minus) / C64::new(0.0, 2.0);
            assert!((&jx - &ops.j_x).norm() < 1e-15);
            assert!((&jy - &ops.j_y).norm() < 1e-15);
        }
    }

    #[test]
    fn su2_commutators() {
        for n in 1..=30 {
            let ops = CollectiveOperators::new(n).unwrap();
            let scale = n as f64;
            let c = commutator(&ops.j_x, &ops.j_y) - &ops.j_z * I;
            assert!(c.norm() / scale < 1e-12, "N={n}: {}", c.norm());
            let c = commutator(&ops.j_y, &ops.j_z) - &ops.j_x * I;
            assert!(c.norm() / scale < 1e-12);
            let c = commutator(&ops.j_z, &ops.j_x) - &ops.j_y * I;
            assert!(c.norm() / scale < 1e-12);
        }
    }

    #[test]
    fn casimir() {
        for n in [1, 2, 7, 40, 101] {
            let ops = CollectiveOperators::new(n).unwrap();
            let j = n as f64 / 2.0;
            let cas = &ops.j_x * &ops.j_x + &ops.j_y * &ops.j_y + &ops.j_z * &ops.j_z;
            let target = DMatrix::<C64>::identity(n + 1, n + 1) * C64::new(j * (j + 1.0), 0.0);
            assert!((cas - &target).norm() / target.norm() < 1e-10);
        }
    }

    #[test]
    fn banded_products_match_dense() {
        let ops = CollectiveOperators::new(6).unwrap();
        let psi = coherent_state(6, 1.1, 0.4).unwrap();
        let rho = &psi.amplitudes * psi.amplitudes.adjoint();
        for axis in Axis::ALL {
            let dense = ops.cartesian(axis);
            let banded = ops.banded(axis);
            assert!((banded.left_mul(&rho) - dense * &rho).norm() < 1e-13);
            let t = banded.trace_product(&rho);
            assert!((t - (dense * &rho).trace()).norm() < 1e-13);
        }
    }

    #[test]
    fn coherent_poles_and_equator() {
        let north = coherent_state(7, 0.0, 1.3).unwrap();
        assert_eq!(north, DickeVector::basis(7, 0));
        let south = coherent_state(7, PI, 0.7).unwrap();
        assert_abs_diff_eq!(south.amplitudes[7].norm(), 1.0, epsilon = 1e-14);
        for p in 0..7 {
            assert!(south.amplitudes[p].norm() < 1e-14);
        }
        let eq = coherent_state(1, PI / 2.0, 0.0).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(eq.amplitudes[0].re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.amplitudes[1].re, r, epsilon = 1e-15);
        assert!(coherent_state(3, -0.1, 0.0).is_err());
        assert!(coherent_state(3, 3.2, 0.0).is_err());
    }

    #[test]
    fn coherent_state_normalized_for_large_n() {
        for n in [1, 10, 200, 1000, 1500] {
            for theta in [0.0, 0.3, PI / 2.0, 2.9, PI] {
                let psi = coherent_state(n, theta, 0.4).unwrap();
                assert!((psi.norm_sqr() - 1.0).abs() < 1e-12, "N={n} theta={theta}");
            }
        }
    }

    #[test]
    fn expectation_values() {
        let n = 8;
        let ops = CollectiveOperators::new(n).unwrap();
        let up = coherent_state(n, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(up.expectation(&ops.j_z).unwrap().re, 4.0, epsilon = 1e-14);
        let eq = coherent_state(n, PI / 2.0, 0.9).unwrap();
        assert!(eq.expectation(&ops.j_z).unwrap().norm() < 1e-13);
        let eq0 = coherent_state(n, PI / 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(eq0.expectation(&ops.j_x).unwrap().re, 4.0, epsilon = 1e-13);
        let wrong = CollectiveOperators::new(n + 1).unwrap();
        assert!(matches!(
            eq0.expectation(&wrong.j_x),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_spin_vector_matches_direction() {
        for n in [1, 2, 5, 10, 23, 50] {
            let ops = CollectiveOperators::new(n).unwrap();
            let j = n as f64 / 2.0;
            for &theta in &[0.0, 0.2, 1.0, PI / 2.0, 2.5, PI] {
                for &phi in &[0.0, 0.7, 2.0, 4.5, 6.0] {
                    let psi = coherent_state(n, theta, phi).unwrap();
                    let expected = [
                        j * theta.sin() * phi.cos(),
                        j * theta.sin() * phi.sin(),
                        j * theta.cos(),
                    ];
                    for axis in Axis::ALL {
                        let e = psi.expectation(ops.cartesian(axis)).unwrap();
                        assert!((e.re - expected[axis.index()]).abs() < 1e-10);
                        assert!(e.im.abs() < 1e-10);
                    }
                    let fast = mean_spin(&ops, psi.amplitudes.as_slice());
                    for k in 0..3 {
                        assert!((fast[k] - expected[k]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn coherent_overlap_formula() {
        let dirs = [(0.3, 0.1), (1.2, 2.0), (2.0, 5.0), (PI / 2.0, 0.0), (2.8, 3.3)];
        for n in 1..=20 {
            for &(t1, p1) in &dirs {
                for &(t2, p2) in &dirs {
                    let a = coherent_state(n, t1, p1).unwrap();
                    let b = coherent_state(n, t2, p2).unwrap();
                    let cos_big = t1.cos() * t2.cos() + t1.sin() * t2.sin() * (p1 - p2).cos();
                    let big = cos_big.clamp(-1.0, 1.0).acos();
                    let expected = (big / 2.0).cos().powi(2 * n as i32);
                    assert!((a.inner(&b).norm_sqr() - expected).abs() < 1e-12);
                }
            }
            // antipodes
            let a = coherent_state(n, 0.7, 1.0).unwrap();
            let b = coherent_state(n, PI - 0.7, 1.0 + PI).unwrap();
            assert!(a.inner(&b).norm_sqr() < 1e-12);
        }
    }

    #[test]
    fn resolution_of_identity() {
        // product rule: Gauss-Legendre in cos(theta), uniform in phi
        for n in 1..=10 {
            let (nodes, weights) = crate::quadrature::gauss_legendre(2 * n + 2);
            let n_phi = 2 * n + 2;
            let d = n + 1;
            let mut acc = DMatrix::<C64>::zeros(d, d);
            for (x, w) in nodes.iter().zip(&weights) {
                let theta = x.acos();
                for k in 0..n_phi {
                    let phi = 2.0 * PI * k as f64 / n_phi as f64;
                    let v = coherent_state(n, theta, phi).unwrap().amplitudes;
                    acc += (&v * v.adjoint()) * C64::new(w * 2.0 * PI / n_phi as f64, 0.0);
                }
            }
            acc *= C64::new((n + 1) as f64 / (4.0 * PI), 0.0);
            let err = (acc - DMatrix::<C64>::identity(d, d)).norm();
            assert!(err < 1e-6, "N={n}: {err}");
        }
    }

    #[test]
    fn symmetric_moments_match_dense() {
        let n = 5;
        let ops = CollectiveOperators::new(n).unwrap();
        let psi = coherent_state(n, 1.0, 2.0).unwrap();
        let fast = symmetric_second_moments(&ops, psi.amplitudes.as_slice());
        let mut k = 0;
        for a in 0..3 {
            for b in a..3 {
                let ja = ops.cartesian(Axis::from_index(a));
                let jb = ops.cartesian(Axis::from_index(b));
                let sym = (ja * jb + jb * ja) * C64::new(0.5, 0.0);
                let e = psi.expectation(&sym).unwrap();
                assert!((e.re - fast[k]).abs() < 1e-12);
                k += 1;
            }
        }
    }
}
