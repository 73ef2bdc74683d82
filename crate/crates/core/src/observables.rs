//! Fluctuation diagnostics: ordered moments, connected cumulants, the total
//! correlation measures, the deformation parameter and the spin Q-function.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulant::{cumulant_from_moments, MomentSource, MomentState};
use crate::error::{Error, Result};
use crate::lindblad::DensityMatrix;
use crate::quadrature::gauss_legendre;
use crate::spin::{coherent_amplitudes, CollectiveOperators, DickeVector, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Shortest round-trip decimal form, switching to exponent notation outside
/// `[1e-5, 1e16)`.
pub(crate) fn csv_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Ordered moments `<J_a J_b ...>` of every word up to `max_order` letters,
/// indexed in base 3 per length.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    max_order: usize,
    /// `by_len[k][index]` for words of length `k`.
    by_len: Vec<Vec<C64>>,
}

fn word_index(word: &[usize]) -> usize {
    word.iter().fold(0, |acc, &a| acc * 3 + a)
}

fn index_word(mut idx: usize, len: usize) -> Vec<usize> {
    let mut w = vec![0; len];
    for slot in w.iter_mut().rev() {
        *slot = idx % 3;
        idx /= 3;
    }
    w
}

impl MomentTable {
    fn check_order(max_order: usize) -> Result<()> {
        if !(1..=4).contains(&max_order) {
            return Err(Error::UnsupportedOrder(max_order));
        }
        Ok(())
    }

    /// `Tr(J_w rho)` with banded products, O(3^k N^2) overall.
    pub fn from_density(rho: &DensityMatrix, ops: &CollectiveOperators, max_order: usize) -> Result<Self> {
        Self::check_order(max_order)?;
        if rho.dim() != ops.dim() {
            return Err(Error::DimensionMismatch {
                expected: ops.dim(),
                actual: rho.dim(),
            });
        }
        let banded = [ops.banded(crate::Axis::X), ops.banded(crate::Axis::Y), ops.banded(crate::Axis::Z)];
        let mut by_len = vec![vec![C64::new(rho.trace().re, 0.0)]];
        // products[i] = J_{w} rho for words w of the previous length (suffixes)
        let mut products: Vec<DMatrix<C64>> = vec![rho.rho.clone()];
        for len in 1..=max_order {
            let mut values = vec![ZERO; 3usize.pow(len as u32)];
            let mut next = Vec::new();
            for (tail_idx, m) in products.iter().enumerate() {
                for (a, op) in banded.iter().enumerate() {
                    // word = a followed by the tail
                    let idx = a * 3usize.pow(len as u32 - 1) + tail_idx;
                    values[idx] = op.trace_product(m);
                }
            }
            if len < max_order {
                next.resize(3usize.pow(len as u32), DMatrix::zeros(0, 0));
                for (tail_idx, m) in products.iter().enumerate() {
                    for (a, op) in banded.iter().enumerate() {
                        next[a * 3usize.pow(len as u32 - 1) + tail_idx] = op.left_mul(m);
                    }
                }
                products = next;
            }
            by_len.push(values);
        }
        Ok(Self { max_order, by_len })
    }

    /// `<psi| J_w |psi>` for a normalized pure state, O(3^k N).
    pub fn from_vector(psi: &DickeVector, ops: &CollectiveOperators, max_order: usize) -> Result<Self> {
        Self::check_order(max_order)?;
        if psi.dim() != ops.dim() {
            return Err(Error::DimensionMismatch {
                expected: ops.dim(),
                actual: psi.dim(),
            });
        }
        let banded = [ops.banded(crate::Axis::X), ops.banded(crate::Axis::Y), ops.banded(crate::Axis::Z)];
        let bra: Vec<C64> = psi.amplitudes.iter().map(|a| a.conj()).collect();
        let dot = |v: &[C64]| -> C64 { bra.iter().zip(v).map(|(a, b)| a * b).sum() };
        let base: Vec<C64> = psi.amplitudes.iter().copied().collect();
        let mut by_len = vec![vec![dot(&base)]];
        let mut vectors = vec![base];
        for len in 1..=max_order {
            let mut next = vec![Vec::new(); 3usize.pow(len as u32)];
            for (tail_idx, v) in vectors.iter().enumerate() {
                for (a, op) in banded.iter().enumerate() {
                    next[a * 3usize.pow(len as u32 - 1) + tail_idx] = op.apply(v);
                }
            }
            by_len.push(next.iter().map(|v| dot(v)).collect());
            vectors = next;
        }
        Ok(Self { max_order, by_len })
    }

    /// Order-2 table from the mean spin and the symmetrized second moments
    /// (in [`crate::cumulant::SECOND_PAIRS`] order); the antisymmetric part is fixed by the
    /// commutators.
    pub fn from_second_order(first: [f64; 3], second: [f64; 6]) -> Self {
        let state = MomentState { first, second };
        let mut pairs = vec![ZERO; 9];
        for (j, row) in pairs.chunks_mut(3).enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = state.ordered_second(j, k);
            }
        }
        Self {
            max_order: 2,
            by_len: vec![vec![C64::new(1.0, 0.0)], first.iter().map(|&m| C64::new(m, 0.0)).collect(), pairs],
        }
    }

    /// Weighted average of tables (moments are linear in the state).
    pub fn average(tables: &[MomentTable]) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidParams("no moment tables to average".into()))?;
        let m = tables.len() as f64;
        let mut out = first.clone();
        for (k, row) in out.by_len.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = tables.iter().map(|t| t.by_len[k][i]).sum::<C64>() / m;
            }
        }
        Ok(out)
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn get(&self, word: &[usize]) -> C64 {
        assert!(word.len() <= self.max_order, "moment order {} not tabulated", word.len());
        self.by_len[word.len()][word_index(word)]
    }

    pub fn mean_spin(&self) -> [f64; 3] {
        [self.get(&[0]).re, self.get(&[1]).re, self.get(&[2]).re]
    }

    /// Symmetric covariance `<{J_a, J_b}>/2 - <J_a><J_b>`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let m = self.mean_spin();
        let mut c = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                c[a][b] = 0.5 * (self.get(&[a, b]) + self.get(&[b, a])).re - m[a] * m[b];
            }
        }
        c
    }

    /// Ordered connected cumulant of a word.
    pub fn cumulant(&self, word: &[usize]) -> Result<C64> {
        if word.len() > self.max_order {
            return Err(Error::UnsupportedOrder(word.len()));
        }
        cumulant_from_moments(&|w: &[usize]| self.get(w), word)
    }

    /// Moment of the fully symmetrized product of `word`.
    pub fn symmetrized(&self, word: &[usize]) -> C64 {
        let perms = permutations(word.len());
        let total: C64 = perms
            .iter()
            .map(|p| {
                let w: Vec<usize> = p.iter().map(|&i| word[i]).collect();
                self.get(&w)
            })
            .sum();
        total / perms.len() as f64
    }
}

impl MomentSource for MomentTable {
    fn ordered(&self, word: &[usize]) -> C64 {
        self.get(word)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// All 27 ordered `Tr(J_j J_k J_l rho)`.
pub fn moments_third(rho: &DensityMatrix, ops: &CollectiveOperators) -> Result<[[[C64; 3]; 3]; 3]> {
    let t = MomentTable::from_density(rho, ops, 3)?;
    let mut out = [[[ZERO; 3]; 3]; 3];
    for i in 0..27 {
        let w = index_word(i, 3);
        out[w[0]][w[1]][w[2]] = t.get(&w);
    }
    Ok(out)
}

/// Sum of `|<J_j J_k>_c|` (order 2) or `|<J_j J_k J_l>_c|` (order 3) over
/// all ordered index tuples.
pub fn c_total(table: &MomentTable, order: usize) -> Result<f64> {
    if !(2..=3).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let mut total = 0.0;
    for i in 0..3usize.pow(order as u32) {
        total += table.cumulant(&index_word(i, order))?.norm();
    }
    Ok(total)
}

/// Multisets of `n` axes, as sorted words.
fn multisets(n: usize) -> Vec<Vec<usize>> {
    (0..3usize.pow(n as u32))
        .map(|i| index_word(i, n))
        .filter(|w| w.windows(2).all(|p| p[0] <= p[1]))
        .collect()
}

/// Sum over multisets `{k_i}` with `sum k_i = n` of `|n! <S prod J_i^k_i>_c|`,
/// with every block moment symmetrized over orderings.
pub fn cn_total_symmetrized(table: &MomentTable, order: usize) -> Result<f64> {
    if !(1..=4).contains(&order) || order > table.max_order() {
        return Err(Error::UnsupportedOrder(order));
    }
    let fact: f64 = (1..=order).map(|k| k as f64).product();
    let mut total = 0.0;
    for w in multisets(order) {
        let k = cumulant_from_moments(&|sub: &[usize]| table.symmetrized(sub), &w)?;
        total += (k * fact).norm();
    }
    Ok(total)
}

/// Deformation of the perpendicular fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub chi2: f64,
    /// Angle of the largest perpendicular variance, measured from the
    /// longitudinal direction, in `[0, pi)`.
    pub phi_max: f64,
    pub phi_min: f64,
    pub var_max: f64,
    pub var_min: f64,
}

/// Ratio of the largest to smallest variance perpendicular to the mean spin.
/// The perpendicular covariance uses symmetrized products.
pub fn chi_squared(table: &MomentTable, n_atoms: usize) -> Result<ChiSquared> {
    let m = table.mean_spin();
    let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    if !(norm >= 1e-9 * n_atoms as f64) {
        return Err(Error::UndefinedMeanSpin { norm });
    }
    let theta = (m[2] / norm).clamp(-1.0, 1.0).acos();
    let phi = m[1].atan2(m[0]);
    let e1 = [theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin()];
    let e2 = [-phi.sin(), phi.cos(), 0.0];
    let c = table.covariance();
    let quad = |u: &[f64; 3], v: &[f64; 3]| -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += u[a] * c[a][b] * v[b];
            }
        }
        s
    };
    let (v11, v22, v12) = (quad(&e1, &e1), quad(&e2, &e2), quad(&e1, &e2));
    let mean = 0.5 * (v11 + v22);
    let half_gap = (0.25 * (v11 - v22).powi(2) + v12 * v12).sqrt();
    let (var_max, var_min) = (mean + half_gap, mean - half_gap);
    if half_gap <= 1e-14 * mean.abs().max(f64::MIN_POSITIVE) {
        return Ok(ChiSquared {
            chi2: 1.0,
            phi_max: 0.0,
            phi_min: PI / 2.0,
            var_max,
            var_min,
        });
    }
    let phi_max = (0.5 * (2.0 * v12).atan2(v11 - v22)).rem_euclid(PI);
    let phi_min = (phi_max + PI / 2.0).rem_euclid(PI);
    Ok(ChiSquared {
        chi2: var_max / var_min,
        phi_max,
        phi_min,
        var_max,
        var_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mean_spin: [f64; 3],
    pub chi2: f64,
    pub perp_var_max: f64,
    pub perp_var_min: f64,
    pub phi_max: f64,
    pub phi_min: f64,
    pub c2_total: f64,
    pub c3_total: f64,
}

/// Every per-state diagnostic from a table of order at least 3.
pub fn correlation_report(table: &MomentTable, n_atoms: usize) -> Result<CorrelationReport> {
    let chi = chi_squared(table, n_atoms)?;
    Ok(CorrelationReport {
        mean_spin: table.mean_spin(),
        chi2: chi.chi2,
        perp_var_max: chi.var_max,
        perp_var_min: chi.var_min,
        phi_max: chi.phi_max,
        phi_min: chi.phi_min,
        c2_total: c_total(table, 2)?,
        c3_total: c_total(table, 3)?,
    })
}

/// `Q(theta, phi) = <theta, phi| rho |theta, phi>` on a product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGrid {
    pub n_atoms: usize,
    /// Ascending in `[0, pi]`, Gauss-Legendre in `cos(theta)`.
    pub theta_nodes: Vec<f64>,
    /// Quadrature weights in `cos(theta)` matching `theta_nodes`.
    pub theta_weights: Vec<f64>,
    /// Uniform on `[0, 2 pi)`.
    pub phi_nodes: Vec<f64>,
    /// `values[i][j] = Q(theta_i, phi_j)`.
    pub values: Vec<Vec<f64>>,
}

impl QGrid {
    /// `(N+1)/(4 pi)` times the quadrature of Q over the sphere.
    pub fn normalization(&self) -> f64 {
        let dphi = 2.0 * PI / self.phi_nodes.len() as f64;
        let s: f64 = self
            .values
            .iter()
            .zip(&self.theta_weights)
            .map(|(row, w)| w * dphi * row.iter().sum::<f64>())
            .sum();
        (self.n_atoms as f64 + 1.0) / (4.0 * PI) * s
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "theta,phi,q")?;
        for (i, row) in self.values.iter().enumerate() {
            for (j, q) in row.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{}",
                    csv_float(self.theta_nodes[i]),
                    csv_float(self.phi_nodes[j]),
                    csv_float(*q)
                )?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_atoms": self.n_atoms,
            "theta": self.theta_nodes,
            "phi": self.phi_nodes,
            "q": self.values,
        })
    }
}

/// Default resolution: `2N+1` polar by `2N+2` azimuthal nodes.
pub fn default_resolution(n_atoms: usize) -> (usize, usize) {
    (2 * n_atoms + 1, 2 * n_atoms + 2)
}

fn grid_nodes(n_theta: usize, n_phi: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if n_theta < 8 || n_phi < 8 {
        return Err(Error::InvalidParams(format!(
            "Q-function grid {n_theta}x{n_phi} is below 8x8"
        )));
    }
    let (x, w) = gauss_legendre(n_theta);
    // x ascending -> theta = acos(-x) ascending
    let theta: Vec<f64> = x.iter().map(|&c| (-c).acos()).collect();
    let phi: Vec<f64> = (0..n_phi).map(|j| 2.0 * PI * j as f64 / n_phi as f64).collect();
    Ok((theta, w, phi))
}

/// Q-function of a density matrix. Per polar node the band sums
/// `c_k = sum_p A_p A_(p+k) rho_(p,p+k)` are formed once, then
/// `Q = Re(c_0 + 2 sum_k c_k e^(i k phi))`.
pub fn q_function(rho: &DensityMatrix, n_theta: usize, n_phi: usize) -> Result<QGrid> {
    let (theta, weights, phi) = grid_nodes(n_theta, n_phi)?;
    let n = rho.n_atoms();
    let d = n + 1;
    let values: Vec<Vec<f64>> = theta
        .par_iter()
        .map(|&th| {
            let amp = coherent_amplitudes(n, th);
            let bands: Vec<C64> = (0..d)
                .map(|k| (0..d - k).map(|p| rho.rho[(p, p + k)] * (amp[p] * amp[p + k])).sum())
                .collect();
            phi.iter()
                .map(|&ph| {
                    let step = C64::from_polar(1.0, ph);
                    let mut rot = step;
                    let mut acc = bands[0].re;
                    for c in &bands[1..] {
                        acc += 2.0 * (c * rot).re;
                        rot *= step;
                    }
                    acc.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    Ok(QGrid {
        n_atoms: n,
        theta_nodes: theta,
        theta_weights: weights,
        phi_nodes: phi,
        values,
    })
}

/// Q-function of a pure state, `|<theta, phi|psi>|^2`.
pub fn q_function_pure(psi: &DickeVector, n_theta: usize, n_phi: usize) -> Result<QGrid> {
    let (theta, weights, phi) = grid_nodes(n_theta, n_phi)?;
    let n = psi.n_atoms();
    let values = theta
        .par_iter()
        .map(|&th| {
            let amp = coherent_amplitudes(n, th);
            phi.iter()
                .map(|&ph| {
                    let step = C64::from_polar(1.0, -ph);
                    let mut rot = C64::new(1.0, 0.0);
                    let mut acc = ZERO;
                    for (a, x) in amp.iter().zip(psi.amplitudes.iter()) {
                        acc += x * rot * *a;
                        rot *= step;
                    }
                    acc.norm_sqr().clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    Ok(QGrid {
        n_atoms: n,
        theta_nodes: theta,
        theta_weights: weights,
        phi_nodes: phi,
        values,
    })
}
