//! Second-order cumulant backend.
//!
//! The state is the mean spin plus the six symmetrized second moments. Their
//! equations of motion are generated symbolically from the adjoint master
//! equation
//!
//! ```text
//! dA/dt = i (xi lambda^2/N) [A, Jx^2 + Jy^2]
//!       + (eta lambda^2/N) ([J+, A] J- + J+ [A, J-])
//! ```
//!
//! (inner commutators by the Leibniz rule, `J+-` expanded into `Jx +- iJy`),
//! then every word is brought to sorted order `x <= y <= z` with
//! `[J_j, J_k] = i eps_jkl J_l`. Third-order sorted words are replaced by the
//! vanishing-third-cumulant closure.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::ode::{self, Dopri5Options};
use crate::schedule::Drive;
use crate::spin::{levi_civita, CollectiveOperators, DickeVector, Expectation, ModelParams, C64};

pub const DEFAULT_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const IM: C64 = C64::new(0.0, 1.0);

/// Index pairs of the six stored second moments.
pub const SECOND_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn pair_slot(j: usize, k: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    SECOND_PAIRS.iter().position(|&p| p == (a, b)).unwrap()
}

/// `eps_jkl <J_l>` summed over `l`.
fn eps_contract(j: usize, k: usize, first: &[f64; 3]) -> f64 {
    (0..3).map(|l| levi_civita(j, k, l) * first[l]).sum()
}

/// Mean spin and second moments. For `j < k` the stored value is the real
/// part of `<J_j J_k>`, i.e. the symmetrized moment; the full ordered moment
/// is `second + (i/2) eps_jkl <J_l>`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentState {
    pub first: [f64; 3],
    pub second: [f64; 6],
}

impl MomentState {
    pub const LEN: usize = 9;

    /// Exact moments of `state` from the dense operator matrices.
    pub fn from_state<S: Expectation + ?Sized>(ops: &CollectiveOperators, state: &S) -> Result<Self> {
        let mats = [&ops.j_x, &ops.j_y, &ops.j_z];
        let mut first = [0.0; 3];
        for (j, m) in mats.iter().enumerate() {
            first[j] = state.expectation(m)?.re;
        }
        let mut second = [0.0; 6];
        for (s, &(j, k)) in SECOND_PAIRS.iter().enumerate() {
            second[s] = state.expectation(&(mats[j] * mats[k]))?.re;
        }
        Ok(Self { first, second })
    }

    /// Moments with every symmetrized second cumulant zero.
    pub fn factorized(first: [f64; 3]) -> Self {
        let mut second = [0.0; 6];
        for (s, &(j, k)) in SECOND_PAIRS.iter().enumerate() {
            second[s] = first[j] * first[k];
        }
        Self { first, second }
    }

    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(&self.first);
        out[3..].copy_from_slice(&self.second);
        out
    }

    pub fn from_slice(y: &[f64]) -> Self {
        let mut s = Self::default();
        s.first.copy_from_slice(&y[..3]);
        s.second.copy_from_slice(&y[3..9]);
        s
    }

    /// Symmetrized `<{J_j, J_k}>/2`.
    pub fn symmetric(&self, j: usize, k: usize) -> f64 {
        self.second[pair_slot(j, k)]
    }

    /// Ordered `<J_j J_k>` for any `j, k`.
    pub fn ordered_second(&self, j: usize, k: usize) -> C64 {
        C64::new(self.symmetric(j, k), 0.5 * eps_contract(j, k, &self.first))
    }

    /// Connected symmetrized second cumulants in storage order.
    pub fn connected_second(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (s, &(j, k)) in SECOND_PAIRS.iter().enumerate() {
            out[s] = self.second[s] - self.first[j] * self.first[k];
        }
        out
    }

    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                c[j][k] = self.symmetric(j, k) - self.first[j] * self.first[k];
            }
        }
        c
    }

    /// `<Jx^2> + <Jy^2> + <Jz^2>`.
    pub fn casimir(&self) -> f64 {
        self.second[0] + self.second[3] + self.second[5]
    }

    /// Flips `(<Jz>, <Jz J_x>, <Jz J_y>)`.
    pub fn inversion_reflected(&self) -> Self {
        let mut s = *self;
        s.first[2] = -s.first[2];
        s.second[2] = -s.second[2];
        s.second[4] = -s.second[4];
        s
    }
}

/// Ordered expectation values of words in `J_x, J_y, J_z` up to length 3.
pub trait MomentSource {
    fn ordered(&self, word: &[usize]) -> C64;
}

/// The cumulant state, closing third moments with [`closure3_word`].
impl MomentSource for MomentState {
    fn ordered(&self, word: &[usize]) -> C64 {
        match word.len() {
            0 => ONE,
            1 => C64::new(self.first[word[0]], 0.0),
            2 => self.ordered_second(word[0], word[1]),
            3 => closure3_word(self, word[0], word[1], word[2]),
            n => panic!("no moments of order {n} in the cumulant state"),
        }
    }
}

/// `<a><bc> + <b><ac> + <c><ab> - 2<a><b><c>`, i.e. the ordered third moment
/// with vanishing third cumulant.
pub fn closure3_word(state: &MomentState, a: usize, b: usize, c: usize) -> C64 {
    let m = |j: usize| state.first[j];
    state.ordered_second(b, c) * m(a) + state.ordered_second(a, c) * m(b)
        + state.ordered_second(a, b) * m(c)
        - C64::new(2.0 * m(a) * m(b) * m(c), 0.0)
}

/// All 27 closed ordered third moments, indexed `[j][k][l]`.
pub fn closure3(state: &MomentState) -> [[[C64; 3]; 3]; 3] {
    let mut out = [[[ZERO; 3]; 3]; 3];
    for (j, plane) in out.iter_mut().enumerate() {
        for (k, row) in plane.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                *v = closure3_word(state, j, k, l);
            }
        }
    }
    out
}

/// Exact ordered moments up to third order of a concrete state.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    values: BTreeMap<Vec<usize>, C64>,
}

impl ExactMoments {
    pub fn from_state<S: Expectation + ?Sized>(ops: &CollectiveOperators, state: &S) -> Result<Self> {
        let mats = [&ops.j_x, &ops.j_y, &ops.j_z];
        let mut values = BTreeMap::new();
        values.insert(Vec::new(), ONE);
        for a in 0..3 {
            values.insert(vec![a], state.expectation(mats[a])?);
            for b in 0..3 {
                let ab = mats[a] * mats[b];
                values.insert(vec![a, b], state.expectation(&ab)?);
                for c in 0..3 {
                    values.insert(vec![a, b, c], state.expectation(&(&ab * mats[c]))?);
                }
            }
        }
        Ok(Self { values })
    }
}

impl MomentSource for ExactMoments {
    fn ordered(&self, word: &[usize]) -> C64 {
        self.values[word]
    }
}

// ---- symbolic expansion ----

type Poly = BTreeMap<Vec<usize>, C64>;

fn add_term(p: &mut Poly, w: Vec<usize>, c: C64) {
    let e = p.entry(w).or_insert(ZERO);
    *e += c;
}

fn scale(p: &Poly, c: C64) -> Poly {
    p.iter().map(|(w, v)| (w.clone(), v * c)).collect()
}

fn add(a: &Poly, b: &Poly) -> Poly {
    let mut out = a.clone();
    for (w, v) in b {
        add_term(&mut out, w.clone(), *v);
    }
    out
}

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (wa, va) in a {
        for (wb, vb) in b {
            let mut w = wa.clone();
            w.extend_from_slice(wb);
            add_term(&mut out, w, va * vb);
        }
    }
    out
}

fn letter(j: usize) -> Poly {
    Poly::from([(vec![j], ONE)])
}

/// `[J_a, J_b] = i eps_abl J_l`.
fn letter_commutator(a: usize, b: usize) -> Vec<(usize, C64)> {
    (0..3)
        .filter_map(|l| {
            let e = levi_civita(a, b, l);
            (e != 0.0).then(|| (l, IM * e))
        })
        .collect()
}

/// `[A, J_b]` by the Leibniz rule.
fn commutator_with_letter(a: &Poly, b: usize) -> Poly {
    let mut out = Poly::new();
    for (w, v) in a {
        for i in 0..w.len() {
            for (l, c) in letter_commutator(w[i], b) {
                let mut nw = w.clone();
                nw[i] = l;
                add_term(&mut out, nw, v * c);
            }
        }
    }
    out
}

/// Unit-coupling generator split into its twisting and dissipative parts,
/// before any reordering.
fn raw_generator(a: &Poly) -> (Poly, Poly) {
    let mut twist = Poly::new();
    for b in [0, 1] {
        let c = commutator_with_letter(a, b);
        twist = add(&twist, &add(&mul(&c, &letter(b)), &mul(&letter(b), &c)));
    }
    let twist = scale(&twist, IM);

    let jp = add(&letter(0), &scale(&letter(1), IM));
    let jm = add(&letter(0), &scale(&letter(1), -IM));
    // [A, J-] and [J+, A] = -[A, J+]
    let a_jm = add(&commutator_with_letter(a, 0), &scale(&commutator_with_letter(a, 1), -IM));
    let jp_a = scale(
        &add(&commutator_with_letter(a, 0), &scale(&commutator_with_letter(a, 1), IM)),
        -ONE,
    );
    let diss = add(&mul(&jp, &a_jm), &mul(&jp_a, &jm));
    (twist, diss)
}

fn normal_order_word(w: &[usize], coef: C64, out: &mut Poly) {
    match w.windows(2).position(|p| p[0] > p[1]) {
        None => add_term(out, w.to_vec(), coef),
        Some(i) => {
            let mut swapped = w.to_vec();
            swapped.swap(i, i + 1);
            normal_order_word(&swapped, coef, out);
            for (l, c) in letter_commutator(w[i], w[i + 1]) {
                let mut shorter = Vec::with_capacity(w.len() - 1);
                shorter.extend_from_slice(&w[..i]);
                shorter.push(l);
                shorter.extend_from_slice(&w[i + 2..]);
                normal_order_word(&shorter, coef * c, out);
            }
        }
    }
}

fn normal_order(p: &Poly) -> Poly {
    let mut out = Poly::new();
    for (w, v) in p {
        normal_order_word(w, *v, &mut out);
    }
    out.retain(|_, v| v.norm() > 1e-13);
    out
}

fn target(index: usize) -> Poly {
    if index < 3 {
        letter(index)
    } else {
        let (j, k) = SECOND_PAIRS[index - 3];
        scale(&add(&mul(&letter(j), &letter(k)), &mul(&letter(k), &letter(j))), C64::new(0.5, 0.0))
    }
}

/// Sorted words of length at most three.
fn sorted_words() -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for a in 0..3 {
        out.push(vec![a]);
    }
    for a in 0..3 {
        for b in a..3 {
            out.push(vec![a, b]);
        }
    }
    for a in 0..3 {
        for b in a..3 {
            for c in b..3 {
                out.push(vec![a, b, c]);
            }
        }
    }
    out
}

/// Precompiled right-hand side: for each of the nine targets, the
/// coefficients on each sorted word for unit twisting and unit dissipative
/// coupling.
#[derive(Debug)]
struct RhsTable {
    words: Vec<Vec<usize>>,
    twist: Vec<Vec<C64>>,
    diss: Vec<Vec<C64>>,
    /// Unsorted degree-two words of the first-moment equations.
    raw_first: Vec<(Poly, Poly)>,
}

fn table() -> &'static RhsTable {
    static TABLE: OnceLock<RhsTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let words = sorted_words();
        let mut twist = Vec::new();
        let mut diss = Vec::new();
        let mut raw_first = Vec::new();
        for i in 0..MomentState::LEN {
            let (rt, rd) = raw_generator(&target(i));
            let (nt, nd) = (normal_order(&rt), normal_order(&rd));
            let coeffs = |p: &Poly| -> Vec<C64> {
                for w in p.keys() {
                    assert!(w.len() <= 3, "generator produced a word of length {}", w.len());
                }
                words.iter().map(|w| p.get(w).copied().unwrap_or(ZERO)).collect()
            };
            twist.push(coeffs(&nt));
            diss.push(coeffs(&nd));
            if i < 3 {
                raw_first.push((rt, rd));
            }
        }
        RhsTable {
            words,
            twist,
            diss,
            raw_first,
        }
    })
}

/// Complex right-hand sides of the nine stored moments, with moments of any
/// order drawn from `source`. For exact moments the imaginary parts vanish.
pub fn moment_rhs_complex(source: &dyn MomentSource, params: &ModelParams) -> [C64; 9] {
    let tab = table();
    let n = params.n_atoms() as f64;
    let ct = params.dispersive_coupling() / n;
    let cd = params.dissipative_coupling() / n;
    let values: Vec<C64> = tab.words.iter().map(|w| source.ordered(w)).collect();
    let mut out = [ZERO; 9];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for (s, v) in values.iter().enumerate() {
            acc += (tab.twist[i][s] * ct + tab.diss[i][s] * cd) * v;
        }
        *o = acc;
    }
    out
}

/// Time derivative of the closed moment state.
pub fn moment_rhs(state: &MomentState, params: &ModelParams) -> MomentState {
    let d = moment_rhs_complex(state, params);
    let re: Vec<f64> = d.iter().map(|z| z.re).collect();
    MomentState::from_slice(&re)
}

/// First-moment equations with every ordered product factorized, which is
/// the mean-field limit written in Cartesian components.
pub fn factorized_rhs(first: &[f64; 3], params: &ModelParams) -> [f64; 3] {
    let tab = table();
    let n = params.n_atoms() as f64;
    let ct = params.dispersive_coupling() / n;
    let cd = params.dissipative_coupling() / n;
    let eval = |p: &Poly| -> C64 {
        p.iter()
            .map(|(w, v)| v * w.iter().map(|&j| first[j]).product::<f64>())
            .sum()
    };
    let mut out = [0.0; 3];
    for (i, (rt, rd)) in tab.raw_first.iter().enumerate() {
        out[i] = (eval(rt) * ct + eval(rd) * cd).re;
    }
    out
}

/// Initial condition for [`integrate_cumulant2`].
#[derive(Debug, Clone)]
pub enum CumulantInitial {
    State(DickeVector),
    Moments(MomentState),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CumulantTrajectory {
    pub times: Vec<f64>,
    pub moments: Vec<MomentState>,
    /// Connected symmetrized second cumulants, storage order.
    pub connected: Vec<[f64; 6]>,
}

impl CumulantTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integrates the closed moment equations.
pub fn integrate_cumulant2(
    initial: &CumulantInitial,
    drive: &dyn Drive,
    t_span: (f64, f64),
    sample_times: &[f64],
    tol: f64,
) -> Result<CumulantTrajectory> {
    let n = drive.n_atoms();
    let start = match initial {
        CumulantInitial::State(psi) => {
            if psi.n_atoms() != n {
                return Err(Error::DimensionMismatch {
                    expected: n + 1,
                    actual: psi.dim(),
                });
            }
            let ops = CollectiveOperators::new(n)?;
            MomentState::from_state(&ops, psi)?
        }
        CumulantInitial::Moments(m) => *m,
    };
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidParams(format!("tolerance {tol} outside (0, 1e-2]")));
    }
    let mut out = CumulantTrajectory::default();
    ode::integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            let d = moment_rhs(&MomentState::from_slice(y), &drive.params_at(t));
            dy.copy_from_slice(&d.to_array());
        },
        t_span.0,
        &start.to_array(),
        t_span.1,
        sample_times,
        &drive.breakpoints(),
        &Dopri5Options::with_tol(tol),
        |t, y| {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t });
            }
            let m = MomentState::from_slice(y);
            out.times.push(t);
            out.connected.push(m.connected_second());
            out.moments.push(m);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Integrates [`factorized_rhs`] for the mean spin alone.
pub fn integrate_factorized(
    first: [f64; 3],
    drive: &dyn Drive,
    t_span: (f64, f64),
    sample_times: &[f64],
    tol: f64,
) -> Result<Vec<(f64, [f64; 3])>> {
    let mut out = Vec::with_capacity(sample_times.len());
    ode::integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            let d = factorized_rhs(&[y[0], y[1], y[2]], &drive.params_at(t));
            dy.copy_from_slice(&d);
        },
        t_span.0,
        &first,
        t_span.1,
        sample_times,
        &drive.breakpoints(),
        &Dopri5Options::with_tol(tol),
        |t, y| {
            out.push((t, [y[0], y[1], y[2]]));
            Ok(())
        },
    )?;
    Ok(out)
}

/// Joint cumulant of `operators` (length 1 to 4) from ordered moments:
/// the sum over set partitions of `(|p|-1)! (-1)^(|p|-1)` times the product
/// of block moments, each block keeping the original relative order.
pub fn cumulant_from_moments<T: Copy>(
    moment: &dyn Fn(&[T]) -> C64,
    operators: &[T],
) -> Result<C64> {
    let n = operators.len();
    if !(1..=4).contains(&n) {
        return Err(Error::UnsupportedOrder(n));
    }
    let mut total = ZERO;
    let mut rgs = vec![0usize; n];
    loop {
        let blocks = rgs.iter().max().unwrap() + 1;
        let mut prod = ONE;
        for b in 0..blocks {
            let sub: Vec<T> = (0..n).filter(|&i| rgs[i] == b).map(|i| operators[i]).collect();
            prod *= moment(&sub);
        }
        let fact: f64 = (1..blocks).map(|k| k as f64).product();
        let sign = if blocks % 2 == 1 { 1.0 } else { -1.0 };
        total += prod * (sign * fact);
        if !next_restricted_growth(&mut rgs) {
            break;
        }
    }
    Ok(total)
}

/// Advances a restricted growth string; false once exhausted.
fn next_restricted_growth(a: &mut [usize]) -> bool {
    let n = a.len();
    for i in (1..n).rev() {
        let max_prefix = a[..i].iter().copied().max().unwrap();
        if a[i] <= max_prefix {
            a[i] += 1;
            for v in a[i + 1..].iter_mut() {
                *v = 0;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{lindblad_rhs, DensityMatrix};
    use crate::meanfield::{integrate_meanfield, BlochAngles};
    use crate::spin::coherent_state;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ops(n: usize) -> CollectiveOperators {
        CollectiveOperators::new(n).unwrap()
    }

    fn moments_of(n: usize, theta: f64, phi: f64) -> MomentState {
        MomentState::from_state(&ops(n), &coherent_state(n, theta, phi).unwrap()).unwrap()
    }

    #[test]
    fn table_has_no_quartic_words() {
        let tab = table();
        assert_eq!(tab.words.len(), 20);
        assert_eq!(tab.twist.len(), 9);
    }

    #[test]
    fn south_pole_is_fixed() {
        for n in [1, 4, 50] {
            let m = MomentState::from_state(&ops(n), &DickeVector::south_pole(n)).unwrap();
            let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
            let d = moment_rhs(&m, &p);
            assert!(d.to_array().iter().all(|v| v.abs() < 1e-14), "{d:?}");
        }
    }

    #[test]
    fn exact_rhs_matches_master_equation() {
        // un-closed equations with exact third moments against Tr(A L(rho))
        for (n, theta, phi, omega) in [(2, PI / 10.0, PI / 2.0, 5.0), (3, 1.1, 0.3, 2.0), (6, 2.0, -1.0, 0.7)] {
            let o = ops(n);
            let p = ModelParams::new(n, 1.0, omega, 0.5).unwrap();
            let psi = coherent_state(n, theta, phi).unwrap();
            let mixed = coherent_state(n, 0.4, 2.0).unwrap();
            let rho = DensityMatrix::new(
                DensityMatrix::from_pure(&psi).rho * C64::new(0.7, 0.0)
                    + DensityMatrix::from_pure(&mixed).rho * C64::new(0.3, 0.0),
            )
            .unwrap();
            let drho = DensityMatrix::new(lindblad_rhs(&rho, &p, &o).unwrap()).unwrap();
            let exact = ExactMoments::from_state(&o, &rho).unwrap();
            let d = moment_rhs_complex(&exact, &p);
            let reference = MomentState::from_state(&o, &drho).unwrap().to_array();
            for i in 0..9 {
                assert!((d[i].re - reference[i]).abs() < 1e-10, "N={n} i={i}: {} vs {}", d[i], reference[i]);
                assert!(d[i].im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_rhs_imaginary_residue_is_subleading() {
        // the ordered closure ignores commutators at third order; the
        // discarded imaginary part shrinks like 1/N against the real part
        let mut last = f64::INFINITY;
        for n in [20, 80, 320] {
            let m = moments_of(n, 0.8, 0.4);
            let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
            let d = moment_rhs_complex(&m, &p);
            let re = d.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
            let im = d.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            assert!(im < 0.05 * re);
            assert!(im / re < last);
            last = im / re;
        }
    }

    #[test]
    fn closure_examples() {
        let zero = MomentState {
            first: [0.0; 3],
            second: [3.0, 0.2, -0.1, 2.0, 0.4, 1.0],
        };
        assert!(closure3(&zero).iter().flatten().flatten().all(|z| z.norm() == 0.0));
        let c = 1.7;
        let det = MomentState {
            first: [0.0, 0.0, c],
            second: [0.0, 0.0, 0.0, 0.0, 0.0, c * c],
        };
        assert!((closure3(&det)[2][2][2] - C64::new(c * c * c, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn closure_error_bounded_by_true_third_cumulant() {
        let n = 4;
        let o = ops(n);
        let psi = coherent_state(n, PI / 3.0, 1.0).unwrap();
        let exact = ExactMoments::from_state(&o, &psi).unwrap();
        let m = MomentState::from_state(&o, &psi).unwrap();
        let closed = closure3(&m)[0][1][2];
        let truth = exact.ordered(&[0, 1, 2]);
        let kappa3 = cumulant_from_moments(&|w: &[usize]| exact.ordered(w), &[0, 1, 2]).unwrap();
        assert!(((closed - truth).norm() - kappa3.norm()).abs() < 1e-12);
    }

    #[test]
    fn first_moments_reproduce_meanfield() {
        for (theta, phi) in [(0.3f64, 0.0f64), (1.2, 2.0), (2.5, -0.7), (PI / 2.0, 1.0)] {
            let n = 40;
            let p = ModelParams::new(n, 1.0, 3.0, 0.5).unwrap();
            let j = n as f64 / 2.0;
            let first = [
                j * theta.sin() * phi.cos(),
                j * theta.sin() * phi.sin(),
                j * theta.cos(),
            ];
            let d = factorized_rhs(&first, &p);
            let (dth, dph) = crate::meanfield::meanfield_rhs(BlochAngles::new(theta, phi), &p);
            let expect = [
                j * (theta.cos() * phi.cos() * dth - theta.sin() * phi.sin() * dph),
                j * (theta.cos() * phi.sin() * dth + theta.sin() * phi.cos() * dph),
                -j * theta.sin() * dth,
            ];
            for k in 0..3 {
                assert!((d[k] - expect[k]).abs() < 1e-12 * j);
            }
        }
    }

    #[test]
    fn forced_factorization_tracks_meanfield() {
        let n = 200;
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        let ts: Vec<f64> = (0..=20).map(|k| 20.0 * k as f64).collect();
        let tol = 1e-9;
        let mf = integrate_meanfield(BlochAngles::new(PI / 10.0, PI / 2.0), &p, (0.0, 400.0), &ts, tol).unwrap();
        let j = n as f64 / 2.0;
        let first = [0.0, j * (PI / 10.0).sin(), j * (PI / 10.0).cos()];
        let fz = integrate_factorized(first, &p, (0.0, 400.0), &ts, tol).unwrap();
        for ((_, a), b) in fz.iter().zip(mf.mean_spin(n)) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() / j < 10.0 * tol, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn coherent_initial_cumulants() {
        for (n, theta, phi) in [(10, 0.3, 1.0), (200, PI / 10.0, PI / 2.0)] {
            let m = moments_of(n, theta, phi);
            let j = n as f64 / 2.0;
            let u = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
            let cov = m.covariance();
            for a in 0..3 {
                for b in 0..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let expect = 0.5 * j * (delta - u[a] * u[b]);
                    assert!((cov[a][b] - expect).abs() < 1e-9 * n as f64);
                }
            }
        }
    }

    #[test]
    fn trajectory_from_south_pole_is_constant() {
        let n = 30;
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        let init = CumulantInitial::State(DickeVector::south_pole(n));
        let tr = integrate_cumulant2(&init, &p, (0.0, 100.0), &[0.0, 50.0, 100.0], DEFAULT_TOL).unwrap();
        for m in &tr.moments {
            assert_eq!(m, &tr.moments[0]);
        }
    }

    #[test]
    fn casimir_and_covariance_preserved() {
        let n = 100;
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        let init = CumulantInitial::State(coherent_state(n, PI / 10.0, PI / 2.0).unwrap());
        let ts: Vec<f64> = (0..=40).map(|k| 10.0 * k as f64).collect();
        let tr = integrate_cumulant2(&init, &p, (0.0, 400.0), &ts, DEFAULT_TOL).unwrap();
        let j = n as f64 / 2.0;
        for m in &tr.moments {
            assert!((m.casimir() - j * (j + 1.0)).abs() < 1e-6 * (n * n) as f64);
        }
    }

    #[test]
    fn inversion_time_reversal_on_symmetry_subspace() {
        for n in [200usize, 2000, 20000] {
            reversal_drift(n);
        }
    }

    fn reversal_drift(n: usize) {
        let j = n as f64 / 2.0;
        let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
        // equatorial state with squeezed transverse fluctuations, no z correlations
        let first = [j * 0.6, j * 0.8, 0.0];
        let mut s = MomentState::factorized(first);
        s.second[0] += 0.1 * j;
        s.second[1] += -0.04 * j;
        s.second[3] += 0.06 * j;
        s.second[5] += 0.3 * j;
        let dt = 5.0;
        let fwd = integrate_cumulant2(&CumulantInitial::Moments(s), &p, (0.0, dt), &[dt], 1e-11).unwrap();
        let mut back = MomentState::default();
        ode::integrate(
            |_, y: &[f64], dy: &mut [f64]| {
                let d = moment_rhs(&MomentState::from_slice(y), &p).to_array();
                for (a, b) in dy.iter_mut().zip(d) {
                    *a = -b;
                }
            },
            0.0,
            &s.to_array(),
            dt,
            &[dt],
            &[],
            &Dopri5Options::with_tol(1e-11),
            |_, y| {
                back = MomentState::from_slice(y);
                Ok(())
            },
        )
        .unwrap();
        let reflected = fwd.moments[0].inversion_reflected().to_array();
        let back = back.to_array();
        let drift: Vec<f64> = reflected.iter().zip(&back).map(|(a, b)| (a - b).abs()).collect();
        let change: f64 = s.to_array().iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let worst = drift.iter().copied().fold(0.0, f64::max);
        // symmetric up to ordering terms that are O(1/N) relative to the motion
        assert!(worst < 6.0 / n as f64 * change, "N={n}: drift {drift:?}, change {change}");
    }

    // textbook recursion: kappa(S) = m(S) - sum over proper blocks B containing
    // the first element of kappa(B) m(S \ B)
    fn recursive_cumulant(moment: &dyn Fn(&[usize]) -> C64, ops: &[usize]) -> C64 {
        let n = ops.len();
        if n == 1 {
            return moment(ops);
        }
        let mut total = moment(ops);
        for mask in 0..(1u32 << (n - 1)) {
            let mut block = vec![ops[0]];
            let mut rest = Vec::new();
            for i in 1..n {
                if mask & (1 << (i - 1)) != 0 {
                    block.push(ops[i]);
                } else {
                    rest.push(ops[i]);
                }
            }
            if rest.is_empty() {
                continue;
            }
            total -= recursive_cumulant(moment, &block) * moment(&rest);
        }
        total
    }

    #[test]
    fn cumulant_small_orders() {
        let m = |w: &[usize]| C64::new(w.iter().map(|&a| (a + 2) as f64).product(), 0.0);
        assert_eq!(cumulant_from_moments(&m, &[1]).unwrap(), C64::new(3.0, 0.0));
        let centred = |w: &[usize]| if w.len() == 1 { ZERO } else { C64::new(5.0, 1.0) };
        assert_eq!(cumulant_from_moments(&centred, &[0, 1]).unwrap(), C64::new(5.0, 1.0));
        assert!(matches!(cumulant_from_moments(&m, &[]), Err(Error::UnsupportedOrder(0))));
        assert!(matches!(cumulant_from_moments(&m, &[0; 5]), Err(Error::UnsupportedOrder(5))));
    }

    #[test]
    fn third_cumulant_matches_explicit_formula() {
        let o = ops(3);
        let psi = coherent_state(3, PI / 4.0, 0.0).unwrap();
        let ex = ExactMoments::from_state(&o, &psi).unwrap();
        let m = |w: &[usize]| ex.ordered(w);
        let k = cumulant_from_moments(&m, &[0, 1, 2]).unwrap();
        let explicit = m(&[0, 1, 2]) - m(&[0]) * m(&[1, 2]) - m(&[1]) * m(&[0, 2]) - m(&[2]) * m(&[0, 1])
            + m(&[0]) * m(&[1]) * m(&[2]) * 2.0;
        assert!((k - explicit).norm() < 1e-13);
    }

    proptest! {
        #[test]
        fn partition_sum_matches_recursion(
            values in proptest::collection::vec(-2.0f64..2.0, 16),
            ops in proptest::collection::vec(0usize..4, 1..=4),
        ) {
            // diagonal oracle: moments of commuting variables indexed by the
            // bitmask of the sub-tuple positions
            let table = values.clone();
            let m = move |w: &[usize]| {
                let mask = w.iter().fold(0usize, |acc, &a| acc | (1 << a));
                C64::new(table[mask] * (1.0 + w.len() as f64), 0.0)
            };
            let a = cumulant_from_moments(&m, &ops).unwrap();
            let b = recursive_cumulant(&m, &ops);
            prop_assert!((a - b).norm() < 1e-12);
        }
    }
}
