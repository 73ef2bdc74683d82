//! Dormand-Prince 5(4) integrator with PI step-size control and continuous
//! (dense) output, shared by every deterministic backend.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar types the integrator can advance.
pub trait OdeScalar:
    Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn modulus(self) -> f64;
    fn is_finite(self) -> bool;
}

impl OdeScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl OdeScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step allowed; `f64::INFINITY` for none.
    pub h_max: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Dopri5Options {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand-Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// error coefficients: b - b*
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const BETA: f64 = 0.04;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

struct Workspace<T> {
    k: [Vec<T>; 7],
    ytmp: Vec<T>,
    ynew: Vec<T>,
    dense: [Vec<T>; 5],
}

impl<T: OdeScalar> Workspace<T> {
    fn new(n: usize) -> Self {
        let z = || vec![T::zero(); n];
        Self {
            k: [z(), z(), z(), z(), z(), z(), z()],
            ytmp: z(),
            ynew: z(),
            dense: [z(), z(), z(), z(), z()],
        }
    }
}

fn error_norm<T: OdeScalar>(y: &[T], ynew: &[T], k: &[Vec<T>; 7], h: f64, o: &Dopri5Options) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6
            + k[6][i] * E7)
            * h;
        let sk = o.atol + o.rtol * y[i].modulus().max(ynew[i].modulus());
        let r = e.modulus() / sk;
        acc += r * r;
    }
    (acc / y.len().max(1) as f64).sqrt()
}

fn initial_step<T: OdeScalar, F: FnMut(f64, &[T], &mut [T])>(
    rhs: &mut F,
    t0: f64,
    y0: &[T],
    f0: &[T],
    span: f64,
    o: &Dopri5Options,
    ws: &mut Workspace<T>,
) -> f64 {
    let n = y0.len().max(1) as f64;
    let sk = |v: T| o.atol + o.rtol * v.modulus();
    let d0 = (y0.iter().map(|&v| (v.modulus() / sk(v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (y0
        .iter()
        .zip(f0)
        .map(|(&v, &f)| (f.modulus() / sk(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(o.h_max).min(span);
    for i in 0..y0.len() {
        ws.ytmp[i] = y0[i] + f0[i] * h0;
    }
    rhs(t0 + h0, &ws.ytmp, &mut ws.k[1]);
    let d2 = (y0
        .iter()
        .zip(f0.iter().zip(&ws.k[1]))
        .map(|(&v, (&a, &b))| ((b - a).modulus() / sk(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(o.h_max).min(span)
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t_end`.
///
/// `observe` is called at every entry of `sample_times` (sorted, inside
/// `[t0, t_end]`) with the interpolated state; returning an error aborts the
/// integration. Steps never cross an entry of `breakpoints`: the integrator
/// lands on each one and restarts, so the right-hand side may have kinks there.
pub fn integrate<T, F, O>(
    mut rhs: F,
    t0: f64,
    y0: &[T],
    t_end: f64,
    sample_times: &[f64],
    breakpoints: &[f64],
    opts: &Dopri5Options,
    mut observe: O,
) -> Result<(Vec<T>, IntegrationStats)>
where
    T: OdeScalar,
    F: FnMut(f64, &[T], &mut [T]),
    O: FnMut(f64, &[T]) -> Result<()>,
{
    if !(t0.is_finite() && t_end.is_finite()) || t_end < t0 {
        return Err(Error::InvalidParams(format!(
            "invalid time span [{t0}, {t_end}]"
        )));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParams("sample times must be sorted".into()));
    }
    if let (Some(&first), Some(&last)) = (sample_times.first(), sample_times.last()) {
        if first < t0 || last > t_end {
            return Err(Error::InvalidParams(
                "sample times must lie within the time span".into(),
            ));
        }
    }
    let n = y0.len();
    let mut stats = IntegrationStats::default();
    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut next_sample = 0;
    while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
        observe(sample_times[next_sample], &y)?;
        next_sample += 1;
    }
    if t_end == t0 {
        return Ok((y, stats));
    }

    let mut stops: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 && b < t_end)
        .collect();
    stops.sort_by(|a, b| a.total_cmp(b));
    stops.push(t_end);

    let mut h = f64::NAN;
    for (seg, &stop) in stops.iter().enumerate() {
        // stages never see the far side of an interior breakpoint
        let t_cap = if seg + 1 < stops.len() { stop.next_down() } else { f64::INFINITY };
        // (re)start: evaluate k1 afresh at the segment start
        rhs(t, &y, &mut ws.k[0]);
        stats.rhs_evals += 1;
        let span = stop - t;
        if span <= 0.0 {
            continue;
        }
        if !h.is_finite() {
            h = match opts.h_init {
                Some(h0) => h0.min(span),
                None => {
                    stats.rhs_evals += 1;
                    let k0 = ws.k[0].clone();
                    initial_step(&mut rhs, t, &y, &k0, span, opts, &mut ws)
                }
            };
        }
        let mut fac_old: f64 = 1e-4;
        let mut last_rejected = false;
        loop {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::TooManySteps {
                    t,
                    max_steps: opts.max_steps,
                });
            }
            h = h.min(opts.h_max);
            let h_suggest = h;
            let remaining = stop - t;
            let mut landing = false;
            if t + h * (1.0 + 1e-9) >= stop {
                h = remaining;
                landing = true;
            }
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t, h });
            }

            step_stages(&mut rhs, t, &y, h, t_cap, &mut ws);
            stats.rhs_evals += 6;
            let err = error_norm(&y, &ws.ynew, &ws.k, h, opts);
            if !err.is_finite() {
                if ws.ynew.iter().any(|v| !v.is_finite()) && h <= 1e-10 * t.abs().max(1.0) {
                    return Err(Error::NonFinite { t });
                }
                h *= 0.1;
                stats.rejected += 1;
                last_rejected = true;
                continue;
            }
            let fac11 = err.powf(0.2 - BETA * 0.75);
            if err <= 1.0 {
                let t_new = if landing { stop } else { t + h };
                // dense output for samples inside (t, t_new]
                if next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                    build_dense(&y, h, &mut ws);
                    while next_sample < sample_times.len() && sample_times[next_sample] <= t_new
                    {
                        let ts = sample_times[next_sample];
                        if ts == t_new {
                            observe(ts, &ws.ynew)?;
                        } else {
                            let theta = (ts - t) / h;
                            interpolate(&ws.dense, theta, &mut ws.ytmp);
                            observe(ts, &ws.ytmp)?;
                        }
                        next_sample += 1;
                    }
                }
                std::mem::swap(&mut y, &mut ws.ynew);
                // FSAL
                ws.k.swap(0, 6);
                t = t_new;
                stats.accepted += 1;
                let mut fac = fac11 / fac_old.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if last_rejected {
                    h_new = h_new.min(h);
                }
                fac_old = err.max(1e-4);
                last_rejected = false;
                if landing {
                    // keep the step suggestion for the next segment
                    h = h_new.max(h_suggest);
                    break;
                }
                h = h_new;
            } else {
                stats.rejected += 1;
                last_rejected = true;
                h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            }
        }
    }
    Ok((y, stats))
}

fn step_stages<T: OdeScalar, F: FnMut(f64, &[T], &mut [T])>(
    rhs: &mut F,
    t: f64,
    y: &[T],
    h: f64,
    t_cap: f64,
    ws: &mut Workspace<T>,
) {
    let n = y.len();
    let at = |c: f64| (t + c * h).min(t_cap);
    let Workspace { k, ytmp, ynew, .. } = ws;
    for i in 0..n {
        ytmp[i] = y[i] + k[0][i] * (h * A21);
    }
    rhs(at(C2), ytmp, &mut k[1]);
    for i in 0..n {
        ytmp[i] = y[i] + (k[0][i] * A31 + k[1][i] * A32) * h;
    }
    rhs(at(C3), ytmp, &mut k[2]);
    for i in 0..n {
        ytmp[i] = y[i] + (k[0][i] * A41 + k[1][i] * A42 + k[2][i] * A43) * h;
    }
    rhs(at(C4), ytmp, &mut k[3]);
    for i in 0..n {
        ytmp[i] = y[i] + (k[0][i] * A51 + k[1][i] * A52 + k[2][i] * A53 + k[3][i] * A54) * h;
    }
    rhs(at(C5), ytmp, &mut k[4]);
    for i in 0..n {
        ytmp[i] = y[i]
            + (k[0][i] * A61 + k[1][i] * A62 + k[2][i] * A63 + k[3][i] * A64 + k[4][i] * A65) * h;
    }
    rhs(at(1.0), ytmp, &mut k[5]);
    for i in 0..n {
        ynew[i] = y[i]
            + (k[0][i] * A71 + k[2][i] * A73 + k[3][i] * A74 + k[4][i] * A75 + k[5][i] * A76) * h;
    }
    rhs(at(1.0), ynew, &mut k[6]);
}

fn build_dense<T: OdeScalar>(y: &[T], h: f64, ws: &mut Workspace<T>) {
    let Workspace { k, ynew, dense, .. } = ws;
    for i in 0..y.len() {
        let ydiff = ynew[i] - y[i];
        let bspl = k[0][i] * h - ydiff;
        dense[0][i] = y[i];
        dense[1][i] = ydiff;
        dense[2][i] = bspl;
        dense[3][i] = ydiff - k[6][i] * h - bspl;
        dense[4][i] = (k[0][i] * D1 + k[2][i] * D3 + k[3][i] * D4 + k[4][i] * D5
            + k[5][i] * D6
            + k[6][i] * D7)
            * h;
    }
}

fn interpolate<T: OdeScalar>(dense: &[Vec<T>; 5], theta: f64, out: &mut [T]) {
    let theta1 = 1.0 - theta;
    for i in 0..out.len() {
        out[i] = dense[0][i]
            + (dense[1][i]
                + (dense[2][i] + (dense[3][i] + dense[4][i] * theta1) * theta) * theta1)
                * theta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_with_dense_output() {
        let samples: Vec<f64> = (0..=50).map(|k| k as f64 * 0.2).collect();
        let mut seen = Vec::new();
        let opts = Dopri5Options::with_tol(1e-10);
        let (y, stats) = integrate(
            |_, y: &[f64], dy: &mut [f64]| dy[0] = -0.7 * y[0],
            0.0,
            &[1.0],
            10.0,
            &samples,
            &[],
            &opts,
            |t, y| {
                seen.push((t, y[0]));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen.len(), samples.len());
        for (t, v) in seen {
            assert!((v - (-0.7 * t).exp()).abs() < 1e-9, "t={t}");
        }
        assert!((y[0] - (-7.0f64).exp()).abs() < 1e-10);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn complex_rotation() {
        let w = 3.0;
        let opts = Dopri5Options::with_tol(1e-10);
        let samples = [0.5, 1.37, 2.0];
        let mut out = Vec::new();
        integrate(
            |_, y: &[Complex64], dy: &mut [Complex64]| dy[0] = y[0] * Complex64::new(0.0, -w),
            0.0,
            &[Complex64::new(1.0, 0.0)],
            2.0,
            &samples,
            &[],
            &opts,
            |t, y| {
                out.push((t, y[0]));
                Ok(())
            },
        )
        .unwrap();
        for (t, v) in out {
            assert!((v - Complex64::from_polar(1.0, -w * t)).norm() < 1e-8);
        }
    }

    #[test]
    fn breakpoints_handle_kinks() {
        // dy/dt = 1 for t < 1, 0 after
        let opts = Dopri5Options::with_tol(1e-10);
        let (y, _) = integrate(
            |t, _: &[f64], dy: &mut [f64]| dy[0] = if t < 1.0 { 1.0 } else { 0.0 },
            0.0,
            &[0.0],
            3.0,
            &[],
            &[1.0],
            &opts,
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observer_can_abort() {
        let opts = Dopri5Options::with_tol(1e-6);
        let r = integrate(
            |_, _: &[f64], dy: &mut [f64]| dy[0] = 1.0,
            0.0,
            &[0.0],
            1.0,
            &[0.5],
            &[],
            &opts,
            |t, _| Err(Error::TraceDrift { t, drift: 1.0, limit: 0.0 }),
        );
        assert!(matches!(r, Err(Error::TraceDrift { .. })));
    }

    #[test]
    fn rejects_bad_spans() {
        let opts = Dopri5Options::default();
        let f = |_: f64, _: &[f64], dy: &mut [f64]| dy[0] = 0.0;
        assert!(integrate(f, 1.0, &[0.0], 0.0, &[], &[], &opts, |_, _| Ok(())).is_err());
        assert!(integrate(f, 0.0, &[0.0], 1.0, &[2.0], &[], &opts, |_, _| Ok(())).is_err());
    }

    #[test]
    fn blowup_reports_underflow_or_nonfinite() {
        let opts = Dopri5Options::with_tol(1e-8);
        let r = integrate(
            |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0],
            0.0,
            &[1.0],
            2.0,
            &[],
            &[],
            &opts,
            |_, _| Ok(()),
        );
        assert!(r.is_err());
    }
}
