//! Quantum-jump unraveling of the master equation.
//!
//! The jump operator is `sqrt(2 eta lambda^2 / N) J-`, so between jumps the
//! state evolves under `H_eff = H - i (eta lambda^2 / N) J+ J-`. Both terms
//! are diagonal in the Dicke basis and the no-jump propagator is exact:
//!
//! ```text
//! psi_p(t) = psi_p(s) exp(i h_p F(s,t) - (b_p / N) G(s,t))
//! ```
//!
//! with `h_p = (N^2/4 - m^2)/N`, `b_p = (J+ J-)_pp`, `F = integral of
//! xi lambda^2` and `G = integral of eta lambda^2`. A jump fires when the
//! squared norm reaches a uniform threshold; the crossing is bracketed in
//! chunks of `dt_max` and then bisected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::schedule::Drive;
use crate::spin::{mean_spin, symmetric_second_moments, CollectiveOperators, DickeVector, C64};

pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub n_trajectories: usize,
    pub master_seed: u64,
    /// Largest bracket used when searching for a threshold crossing.
    pub dt_max: f64,
    /// Relative accuracy of the squared norm at a located jump.
    pub jump_tolerance: f64,
    pub sample_times: Vec<f64>,
    pub record_second_moments: bool,
    pub record_states: bool,
}

impl TrajectoryConfig {
    pub fn new(n_trajectories: usize, master_seed: u64, sample_times: Vec<f64>) -> Self {
        Self {
            n_trajectories,
            master_seed,
            dt_max: 10.0,
            jump_tolerance: 1e-9,
            sample_times,
            record_second_moments: false,
            record_states: false,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_trajectories == 0 {
            out.push("n_trajectories must be at least 1".to_string());
        }
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            out.push("dt_max must be positive".to_string());
        }
        if !(self.jump_tolerance > 0.0 && self.jump_tolerance < 1.0) {
            out.push("jump_tolerance must lie in (0, 1)".to_string());
        }
        if self.sample_times.iter().any(|t| !t.is_finite())
            || self.sample_times.windows(2).any(|w| w[1] < w[0])
        {
            out.push("sample_times must be finite and non-decreasing".to_string());
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(p.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub times: Vec<f64>,
    /// `<J>` of the normalized state at each sample.
    pub mean_spin: Vec<[f64; 3]>,
    /// Symmetrized second moments, when requested.
    pub second_moments: Vec<[f64; 6]>,
    /// Population of `|J, -J>` at each sample.
    pub south_pole_population: Vec<f64>,
    /// Normalized states, when requested.
    pub states: Vec<DickeVector>,
    pub jump_times: Vec<f64>,
}

/// Per-level constants of the no-jump propagator.
struct Ladder {
    n: f64,
    twist: Vec<f64>,
    decay: Vec<f64>,
}

impl Ladder {
    fn new(ops: &CollectiveOperators) -> Self {
        let n = ops.n_atoms() as f64;
        let d = ops.dim();
        let low = ops.lowering();
        let twist = (0..d)
            .map(|p| {
                let m = ops.m_value(p);
                (n * n / 4.0 - m * m) / n
            })
            .collect();
        let decay = (0..d).map(|p| if p < d - 1 { low[p].powi(2) } else { 0.0 }).collect();
        Self { n, twist, decay }
    }

    fn norm_sqr(&self, psi: &[C64], g: f64) -> f64 {
        psi.iter()
            .zip(&self.decay)
            .map(|(a, b)| a.norm_sqr() * (-2.0 * b * g / self.n).exp())
            .sum()
    }

    fn propagate(&self, psi: &[C64], f: f64, g: f64) -> Vec<C64> {
        psi.iter()
            .enumerate()
            .map(|(p, a)| a * C64::from_polar((-self.decay[p] * g / self.n).exp(), self.twist[p] * f))
            .collect()
    }
}

fn stream(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

fn normalized(psi: &[C64]) -> Vec<C64> {
    let n: f64 = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    psi.iter().map(|a| a / n).collect()
}

/// Runs one trajectory. The random stream depends only on
/// `(config.master_seed, index)`.
pub fn run_trajectory(
    psi0: &DickeVector,
    drive: &dyn Drive,
    t_span: (f64, f64),
    config: &TrajectoryConfig,
    index: usize,
) -> Result<TrajectoryRecord> {
    let ops = CollectiveOperators::new(drive.n_atoms())?;
    run_with_ops(psi0, drive, t_span, config, index, &ops)
}

fn run_with_ops(
    psi0: &DickeVector,
    drive: &dyn Drive,
    t_span: (f64, f64),
    config: &TrajectoryConfig,
    index: usize,
    ops: &CollectiveOperators,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if psi0.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            actual: psi0.dim(),
        });
    }
    if (psi0.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParams(format!(
            "initial state is not normalized (norm^2 = {})",
            psi0.norm_sqr()
        )));
    }
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::InvalidParams(format!("bad time span ({t0}, {t1})")));
    }
    let ladder = Ladder::new(ops);
    let mut rng = stream(config.master_seed, index);
    let mut record = TrajectoryRecord {
        index,
        ..Default::default()
    };

    // state at the last jump (normalized) and its time
    let mut anchor: Vec<C64> = psi0.amplitudes.iter().copied().collect();
    let mut t_anchor = t0;
    let mut threshold: f64 = 1.0 - rng.random::<f64>();

    let samples: Vec<f64> = config
        .sample_times
        .iter()
        .copied()
        .filter(|&t| t >= t0 && t <= t1)
        .collect();
    let mut next_sample = 0;
    let mut t = t0;

    loop {
        // samples at or before t are emitted from the current anchor
        let horizon = samples.get(next_sample).copied().unwrap_or(t1).min(t1);
        let chunk_end = (t + config.dt_max).min(horizon);
        let (_, g_end) = drive.integrated_couplings(t_anchor, chunk_end);
        let norm_end = ladder.norm_sqr(&anchor, g_end);
        if norm_end > threshold {
            t = chunk_end;
            if next_sample < samples.len() && t >= samples[next_sample] {
                let ts = samples[next_sample];
                let (f, g) = drive.integrated_couplings(t_anchor, ts);
                let psi = normalized(&ladder.propagate(&anchor, f, g));
                emit(&mut record, ops, ts, psi, config);
                next_sample += 1;
                continue;
            }
            if t >= t1 {
                break;
            }
            continue;
        }
        if norm_end < NORM_FLOOR && threshold < NORM_FLOOR {
            return Err(Error::NormFloor { t: chunk_end, norm_sq: norm_end });
        }
        // crossing inside (t, chunk_end]: bisect on the squared norm
        let (mut lo, mut hi) = (t, chunk_end);
        let mut iterations = 0;
        loop {
            let mid = 0.5 * (lo + hi);
            let (_, g) = drive.integrated_couplings(t_anchor, mid);
            let nm = ladder.norm_sqr(&anchor, g);
            if (nm - threshold).abs() <= config.jump_tolerance * threshold || hi - lo <= 1e-15 * hi.abs().max(1.0) {
                lo = mid;
                break;
            }
            if nm > threshold {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
            if iterations > 200 {
                return Err(Error::JumpLocation { t_lo: lo, t_hi: hi });
            }
        }
        let t_jump = lo;
        let (f, g) = drive.integrated_couplings(t_anchor, t_jump);
        let before = ladder.propagate(&anchor, f, g);
        let after = ops.lower_state(&before);
        let norm: f64 = after.iter().map(|a| a.norm_sqr()).sum();
        if norm < NORM_FLOOR {
            return Err(Error::NormFloor { t: t_jump, norm_sq: norm });
        }
        anchor = normalized(&after);
        t_anchor = t_jump;
        t = t_jump;
        record.jump_times.push(t_jump);
        threshold = 1.0 - rng.random::<f64>();
    }
    // samples beyond the last bracket (only possible when t1 equals a sample)
    while next_sample < samples.len() {
        let ts = samples[next_sample];
        let (f, g) = drive.integrated_couplings(t_anchor, ts);
        let psi = normalized(&ladder.propagate(&anchor, f, g));
        emit(&mut record, ops, ts, psi, config);
        next_sample += 1;
    }
    Ok(record)
}

fn emit(record: &mut TrajectoryRecord, ops: &CollectiveOperators, t: f64, psi: Vec<C64>, config: &TrajectoryConfig) {
    record.times.push(t);
    record.mean_spin.push(mean_spin(ops, &psi));
    record.south_pole_population.push(psi.last().map_or(0.0, |a| a.norm_sqr()));
    if config.record_second_moments {
        record.second_moments.push(symmetric_second_moments(ops, &psi));
    }
    if config.record_states {
        record.states.push(DickeVector {
            amplitudes: nalgebra::DVector::from_vec(psi),
        });
    }
}

/// Sample means and standard errors of trajectory observables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnsembleAverage {
    pub times: Vec<f64>,
    pub n_trajectories: usize,
    pub mean_spin: Vec<[f64; 3]>,
    pub mean_spin_se: Vec<[f64; 3]>,
    pub second_moments: Vec<[f64; 6]>,
    pub second_moments_se: Vec<[f64; 6]>,
    pub south_pole_population: Vec<f64>,
    pub total_jumps: usize,
}

fn mean_and_se<const K: usize>(rows: &[&[[f64; K]]], i: usize) -> ([f64; K], [f64; K]) {
    let m = rows.len() as f64;
    let mut mean = [0.0; K];
    for r in rows {
        for k in 0..K {
            mean[k] += r[i][k];
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    let mut se = [0.0; K];
    if rows.len() > 1 {
        for r in rows {
            for k in 0..K {
                se[k] += (r[i][k] - mean[k]).powi(2);
            }
        }
        for v in se.iter_mut() {
            *v = (*v / (m - 1.0) / m).sqrt();
        }
    }
    (mean, se)
}

/// Runs `config.n_trajectories` trajectories in parallel on the current
/// rayon pool and averages them. The result does not depend on the number
/// of workers.
pub fn ensemble_average(
    psi0: &DickeVector,
    drive: &dyn Drive,
    t_span: (f64, f64),
    config: &TrajectoryConfig,
) -> Result<EnsembleAverage> {
    config.validate()?;
    let ops = CollectiveOperators::new(drive.n_atoms())?;
    let records: Vec<TrajectoryRecord> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|i| {
            run_with_ops(psi0, drive, t_span, config, i, &ops).map_err(|e| Error::Trajectory {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_records(&records))
}

/// Deterministic reduction of trajectory records sampled at common times.
pub fn average_records(records: &[TrajectoryRecord]) -> EnsembleAverage {
    let mut out = EnsembleAverage {
        n_trajectories: records.len(),
        ..Default::default()
    };
    let Some(first) = records.first() else {
        return out;
    };
    out.times = first.times.clone();
    out.total_jumps = records.iter().map(|r| r.jump_times.len()).sum();
    let spins: Vec<&[[f64; 3]]> = records.iter().map(|r| r.mean_spin.as_slice()).collect();
    let seconds: Vec<&[[f64; 6]]> = records.iter().map(|r| r.second_moments.as_slice()).collect();
    let have_second = !first.second_moments.is_empty();
    for i in 0..out.times.len() {
        let (m, s) = mean_and_se(&spins, i);
        out.mean_spin.push(m);
        out.mean_spin_se.push(s);
        let pop: f64 = records.iter().map(|r| r.south_pole_population[i]).sum();
        out.south_pole_population.push(pop / records.len() as f64);
        if have_second {
            let (m, s) = mean_and_se(&seconds, i);
            out.second_moments.push(m);
            out.second_moments_se.push(s);
        }
    }
    out
}
