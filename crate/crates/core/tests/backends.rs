use std::f64::consts::PI;

use superpulse::cumulant::{integrate_cumulant2, CumulantInitial, SECOND_PAIRS};
use superpulse::lindblad::{evolve, uniform_times, DensityMatrix, EvolveOptions};
use superpulse::meanfield::{closed_form_crossing_time, integrate_meanfield, BlochAngles};
use superpulse::spin::Expectation;
use superpulse::trajectories::{ensemble_average, TrajectoryConfig};
use superpulse::{coherent_state, CollectiveOperators, ModelParams, RampSchedule, C64};

const THETA0: f64 = PI / 10.0;
const PHI0: f64 = PI / 2.0;

/// Mean spin and symmetrized second moments of the master-equation state at
/// each sample.
fn master_moments(p: &ModelParams, drive: &dyn superpulse::Drive, t_end: f64, times: &[f64]) -> Vec<([f64; 3], [f64; 6])> {
    let n = p.n_atoms();
    let ops = CollectiveOperators::new(n).unwrap();
    let psi = coherent_state(n, THETA0, PHI0).unwrap();
    let mut out = Vec::new();
    evolve(
        &DensityMatrix::from_pure(&psi),
        drive,
        (0.0, t_end),
        times,
        &EvolveOptions::with_tol(1e-10),
        |_, rho| {
            let mats = [&ops.j_x, &ops.j_y, &ops.j_z];
            let tr = |m: &nalgebra::DMatrix<C64>| rho.expectation(m).unwrap().re;
            let first = mats.map(|m| tr(m));
            let second = SECOND_PAIRS.map(|(a, b)| 0.5 * tr(&(mats[a] * mats[b] + mats[b] * mats[a])));
            out.push((first, second));
            Ok(())
        },
    )
    .unwrap();
    out
}

#[test]
fn trajectory_ensemble_matches_master_equation() {
    let p = ModelParams::new(6, 1.0, 2.0, 0.7).unwrap();
    let t_end = 2.0 * closed_form_crossing_time(THETA0, &p).unwrap();
    let times = uniform_times(0.0, t_end, 25);
    let exact = master_moments(&p, &p, t_end, &times);
    let mut cfg = TrajectoryConfig::new(1500, 3, times.clone());
    cfg.record_second_moments = true;
    let psi = coherent_state(6, THETA0, PHI0).unwrap();
    let avg = ensemble_average(&psi, &p, (0.0, t_end), &cfg).unwrap();
    for (i, (m1, m2)) in exact.iter().enumerate() {
        for k in 0..3 {
            let dev = (avg.mean_spin[i][k] - m1[k]).abs();
            assert!(dev <= 4.0 * avg.mean_spin_se[i][k] + 1e-9, "t={} k={k}: {dev}", times[i]);
        }
        for k in 0..6 {
            let dev = (avg.second_moments[i][k] - m2[k]).abs();
            assert!(dev <= 4.0 * avg.second_moments_se[i][k] + 1e-9, "t={} k={k}: {dev}", times[i]);
        }
    }
    assert!(avg.total_jumps > 0);
}

#[test]
fn trajectory_ensemble_follows_a_quench() {
    let s = RampSchedule::new(5, 1.0, 3.0, 0.0, 0.6, 0.2, 40.0, 20.0).unwrap();
    let p = ModelParams::new(5, 1.0, 3.0, 0.6).unwrap();
    let times = uniform_times(0.0, 150.0, 16);
    let exact = master_moments(&p, &s, 150.0, &times);
    let cfg = TrajectoryConfig::new(1500, 9, times.clone());
    let psi = coherent_state(5, THETA0, PHI0).unwrap();
    let avg = ensemble_average(&psi, &s, (0.0, 150.0), &cfg).unwrap();
    for (i, (m1, _)) in exact.iter().enumerate() {
        for k in 0..3 {
            let dev = (avg.mean_spin[i][k] - m1[k]).abs();
            assert!(dev <= 4.0 * avg.mean_spin_se[i][k] + 1e-9, "t={} k={k}: {dev}", times[i]);
        }
    }
}

#[test]
fn gaussian_closure_holds_early_and_fails_mid_pulse() {
    let n = 200;
    let p = ModelParams::new(n, 1.0, 5.0, 0.5).unwrap();
    let tc = closed_form_crossing_time(THETA0, &p).unwrap();
    let times = uniform_times(0.0, 1.5 * tc, 31);
    let exact = master_moments(&p, &p, 1.5 * tc, &times);
    let psi = coherent_state(n, THETA0, PHI0).unwrap();
    let cum = integrate_cumulant2(&CumulantInitial::State(psi), &p, (0.0, 1.5 * tc), &times, 1e-10).unwrap();
    let half = n as f64 / 2.0;
    let gap: Vec<f64> = exact
        .iter()
        .zip(&cum.moments)
        .map(|((m1, _), c)| (m1[0] - c.first[0]).abs() / half)
        .collect();
    for (t, g) in times.iter().zip(&gap) {
        if *t <= 0.5 * tc {
            assert!(*g < 0.02, "t={t}: <Jx> gap {g} of N/2");
        }
    }
    let late = times.iter().zip(&gap).filter(|(t, _)| **t >= 0.8 * tc).map(|(_, g)| *g).fold(0.0, f64::max);
    assert!(late > 0.05, "closure never departs: {late}");
}

#[test]
fn meanfield_is_the_large_n_limit_of_the_master_equation() {
    let mut last = f64::INFINITY;
    for n in [20, 80, 320] {
        let p = ModelParams::new(n, 1.0, 0.0, 0.5).unwrap();
        let tc = closed_form_crossing_time(THETA0, &p).unwrap();
        let times = uniform_times(0.0, 2.0 * tc, 21);
        let exact = master_moments(&p, &p, 2.0 * tc, &times);
        let mf = integrate_meanfield(BlochAngles::new(THETA0, PHI0), &p, (0.0, 2.0 * tc), &times, 1e-10).unwrap();
        let j = n as f64 / 2.0;
        let err = mf
            .mean_spin(n)
            .iter()
            .zip(&exact)
            .map(|(a, (b, _))| (a[2] - b[2]).abs() / j)
            .fold(0.0, f64::max);
        assert!(err < last, "N={n}: {err} not below {last}");
        last = err;
    }
    assert!(last < 0.05);
}
