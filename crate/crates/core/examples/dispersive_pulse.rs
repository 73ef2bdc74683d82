//! Prints inversion, squeezing parameter and third-order correlations across
//! a dispersive superradiant pulse.
//!
//! `cargo run --release --example dispersive_pulse -- [N]`

use std::f64::consts::PI;

use superpulse::lindblad::{evolve, uniform_times, DensityMatrix, EvolveOptions};
use superpulse::meanfield::closed_form_crossing_time;
use superpulse::observables::{c_total, chi_squared, MomentTable};
use superpulse::{coherent_state, CollectiveOperators, ModelParams};

fn main() -> superpulse::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let (theta0, phi0) = (PI / 10.0, PI / 2.0);
    let p = ModelParams::new(n, 1.0, 5.0, 0.5)?;
    let t_end = 3.0 * closed_form_crossing_time(theta0, &p).expect("starts above the equator");
    let ops = CollectiveOperators::new(n)?;
    let rho0 = DensityMatrix::from_pure(&coherent_state(n, theta0, phi0)?);
    let times = uniform_times(0.0, t_end, 31);

    println!("{:>9} {:>9} {:>9} {:>10}", "t", "jz/J", "chi2", "C3/N^3");
    let mut fidelity = 0.0;
    let report = evolve(&rho0, &p, (0.0, t_end), &times, &EvolveOptions::default(), |t, rho| {
        fidelity = rho.south_pole_fidelity();
        let table = MomentTable::from_density(rho, &ops, 3)?;
        let chi2 = chi_squared(&table, n).map(|c| c.chi2).unwrap_or(f64::NAN);
        println!(
            "{t:9.2} {:9.4} {chi2:9.4} {:10.3e}",
            table.mean_spin()[2] / (n as f64 / 2.0),
            c_total(&table, 3)? / (n as f64).powi(3)
        );
        Ok(())
    })?;
    println!(
        "{} steps, max trace drift {:.1e}, final south-pole population {fidelity:.6}",
        report.stats.accepted, report.max_trace_drift
    );
    Ok(())
}
