//! Pulse-level run of the whole schedule on a noisy device preset.
//!
//! Synthesizes one pulse per propagator and integrates the master equation
//! through them, printing fidelity, energy and leakage after each step.
//!
//! ```text
//! cargo run --release --example device_run -- [preset] [tau_ns]
//! ```

use adia::cli::{mode_pulses, simulate_device, DeviceMode, ExperimentConfig};
use adia::pulse::PulseCache;

fn main() -> adia::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "belem".into());
    let mode: DeviceMode = args.next().unwrap_or_else(|| "120".into()).parse()?;

    let cfg = ExperimentConfig::default();
    let cal = cfg.device.calibration(&preset)?;
    println!("{preset}: T1 = {:?} us, T2 = {:?} us", cal.t1_us, cal.t2_us);
    let (pulses, worst) = mode_pulses(&cfg, &cal, mode, &mut PulseCache::new())?;
    println!("synthesized {} steps, worst gate infidelity {worst:.2e}", pulses.len());

    let traj = simulate_device(&cfg, &preset, &pulses)?;
    println!("{:>10} {:>10} {:>10} {:>10}", "t (ns)", "fidelity", "energy", "leakage");
    for k in 0..traj.len() {
        println!(
            "{:>10.1} {:>10.5} {:>10.5} {:>10.2e}",
            traj.device_times[k], traj.fidelities[k], traj.energies[k], traj.leakage[k]
        );
    }
    let last = traj.len() - 1;
    println!(
        "dominant eigenvector: weight {:.4}, energy {:.5}",
        traj.dominant_weights[last], traj.dominant_energies[last]
    );
    Ok(())
}
