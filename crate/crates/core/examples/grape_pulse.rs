//! GRAPE synthesis of one short-time propagator on the two-transmon
//! device, written as a pulse CSV.
//!
//! ```text
//! cargo run --release --example grape_pulse -- [tau_ns] [step] [out.csv]
//! ```

use std::path::PathBuf;

use adia::propagation::{short_time_propagator, NodeRule, TrotterPlan};
use adia::pulse::{optimize, propagate_pulse, GrapeConfig};
use adia::spin::Schedule;
use adia::transmon::{embed_target, DeviceParams};

fn main() -> adia::Result<()> {
    let mut args = std::env::args().skip(1);
    let tau: f64 = args.next().map_or(120.0, |s| s.parse().expect("duration in ns"));
    let step: usize = args.next().map_or(1, |s| s.parse().expect("step index"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "grape_pulse.csv".into()));

    let sched = Schedule::cosine(20.0)?;
    let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint)?;
    let p = DeviceParams::default();
    let target = embed_target(&short_time_propagator(&sched, &plan, step)?, &p)?;

    let (pulse, report) = optimize(&target, tau, &p, &GrapeConfig::default())?;
    println!(
        "{} samples, {} iterations, gate infidelity {:.2e}, rms {:.3} MHz, max {:.3} MHz, converged {}",
        pulse.len(),
        report.iterations,
        report.final_gate_infidelity,
        report.rms_amplitude_mhz,
        report.max_amplitude_mhz,
        report.converged
    );
    if report.exceeds_alpha_over_20 {
        println!("warning: amplitude above α/20");
    }
    let u = propagate_pulse(&pulse, &p)?;
    let idx = target.computational_indices;
    let kept: f64 = idx.iter().flat_map(|&j| idx.iter().map(move |&i| (i, j))).map(|(i, j)| u[(i, j)].norm_sqr()).sum();
    let leak = 1.0 - kept / 4.0;
    println!("mean leakage out of the computational block {leak:.2e}");
    pulse.write_csv(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
