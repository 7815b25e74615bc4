//! Continuous and Trotterized adiabatic evolution from the ground state of
//! `H_0` towards `H_T`.
//!
//! ```text
//! cargo run --example adiabatic_evolution -- [total_time] [steps]
//! ```

use adia::propagation::{default_fine_step, evolve_exact, initial_state, trotter_evolve, NodeRule, TrotterPlan};
use adia::spin::{min_gap, target_ground_energy, Schedule};

fn main() -> adia::Result<()> {
    let mut args = std::env::args().skip(1);
    let total_time: f64 = args.next().map_or(20.0, |s| s.parse().expect("total time in ns"));
    let steps: usize = args.next().map_or(20, |s| s.parse().expect("step count"));

    let sched = Schedule::cosine(total_time)?;
    let (gap, s_at) = min_gap(&sched, 2001)?;
    println!("minimum gap {gap:.4} at s = {s_at:.3}; ground energy of H_T {:.6}", target_ground_energy());

    let exact = evolve_exact(&sched, &initial_state(&sched), default_fine_step(&sched))?;
    let plan = TrotterPlan::new(steps, total_time, NodeRule::Midpoint)?;
    let trotter = trotter_evolve(&sched, &plan, &initial_state(&sched))?;

    println!("{:>10} {:>12} {:>12}", "t (ns)", "fidelity", "energy");
    for k in 0..trotter.len() {
        println!("{:>10.2} {:>12.6} {:>12.6}", trotter.times[k], trotter.fidelities[k], trotter.energies[k]);
    }
    println!("continuous T = {total_time}: fidelity {:.6}, energy {:.6}", exact.final_fidelity(), exact.final_energy());
    println!("trotter n = {steps}: fidelity {:.6}, energy {:.6}", trotter.final_fidelity(), trotter.final_energy());
    Ok(())
}
