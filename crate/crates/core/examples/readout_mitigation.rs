//! Sampled tomography of the ideal Trotter trajectory under readout
//! errors, with and without confusion-matrix mitigation.

use adia::circuits::probe_unitary;
use adia::measurement::{seed_stream, tomography_step, ReadoutModel, DEFAULT_SHOTS};
use adia::propagation::{initial_state, trotter_evolve, NodeRule, TrotterPlan};
use adia::spin::Schedule;

fn main() -> adia::Result<()> {
    let sched = Schedule::cosine(20.0)?;
    let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint)?;
    let traj = trotter_evolve(&sched, &plan, &initial_state(&sched))?;
    let model = ReadoutModel::symmetric_qubits(0.06, 0.009)?;
    println!("confusion matrix condition number {:.3}", model.confusion().condition_number());

    let seeds = seed_stream(7, traj.len());
    println!("{:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "k", "F", "F_raw", "F_mit", "E", "E_raw", "E_mit");
    for (k, &seed) in seeds.iter().enumerate() {
        let est = tomography_step(&traj.states[k], &probe_unitary(&sched, &plan, k)?, DEFAULT_SHOTS, &model, seed)?;
        println!(
            "{k:>4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            traj.fidelities[k],
            est.fidelity_raw,
            est.fidelity_mitigated,
            traj.energies[k],
            est.energy_raw,
            est.energy_mitigated
        );
    }
    Ok(())
}
