//! Cartan decomposition of the short-time propagators into three CNOTs
//! and local gates, and the text form of the resulting circuits.

use adia::circuits::{
    circuit_unitary, decompose_two_qubit, merge_u3_pairs, parse_circuit, step_circuits, CanonicalDecomposition,
    StepForm,
};
use adia::linalg::phase_distance4;
use adia::propagation::{short_time_propagator, NodeRule, TrotterPlan};
use adia::spin::Schedule;

fn main() -> adia::Result<()> {
    let sched = Schedule::cosine(20.0)?;
    let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint)?;

    let u = short_time_propagator(&sched, &plan, 10)?;
    let kak = CanonicalDecomposition::compute(&u)?;
    let (a, b, c) = kak.coefficients;
    println!("step 10 interaction coefficients: a = {a:.6}, b = {b:.6}, c = {c:.6}");

    let circuit = merge_u3_pairs(&decompose_two_qubit(&u)?)?;
    println!(
        "{} gates, {} CNOTs, distance to target {:.2e}",
        circuit.len(),
        circuit.cnot_count(),
        phase_distance4(&circuit_unitary(&circuit), &u)
    );
    let text = circuit.to_text();
    print!("{text}");
    let parsed = parse_circuit(&text)?;
    println!("text round trip distance {:.2e}", phase_distance4(&circuit_unitary(&parsed), &u));

    let merged = step_circuits(&sched, &plan, StepForm::Merged)?;
    let cnots: usize = merged.iter().map(|c| c.cnot_count()).sum();
    println!("full schedule: {} steps, {cnots} CNOTs", merged.len());
    Ok(())
}
