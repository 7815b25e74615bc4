//! Mean absolute deviation of sampled outcome frequencies from the exact
//! distribution as the number of shots grows.
//!
//! Without readout errors the deviation falls like `1/√N`; an asymmetric
//! readout model leaves a finite plateau.

use adia::measurement::{error_vs_shots, log_shot_grid, seed_stream, uniform_state, ReadoutModel};

fn main() -> adia::Result<()> {
    let grid = log_shot_grid(0, 6, 2);
    let seeds = seed_stream(11, 20);
    let state = uniform_state();
    for (name, model) in [("ideal", ReadoutModel::ideal()), ("noisy", ReadoutModel::symmetric_qubits(0.06, 0.009)?)] {
        let table = error_vs_shots(&state, &model, &grid, &seeds)?;
        println!("{name} readout");
        for row in &table.rows {
            println!("{:>9} {:.5} ± {:.5}", row.shots, row.mean_abs_deviation, row.std_error);
        }
        println!("plateau estimate {:.5}", table.plateau());
    }
    Ok(())
}
