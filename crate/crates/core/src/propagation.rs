//! Closed-system evolution of the two-spin state: a fixed-step RK4
//! integration of the time-dependent Schrödinger equation and the
//! Trotterized product of short-time propagators.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm_hermitian4, real, Mat4, Vec4, I};
use crate::spin::{build_ht, hamiltonian_at, spectrum_at, PauliSum, Schedule};

/// Normalized two-qubit state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(Vec4);

impl StateVector {
    pub const NORM_TOLERANCE: f64 = 1e-10;

    pub fn new(amplitudes: Vec4) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("state norm {norm} is not 1")));
        }
        Ok(Self(amplitudes))
    }

    /// Rescales a nonzero vector to unit norm.
    pub fn normalized(amplitudes: Vec4) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(Self(amplitudes / real(norm)))
    }

    /// Computational basis state `|k⟩`, `k = 2·q₀ + q₁`.
    pub fn basis(k: usize) -> Self {
        let mut v = Vec4::zeros();
        v[k] = real(1.0);
        Self(v)
    }

    pub fn amplitudes(&self) -> &Vec4 {
        &self.0
    }

    pub fn into_inner(self) -> Vec4 {
        self.0
    }

    pub fn evolve(&self, u: &Mat4) -> Self {
        Self(u * self.0)
    }

    /// Computational-basis probabilities.
    pub fn probabilities(&self) -> [f64; 4] {
        std::array::from_fn(|k| self.0[k].norm_sqr())
    }
}

/// Instantaneous fidelity and target energy recorded along an evolution.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub fidelities: Vec<f64>,
    pub energies: Vec<f64>,
}

impl Trajectory {
    fn push(&mut self, sched: &Schedule, t: f64, psi: StateVector, target: &PauliSum) -> Result<()> {
        let ground = StateVector::normalized(spectrum_at(sched, t)?.ground_state())?;
        self.times.push(t);
        self.fidelities.push(fidelity_pure(&psi, &ground));
        self.energies.push(expectation(&psi, target));
        self.states.push(psi);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least the initial point")
    }

    pub fn final_fidelity(&self) -> f64 {
        *self.fidelities.last().expect("nonempty trajectory")
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("nonempty trajectory")
    }

    /// CSV with columns `t_ns,fidelity,energy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ns,fidelity,energy\n");
        for k in 0..self.len() {
            out.push_str(&format!("{:.6},{:.12},{:.12}\n", self.times[k], self.fidelities[k], self.energies[k]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Where inside each Trotter interval the Hamiltonian is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRule {
    Left,
    #[default]
    Midpoint,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrotterPlan {
    steps: usize,
    total_time: f64,
    node_rule: NodeRule,
}

impl TrotterPlan {
    pub fn new(steps: usize, total_time: f64, node_rule: NodeRule) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("a Trotter plan needs at least one step".into()));
        }
        if !(total_time > 0.0) {
            return Err(Error::InvalidArgument("total time must be positive".into()));
        }
        Ok(Self { steps, total_time, node_rule })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn node_rule(&self) -> NodeRule {
        self.node_rule
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.steps as f64
    }

    /// Sampling time of step `k` (1-based).
    pub fn node_time(&self, k: usize) -> f64 {
        let dt = self.dt();
        match self.node_rule {
            NodeRule::Left => (k as f64 - 1.0) * dt,
            NodeRule::Midpoint => (k as f64 - 0.5) * dt,
            NodeRule::Right => k as f64 * dt,
        }
    }

    /// End time of step `k`.
    pub fn step_end(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
}

/// Ground state of `H₀`, the initial state of the adiabatic evolution.
pub fn initial_state(sched: &Schedule) -> StateVector {
    let ground = spectrum_at(sched, 0.0).expect("t = 0 is in the domain").ground_state();
    StateVector::normalized(ground).expect("eigenvectors are nonzero")
}

/// Fourth-order fixed-step integration of `i dψ/dt = H(t)ψ`, recording the
/// instantaneous fidelity and `⟨H_T⟩` after every step.
pub fn evolve_exact(sched: &Schedule, psi0: &StateVector, dt_fine: f64) -> Result<Trajectory> {
    let total = sched.total_time();
    if !(dt_fine > 0.0) || dt_fine > total / 100.0 * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("integration step {dt_fine} ns must be in (0, T/100]")));
    }
    let steps = (total / dt_fine).ceil() as usize;
    let dt = total / steps as f64;
    let target = build_ht();
    let rhs = |t: f64, psi: &Vec4| -> Result<Vec4> {
        let t = t.min(total);
        Ok(hamiltonian_at(sched, t)? * psi * (-I))
    };

    let mut traj = Trajectory::default();
    traj.push(sched, 0.0, *psi0, &target)?;
    let mut psi = *psi0.amplitudes();
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = rhs(t, &psi)?;
        let k2 = rhs(t + dt / 2.0, &(psi + k1 * real(dt / 2.0)))?;
        let k3 = rhs(t + dt / 2.0, &(psi + k2 * real(dt / 2.0)))?;
        let k4 = rhs(t + dt, &(psi + k3 * real(dt)))?;
        psi += (k1 + k2 * real(2.0) + k3 * real(2.0) + k4) * real(dt / 6.0);
        let drift = (psi.norm() - 1.0).abs();
        if drift > 1e-6 {
            return Err(Error::Integration(format!("norm drifted by {drift:.3e} at t = {:.4} ns", t + dt)));
        }
        let t_next = if k + 1 == steps { total } else { t + dt };
        traj.push(sched, t_next, StateVector(psi), &target)?;
    }
    Ok(traj)
}

/// Default integration step, `T/2000`.
pub fn default_fine_step(sched: &Schedule) -> f64 {
    sched.total_time() / 2000.0
}

/// `exp(-i H(t_k) Δt)` for step `k` of the plan (1-based).
pub fn short_time_propagator(sched: &Schedule, plan: &TrotterPlan, k: usize) -> Result<Mat4> {
    if k == 0 || k > plan.steps() {
        return Err(Error::InvalidArgument(format!("step index {k} outside 1..={}", plan.steps())));
    }
    let h = hamiltonian_at(sched, plan.node_time(k))?;
    Ok(expm_hermitian4(&h, plan.dt()))
}

/// All `n` short-time propagators in application order.
pub fn propagators(sched: &Schedule, plan: &TrotterPlan) -> Result<Vec<Mat4>> {
    (1..=plan.steps()).map(|k| short_time_propagator(sched, plan, k)).collect()
}

/// Applies the short-time propagators in sequence.
pub fn trotter_evolve(sched: &Schedule, plan: &TrotterPlan, psi0: &StateVector) -> Result<Trajectory> {
    let target = build_ht();
    let mut traj = Trajectory::default();
    traj.push(sched, 0.0, *psi0, &target)?;
    let mut psi = *psi0;
    for k in 1..=plan.steps() {
        psi = psi.evolve(&short_time_propagator(sched, plan, k)?);
        let t = plan.step_end(k).min(sched.total_time());
        traj.push(sched, t, psi, &target)?;
    }
    Ok(traj)
}

/// `|⟨φ|ψ⟩|`.
pub fn fidelity_pure(psi: &StateVector, phi: &StateVector) -> f64 {
    phi.amplitudes().dotc(psi.amplitudes()).norm().min(1.0)
}

/// `⟨ψ|H|ψ⟩`.
pub fn expectation(psi: &StateVector, h: &PauliSum) -> f64 {
    let v = psi.amplitudes();
    v.dotc(&(h.matrix() * v)).re
}

/// Operator norm of `|ψ⟩⟨ψ| - |φ⟩⟨φ|`, equal to `√(1 - |⟨φ|ψ⟩|²)`.
pub fn projector_distance(psi: &StateVector, phi: &StateVector) -> f64 {
    let f = fidelity_pure(psi, phi);
    (1.0 - f * f).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unitarity_error4;

    fn setup() -> (Schedule, StateVector) {
        let s = Schedule::cosine(20.0).unwrap();
        let psi0 = initial_state(&s);
        (s, psi0)
    }

    #[test]
    fn state_vector_rejects_unnormalized_input() {
        assert!(StateVector::new(Vec4::repeat(real(1.0))).is_err());
        assert!(StateVector::normalized(Vec4::zeros()).is_err());
    }

    #[test]
    fn frozen_hamiltonian_keeps_ground_state_stationary() {
        let s = Schedule::new(1.0, crate::spin::Interpolation::Frozen).unwrap();
        let psi0 = initial_state(&s);
        let traj = evolve_exact(&s, &psi0, 0.01).unwrap();
        assert!(traj.fidelities.iter().all(|&f| (f - 1.0).abs() < 1e-10));
    }

    #[test]
    fn evolve_exact_rejects_coarse_step() {
        let (s, psi0) = setup();
        assert!(evolve_exact(&s, &psi0, 1.0).is_err());
    }

    #[test]
    fn propagators_are_unitary() {
        let (s, _) = setup();
        let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint).unwrap();
        for u in propagators(&s, &plan).unwrap() {
            assert!(unitarity_error4(&u) < 1e-12);
        }
        assert!(short_time_propagator(&s, &plan, 0).is_err());
        assert!(short_time_propagator(&s, &plan, 21).is_err());
    }

    #[test]
    fn node_rules_place_samples() {
        let mid = TrotterPlan::new(4, 8.0, NodeRule::Midpoint).unwrap();
        let left = TrotterPlan::new(4, 8.0, NodeRule::Left).unwrap();
        let right = TrotterPlan::new(4, 8.0, NodeRule::Right).unwrap();
        assert_eq!(mid.node_time(1), 1.0);
        assert_eq!(left.node_time(1), 0.0);
        assert_eq!(right.node_time(4), 8.0);
        assert!(TrotterPlan::new(0, 8.0, NodeRule::Midpoint).is_err());
    }

    #[test]
    fn single_step_is_worse_than_twenty() {
        let (s, psi0) = setup();
        let one = trotter_evolve(&s, &TrotterPlan::new(1, 20.0, NodeRule::Midpoint).unwrap(), &psi0).unwrap();
        let twenty = trotter_evolve(&s, &TrotterPlan::new(20, 20.0, NodeRule::Midpoint).unwrap(), &psi0).unwrap();
        assert!(one.final_fidelity() < twenty.final_fidelity());
    }

    #[test]
    fn fidelity_identities() {
        let a = StateVector::basis(0);
        let b = StateVector::basis(3);
        assert!((fidelity_pure(&a, &a) - 1.0).abs() < 1e-15);
        assert_eq!(fidelity_pure(&a, &b), 0.0);
        assert_eq!(projector_distance(&a, &a), 0.0);
        assert_eq!(projector_distance(&a, &b), 1.0);
    }

    #[test]
    fn expectation_on_basis_state_is_diagonal_entry() {
        let ht = build_ht();
        let m = ht.matrix();
        for k in 0..4 {
            let e = expectation(&StateVector::basis(k), &ht);
            assert!((e - m[(k, k)].re).abs() < 1e-15);
        }
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let (s, psi0) = setup();
        let plan = TrotterPlan::new(5, 20.0, NodeRule::Midpoint).unwrap();
        let csv = trotter_evolve(&s, &plan, &psi0).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "t_ns,fidelity,energy");
        assert_eq!(lines.len(), 7);
    }
}
