//! Two-qubit gate algebra and the circuits used to run the adiabatic
//! evolution on a gate-based processor.
//!
//! Qubit 0 is the most significant bit of the basis index; gates are listed
//! in application order (the first gate acts first on the state).

mod kak;
mod text;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{c, kron2, real, unitarity_error4, Mat2, Mat4, C64, ONE};
use crate::propagation::{short_time_propagator, TrotterPlan};
use crate::spin::{Pauli, Schedule};

pub use kak::{decompose_two_qubit, kron_factor, u3_angles, CanonicalDecomposition};
pub use text::{format_angle, parse_circuit};

fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// `U3(θ, φ, λ) = Rz(φ) Rx(-π/2) Rz(θ) Rx(π/2) Rz(λ)` up to global phase.
pub fn u3_matrix(theta: f64, phi: f64, lambda: f64) -> Mat2 {
    let (s, co) = (theta / 2.0).sin_cos();
    Mat2::new(real(co), -C64::from_polar(s, lambda), C64::from_polar(s, phi), C64::from_polar(co, phi + lambda))
}

/// One-qubit `U3` gate applied to `qubit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct U3Gate {
    pub theta: f64,
    pub phi: f64,
    pub lambda: f64,
    pub qubit: usize,
}

impl U3Gate {
    /// `φ` and `λ` are wrapped into `(-π, π]`; the matrix is unchanged.
    pub fn new(theta: f64, phi: f64, lambda: f64, qubit: usize) -> Self {
        Self { theta, phi: wrap_angle(phi), lambda: wrap_angle(lambda), qubit }
    }

    pub fn identity(qubit: usize) -> Self {
        Self::new(0.0, 0.0, 0.0, qubit)
    }

    pub fn from_matrix(u: &Mat2, qubit: usize) -> Self {
        let (theta, phi, lambda) = u3_angles(u);
        Self::new(theta, phi, lambda, qubit)
    }

    pub fn matrix(&self) -> Mat2 {
        u3_matrix(self.theta, self.phi, self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    U3(U3Gate),
    Cnot {
        control: usize,
        target: usize,
    },
    /// `exp(-iθ σˣσˣ/2)`.
    Rxx(f64),
    /// Arbitrary two-qubit unitary, e.g. a merged pair of simultaneous U3s.
    Opaque(Box<Mat4>),
}

impl Gate {
    pub fn u3(theta: f64, phi: f64, lambda: f64, qubit: usize) -> Self {
        Gate::U3(U3Gate::new(theta, phi, lambda, qubit))
    }

    pub fn cnot() -> Self {
        Gate::Cnot { control: 0, target: 1 }
    }

    pub fn opaque(u: Mat4) -> Result<Self> {
        let err = unitarity_error4(&u);
        if err > 1e-10 {
            return Err(Error::NotUnitary(err));
        }
        Ok(Gate::Opaque(Box::new(u)))
    }

    fn max_qubit(&self) -> usize {
        match self {
            Gate::U3(g) => g.qubit,
            Gate::Cnot { control, target } => *control.max(target),
            Gate::Rxx(_) | Gate::Opaque(_) => 1,
        }
    }

    pub fn is_cnot(&self) -> bool {
        matches!(self, Gate::Cnot { .. })
    }

    pub fn is_u3(&self) -> bool {
        matches!(self, Gate::U3(_))
    }
}

/// Embeds a one-qubit operator on `qubit` of the two-qubit register.
pub fn on_qubit(u: &Mat2, qubit: usize) -> Mat4 {
    match qubit {
        0 => kron2(u, &Mat2::identity()),
        _ => kron2(&Mat2::identity(), u),
    }
}

pub fn cnot_matrix(control: usize, target: usize) -> Mat4 {
    let mut m = Mat4::zeros();
    for k in 0..4 {
        let bits = [(k >> 1) & 1, k & 1];
        let mut out = bits;
        if bits[control] == 1 {
            out[target] ^= 1;
        }
        m[(out[0] * 2 + out[1], k)] = ONE;
    }
    m
}

pub fn rxx_matrix(theta: f64) -> Mat4 {
    let xx = kron2(&Pauli::X.matrix(), &Pauli::X.matrix());
    let (s, co) = (theta / 2.0).sin_cos();
    Mat4::identity() * real(co) - xx * c(0.0, s)
}

/// Two-qubit matrix of a gate.
pub fn gate_matrix(g: &Gate) -> Mat4 {
    match g {
        Gate::U3(u) => on_qubit(&u.matrix(), u.qubit),
        Gate::Cnot { control, target } => cnot_matrix(*control, *target),
        Gate::Rxx(theta) => rxx_matrix(*theta),
        Gate::Opaque(u) => **u,
    }
}

/// Ordered list of gates on a two-qubit register.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Circuit {
    gates: Vec<Gate>,
}

impl Circuit {
    pub const QUBITS: usize = 2;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gates(gates: Vec<Gate>) -> Result<Self> {
        let mut circuit = Self::new();
        for g in gates {
            circuit.push(g)?;
        }
        Ok(circuit)
    }

    pub fn push(&mut self, g: Gate) -> Result<()> {
        if g.max_qubit() >= Self::QUBITS {
            return Err(Error::InvalidArgument(format!("{g:?} addresses a qubit >= 2")));
        }
        if let Gate::Cnot { control, target } = g {
            if control == target {
                return Err(Error::InvalidArgument("CNOT control equals target".into()));
            }
        }
        self.gates.push(g);
        Ok(())
    }

    pub fn extend(&mut self, other: Circuit) {
        self.gates.extend(other.gates);
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.iter().filter(|g| g.is_cnot()).count()
    }

    pub fn u3_count(&self) -> usize {
        self.gates.iter().filter(|g| g.is_u3()).count()
    }

    pub fn to_text(&self) -> String {
        text::to_text(self)
    }
}

/// Product of the gate matrices, first gate rightmost.
pub fn circuit_unitary(circuit: &Circuit) -> Mat4 {
    circuit.gates().iter().fold(Mat4::identity(), |acc, g| gate_matrix(g) * acc)
}

/// `X⊗X` followed by `H⊗H`, mapping `|00⟩` to the ground state of `H₀`.
pub fn state_prep_prefix() -> Circuit {
    let gates = vec![
        Gate::u3(PI, 0.0, PI, 0),
        Gate::u3(PI, 0.0, PI, 1),
        Gate::u3(PI / 2.0, 0.0, PI, 0),
        Gate::u3(PI / 2.0, 0.0, PI, 1),
    ];
    Circuit::from_gates(gates).expect("valid prefix")
}

/// Prefix followed by the first `steps` decomposed short-time propagators.
pub fn evolution_circuit(sched: &Schedule, plan: &TrotterPlan, steps: usize) -> Result<Circuit> {
    if steps > plan.steps() {
        return Err(Error::InvalidArgument(format!("requested {steps} steps from a {}-step plan", plan.steps())));
    }
    let mut circuit = state_prep_prefix();
    for k in 1..=steps {
        circuit.extend(decompose_two_qubit(&short_time_propagator(sched, plan, k)?)?);
    }
    Ok(circuit)
}

/// Full adiabatic circuit: state preparation and all `n` propagators.
pub fn build_adiabatic_circuit(sched: &Schedule, plan: &TrotterPlan) -> Result<Circuit> {
    evolution_circuit(sched, plan, plan.steps())
}

/// Gate-level form of each short-time propagator on the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepForm {
    /// One opaque gate per propagator, realized by a single pulse.
    Propagator,
    /// The 3-CNOT decomposition with each simultaneous U3 pair merged
    /// into one opaque local gate.
    Merged,
}

/// One circuit per propagator `U(t_1) … U(t_n)`, state preparation
/// excluded.
pub fn step_circuits(sched: &Schedule, plan: &TrotterPlan, form: StepForm) -> Result<Vec<Circuit>> {
    (1..=plan.steps())
        .map(|k| {
            let u = short_time_propagator(sched, plan, k)?;
            match form {
                StepForm::Propagator => Circuit::from_gates(vec![Gate::opaque(u)?]),
                StepForm::Merged => merge_u3_pairs(&decompose_two_qubit(&u)?),
            }
        })
        .collect()
}

/// Unitary that maps the ideal `k`-step state back to `|00⟩`:
/// `Ũ = (X⊗X)(H⊗H) U†(t₁) ⋯ U†(t_k)`.
pub fn probe_unitary(sched: &Schedule, plan: &TrotterPlan, k: usize) -> Result<Mat4> {
    if k > plan.steps() {
        return Err(Error::InvalidArgument(format!("probe step {k} beyond plan")));
    }
    let mut evolution = Mat4::identity();
    for step in 1..=k {
        evolution = short_time_propagator(sched, plan, step)? * evolution;
    }
    let prefix = circuit_unitary(&state_prep_prefix());
    Ok(prefix.adjoint() * evolution.adjoint())
}

/// Fidelity-probe circuit for step `k` as one decomposed two-qubit block.
/// `k = 0` gives the inverse of the state-preparation prefix.
pub fn build_fidelity_probe(sched: &Schedule, plan: &TrotterPlan, k: usize) -> Result<Circuit> {
    decompose_two_qubit(&probe_unitary(sched, plan, k)?)
}

/// Replaces every pair of simultaneous U3 gates by a single two-qubit
/// opaque gate `U3 ⊗ U3`. CNOTs pass through unchanged.
pub fn merge_u3_pairs(circuit: &Circuit) -> Result<Circuit> {
    let gates = circuit.gates();
    let mut merged = Circuit::new();
    let mut k = 0;
    while k < gates.len() {
        match &gates[k] {
            Gate::Cnot { .. } => {
                merged.push(gates[k].clone())?;
                k += 1;
            }
            Gate::U3(first) => {
                let second = match gates.get(k + 1) {
                    Some(Gate::U3(second)) if second.qubit != first.qubit => second,
                    _ => return Err(Error::Structure(format!("U3 at position {k} has no simultaneous partner"))),
                };
                let (q0, q1) = if first.qubit == 0 { (first, second) } else { (second, first) };
                merged.push(Gate::Opaque(Box::new(kron2(&q0.matrix(), &q1.matrix()))))?;
                k += 2;
            }
            other => return Err(Error::Structure(format!("unexpected gate {other:?} at position {k}"))),
        }
    }
    Ok(merged)
}

/// Measurement basis for a two-qubit Pauli product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum BasisAxis {
    X,
    Y,
    Z,
}

/// Local rotation `U` with `U σᵃσᵃ U† = σᶻσᶻ` for the chosen axis; the
/// Z basis needs no rotation.
pub fn basis_rotation(axis: BasisAxis) -> Circuit {
    let gate = |q| match axis {
        BasisAxis::X => Some(Gate::u3(PI / 2.0, 0.0, PI, q)),
        BasisAxis::Y => Some(Gate::u3(PI / 2.0, PI / 2.0, PI / 2.0, q)),
        BasisAxis::Z => None,
    };
    Circuit::from_gates([gate(0), gate(1)].into_iter().flatten().collect()).expect("one-qubit gates on valid qubits")
}

pub(crate) fn hadamard() -> Mat2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Mat2::new(real(s), real(s), real(s), real(-s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::phase_distance4;
    use crate::propagation::NodeRule;

    fn kron_ops(a: Pauli, b: Pauli) -> Mat4 {
        kron2(&a.matrix(), &b.matrix())
    }

    #[test]
    fn u3_zero_is_identity() {
        assert!((u3_matrix(0.0, 0.0, 0.0) - Mat2::identity()).norm() < 1e-15);
    }

    #[test]
    fn u3_hadamard() {
        let h = u3_matrix(PI / 2.0, 0.0, PI);
        assert!((h - hadamard()).norm() < 1e-15);
    }

    #[test]
    fn cnot_matrix_swaps_lower_block() {
        let m = cnot_matrix(0, 1);
        let expected = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]];
        for r in 0..4 {
            for col in 0..4 {
                assert_eq!(m[(r, col)], real(expected[r][col] as f64));
            }
        }
    }

    #[test]
    fn rxx_zero_is_identity() {
        assert!((gate_matrix(&Gate::Rxx(0.0)) - Mat4::identity()).norm() < 1e-15);
    }

    #[test]
    fn cnot_from_rxx_and_u3s() {
        // Drawn sequence read as a matrix product (rightmost gate first),
        // so the XX rotation enters with the opposite sign.
        let c = Circuit::from_gates(vec![
            Gate::u3(PI / 2.0, 0.0, 0.0, 0),
            Gate::u3(0.0, 0.0, 0.0, 1),
            Gate::u3(-PI / 2.0, -PI / 2.0, PI / 2.0, 0),
            Gate::u3(-PI / 2.0, -PI / 2.0, PI / 2.0, 1),
            Gate::Rxx(PI / 2.0),
            Gate::u3(-PI / 2.0, 0.0, 0.0, 0),
            Gate::u3(0.0, 0.0, 0.0, 1),
        ])
        .unwrap();
        assert!(phase_distance4(&circuit_unitary(&c), &cnot_matrix(0, 1)) < 1e-12);
    }

    #[test]
    fn empty_and_double_cnot_are_identity() {
        assert_eq!(circuit_unitary(&Circuit::new()), Mat4::identity());
        let c = Circuit::from_gates(vec![Gate::cnot(), Gate::cnot()]).unwrap();
        assert!((circuit_unitary(&c) - Mat4::identity()).norm() < 1e-15);
    }

    #[test]
    fn identity_u3_pattern_collapses_to_cnot() {
        let mut gates = Vec::new();
        for layer in 0..4 {
            gates.push(Gate::U3(U3Gate::identity(0)));
            gates.push(Gate::U3(U3Gate::identity(1)));
            if layer < 3 {
                gates.push(Gate::cnot());
            }
        }
        let c = Circuit::from_gates(gates).unwrap();
        assert!((circuit_unitary(&c) - cnot_matrix(0, 1)).norm() < 1e-15);
    }

    #[test]
    fn push_rejects_bad_qubits() {
        let mut c = Circuit::new();
        assert!(c.push(Gate::u3(0.0, 0.0, 0.0, 2)).is_err());
        assert!(c.push(Gate::Cnot { control: 1, target: 1 }).is_err());
    }

    #[test]
    fn opaque_requires_unitary() {
        assert!(Gate::opaque(Mat4::identity() * real(2.0)).is_err());
    }

    #[test]
    fn prefix_prepares_h0_ground_state() {
        let u = circuit_unitary(&state_prep_prefix());
        let psi = u.column(0);
        let expected = [0.5, -0.5, -0.5, 0.5];
        for k in 0..4 {
            assert!((psi[k] - real(expected[k])).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_steps_is_prefix_only() {
        let s = Schedule::cosine(20.0).unwrap();
        let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint).unwrap();
        assert_eq!(evolution_circuit(&s, &plan, 0).unwrap(), state_prep_prefix());
        assert!(evolution_circuit(&s, &plan, 21).is_err());
    }

    #[test]
    fn step_circuits_reproduce_propagators() {
        let s = Schedule::cosine(20.0).unwrap();
        let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint).unwrap();
        let whole = step_circuits(&s, &plan, StepForm::Propagator).unwrap();
        let merged = step_circuits(&s, &plan, StepForm::Merged).unwrap();
        assert_eq!(whole.len(), 20);
        for (k, (w, m)) in whole.iter().zip(&merged).enumerate() {
            let u = short_time_propagator(&s, &plan, k + 1).unwrap();
            assert_eq!(w.len(), 1);
            assert_eq!((m.len(), m.cnot_count()), (7, 3));
            assert!(phase_distance4(&circuit_unitary(w), &u) < 1e-12);
            assert!(phase_distance4(&circuit_unitary(m), &u) < 1e-9);
        }
    }

    #[test]
    fn probe_zero_undoes_prefix() {
        let s = Schedule::cosine(20.0).unwrap();
        let plan = TrotterPlan::new(20, 20.0, NodeRule::Midpoint).unwrap();
        let probe = circuit_unitary(&build_fidelity_probe(&s, &plan, 0).unwrap());
        let psi0 = circuit_unitary(&state_prep_prefix()).column(0).into_owned();
        let out = probe * psi0;
        assert!((out[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_rotations_map_pauli_products_to_zz() {
        let zz = kron_ops(Pauli::Z, Pauli::Z);
        for (axis, p) in [(BasisAxis::X, Pauli::X), (BasisAxis::Y, Pauli::Y)] {
            let u = circuit_unitary(&basis_rotation(axis));
            assert!(crate::linalg::unitarity_error4(&u) < 1e-14);
            let rotated = u * kron_ops(p, p) * u.adjoint();
            assert!((rotated - zz).norm() < 1e-12, "{axis:?}");
        }
        assert!(basis_rotation(BasisAxis::Z).is_empty());
    }

    #[test]
    fn merging_identity_pattern_gives_identity_blocks() {
        let mut gates = Vec::new();
        for layer in 0..4 {
            gates.push(Gate::U3(U3Gate::identity(0)));
            gates.push(Gate::U3(U3Gate::identity(1)));
            if layer < 3 {
                gates.push(Gate::cnot());
            }
        }
        let merged = merge_u3_pairs(&Circuit::from_gates(gates).unwrap()).unwrap();
        assert_eq!(merged.len(), 7);
        for g in merged.gates() {
            if let Gate::Opaque(u) = g {
                assert!((**u - Mat4::identity()).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn merging_rejects_unpaired_u3() {
        let c = Circuit::from_gates(vec![Gate::u3(0.1, 0.0, 0.0, 0), Gate::cnot()]).unwrap();
        assert!(matches!(merge_u3_pairs(&c), Err(Error::Structure(_))));
        let c = Circuit::from_gates(vec![Gate::Rxx(0.3)]).unwrap();
        assert!(merge_u3_pairs(&c).is_err());
    }

    #[test]
    fn u3_angle_wrapping_preserves_matrix() {
        let g = U3Gate::new(1.0, 7.0, -9.0, 0);
        assert!(g.phi > -PI && g.phi <= PI);
        assert!(g.lambda > -PI && g.lambda <= PI);
        assert!((g.matrix() - u3_matrix(1.0, 7.0, -9.0)).norm() < 1e-14);
    }
}
