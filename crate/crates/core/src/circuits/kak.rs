//! Cartan (KAK) decomposition of two-qubit unitaries in the magic basis and
//! its realization as three CNOTs interleaved with four layers of U3 gates.
//!
//! `U = e^{iφ} (A₁⊗A₂) exp(i(a σˣσˣ + b σʸσʸ + c σᶻσᶻ)) (B₁⊗B₂)`. The
//! canonical factor is built from a fixed three-CNOT template whose
//! alternating CNOT directions are flipped with Hadamards, so every CNOT in
//! the output has qubit 0 as control.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hadamard, Circuit, Gate, U3Gate};
use crate::error::{Error, Result};
use crate::linalg::{c, kron2, phase_distance4, real, unitarity_error4, Mat2, Mat4, C64, ZERO};
use crate::spin::Pauli;

const DIAGONALIZATION_ATTEMPTS: usize = 64;

fn magic_basis() -> Mat4 {
    let s = FRAC_1_SQRT_2;
    let i = c(0.0, s);
    let o = real(s);
    Mat4::new(
        o, ZERO, ZERO, i, //
        ZERO, i, o, ZERO, //
        ZERO, i, -o, ZERO, //
        o, ZERO, ZERO, -i,
    )
}

fn rz(t: f64) -> Mat2 {
    Mat2::new(C64::from_polar(1.0, -t / 2.0), ZERO, ZERO, C64::from_polar(1.0, t / 2.0))
}

fn ry(t: f64) -> Mat2 {
    let (s, co) = (t / 2.0).sin_cos();
    Mat2::new(real(co), real(-s), real(s), real(co))
}

/// Angles `(θ, φ, λ)` with `u = e^{iγ} U3(θ, φ, λ)` for some global phase γ.
pub fn u3_angles(u: &Mat2) -> (f64, f64, f64) {
    const EPS: f64 = 1e-13;
    let (a, b) = (u[(0, 0)].norm(), u[(1, 0)].norm());
    let theta = 2.0 * b.atan2(a);
    if b <= EPS * a.max(1e-300) {
        let gamma = u[(0, 0)].arg();
        return (0.0, u[(1, 1)].arg() - gamma, 0.0);
    }
    if a <= EPS * b {
        let gamma = u[(1, 0)].arg();
        return (PI, 0.0, (-u[(0, 1)]).arg() - gamma);
    }
    let gamma = u[(0, 0)].arg();
    (theta, u[(1, 0)].arg() - gamma, (-u[(0, 1)]).arg() - gamma)
}

/// Splits a local operator `m = A ⊗ B` into unitary factors, up to a
/// global phase that is discarded.
pub fn kron_factor(m: &Mat4) -> (Mat2, Mat2) {
    let block = |i: usize, j: usize| Mat2::from_fn(|r, col| m[(2 * i + r, 2 * j + col)]);
    let (mut bi, mut bj, mut best) = (0, 0, -1.0);
    for i in 0..2 {
        for j in 0..2 {
            let n = block(i, j).norm();
            if n > best {
                (bi, bj, best) = (i, j, n);
            }
        }
    }
    let b = block(bi, bj);
    let bb = (b.adjoint() * b).trace();
    let mut a = Mat2::from_fn(|i, j| (b.adjoint() * block(i, j)).trace() / bb);
    let mut b = b;
    let scale = a.determinant().norm().sqrt();
    a /= real(scale);
    b *= real(scale);
    (a, b)
}

/// Result of the Cartan decomposition.
#[derive(Debug, Clone)]
pub struct CanonicalDecomposition {
    /// Local factor applied after the canonical gate, as `(qubit 0, qubit 1)`.
    pub after: (Mat2, Mat2),
    /// Local factor applied before the canonical gate.
    pub before: (Mat2, Mat2),
    /// Interaction coefficients `(a, b, c)`.
    pub coefficients: (f64, f64, f64),
}

impl CanonicalDecomposition {
    pub fn canonical_gate(&self) -> Mat4 {
        canonical_gate(self.coefficients)
    }

    /// Reassembled unitary (equal to the input up to global phase).
    pub fn unitary(&self) -> Mat4 {
        kron2(&self.after.0, &self.after.1) * self.canonical_gate() * kron2(&self.before.0, &self.before.1)
    }

    pub fn compute(u: &Mat4) -> Result<Self> {
        let err = unitarity_error4(u);
        if err > 1e-10 {
            return Err(Error::NotUnitary(err));
        }
        let det = u.determinant();
        let special = u * C64::from_polar(1.0, -det.arg() / 4.0);
        let magic = magic_basis();
        let in_magic = magic.adjoint() * special * magic;
        let gram = in_magic.transpose() * in_magic;

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for attempt in 0..DIAGONALIZATION_ATTEMPTS {
            let (wr, wi) = if attempt == 0 {
                (1.0, 0.5773502691896258)
            } else {
                (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            };
            let mixed = Matrix4::<f64>::from_fn(|r, col| wr * gram[(r, col)].re + wi * gram[(r, col)].im);
            let eig = SymmetricEigen::new(mixed);
            let mut p = eig.eigenvectors;
            if p.determinant() < 0.0 {
                p.column_mut(0).neg_mut();
            }
            let pc = p.map(real);
            let diag = pc.transpose() * gram * pc;
            let off: f64 = (0..4)
                .flat_map(|r| (0..4).map(move |col| (r, col)))
                .filter(|(r, col)| r != col)
                .map(|(r, col)| diag[(r, col)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if off > 1e-11 {
                continue;
            }
            let mut half_angles: [f64; 4] = std::array::from_fn(|k| diag[(k, k)].arg() / 2.0);
            let mut left = in_magic * pc * inverse_phases(&half_angles);
            if left.determinant().re < 0.0 {
                half_angles[0] += PI;
                left = in_magic * pc * inverse_phases(&half_angles);
            }
            let after_local = magic * left * magic.adjoint();
            let before_local = magic * pc.transpose() * magic.adjoint();
            let coefficients = interaction_coefficients(&half_angles);
            let decomposition =
                Self { after: kron_factor(&after_local), before: kron_factor(&before_local), coefficients };
            if phase_distance4(&decomposition.unitary(), u) < 1e-9 {
                return Ok(decomposition);
            }
        }
        Err(Error::Structure("Cartan decomposition did not converge".into()))
    }
}

fn inverse_phases(half_angles: &[f64; 4]) -> Mat4 {
    Mat4::from_diagonal(&nalgebra::Vector4::from_fn(|k, _| C64::from_polar(1.0, -half_angles[k])))
}

/// `(a, b, c)` from the magic-basis eigenphases `θ = φ₀ + a s_xx + b s_yy + c s_zz`.
fn interaction_coefficients(half_angles: &[f64; 4]) -> (f64, f64, f64) {
    let magic = magic_basis();
    let signs = |p: Pauli| -> [f64; 4] {
        let d = magic.adjoint() * kron2(&p.matrix(), &p.matrix()) * magic;
        std::array::from_fn(|k| d[(k, k)].re)
    };
    let project = |s: [f64; 4]| (0..4).map(|k| s[k] * half_angles[k]).sum::<f64>() / 4.0;
    (project(signs(Pauli::X)), project(signs(Pauli::Y)), project(signs(Pauli::Z)))
}

/// `exp(i(a σˣσˣ + b σʸσʸ + c σᶻσᶻ))`.
pub fn canonical_gate((a, b, cc): (f64, f64, f64)) -> Mat4 {
    let magic = magic_basis();
    let signs = |p: Pauli| {
        let d = magic.adjoint() * kron2(&p.matrix(), &p.matrix()) * magic;
        nalgebra::Vector4::from_fn(|k, _| d[(k, k)].re)
    };
    let phases = signs(Pauli::X) * a + signs(Pauli::Y) * b + signs(Pauli::Z) * cc;
    let d = Mat4::from_diagonal(&phases.map(|t| C64::from_polar(1.0, t)));
    magic * d * magic.adjoint()
}

/// Decomposes a two-qubit unitary into the fixed pattern
/// `[U3 U3] CNOT [U3 U3] CNOT [U3 U3] CNOT [U3 U3]`, equal to the input up
/// to global phase.
pub fn decompose_two_qubit(u: &Mat4) -> Result<Circuit> {
    let kak = CanonicalDecomposition::compute(u)?;
    let (a, b, cc) = kak.coefficients;
    let h = hadamard();
    let t1 = PI / 2.0 - 2.0 * cc;
    let t2 = 2.0 * a - PI / 2.0;
    let t3 = PI / 2.0 - 2.0 * b;

    let layers: [(Mat2, Mat2); 4] = [
        (h * kak.before.0, h * rz(-PI / 2.0) * kak.before.1),
        (rz(t1) * h, ry(t2) * h),
        (h, h * ry(t3)),
        (kak.after.0 * rz(PI / 2.0) * h, kak.after.1 * h),
    ];

    let mut circuit = Circuit::new();
    for (k, (q0, q1)) in layers.iter().enumerate() {
        circuit.push(Gate::U3(U3Gate::from_matrix(q0, 0)))?;
        circuit.push(Gate::U3(U3Gate::from_matrix(q1, 1)))?;
        if k < 3 {
            circuit.push(Gate::cnot())?;
        }
    }
    Ok(circuit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{circuit_unitary, cnot_matrix, u3_matrix};
    use crate::linalg::{haar_unitary, phase_distance, to_dynamic, to_mat4};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn magic_basis_diagonalizes_pauli_products() {
        let m = magic_basis();
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            let d = m.adjoint() * kron2(&p.matrix(), &p.matrix()) * m;
            for r in 0..4 {
                for col in 0..4 {
                    if r != col {
                        assert!(d[(r, col)].norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn u3_angles_roundtrip_including_degenerate_cases() {
        let mut rng = rng();
        let mut cases: Vec<Mat2> = (0..50)
            .map(|_| {
                let u = haar_unitary(2, &mut rng);
                Mat2::from_fn(|r, col| u[(r, col)])
            })
            .collect();
        cases.push(Mat2::new(c(0.0, 1.0), ZERO, ZERO, real(1.0)));
        cases.push(Mat2::new(ZERO, c(0.0, 1.0), real(-1.0), ZERO));
        cases.push(Mat2::identity());
        for u in cases {
            let (t, p, l) = u3_angles(&u);
            let back = u3_matrix(t, p, l);
            let d = phase_distance(
                &to_dynamic(&kron2(&back, &Mat2::identity())),
                &to_dynamic(&kron2(&u, &Mat2::identity())),
            );
            assert!(d < 1e-12, "{u}");
        }
    }

    #[test]
    fn kron_factor_recovers_local_operators() {
        let mut rng = rng();
        let a = haar_unitary(2, &mut rng);
        let b = haar_unitary(2, &mut rng);
        let m = to_mat4(&a.kronecker(&b));
        let (fa, fb) = kron_factor(&m);
        assert!(phase_distance4(&kron2(&fa, &fb), &m) < 1e-13);
    }

    #[test]
    fn cnot_decomposes_with_full_shape() {
        let c = decompose_two_qubit(&cnot_matrix(0, 1)).unwrap();
        assert_eq!(c.cnot_count(), 3);
        assert_eq!(c.u3_count(), 8);
        assert!(phase_distance4(&circuit_unitary(&c), &cnot_matrix(0, 1)) < 1e-10);
    }

    #[test]
    fn local_and_identity_inputs_still_emit_three_cnots() {
        let mut rng = rng();
        let local = to_mat4(&haar_unitary(2, &mut rng).kronecker(&haar_unitary(2, &mut rng)));
        for u in [Mat4::identity(), local, cnot_matrix(1, 0)] {
            let c = decompose_two_qubit(&u).unwrap();
            assert_eq!((c.cnot_count(), c.u3_count()), (3, 8));
            assert!(phase_distance4(&circuit_unitary(&c), &u) < 1e-9);
        }
    }

    #[test]
    fn random_unitaries_roundtrip() {
        let mut rng = rng();
        for _ in 0..200 {
            let u = to_mat4(&haar_unitary(4, &mut rng));
            let c = decompose_two_qubit(&u).unwrap();
            assert!(phase_distance4(&circuit_unitary(&c), &u) < 1e-9);
        }
    }

    #[test]
    fn canonical_gate_matches_series_definition() {
        let (a, b, cc) = (0.3, -0.7, 1.1);
        let h = kron2(&Pauli::X.matrix(), &Pauli::X.matrix()) * real(a)
            + kron2(&Pauli::Y.matrix(), &Pauli::Y.matrix()) * real(b)
            + kron2(&Pauli::Z.matrix(), &Pauli::Z.matrix()) * real(cc);
        // exp(iH) = exp(-i(-H)·1)
        let oracle = crate::linalg::expm_hermitian4(&(-h), 1.0);
        assert!((canonical_gate((a, b, cc)) - oracle).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_unitary_input() {
        assert!(matches!(decompose_two_qubit(&(Mat4::identity() * real(1.1))), Err(Error::NotUnitary(_))));
    }
}
