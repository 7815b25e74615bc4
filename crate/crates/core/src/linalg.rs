//! Small dense complex linear-algebra helpers shared by every module.
//!
//! Two-qubit objects use the fixed-size [`Mat4`]/[`Vec4`]; the transmon
//! space (whose dimension depends on the number of levels kept) uses the
//! dynamically sized [`CMatrix`].

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Vec4 = Vector4<C64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Kronecker product of two one-qubit operators; the first factor acts on
/// the most significant qubit.
pub fn kron2(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn to_dynamic(m: &Mat4) -> CMatrix {
    CMatrix::from_fn(4, 4, |r, col| m[(r, col)])
}

pub fn to_mat4(m: &CMatrix) -> Mat4 {
    assert_eq!(m.shape(), (4, 4), "expected a 4x4 matrix");
    Mat4::from_fn(|r, col| m[(r, col)])
}

/// Frobenius norm of `U†U - I`.
pub fn unitarity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    (m.adjoint() * m - CMatrix::identity(n, n)).norm()
}

pub fn unitarity_error4(m: &Mat4) -> f64 {
    (m.adjoint() * m - Mat4::identity()).norm()
}

/// Largest absolute entry of `H - H†`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Minimum over global phases of the Frobenius distance `‖a - e^{iφ} b‖`.
pub fn phase_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let ov: C64 = (b.adjoint() * a).trace();
    let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
    (a - b * phase).norm()
}

pub fn phase_distance4(a: &Mat4, b: &Mat4) -> f64 {
    let ov: C64 = (b.adjoint() * a).trace();
    let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
    (a - b * phase).norm()
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in ascending
/// order.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let sym = (m + m.adjoint()) * real(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// `exp(-i H dt)` for Hermitian `H`, via its eigendecomposition.
pub fn expm_hermitian(h: &CMatrix, dt: f64) -> CMatrix {
    let (values, vectors) = eigh(h);
    let phases = DVector::from_iterator(values.len(), values.iter().map(|&e| C64::from_polar(1.0, -e * dt)));
    let scaled = CMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, col| vectors[(r, col)] * phases[col]);
    scaled * vectors.adjoint()
}

pub fn expm_hermitian4(h: &Mat4, dt: f64) -> Mat4 {
    to_mat4(&expm_hermitian(&to_dynamic(h), dt))
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Haar-distributed unitary of dimension `n` (QR of a Ginibre matrix with
/// the phases of R's diagonal divided out).
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    CMatrix::from_fn(n, n, |row, col| {
        let d = r[(col, col)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        q[(row, col)] * ph
    })
}

/// Random normalized complex vector of dimension `n`.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    });
    let norm = v.norm();
    v / real(norm)
}

pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_unitaries_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = haar_unitary(4, &mut rng);
            assert!(unitarity_error(&u) < 1e-12);
        }
    }

    #[test]
    fn eigh_reconstructs_hermitian_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = haar_unitary(9, &mut rng);
        let h = (&a + a.adjoint()) * real(0.5);
        let (vals, vecs) = eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMatrix::from_diagonal(&DVector::from_iterator(9, vals.iter().map(|&x| real(x))));
        assert!((&vecs * d * vecs.adjoint() - h).norm() < 1e-12);
    }

    #[test]
    fn phase_distance_quotients_global_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = haar_unitary(4, &mut rng);
        let v = &u * C64::from_polar(1.0, 0.83);
        assert!(phase_distance(&u, &v) < 1e-12);
    }

    #[test]
    fn kron2_matches_nalgebra_kronecker() {
        let a = Mat2::new(c(1.0, 0.5), c(0.0, 2.0), c(-1.0, 0.0), c(0.3, -0.1));
        let b = Mat2::new(c(0.2, 0.0), c(1.0, 1.0), c(0.0, -1.0), c(2.0, 0.0));
        let direct = to_dynamic(&kron2(&a, &b));
        let oracle =
            CMatrix::from_fn(2, 2, |r, col| a[(r, col)]).kronecker(&CMatrix::from_fn(2, 2, |r, col| b[(r, col)]));
        assert!((direct - oracle).norm() < 1e-15);
    }
}
