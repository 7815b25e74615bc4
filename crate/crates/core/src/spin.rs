//! Two-spin Hamiltonians, the interpolation schedule and their spectra.
//!
//! Spin states map onto computational states as `|0⟩ = |↓⟩`, `|1⟩ = |↑⟩`,
//! with qubit 0 the most significant bit of the basis index. The Pauli
//! operators follow the spin convention `σᶻ|↑⟩ = +|↑⟩`, so in the
//! computational basis `σᶻ = diag(-1, 1)` and `σʸ = iσˣσᶻ`. Coefficients
//! are angular frequencies in rad/ns (ħ = 1).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, eigh, kron2, operator_norm, real, to_dynamic, to_mat4, Mat2, Mat4, Vec4, ONE, ZERO};

/// One-qubit Pauli label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> Mat2 {
        match self {
            Pauli::I => Mat2::identity(),
            Pauli::X => Mat2::new(ZERO, ONE, ONE, ZERO),
            Pauli::Y => Mat2::new(ZERO, c(0.0, 1.0), c(0.0, -1.0), ZERO),
            Pauli::Z => Mat2::new(real(-1.0), ZERO, ZERO, ONE),
        }
    }

    /// Eigenvalue of this operator on a measured bit, for diagonal labels.
    pub fn bit_eigenvalue(self, bit: u8) -> f64 {
        match self {
            Pauli::I => 1.0,
            Pauli::Z => {
                if bit == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            _ => panic!("{self:?} is not diagonal in the computational basis"),
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pauli::I => "I",
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        };
        f.write_str(s)
    }
}

/// Real linear combination of two-qubit Pauli products `Σ h_ab σᵃ⊗σᵇ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PauliSum {
    coeffs: BTreeMap<(Pauli, Pauli), f64>,
}

impl PauliSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a sum from `(a, b, h_ab)` triples; repeated labels accumulate.
    pub fn from_terms(terms: &[(Pauli, Pauli, f64)]) -> Result<Self> {
        let mut sum = Self::new();
        for &(a, b, h) in terms {
            sum.add_term(a, b, h)?;
        }
        Ok(sum)
    }

    pub fn add_term(&mut self, a: Pauli, b: Pauli, h: f64) -> Result<()> {
        if !h.is_finite() {
            return Err(Error::InvalidArgument(format!("coefficient of {a}{b} is not finite")));
        }
        *self.coeffs.entry((a, b)).or_insert(0.0) += h;
        Ok(())
    }

    pub fn coeff(&self, a: Pauli, b: Pauli) -> f64 {
        self.coeffs.get(&(a, b)).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (Pauli, Pauli, f64)> + '_ {
        self.coeffs.iter().map(|(&(a, b), &h)| (a, b, h))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|(&k, &h)| (k, h * factor)).collect() }
    }

    pub fn matrix(&self) -> Mat4 {
        self.terms().fold(Mat4::zeros(), |acc, (a, b, h)| acc + kron2(&a.matrix(), &b.matrix()) * real(h))
    }
}

/// `H₀ = σˣ₁ + σˣ₂`, whose ground state is the easily prepared start state.
pub fn build_h0() -> PauliSum {
    PauliSum::from_terms(&[(Pauli::X, Pauli::I, 1.0), (Pauli::I, Pauli::X, 1.0)]).expect("finite coefficients")
}

/// `H_T = -σˣσˣ + σʸσʸ + ½σᶻσᶻ - σᶻ₁ - σᶻ₂`, the target Hamiltonian.
pub fn build_ht() -> PauliSum {
    PauliSum::from_terms(&[
        (Pauli::X, Pauli::X, -1.0),
        (Pauli::Y, Pauli::Y, 1.0),
        (Pauli::Z, Pauli::Z, 0.5),
        (Pauli::Z, Pauli::I, -1.0),
        (Pauli::I, Pauli::Z, -1.0),
    ])
    .expect("finite coefficients")
}

/// Exact ground energy of [`build_ht`], `(1 - 4√2)/2`.
pub fn target_ground_energy() -> f64 {
    (1.0 - 4.0 * 2f64.sqrt()) / 2.0
}

/// Interpolation family `f(s)` with `g = 1 - f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `f = cos²(πs/2)`.
    #[default]
    CosineSquared,
    /// `f = 1 - s`.
    Linear,
    /// `f ≡ 1`. Violates the end-point condition; only useful as a
    /// degenerate test input (the Hamiltonian never changes).
    Frozen,
}

impl Interpolation {
    /// `f(s)` on the normalized time `s = t/T`.
    pub fn f(self, s: f64) -> f64 {
        match self {
            Interpolation::CosineSquared => (PI * s / 2.0).cos().powi(2),
            Interpolation::Linear => 1.0 - s,
            Interpolation::Frozen => 1.0,
        }
    }

    /// `df/ds`.
    pub fn df(self, s: f64) -> f64 {
        match self {
            Interpolation::CosineSquared => -(PI / 2.0) * (PI * s).sin(),
            Interpolation::Linear => -1.0,
            Interpolation::Frozen => 0.0,
        }
    }
}

/// Total evolution time and interpolation family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    total_time: f64,
    form: Interpolation,
}

impl Schedule {
    pub fn new(total_time: f64, form: Interpolation) -> Result<Self> {
        if !(total_time > 0.0 && total_time.is_finite()) {
            return Err(Error::InvalidArgument(format!("total evolution time must be positive, got {total_time}")));
        }
        Ok(Self { total_time, form })
    }

    pub fn cosine(total_time: f64) -> Result<Self> {
        Self::new(total_time, Interpolation::CosineSquared)
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn form(&self) -> Interpolation {
        self.form
    }

    fn normalized(&self, t: f64) -> Result<f64> {
        let slack = 1e-12 * self.total_time;
        if !(t >= -slack && t <= self.total_time + slack) {
            return Err(Error::Domain { t, total: self.total_time });
        }
        Ok((t / self.total_time).clamp(0.0, 1.0))
    }
}

/// `(f(t), g(t))` with `g = 1 - f`.
pub fn interpolate(sched: &Schedule, t: f64) -> Result<(f64, f64)> {
    let s = sched.normalized(t)?;
    let f = sched.form.f(s);
    Ok((f, 1.0 - f))
}

/// Dense `H(t) = f(t) H₀ + g(t) H_T`.
pub fn hamiltonian_at(sched: &Schedule, t: f64) -> Result<Mat4> {
    let (f, g) = interpolate(sched, t)?;
    Ok(build_h0().matrix() * real(f) + build_ht().matrix() * real(g))
}

/// Full eigensystem of a Hermitian matrix, ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, each with its largest-magnitude component
    /// made real and positive.
    pub eigenvectors: Mat4,
}

impl Spectrum {
    pub fn of(h: &Mat4) -> Self {
        let (eigenvalues, vecs) = eigh(&to_dynamic(h));
        let mut eigenvectors = to_mat4(&vecs);
        for mut col in eigenvectors.column_iter_mut() {
            let mut pivot = 0;
            for k in 1..4 {
                if col[k].norm() > col[pivot].norm() + 1e-12 {
                    pivot = k;
                }
            }
            let p = col[pivot];
            let phase = p.conj() / p.norm();
            col *= phase;
        }
        Self { eigenvalues, eigenvectors }
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn ground_state(&self) -> Vec4 {
        self.eigenvectors.column(0).into_owned()
    }

    pub fn gap(&self) -> f64 {
        self.eigenvalues[1] - self.eigenvalues[0]
    }
}

pub fn spectrum_at(sched: &Schedule, t: f64) -> Result<Spectrum> {
    Ok(Spectrum::of(&hamiltonian_at(sched, t)?))
}

fn grid_times(sched: &Schedule, grid_points: usize) -> Result<Vec<f64>> {
    if grid_points < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
    }
    let total = sched.total_time();
    Ok((0..grid_points).map(|k| total * k as f64 / (grid_points - 1) as f64).collect())
}

/// Minimum ground-state gap `ε₁ - ε₀` over a uniform time grid, with the
/// time at which it occurs.
pub fn min_gap(sched: &Schedule, grid_points: usize) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, 0.0);
    for t in grid_times(sched, grid_points)? {
        let gap = spectrum_at(sched, t)?.gap();
        if gap < best.0 {
            best = (gap, t);
        }
    }
    Ok(best)
}

/// `∂H/∂s` at normalized time `s`, from the analytic derivative of `f`.
pub fn hamiltonian_s_derivative(sched: &Schedule, s: f64) -> Mat4 {
    let df = sched.form().df(s);
    (build_h0().matrix() - build_ht().matrix()) * real(df)
}

/// Order-of-magnitude adiabatic time `max_s ‖∂ₛH‖ / Δ²`.
pub fn adiabatic_time_scale(sched: &Schedule, grid_points: usize) -> Result<f64> {
    let (gap, _) = min_gap(sched, grid_points)?;
    let total = sched.total_time();
    let numerator = grid_times(sched, grid_points)?
        .into_iter()
        .map(|t| operator_norm(&to_dynamic(&hamiltonian_s_derivative(sched, t / total))))
        .fold(0.0, f64::max);
    Ok(numerator / (gap * gap))
}
