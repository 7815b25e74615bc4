//! Rotating-frame model of two capacitively coupled transmons.
//!
//! Basis index of `|n₁ n₂⟩` is `n₁·L + n₂` for `L` levels per transmon, so
//! transmon 1 plays the role of qubit 0 (most significant). Frequencies are
//! quoted in MHz as linear frequencies and enter Hamiltonians as
//! `2π·f·10⁻³` rad/ns.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, real, unitarity_error4, CMatrix, CVector, Mat4, Vec4, ZERO};

/// Converts a linear frequency in MHz to an angular frequency in rad/ns.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz * 1e-3
}

/// Device parameters. Coherence times are per transmon in μs and may be
/// infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub alpha_mhz: f64,
    pub g_mhz: f64,
    pub levels: usize,
    pub t1_us: [f64; 2],
    pub t2_us: [f64; 2],
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self { alpha_mhz: 200.0, g_mhz: 3.0, levels: 3, t1_us: [f64::INFINITY; 2], t2_us: [f64::INFINITY; 2] }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let times_ok = self.t1_us.iter().chain(&self.t2_us).all(|&t| t > 0.0 && !t.is_nan());
        if !(self.alpha_mhz > 0.0 && self.alpha_mhz.is_finite()) {
            return Err(Error::InvalidArgument(format!("anharmonicity {} MHz must be positive", self.alpha_mhz)));
        }
        if !(self.g_mhz >= 0.0 && self.g_mhz.is_finite()) {
            return Err(Error::InvalidArgument(format!("coupling {} MHz must be non-negative", self.g_mhz)));
        }
        if self.levels < 2 {
            return Err(Error::InvalidArgument("at least two levels per transmon".into()));
        }
        if !times_ok {
            return Err(Error::InvalidArgument("coherence times must be positive".into()));
        }
        Ok(())
    }

    /// Dimension of the two-transmon space, `L²`.
    pub fn dim(&self) -> usize {
        self.levels * self.levels
    }

    /// Same device with coherence times from a calibration preset.
    pub fn with_calibration(&self, cal: &Calibration) -> Self {
        Self { t1_us: cal.t1_us, t2_us: cal.t2_us, ..self.clone() }
    }

    pub fn noiseless(&self) -> Self {
        Self { t1_us: [f64::INFINITY; 2], t2_us: [f64::INFINITY; 2], ..self.clone() }
    }
}

/// Per-device calibration data for the two qubits used: coherence times
/// and the implementation times of a CNOT and of a decomposed two-qubit
/// propagator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub name: String,
    pub t1_us: [f64; 2],
    pub t2_us: [f64; 2],
    pub tau_cnot_ns: f64,
    pub tau_u_ns: f64,
}

impl Calibration {
    fn new(name: &str, t1_us: [f64; 2], t2_us: [f64; 2], tau_cnot_ns: f64, tau_u_ns: f64) -> Self {
        Self { name: name.into(), t1_us, t2_us, tau_cnot_ns, tau_u_ns }
    }

    /// The four built-in presets.
    pub fn presets() -> Vec<Calibration> {
        vec![
            Self::new("belem", [102.6, 70.4], [127.3, 104.5], 810.7, 2500.0),
            Self::new("casablanca", [111.7, 130.1], [40.7, 102.2], 760.9, 2400.0),
            Self::new("lima", [101.6, 113.0], [180.0, 106.9], 305.8, 1000.0),
            Self::new("manila", [136.0, 244.2], [112.8, 46.7], 277.3, 900.0),
        ]
    }

    pub fn preset(name: &str) -> Option<Calibration> {
        Self::presets().into_iter().find(|c| c.name == name)
    }
}

/// Truncated annihilation operator, `a|n⟩ = √n |n−1⟩`.
pub fn lowering_operator(levels: usize) -> CMatrix {
    CMatrix::from_fn(levels, levels, |r, col| if col == r + 1 { real((col as f64).sqrt()) } else { ZERO })
}

/// Operator `op` on transmon `which` (0 or 1), identity on the other.
pub fn on_transmon(op: &CMatrix, which: usize, levels: usize) -> CMatrix {
    let id = CMatrix::identity(levels, levels);
    match which {
        0 => op.kronecker(&id),
        _ => id.kronecker(op),
    }
}

/// `H_d = −α Σᵢ (a†a)ᵢ² − g (a₁†a₂ + a₂†a₁)` in rad/ns.
pub fn drift_hamiltonian(p: &DeviceParams) -> CMatrix {
    let l = p.levels;
    let a = lowering_operator(l);
    let n = a.adjoint() * &a;
    let n2 = &n * &n;
    let alpha = mhz_to_angular(p.alpha_mhz);
    let g = mhz_to_angular(p.g_mhz);
    let a1 = on_transmon(&a, 0, l);
    let a2 = on_transmon(&a, 1, l);
    let hop = a1.adjoint() * &a2 + a2.adjoint() * &a1;
    (on_transmon(&n2, 0, l) + on_transmon(&n2, 1, l)) * real(-alpha) - hop * real(g)
}

/// Control generators `[G_I¹, G_Q¹, G_I², G_Q²]` with `G_I = a + a†` and
/// `G_Q = −i(a† − a)`. The control Hamiltonian is `Σ ε_j G_j` with `ε_j`
/// in rad/ns.
pub fn control_generators(p: &DeviceParams) -> [CMatrix; 4] {
    let l = p.levels;
    let a = lowering_operator(l);
    let gi = &a + a.adjoint();
    let gq = (a.adjoint() - &a) * c(0.0, -1.0);
    [on_transmon(&gi, 0, l), on_transmon(&gq, 0, l), on_transmon(&gi, 1, l), on_transmon(&gq, 1, l)]
}

/// Indices of `|00⟩, |01⟩, |10⟩, |11⟩` in the device basis.
pub fn computational_indices(levels: usize) -> [usize; 4] {
    [0, 1, levels, levels + 1]
}

/// Two-qubit state embedded into the device space.
pub fn embed_state(v: &Vec4, levels: usize) -> CVector {
    let mut out = CVector::zeros(levels * levels);
    for (k, &idx) in computational_indices(levels).iter().enumerate() {
        out[idx] = v[k];
    }
    out
}

/// Computational block of a device-space operator.
pub fn restrict(m: &CMatrix, levels: usize) -> Mat4 {
    let idx = computational_indices(levels);
    Mat4::from_fn(|r, col| m[(idx[r], idx[col])])
}

/// Two-qubit target extended to the device space, identity on leakage
/// states.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTarget {
    pub unitary: CMatrix,
    pub computational_indices: [usize; 4],
}

impl EmbeddedTarget {
    pub fn dim(&self) -> usize {
        self.unitary.nrows()
    }
}

pub fn embed_target(u: &Mat4, p: &DeviceParams) -> Result<EmbeddedTarget> {
    let err = unitarity_error4(u);
    if err > 1e-10 {
        return Err(Error::NotUnitary(err));
    }
    let idx = computational_indices(p.levels);
    let mut unitary = CMatrix::identity(p.dim(), p.dim());
    for r in 0..4 {
        for col in 0..4 {
            unitary[(idx[r], idx[col])] = u[(r, col)];
        }
    }
    Ok(EmbeddedTarget { unitary, computational_indices: idx })
}
