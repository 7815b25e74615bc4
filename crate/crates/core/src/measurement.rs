//! Computational-basis readout: shot sampling with a tensor-product readout
//! error model, Pauli and Hamiltonian estimators, confusion-matrix
//! mitigation, and the error-versus-shots study.
//!
//! Outcome index `2·b₀ + b₁` orders outcomes as `00, 01, 10, 11` with
//! qubit 0 the left bit. For single-qubit readout, `p_ij` is the
//! probability of reading `i` from a qubit prepared in `j`.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{basis_rotation, circuit_unitary, BasisAxis, Gate};
use crate::error::{Error, Result};
use crate::linalg::{real, CMatrix, Mat2, Mat4, Vec4};
use crate::open_system::DensityMatrix;
use crate::propagation::StateVector;
use crate::spin::{build_ht, Pauli, PauliSum};
use crate::transmon::{embed_target, DeviceParams};

/// Shots per circuit used on hardware.
pub const DEFAULT_SHOTS: u64 = 2500;

pub const OUTCOMES: [&str; 4] = ["00", "01", "10", "11"];

/// Outcome histogram of one measured circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CountsRecord", into = "CountsRecord")]
pub struct Counts {
    counts: [u64; 4],
}

#[derive(Serialize, Deserialize)]
struct CountsRecord {
    #[serde(rename = "00")]
    c00: u64,
    #[serde(rename = "01")]
    c01: u64,
    #[serde(rename = "10")]
    c10: u64,
    #[serde(rename = "11")]
    c11: u64,
    total: u64,
}

impl TryFrom<CountsRecord> for Counts {
    type Error = Error;

    fn try_from(r: CountsRecord) -> Result<Self> {
        let counts = Counts::new([r.c00, r.c01, r.c10, r.c11])?;
        if counts.total() != r.total {
            return Err(Error::InvalidArgument(format!("counts sum to {} but total is {}", counts.total(), r.total)));
        }
        Ok(counts)
    }
}

impl From<Counts> for CountsRecord {
    fn from(c: Counts) -> Self {
        let [c00, c01, c10, c11] = c.counts;
        Self { c00, c01, c10, c11, total: c.total() }
    }
}

impl Counts {
    pub fn new(counts: [u64; 4]) -> Result<Self> {
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::InvalidArgument("counts must contain at least one shot".into()));
        }
        Ok(Self { counts })
    }

    pub fn get(&self, outcome: usize) -> u64 {
        self.counts[outcome]
    }

    pub fn as_array(&self) -> [u64; 4] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("counts serialize")
    }
}

/// Outcome probabilities or relative frequencies over `00, 01, 10, 11`.
pub trait OutcomeDistribution {
    fn frequencies(&self) -> [f64; 4];
}

impl OutcomeDistribution for Counts {
    fn frequencies(&self) -> [f64; 4] {
        let n = self.total() as f64;
        self.counts.map(|c| c as f64 / n)
    }
}

impl OutcomeDistribution for [f64; 4] {
    fn frequencies(&self) -> [f64; 4] {
        *self
    }
}

/// A state that can be rotated by a two-qubit unitary and read out in the
/// computational basis.
pub trait Measurable: Sized {
    /// Ideal outcome probabilities. Device states read any excited level
    /// as bit 1.
    fn probabilities(&self) -> [f64; 4];
    fn rotated(&self, u: &Mat4) -> Result<Self>;
}

impl Measurable for StateVector {
    fn probabilities(&self) -> [f64; 4] {
        StateVector::probabilities(self)
    }

    fn rotated(&self, u: &Mat4) -> Result<Self> {
        Ok(self.evolve(u))
    }
}

impl Measurable for Vec4 {
    fn probabilities(&self) -> [f64; 4] {
        std::array::from_fn(|k| self[k].norm_sqr())
    }

    fn rotated(&self, u: &Mat4) -> Result<Self> {
        Ok(u * self)
    }
}

impl Measurable for DensityMatrix {
    fn probabilities(&self) -> [f64; 4] {
        let levels = levels_of(self.dim());
        let mut p = [0.0; 4];
        for (idx, pop) in self.populations().into_iter().enumerate() {
            let (n0, n1) = (idx / levels, idx % levels);
            p[2 * n0.min(1) + n1.min(1)] += pop.max(0.0);
        }
        p
    }

    fn rotated(&self, u: &Mat4) -> Result<Self> {
        let levels = levels_of(self.dim());
        let full = if levels == 2 {
            CMatrix::from_fn(4, 4, |r, col| u[(r, col)])
        } else {
            embed_target(u, &DeviceParams { levels, ..Default::default() })?.unitary
        };
        let m = &full * self.matrix() * full.adjoint();
        DensityMatrix::new((&m + m.adjoint()) * real(0.5))
    }
}

fn levels_of(dim: usize) -> usize {
    let levels = (dim as f64).sqrt().round() as usize;
    assert_eq!(levels * levels, dim, "two-transmon state dimension must be a square");
    levels
}

/// Independent per-qubit readout errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// Probability of reading 0 from a prepared 1, per qubit.
    pub p01: [f64; 2],
    /// Probability of reading 1 from a prepared 0, per qubit.
    pub p10: [f64; 2],
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ReadoutModel {
    pub fn ideal() -> Self {
        Self { p01: [0.0; 2], p10: [0.0; 2] }
    }

    pub fn new(p01: [f64; 2], p10: [f64; 2]) -> Result<Self> {
        let model = Self { p01, p10 };
        model.validate()?;
        Ok(model)
    }

    /// Same flip probabilities on both qubits.
    pub fn symmetric_qubits(p01: f64, p10: f64) -> Result<Self> {
        Self::new([p01; 2], [p10; 2])
    }

    pub fn validate(&self) -> Result<()> {
        if self.p01.iter().chain(&self.p10).all(|p| (0.0..=1.0).contains(p)) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("readout probabilities outside [0, 1]: {self:?}")))
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.p01.iter().chain(&self.p10).all(|&p| p == 0.0)
    }

    /// `[[1 − p10, p01], [p10, 1 − p01]]` for one qubit.
    pub fn qubit_matrix(&self, q: usize) -> Matrix2<f64> {
        Matrix2::new(1.0 - self.p10[q], self.p01[q], self.p10[q], 1.0 - self.p01[q])
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix(self.qubit_matrix(0).kronecker(&self.qubit_matrix(1)))
    }
}

/// Column-stochastic map from true to measured outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMatrix(Matrix4<f64>);

impl ConfusionMatrix {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    /// `P·p`.
    pub fn apply(&self, p: &[f64; 4]) -> [f64; 4] {
        let v = self.0 * Vector4::from(*p);
        [v[0], v[1], v[2], v[3]]
    }

    /// Ratio of extreme singular values; infinite for a singular matrix.
    pub fn condition_number(&self) -> f64 {
        let sv = self.0.singular_values();
        let (max, min) = (sv.max(), sv.min());
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }
}

/// Ideal readout probabilities corrupted by `model`.
pub fn corrupted_probabilities<S: Measurable>(state: &S, model: &ReadoutModel) -> [f64; 4] {
    model.confusion().apply(&state.probabilities())
}

/// Multinomial draw of `shots` outcomes from the corrupted distribution,
/// deterministic per seed.
pub fn sample_counts<S: Measurable>(state: &S, shots: u64, model: &ReadoutModel, seed: u64) -> Result<Counts> {
    if shots == 0 {
        return Err(Error::InvalidArgument("at least one shot is required".into()));
    }
    model.validate()?;
    let p = corrupted_probabilities(state, model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Counts::new(multinomial(&p, shots, &mut rng))
}

/// Sequential conditional binomials.
fn multinomial<R: Rng>(p: &[f64; 4], shots: u64, rng: &mut R) -> [u64; 4] {
    let total: f64 = p.iter().map(|v| v.max(0.0)).sum();
    let mut remaining = shots;
    let mut mass = total;
    let mut out = [0; 4];
    for k in 0..3 {
        if remaining == 0 || mass <= 0.0 {
            break;
        }
        let q = (p[k].max(0.0) / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, q).expect("probability in [0, 1]").sample(rng);
        out[k] = draw;
        remaining -= draw;
        mass -= p[k].max(0.0);
    }
    out[3] += remaining;
    out
}

/// One-qubit rotation applied to each qubit before readout for `axis`.
fn axis_rotation(axis: BasisAxis) -> Mat2 {
    match basis_rotation(axis).gates().first() {
        Some(Gate::U3(u)) => u.matrix(),
        _ => Mat2::identity(),
    }
}

/// Eigenvalue of `σ^axis` on the state that reads out as `bit` after the
/// basis rotation for `axis`.
pub fn bit_eigenvalue(axis: BasisAxis, bit: usize) -> f64 {
    let sigma = match axis {
        BasisAxis::X => Pauli::X,
        BasisAxis::Y => Pauli::Y,
        BasisAxis::Z => Pauli::Z,
    }
    .matrix();
    let r = axis_rotation(axis);
    let rotated = r * sigma * r.adjoint();
    rotated[(bit, bit)].re.round()
}

fn axis_of(label: Pauli) -> Option<BasisAxis> {
    match label {
        Pauli::I => None,
        Pauli::X => Some(BasisAxis::X),
        Pauli::Y => Some(BasisAxis::Y),
        Pauli::Z => Some(BasisAxis::Z),
    }
}

/// Common measurement axis of a Pauli product, `None` for `I⊗I`.
fn product_axis(a: Pauli, b: Pauli) -> Result<Option<BasisAxis>> {
    match (axis_of(a), axis_of(b)) {
        (Some(x), Some(y)) if x != y => {
            Err(Error::InvalidArgument(format!("{a}{b} is not diagonal in a single product basis")))
        }
        (x, y) => Ok(x.or(y)),
    }
}

/// `⟨σᵃσᵇ⟩ = Σ_ij λ_a(i) λ_b(j) p̂_ij` from data taken in the basis of the
/// non-identity labels.
pub fn estimate_pauli<D: OutcomeDistribution>(data: &D, a: Pauli, b: Pauli) -> Result<f64> {
    let Some(axis) = product_axis(a, b)? else {
        return Ok(data.frequencies().iter().sum());
    };
    let eig = |label: Pauli, bit| if label == Pauli::I { 1.0 } else { bit_eigenvalue(axis, bit) };
    let f = data.frequencies();
    Ok((0..4).map(|k| eig(a, k >> 1) * eig(b, k & 1) * f[k]).sum())
}

/// Datasets of one state read out in the three product bases.
#[derive(Debug, Clone, Copy)]
pub struct BasisData<D> {
    pub z: D,
    pub x: D,
    pub y: D,
}

impl<D> BasisData<D> {
    fn for_axis(&self, axis: BasisAxis) -> &D {
        match axis {
            BasisAxis::X => &self.x,
            BasisAxis::Y => &self.y,
            BasisAxis::Z => &self.z,
        }
    }
}

/// `Σ h_ab ⟨σᵃσᵇ⟩`, each term from the dataset of its basis. The identity
/// term is taken from the Z data.
pub fn estimate_hamiltonian<D: OutcomeDistribution>(h: &PauliSum, data: &BasisData<D>) -> Result<f64> {
    let mut total = 0.0;
    for (a, b, coeff) in h.terms() {
        let axis = product_axis(a, b)?.unwrap_or(BasisAxis::Z);
        total += coeff * estimate_pauli(data.for_axis(axis), a, b)?;
    }
    Ok(total)
}

/// `−⟨XX⟩ + ⟨YY⟩ + ½⟨ZZ⟩ − ⟨ZI⟩ − ⟨IZ⟩`.
pub fn estimate_ht<D: OutcomeDistribution>(z: &D, x: &D, y: &D) -> f64 {
    let data = BasisData { z: z.frequencies(), x: x.frequencies(), y: y.frequencies() };
    estimate_hamiltonian(&build_ht(), &data).expect("target Hamiltonian terms are single-basis")
}

/// `√p̂₀₀` of the fidelity-probe readout.
pub fn estimate_fidelity<D: OutcomeDistribution>(probe: &D) -> f64 {
    probe.frequencies()[0].max(0.0).sqrt()
}

fn normalized(d: &impl OutcomeDistribution, label: &str) -> Result<[f64; 4]> {
    let f = d.frequencies();
    let sum: f64 = f.iter().sum();
    if !sum.is_finite() || sum <= 0.0 || f.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Calibration(format!("{label} calibration column cannot be normalized: {f:?}")));
    }
    Ok(f.map(|v| v / sum))
}

/// Single-qubit flip probabilities from readouts of prepared `|00⟩` and
/// `|11⟩`, assuming independent qubits.
pub fn readout_model_from_calibration<D: OutcomeDistribution>(cal00: &D, cal11: &D) -> Result<ReadoutModel> {
    let c0 = normalized(cal00, "|00>")?;
    let c1 = normalized(cal11, "|11>")?;
    let p10 = [c0[2] + c0[3], c0[1] + c0[3]];
    let p01 = [c1[0] + c1[1], c1[0] + c1[2]];
    ReadoutModel::new(p01, p10).map_err(|e| Error::Calibration(e.to_string()))
}

pub fn build_confusion<D: OutcomeDistribution>(cal00: &D, cal11: &D) -> Result<ConfusionMatrix> {
    Ok(readout_model_from_calibration(cal00, cal11)?.confusion())
}

/// Mitigated distribution with the diagnostics reported alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mitigated {
    pub probabilities: [f64; 4],
    /// Whether negative entries of `P⁻¹p̂` were clipped.
    pub clipped: bool,
    pub condition_number: f64,
}

impl OutcomeDistribution for Mitigated {
    fn frequencies(&self) -> [f64; 4] {
        self.probabilities
    }
}

/// Largest condition number accepted by [`mitigate`].
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// `P⁻¹p̂` with negative entries clipped and the result renormalized.
pub fn mitigate<D: OutcomeDistribution>(data: &D, p: &ConfusionMatrix) -> Result<Mitigated> {
    let condition_number = p.condition_number();
    let inverse = p.0.try_inverse().filter(|_| condition_number < MAX_CONDITION_NUMBER);
    let Some(inverse) = inverse else {
        return Err(Error::Mitigation(format!(
            "confusion matrix is singular (condition number {condition_number:.3e})"
        )));
    };
    let raw = inverse * Vector4::from(data.frequencies());
    let clipped = raw.iter().any(|&v| v < 0.0);
    let positive = raw.map(|v| v.max(0.0));
    let sum = positive.sum();
    if !(sum > 0.0) {
        return Err(Error::Mitigation("mitigated distribution has no positive mass".into()));
    }
    let probabilities = [positive[0] / sum, positive[1] / sum, positive[2] / sum, positive[3] / sum];
    Ok(Mitigated { probabilities, clipped, condition_number })
}

/// Expands `seed` into independent stream seeds.
pub fn seed_stream(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Sampled estimates at one point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepEstimate {
    pub fidelity_raw: f64,
    pub fidelity_mitigated: f64,
    pub energy_raw: f64,
    pub energy_mitigated: f64,
    /// Whether any mitigated dataset needed clipping.
    pub clipped: bool,
}

/// Reads out `state` in the three Pauli bases and through the fidelity
/// probe `probe`, with a fresh `|00⟩`/`|11⟩` calibration drawn from the
/// same readout model.
pub fn tomography_step<S: Measurable>(
    state: &S,
    probe: &Mat4,
    shots: u64,
    model: &ReadoutModel,
    seed: u64,
) -> Result<StepEstimate> {
    let seeds = seed_stream(seed, 6);
    let basis = |k: usize| StateVector::basis(k);
    let cal00 = sample_counts(&basis(0), shots, model, seeds[0])?;
    let cal11 = sample_counts(&basis(3), shots, model, seeds[1])?;
    let confusion = build_confusion(&cal00, &cal11)?;
    let read = |axis: BasisAxis, s: u64| -> Result<Counts> {
        sample_counts(&state.rotated(&circuit_unitary(&basis_rotation(axis)))?, shots, model, s)
    };
    let data = BasisData {
        z: read(BasisAxis::Z, seeds[2])?,
        x: read(BasisAxis::X, seeds[3])?,
        y: read(BasisAxis::Y, seeds[4])?,
    };
    let probe_counts = sample_counts(&state.rotated(probe)?, shots, model, seeds[5])?;

    let mitigated = BasisData {
        z: mitigate(&data.z, &confusion)?,
        x: mitigate(&data.x, &confusion)?,
        y: mitigate(&data.y, &confusion)?,
    };
    let probe_mitigated = mitigate(&probe_counts, &confusion)?;
    Ok(StepEstimate {
        fidelity_raw: estimate_fidelity(&probe_counts),
        fidelity_mitigated: estimate_fidelity(&probe_mitigated),
        energy_raw: estimate_ht(&data.z, &data.x, &data.y),
        energy_mitigated: estimate_ht(&mitigated.z, &mitigated.x, &mitigated.y),
        clipped: [mitigated.z, mitigated.x, mitigated.y, probe_mitigated].iter().any(|m| m.clipped),
    })
}

/// One row of the error-versus-shots table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotErrorRow {
    pub shots: u64,
    /// Mean over outcomes and seeds of `|f̂ − p_ideal|`.
    pub mean_abs_deviation: f64,
    /// Standard error of that mean across seeds.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotErrorTable {
    pub rows: Vec<ShotErrorRow>,
}

impl ShotErrorTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shots,mean_abs_deviation,std_error\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.shots, r.mean_abs_deviation, r.std_error).expect("String write");
        }
        out
    }

    /// Deviation at the largest shot count.
    pub fn plateau(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.mean_abs_deviation)
    }
}

/// `H⊗H|00⟩`, the uniform reference state of the study.
pub fn uniform_state() -> StateVector {
    StateVector::new(Vec4::repeat(real(0.5))).expect("normalized")
}

/// Average deviation of sampled frequencies from the ideal probabilities
/// of `state` for each shot count, over the given seeds. Shot counts and
/// seeds are sampled in parallel.
pub fn error_vs_shots<S: Measurable + Sync>(
    state: &S,
    model: &ReadoutModel,
    shot_grid: &[u64],
    seeds: &[u64],
) -> Result<ShotErrorTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let ideal = state.probabilities();
    let rows = shot_grid
        .par_iter()
        .map(|&shots| {
            let devs = seeds
                .iter()
                .map(|&s| {
                    let f = sample_counts(state, shots, model, s ^ shots.rotate_left(32))?.frequencies();
                    Ok(f.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).sum::<f64>() / 4.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = devs.len() as f64;
            let mean = devs.iter().sum::<f64>() / n;
            let var =
                if devs.len() > 1 { devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            Ok(ShotErrorRow { shots, mean_abs_deviation: mean, std_error: (var / n).sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShotErrorTable { rows })
}

/// Logarithmic grid `10^lo ..= 10^hi` with `per_decade` points per decade.
pub fn log_shot_grid(lo: u32, hi: u32, per_decade: u32) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..=(hi - lo) * per_decade)
        .map(|k| 10f64.powf(lo as f64 + k as f64 / per_decade as f64).round() as u64)
        .collect();
    grid.dedup();
    grid
}
