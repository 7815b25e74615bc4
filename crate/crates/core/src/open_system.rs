//! Lindblad evolution of the two-transmon density matrix under piecewise
//! constant pulses, and the bookkeeping of fidelity and energy along a
//! device-level run of the adiabatic schedule.
//!
//! The generator is `dρ/dt = −i[H, ρ] + Σ γ (L ρ R − ½{K, ρ})` with
//! `(L, R, K) = (a, a†, a†a)` for relaxation and `(n, n, n²)` for
//! dephasing in the standard form.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, hermiticity_error, real, CMatrix, CVector, C64};
use crate::propagation::{StateVector, TrotterPlan};
use crate::pulse::{PulseSequence, CHANNELS};
use crate::spin::{build_ht, spectrum_at, Schedule};
use crate::transmon::{
    control_generators, drift_hamiltonian, embed_state, lowering_operator, mhz_to_angular, on_transmon, restrict,
    DeviceParams,
};

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
    pub const TRACE_TOLERANCE: f64 = 1e-8;
    pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidArgument("density matrix must be square".into()));
        }
        let herm = hermiticity_error(&m);
        if herm > Self::HERMITICITY_TOLERANCE {
            return Err(Error::InvalidArgument(format!("density matrix not Hermitian ({herm:.2e})")));
        }
        let tr = m.trace().re;
        if (tr - 1.0).abs() > Self::TRACE_TOLERANCE {
            return Err(Error::InvalidArgument(format!("density matrix trace {tr}")));
        }
        let rho = Self(m);
        let min = rho.min_eigenvalue();
        if min < -Self::POSITIVITY_TOLERANCE {
            return Err(Error::InvalidArgument(format!("density matrix eigenvalue {min:.2e} < 0")));
        }
        Ok(rho)
    }

    /// `|ψ⟩⟨ψ|` for a normalized `ψ`.
    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("state norm {norm} is not 1")));
        }
        Ok(Self(psi * psi.adjoint()))
    }

    /// Maximally mixed state on the given subspace indices of a
    /// `dim`-dimensional space.
    pub fn maximally_mixed_on(dim: usize, indices: &[usize]) -> Result<Self> {
        let mut m = CMatrix::zeros(dim, dim);
        for &k in indices {
            m[(k, k)] = real(1.0 / indices.len() as f64);
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigh(&self.0).0[0]
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.0[(k, k)].re).collect()
    }
}

/// Convention for the dephasing rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingRate {
    /// `1/T2` used directly.
    #[default]
    T2,
    /// Pure dephasing `1/T2 − 1/(2T1)`, clamped at zero.
    TPhi,
}

/// Operator ordering of the dissipators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipatorForm {
    #[default]
    Standard,
    /// `a ρ a† − ½{a a†, ρ}` and `a†a ρ a a† − ½{a a† a† a, ρ}`; not trace
    /// preserving, kept for comparison only.
    AsPrinted,
}

/// Coherence times per transmon in μs (infinite disables a channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub t1_us: [f64; 2],
    pub t2_us: [f64; 2],
    #[serde(default)]
    pub dephasing: DephasingRate,
    #[serde(default)]
    pub form: DissipatorForm,
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        Self::from_device(&DeviceParams::default())
    }

    pub fn from_device(p: &DeviceParams) -> Self {
        Self { t1_us: p.t1_us, t2_us: p.t2_us, dephasing: DephasingRate::T2, form: DissipatorForm::Standard }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1_us.iter().chain(&self.t2_us).any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("coherence times must be positive or infinite".into()));
        }
        Ok(())
    }

    /// Relaxation and dephasing rates in 1/ns for transmon `i`.
    pub fn rates(&self, i: usize) -> (f64, f64) {
        let relax = 1.0 / (self.t1_us[i] * 1e3);
        let t2 = 1.0 / (self.t2_us[i] * 1e3);
        let dephase = match self.dephasing {
            DephasingRate::T2 => t2,
            DephasingRate::TPhi => (t2 - relax / 2.0).max(0.0),
        };
        (relax, dephase)
    }
}

/// One dissipator `γ (L ρ R − ½{K, ρ})`.
#[derive(Debug, Clone)]
pub struct Dissipator {
    pub rate: f64,
    pub left: CMatrix,
    pub right: CMatrix,
    pub anticommutator: CMatrix,
}

/// Relaxation `a_i` at rate `1/T1_i` and dephasing `a_i†a_i` at the
/// configured dephasing rate; channels with zero rate are omitted.
pub fn collapse_operators(p: &DeviceParams, noise: &NoiseParams) -> Vec<Dissipator> {
    let l = p.levels;
    let a = lowering_operator(l);
    let ad = a.adjoint();
    let n = &ad * &a;
    let mut out = Vec::new();
    for i in 0..2 {
        let (relax, dephase) = noise.rates(i);
        let (rl, rr, rk, dl, dr, dk) = match noise.form {
            DissipatorForm::Standard => (a.clone(), ad.clone(), &ad * &a, n.clone(), n.clone(), &n * &n),
            DissipatorForm::AsPrinted => {
                let aad = &a * &ad;
                (a.clone(), ad.clone(), aad.clone(), n.clone(), aad.clone(), &aad * &n)
            }
        };
        if relax > 0.0 {
            out.push(Dissipator {
                rate: relax,
                left: on_transmon(&rl, i, l),
                right: on_transmon(&rr, i, l),
                anticommutator: on_transmon(&rk, i, l),
            });
        }
        if dephase > 0.0 {
            out.push(Dissipator {
                rate: dephase,
                left: on_transmon(&dl, i, l),
                right: on_transmon(&dr, i, l),
                anticommutator: on_transmon(&dk, i, l),
            });
        }
    }
    out
}

type Sparse = Vec<(usize, usize, C64)>;

fn sparse(m: &CMatrix) -> Sparse {
    let mut out = Vec::new();
    for r in 0..m.nrows() {
        for col in 0..m.ncols() {
            if m[(r, col)].norm() > 0.0 {
                out.push((r, col, m[(r, col)]));
            }
        }
    }
    out
}

/// Fixed-step integrator for one device and noise setting.
///
/// Within a substep of length `h` the Hamiltonian is constant, so
/// `ρ = U(s) ρ̃ U(s)†` with `U(s) = e^{−iHs}` is exact for the coherent
/// part and RK4 runs on the dissipator seen in that frame. Noise-free
/// evolution is therefore exact up to the eigendecomposition.
pub struct LindbladSolver {
    drift: CMatrix,
    gens: [CMatrix; CHANNELS],
    /// Diagonal of `Σ γ K`; every supported form has diagonal `K`.
    decay: Vec<f64>,
    jumps: Vec<(f64, Sparse, Sparse)>,
    trace_preserving: bool,
    substeps: usize,
    dim: usize,
}

impl LindbladSolver {
    /// Integrator substeps per pulse sample.
    pub const DEFAULT_SUBSTEPS: usize = 4;

    pub fn new(p: &DeviceParams, noise: &NoiseParams) -> Result<Self> {
        p.validate()?;
        noise.validate()?;
        let dim = p.dim();
        let ops = collapse_operators(p, noise);
        let mut decay = vec![0.0; dim];
        for d in &ops {
            for (k, slot) in decay.iter_mut().enumerate() {
                *slot += d.rate * d.anticommutator[(k, k)].re;
            }
            let off_diagonal =
                d.anticommutator.norm_squared() - (0..dim).map(|k| d.anticommutator[(k, k)].norm_sqr()).sum::<f64>();
            if off_diagonal > 0.0 {
                return Err(Error::InvalidArgument("dissipator anticommutator term must be diagonal".into()));
            }
        }
        let trace_preserving = ops.iter().all(|d| (&d.right * &d.left - &d.anticommutator).norm() < 1e-12);
        let jumps = ops.iter().map(|d| (d.rate, sparse(&d.left), sparse(&d.right))).collect();
        Ok(Self {
            drift: drift_hamiltonian(p),
            gens: control_generators(p),
            decay,
            jumps,
            trace_preserving,
            substeps: Self::DEFAULT_SUBSTEPS,
            dim,
        })
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    fn hamiltonian(&self, amps: [f64; CHANNELS]) -> CMatrix {
        let mut h = self.drift.clone();
        for (g, a) in self.gens.iter().zip(amps) {
            if a != 0.0 {
                h += g * real(mhz_to_angular(a));
            }
        }
        h
    }

    fn is_noiseless(&self) -> bool {
        self.jumps.is_empty() && self.decay.iter().all(|&g| g == 0.0)
    }

    /// `Σ γ L ρ R − ½{Σ γ K, ρ}`.
    fn dissipate(&self, rho: &CMatrix, out: &mut CMatrix) {
        for r in 0..self.dim {
            for col in 0..self.dim {
                out[(r, col)] = rho[(r, col)] * (-0.5 * (self.decay[r] + self.decay[col]));
            }
        }
        for (rate, left, right) in &self.jumps {
            for &(i, k, v) in left {
                for &(l, j, w) in right {
                    out[(i, j)] += v * w * rho[(k, l)] * *rate;
                }
            }
        }
    }

    /// Dissipator in the frame rotating with `u`: `u† D(u x u†) u`.
    fn dissipate_rotated(&self, u: &CMatrix, x: &CMatrix, out: &mut CMatrix, s1: &mut CMatrix, s2: &mut CMatrix) {
        u.mul_to(x, s1);
        s1.mul_to(&u.adjoint(), s2);
        self.dissipate(s2, s1);
        u.ad_mul_to(s1, s2);
        s2.mul_to(u, out);
    }

    /// Evolves `rho0` through every sample of `pulse`.
    pub fn evolve(&self, rho0: &DensityMatrix, pulse: &PulseSequence) -> Result<DensityMatrix> {
        if rho0.dim() != self.dim {
            return Err(Error::InvalidArgument(format!("state dimension {} != device {}", rho0.dim(), self.dim)));
        }
        let d = self.dim;
        let noiseless = self.is_noiseless();
        let h = pulse.dt() / self.substeps as f64;
        let mut rho = rho0.matrix().clone();
        let [mut k1, mut k2, mut k3, mut k4, mut stage, mut s1, mut s2] = std::array::from_fn(|_| CMatrix::zeros(d, d));
        let sixth = real(h / 6.0);
        for sample in 0..pulse.len() {
            let (vals, vecs) = eigh(&self.hamiltonian(pulse.sample(sample)));
            let propagator = |t: f64| {
                let phases = CVector::from_iterator(d, vals.iter().map(|&l| C64::from_polar(1.0, -l * t)));
                &vecs * CMatrix::from_diagonal(&phases) * vecs.adjoint()
            };
            if noiseless {
                let u = propagator(pulse.dt());
                rho = &u * &rho * u.adjoint();
                continue;
            }
            let half = propagator(h / 2.0);
            let full = &half * &half;
            for _ in 0..self.substeps {
                self.dissipate(&rho, &mut k1);
                set_scaled_sum(&mut stage, &rho, real(h / 2.0), &k1);
                self.dissipate_rotated(&half, &stage, &mut k2, &mut s1, &mut s2);
                set_scaled_sum(&mut stage, &rho, real(h / 2.0), &k2);
                self.dissipate_rotated(&half, &stage, &mut k3, &mut s1, &mut s2);
                set_scaled_sum(&mut stage, &rho, real(h), &k3);
                self.dissipate_rotated(&full, &stage, &mut k4, &mut s1, &mut s2);
                for (((r, a), (b, c)), e) in rho.iter_mut().zip(k1.iter()).zip(k2.iter().zip(k3.iter())).zip(k4.iter())
                {
                    *r += sixth * (a + (b + c) * 2.0 + e);
                }
                full.mul_to(&rho, &mut s1);
                s1.mul_to(&full.adjoint(), &mut rho);
            }
        }
        let drift = (rho.trace().re - 1.0).abs();
        if !drift.is_finite() || (drift > 1e-6 && self.trace_preserving) {
            return Err(Error::Integration(format!("trace drifted by {drift:.2e}")));
        }
        // Remove the anti-Hermitian roundoff accumulated over many steps.
        let symmetric = (&rho + rho.adjoint()) * real(0.5);
        if self.trace_preserving {
            DensityMatrix::new(symmetric)
        } else {
            Ok(DensityMatrix(symmetric))
        }
    }
}

/// `dst = base + s·x`.
fn set_scaled_sum(dst: &mut CMatrix, base: &CMatrix, s: C64, x: &CMatrix) {
    for ((d, b), v) in dst.iter_mut().zip(base.iter()).zip(x.iter()) {
        *d = b + s * v;
    }
}

/// Fourth-order integration of the master equation through `pulse`.
pub fn evolve_density(
    rho0: &DensityMatrix,
    pulse: &PulseSequence,
    p: &DeviceParams,
    noise: &NoiseParams,
) -> Result<DensityMatrix> {
    LindbladSolver::new(p, noise)?.evolve(rho0, pulse)
}

/// `√⟨φ|ρ|φ⟩`.
pub fn mixed_fidelity(rho: &DensityMatrix, phi: &CVector) -> f64 {
    let overlap = (phi.adjoint() * rho.matrix() * phi)[(0, 0)].re;
    overlap.max(0.0).sqrt()
}

/// Largest eigenvalue of `ρ` and its eigenvector, phase fixed so the
/// largest-magnitude component is real and positive.
pub fn dominant_component(rho: &DensityMatrix) -> (f64, CVector) {
    let (vals, vecs) = eigh(rho.matrix());
    let top = vals.len() - 1;
    let mut v: CVector = vecs.column(top).into_owned();
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(real(1.0));
    if pivot.norm() > 0.0 {
        v *= pivot.conj() / pivot.norm();
    }
    (vals[top], v)
}

/// Fidelity and energy along a device-level run, one entry per completed
/// propagator plus the initial point.
#[derive(Debug, Clone, Default)]
pub struct DeviceTrajectory {
    /// Adiabatic time `t_k` reached after each step (ns).
    pub step_times: Vec<f64>,
    /// Elapsed device time (ns).
    pub device_times: Vec<f64>,
    /// Computational block of `ρ` (trace below 1 when leaked).
    pub densities: Vec<CMatrix>,
    pub fidelities: Vec<f64>,
    pub energies: Vec<f64>,
    pub leakage: Vec<f64>,
    pub dominant_weights: Vec<f64>,
    /// `⟨v|H_T|v⟩` of the dominant component of the computational block.
    pub dominant_energies: Vec<f64>,
    /// Full device density matrix at each recorded point.
    pub states: Vec<DensityMatrix>,
}

impl DeviceTrajectory {
    pub fn len(&self) -> usize {
        self.step_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_times.is_empty()
    }

    pub fn final_fidelity(&self) -> f64 {
        *self.fidelities.last().expect("non-empty trajectory")
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("non-empty trajectory")
    }

    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ns,fidelity,energy,leakage,dominant_weight\n");
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.step_times[k], self.fidelities[k], self.energies[k], self.leakage[k], self.dominant_weights[k]
            )
            .expect("String write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    fn record(&mut self, t: f64, device_t: f64, rho: &DensityMatrix, phi: &StateVector, levels: usize) {
        let ht = build_ht().matrix();
        let block = restrict(rho.matrix(), levels);
        let block_dyn = CMatrix::from_fn(4, 4, |r, col| block[(r, col)]);
        let tr = block.trace().re;
        let energy = (block * ht).trace().re / tr;
        let (weight, v) = dominant_component(&DensityMatrix(block_dyn.clone()));
        let ht_dyn = CMatrix::from_fn(4, 4, |r, col| ht[(r, col)]);
        let dominant_energy = (v.adjoint() * ht_dyn * &v)[(0, 0)].re / v.norm_squared();
        self.step_times.push(t);
        self.device_times.push(device_t);
        self.fidelities.push(mixed_fidelity(rho, &embed_state(phi.amplitudes(), levels)));
        self.energies.push(energy);
        self.leakage.push(1.0 - tr);
        self.dominant_weights.push(weight);
        self.dominant_energies.push(dominant_energy);
        self.densities.push(block_dyn);
        self.states.push(rho.clone());
    }
}

/// Embedded ground state of `H(0)`, the starting point of every run.
pub fn initial_density(sched: &Schedule, p: &DeviceParams) -> Result<DensityMatrix> {
    let phi = spectrum_at(sched, 0.0)?.ground_state();
    DensityMatrix::pure(&embed_state(&phi, p.levels))
}

/// Runs the pulses of each propagator step in sequence. `steps[k]` holds
/// the pulses realizing the propagator of step `k + 1`; after each step
/// the fidelity against the embedded ground state of `H(t_k)` and the
/// normalized energy `tr(ρ_red H_T)/tr(ρ_red)` are recorded.
pub fn run_schedule(
    steps: &[Vec<PulseSequence>],
    sched: &Schedule,
    plan: &TrotterPlan,
    p: &DeviceParams,
    noise: &NoiseParams,
    rho0: &DensityMatrix,
) -> Result<DeviceTrajectory> {
    if steps.len() != plan.steps() {
        return Err(Error::InvalidArgument(format!("{} pulse groups for a {}-step plan", steps.len(), plan.steps())));
    }
    let solver = LindbladSolver::new(p, noise)?;
    let mut traj = DeviceTrajectory::default();
    let mut rho = rho0.clone();
    let mut device_t = 0.0;
    let ground = |t: f64| -> Result<StateVector> { StateVector::new(spectrum_at(sched, t)?.ground_state()) };
    traj.record(0.0, 0.0, &rho, &ground(0.0)?, p.levels);
    for (k, group) in steps.iter().enumerate() {
        for pulse in group {
            rho = solver.evolve(&rho, pulse)?;
            device_t += pulse.duration();
        }
        let t = plan.step_end(k + 1);
        traj.record(t, device_t, &rho, &ground(t)?, p.levels);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_unitary, random_state};
    use crate::pulse::propagate_pulse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn device() -> DeviceParams {
        DeviceParams::default()
    }

    fn random_pulse(samples: usize, amp: f64, seed: u64) -> PulseSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PulseSequence::new(8.0, std::array::from_fn(|_| (0..samples).map(|_| rng.random_range(-amp..amp)).collect()))
            .unwrap()
    }

    #[test]
    fn infinite_coherence_gives_no_dissipators() {
        assert!(collapse_operators(&device(), &NoiseParams::noiseless()).is_empty());
    }

    #[test]
    fn belem_relaxation_rate() {
        let p = device().with_calibration(&crate::transmon::Calibration::preset("belem").unwrap());
        let ops = collapse_operators(&p, &NoiseParams::from_device(&p));
        assert_eq!(ops.len(), 4);
        assert!((ops[0].rate - 1.0 / 102_600.0).abs() < 1e-18);
    }

    #[test]
    fn tphi_convention_reduces_dephasing() {
        let noise = NoiseParams {
            t1_us: [100.0; 2],
            t2_us: [100.0; 2],
            dephasing: DephasingRate::TPhi,
            ..NoiseParams::noiseless()
        };
        let (relax, dephase) = noise.rates(0);
        assert!((dephase - (1.0 / 100_000.0 - relax / 2.0)).abs() < 1e-18);
    }

    #[test]
    fn noiseless_evolution_matches_unitary_conjugation() {
        let p = device();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_state(9, &mut rng);
        let rho0 = DensityMatrix::pure(&psi).unwrap();
        let pulse = random_pulse(240, 20.0, 7);
        let rho = evolve_density(&rho0, &pulse, &p, &NoiseParams::noiseless()).unwrap();
        let u = propagate_pulse(&pulse, &p).unwrap();
        let oracle = &u * rho0.matrix() * u.adjoint();
        assert!((rho.matrix() - oracle).norm() < 1e-7);
    }

    #[test]
    fn relaxation_of_doubly_excited_state_is_product_exponential() {
        let t1 = 1.0; // μs, short so the decay is visible
        let p = DeviceParams { g_mhz: 0.0, t1_us: [t1, 2.0 * t1], ..device() };
        let noise = NoiseParams::from_device(&p);
        let mut psi = CVector::zeros(9);
        psi[4] = real(1.0);
        let rho0 = DensityMatrix::pure(&psi).unwrap();
        let tau = 300.0;
        let rho = evolve_density(&rho0, &PulseSequence::zeros(tau, 8.0).unwrap(), &p, &noise).unwrap();
        let (e1, e2) = ((-tau / 1000.0).exp(), (-tau / 2000.0).exp());
        let pops = rho.populations();
        assert!((pops[4] - e1 * e2).abs() < 1e-4);
        assert!((pops[1] - (1.0 - e1) * e2).abs() < 1e-4);
        assert!((pops[3] - e1 * (1.0 - e2)).abs() < 1e-4);
        assert!((pops[0] - (1.0 - e1) * (1.0 - e2)).abs() < 1e-4);
    }

    #[test]
    fn noisy_evolution_stays_physical() {
        let p = device();
        let noise = NoiseParams { t1_us: [0.5, 0.7], t2_us: [0.3, 0.9], ..NoiseParams::noiseless() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = haar_unitary(9, &mut rng);
        let diag = CMatrix::from_diagonal(&CVector::from_iterator(9, (0..9).map(|k| real((k + 1) as f64 / 45.0))));
        let rho0 = DensityMatrix::new(&u * diag * u.adjoint()).unwrap();
        let rho = evolve_density(&rho0, &random_pulse(160, 25.0, 1), &p, &noise).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-8);
        assert!(hermiticity_error(rho.matrix()) < 1e-10);
        assert!(rho.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn substep_refinement_converges() {
        let p = device();
        let noise = NoiseParams { t1_us: [0.2, 0.3], t2_us: [0.1, 0.4], ..NoiseParams::noiseless() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho0 = DensityMatrix::pure(&random_state(9, &mut rng)).unwrap();
        let pulse = random_pulse(200, 30.0, 4);
        let coarse = LindbladSolver::new(&p, &noise).unwrap().evolve(&rho0, &pulse).unwrap();
        let fine = LindbladSolver::new(&p, &noise).unwrap().with_substeps(32).evolve(&rho0, &pulse).unwrap();
        assert!((coarse.matrix() - fine.matrix()).norm() < 1e-8);
    }

    #[test]
    fn as_printed_form_is_not_trace_preserving() {
        let p = device();
        let noise = NoiseParams {
            t1_us: [1.0; 2],
            t2_us: [1.0; 2],
            form: DissipatorForm::AsPrinted,
            ..NoiseParams::noiseless()
        };
        let mut psi = CVector::zeros(9);
        psi[4] = real(1.0);
        let rho =
            evolve_density(&DensityMatrix::pure(&psi).unwrap(), &PulseSequence::zeros(50.0, 8.0).unwrap(), &p, &noise)
                .unwrap();
        assert!((rho.trace() - 1.0).abs() > 1e-3);
    }

    #[test]
    fn mixed_fidelity_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = random_state(9, &mut rng);
        assert!((mixed_fidelity(&DensityMatrix::pure(&phi).unwrap(), &phi) - 1.0).abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed_on(9, &[0, 1, 3, 4]).unwrap();
        let mut comp = CVector::zeros(9);
        comp[3] = real(1.0);
        assert!((mixed_fidelity(&mixed, &comp) - 0.5).abs() < 1e-15);
        // Quadratic-form oracle on a random mixed state.
        let a = haar_unitary(9, &mut rng);
        let w = CMatrix::from_diagonal(&CVector::from_iterator(9, (0..9).map(|k| real((9 - k) as f64 / 45.0))));
        let rho = DensityMatrix::new(&a * w * a.adjoint()).unwrap();
        let mut oracle = 0.0;
        for i in 0..9 {
            for j in 0..9 {
                oracle += (phi[i].conj() * rho.matrix()[(i, j)] * phi[j]).re;
            }
        }
        assert!((mixed_fidelity(&rho, &phi) - oracle.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dominant_component_of_mixture() {
        let mut a = CVector::zeros(4);
        a[0] = real(0.6);
        a[3] = real(0.8);
        let mut b = CVector::zeros(4);
        b[0] = real(0.8);
        b[3] = real(-0.6);
        let rho = DensityMatrix::new(&a * a.adjoint() * real(0.7) + &b * b.adjoint() * real(0.3)).unwrap();
        let (w, v) = dominant_component(&rho);
        assert!((w - 0.7).abs() < 1e-12);
        assert!((v - &a).norm() < 1e-12);
        let (w, _) = dominant_component(&DensityMatrix::pure(&a).unwrap());
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMatrix::identity(3, 3)).is_err());
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = real(1.5);
        m[(1, 1)] = real(-0.5);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn csv_schema() {
        let traj = DeviceTrajectory {
            step_times: vec![0.0],
            device_times: vec![0.0],
            fidelities: vec![1.0],
            energies: vec![-2.0],
            leakage: vec![0.0],
            dominant_weights: vec![1.0],
            ..Default::default()
        };
        assert_eq!(traj.to_csv(), "t_ns,fidelity,energy,leakage,dominant_weight\n0,1,-2,0,1\n");
    }
}
