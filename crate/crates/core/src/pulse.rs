//! Piecewise-constant control pulses and their GRAPE synthesis.
//!
//! Amplitudes are stored in MHz (linear frequency) per channel
//! `[ε_I¹, ε_Q¹, ε_I², ε_Q²]`; each sample holds for `1/sample_rate` ns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{gate_matrix, Circuit, Gate};
use crate::error::{Error, Result};
use crate::linalg::{eigh, phase_distance4, real, CMatrix, Mat4, C64};
use crate::optimize::{Lbfgs, StopReason};
use crate::transmon::{
    control_generators, drift_hamiltonian, embed_target, mhz_to_angular, DeviceParams, EmbeddedTarget,
};

pub const CHANNELS: usize = 4;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["eI1_MHz", "eQ1_MHz", "eI2_MHz", "eQ2_MHz"];

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    sample_rate: f64,
    channels: [Vec<f64>; CHANNELS],
}

impl PulseSequence {
    pub fn new(sample_rate: f64, channels: [Vec<f64>; CHANNELS]) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample rate {sample_rate} must be positive")));
        }
        let len = channels[0].len();
        if channels.iter().any(|ch| ch.len() != len) {
            return Err(Error::InvalidArgument("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pulse amplitude".into()));
        }
        Ok(Self { sample_rate, channels })
    }

    /// Number of samples for a pulse of `duration` ns, rounded to the
    /// nearest integer.
    pub fn sample_count(duration: f64, sample_rate: f64) -> usize {
        (duration * sample_rate).round() as usize
    }

    pub fn zeros(duration: f64, sample_rate: f64) -> Result<Self> {
        let n = Self::sample_count(duration, sample_rate);
        Self::new(sample_rate, std::array::from_fn(|_| vec![0.0; n]))
    }

    /// Builds a pulse from a flat parameter vector laid out channel-major.
    pub fn from_flat(sample_rate: f64, flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(CHANNELS) {
            return Err(Error::InvalidArgument("flat length not a multiple of 4".into()));
        }
        let n = flat.len() / CHANNELS;
        Self::new(sample_rate, std::array::from_fn(|j| flat[j * n..(j + 1) * n].to_vec()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.channels.concat()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channels(&self) -> &[Vec<f64>; CHANNELS] {
        &self.channels
    }

    pub fn sample(&self, k: usize) -> [f64; CHANNELS] {
        std::array::from_fn(|j| self.channels[j][k])
    }

    /// `sqrt(Σ_channels mean_t ε²)` in MHz.
    pub fn rms_amplitude(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let n = self.len() as f64;
        self.channels.iter().map(|ch| ch.iter().map(|v| v * v).sum::<f64>() / n).sum::<f64>().sqrt()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("t_ns,{}\n", CHANNEL_NAMES.join(","));
        for k in 0..self.len() {
            let s = self.sample(k);
            writeln!(out, "{},{},{},{},{}", k as f64 * self.dt(), s[0], s[1], s[2], s[3]).expect("String write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Parses [`PulseSequence::to_csv`] output. The sample rate is taken
    /// from the spacing of the first two rows, or `default_rate` when
    /// fewer than two rows are present.
    pub fn from_csv(text: &str, default_rate: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim().starts_with("t_ns") => {}
            _ => return Err(Error::Parse { line: 1, msg: "missing pulse CSV header".into() }),
        }
        let mut times = Vec::new();
        let mut channels: [Vec<f64>; CHANNELS] = Default::default();
        for (idx, line) in lines {
            let values: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
            if values.len() != CHANNELS + 1 {
                return Err(Error::Parse { line: idx + 1, msg: format!("expected 5 fields, got {}", values.len()) });
            }
            times.push(values[0]);
            for j in 0..CHANNELS {
                channels[j].push(values[j + 1]);
            }
        }
        let rate = if times.len() >= 2 { 1.0 / (times[1] - times[0]) } else { default_rate };
        Self::new(rate, channels)
    }

    pub fn read_csv(path: &Path, default_rate: f64) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, default_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrapeConfig {
    pub sample_rate: f64,
    pub eps_cut_mhz: f64,
    pub penalty_exponent: u32,
    pub chi: f64,
    pub max_iterations: usize,
    pub target_infidelity: f64,
    pub seed: u64,
    pub init_amplitude_mhz: f64,
    pub lbfgs_memory: usize,
    /// Fresh random starts tried after an attempt fails to converge.
    pub restarts: usize,
}

impl Default for GrapeConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8.0,
            eps_cut_mhz: 30.0,
            penalty_exponent: 3,
            chi: 1e-3,
            max_iterations: 600,
            target_infidelity: 1e-4,
            seed: 0,
            init_amplitude_mhz: 0.5,
            lbfgs_memory: 20,
            restarts: 4,
        }
    }
}

impl GrapeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_cut_mhz > 0.0) || !(self.chi >= 0.0) || self.penalty_exponent < 1 || !(self.sample_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "grape config needs eps_cut > 0, chi >= 0, penalty_exponent >= 1, sample_rate > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub iterations: usize,
    pub final_objective: f64,
    pub final_gate_infidelity: f64,
    pub rms_amplitude_mhz: f64,
    pub max_amplitude_mhz: f64,
    pub converged: bool,
    /// Some sample exceeds `α/20`, a heuristic limit on where the
    /// effective Hamiltonian stays reliable.
    pub exceeds_alpha_over_20: bool,
    pub objective_history: Vec<f64>,
}

/// Hamiltonian `H_d + Σ_j 2π·10⁻³·ε_j G_j` for one sample.
fn segment_hamiltonian(drift: &CMatrix, gens: &[CMatrix; CHANNELS], amps: [f64; CHANNELS]) -> CMatrix {
    let mut h = drift.clone();
    for (g, a) in gens.iter().zip(amps) {
        if a != 0.0 {
            h += g * real(mhz_to_angular(a));
        }
    }
    h
}

/// Time-ordered product of the segment exponentials.
pub fn propagate_pulse(pulse: &PulseSequence, p: &DeviceParams) -> Result<CMatrix> {
    if pulse.is_empty() {
        return Err(Error::InvalidArgument("empty pulse".into()));
    }
    let drift = drift_hamiltonian(p);
    let gens = control_generators(p);
    let dt = pulse.dt();
    let mut u = CMatrix::identity(p.dim(), p.dim());
    for k in 0..pulse.len() {
        let (vals, vecs) = eigh(&segment_hamiltonian(&drift, &gens, pulse.sample(k)));
        u = spectral_exp(&vals, &vecs, dt) * u;
    }
    Ok(u)
}

fn spectral_exp(vals: &[f64], vecs: &CMatrix, dt: f64) -> CMatrix {
    let mut scaled = vecs.clone();
    for (col, &e) in vals.iter().enumerate() {
        let ph = C64::from_polar(1.0, -e * dt);
        scaled.column_mut(col).iter_mut().for_each(|v| *v *= ph);
    }
    scaled * vecs.adjoint()
}

/// `|tr(W† U)| / dim`.
pub fn gate_fidelity(target: &EmbeddedTarget, realized: &CMatrix) -> f64 {
    (target.unitary.adjoint() * realized).trace().norm() / target.dim() as f64
}

/// Squared normalized RMS amplitude `ε̄²`.
fn normalized_power(pulse: &PulseSequence, cfg: &GrapeConfig) -> f64 {
    let rms = pulse.rms_amplitude() / cfg.eps_cut_mhz;
    rms * rms
}

/// `χ (exp(ε̄^{2n}) − 1)/(e − 1)`.
pub fn amplitude_penalty(pulse: &PulseSequence, cfg: &GrapeConfig) -> f64 {
    let x = normalized_power(pulse, cfg);
    cfg.chi * (x.powi(cfg.penalty_exponent as i32).exp() - 1.0) / (std::f64::consts::E - 1.0)
}

/// `Φ = 1 − F²/2 + penalty`.
pub fn objective(pulse: &PulseSequence, target: &EmbeddedTarget, p: &DeviceParams, cfg: &GrapeConfig) -> Result<f64> {
    let f = gate_fidelity(target, &propagate_pulse(pulse, p)?);
    Ok(1.0 - f * f / 2.0 + amplitude_penalty(pulse, cfg))
}

/// Objective, gate fidelity and exact gradient with respect to every
/// sample, laid out like the pulse channels.
#[derive(Debug, Clone)]
pub struct ObjectiveGradient {
    pub objective: f64,
    pub fidelity: f64,
    pub gradient: [Vec<f64>; CHANNELS],
}

/// Precomputed operators shared by every evaluation for one device.
pub struct GrapeModel {
    drift: CMatrix,
    gens: [CMatrix; CHANNELS],
    /// Nonzero entries `(row, col, value)` of each generator.
    sparse_gens: [Vec<(usize, usize, C64)>; CHANNELS],
    dim: usize,
}

impl GrapeModel {
    pub fn new(p: &DeviceParams) -> Self {
        let gens = control_generators(p);
        let sparse_gens = std::array::from_fn(|j| {
            let g: &CMatrix = &gens[j];
            let mut entries = Vec::new();
            for r in 0..g.nrows() {
                for col in 0..g.ncols() {
                    if g[(r, col)].norm() > 0.0 {
                        entries.push((r, col, g[(r, col)]));
                    }
                }
            }
            entries
        });
        Self { drift: drift_hamiltonian(p), gens, sparse_gens, dim: p.dim() }
    }

    /// Value and gradient of `Φ`. Uses the spectral (Daleckii–Krein)
    /// derivative of each segment exponential and cached forward and
    /// backward products.
    pub fn evaluate(&self, pulse: &PulseSequence, target: &EmbeddedTarget, cfg: &GrapeConfig) -> ObjectiveGradient {
        let n = pulse.len();
        let dt = pulse.dt();
        let d = self.dim;
        let scale = mhz_to_angular(1.0);

        let mut eig: Vec<(Vec<f64>, CMatrix)> = Vec::with_capacity(n);
        let mut forward: Vec<CMatrix> = Vec::with_capacity(n + 1);
        forward.push(CMatrix::identity(d, d));
        for k in 0..n {
            let (vals, vecs) = eigh(&segment_hamiltonian(&self.drift, &self.gens, pulse.sample(k)));
            let u = spectral_exp(&vals, &vecs, dt);
            forward.push(&u * &forward[k]);
            eig.push((vals, vecs));
        }
        let z = (target.unitary.adjoint() * &forward[n]).trace();
        let fidelity = z.norm() / d as f64;
        let zbar = z.conj() / z.norm().max(1e-300);

        let x = normalized_power(pulse, cfg);
        let m = cfg.penalty_exponent as i32;
        let penalty = cfg.chi * (x.powi(m).exp() - 1.0) / (std::f64::consts::E - 1.0);
        let dpen_dx = if x > 0.0 {
            cfg.chi * m as f64 * x.powi(m - 1) * x.powi(m).exp() / (std::f64::consts::E - 1.0)
        } else if m == 1 {
            cfg.chi / (std::f64::consts::E - 1.0)
        } else {
            0.0
        };
        let dx_deps = 2.0 / (n as f64 * cfg.eps_cut_mhz * cfg.eps_cut_mhz);

        let mut gradient: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| vec![0.0; n]);
        let mut back = target.unitary.adjoint();
        let mut gamma = CMatrix::zeros(d, d);
        for k in (0..n).rev() {
            let (vals, vecs) = &eig[k];
            let phases: Vec<C64> = vals.iter().map(|&e| C64::from_polar(1.0, -e * dt)).collect();
            for a in 0..d {
                for b in 0..d {
                    let diff = vals[a] - vals[b];
                    gamma[(a, b)] =
                        if diff.abs() > 1e-9 { (phases[a] - phases[b]) / diff } else { phases[a] * C64::new(0.0, -dt) };
                }
            }
            let back_v = &back * vecs;
            let x_mat = vecs.adjoint() * &forward[k] * &back_v;
            // Z = V (X ∘ Γᵀ) V†, so dz/dε_j = scale · tr(G_j Z).
            let weighted = CMatrix::from_fn(d, d, |a, b| x_mat[(a, b)] * gamma[(b, a)]);
            let zmat = vecs * weighted * vecs.adjoint();
            let s = pulse.sample(k);
            for j in 0..CHANNELS {
                let dz: C64 = self.sparse_gens[j].iter().map(|&(r, col, g)| g * zmat[(col, r)]).sum::<C64>() * scale;
                let df = (zbar * dz).re / d as f64;
                gradient[j][k] = -fidelity * df + dpen_dx * dx_deps * s[j];
            }
            let mut scaled = back_v;
            for (col, ph) in phases.iter().enumerate() {
                scaled.column_mut(col).iter_mut().for_each(|v| *v *= ph);
            }
            back = scaled * vecs.adjoint();
        }
        ObjectiveGradient { objective: 1.0 - fidelity * fidelity / 2.0 + penalty, fidelity, gradient }
    }
}

/// Exact gradient of [`objective`] with respect to every sample.
pub fn objective_gradient(
    pulse: &PulseSequence,
    target: &EmbeddedTarget,
    p: &DeviceParams,
    cfg: &GrapeConfig,
) -> ObjectiveGradient {
    GrapeModel::new(p).evaluate(pulse, target, cfg)
}

/// Seeded uniform noise in `±init_amplitude`, smoothed by a centered
/// 3-sample moving average.
pub fn initial_pulse(samples: usize, cfg: &GrapeConfig) -> Result<PulseSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.init_amplitude_mhz;
    let channels = std::array::from_fn(|_| {
        let raw: Vec<f64> = (0..samples).map(|_| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 }).collect();
        (0..samples)
            .map(|k| {
                let lo = k.saturating_sub(1);
                let hi = (k + 1).min(samples - 1);
                raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect()
    });
    PulseSequence::new(cfg.sample_rate, channels)
}

/// GRAPE synthesis of a pulse of duration `tau` realizing `target`.
///
/// Each attempt runs L-BFGS for at most `max_iterations` from a seeded
/// random start; up to `restarts` further attempts with derived seeds
/// follow a failed one, and the best attempt is returned. Non-convergence
/// is reported through `converged = false`.
pub fn optimize(
    target: &EmbeddedTarget,
    tau: f64,
    p: &DeviceParams,
    cfg: &GrapeConfig,
) -> Result<(PulseSequence, OptimizationReport)> {
    cfg.validate()?;
    let samples = PulseSequence::sample_count(tau, cfg.sample_rate);
    if samples < 8 {
        return Err(Error::InvalidArgument(format!("pulse of {tau} ns has fewer than 8 samples")));
    }
    let model = GrapeModel::new(p);
    let mut best: Option<(PulseSequence, OptimizationReport)> = None;
    let mut iterations = 0;
    for attempt in 0..=cfg.restarts {
        let seed = cfg.seed.wrapping_add((attempt as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (pulse, report) = attempt_optimize(&model, target, samples, p, &GrapeConfig { seed, ..cfg.clone() })?;
        iterations += report.iterations;
        let better = best.as_ref().is_none_or(|(_, b)| report.final_gate_infidelity < b.final_gate_infidelity);
        let done = report.converged;
        if better {
            best = Some((pulse, report));
        }
        if done {
            break;
        }
    }
    let (pulse, mut report) = best.expect("at least one attempt");
    report.iterations = iterations;
    Ok((pulse, report))
}

fn attempt_optimize(
    model: &GrapeModel,
    target: &EmbeddedTarget,
    samples: usize,
    p: &DeviceParams,
    cfg: &GrapeConfig,
) -> Result<(PulseSequence, OptimizationReport)> {
    let x0 = initial_pulse(samples, cfg)?.to_flat();
    let rate = cfg.sample_rate;
    // Fidelities of recent evaluations, so the acceptance test does not
    // re-propagate the accepted iterate.
    let recent: std::cell::RefCell<Vec<(Vec<f64>, f64)>> = Default::default();
    let fg = |x: &[f64]| {
        let pulse = PulseSequence::from_flat(rate, x).expect("flat layout");
        let eval = model.evaluate(&pulse, target, cfg);
        let mut recent = recent.borrow_mut();
        if recent.len() == 8 {
            recent.remove(0);
        }
        recent.push((x.to_vec(), eval.fidelity));
        (eval.objective, eval.gradient.concat())
    };
    let fidelity_at = |x: &[f64]| {
        let known = recent.borrow().iter().rev().find(|(y, _)| y.as_slice() == x).map(|(_, f)| *f);
        known.unwrap_or_else(|| {
            let pulse = PulseSequence::from_flat(rate, x).expect("flat layout");
            gate_fidelity(target, &propagate_with(model, &pulse))
        })
    };
    let opt = Lbfgs {
        memory: cfg.lbfgs_memory,
        max_iterations: cfg.max_iterations,
        gradient_tolerance: 1e-14,
        stall_iterations: 20,
    };
    let threshold = cfg.target_infidelity;
    let minimum = opt.minimize(x0, fg, |x, _| 1.0 - fidelity_at(x) <= threshold);
    let pulse = PulseSequence::from_flat(rate, &minimum.x)?;
    let fidelity = fidelity_at(&minimum.x);
    let alpha_limit = p.alpha_mhz / 20.0;
    let report = OptimizationReport {
        iterations: minimum.iterations,
        final_objective: minimum.value,
        final_gate_infidelity: (1.0 - fidelity).clamp(0.0, 1.0),
        rms_amplitude_mhz: pulse.rms_amplitude(),
        max_amplitude_mhz: pulse.max_amplitude(),
        converged: minimum.stop == StopReason::Accepted || 1.0 - fidelity <= threshold,
        exceeds_alpha_over_20: pulse.max_amplitude() > alpha_limit,
        objective_history: minimum.history,
    };
    Ok((pulse, report))
}

fn propagate_with(model: &GrapeModel, pulse: &PulseSequence) -> CMatrix {
    let dt = pulse.dt();
    let mut u = CMatrix::identity(model.dim, model.dim);
    for k in 0..pulse.len() {
        let (vals, vecs) = eigh(&segment_hamiltonian(&model.drift, &model.gens, pulse.sample(k)));
        u = spectral_exp(&vals, &vecs, dt) * u;
    }
    u
}

/// Gate-kind key used in per-gate duration tables: `U3`, `CNOT`, `RXX`
/// or `U4` (an opaque two-qubit gate).
pub fn gate_kind(g: &Gate) -> &'static str {
    match g {
        Gate::U3(_) => "U3",
        Gate::Cnot { .. } => "CNOT",
        Gate::Rxx(_) => "RXX",
        Gate::Opaque(_) => "U4",
    }
}

/// One synthesized gate pulse.
#[derive(Debug, Clone)]
pub struct ScheduledPulse {
    pub pulse: PulseSequence,
    pub report: OptimizationReport,
}

/// Pulses keyed by `(gate matrix, τ)`; matrices closer than `1e-12` up to
/// global phase share an entry.
#[derive(Debug, Default, Clone)]
pub struct PulseCache {
    entries: Vec<(Mat4, f64, ScheduledPulse)>,
}

impl PulseCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, u: &Mat4, tau: f64) -> Option<&ScheduledPulse> {
        self.entries.iter().find(|(m, t, _)| *t == tau && phase_distance4(m, u) < 1e-12).map(|(_, _, s)| s)
    }

    pub fn insert(&mut self, u: Mat4, tau: f64, s: ScheduledPulse) {
        if self.get(&u, tau).is_none() {
            self.entries.push((u, tau, s));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One optimized pulse per gate of `c`, in circuit order. Distinct gates
/// are optimized concurrently; repeated gates reuse the cached pulse.
pub fn schedule_for_circuit(
    c: &Circuit,
    per_gate_tau: &BTreeMap<String, f64>,
    p: &DeviceParams,
    cfg: &GrapeConfig,
    cache: &mut PulseCache,
) -> Result<Vec<ScheduledPulse>> {
    let mut jobs: Vec<(Mat4, f64)> = Vec::new();
    let mut plan = Vec::with_capacity(c.len());
    for g in c.gates() {
        let kind = gate_kind(g);
        let tau = *per_gate_tau
            .get(kind)
            .ok_or_else(|| Error::Config(format!("no pulse duration configured for gate kind {kind}")))?;
        let u = gate_matrix(g);
        if cache.get(&u, tau).is_none() && !jobs.iter().any(|(m, t)| *t == tau && phase_distance4(m, &u) < 1e-12) {
            jobs.push((u, tau));
        }
        plan.push((u, tau));
    }
    let results: Vec<Result<(Mat4, f64, ScheduledPulse)>> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(idx, (u, tau))| {
            let target = embed_target(&u, p)?;
            let job_cfg = GrapeConfig { seed: cfg.seed.wrapping_add(idx as u64), ..cfg.clone() };
            let (pulse, report) = optimize(&target, tau, p, &job_cfg)?;
            Ok((u, tau, ScheduledPulse { pulse, report }))
        })
        .collect();
    for r in results {
        let (u, tau, s) = r?;
        cache.insert(u, tau, s);
    }
    Ok(plan.iter().map(|(u, tau)| cache.get(u, *tau).expect("every gate was synthesized").clone()).collect())
}

/// Pulses for a sequence of step circuits, grouped per step. All distinct
/// gates across the steps are synthesized in one concurrent batch.
pub fn schedule_steps(
    steps: &[Circuit],
    per_gate_tau: &BTreeMap<String, f64>,
    p: &DeviceParams,
    cfg: &GrapeConfig,
    cache: &mut PulseCache,
) -> Result<Vec<Vec<ScheduledPulse>>> {
    let mut all = Circuit::new();
    for c in steps {
        all.extend(c.clone());
    }
    let mut flat = schedule_for_circuit(&all, per_gate_tau, p, cfg, cache)?.into_iter();
    Ok(steps.iter().map(|c| flat.by_ref().take(c.len()).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_hermitian, unitarity_error};

    fn device(levels: usize) -> DeviceParams {
        DeviceParams { levels, ..DeviceParams::default() }
    }

    fn random_pulse(samples: usize, amp: f64, seed: u64) -> PulseSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PulseSequence::new(8.0, std::array::from_fn(|_| (0..samples).map(|_| rng.random_range(-amp..amp)).collect()))
            .unwrap()
    }

    #[test]
    fn zero_pulse_gives_drift_evolution() {
        let p = device(3);
        let pulse = PulseSequence::zeros(10.0, 8.0).unwrap();
        let u = propagate_pulse(&pulse, &p).unwrap();
        let oracle = expm_hermitian(&drift_hamiltonian(&p), 10.0);
        assert!((u - oracle).norm() < 1e-11);
    }

    #[test]
    fn uncoupled_zero_pulse_gives_closed_form_phases() {
        let p = DeviceParams { g_mhz: 0.0, ..device(3) };
        let tau = 7.0;
        let u = propagate_pulse(&PulseSequence::zeros(tau, 8.0).unwrap(), &p).unwrap();
        for idx in 0..9 {
            let (n1, n2) = ((idx / 3) as f64, (idx % 3) as f64);
            let phase = mhz_to_angular(200.0) * (n1 * n1 + n2 * n2) * tau;
            assert!((u[(idx, idx)] - C64::from_polar(1.0, phase)).norm() < 1e-12);
        }
    }

    #[test]
    fn random_pulse_propagator_is_unitary() {
        let u = propagate_pulse(&random_pulse(20_000, 20.0, 1), &device(3)).unwrap();
        assert!(unitarity_error(&u) < 1e-10);
    }

    #[test]
    fn fidelity_is_phase_invariant_and_detects_swaps() {
        let p = device(3);
        let target = embed_target(&Mat4::identity(), &p).unwrap();
        assert!((gate_fidelity(&target, &target.unitary) - 1.0).abs() < 1e-15);
        let phased = &target.unitary * C64::from_polar(1.0, 0.7);
        assert!((gate_fidelity(&target, &phased) - 1.0).abs() < 1e-15);
        let mut swapped = target.unitary.clone();
        swapped.swap_columns(0, 1);
        // Oracle: two of nine diagonal ones removed.
        assert!((gate_fidelity(&target, &swapped) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn penalty_values() {
        let cfg = GrapeConfig::default();
        assert_eq!(amplitude_penalty(&PulseSequence::zeros(2.0, 8.0).unwrap(), &cfg), 0.0);
        // RMS equal to the cutoff: four channels at 15 MHz give sqrt(4·225) = 30.
        let at_cut = PulseSequence::new(8.0, std::array::from_fn(|_| vec![15.0; 16])).unwrap();
        assert!((amplitude_penalty(&at_cut, &cfg) - cfg.chi).abs() < 1e-15);
        let eps = 6.0;
        let constant = PulseSequence::new(8.0, std::array::from_fn(|_| vec![eps; 16])).unwrap();
        let bar: f64 = eps * 2.0 / 30.0;
        let oracle = 1e-3 * ((bar.powi(6)).exp() - 1.0) / (std::f64::consts::E - 1.0);
        assert!((amplitude_penalty(&constant, &cfg) - oracle).abs() < 1e-18);
    }

    #[test]
    fn objective_composes_fidelity_and_penalty() {
        let p = device(3);
        let cfg = GrapeConfig::default();
        let target = embed_target(&crate::circuits::cnot_matrix(0, 1), &p).unwrap();
        let pulse = random_pulse(80, 25.0, 4);
        let f = gate_fidelity(&target, &propagate_pulse(&pulse, &p).unwrap());
        let oracle = 1.0 - f * f / 2.0 + amplitude_penalty(&pulse, &cfg);
        let direct = objective(&pulse, &target, &p, &cfg).unwrap();
        assert!((direct - oracle).abs() < 1e-14);
        let eval = objective_gradient(&pulse, &target, &p, &cfg);
        assert!((eval.objective - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = device(3);
        let cfg = GrapeConfig { chi: 0.5, ..GrapeConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = embed_target(&crate::linalg::to_mat4(&crate::linalg::haar_unitary(4, &mut rng)), &p).unwrap();
        let pulse = random_pulse(64, 30.0, 2);
        let grad = objective_gradient(&pulse, &target, &p, &cfg).gradient;
        let h = 1e-4;
        for (j, k) in [(0, 0), (1, 17), (2, 40), (3, 63)] {
            let mut plus = pulse.clone();
            plus.channels[j][k] += h;
            let mut minus = pulse.clone();
            minus.channels[j][k] -= h;
            let fd = (objective(&plus, &target, &p, &cfg).unwrap() - objective(&minus, &target, &p, &cfg).unwrap())
                / (2.0 * h);
            assert!((fd - grad[j][k]).abs() <= 1e-6 * fd.abs().max(1e-6), "{j} {k}: {fd} vs {}", grad[j][k]);
        }
    }

    #[test]
    fn zero_pulse_is_stationary_for_penalty() {
        let p = device(2);
        let cfg = GrapeConfig { chi: 1.0, ..GrapeConfig::default() };
        let pulse = PulseSequence::zeros(4.0, 8.0).unwrap();
        let drift_target = EmbeddedTarget {
            unitary: propagate_pulse(&pulse, &p).unwrap(),
            computational_indices: crate::transmon::computational_indices(2),
        };
        let grad = objective_gradient(&pulse, &drift_target, &p, &cfg).gradient;
        assert!(grad.iter().flatten().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn drift_matching_target_converges_quickly() {
        let p = device(3);
        let tau = 16.0;
        let cfg = GrapeConfig { init_amplitude_mhz: 2.0, ..GrapeConfig::default() };
        let target = EmbeddedTarget {
            unitary: propagate_pulse(&PulseSequence::zeros(tau, 8.0).unwrap(), &p).unwrap(),
            computational_indices: crate::transmon::computational_indices(3),
        };
        let (_, report) = optimize(&target, tau, &p, &cfg).unwrap();
        assert!(report.converged);
        assert!(report.final_gate_infidelity < 1e-3);
    }

    #[test]
    fn optimization_is_deterministic() {
        let p = device(2);
        let cfg = GrapeConfig { max_iterations: 15, ..GrapeConfig::default() };
        let target = embed_target(&crate::circuits::cnot_matrix(0, 1), &p).unwrap();
        let (a, _) = optimize(&target, 5.0, &p, &cfg).unwrap();
        let (b, _) = optimize(&target, 5.0, &p, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_roundtrip() {
        let pulse = random_pulse(24, 3.0, 5);
        let text = pulse.to_csv();
        assert!(text.starts_with("t_ns,eI1_MHz,eQ1_MHz,eI2_MHz,eQ2_MHz\n"));
        assert_eq!(text.lines().count(), 25);
        let back = PulseSequence::from_csv(&text, 8.0).unwrap();
        assert_eq!(back.channels(), pulse.channels());
        assert!((back.sample_rate() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_requires_durations_and_handles_empty_circuits() {
        let p = device(2);
        let cfg = GrapeConfig { max_iterations: 2, ..GrapeConfig::default() };
        let mut cache = PulseCache::new();
        let empty = schedule_for_circuit(&Circuit::new(), &BTreeMap::new(), &p, &cfg, &mut cache).unwrap();
        assert!(empty.is_empty());
        let mut c = Circuit::new();
        c.push(Gate::cnot()).unwrap();
        let err = schedule_for_circuit(&c, &BTreeMap::new(), &p, &cfg, &mut cache).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn repeated_gates_share_one_optimization() {
        let p = device(2);
        let cfg = GrapeConfig { max_iterations: 3, ..GrapeConfig::default() };
        let mut c = Circuit::new();
        for _ in 0..3 {
            c.push(Gate::cnot()).unwrap();
        }
        let taus = BTreeMap::from([("CNOT".to_string(), 2.0)]);
        let mut cache = PulseCache::new();
        let pulses = schedule_for_circuit(&c, &taus, &p, &cfg, &mut cache).unwrap();
        assert_eq!(pulses.len(), 3);
        assert_eq!(cache.len(), 1);
        assert_eq!(pulses[0].pulse.len(), 16);
    }
}
