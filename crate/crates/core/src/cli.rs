//! Config-driven experiment runner behind the `adia` binary.
//!
//! Every command reads a TOML [`ExperimentConfig`], writes CSV and JSON
//! artifacts into the output directory and finishes with `manifest.json`
//! listing them. Exit codes: 0 success, 2 configuration error, 3
//! numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuits::{probe_unitary, step_circuits, StepForm};
use crate::error::{Error, Result};
use crate::measurement::{
    error_vs_shots, log_shot_grid, seed_stream, tomography_step, uniform_state, Measurable, ReadoutModel, StepEstimate,
};
use crate::open_system::{
    initial_density, mixed_fidelity, run_schedule, DensityMatrix, DephasingRate, DeviceTrajectory, DissipatorForm,
    NoiseParams,
};
use crate::propagation::{
    default_fine_step, evolve_exact, expectation, initial_state, trotter_evolve, NodeRule, TrotterPlan,
};
use crate::pulse::{schedule_steps, GrapeConfig, PulseCache, PulseSequence, ScheduledPulse};
use crate::spin::{build_ht, Interpolation, Schedule};
use crate::transmon::{embed_state, Calibration, DeviceParams};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numerical failures, including GRAPE non-convergence.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub problem: ProblemConfig,
    pub device: DeviceConfig,
    pub grape: GrapeConfig,
    pub pulses: PulseConfig,
    pub noise: NoiseConfig,
    pub sampling: SamplingConfig,
    pub device_sim: DeviceSimConfig,
    pub tomography: TomographyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            problem: ProblemConfig::default(),
            device: DeviceConfig::default(),
            grape: GrapeConfig::default(),
            pulses: PulseConfig::default(),
            noise: NoiseConfig::default(),
            sampling: SamplingConfig::default(),
            device_sim: DeviceSimConfig::default(),
            tomography: TomographyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub total_time: f64,
    pub steps: usize,
    pub node_rule: NodeRule,
    pub interpolation: Interpolation,
    /// Total times for the continuous sweep; empty means `[total_time]`.
    pub sweep_total_times: Vec<f64>,
    /// Step counts for the Trotter sweep; empty means `[steps]`.
    pub sweep_steps: Vec<usize>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            total_time: 20.0,
            steps: 20,
            node_rule: NodeRule::Midpoint,
            interpolation: Interpolation::CosineSquared,
            sweep_total_times: Vec::new(),
            sweep_steps: Vec::new(),
        }
    }
}

impl ProblemConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.total_time, self.interpolation)
    }

    pub fn plan(&self) -> Result<TrotterPlan> {
        TrotterPlan::new(self.steps, self.total_time, self.node_rule)
    }
}

/// Calibration entry of the `[device.presets]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetEntry {
    pub t1_us: [f64; 2],
    pub t2_us: [f64; 2],
    pub tau_cnot_ns: f64,
    pub tau_u_ns: f64,
    /// Readout model used for this device in sampling studies.
    #[serde(default)]
    pub readout: Option<ReadoutModel>,
}

impl PresetEntry {
    fn from_calibration(c: &Calibration) -> Self {
        Self { t1_us: c.t1_us, t2_us: c.t2_us, tau_cnot_ns: c.tau_cnot_ns, tau_u_ns: c.tau_u_ns, readout: None }
    }

    fn calibration(&self, name: &str) -> Calibration {
        Calibration {
            name: name.into(),
            t1_us: self.t1_us,
            t2_us: self.t2_us,
            tau_cnot_ns: self.tau_cnot_ns,
            tau_u_ns: self.tau_u_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub alpha_mhz: f64,
    pub g_mhz: f64,
    pub levels: usize,
    /// Presets simulated by `device-sim` and sampled by `error-study`.
    pub runs: Vec<String>,
    /// Entries here override or extend the built-in calibration table.
    pub presets: BTreeMap<String, PresetEntry>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let base = DeviceParams::default();
        Self {
            alpha_mhz: base.alpha_mhz,
            g_mhz: base.g_mhz,
            levels: base.levels,
            runs: vec!["belem".into()],
            presets: builtin_presets(),
        }
    }
}

fn builtin_presets() -> BTreeMap<String, PresetEntry> {
    Calibration::presets().iter().map(|c| (c.name.clone(), PresetEntry::from_calibration(c))).collect()
}

impl DeviceConfig {
    /// Noise-free device parameters.
    pub fn params(&self) -> DeviceParams {
        DeviceParams { alpha_mhz: self.alpha_mhz, g_mhz: self.g_mhz, levels: self.levels, ..DeviceParams::default() }
    }

    pub fn preset(&self, name: &str) -> Result<PresetEntry> {
        self.presets
            .get(name)
            .cloned()
            .or_else(|| builtin_presets().remove(name))
            .ok_or_else(|| Error::Config(format!("unknown device preset `{name}`")))
    }

    pub fn calibration(&self, name: &str) -> Result<Calibration> {
        Ok(self.preset(name)?.calibration(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseConfig {
    /// Per-propagator durations synthesized by `grape-synth` (ns).
    pub taus: Vec<f64>,
    /// Directory of a previous `grape-synth` run whose pulses are reused.
    pub dir: Option<PathBuf>,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self { taus: vec![120.0], dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub dephasing: DephasingRate,
    pub form: DissipatorForm,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: true, dephasing: DephasingRate::T2, form: DissipatorForm::Standard }
    }
}

impl NoiseConfig {
    pub fn params(&self, cal: &Calibration) -> NoiseParams {
        let (t1_us, t2_us) =
            if self.enabled { (cal.t1_us, cal.t2_us) } else { ([f64::INFINITY; 2], [f64::INFINITY; 2]) };
        NoiseParams { t1_us, t2_us, dephasing: self.dephasing, form: self.form }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub shots: u64,
    /// Number of seeds averaged per shot count in `error-study`.
    pub seeds: usize,
    /// Readout model for presets without their own.
    pub readout: ReadoutModel,
    pub shot_grid: Vec<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            shots: crate::measurement::DEFAULT_SHOTS,
            seeds: 20,
            readout: ReadoutModel { p01: [0.06; 2], p10: [0.009; 2] },
            shot_grid: log_shot_grid(0, 6, 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSimConfig {
    /// `"<τ>"` for one pulse of τ ns per propagator, `"tau_u"` for the
    /// preset's τ_U, `"merged"` for the merged-U3 decomposition.
    pub modes: Vec<String>,
}

impl Default for DeviceSimConfig {
    fn default() -> Self {
        Self { modes: ["120", "400", "tau_u", "merged"].map(String::from).to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    #[default]
    Ideal,
    /// Device-level run of the first preset in `device.runs`.
    Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    pub source: TrajectorySource,
    /// Device mode used when `source = "device"`.
    pub mode: String,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self { source: TrajectorySource::Ideal, mode: "120".into() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every reference and range; failures are configuration errors.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.problem.schedule().map_err(cfg_err)?;
        self.problem.plan().map_err(cfg_err)?;
        if self.problem.sweep_total_times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config("sweep_total_times must be positive".into()));
        }
        if self.problem.sweep_steps.contains(&0) {
            return Err(Error::Config("sweep_steps must be positive".into()));
        }
        self.device.params().validate().map_err(cfg_err)?;
        for name in &self.device.runs {
            self.device.preset(name)?;
        }
        for (name, entry) in &self.device.presets {
            entry.calibration(name).validate().map_err(|e| Error::Config(format!("preset `{name}`: {e}")))?;
            if let Some(r) = &entry.readout {
                r.validate().map_err(cfg_err)?;
            }
        }
        self.grape.validate().map_err(cfg_err)?;
        if self.pulses.taus.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config("pulse durations must be positive".into()));
        }
        for m in &self.device_sim.modes {
            m.parse::<DeviceMode>()?;
        }
        self.tomography.mode.parse::<DeviceMode>()?;
        if self.sampling.shots == 0 {
            return Err(Error::Config("sampling.shots must be at least 1".into()));
        }
        if self.sampling.seeds == 0 || self.sampling.shot_grid.contains(&0) {
            return Err(Error::Config("sampling needs at least one seed and positive shot counts".into()));
        }
        self.sampling.readout.validate().map_err(cfg_err)?;
        Ok(())
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        let times = self.t1_us.iter().chain(&self.t2_us).all(|&t| t > 0.0);
        if !times || !(self.tau_cnot_ns > 0.0) || !(self.tau_u_ns > 0.0) {
            return Err(Error::InvalidArgument("calibration times must be positive".into()));
        }
        Ok(())
    }

    /// Duration of every gate of a merged propagator (three CNOTs and four
    /// merged local gates), chosen so the seven add up to τ_U.
    pub fn merged_gate_tau(&self) -> f64 {
        self.tau_u_ns / 7.0
    }
}

/// How each propagator is realized on the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceMode {
    /// One pulse of the given duration per propagator.
    Customized(f64),
    /// One pulse of the preset's τ_U per propagator.
    TauU,
    /// Three CNOTs and four merged local gates per propagator.
    Merged,
}

impl FromStr for DeviceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau_u" => Ok(Self::TauU),
            "merged" => Ok(Self::Merged),
            other => match other.parse::<f64>() {
                Ok(t) if t > 0.0 && t.is_finite() => Ok(Self::Customized(t)),
                _ => Err(Error::Config(format!("unknown device mode `{other}`"))),
            },
        }
    }
}

impl DeviceMode {
    pub fn label(&self) -> String {
        match self {
            Self::Customized(t) => format!("tau{t}"),
            Self::TauU => "tau_u".into(),
            Self::Merged => "merged".into(),
        }
    }

    /// Step form and per-gate-kind durations for a device.
    pub fn gate_durations(&self, cal: &Calibration) -> Result<(StepForm, BTreeMap<String, f64>)> {
        let single = |t: f64| (StepForm::Propagator, BTreeMap::from([("U4".to_string(), t)]));
        match *self {
            Self::Customized(t) => Ok(single(t)),
            Self::TauU => Ok(single(cal.tau_u_ns)),
            Self::Merged => {
                let tau = cal.merged_gate_tau();
                Ok((StepForm::Merged, BTreeMap::from([("CNOT".to_string(), tau), ("U4".to_string(), tau)])))
            }
        }
    }
}

/// Provenance of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Paths relative to the output directory, in emission order.
    pub files: Vec<String>,
}

/// Single writer for every artifact of a run.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, contents)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn finish(self, command: &str, config_text: &str, seed: u64) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.into(),
            config_sha256: hex_digest(config_text.as_bytes()),
            seed,
            versions: BTreeMap::from([("adia".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
            files: self.files,
        };
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").expect("String write");
        s
    })
}

/// A loaded config together with the command-line overrides.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    config_text: String,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    pub fn new(config_text: &str, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let mut config = ExperimentConfig::from_toml(config_text)?;
        if let Some(s) = seed {
            config.seed = s;
            config.grape.seed = s;
        }
        let out = out.unwrap_or_else(|| config.output_dir.clone());
        Ok(Self { seed: config.seed, config, config_text: config_text.into(), out })
    }

    fn output(&self) -> Result<Output> {
        Output::new(&self.out)
    }
}

fn csv_number(x: f64) -> String {
    format!("{x}")
}

/// Continuous evolution for each total time and Trotter evolution for
/// each step count.
pub fn cmd_exact_evolve(run: &Run) -> Result<RunManifest> {
    let cfg = &run.config.problem;
    let totals = if cfg.sweep_total_times.is_empty() { vec![cfg.total_time] } else { cfg.sweep_total_times.clone() };
    let steps = if cfg.sweep_steps.is_empty() { vec![cfg.steps] } else { cfg.sweep_steps.clone() };
    let continuous = totals
        .par_iter()
        .map(|&t| {
            let sched = Schedule::new(t, cfg.interpolation)?;
            evolve_exact(&sched, &initial_state(&sched), default_fine_step(&sched)).map(|traj| (t, traj))
        })
        .collect::<Result<Vec<_>>>()?;
    let sched = cfg.schedule()?;
    let trotter = steps
        .par_iter()
        .map(|&n| {
            let plan = TrotterPlan::new(n, cfg.total_time, cfg.node_rule)?;
            trotter_evolve(&sched, &plan, &initial_state(&sched)).map(|traj| (n, traj))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = run.output()?;
    let mut summary = String::from("kind,total_time_ns,steps,final_fidelity,final_infidelity,final_energy\n");
    for (t, traj) in &continuous {
        out.write(&format!("exact_T{}.csv", csv_number(*t)), &traj.to_csv())?;
        let f = traj.final_fidelity();
        writeln!(summary, "continuous,{},,{f},{},{}", csv_number(*t), 1.0 - f, traj.final_energy())
            .expect("String write");
    }
    for (n, traj) in &trotter {
        out.write(&format!("trotter_n{n}.csv"), &traj.to_csv())?;
        let f = traj.final_fidelity();
        writeln!(summary, "trotter,{},{n},{f},{},{}", csv_number(cfg.total_time), 1.0 - f, traj.final_energy())
            .expect("String write");
    }
    out.write("summary.csv", &summary)?;
    out.finish("exact-evolve", &run.config_text, run.seed)
}

fn pulse_path(tau: f64, step: usize) -> String {
    format!("pulses/tau{}/step{step:02}.csv", csv_number(tau))
}

#[derive(Serialize)]
struct GrapeStepRecord {
    step: usize,
    gate_infidelity: f64,
    rms_amplitude_mhz: f64,
    max_amplitude_mhz: f64,
    iterations: usize,
    converged: bool,
    exceeds_alpha_over_20: bool,
}

#[derive(Serialize)]
struct GrapeTauRecord {
    tau_ns: f64,
    mean_rms_amplitude_mhz: f64,
    max_gate_infidelity: f64,
    steps: Vec<GrapeStepRecord>,
}

/// Synthesizes every propagator at each configured duration.
pub fn cmd_grape_synth(run: &Run) -> Result<RunManifest> {
    let cfg = &run.config;
    let sched = cfg.problem.schedule()?;
    let plan = cfg.problem.plan()?;
    let p = cfg.device.params();
    let circuits = step_circuits(&sched, &plan, StepForm::Propagator)?;
    let mut cache = PulseCache::new();
    let mut out = run.output()?;
    let mut records = Vec::new();
    let mut summary = String::from(
        "tau_ns,step,gate_infidelity,rms_amplitude_mhz,max_amplitude_mhz,iterations,converged,exceeds_alpha_over_20\n",
    );
    let mut failures = Vec::new();
    for &tau in &cfg.pulses.taus {
        eprintln!("grape-synth: {} propagators at {tau} ns", circuits.len());
        let taus = BTreeMap::from([("U4".to_string(), tau)]);
        let steps = schedule_steps(&circuits, &taus, &p, &cfg.grape, &mut cache)?;
        let mut rows = Vec::new();
        for (k, group) in steps.iter().enumerate() {
            let s = &group[0];
            let r = &s.report;
            out.write(&pulse_path(tau, k + 1), &s.pulse.to_csv())?;
            writeln!(
                summary,
                "{},{},{},{},{},{},{},{}",
                csv_number(tau),
                k + 1,
                r.final_gate_infidelity,
                r.rms_amplitude_mhz,
                r.max_amplitude_mhz,
                r.iterations,
                r.converged,
                r.exceeds_alpha_over_20
            )
            .expect("String write");
            if !r.converged {
                failures.push(format!("τ={tau} step {}", k + 1));
            }
            rows.push(GrapeStepRecord {
                step: k + 1,
                gate_infidelity: r.final_gate_infidelity,
                rms_amplitude_mhz: r.rms_amplitude_mhz,
                max_amplitude_mhz: r.max_amplitude_mhz,
                iterations: r.iterations,
                converged: r.converged,
                exceeds_alpha_over_20: r.exceeds_alpha_over_20,
            });
        }
        let pulses: Vec<&PulseSequence> = steps.iter().map(|g| &g[0].pulse).collect();
        records.push(GrapeTauRecord {
            tau_ns: tau,
            mean_rms_amplitude_mhz: pulses.iter().map(|p| p.rms_amplitude()).sum::<f64>() / pulses.len() as f64,
            max_gate_infidelity: rows.iter().map(|r| r.gate_infidelity).fold(0.0, f64::max),
            steps: rows,
        });
    }
    out.write("grape_summary.csv", &summary)?;
    out.write("grape_report.json", &(serde_json::to_string_pretty(&records)? + "\n"))?;
    let manifest = out.finish("grape-synth", &run.config_text, run.seed)?;
    if failures.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Integration(format!("GRAPE did not converge for {}", failures.join(", "))))
    }
}

/// Pulses of a previous `grape-synth` run, if all steps are present.
fn load_pulses(dir: &Path, tau: f64, steps: usize, sample_rate: f64) -> Result<Option<Vec<Vec<PulseSequence>>>> {
    let paths: Vec<PathBuf> = (1..=steps).map(|k| dir.join(pulse_path(tau, k))).collect();
    if !paths.iter().all(|p| p.exists()) {
        return Ok(None);
    }
    paths.iter().map(|p| PulseSequence::read_csv(p, sample_rate).map(|s| vec![s])).collect::<Result<_>>().map(Some)
}

/// Pulses for every step of one device mode, reusing `cache` and any
/// pulses stored under `pulses.dir`.
pub fn mode_pulses(
    cfg: &ExperimentConfig,
    cal: &Calibration,
    mode: DeviceMode,
    cache: &mut PulseCache,
) -> Result<(Vec<Vec<PulseSequence>>, f64)> {
    let sched = cfg.problem.schedule()?;
    let plan = cfg.problem.plan()?;
    let (form, taus) = mode.gate_durations(cal)?;
    if let (Some(dir), StepForm::Propagator) = (&cfg.pulses.dir, form) {
        if let Some(loaded) = load_pulses(dir, taus["U4"], plan.steps(), cfg.grape.sample_rate)? {
            return Ok((loaded, f64::NAN));
        }
    }
    let circuits = step_circuits(&sched, &plan, form)?;
    let scheduled: Vec<Vec<ScheduledPulse>> =
        schedule_steps(&circuits, &taus, &cfg.device.params(), &cfg.grape, cache)?;
    let worst = scheduled.iter().flatten().map(|s| s.report.final_gate_infidelity).fold(0.0, f64::max);
    let pulses = scheduled.into_iter().map(|g| g.into_iter().map(|s| s.pulse).collect()).collect();
    Ok((pulses, worst))
}

/// Device-level run of one preset and mode.
pub fn simulate_device(
    cfg: &ExperimentConfig,
    preset: &str,
    pulses: &[Vec<PulseSequence>],
) -> Result<DeviceTrajectory> {
    let cal = cfg.device.calibration(preset)?;
    let sched = cfg.problem.schedule()?;
    let plan = cfg.problem.plan()?;
    let p = cfg.device.params();
    let noise = cfg.noise.params(&cal);
    run_schedule(pulses, &sched, &plan, &p, &noise, &initial_density(&sched, &p)?)
}

/// Lindblad runs for every configured preset and mode.
pub fn cmd_device_sim(run: &Run) -> Result<RunManifest> {
    let cfg = &run.config;
    let modes = cfg.device_sim.modes.iter().map(|m| m.parse()).collect::<Result<Vec<DeviceMode>>>()?;
    let mut cache = PulseCache::new();
    let mut jobs = Vec::new();
    for preset in &cfg.device.runs {
        let cal = cfg.device.calibration(preset)?;
        for &mode in &modes {
            eprintln!("device-sim: pulses for {preset} / {}", mode.label());
            let (pulses, worst) = mode_pulses(cfg, &cal, mode, &mut cache)?;
            jobs.push((preset.clone(), mode, pulses, worst));
        }
    }
    let runs = jobs
        .par_iter()
        .map(|(preset, _, pulses, _)| simulate_device(cfg, preset, pulses))
        .collect::<Result<Vec<_>>>()?;

    let sched = cfg.problem.schedule()?;
    let ideal = trotter_evolve(&sched, &cfg.problem.plan()?, &initial_state(&sched))?;
    let mut out = run.output()?;
    out.write("trotter_ideal.csv", &ideal.to_csv())?;
    let mut summary = String::from(
        "preset,mode,duration_ns,final_fidelity,final_energy,dominant_energy,dominant_weight,leakage,max_gate_infidelity\n",
    );
    for ((preset, mode, pulses, worst), traj) in jobs.iter().zip(&runs) {
        out.write(&format!("device_{preset}_{}.csv", mode.label()), &traj.to_csv())?;
        let duration: f64 = pulses.iter().flatten().map(|p| p.duration()).sum();
        let last = traj.len() - 1;
        writeln!(
            summary,
            "{preset},{},{duration},{},{},{},{},{},{worst}",
            mode.label(),
            traj.fidelities[last],
            traj.energies[last],
            traj.dominant_energies[last],
            traj.dominant_weights[last],
            traj.leakage[last]
        )
        .expect("String write");
    }
    out.write("device_summary.csv", &summary)?;
    out.finish("device-sim", &run.config_text, run.seed)
}

/// Exact fidelity and energy at one trajectory point.
struct ExactPoint<S> {
    t: f64,
    state: S,
    fidelity: f64,
    energy: f64,
}

fn tomography_rows<S: Measurable + Sync>(
    points: &[ExactPoint<S>],
    cfg: &ExperimentConfig,
    model: &ReadoutModel,
    seed: u64,
) -> Result<String> {
    let sched = cfg.problem.schedule()?;
    let plan = cfg.problem.plan()?;
    let seeds = seed_stream(seed, points.len());
    let estimates = points
        .par_iter()
        .enumerate()
        .map(|(k, pt)| {
            tomography_step(&pt.state, &probe_unitary(&sched, &plan, k)?, cfg.sampling.shots, model, seeds[k])
        })
        .collect::<Result<Vec<StepEstimate>>>()?;
    let mut csv = String::from(
        "step,t_ns,fidelity_exact,fidelity_raw,fidelity_mitigated,energy_exact,energy_raw,energy_mitigated,clipped\n",
    );
    for (k, (pt, e)) in points.iter().zip(&estimates).enumerate() {
        writeln!(
            csv,
            "{k},{},{},{},{},{},{},{},{}",
            pt.t,
            pt.fidelity,
            e.fidelity_raw,
            e.fidelity_mitigated,
            pt.energy,
            e.energy_raw,
            e.energy_mitigated,
            e.clipped
        )
        .expect("String write");
    }
    Ok(csv)
}

/// Sampled fidelity and energy estimates along a trajectory, with
/// per-step calibration and mitigation.
pub fn cmd_tomography(run: &Run) -> Result<RunManifest> {
    let cfg = &run.config;
    let sched = cfg.problem.schedule()?;
    let plan = cfg.problem.plan()?;
    // Probes map the ideal k-step state to |00⟩, so exact fidelities are
    // taken against that state.
    let ideal = trotter_evolve(&sched, &plan, &initial_state(&sched))?;
    let csv = match cfg.tomography.source {
        TrajectorySource::Ideal => {
            let ht = build_ht();
            let points = ideal
                .states
                .iter()
                .zip(&ideal.times)
                .map(|(psi, &t)| ExactPoint { t, state: *psi, fidelity: 1.0, energy: expectation(psi, &ht) })
                .collect::<Vec<_>>();
            tomography_rows(&points, cfg, &cfg.sampling.readout, run.seed)?
        }
        TrajectorySource::Device => {
            let preset = cfg
                .device
                .runs
                .first()
                .ok_or_else(|| Error::Config("device source needs a preset in device.runs".into()))?;
            let cal = cfg.device.calibration(preset)?;
            let mode: DeviceMode = cfg.tomography.mode.parse()?;
            let (pulses, _) = mode_pulses(cfg, &cal, mode, &mut PulseCache::new())?;
            let traj = simulate_device(cfg, preset, &pulses)?;
            let points: Vec<ExactPoint<DensityMatrix>> = (0..traj.len())
                .map(|k| ExactPoint {
                    t: traj.step_times[k],
                    state: traj.states[k].clone(),
                    fidelity: mixed_fidelity(
                        &traj.states[k],
                        &embed_state(ideal.states[k].amplitudes(), cfg.device.levels),
                    ),
                    energy: traj.energies[k],
                })
                .collect();
            let model = cfg.device.preset(preset)?.readout.unwrap_or(cfg.sampling.readout);
            tomography_rows(&points, cfg, &model, run.seed)?
        }
    };
    let mut out = run.output()?;
    out.write("tomography.csv", &csv)?;
    out.finish("tomography", &run.config_text, run.seed)
}

/// Error-versus-shots tables for the ideal readout, the configured model
/// and each preset's readout model.
pub fn cmd_error_study(run: &Run) -> Result<RunManifest> {
    let cfg = &run.config;
    let mut models = vec![("ideal".to_string(), ReadoutModel::ideal()), ("injected".to_string(), cfg.sampling.readout)];
    for name in &cfg.device.runs {
        if let Some(r) = cfg.device.preset(name)?.readout {
            models.push((name.clone(), r));
        }
    }
    let seeds = seed_stream(run.seed, cfg.sampling.seeds);
    let state = uniform_state();
    let mut csv = String::from("model,shots,mean_abs_deviation,std_error\n");
    for (name, model) in &models {
        let table = error_vs_shots(&state, model, &cfg.sampling.shot_grid, &seeds)?;
        for r in &table.rows {
            writeln!(csv, "{name},{},{},{}", r.shots, r.mean_abs_deviation, r.std_error).expect("String write");
        }
    }
    let mut out = run.output()?;
    out.write("error_study.csv", &csv)?;
    out.finish("error-study", &run.config_text, run.seed)
}

#[derive(Debug, Parser)]
#[command(name = "adia", version, about = "Adiabatic two-spin state preparation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Continuous and Trotterized evolution sweeps.
    ExactEvolve(RunArgs),
    /// GRAPE pulses for every short-time propagator.
    GrapeSynth(RunArgs),
    /// Lindblad runs of the pulse schedules per device preset.
    DeviceSim(RunArgs),
    /// Sampled fidelity and energy estimates with readout mitigation.
    Tomography(RunArgs),
    /// Readout error versus number of shots.
    ErrorStudy(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to ADIA_THREADS or all cores.
    #[arg(long)]
    threads: Option<usize>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("ADIA_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("ADIA_THREADS=`{v}` is not a count"))),
        Err(_) => Ok(None),
    }
}

fn execute(command: Command) -> Result<RunManifest> {
    let (name, args) = match command {
        Command::ExactEvolve(a) => ("exact-evolve", a),
        Command::GrapeSynth(a) => ("grape-synth", a),
        Command::DeviceSim(a) => ("device-sim", a),
        Command::Tomography(a) => ("tomography", a),
        Command::ErrorStudy(a) => ("error-study", a),
    };
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let run = Run::new(&text, args.seed, args.out)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_count(args.threads)? {
        if k == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match name {
        "exact-evolve" => cmd_exact_evolve(&run),
        "grape-synth" => cmd_grape_synth(&run),
        "device-sim" => cmd_device_sim(&run),
        "tomography" => cmd_tomography(&run),
        _ => cmd_error_study(&run),
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(manifest) => {
            eprintln!("wrote {} files", manifest.files.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
