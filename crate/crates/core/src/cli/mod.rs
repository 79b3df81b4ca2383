//! Config-driven experiment runner behind the `catw` binary.
//!
//! Configs are JSON. Frequencies are ordinary frequencies in Hz and decay
//! rates are in 1/s; both are converted once, at load, to the angular units
//! used everywhere else.

mod check;

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Diagnostics, Probe, SimulationResult};
use crate::dynamics::{evolve, CollapseSet, DynamicsError, Evolution, Method, SolverConfig};
use crate::hamiltonians::{
    build_ideal_h, build_open_system_h, leakage_estimate, matched_mode_frequencies, validate_conditions,
    ConditionReport, DerivedCouplings, HamiltonianChoice, HamiltonianError, PulseLeakage, QutritDephasing,
    QutritFrequencies, QutritRelaxation, SystemParams, TimeDependentH,
};
use crate::hilbert::HilbertLayout;
use crate::states::{ideal_target, initial_state, truncation_report, CatParams, Parity, StateError, TargetModes, WStateSpec};

pub use check::{run_checks, CheckItem, CheckReport};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "CATW_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Resource(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<HamiltonianError> for CliError {
    fn from(e: HamiltonianError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::TooLarge { .. } => CliError::Resource(e.to_string()),
            DynamicsError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Verification(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// H₀ + H_e, no dissipation.
    IdealClosed,
    /// Effective Hamiltonian plus crosstalk and leakage, with all channels.
    EffectiveOpen,
    /// Full qutrit-mediated Hamiltonian plus crosstalk and leakage, with all channels.
    FullOpen,
}

impl Scenario {
    pub fn hamiltonian(self) -> Option<HamiltonianChoice> {
        match self {
            Scenario::IdealClosed => None,
            Scenario::EffectiveOpen => Some(HamiltonianChoice::Effective),
            Scenario::FullOpen => Some(HamiltonianChoice::Full),
        }
    }

    fn default_cutoff(self) -> usize {
        match self {
            Scenario::IdealClosed => 5,
            _ => 3,
        }
    }

    fn default_method(self) -> Method {
        match self {
            Scenario::IdealClosed => Method::ClosedRk4,
            _ => Method::LindbladRk4,
        }
    }
}

/// A scalar applied to every resonator, or one value per resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerMode {
    Uniform(f64),
    List(Vec<f64>),
}

impl PerMode {
    fn expand(&self, n: usize, field: &str) -> Result<Vec<f64>, CliError> {
        match self {
            PerMode::Uniform(v) => Ok(vec![*v; n]),
            PerMode::List(v) if v.len() == n => Ok(v.clone()),
            PerMode::List(v) => Err(CliError::Config(format!("{field} has {} entries, expected {n}", v.len()))),
        }
    }
}

/// Physical parameters in laboratory units. Missing fields take the
/// project defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_pairs: Option<usize>,
    pub coupling_hz: Option<PerMode>,
    /// One value per pair, or a single magnitude |Δ| applied as +|Δ| to the
    /// first pair and −|Δ| to the rest.
    pub detuning_hz: Option<PerMode>,
    pub drive_hz: Option<f64>,
    /// Defaults to the frequency-matched placement.
    pub mode_freqs_hz: Option<Vec<f64>>,
    pub qutrit_freqs_hz: Option<QutritFrequencies>,
    /// Crosstalk strength g_cr in units of the swap rate λ.
    pub crosstalk_over_lambda: Option<f64>,
    pub leak_omega_fe_hz: Option<f64>,
    pub leak_detuning_hz: Option<f64>,
    pub kappa_per_s: Option<PerMode>,
    pub relaxation_per_s: Option<QutritRelaxation>,
    pub dephasing_per_s: Option<QutritDephasing>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    pub alpha: Option<f64>,
    pub cutoff: Option<usize>,
    /// Largest truncated cat weight accepted.
    pub tail_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: Option<Method>,
    /// Step in units of the swap time T.
    pub dt_over_t: Option<f64>,
    /// Run length in units of T.
    pub duration_over_t: Option<f64>,
    pub sample_stride: Option<usize>,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// File stem for the results table and manifest.
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free text, ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub scenario: Scenario,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub encoding: EncodingConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputConfig,
}

const HZ: f64 = TAU;

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            note: None,
            scenario,
            system: SystemConfig::default(),
            encoding: EncodingConfig::default(),
            solver: SolverSection::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copy with every optional field filled in. Resolving twice is a no-op.
    pub fn resolved(&self) -> Result<Self, CliError> {
        let n = self.system.n_pairs.unwrap_or(3);
        if n == 0 {
            return Err(CliError::Config("system.n_pairs must be at least 1".into()));
        }
        let base = SystemParams::defaults(n);
        let s = &self.system;
        // Rounded to the mHz so the defaults read cleanly in manifests.
        let to_hz = |v: f64| (v / HZ * 1e3).round() / 1e3;
        let qutrit = s.qutrit_freqs_hz.unwrap_or(QutritFrequencies {
            eg: to_hz(base.qutrit_freqs.eg),
            fe: to_hz(base.qutrit_freqs.fe),
            fg: to_hz(base.qutrit_freqs.fg),
        });
        let detuning = match &s.detuning_hz {
            None => base.delta_pair.iter().map(|d| to_hz(*d)).collect(),
            Some(PerMode::Uniform(d)) => (0..n).map(|j| if j == 0 { d.abs() } else { -d.abs() }).collect(),
            Some(list) => list.expand(n, "system.detuning_hz")?,
        };
        let mode_freqs = match &s.mode_freqs_hz {
            Some(v) => v.clone(),
            None => matched_mode_frequencies(&qutrit, &detuning),
        };
        let system = SystemConfig {
            n_pairs: Some(n),
            coupling_hz: Some(PerMode::List(
                s.coupling_hz.as_ref().unwrap_or(&PerMode::Uniform(to_hz(base.g[0]))).expand(2 * n, "system.coupling_hz")?,
            )),
            detuning_hz: Some(PerMode::List(detuning)),
            drive_hz: Some(s.drive_hz.unwrap_or(to_hz(base.omega_drive))),
            mode_freqs_hz: Some(mode_freqs),
            qutrit_freqs_hz: Some(qutrit),
            crosstalk_over_lambda: Some(s.crosstalk_over_lambda.unwrap_or(base.crosstalk / base.derived().lambda)),
            leak_omega_fe_hz: Some(s.leak_omega_fe_hz.unwrap_or(to_hz(base.leak.omega_fe))),
            leak_detuning_hz: Some(s.leak_detuning_hz.unwrap_or(to_hz(base.leak.delta_p))),
            kappa_per_s: Some(PerMode::List(
                s.kappa_per_s.as_ref().unwrap_or(&PerMode::Uniform(base.kappa[0])).expand(2 * n, "system.kappa_per_s")?,
            )),
            relaxation_per_s: Some(s.relaxation_per_s.unwrap_or(base.relaxation)),
            dephasing_per_s: Some(s.dephasing_per_s.unwrap_or(base.dephasing)),
        };
        let encoding = EncodingConfig {
            alpha: Some(self.encoding.alpha.unwrap_or(base.alpha)),
            cutoff: Some(self.encoding.cutoff.unwrap_or(self.scenario.default_cutoff())),
            tail_tolerance: Some(self.encoding.tail_tolerance.unwrap_or(0.05)),
        };
        let method = self.solver.method.unwrap_or(self.scenario.default_method());
        let dt_over_t = self.solver.dt_over_t.unwrap_or(match method {
            Method::ClosedRk4 => 1.0 / 2000.0,
            _ => 1.0 / 1000.0,
        });
        let solver = SolverSection {
            method: Some(method),
            dt_over_t: Some(dt_over_t),
            duration_over_t: Some(self.solver.duration_over_t.unwrap_or(1.2)),
            sample_stride: Some(self.solver.sample_stride.unwrap_or(((0.005 / dt_over_t).round() as usize).max(1))),
            trajectories: self.solver.trajectories.or((method == Method::Trajectories).then_some(100)),
            seed: self.solver.seed.or((method == Method::Trajectories).then_some(0)),
        };
        let output = OutputConfig {
            dir: Some(self.output.dir.clone().unwrap_or_else(|| PathBuf::from("results"))),
            prefix: Some(self.output.prefix.clone().unwrap_or_else(|| {
                serde_json::to_value(self.scenario).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
            })),
        };
        let r = Self { note: self.note.clone(), scenario: self.scenario, system, encoding, solver, output };
        r.check_consistency()?;
        Ok(r)
    }

    fn check_consistency(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let e = &self.encoding;
        let sv = &self.solver;
        if !(e.alpha.unwrap() > 0.0) {
            return bad("encoding.alpha must be positive");
        }
        if e.cutoff.unwrap() < 2 {
            return bad("encoding.cutoff must be at least 2");
        }
        if !(e.tail_tolerance.unwrap() > 0.0) {
            return bad("encoding.tail_tolerance must be positive");
        }
        if !(sv.dt_over_t.unwrap() > 0.0) {
            return bad("solver.dt_over_t must be positive");
        }
        if !(sv.duration_over_t.unwrap() >= 0.0) {
            return bad("solver.duration_over_t must be non-negative");
        }
        if sv.sample_stride == Some(0) {
            return bad("solver.sample_stride must be at least 1");
        }
        if sv.method == Some(Method::Trajectories) && sv.trajectories == Some(0) {
            return bad("solver.trajectories must be at least 1 for the trajectory method");
        }
        if self.system.mode_freqs_hz.as_ref().is_some_and(|m| m.len() != 2 * self.system.n_pairs.unwrap()) {
            return bad("system.mode_freqs_hz needs one entry per resonator");
        }
        if self.system.crosstalk_over_lambda.is_some_and(|c| c < 0.0) {
            return bad("system.crosstalk_over_lambda must be non-negative");
        }
        Ok(())
    }

    /// Angular-unit parameters. Call on a resolved config.
    pub fn params(&self) -> Result<SystemParams, CliError> {
        let s = &self.system;
        let n = s.n_pairs.unwrap();
        let list = |v: &Option<PerMode>, len: usize, name: &str| v.as_ref().unwrap().expand(len, name);
        let scale = |v: Vec<f64>| v.into_iter().map(|x| x * HZ).collect::<Vec<_>>();
        let q = s.qutrit_freqs_hz.unwrap();
        let mut p = SystemParams {
            n_pairs: n,
            g: scale(list(&s.coupling_hz, 2 * n, "system.coupling_hz")?),
            delta_pair: scale(list(&s.detuning_hz, n, "system.detuning_hz")?),
            omega_drive: s.drive_hz.unwrap() * HZ,
            mode_freqs: scale(s.mode_freqs_hz.clone().unwrap()),
            qutrit_freqs: QutritFrequencies { eg: q.eg * HZ, fe: q.fe * HZ, fg: q.fg * HZ },
            crosstalk: 0.0,
            leak: PulseLeakage { omega_fe: s.leak_omega_fe_hz.unwrap() * HZ, delta_p: s.leak_detuning_hz.unwrap() * HZ },
            kappa: list(&s.kappa_per_s, 2 * n, "system.kappa_per_s")?,
            relaxation: s.relaxation_per_s.unwrap(),
            dephasing: s.dephasing_per_s.unwrap(),
            alpha: self.encoding.alpha.unwrap(),
        };
        p.validate()?;
        p.crosstalk = s.crosstalk_over_lambda.unwrap() * p.derived().lambda;
        if self.scenario == Scenario::IdealClosed {
            let ideal = SystemParams::ideal(n);
            p.crosstalk = 0.0;
            p.leak.omega_fe = 0.0;
            p.kappa = ideal.kappa;
            p.relaxation = ideal.relaxation;
            p.dephasing = ideal.dephasing;
        }
        Ok(p)
    }

    /// Set a sweepable scalar. See [`SWEEP_AXES`].
    pub fn set_axis(&mut self, axis: &str, value: f64) -> Result<(), CliError> {
        match axis {
            "g_cr" => self.system.crosstalk_over_lambda = Some(value),
            "kappa" => self.system.kappa_per_s = Some(PerMode::Uniform(value)),
            "alpha" => self.encoding.alpha = Some(value),
            "omega_fe" => self.system.leak_omega_fe_hz = Some(value),
            "dt" => {
                self.solver.dt_over_t = Some(value);
                self.solver.sample_stride = None;
            }
            "drive" => self.system.drive_hz = Some(value),
            _ => {
                return Err(CliError::Config(format!(
                    "unknown sweep axis '{axis}'; expected one of {}",
                    SWEEP_AXES.iter().map(|(a, _)| *a).collect::<Vec<_>>().join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Sweep axes and their units.
pub const SWEEP_AXES: &[(&str, &str)] = &[
    ("g_cr", "crosstalk strength in units of λ"),
    ("kappa", "cavity decay rate in 1/s, all resonators"),
    ("alpha", "cat amplitude"),
    ("omega_fe", "leakage Rabi frequency in Hz"),
    ("dt", "step in units of T"),
    ("drive", "drive Rabi frequency Ω in Hz"),
];

/// Everything needed to integrate one scenario.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub params: SystemParams,
    pub layout: HilbertLayout,
    pub hamiltonian: TimeDependentH,
    pub collapse: CollapseSet,
    pub initial: crate::hilbert::QuantumState,
    pub probe: Probe,
    pub solver: SolverConfig,
    pub conditions: ConditionReport,
    pub truncation: Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub cutoff: usize,
    pub even_tail: f64,
    pub odd_tail: f64,
}

/// Build the Hamiltonian, channels, states and solver settings for `config`.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, CliError> {
    let config = config.resolved()?;
    let params = config.params()?;
    let n = params.n_pairs;
    let cutoff = config.encoding.cutoff.unwrap();
    let layout = HilbertLayout::uniform(n, cutoff).map_err(|e| CliError::Config(e.to_string()))?;
    let derived = params.derived();
    let t_swap = derived.t_swap;

    let hamiltonian = match config.scenario.hamiltonian() {
        None => TimeDependentH::from_static(build_ideal_h(&params, &layout)?),
        Some(choice) => build_open_system_h(&params, &layout, choice)?,
    };
    let collapse = CollapseSet::from_params(&params, &layout)?;

    let spec = WStateSpec::new(n, params.alpha, TargetModes::Odd).with_tail_tolerance(config.encoding.tail_tolerance.unwrap());
    let initial = initial_state(&spec, &layout)?;
    let target = ideal_target(&spec, &vec![0.0; n], &layout.cavity_layout().map_err(|e| CliError::Config(e.to_string()))?)?;
    let probe = Probe::new(&layout, t_swap).with_target(&target).map_err(|e| CliError::Config(e.to_string()))?;

    let sv = &config.solver;
    let dt = sv.dt_over_t.unwrap() * t_swap;
    let n_steps = (sv.duration_over_t.unwrap() / sv.dt_over_t.unwrap() - 1e-9).ceil().max(0.0) as usize;
    let mut solver = SolverConfig::new(sv.method.unwrap(), dt, n_steps).with_stride(sv.sample_stride.unwrap());
    if let (Some(count), Some(seed)) = (sv.trajectories, sv.seed) {
        solver = solver.with_trajectories(count, seed);
    }
    if solver.method == Method::LindbladRk4 && layout.dim() > crate::dynamics::MAX_DENSE_DIM {
        return Err(CliError::Resource(format!(
            "a dense density matrix of dimension {} exceeds {}; set solver.method to \"trajectories\" or lower encoding.cutoff",
            layout.dim(),
            crate::dynamics::MAX_DENSE_DIM
        )));
    }

    let alpha = C64::new(params.alpha, 0.0);
    let truncation = Truncation {
        cutoff,
        even_tail: truncation_report(&CatParams::new(alpha, Parity::Even)?, cutoff),
        odd_tail: truncation_report(&CatParams::new(alpha, Parity::Odd)?, cutoff),
    };
    let conditions = validate_conditions(&params);
    if !conditions.all_passed() {
        return Err(CliError::Config(format!("matching conditions violated: {}", conditions.failure_summary())));
    }
    Ok(Prepared { config, params, layout, hamiltonian, collapse, initial, probe, solver, conditions, truncation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub peak_t_over_t: f64,
    pub peak_fidelity: f64,
    /// Fidelity at the sample nearest t = T.
    pub fidelity_at_t: Option<f64>,
    pub final_fidelity: f64,
}

impl RunSummary {
    pub fn from_result(r: &SimulationResult) -> Self {
        let (peak_t_over_t, peak_fidelity) = r.peak().unwrap_or((0.0, 0.0));
        let fidelity_at_t = r.t_over_t.last().filter(|&&x| x >= 1.0 - 1e-9).and_then(|_| r.fidelity_near(1.0));
        Self { peak_t_over_t, peak_fidelity, fidelity_at_t, final_fidelity: r.fidelity.last().copied().unwrap_or(0.0) }
    }
}

/// Everything needed to interpret and reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub program: String,
    /// Fully resolved; loading it as a config repeats the run.
    pub config: ExperimentConfig,
    pub hamiltonian: Option<HamiltonianChoice>,
    pub params_angular: SystemParams,
    pub couplings: DerivedCouplings,
    pub swap_time_s: f64,
    pub subsystem_dims: Vec<usize>,
    pub dimension: usize,
    pub truncation: Truncation,
    pub conditions: ConditionReport,
    pub leakage_estimate: f64,
    pub solver: SolverConfig,
    pub diagnostics: Diagnostics,
    pub summary: RunSummary,
    pub elapsed_s: f64,
    pub results_file: Option<PathBuf>,
}

pub struct RunOutcome {
    pub evolution: Evolution,
    pub manifest: RunManifest,
}

/// Integrate a prepared scenario. Nothing is written to disk.
pub fn execute(prep: &Prepared) -> Result<RunOutcome, CliError> {
    for w in &prep.conditions.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "{:?}: N = {}, d = {}, D = {}, {:?}, {} steps of {:.3e} s",
        prep.config.scenario,
        prep.params.n_pairs,
        prep.truncation.cutoff,
        prep.layout.dim(),
        prep.solver.method,
        prep.solver.n_steps,
        prep.solver.dt
    );
    let start = Instant::now();
    let evolution = evolve(&prep.hamiltonian, &prep.collapse, &prep.initial, &prep.solver, &prep.probe)?;
    let elapsed_s = start.elapsed().as_secs_f64();
    let derived = prep.params.derived();
    let manifest = RunManifest {
        program: format!("catw {}", env!("CARGO_PKG_VERSION")),
        config: prep.config.clone(),
        hamiltonian: prep.config.scenario.hamiltonian(),
        params_angular: prep.params.clone(),
        swap_time_s: derived.t_swap,
        couplings: derived,
        subsystem_dims: prep.layout.subsystem_dims(),
        dimension: prep.layout.dim(),
        truncation: prep.truncation.clone(),
        conditions: prep.conditions.clone(),
        leakage_estimate: leakage_estimate(&prep.params),
        solver: prep.solver.clone(),
        diagnostics: evolution.result.diagnostics.clone(),
        summary: RunSummary::from_result(&evolution.result),
        elapsed_s,
        results_file: None,
    };
    Ok(RunOutcome { evolution, manifest })
}

/// `run`: prepare, integrate and write `<prefix>.csv` and `<prefix>.json`.
pub fn run(config: &ExperimentConfig, out: Option<&Path>, seed: Option<u64>) -> Result<RunOutcome, CliError> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.solver.seed = Some(s);
    }
    if let Some(dir) = out {
        config.output.dir = Some(dir.to_path_buf());
    }
    let prep = prepare(&config)?;
    let mut outcome = execute(&prep)?;
    let dir = prep.config.output.dir.clone().unwrap();
    let prefix = prep.config.output.prefix.clone().unwrap();
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join(format!("{prefix}.csv"));
    write_atomic(&csv_path, &results_csv(&outcome.evolution.result)?)?;
    outcome.manifest.results_file = Some(csv_path);
    write_atomic(&dir.join(format!("{prefix}.json")), &to_json(&outcome.manifest)?)?;
    Ok(outcome)
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// Header of the results table for `n_pairs` pairs.
pub fn results_header(n_pairs: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["t_seconds", "t_over_T", "fidelity", "fidelity_squared", "trace"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=n_pairs).map(|j| format!("pair{j}_n")));
    h.extend(["pop_g", "pop_e", "pop_f"].iter().map(|s| s.to_string()));
    h
}

pub fn results_csv(r: &SimulationResult) -> Result<Vec<u8>, CliError> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(results_header(r.pair_photons.len())).map_err(io)?;
    for i in 0..r.len() {
        let mut row = vec![r.times[i], r.t_over_t[i]];
        row.push(r.fidelity.get(i).copied().unwrap_or(f64::NAN));
        row.push(r.fidelity_squared.get(i).copied().unwrap_or(f64::NAN));
        row.push(r.trace[i]);
        row.extend(r.pair_photons.iter().map(|p| p[i]));
        row.extend(r.qutrit_pops.get(i).copied().unwrap_or([f64::NAN; 3]));
        w.write_record(row.iter().map(|v| format!("{v:.12e}"))).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub max_fidelity: f64,
    pub argmax_t_over_t: f64,
    pub fidelity_at_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub program: String,
    pub axis: String,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunManifest>,
}

/// One run per value, in parallel, merged in input order.
pub fn sweep_runs(
    config: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    seed: Option<u64>,
) -> Result<Vec<RunOutcome>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let mut base = config.clone();
    if let Some(s) = seed {
        base.solver.seed = Some(s);
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            c.set_axis(axis, v)?;
            Ok(c)
        })
        .collect::<Result<_, CliError>>()?;
    configs.par_iter().map(|c| execute(&prepare(c)?)).collect()
}

/// `sweep`: run every value and write `<prefix>_sweep_<axis>.csv` and `.json`.
pub fn sweep(
    config: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<SweepManifest, CliError> {
    let outcomes = sweep_runs(config, axis, values, seed)?;
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(&outcomes)
        .map(|(&value, o)| {
            let s = &o.manifest.summary;
            SweepRow { value, max_fidelity: s.peak_fidelity, argmax_t_over_t: s.peak_t_over_t, fidelity_at_t: s.fidelity_at_t }
        })
        .collect();
    let resolved = config.resolved()?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| resolved.output.dir.clone().unwrap());
    let stem = format!("{}_sweep_{axis}", resolved.output.prefix.unwrap());
    fs::create_dir_all(&dir)?;
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["value", "max_fidelity", "argmax_t_over_T", "fidelity_at_T"]).map_err(io)?;
    for r in &rows {
        let at_t = r.fidelity_at_t.map_or(String::new(), |f| format!("{f:.12e}"));
        w.write_record([format!("{:.12e}", r.value), format!("{:.12e}", r.max_fidelity), format!("{:.6}", r.argmax_t_over_t), at_t])
            .map_err(io)?;
    }
    write_atomic(&dir.join(format!("{stem}.csv")), &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
    let manifest = SweepManifest {
        program: format!("catw {}", env!("CARGO_PKG_VERSION")),
        axis: axis.to_string(),
        rows,
        runs: outcomes.into_iter().map(|o| o.manifest).collect(),
    };
    write_atomic(&dir.join(format!("{stem}.json")), &to_json(&manifest)?)?;
    Ok(manifest)
}

/// Parse a comma-separated list of numbers.
pub fn parse_values(list: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CliError::Config(format!("'{s}' is not a number in --values"))))
        .collect()
}

/// Size the global pool from [`THREADS_ENV`] if set.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("{THREADS_ENV}={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
