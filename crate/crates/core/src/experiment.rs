//! Experiment runner: input preparation, dynamics, emission, simulated
//! tomography and the cumulative detection-window sweep.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, uniform_grid, IntegrationStats, Tolerances};
use crate::emission::{
    apply_noise, emission_matrix, photon_shape, process_efficiency, to_dynamic, Basis, DetectionWindow,
    ModeCorrelations, PhotonShape, correlation_operators,
};
use crate::error::{Error, Result};
use crate::linalg::{c, state_fidelity, ComplexMatrix, DensityMatrix, MatrixJson, PureState};
use crate::system::{
    build_collapse_operators, build_full_hamiltonian, HilbertSpace, LevelScheme, ParamsFile, SystemParams,
};
use crate::tomography::{
    bootstrap, expected_counts, mean_state_fidelity_from_process, mle_process, mle_process_from_counts,
    mle_state, process_fidelity, simulate_counts, split_seed, BasisCounts, CountRecord,
};

pub const DEFAULT_SWEEP_US: [f64; 13] = [0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 44.0, 55.0];
pub const DEFAULT_SHOTS: u64 = 32_400;
pub const DETECTORS: usize = 2;

/// Input qubit state of the ion, either named or as (α, φ) for
/// cos α |S⟩ + e^{iφ} sin α |S′⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Named(String),
    Angles { alpha: f64, phi: f64 },
}

impl InputSpec {
    pub fn angles(&self) -> Result<(f64, f64)> {
        match self {
            InputSpec::Angles { alpha, phi } => Ok((*alpha, *phi)),
            InputSpec::Named(n) => match n.as_str() {
                "S" => Ok((0.0, 0.0)),
                "S'" => Ok((FRAC_PI_2, 0.0)),
                "S-S'" => Ok((FRAC_PI_4, PI)),
                "S+iS'" => Ok((FRAC_PI_4, FRAC_PI_2)),
                other => Err(Error::Config(format!("unknown input state '{other}'"))),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            InputSpec::Named(n) => n.clone(),
            InputSpec::Angles { alpha, phi } => format!("alpha={alpha},phi={phi}"),
        }
    }

    /// Label usable in file names.
    pub fn file_label(&self) -> String {
        match self {
            InputSpec::Named(n) => n.replace("S'", "Sp").replace('-', "m").replace('+', "p"),
            InputSpec::Angles { alpha, phi } => format!("a{alpha:.4}_p{phi:.4}"),
        }
    }

    pub fn standard_set() -> Vec<InputSpec> {
        ["S", "S'", "S-S'", "S+iS'"]
            .into_iter()
            .map(|s| InputSpec::Named(s.into()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseToggles {
    pub dark_counts: bool,
    pub init_error: bool,
    pub dephasing: bool,
}

impl Default for NoiseToggles {
    fn default() -> Self {
        Self::all(true)
    }
}

impl NoiseToggles {
    pub fn all(on: bool) -> Self {
        Self {
            dark_counts: on,
            init_error: on,
            dephasing: on,
        }
    }

    /// Parameters seen by the noise model with disabled sources removed.
    pub fn apply(&self, params: &SystemParams) -> SystemParams {
        let mut p = params.clone();
        if !self.dark_counts {
            p.dark_rate = 0.0;
        }
        if !self.init_error {
            p.init_fidelity = 1.0;
        }
        if !self.dephasing {
            p.coherence_time = f64::INFINITY;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub start_us: f64,
    pub end_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub rel: f64,
    pub abs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsFile,
    /// Level-scheme JSON; relative paths resolve against the config file.
    pub scheme: Option<PathBuf>,
    pub input_states: Vec<InputSpec>,
    pub windows: Vec<WindowSpec>,
    /// Cumulative windows [0, end] for each end, µs.
    pub sweep_ends_us: Vec<f64>,
    /// Total detections over all inputs and settings.
    pub shots: u64,
    pub seed: u64,
    pub noise: NoiseToggles,
    pub t_end_us: f64,
    pub grid_points: usize,
    pub bootstrap_resamples: usize,
    pub tolerances: ToleranceSpec,
    pub off_resonant: bool,
    pub shape_bin_us: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParamsFile::default(),
            scheme: None,
            input_states: InputSpec::standard_set(),
            windows: vec![
                WindowSpec {
                    start_us: 2.0,
                    end_us: 4.0,
                },
                WindowSpec {
                    start_us: 0.0,
                    end_us: 55.0,
                },
            ],
            sweep_ends_us: DEFAULT_SWEEP_US.to_vec(),
            shots: DEFAULT_SHOTS,
            seed: 1,
            noise: NoiseToggles::default(),
            t_end_us: 55.0,
            grid_points: 2200,
            bootstrap_resamples: 200,
            tolerances: ToleranceSpec { rel: 1e-8, abs: 1e-10 },
            off_resonant: true,
            shape_bin_us: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; a relative scheme path is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        if let Some(s) = &cfg.scheme {
            if s.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.scheme = Some(dir.join(s));
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_states.is_empty() {
            return Err(Error::Config("no input states".into()));
        }
        for s in &self.input_states {
            s.angles()?;
        }
        if self.windows.is_empty() && self.sweep_ends_us.is_empty() {
            return Err(Error::Config("no detection windows".into()));
        }
        if !(self.t_end_us > 0.0) || self.grid_points < 2 {
            return Err(Error::Config("time grid needs t_end_us > 0 and at least 2 points".into()));
        }
        for w in &self.windows {
            DetectionWindow::from_us(w.start_us, w.end_us).map_err(|e| Error::Config(e.to_string()))?;
            if w.end_us > self.t_end_us * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "window end {} µs beyond the simulated {} µs",
                    w.end_us, self.t_end_us
                )));
            }
        }
        if self.sweep_ends_us.windows(2).any(|w| !(w[1] > w[0]))
            || self.sweep_ends_us.iter().any(|&e| !(e > 0.0) || e > self.t_end_us * (1.0 + 1e-12))
        {
            return Err(Error::Config(
                "sweep ends must be increasing and within (0, t_end_us]".into(),
            ));
        }
        if self.shots > 0 && self.bootstrap_resamples < 100 {
            return Err(Error::Config("bootstrap_resamples must be >= 100".into()));
        }
        if !(self.tolerances.rel > 0.0 && self.tolerances.abs > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.shape_bin_us > 0.0) {
            return Err(Error::Config("shape_bin_us must be positive".into()));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<LevelScheme> {
        match &self.scheme {
            Some(p) => LevelScheme::load(p).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
                other => other,
            }),
            None => Ok(LevelScheme::default()),
        }
    }

    pub fn system_params(&self, scheme: &LevelScheme) -> Result<SystemParams> {
        self.params.resolve(scheme)
    }
}

/// cos α |S⟩ + e^{iφ} sin α |S′⟩ as a 2×2 density matrix, coherences scaled
/// by `init_fidelity`.
pub fn qubit_input(alpha: f64, phi: f64, init_fidelity: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&init_fidelity) {
        return Err(Error::InvalidParameter(format!("init_fidelity {init_fidelity} outside [0, 1]")));
    }
    let mut m = PureState::qubit(alpha, phi).projector();
    m[(0, 1)] *= init_fidelity;
    m[(1, 0)] *= init_fidelity;
    DensityMatrix::new(m)
}

/// Input state on atom ⊗ H-mode ⊗ V-mode with both modes in vacuum.
pub fn prepare_input(
    alpha: f64,
    phi: f64,
    init_fidelity: f64,
    scheme: &LevelScheme,
    n_max: usize,
) -> Result<DensityMatrix> {
    let q = qubit_input(alpha, phi, init_fidelity)?;
    let roles = scheme.roles()?;
    let space = HilbertSpace::new(scheme.len(), n_max);
    let idx = roles.qubit.map(|l| space.index(l, 0, 0));
    let mut m = ComplexMatrix::zeros(space.dim(), space.dim());
    for a in 0..2 {
        for b in 0..2 {
            m[(idx[a], idx[b])] = q.matrix()[(a, b)];
        }
    }
    DensityMatrix::new(m)
}

/// Mode correlations for the operator basis |a,0,0⟩⟨b,0,0| of the qubit
/// inputs; any input follows by linearity.
#[derive(Debug, Clone)]
pub struct QubitDynamics {
    /// Indexed [a][b].
    pub basis: [[ModeCorrelations; 2]; 2],
    pub stats: IntegrationStats,
    pub subspace_dim: usize,
}

impl QubitDynamics {
    pub fn compute(
        params: &SystemParams,
        scheme: &LevelScheme,
        grid: &[f64],
        tol: Tolerances,
        off_resonant: bool,
    ) -> Result<Self> {
        let h = build_full_hamiltonian(params, scheme, off_resonant)?;
        let ls = build_collapse_operators(params, scheme)?;
        let roles = scheme.roles()?;
        let space = HilbertSpace::new(scheme.len(), params.n_max);
        let idx = roles.qubit.map(|l| space.index(l, 0, 0));
        let tracked = correlation_operators(&space);
        let jobs = [(0, 0), (1, 1), (0, 1)];
        let runs: Vec<_> = jobs
            .par_iter()
            .map(|&(a, b)| {
                let mut x = ComplexMatrix::zeros(space.dim(), space.dim());
                x[(idx[a], idx[b])] = c(1.0, 0.0);
                let res = propagate(&h, &ls, &x, grid, &tracked, false, tol)?;
                let subspace = crate::dynamics::Liouvillian::new(&h, &ls, &x)?.subspace().len();
                Ok((ModeCorrelations::from_result(&res, &space)?, res.stats, subspace))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stats = IntegrationStats::default();
        for (_, s, _) in &runs {
            stats.accepted_steps += s.accepted_steps;
            stats.rejected_steps += s.rejected_steps;
            stats.rhs_evaluations += s.rhs_evaluations;
        }
        let subspace_dim = runs.iter().map(|r| r.2).max().unwrap_or(0);
        let c00 = runs[0].0.clone();
        let c11 = runs[1].0.clone();
        let c01 = runs[2].0.clone();
        // Λ(X†) = Λ(X)†
        let c10 = ModeCorrelations {
            times: c01.times.clone(),
            values: c01.values.iter().map(|m| m.adjoint()).collect(),
        };
        Ok(Self {
            basis: [[c00, c01], [c10, c11]],
            stats,
            subspace_dim,
        })
    }

    pub fn correlations(&self, rho: &DensityMatrix) -> Result<ModeCorrelations> {
        if rho.dim() != 2 {
            return Err(Error::Dimension("qubit input expected".into()));
        }
        let m = rho.matrix();
        let terms: Vec<(C64, &ModeCorrelations)> = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| (m[(a, b)], &self.basis[a][b]))
            .collect();
        ModeCorrelations::combine(&terms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateReport {
    pub label: String,
    pub eff_detected: f64,
    pub eff_internal: f64,
    pub dark_fraction: f64,
    pub mean_emission_time_us: f64,
    /// Polarization state after the noise model.
    pub model_state: MatrixJson,
    pub model_fidelity: f64,
    pub mle_state: Option<MatrixJson>,
    pub mle_fidelity: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub start_us: f64,
    pub end_us: f64,
    pub eff_detected: f64,
    pub eff_internal: f64,
    /// From maximum likelihood on the exact outcome probabilities.
    pub process_fidelity_model: Option<f64>,
    pub mean_state_fidelity_model: f64,
    pub chi_model: Option<MatrixJson>,
    /// From the simulated counts, ± bootstrap standard deviation.
    pub process_fidelity: Option<Estimate>,
    pub mean_state_fidelity: Option<Estimate>,
    pub mean_state_fidelity_from_process: Option<Estimate>,
    pub chi_mle: Option<MatrixJson>,
    pub states: Vec<StateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub window_end_us: f64,
    /// Model process fidelity, or mean state fidelity without a complete input set.
    pub fidelity: f64,
    pub fidelity_sd: Option<f64>,
    pub eff_detected: f64,
    pub eff_internal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub state: String,
    pub basis: Basis,
    pub time_us: Vec<f64>,
    pub rate1: Vec<f64>,
    pub rate2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsSummary {
    pub t_end_us: f64,
    pub grid_points: usize,
    pub subspace_dim: usize,
    pub stats: IntegrationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub shots: u64,
    pub noise: NoiseToggles,
    pub params: SystemParams,
    pub inputs: Vec<String>,
    pub dynamics: DynamicsSummary,
    pub windows: Vec<WindowReport>,
    pub sweep: Vec<SweepRow>,
    pub shapes: Vec<ShapeReport>,
    pub warnings: Vec<String>,
}

/// Per-input quantities for one window before tomography.
struct WindowInput {
    target: PureState,
    noisy: DensityMatrix,
    eff_detected: f64,
    eff_internal: f64,
    dark_fraction: f64,
    mean_time: f64,
}

/// Everything computed once per run and shared by all windows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub params: SystemParams,
    pub noise_params: SystemParams,
    pub targets: Vec<PureState>,
    pub inputs: Vec<DensityMatrix>,
    pub correlations: Vec<ModeCorrelations>,
    pub dynamics: DynamicsSummary,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let scheme = config.scheme().map_err(|e| e.in_stage("configuration"))?;
        let params = config
            .system_params(&scheme)
            .map_err(|e| e.in_stage("configuration"))?;
        let grid = uniform_grid(config.t_end_us * 1e-6, config.grid_points);
        let tol = Tolerances {
            rel: config.tolerances.rel,
            abs: config.tolerances.abs,
        };
        let dynamics = QubitDynamics::compute(&params, &scheme, &grid, tol, config.off_resonant)
            .map_err(|e| e.in_stage("dynamics"))?;

        let mut targets = Vec::new();
        let mut inputs = Vec::new();
        let mut correlations = Vec::new();
        for spec in &config.input_states {
            let (alpha, phi) = spec.angles()?;
            targets.push(PureState::qubit(alpha, phi));
            // initialization error enters through the noise model
            let rho = qubit_input(alpha, phi, 1.0).map_err(|e| e.in_stage("preparation"))?;
            correlations.push(dynamics.correlations(&rho).map_err(|e| e.in_stage("emission"))?);
            inputs.push(rho);
        }
        Ok(Self {
            config: config.clone(),
            noise_params: config.noise.apply(&params),
            params,
            targets,
            inputs,
            correlations,
            dynamics: DynamicsSummary {
                t_end_us: config.t_end_us,
                grid_points: grid.len(),
                subspace_dim: dynamics.subspace_dim,
                stats: dynamics.stats,
            },
        })
    }

    fn process_inputs_complete(&self) -> bool {
        let n = self.targets.len();
        let gram = ComplexMatrix::from_fn(n, n, |i, j| {
            crate::linalg::trace_product(&self.targets[i].projector(), &self.targets[j].projector())
        });
        crate::linalg::hermitian_eigenvalues(&gram)
            .iter()
            .filter(|&&e| e > 1e-9)
            .count()
            >= 4
    }

    fn window_inputs(&self, window: &DetectionWindow) -> Result<Vec<WindowInput>> {
        self.targets
            .iter()
            .zip(&self.correlations)
            .map(|(target, corr)| {
                let pol = emission_matrix(corr, window, &self.params)?;
                let noisy = apply_noise(&pol, &self.noise_params, window, DETECTORS)?;
                Ok(WindowInput {
                    target: target.clone(),
                    noisy: noisy.state,
                    eff_detected: pol.weight,
                    eff_internal: process_efficiency(corr, window, &self.params, true)?,
                    dark_fraction: noisy.dark_fraction,
                    mean_time: pol.mean_time,
                })
            })
            .collect()
    }

    /// Model and sampled analysis of one window. `stream` separates the
    /// random streams of different windows.
    pub fn analyze_window(&self, window: &DetectionWindow, stream: u64) -> Result<WindowReport> {
        let inputs = self.window_inputs(window).map_err(|e| e.in_stage("emission"))?;
        let n_in = inputs.len() as f64;
        let complete = self.process_inputs_complete();
        let eff_detected = inputs.iter().map(|i| i.eff_detected).sum::<f64>() / n_in;
        let eff_internal = inputs.iter().map(|i| i.eff_internal).sum::<f64>() / n_in;

        let model_fids = inputs
            .iter()
            .map(|i| state_fidelity(&i.target, &i.noisy))
            .collect::<Result<Vec<_>>>()?;
        let mean_state_fidelity_model = model_fids.iter().sum::<f64>() / n_in;
        let chi_model = if complete {
            let data: Vec<Vec<BasisCounts>> = inputs
                .iter()
                .map(|i| expected_counts(&i.noisy, 1.0))
                .collect::<Result<_>>()?;
            let est = mle_process_from_counts(&self.targets, &data).map_err(|e| e.in_stage("tomography"))?;
            check_process(&est.process.chi)?;
            Some(est.process)
        } else {
            None
        };

        let shots = self.config.shots;
        let per_input = shots / inputs.len() as u64;
        let sampled = if per_input > 0 {
            let seed = split_seed(self.config.seed, stream);
            let records = inputs
                .iter()
                .enumerate()
                .map(|(k, i)| simulate_counts(&i.noisy, per_input, split_seed(seed, k as u64), Some(*window)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("tomography"))?;
            Some(self.sampled_analysis(&records, split_seed(seed, 1 << 32)).map_err(|e| e.in_stage("tomography"))?)
        } else {
            None
        };

        let states = inputs
            .iter()
            .enumerate()
            .map(|(k, i)| StateReport {
                label: self.config.input_states[k].label(),
                eff_detected: i.eff_detected,
                eff_internal: i.eff_internal,
                dark_fraction: i.dark_fraction,
                mean_emission_time_us: i.mean_time * 1e6,
                model_state: MatrixJson::from(i.noisy.matrix()),
                model_fidelity: model_fids[k],
                mle_state: sampled.as_ref().map(|s| MatrixJson::from(s.states[k].matrix())),
                mle_fidelity: sampled.as_ref().map(|s| s.state_fidelities[k].clone()),
            })
            .collect();

        Ok(WindowReport {
            start_us: to_us(window.t_start),
            end_us: to_us(window.t_end),
            eff_detected,
            eff_internal,
            process_fidelity_model: chi_model.as_ref().map(process_fidelity),
            mean_state_fidelity_model,
            chi_model: chi_model.as_ref().map(|p| MatrixJson::from(&p.chi)),
            process_fidelity: sampled.as_ref().and_then(|s| s.process_fidelity.clone()),
            mean_state_fidelity: sampled.as_ref().map(|s| s.mean_state_fidelity.clone()),
            mean_state_fidelity_from_process: sampled.as_ref().and_then(|s| {
                s.process_fidelity.as_ref().map(|f| Estimate {
                    value: mean_state_fidelity_from_process(f.value),
                    sd: 2.0 * f.sd / 3.0,
                })
            }),
            chi_mle: sampled.as_ref().and_then(|s| s.chi.as_ref().map(MatrixJson::from)),
            states,
        })
    }

    fn sampled_analysis(&self, records: &[CountRecord], seed: u64) -> Result<SampledAnalysis> {
        let targets = &self.targets;
        let n_boot = self.config.bootstrap_resamples;
        let mut states = Vec::new();
        let mut state_fidelities = Vec::new();
        for (k, rec) in records.iter().enumerate() {
            let target = &targets[k];
            let est = mle_state(rec)?;
            let fid = state_fidelity(target, &est.state)?;
            let boot = bootstrap(
                std::slice::from_ref(rec),
                |r| state_fidelity(target, &mle_state(&r[0])?.state),
                n_boot,
                split_seed(seed, k as u64),
            )?;
            states.push(est.state);
            state_fidelities.push(Estimate { value: fid, sd: boot.sd });
        }
        let mean_fid = |r: &[CountRecord]| -> Result<f64> {
            let mut total = 0.0;
            for (k, rec) in r.iter().enumerate() {
                total += state_fidelity(&targets[k], &mle_state(rec)?.state)?;
            }
            Ok(total / r.len() as f64)
        };
        let mean = bootstrap(records, mean_fid, n_boot, split_seed(seed, 100))?;
        let (process_fidelity, chi) = if self.process_inputs_complete() {
            let est = mle_process(targets, records)?;
            check_process(&est.process.chi)?;
            let boot = bootstrap(
                records,
                |r| Ok(crate::tomography::process_fidelity(&mle_process(targets, r)?.process)),
                n_boot,
                split_seed(seed, 101),
            )?;
            (
                Some(Estimate {
                    value: crate::tomography::process_fidelity(&est.process),
                    sd: boot.sd,
                }),
                Some(est.process.chi),
            )
        } else {
            (None, None)
        };
        Ok(SampledAnalysis {
            states,
            state_fidelities,
            mean_state_fidelity: Estimate {
                value: mean.estimate,
                sd: mean.sd,
            },
            process_fidelity,
            chi,
        })
    }

    pub fn shapes(&self) -> Result<Vec<(String, PhotonShape)>> {
        let mut out = Vec::new();
        for (k, corr) in self.correlations.iter().enumerate() {
            for basis in Basis::ALL {
                let shape = photon_shape(corr, basis, &self.params).binned(self.config.shape_bin_us * 1e-6)?;
                out.push((self.config.input_states[k].file_label(), shape));
            }
        }
        Ok(out)
    }
}

struct SampledAnalysis {
    states: Vec<DensityMatrix>,
    state_fidelities: Vec<Estimate>,
    mean_state_fidelity: Estimate,
    process_fidelity: Option<Estimate>,
    chi: Option<ComplexMatrix>,
}

/// Seconds to µs, rounded to femtoseconds so that round trips print cleanly.
fn to_us(t: f64) -> f64 {
    (t * 1e15).round() / 1e9
}

fn check_process(chi: &ComplexMatrix) -> Result<()> {
    let p = crate::linalg::Physicality::of(chi);
    if !p.within(crate::linalg::HERMITIAN_TOL, crate::linalg::TRACE_TOL, -1e-9) {
        return Err(Error::Unphysical {
            time: 0.0,
            detail: format!("process matrix: {p:?}"),
        });
    }
    Ok(())
}

fn sweep_row(w: &WindowReport) -> SweepRow {
    SweepRow {
        window_end_us: w.end_us,
        fidelity: w.process_fidelity_model.unwrap_or(w.mean_state_fidelity_model),
        fidelity_sd: w
            .process_fidelity
            .as_ref()
            .or(w.mean_state_fidelity.as_ref())
            .map(|e| e.sd),
        eff_detected: w.eff_detected,
        eff_internal: w.eff_internal,
    }
}

/// Cumulative windows [0, end] for every configured endpoint.
pub fn cumulative_sweep(prepared: &Prepared) -> Result<Vec<SweepRow>> {
    prepared
        .config
        .sweep_ends_us
        .par_iter()
        .enumerate()
        .map(|(k, &end)| {
            let w = DetectionWindow::from_us(0.0, end)?;
            Ok(sweep_row(&prepared.analyze_window(&w, 1000 + k as u64)?))
        })
        .collect()
}

/// Runs the full pipeline in memory.
pub fn run_experiment(config: &RunConfig) -> Result<RunReport> {
    let prepared = Prepared::new(config)?;
    let windows = config
        .windows
        .par_iter()
        .enumerate()
        .map(|(k, w)| prepared.analyze_window(&DetectionWindow::from_us(w.start_us, w.end_us)?, k as u64))
        .collect::<Result<Vec<_>>>()?;
    let sweep = cumulative_sweep(&prepared)?;
    let shapes = prepared
        .shapes()
        .map_err(|e| e.in_stage("emission"))?
        .into_iter()
        .map(|(state, s)| ShapeReport {
            state,
            basis: s.basis,
            time_us: s.times.iter().map(|&t| to_us(t)).collect(),
            rate1: s.rate_det1,
            rate2: s.rate_det2,
        })
        .collect();
    let mut warnings = Vec::new();
    if config.shots / config.input_states.len() as u64 == 0 {
        warnings.push("zero shots per input: no reconstructions were made".to_string());
    }
    Ok(RunReport {
        seed: config.seed,
        shots: config.shots,
        noise: config.noise,
        params: prepared.params.clone(),
        inputs: config.input_states.iter().map(|s| s.label()).collect(),
        dynamics: prepared.dynamics.clone(),
        windows,
        sweep,
        shapes,
        warnings,
    })
}

/// Writes report.json, sweep.csv, shapes_<state>_<basis>.csv and
/// matrices/*.json into `out`.
pub fn write_outputs(report: &RunReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("matrices"))?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;

    let mut sweep = String::from("window_end_us,fidelity,fidelity_sd,eff_detected,eff_internal\n");
    for r in &report.sweep {
        sweep.push_str(&format!(
            "{},{},{},{:e},{:e}\n",
            r.window_end_us,
            r.fidelity,
            r.fidelity_sd.map(|v| v.to_string()).unwrap_or_default(),
            r.eff_detected,
            r.eff_internal
        ));
    }
    fs::write(out.join("sweep.csv"), sweep)?;

    for s in &report.shapes {
        let shape = PhotonShape {
            basis: s.basis,
            times: s.time_us.iter().map(|t| t * 1e-6).collect(),
            rate_det1: s.rate1.clone(),
            rate_det2: s.rate2.clone(),
        };
        let mut buf = Vec::new();
        shape.write_csv(&mut buf)?;
        fs::write(out.join(format!("shapes_{}_{}.csv", s.state, s.basis)), buf)?;
    }

    let labels: Vec<String> = report
        .inputs
        .iter()
        .map(|l| InputSpec::Named(l.clone()).file_label())
        .collect();
    for (k, w) in report.windows.iter().enumerate() {
        let tag = format!("w{k}_{}-{}us", w.start_us, w.end_us);
        let put = |name: String, m: &MatrixJson| -> Result<()> {
            fs::write(out.join("matrices").join(name), serde_json::to_string_pretty(m)?)?;
            Ok(())
        };
        if let Some(m) = &w.chi_model {
            put(format!("{tag}_chi_model.json"), m)?;
        }
        if let Some(m) = &w.chi_mle {
            put(format!("{tag}_chi_mle.json"), m)?;
        }
        for (s, label) in w.states.iter().zip(&labels) {
            put(format!("{tag}_{label}_model.json"), &s.model_state)?;
            if let Some(m) = &s.mle_state {
                put(format!("{tag}_{label}_mle.json"), m)?;
            }
        }
    }
    Ok(())
}

/// Converts a polarization state matrix back from its JSON form.
pub fn matrix_from_json(m: &MatrixJson) -> Result<ComplexMatrix> {
    ComplexMatrix::try_from(m)
}

/// Unnormalized polarization matrix of `corr` in `window`, for reporting.
pub fn window_polarization(corr: &ModeCorrelations, window: &DetectionWindow, params: &SystemParams) -> Result<ComplexMatrix> {
    Ok(to_dynamic(&emission_matrix(corr, window, params)?.matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn named_inputs() {
        let names = ["S", "S'", "S-S'", "S+iS'"];
        let expected = [
            [c(1.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(1.0, 0.0)],
            [c(0.5f64.sqrt(), 0.0), c(-(0.5f64.sqrt()), 0.0)],
            [c(0.5f64.sqrt(), 0.0), c(0.0, 0.5f64.sqrt())],
        ];
        for (n, amps) in names.iter().zip(expected) {
            let (a, p) = InputSpec::Named((*n).into()).angles().unwrap();
            let psi = PureState::qubit(a, p);
            for k in 0..2 {
                assert_abs_diff_eq!((psi.amplitudes()[k] - amps[k]).norm(), 0.0, epsilon = 1e-12);
            }
        }
        assert!(InputSpec::Named("P".into()).angles().is_err());
        assert_eq!(InputSpec::Named("S+iS'".into()).file_label(), "SpiSp");
        assert_eq!(InputSpec::Named("S-S'".into()).file_label(), "SmSp");
    }

    #[test]
    fn prepared_ground_state() {
        let scheme = LevelScheme::default();
        let rho = prepare_input(0.0, 1.3, 1.0, &scheme, 1).unwrap();
        let space = HilbertSpace::new(scheme.len(), 1);
        let s = scheme.roles().unwrap().qubit[0];
        let i = space.index(s, 0, 0);
        assert_eq!(rho.dim(), 20);
        assert_abs_diff_eq!(rho.matrix()[(i, i)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn initialization_error_scales_coherence() {
        let q = qubit_input(FRAC_PI_4, FRAC_PI_2, 0.99).unwrap();
        assert_abs_diff_eq!(q.matrix()[(0, 1)].norm(), 0.99 * 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(q.matrix()[(0, 0)].re, 0.5, epsilon = 1e-14);
        assert!(qubit_input(0.0, 0.0, 1.1).is_err());

        let scheme = LevelScheme::default();
        let rho = prepare_input(FRAC_PI_4, PI, 1.0, &scheme, 1).unwrap();
        let r = scheme.roles().unwrap();
        let space = HilbertSpace::new(scheme.len(), 1);
        let (a, b) = (space.index(r.qubit[0], 0, 0), space.index(r.qubit[1], 0, 0));
        assert_abs_diff_eq!(rho.matrix()[(a, b)].re, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.purity(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = RunConfig::from_json_str(
            r#"{"params": {"Omega1": 20.0}, "input_states": ["S", {"alpha": 0.3, "phi": 1.0}],
                "windows": [{"start_us": 1, "end_us": 3}], "sweep_ends_us": [], "shots": 0}"#,
        )
        .unwrap();
        assert_eq!(cfg.input_states.len(), 2);
        assert_eq!(cfg.t_end_us, 55.0);
        assert!(RunConfig::from_json_str(r#"{"input_states": []}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"windows": [], "sweep_ends_us": []}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"sweep_ends_us": [4, 2]}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"windows": [{"start_us": 0, "end_us": 60}]}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"unknown": 1}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"bootstrap_resamples": 10}"#).is_err());
    }

    #[test]
    fn noise_toggles_strip_parameters() {
        let p = SystemParams::untuned();
        let off = NoiseToggles::all(false).apply(&p);
        assert_eq!(off.dark_rate, 0.0);
        assert_eq!(off.init_fidelity, 1.0);
        assert!(off.coherence_time.is_infinite());
        assert_eq!(NoiseToggles::all(true).apply(&p), p);
    }

    #[test]
    fn microsecond_rounding() {
        assert_eq!(to_us(55.0 * 1e-6), 55.0);
        assert_eq!(to_us(0.5e-6), 0.5);
    }
}
