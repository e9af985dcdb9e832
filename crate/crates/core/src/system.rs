//! Level scheme, experimental parameters and the operators of the
//! bichromatic Raman model: rotating-frame Hamiltonian, the off-resonant
//! Raman terms and the collapse operators.
//!
//! Frequencies are angular (rad/s) everywhere in memory. Configuration files
//! use MHz (ν = ω / 2π).

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, ZERO};

/// Bohr magneton over Planck's constant, MHz per gauss.
pub const BOHR_MHZ_PER_GAUSS: f64 = 1.399_624_493;
/// Landé factor of the S₁/₂ ground state.
pub const LANDE_S12: f64 = 2.002;
pub const LANDE_P32: f64 = 4.0 / 3.0;
pub const LANDE_D52: f64 = 6.0 / 5.0;

/// S₁/₂ ↔ P₃/₂ (393 nm) and D₅/₂ ↔ P₃/₂ (854 nm) line centres, MHz.
const NU_S_TO_P_MHZ: f64 = 761_905_012.0;
const NU_D_TO_P_MHZ: f64 = 350_862_882.0;

pub fn mhz(nu: f64) -> f64 {
    TAU * nu * 1e6
}

pub fn to_mhz(omega: f64) -> f64 {
    omega / TAU / 1e6
}

/// Ground-state Zeeman splitting g_J μ_B B / ħ in rad/s.
pub fn zeeman_splitting_from_field(b_gauss: f64) -> f64 {
    mhz(LANDE_S12 * BOHR_MHZ_PER_GAUSS * b_gauss)
}

/// Raman coupling after eliminating the intermediate level: G Ω g / (2Δ).
pub fn effective_coupling(omega: f64, g: f64, delta: f64, weight: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::Resonance);
    }
    Ok(weight * omega * g / (2.0 * delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    H,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub label: String,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityCoupling {
    pub lower: String,
    pub upper: String,
    pub mode: Mode,
    pub weight: f64,
}

/// A laser-driven transition. `drive` names the bichromatic component that is
/// near resonance; the other component couples the same transition off-resonantly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveCoupling {
    pub lower: String,
    pub upper: String,
    pub drive: u8,
}

/// Spontaneous decay `upper → lower` at rate `2γ · branching`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayChannel {
    pub upper: String,
    pub lower: String,
    pub branching: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    pub levels: Vec<Level>,
    pub cavity_couplings: Vec<CavityCoupling>,
    pub drive_couplings: Vec<DriveCoupling>,
    pub decay_channels: Vec<DecayChannel>,
}

/// Level indices playing the roles of the two-branch Raman scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeRoles {
    /// |S⟩, |S′⟩
    pub qubit: [usize; 2],
    /// |P⟩, |P′⟩
    pub intermediate: [usize; 2],
    /// |D⟩
    pub target: usize,
    pub modes: [Mode; 2],
    pub weights: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LevelFile {
    label: String,
    freq_mhz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemeFile {
    levels: Vec<LevelFile>,
    cavity_couplings: Vec<CavityCoupling>,
    drive_couplings: Vec<DriveCoupling>,
    decay_channels: Vec<DecayChannel>,
}

impl LevelScheme {
    /// Reduced five-level ⁴⁰Ca⁺ scheme S, S′, P, P′, D at field `b_gauss`,
    /// with energies referenced to |P⟩.
    ///
    /// The cavity weights and branching fractions are model inputs, not
    /// atomic data: G_V/G_H = 2 balances the two Raman branches at
    /// Ω₁/Ω₂ = 2, and the absolute weight together with the branching into
    /// D sets the photon generation rate against off-resonant scattering.
    pub fn calcium_reduced(b_gauss: f64) -> Self {
        let eps = BOHR_MHZ_PER_GAUSS * b_gauss;
        let p_shift = 0.5 * LANDE_P32 * eps;
        let s = -NU_S_TO_P_MHZ - 0.5 * LANDE_S12 * eps + p_shift;
        let levels = [
            ("S", s),
            ("S'", s + LANDE_S12 * eps),
            ("P", 0.0),
            ("P'", LANDE_P32 * eps),
            ("D", -NU_D_TO_P_MHZ + 0.5 * LANDE_D52 * eps + p_shift),
        ]
        .into_iter()
        .map(|(l, f)| Level {
            label: l.to_string(),
            omega: mhz(f),
        })
        .collect();

        let cav = |upper: &str, mode, weight| CavityCoupling {
            lower: "D".into(),
            upper: upper.into(),
            mode,
            weight,
        };
        let drive = |lower: &str, upper: &str, drive| DriveCoupling {
            lower: lower.into(),
            upper: upper.into(),
            drive,
        };
        let decay = |upper: &str, lower: &str, branching| DecayChannel {
            upper: upper.into(),
            lower: lower.into(),
            branching,
        };
        Self {
            levels,
            cavity_couplings: vec![cav("P", Mode::H, 0.38), cav("P'", Mode::V, 0.76)],
            drive_couplings: vec![drive("S", "P", 1), drive("S'", "P'", 2)],
            decay_channels: vec![
                decay("P", "S", 0.2),
                decay("P", "S'", 0.1),
                decay("P", "D", 0.7),
                decay("P'", "S'", 0.2),
                decay("P'", "S", 0.1),
                decay("P'", "D", 0.7),
            ],
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)?;
        let scheme = Self {
            levels: file
                .levels
                .into_iter()
                .map(|l| Level {
                    label: l.label,
                    omega: mhz(l.freq_mhz),
                })
                .collect(),
            cavity_couplings: file.cavity_couplings,
            drive_couplings: file.drive_couplings,
            decay_channels: file.decay_channels,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = SchemeFile {
            levels: self
                .levels
                .iter()
                .map(|l| LevelFile {
                    label: l.label.clone(),
                    freq_mhz: to_mhz(l.omega),
                })
                .collect(),
            cavity_couplings: self.cavity_couplings.clone(),
            drive_couplings: self.drive_couplings.clone(),
            decay_channels: self.decay_channels.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.label == label)
            .ok_or_else(|| Error::Scheme(format!("unknown level '{label}'")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Scheme("no levels".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if self.levels[..i].iter().any(|o| o.label == l.label) {
                return Err(Error::Scheme(format!("duplicate level label '{}'", l.label)));
            }
            if !l.omega.is_finite() {
                return Err(Error::Scheme(format!("level '{}' has non-finite energy", l.label)));
            }
        }
        for cc in &self.cavity_couplings {
            self.index(&cc.lower)?;
            self.index(&cc.upper)?;
            if !cc.weight.is_finite() {
                return Err(Error::Scheme("non-finite cavity weight".into()));
            }
        }
        for d in &self.drive_couplings {
            self.index(&d.lower)?;
            self.index(&d.upper)?;
            if d.drive != 1 && d.drive != 2 {
                return Err(Error::Scheme(format!("drive index {} not in {{1, 2}}", d.drive)));
            }
        }
        for ch in &self.decay_channels {
            self.index(&ch.upper)?;
            self.index(&ch.lower)?;
            if !(ch.branching >= 0.0) {
                return Err(Error::Scheme(format!(
                    "negative branching {} for {} -> {}",
                    ch.branching, ch.upper, ch.lower
                )));
            }
        }
        for l in &self.levels {
            let total: f64 = self
                .decay_channels
                .iter()
                .filter(|ch| ch.upper == l.label)
                .map(|ch| ch.branching)
                .sum();
            if total > 1.0 + 1e-9 {
                return Err(Error::Scheme(format!(
                    "branching out of '{}' sums to {total} > 1",
                    l.label
                )));
            }
        }
        Ok(())
    }

    /// Identifies S, S′, P, P′ and D from the drive and cavity couplings.
    pub fn roles(&self) -> Result<SchemeRoles> {
        let drive = |k: u8| -> Result<(usize, usize)> {
            let d = self
                .drive_couplings
                .iter()
                .find(|d| d.drive == k)
                .ok_or_else(|| Error::Scheme(format!("no coupling for drive {k}")))?;
            Ok((self.index(&d.lower)?, self.index(&d.upper)?))
        };
        let (s, p) = drive(1)?;
        let (s2, p2) = drive(2)?;
        let cavity = |upper: usize| -> Result<(usize, Mode, f64)> {
            let cc = self
                .cavity_couplings
                .iter()
                .find(|cc| cc.upper == self.levels[upper].label)
                .ok_or_else(|| {
                    Error::Scheme(format!(
                        "no cavity coupling from '{}'",
                        self.levels[upper].label
                    ))
                })?;
            Ok((self.index(&cc.lower)?, cc.mode, cc.weight))
        };
        let (d, m1, g1) = cavity(p)?;
        let (d2, m2, g2) = cavity(p2)?;
        if d != d2 {
            return Err(Error::Scheme("the two Raman branches end in different levels".into()));
        }
        Ok(SchemeRoles {
            qubit: [s, s2],
            intermediate: [p, p2],
            target: d,
            modes: [m1, m2],
            weights: [g1, g2],
        })
    }
}

impl Default for LevelScheme {
    fn default() -> Self {
        Self::calcium_reduced(4.5)
    }
}

/// Experimental rates and settings. Angular frequencies in rad/s, times in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub g: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub omega_l1: f64,
    pub omega_l2: f64,
    pub omega_c: f64,
    pub b_gauss: f64,
    pub zeeman_splitting: f64,
    pub motion_factor: f64,
    pub n_max: usize,
    pub path_efficiency: f64,
    /// Dark counts per detector, 1/s.
    pub dark_rate: f64,
    pub init_fidelity: f64,
    pub coherence_time: f64,
    pub laser_linewidth: f64,
}

/// How the laser and cavity frequencies are chosen relative to the level scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RamanTuning {
    /// ω_S + ω_l1 = ω_D + ω_C = ω_S′ + ω_l2 for the bare level energies.
    Bare,
    /// Same conditions for the light-shifted energies, including the shifts
    /// from the off-resonant drive components when `off_resonant` is set.
    LightShifted { off_resonant: bool },
}

impl SystemParams {
    /// Default parameters without laser/cavity frequencies; call [`Self::tune`].
    pub fn untuned() -> Self {
        let b = 4.5;
        Self {
            g: mhz(1.4),
            kappa: mhz(0.05),
            gamma: mhz(11.5),
            omega1: mhz(17.5),
            omega2: mhz(8.75),
            delta1: mhz(400.0),
            delta2: mhz(400.0),
            omega_l1: 0.0,
            omega_l2: 0.0,
            omega_c: 0.0,
            b_gauss: b,
            zeeman_splitting: zeeman_splitting_from_field(b),
            motion_factor: 0.63,
            n_max: 1,
            path_efficiency: 0.068,
            dark_rate: 5.6,
            init_fidelity: 0.99,
            coherence_time: 110e-6,
            laser_linewidth: mhz(0.001),
        }
    }

    /// Defaults tuned to the light-shifted Raman resonance of `scheme`,
    /// including the off-resonant drive components.
    pub fn tuned_for(scheme: &LevelScheme) -> Result<Self> {
        let mut p = Self::untuned();
        p.tune(
            scheme,
            RamanTuning::LightShifted { off_resonant: true },
            0.0,
        )?;
        Ok(p)
    }

    /// Vacuum Rabi frequency reduced by ion motion.
    pub fn g_motion(&self) -> f64 {
        self.g * self.motion_factor
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("g", self.g),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("dark_rate", self.dark_rate),
            ("laser_linewidth", self.laser_linewidth),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.motion_factor > 0.0 && self.motion_factor <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "motion_factor {} outside (0, 1]",
                self.motion_factor
            )));
        }
        for (name, v) in [
            ("path_efficiency", self.path_efficiency),
            ("init_fidelity", self.init_fidelity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.coherence_time > 0.0) {
            return Err(Error::InvalidParameter("coherence_time must be > 0".into()));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidParameter("photon truncation n_max must be >= 1".into()));
        }
        if self.b_gauss < 0.0 {
            return Err(Error::InvalidParameter("B must be >= 0".into()));
        }
        Ok(())
    }

    /// Sets ω_l1, ω_l2 and ω_C so that both Raman transitions are resonant.
    ///
    /// Drive 1 is detuned by Δ₁ below its transition. `mismatch` is added to
    /// ω_l2 afterwards, detuning the bichromatic difference frequency from
    /// the qubit splitting. Δ₂ is updated to the resulting detuning of drive 2.
    pub fn tune(&mut self, scheme: &LevelScheme, tuning: RamanTuning, mismatch: f64) -> Result<()> {
        let r = scheme.roles()?;
        let w = |i: usize| scheme.levels[i].omega;
        let [s, s2] = r.qubit;
        let [p, p2] = r.intermediate;
        self.omega_l1 = w(p) - w(s) - self.delta1;
        self.omega_l2 = self.omega_l1 - (w(s2) - w(s)) + mismatch;
        self.omega_c = w(s) + self.omega_l1 - w(r.target);

        if let RamanTuning::LightShifted { off_resonant } = tuning {
            // the shifts are perturbative in Ω/Δ
            if self.delta1 == 0.0 {
                return Err(Error::Resonance);
            }
            let space = HilbertSpace::new(scheme.len(), self.n_max);
            let idx_s = space.index(s, 0, 0);
            let idx_s2 = space.index(s2, 0, 0);
            let d_states = [0, 1].map(|k| space.single_photon(r.target, r.modes[k]));
            for _ in 0..8 {
                let h = build_full_hamiltonian(self, scheme, off_resonant)?;
                let dressed = |i: usize| h.static_part[(i, i)].re + second_order_shift(&h, i);
                let e_s = dressed(idx_s);
                self.omega_l2 += e_s + mismatch - dressed(idx_s2);
                let e_d = 0.5 * (dressed(d_states[0]) + dressed(d_states[1]));
                self.omega_c += e_s - e_d;
            }
        }
        self.delta2 = w(p2) - w(s2) - self.omega_l2;
        if !(self.omega_l2.is_finite() && self.omega_c.is_finite()) || self.delta2 == 0.0 {
            return Err(Error::Resonance);
        }
        Ok(())
    }
}

/// atom ⊗ H-mode ⊗ V-mode, each mode truncated at `n_max` photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertSpace {
    pub n_levels: usize,
    pub n_max: usize,
}

impl HilbertSpace {
    pub fn new(n_levels: usize, n_max: usize) -> Self {
        Self { n_levels, n_max }
    }

    pub fn photon_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        self.n_levels * self.photon_dim() * self.photon_dim()
    }

    /// Subsystem dimensions in tensor order.
    pub fn dims(&self) -> [usize; 3] {
        [self.n_levels, self.photon_dim(), self.photon_dim()]
    }

    pub fn index(&self, level: usize, n_h: usize, n_v: usize) -> usize {
        let p = self.photon_dim();
        (level * p + n_h) * p + n_v
    }

    pub fn decompose(&self, index: usize) -> (usize, usize, usize) {
        let p = self.photon_dim();
        (index / (p * p), (index / p) % p, index % p)
    }

    pub fn single_photon(&self, level: usize, mode: Mode) -> usize {
        match mode {
            Mode::H => self.index(level, 1, 0),
            Mode::V => self.index(level, 0, 1),
        }
    }

    /// |to⟩⟨from| on the atom, identity on the modes.
    pub fn atom_op(&self, to: usize, from: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim(), self.dim());
        let p = self.photon_dim();
        for nh in 0..p {
            for nv in 0..p {
                m[(self.index(to, nh, nv), self.index(from, nh, nv))] = c(1.0, 0.0);
            }
        }
        m
    }

    /// Annihilation operator of one cavity mode.
    pub fn annihilation(&self, mode: Mode) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim(), self.dim());
        let p = self.photon_dim();
        for l in 0..self.n_levels {
            for nh in 0..p {
                for nv in 0..p {
                    let from = self.index(l, nh, nv);
                    match mode {
                        Mode::H if nh > 0 => {
                            m[(self.index(l, nh - 1, nv), from)] = c((nh as f64).sqrt(), 0.0)
                        }
                        Mode::V if nv > 0 => {
                            m[(self.index(l, nh, nv - 1), from)] = c((nv as f64).sqrt(), 0.0)
                        }
                        _ => {}
                    }
                }
            }
        }
        m
    }

    /// |to⟩⟨from| ⊗ a_mode
    fn atom_op_with_annihilation(&self, to: usize, from: usize, mode: Mode) -> ComplexMatrix {
        self.atom_op(to, from) * self.annihilation(mode)
    }
}

/// Term `matrix · e^{i·frequency·t}` of a Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatingTerm {
    pub matrix: ComplexMatrix,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDependentHamiltonian {
    pub static_part: ComplexMatrix,
    pub oscillating_parts: Vec<OscillatingTerm>,
}

impl TimeDependentHamiltonian {
    pub fn at(&self, t: f64) -> ComplexMatrix {
        self.oscillating_parts
            .iter()
            .fold(self.static_part.clone(), |acc, part| {
                acc + &part.matrix * C64::from_polar(1.0, part.frequency * t)
            })
    }

    pub fn dim(&self) -> usize {
        self.static_part.nrows()
    }
}

/// Frame frequency θ_k of each atomic level such that every drive and
/// cavity coupling becomes time independent. The root of each connected
/// component keeps its bare energy (|P⟩ for the default scheme).
fn frame_frequencies(params: &SystemParams, scheme: &LevelScheme) -> Result<Vec<f64>> {
    let n = scheme.len();
    // edges: (lower, upper, θ_upper - θ_lower)
    let mut edges = Vec::new();
    for d in &scheme.drive_couplings {
        let wl = if d.drive == 1 { params.omega_l1 } else { params.omega_l2 };
        edges.push((scheme.index(&d.lower)?, scheme.index(&d.upper)?, wl));
    }
    for cc in &scheme.cavity_couplings {
        edges.push((scheme.index(&cc.lower)?, scheme.index(&cc.upper)?, params.omega_c));
    }
    let mut theta: Vec<Option<f64>> = vec![None; n];
    let mut roots: Vec<usize> = Vec::new();
    if let Some(first) = scheme.drive_couplings.first() {
        roots.push(scheme.index(&first.upper)?);
    }
    roots.extend(0..n);
    for root in roots {
        if theta[root].is_some() {
            continue;
        }
        theta[root] = Some(scheme.levels[root].omega);
        let mut queue = VecDeque::from([root]);
        while let Some(k) = queue.pop_front() {
            let tk = theta[k].unwrap_or_default();
            for &(lo, up, w) in &edges {
                let (other, value) = if lo == k {
                    (up, tk + w)
                } else if up == k {
                    (lo, tk - w)
                } else {
                    continue;
                };
                match theta[other] {
                    None => {
                        theta[other] = Some(value);
                        queue.push_back(other);
                    }
                    Some(existing) => {
                        let scale = existing.abs().max(value.abs()).max(1.0);
                        if (existing - value).abs() > 1e-9 * scale {
                            return Err(Error::Scheme(
                                "couplings form a loop that no rotating frame makes static".into(),
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(theta.into_iter().map(|t| t.unwrap_or_default()).collect())
}

/// Rotating-frame Hamiltonian with only the near-resonant couplings.
pub fn build_rotating_hamiltonian(params: &SystemParams, scheme: &LevelScheme) -> Result<ComplexMatrix> {
    Ok(build_full_hamiltonian(params, scheme, false)?.static_part)
}

/// Rotating-frame Hamiltonian plus, if requested, the off-resonant couplings
/// of each drive component to the other component's transition. Those terms
/// oscillate at ±(ω_l1 − ω_l2).
pub fn build_full_hamiltonian(
    params: &SystemParams,
    scheme: &LevelScheme,
    include_off_resonant: bool,
) -> Result<TimeDependentHamiltonian> {
    params.validate()?;
    scheme.validate()?;
    let space = HilbertSpace::new(scheme.len(), params.n_max);
    let theta = frame_frequencies(params, scheme)?;
    let dim = space.dim();

    let mut h = ComplexMatrix::zeros(dim, dim);
    for (k, level) in scheme.levels.iter().enumerate() {
        let e = level.omega - theta[k];
        for nh in 0..space.photon_dim() {
            for nv in 0..space.photon_dim() {
                let i = space.index(k, nh, nv);
                h[(i, i)] = c(e, 0.0);
            }
        }
    }

    let rabi = |k: u8| if k == 1 { params.omega1 } else { params.omega2 };
    let laser = |k: u8| if k == 1 { params.omega_l1 } else { params.omega_l2 };
    let delta = params.omega_l1 - params.omega_l2;
    let mut plus = ComplexMatrix::zeros(dim, dim);

    for d in &scheme.drive_couplings {
        let lo = scheme.index(&d.lower)?;
        let up = scheme.index(&d.upper)?;
        let raise = space.atom_op(up, lo);
        let coupling = &raise * c(rabi(d.drive) / 2.0, 0.0);
        h += &coupling + coupling.adjoint();

        if include_off_resonant {
            let other = 3 - d.drive;
            let amp = rabi(other) / 2.0;
            if amp != 0.0 {
                // e^{i(ω_l,own − ω_l,other)t} |U⟩⟨L|
                let freq = laser(d.drive) - laser(other);
                let term = &raise * c(amp, 0.0);
                if freq == 0.0 {
                    h += &term + term.adjoint();
                } else if (freq - delta).abs() <= (freq + delta).abs() {
                    plus += term;
                } else {
                    plus += term.adjoint();
                }
            }
        }
    }

    let gm = params.g_motion();
    for cc in &scheme.cavity_couplings {
        let lo = scheme.index(&cc.lower)?;
        let up = scheme.index(&cc.upper)?;
        let term = space.atom_op_with_annihilation(up, lo, cc.mode) * c(gm * cc.weight, 0.0);
        h += &term + term.adjoint();
    }

    let mut parts = Vec::new();
    if include_off_resonant && delta != 0.0 && plus.iter().any(|z| *z != ZERO) {
        let minus = plus.adjoint();
        parts.push(OscillatingTerm {
            matrix: plus,
            frequency: delta,
        });
        parts.push(OscillatingTerm {
            matrix: minus,
            frequency: -delta,
        });
    }
    Ok(TimeDependentHamiltonian {
        static_part: h,
        oscillating_parts: parts,
    })
}

/// Second-order energy shift of basis state `k` from all couplings to other
/// basis states, static and oscillating.
pub fn second_order_shift(h: &TimeDependentHamiltonian, k: usize) -> f64 {
    let h0 = &h.static_part;
    let ek = h0[(k, k)].re;
    let mut shift = 0.0;
    for u in 0..h.dim() {
        if u == k {
            continue;
        }
        let amp = h0[(u, k)].norm_sqr();
        if amp > 0.0 {
            shift += amp / (ek - h0[(u, u)].re);
        }
        for part in &h.oscillating_parts {
            let amp = part.matrix[(u, k)].norm_sqr();
            if amp > 0.0 {
                shift += amp / (ek - h0[(u, u)].re - part.frequency);
            }
        }
    }
    shift
}

/// Spontaneous decay, cavity loss through both modes and laser dephasing.
pub fn build_collapse_operators(params: &SystemParams, scheme: &LevelScheme) -> Result<Vec<ComplexMatrix>> {
    params.validate()?;
    scheme.validate()?;
    let space = HilbertSpace::new(scheme.len(), params.n_max);
    let mut ops = Vec::new();
    for ch in &scheme.decay_channels {
        let rate = 2.0 * params.gamma * ch.branching;
        if rate > 0.0 {
            let op = space.atom_op(scheme.index(&ch.lower)?, scheme.index(&ch.upper)?);
            ops.push(op * c(rate.sqrt(), 0.0));
        }
    }
    if params.kappa > 0.0 {
        let amp = c((2.0 * params.kappa).sqrt(), 0.0);
        ops.push(space.annihilation(Mode::H) * amp);
        ops.push(space.annihilation(Mode::V) * amp);
    }
    if params.laser_linewidth > 0.0 {
        let mut proj = ComplexMatrix::zeros(space.dim(), space.dim());
        let mut seen = Vec::new();
        for d in &scheme.drive_couplings {
            let lo = scheme.index(&d.lower)?;
            if !seen.contains(&lo) {
                seen.push(lo);
                proj += space.atom_op(lo, lo);
            }
        }
        if !seen.is_empty() {
            ops.push(proj * c(params.laser_linewidth.sqrt(), 0.0));
        }
    }
    Ok(ops)
}

/// Adiabatically eliminated model on {|S,0⟩, |S′,0⟩, |D,1⟩} in the same
/// rotating frame as [`build_rotating_hamiltonian`], with the AC-Stark
/// shifts of all three states. |D,1⟩ is a single cavity excitation coupled
/// to both intermediate levels.
pub fn build_effective_three_level(params: &SystemParams, scheme: &LevelScheme) -> Result<ComplexMatrix> {
    let r = scheme.roles()?;
    let theta = frame_frequencies(params, scheme)?;
    let e = |i: usize| scheme.levels[i].omega - theta[i];
    let [s, s2] = r.qubit;
    let [p, p2] = r.intermediate;
    let gm = params.g_motion();
    let [w1, w2] = r.weights;

    let delta1 = e(p) - e(s);
    let delta2 = e(p2) - e(s2);
    let g1 = effective_coupling(params.omega1, gm, delta1, w1)?;
    let g2 = effective_coupling(params.omega2, gm, delta2, w2)?;

    let ed = e(r.target);
    if ed == e(p) || ed == e(p2) {
        return Err(Error::Resonance);
    }
    let shift_s = (params.omega1 / 2.0).powi(2) / (e(s) - e(p));
    let shift_s2 = (params.omega2 / 2.0).powi(2) / (e(s2) - e(p2));
    let shift_d = (gm * w1).powi(2) / (ed - e(p)) + (gm * w2).powi(2) / (ed - e(p2));

    let mut h = ComplexMatrix::zeros(3, 3);
    h[(0, 0)] = c(e(s) + shift_s, 0.0);
    h[(1, 1)] = c(e(s2) + shift_s2, 0.0);
    h[(2, 2)] = c(ed + shift_d, 0.0);
    h[(2, 0)] = c(g1, 0.0);
    h[(0, 2)] = c(g1, 0.0);
    h[(2, 1)] = c(g2, 0.0);
    h[(1, 2)] = c(g2, 0.0);
    Ok(h)
}

/// Overrides for [`SystemParams`] as read from a JSON config. Frequencies in
/// MHz, the magnetic field as `B_gauss`, times in µs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub g: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(rename = "Omega1")]
    pub omega1: Option<f64>,
    #[serde(rename = "Omega2")]
    pub omega2: Option<f64>,
    #[serde(rename = "Delta1")]
    pub delta1: Option<f64>,
    pub omega_l1: Option<f64>,
    pub omega_l2: Option<f64>,
    #[serde(rename = "omega_C")]
    pub omega_c: Option<f64>,
    #[serde(rename = "B_gauss")]
    pub b_gauss: Option<f64>,
    pub motion_factor: Option<f64>,
    pub n_max: Option<usize>,
    pub path_efficiency: Option<f64>,
    pub dark_rate_hz: Option<f64>,
    pub init_fidelity: Option<f64>,
    pub coherence_time_us: Option<f64>,
    pub laser_linewidth: Option<f64>,
    pub tuning: Option<RamanTuning>,
    /// Offset of the bichromatic difference frequency from resonance, MHz.
    pub raman_mismatch: Option<f64>,
}

impl ParamsFile {
    /// Applies the overrides to the defaults and tunes the lasers unless all
    /// three of ω_l1, ω_l2 and ω_C are given explicitly.
    pub fn resolve(&self, scheme: &LevelScheme) -> Result<SystemParams> {
        let mut p = SystemParams::untuned();
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = mhz(v);
            }
        };
        set(&mut p.g, self.g);
        set(&mut p.kappa, self.kappa);
        set(&mut p.gamma, self.gamma);
        set(&mut p.omega1, self.omega1);
        set(&mut p.omega2, self.omega2);
        set(&mut p.delta1, self.delta1);
        set(&mut p.laser_linewidth, self.laser_linewidth);
        if let Some(b) = self.b_gauss {
            p.b_gauss = b;
            p.zeeman_splitting = zeeman_splitting_from_field(b);
        }
        if let Some(v) = self.motion_factor {
            p.motion_factor = v;
        }
        if let Some(v) = self.n_max {
            p.n_max = v;
        }
        if let Some(v) = self.path_efficiency {
            p.path_efficiency = v;
        }
        if let Some(v) = self.dark_rate_hz {
            p.dark_rate = v;
        }
        if let Some(v) = self.init_fidelity {
            p.init_fidelity = v;
        }
        if let Some(v) = self.coherence_time_us {
            p.coherence_time = v * 1e-6;
        }
        p.validate()?;

        match (self.omega_l1, self.omega_l2, self.omega_c) {
            (Some(l1), Some(l2), Some(wc)) => {
                p.omega_l1 = mhz(l1);
                p.omega_l2 = mhz(l2);
                p.omega_c = mhz(wc);
                if let Ok(r) = scheme.roles() {
                    let w = |i: usize| scheme.levels[i].omega;
                    p.delta1 = w(r.intermediate[0]) - w(r.qubit[0]) - p.omega_l1;
                    p.delta2 = w(r.intermediate[1]) - w(r.qubit[1]) - p.omega_l2;
                }
            }
            (None, None, None) => {
                let tuning = self
                    .tuning
                    .unwrap_or(RamanTuning::LightShifted { off_resonant: true });
                p.tune(scheme, tuning, mhz(self.raman_mismatch.unwrap_or(0.0)))?;
            }
            _ => {
                return Err(Error::Config(
                    "omega_l1, omega_l2 and omega_C must be given together or not at all".into(),
                ))
            }
        }
        Ok(p)
    }
}
