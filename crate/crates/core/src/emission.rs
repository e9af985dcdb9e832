//! Photon observables from the cavity field: detector count rates per
//! polarization basis, windowed polarization matrices, efficiencies and the
//! detection-noise model.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::EvolutionResult;
use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, ComplexVector, DensityMatrix, MatrixJson, PureState, ZERO};
use crate::system::{HilbertSpace, Mode, SystemParams};

pub type Matrix2c = Matrix2<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    HV,
    DA,
    RL,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::HV, Basis::DA, Basis::RL];

    /// Polarization vectors (in H, V components) seen by detector 1 and 2:
    /// H/V, D = (H+V)/√2 / A = (H−V)/√2, R = (H+iV)/√2 / L = (H−iV)/√2.
    pub fn vectors(self) -> [[C64; 2]; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Basis::HV => [[c(1.0, 0.0), ZERO], [ZERO, c(1.0, 0.0)]],
            Basis::DA => [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]],
            Basis::RL => [[c(s, 0.0), c(0.0, s)], [c(s, 0.0), c(0.0, -s)]],
        }
    }

    pub fn states(self) -> [PureState; 2] {
        self.vectors().map(|v| {
            PureState::new(ComplexVector::from_vec(v.to_vec())).expect("unit vector")
        })
    }

    /// ⟨u|ρ|u⟩ for both detector projectors.
    pub fn probabilities(self, rho: &Matrix2c) -> [f64; 2] {
        self.vectors().map(|u| expect(rho, &u))
    }

    pub fn name(self) -> &'static str {
        match self {
            Basis::HV => "HV",
            Basis::DA => "DA",
            Basis::RL => "RL",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HV" => Ok(Basis::HV),
            "DA" => Ok(Basis::DA),
            "RL" => Ok(Basis::RL),
            _ => Err(Error::Config(format!("unknown basis '{s}'"))),
        }
    }
}

fn expect(rho: &Matrix2c, u: &[C64; 2]) -> f64 {
    let mut acc = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            acc += u[i].conj() * rho[(i, j)] * u[j];
        }
    }
    acc.re
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionWindow {
    pub t_start: f64,
    pub t_end: f64,
}

impl DetectionWindow {
    /// A zero-length window is allowed and collects nothing.
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start >= 0.0 && t_end >= t_start && t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window [{t_start}, {t_end}] must satisfy 0 <= start <= end"
            )));
        }
        Ok(Self { t_start, t_end })
    }

    pub fn from_us(start_us: f64, end_us: f64) -> Result<Self> {
        Self::new(start_us * 1e-6, end_us * 1e-6)
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Operators a_j†a_i whose expectation values form C_ij, named "HH", "HV", …
pub fn correlation_operators(space: &HilbertSpace) -> Vec<(String, ComplexMatrix)> {
    let a = [space.annihilation(Mode::H), space.annihilation(Mode::V)];
    let names = ["H", "V"];
    let mut out = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            out.push((format!("{}{}", names[i], names[j]), a[j].adjoint() * &a[i]));
        }
    }
    out
}

/// Equal-time cavity-mode correlations C_ij(t) = ⟨a_j†a_i⟩, i.e. the
/// (unnormalized) polarization state of the intracavity photon.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCorrelations {
    pub times: Vec<f64>,
    pub values: Vec<Matrix2c>,
}

impl ModeCorrelations {
    /// Uses the tracked series from [`correlation_operators`] if present,
    /// otherwise the stored states.
    pub fn from_result(result: &EvolutionResult, space: &HilbertSpace) -> Result<Self> {
        let names = ["HH", "HV", "VH", "VV"];
        let tracked: Option<Vec<&[C64]>> = names.iter().map(|n| result.tracked_series(n)).collect();
        let values = if let Some(series) = tracked {
            (0..result.times.len())
                .map(|k| Matrix2c::new(series[0][k], series[1][k], series[2][k], series[3][k]))
                .collect()
        } else {
            if result.states.len() != result.times.len() {
                return Err(Error::NoData(
                    "evolution result holds neither states nor mode correlations".into(),
                ));
            }
            let ops = correlation_operators(space);
            let mut v = Vec::with_capacity(result.states.len());
            for rho in &result.states {
                if rho.nrows() != space.dim() {
                    return Err(Error::Dimension(format!(
                        "state of dimension {} on a space of dimension {}",
                        rho.nrows(),
                        space.dim()
                    )));
                }
                let e: Vec<C64> = ops.iter().map(|(_, op)| (op * rho).trace()).collect();
                v.push(Matrix2c::new(e[0], e[1], e[2], e[3]));
            }
            v
        };
        Ok(Self {
            times: result.times.clone(),
            values,
        })
    }

    /// Σ_k w_k C_k for correlations on a common grid.
    pub fn combine(terms: &[(C64, &ModeCorrelations)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::NoData("nothing to combine".into()))?
            .1;
        if terms.iter().any(|(_, m)| m.times != first.times) {
            return Err(Error::Dimension("correlations on different time grids".into()));
        }
        let values = (0..first.times.len())
            .map(|k| terms.iter().map(|(w, m)| m.values[k] * *w).sum())
            .collect();
        Ok(Self {
            times: first.times.clone(),
            values,
        })
    }

    /// Total photon number ⟨a_H†a_H + a_V†a_V⟩.
    pub fn photon_number(&self) -> Vec<f64> {
        self.values.iter().map(|m| m.trace().re).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonShape {
    pub basis: Basis,
    pub times: Vec<f64>,
    /// Detection rate per attempt, 1/s.
    pub rate_det1: Vec<f64>,
    pub rate_det2: Vec<f64>,
}

/// Detector rates 2κ η ⟨u|C(t)|u⟩ for the two projectors of `basis`.
pub fn photon_shape(corr: &ModeCorrelations, basis: Basis, params: &SystemParams) -> PhotonShape {
    let scale = 2.0 * params.kappa * params.path_efficiency;
    let mut r1 = Vec::with_capacity(corr.times.len());
    let mut r2 = Vec::with_capacity(corr.times.len());
    for m in &corr.values {
        let [p1, p2] = basis.probabilities(m);
        r1.push((scale * p1).max(0.0));
        r2.push((scale * p2).max(0.0));
    }
    PhotonShape {
        basis,
        times: corr.times.clone(),
        rate_det1: r1,
        rate_det2: r2,
    }
}

impl PhotonShape {
    /// Mean rate per bin of width `width`, starting at the first grid time.
    /// Bins are labelled by their start time.
    pub fn binned(&self, width: f64) -> Result<PhotonShape> {
        let (Some(&t0), Some(&t1)) = (self.times.first(), self.times.last()) else {
            return Err(Error::NoData("empty photon shape".into()));
        };
        if !(width > 0.0) {
            return Err(Error::InvalidParameter("bin width must be positive".into()));
        }
        let n_bins = (((t1 - t0) / width) - 1e-9).ceil().max(1.0) as usize;
        let mut out = PhotonShape {
            basis: self.basis,
            times: Vec::new(),
            rate_det1: Vec::new(),
            rate_det2: Vec::new(),
        };
        for b in 0..n_bins {
            let lo = t0 + b as f64 * width;
            let hi = (lo + width).min(t1);
            let len = hi - lo;
            out.times.push(lo);
            out.rate_det1.push(integrate_series(&self.times, &self.rate_det1, lo, hi)? / len);
            out.rate_det2.push(integrate_series(&self.times, &self.rate_det2, lo, hi)? / len);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time_us,rate1,rate2,basis")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{:e},{:e},{}",
                self.times[k] * 1e6,
                self.rate_det1[k],
                self.rate_det2[k],
                self.basis
            )?;
        }
        Ok(())
    }
}

/// Trapezoid weights over [lo, hi] for samples on `times`, with the window
/// edges linearly interpolated. Returns (index, weight) pairs.
/// Phase of the H/V coherence integrated over consecutive bins of `width`
/// covering [t_start, t_end], unwrapped. Returns (bin centres, phases).
pub fn coherence_phases(
    corr: &ModeCorrelations,
    t_start: f64,
    t_end: f64,
    width: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(width > 0.0) || !(t_end > t_start) {
        return Err(Error::InvalidParameter("need width > 0 and t_end > t_start".into()));
    }
    let re: Vec<f64> = corr.values.iter().map(|m| m[(0, 1)].re).collect();
    let im: Vec<f64> = corr.values.iter().map(|m| m[(0, 1)].im).collect();
    let n_bins = (((t_end - t_start) / width) - 1e-9).ceil().max(1.0) as usize;
    let mut centres = Vec::with_capacity(n_bins);
    let mut phases: Vec<f64> = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let lo = t_start + b as f64 * width;
        let hi = (lo + width).min(t_end);
        let z = c(
            integrate_series(&corr.times, &re, lo, hi)?,
            integrate_series(&corr.times, &im, lo, hi)?,
        );
        if z.norm() == 0.0 {
            return Err(Error::NoData(format!("no coherence in bin starting at {lo:e} s")));
        }
        let mut phi = z.arg();
        if let Some(&prev) = phases.last() {
            phi -= (2.0 * std::f64::consts::PI) * ((phi - prev) / (2.0 * std::f64::consts::PI)).round();
        }
        centres.push(0.5 * (lo + hi));
        phases.push(phi);
    }
    Ok((centres, phases))
}

fn window_weights(times: &[f64], lo: f64, hi: f64) -> Result<Vec<(usize, f64)>> {
    let (Some(&t0), Some(&t1)) = (times.first(), times.last()) else {
        return Err(Error::EmptyWindow { start: lo, end: hi });
    };
    let slack = 1e-9 * (t1 - t0).abs().max(f64::MIN_POSITIVE);
    if lo < t0 - slack || hi > t1 + slack || times.len() < 2 && hi > lo {
        return Err(Error::EmptyWindow { start: lo, end: hi });
    }
    let (lo, hi) = (lo.max(t0), hi.min(t1));
    let mut w: Vec<(usize, f64)> = Vec::new();
    if hi <= lo {
        return Ok(w);
    }
    let mut add = |i: usize, v: f64| {
        if let Some(last) = w.last_mut() {
            if last.0 == i {
                last.1 += v;
                return;
            }
        }
        w.push((i, v));
    };
    let start = times.partition_point(|&t| t <= lo).saturating_sub(1);
    for k in start..times.len() - 1 {
        let (a, b) = (times[k], times[k + 1]);
        if a >= hi {
            break;
        }
        let x0 = a.max(lo);
        let x1 = b.min(hi);
        if x1 <= x0 {
            continue;
        }
        // linear interpolant f(x) = f_a (b−x)/(b−a) + f_b (x−a)/(b−a)
        let len = x1 - x0;
        let mid = 0.5 * (x0 + x1);
        let fb = (mid - a) / (b - a);
        add(k, len * (1.0 - fb));
        add(k + 1, len * fb);
    }
    Ok(w)
}

fn integrate_series(times: &[f64], values: &[f64], lo: f64, hi: f64) -> Result<f64> {
    Ok(window_weights(times, lo, hi)?
        .into_iter()
        .map(|(i, w)| w * values[i])
        .sum())
}

/// Unnormalized photon polarization state collected in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationMatrix {
    pub matrix: Matrix2c,
    /// Trace of `matrix`: the probability of a photon in the window.
    pub weight: f64,
    /// Flux-weighted mean emission time within the window, seconds.
    pub mean_time: f64,
}

#[derive(Serialize)]
struct PolarizationJson {
    matrix: MatrixJson,
    weight: f64,
    mean_time_us: f64,
}

pub fn to_dynamic(m: &Matrix2c) -> ComplexMatrix {
    ComplexMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

pub fn to_static(m: &ComplexMatrix) -> Result<Matrix2c> {
    if m.shape() != (2, 2) {
        return Err(Error::Dimension(format!("expected 2x2, got {:?}", m.shape())));
    }
    Ok(Matrix2c::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]))
}

impl PolarizationMatrix {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PolarizationJson {
            matrix: MatrixJson::from(&to_dynamic(&self.matrix)),
            weight: self.weight,
            mean_time_us: self.mean_time * 1e6,
        })?)
    }

    /// Unit-trace state; fails for an empty window.
    pub fn normalized(&self) -> Result<DensityMatrix> {
        if !(self.weight > 0.0) {
            return Err(Error::NoData("no photon flux in window".into()));
        }
        DensityMatrix::new(crate::linalg::hermitian_part(&to_dynamic(&(self.matrix / c(self.weight, 0.0)))))
    }
}

/// ∫_window 2κ C(t) dt · path_efficiency.
pub fn emission_matrix(
    corr: &ModeCorrelations,
    window: &DetectionWindow,
    params: &SystemParams,
) -> Result<PolarizationMatrix> {
    emission_matrix_with_efficiency(corr, window, params.kappa, params.path_efficiency)
}

fn emission_matrix_with_efficiency(
    corr: &ModeCorrelations,
    window: &DetectionWindow,
    kappa: f64,
    efficiency: f64,
) -> Result<PolarizationMatrix> {
    let weights = window_weights(&corr.times, window.t_start, window.t_end)?;
    let scale = 2.0 * kappa * efficiency;
    let mut m = Matrix2c::zeros();
    let mut first_moment = 0.0;
    for (i, w) in weights {
        m += corr.values[i] * c(w * scale, 0.0);
        first_moment += w * scale * corr.values[i].trace().re * corr.times[i];
    }
    // exact Hermitian symmetry and a non-negative spectrum
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let weight = h.trace().re;
    let mean_time = if weight > 0.0 {
        first_moment / weight
    } else {
        0.5 * (window.t_start + window.t_end)
    };
    Ok(PolarizationMatrix {
        matrix: h,
        weight,
        mean_time,
    })
}

/// Photon probability in the window. `internal` counts every photon leaving
/// the cavity (no path loss); otherwise the path efficiency applies.
pub fn process_efficiency(
    corr: &ModeCorrelations,
    window: &DetectionWindow,
    params: &SystemParams,
    internal: bool,
) -> Result<f64> {
    let eff = if internal { 1.0 } else { params.path_efficiency };
    Ok(emission_matrix_with_efficiency(corr, window, params.kappa, eff)?.weight)
}

/// Polarization state after detection noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyPolarization {
    pub state: DensityMatrix,
    /// Signal weight of the input, untouched.
    pub weight: f64,
    /// Dark-count fraction w = d / (d + s).
    pub dark_fraction: f64,
}

/// Dark-count admixture, imperfect initialization and dephasing.
///
/// ρ′ = (1 − w) ρ/s + w I/2 with w = d/(d+s), d = dark_rate · n_detectors ·
/// window length; then the off-diagonals are scaled by init_fidelity and by
/// e^{−2t̄/τ} with t̄ the flux-weighted mean emission time.
pub fn apply_noise(
    pol: &PolarizationMatrix,
    params: &SystemParams,
    window: &DetectionWindow,
    n_detectors: usize,
) -> Result<NoisyPolarization> {
    if !(pol.weight >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative signal weight {}", pol.weight)));
    }
    let s = pol.weight;
    let d = params.dark_rate * n_detectors as f64 * window.length();
    if s + d <= 0.0 {
        return Err(Error::NoData("neither signal nor dark counts in window".into()));
    }
    let w = d / (d + s);
    let mut rho = if s > 0.0 {
        pol.matrix / c(s, 0.0) * c(1.0 - w, 0.0)
    } else {
        Matrix2c::zeros()
    };
    rho[(0, 0)] += c(0.5 * w, 0.0);
    rho[(1, 1)] += c(0.5 * w, 0.0);
    let damp = params.init_fidelity * (-2.0 * pol.mean_time / params.coherence_time).exp();
    rho[(0, 1)] *= damp;
    rho[(1, 0)] *= damp;
    Ok(NoisyPolarization {
        state: DensityMatrix::new(crate::linalg::hermitian_part(&to_dynamic(&rho)))?,
        weight: s,
        dark_fraction: w,
    })
}
