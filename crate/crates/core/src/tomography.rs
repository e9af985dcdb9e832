//! Simulated photon-counting tomography in the H/V, D/A and R/L bases,
//! maximum-likelihood state and process reconstruction, and multinomial
//! bootstrap errors.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emission::{Basis, DetectionWindow};
use crate::error::{Error, Result};
use crate::linalg::{
    c, hermitian_eigenvalues, hermitian_map, hermitian_part, pauli, tensor, trace, ComplexMatrix,
    ComplexVector, DensityMatrix, PureState, ZERO,
};

/// Relative dilution of the fixed-point step, halved whenever a step would
/// lower the likelihood and doubled after each accepted step.
pub const INITIAL_DILUTION: f64 = 0.1;
pub const MAX_DILUTION: f64 = 1e6;
pub const MAX_ITERATIONS: usize = 10_000;
/// Convergence threshold on the log-likelihood gain per count.
pub const LIKELIHOOD_GAIN_TOL: f64 = 1e-10;

/// SplitMix64 finalizer; derives independent seeds from (seed, counter).
pub fn split_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub basis: Basis,
    /// Detector paths exchanged: detector 1 sees the second projector.
    pub swapped: bool,
}

impl MeasurementSetting {
    pub fn all() -> [MeasurementSetting; 6] {
        let mut out = [MeasurementSetting {
            basis: Basis::HV,
            swapped: false,
        }; 6];
        for (k, b) in Basis::ALL.iter().enumerate() {
            out[2 * k] = MeasurementSetting {
                basis: *b,
                swapped: false,
            };
            out[2 * k + 1] = MeasurementSetting {
                basis: *b,
                swapped: true,
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountEntry {
    pub setting: MeasurementSetting,
    pub det1: u64,
    pub det2: u64,
    pub bin: Option<DetectionWindow>,
}

impl CountEntry {
    /// Counts ordered by projector (first, second basis state).
    pub fn projector_counts(&self) -> [u64; 2] {
        if self.setting.swapped {
            [self.det2, self.det1]
        } else {
            [self.det1, self.det2]
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountRecord {
    pub entries: Vec<CountEntry>,
}

/// Projector outcome counts of one basis, summed over detector swaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisCounts {
    pub basis: Basis,
    pub counts: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    basis: String,
    swapped: u8,
    det1: u64,
    det2: u64,
    t_bin_start_us: Option<f64>,
    t_bin_end_us: Option<f64>,
}

impl CountRecord {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.det1 + e.det2).sum()
    }

    pub fn basis_counts(&self) -> Vec<BasisCounts> {
        let mut map: BTreeMap<Basis, [f64; 2]> = BTreeMap::new();
        for e in &self.entries {
            let [a, b] = e.projector_counts();
            let slot = map.entry(e.setting.basis).or_insert([0.0; 2]);
            slot[0] += a as f64;
            slot[1] += b as f64;
        }
        map.into_iter()
            .map(|(basis, counts)| BasisCounts { basis, counts })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(CountRow {
                basis: e.setting.basis.to_string(),
                swapped: e.setting.swapped as u8,
                det1: e.det1,
                det2: e.det2,
                t_bin_start_us: e.bin.map(|b| b.t_start * 1e6),
                t_bin_end_us: e.bin.map(|b| b.t_end * 1e6),
            })
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let row: CountRow = row.map_err(csv_error)?;
            let bin = match (row.t_bin_start_us, row.t_bin_end_us) {
                (Some(a), Some(b)) => Some(DetectionWindow::from_us(a, b)?),
                (None, None) => None,
                _ => return Err(Error::Config("time bin needs both start and end".into())),
            };
            entries.push(CountEntry {
                setting: MeasurementSetting {
                    basis: row.basis.parse()?,
                    swapped: match row.swapped {
                        0 => false,
                        1 => true,
                        v => return Err(Error::Config(format!("swapped flag {v} not 0 or 1"))),
                    },
                },
                det1: row.det1,
                det2: row.det2,
                bin,
            });
        }
        Ok(Self { entries })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("count CSV: {e}"))
}

fn check_qubit(state: &DensityMatrix) -> Result<()> {
    if state.dim() != 2 {
        return Err(Error::Dimension(format!("expected a qubit state, got dimension {}", state.dim())));
    }
    Ok(())
}

/// Draws `n_total` detections split evenly over the six settings (the
/// remainder goes to the first settings), each setting binomial in the
/// projector probabilities. Deterministic for a fixed seed.
pub fn simulate_counts(
    state: &DensityMatrix,
    n_total: u64,
    seed: u64,
    bin: Option<DetectionWindow>,
) -> Result<CountRecord> {
    check_qubit(state)?;
    let rho = crate::emission::to_static(state.matrix())?;
    let settings = MeasurementSetting::all();
    let per = n_total / settings.len() as u64;
    let rem = n_total % settings.len() as u64;
    let mut entries = Vec::with_capacity(settings.len());
    for (k, s) in settings.iter().enumerate() {
        let n = per + u64::from((k as u64) < rem);
        let p_first = s.basis.probabilities(&rho)[0].clamp(0.0, 1.0);
        let mut rng = stream_rng(seed, k as u64);
        let first = sample_binomial(n, p_first, &mut rng)?;
        let (det1, det2) = if s.swapped {
            (n - first, first)
        } else {
            (first, n - first)
        };
        entries.push(CountEntry {
            setting: *s,
            det1,
            det2,
            bin,
        });
    }
    Ok(CountRecord { entries })
}

fn sample_binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    if n == 0 {
        return Ok(0);
    }
    let d = Binomial::new(n, p).map_err(|e| Error::InvalidParameter(format!("binomial: {e}")))?;
    Ok(d.sample(rng))
}

/// Noise-free counts: each basis receives `shots_per_basis` detections split
/// exactly in proportion to the projector probabilities.
pub fn expected_counts(state: &DensityMatrix, shots_per_basis: f64) -> Result<Vec<BasisCounts>> {
    check_qubit(state)?;
    let rho = crate::emission::to_static(state.matrix())?;
    Ok(Basis::ALL
        .iter()
        .map(|&b| {
            let [p1, p2] = b.probabilities(&rho);
            BasisCounts {
                basis: b,
                counts: [shots_per_basis * p1.max(0.0), shots_per_basis * p2.max(0.0)],
            }
        })
        .collect())
}

fn projector(basis: Basis, k: usize) -> ComplexMatrix {
    basis.states()[k].projector()
}

#[derive(Debug, Clone)]
pub struct StateEstimate {
    pub state: DensityMatrix,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted iteration, starting from I/2.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_likelihood(data: &[(ComplexMatrix, f64)], rho: &ComplexMatrix) -> f64 {
    data.iter()
        .filter(|(_, n)| *n > 0.0)
        .map(|(p, n)| n * trace(&(p * rho)).re.max(f64::MIN_POSITIVE).ln())
        .sum()
}

fn unit_trace(m: ComplexMatrix) -> ComplexMatrix {
    let h = hermitian_part(&m);
    let t = trace(&h).re;
    h / c(t, 0.0)
}

/// Diluted RρR maximum likelihood from per-basis counts.
pub fn mle_state_from_counts(counts: &[BasisCounts]) -> Result<StateEstimate> {
    let bases_with_data = counts
        .iter()
        .filter(|b| b.counts[0] + b.counts[1] > 0.0)
        .count();
    if bases_with_data < 2 {
        return Err(Error::NoData("counts in fewer than two bases".into()));
    }
    if counts.iter().any(|b| !(b.counts[0] >= 0.0 && b.counts[1] >= 0.0)) {
        return Err(Error::InvalidParameter("negative counts".into()));
    }
    let data: Vec<(ComplexMatrix, f64)> = counts
        .iter()
        .flat_map(|b| (0..2).map(move |k| (projector(b.basis, k), b.counts[k])))
        .collect();
    let n_total: f64 = data.iter().map(|(_, n)| n).sum();

    let mut rho = ComplexMatrix::identity(2, 2) * c(0.5, 0.0);
    let mut ll = log_likelihood(&data, &rho);
    let mut history = vec![ll];
    let mut eps = INITIAL_DILUTION;
    let mut converged = false;
    let mut iterations = 0;
    let id = ComplexMatrix::identity(2, 2);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut r = ComplexMatrix::zeros(2, 2);
        for (p, n) in &data {
            if *n > 0.0 {
                let prob = trace(&(p * &rho)).re.max(f64::MIN_POSITIVE);
                r += p * c(n / prob, 0.0);
            }
        }
        r /= c(n_total, 0.0);
        let (next, next_ll) = loop {
            let step = &id + &r * c(eps, 0.0);
            let cand = unit_trace(&step * &rho * &step);
            let cand_ll = log_likelihood(&data, &cand);
            if cand_ll >= ll || eps < 1e-12 {
                break (cand, cand_ll);
            }
            eps *= 0.5;
        };
        if next_ll < ll {
            // no improving step at any dilution: at the optimum to rounding
            converged = true;
            break;
        }
        let gain = (next_ll - ll) / n_total;
        rho = next;
        ll = next_ll;
        history.push(ll);
        eps = (eps * 2.0).min(MAX_DILUTION);
        if gain < LIKELIHOOD_GAIN_TOL {
            converged = true;
            break;
        }
    }
    Ok(StateEstimate {
        state: DensityMatrix::new(rho)?,
        log_likelihood: ll,
        history,
        iterations,
        converged,
    })
}

pub fn mle_state(counts: &CountRecord) -> Result<StateEstimate> {
    mle_state_from_counts(&counts.basis_counts())
}

/// Qubit channel in the Pauli basis: ρ ↦ Σ χ_mn σ_m ρ σ_n, trace χ = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    pub chi: ComplexMatrix,
}

/// |A⟩⟩ = Σ_a |a⟩ ⊗ A|a⟩ (input factor first).
fn vectorize(a: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_fn(4, |k, _| a[(k % 2, k / 2)])
}

impl ProcessMatrix {
    /// From a Choi matrix E = Σ |a⟩⟨b| ⊗ Φ(|a⟩⟨b|).
    pub fn from_choi(choi: &ComplexMatrix) -> Result<Self> {
        if choi.shape() != (4, 4) {
            return Err(Error::Dimension("qubit Choi matrix must be 4x4".into()));
        }
        let vs: Vec<ComplexVector> = (0..4).map(|m| vectorize(&pauli(m).expect("index < 4"))).collect();
        let chi = ComplexMatrix::from_fn(4, 4, |m, n| vs[m].dotc(&(choi * &vs[n])) / c(4.0, 0.0));
        Ok(Self {
            chi: hermitian_part(&chi),
        })
    }

    pub fn choi(&self) -> ComplexMatrix {
        let mut e = ComplexMatrix::zeros(4, 4);
        let vs: Vec<ComplexVector> = (0..4).map(|m| vectorize(&pauli(m).expect("index < 4"))).collect();
        for m in 0..4 {
            for n in 0..4 {
                e += &vs[m] * vs[n].adjoint() * self.chi[(m, n)];
            }
        }
        e
    }

    pub fn identity() -> Self {
        let mut chi = ComplexMatrix::zeros(4, 4);
        chi[(0, 0)] = c(1.0, 0.0);
        Self { chi }
    }

    /// χ of ρ ↦ U ρ U†.
    pub fn unitary(u: &ComplexMatrix) -> Result<Self> {
        if u.shape() != (2, 2) {
            return Err(Error::Dimension("qubit unitary must be 2x2".into()));
        }
        let v = vectorize(u);
        Self::from_choi(&(&v * v.adjoint()))
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let s: Vec<ComplexMatrix> = (0..4).map(|m| pauli(m).expect("index < 4")).collect();
        let mut out = ComplexMatrix::zeros(2, 2);
        for m in 0..4 {
            for n in 0..4 {
                if self.chi[(m, n)] != ZERO {
                    out += &s[m] * rho * &s[n] * self.chi[(m, n)];
                }
            }
        }
        out
    }

    /// ⟨⟨U|E|U⟩⟩/4 for a target unitary U.
    pub fn fidelity_to_unitary(&self, u: &ComplexMatrix) -> Result<f64> {
        let target = Self::unitary(u)?;
        Ok(crate::linalg::trace_product(&target.chi, &self.chi).re)
    }

    pub fn physicality(&self) -> crate::linalg::Physicality {
        crate::linalg::Physicality::of(&self.chi)
    }
}

pub fn process_fidelity(chi: &ProcessMatrix) -> f64 {
    chi.chi[(0, 0)].re
}

/// F_avg = (2F_p + 1)/3 for a qubit channel.
pub fn mean_state_fidelity_from_process(f_p: f64) -> f64 {
    (2.0 * f_p + 1.0) / 3.0
}

pub fn process_fidelity_from_mean_state(f_avg: f64) -> f64 {
    (3.0 * f_avg - 1.0) / 2.0
}

#[derive(Debug, Clone)]
pub struct ProcessEstimate {
    pub process: ProcessMatrix,
    pub choi: ComplexMatrix,
    pub log_likelihood: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Σ_c M[(a,c),(b,c)] on the input factor.
fn trace_output(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(2, 2, |a, b| m[(2 * a, 2 * b)] + m[(2 * a + 1, 2 * b + 1)])
}

/// Maximum-likelihood trace-preserving qubit channel over the Choi matrix,
/// with a diluted E ↦ λ⁻¹ K E K λ⁻¹ iteration; λ = (Tr_out K E K)^{1/2}
/// keeps Tr_out E = I after every step.
pub fn mle_process_from_counts(inputs: &[PureState], data: &[Vec<BasisCounts>]) -> Result<ProcessEstimate> {
    if inputs.is_empty() || inputs.len() != data.len() {
        return Err(Error::InvalidParameter(format!(
            "{} input states but {} count sets",
            inputs.len(),
            data.len()
        )));
    }
    if inputs.iter().any(|s| s.dim() != 2) {
        return Err(Error::Dimension("process inputs must be qubit states".into()));
    }
    // tomographic completeness: the input projectors span all 2x2 operators
    let gram = ComplexMatrix::from_fn(inputs.len(), inputs.len(), |i, j| {
        crate::linalg::trace_product(&inputs[i].projector(), &inputs[j].projector())
    });
    let rank = hermitian_eigenvalues(&gram).iter().filter(|&&e| e > 1e-9).count();
    if rank < 4 {
        return Err(Error::InvalidParameter(
            "input states are not tomographically complete".into(),
        ));
    }
    if data.iter().any(|d| d.iter().map(|b| b.counts[0] + b.counts[1]).sum::<f64>() <= 0.0) {
        return Err(Error::NoData("an input state has no counts".into()));
    }

    let mut terms: Vec<(ComplexMatrix, f64)> = Vec::new();
    for (psi, counts) in inputs.iter().zip(data) {
        let rho_t = psi.projector().transpose();
        for b in counts {
            for k in 0..2 {
                terms.push((tensor(&rho_t, &projector(b.basis, k)), b.counts[k]));
            }
        }
    }
    let n_total: f64 = terms.iter().map(|(_, n)| n).sum();

    let id4 = ComplexMatrix::identity(4, 4);
    let mut e = &id4 * c(0.5, 0.0);
    let mut ll = log_likelihood(&terms, &e);
    let mut history = vec![ll];
    let mut eps = INITIAL_DILUTION;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut k = ComplexMatrix::zeros(4, 4);
        for (op, n) in &terms {
            if *n > 0.0 {
                let p = trace(&(op * &e)).re.max(f64::MIN_POSITIVE);
                k += op * c(n / p, 0.0);
            }
        }
        // Tr(K E) = N and Tr E = 2
        k *= c(2.0 / n_total, 0.0);
        let (next, next_ll) = loop {
            let step = &id4 + &k * c(eps, 0.0);
            let m = hermitian_part(&(&step * &e * &step));
            let lam_inv = hermitian_map(&trace_output(&m), |x| 1.0 / x.max(f64::MIN_POSITIVE).sqrt());
            let l = tensor(&lam_inv, &ComplexMatrix::identity(2, 2));
            let cand = hermitian_part(&(&l * m * &l));
            let cand_ll = log_likelihood(&terms, &cand);
            if cand_ll >= ll || eps < 1e-12 {
                break (cand, cand_ll);
            }
            eps *= 0.5;
        };
        if next_ll < ll {
            converged = true;
            break;
        }
        let gain = (next_ll - ll) / n_total;
        e = next;
        ll = next_ll;
        history.push(ll);
        eps = (eps * 2.0).min(MAX_DILUTION);
        if gain < LIKELIHOOD_GAIN_TOL {
            converged = true;
            break;
        }
    }
    let process = ProcessMatrix::from_choi(&e)?;
    Ok(ProcessEstimate {
        process,
        choi: e,
        log_likelihood: ll,
        history,
        iterations,
        converged,
    })
}

pub fn mle_process(inputs: &[PureState], outputs: &[CountRecord]) -> Result<ProcessEstimate> {
    let data: Vec<Vec<BasisCounts>> = outputs.iter().map(|r| r.basis_counts()).collect();
    mle_process_from_counts(inputs, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub estimate: f64,
    pub sd: f64,
    pub samples: Vec<f64>,
}

/// Resamples every setting of every record binomially at its observed
/// total and frequencies, re-runs `estimator` and reports the sample
/// standard deviation. Replica `k` draws from its own stream of `seed`.
pub fn bootstrap<F>(records: &[CountRecord], estimator: F, n_resamples: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[CountRecord]) -> Result<f64> + Sync,
{
    if n_resamples < 100 {
        return Err(Error::InvalidParameter(format!(
            "{n_resamples} bootstrap resamples; at least 100 required"
        )));
    }
    let estimate = estimator(records)?;
    let samples: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let resampled: Vec<CountRecord> = records
                .iter()
                .map(|r| {
                    let entries = r
                        .entries
                        .iter()
                        .map(|e| {
                            let n = e.det1 + e.det2;
                            let p = if n > 0 { e.det1 as f64 / n as f64 } else { 0.0 };
                            let det1 = sample_binomial(n, p, &mut rng)?;
                            Ok(CountEntry {
                                det1,
                                det2: n - det1,
                                ..e.clone()
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(CountRecord { entries })
                })
                .collect::<Result<Vec<_>>>()?;
            estimator(&resampled)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
    Ok(BootstrapResult {
        estimate,
        sd: var.sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{state_fidelity, trace_distance};
    use approx::assert_relative_eq;

    fn h_state() -> DensityMatrix {
        PureState::basis(2, 0).unwrap().to_density()
    }

    #[test]
    fn six_distinct_settings() {
        let s = MeasurementSetting::all();
        for i in 0..6 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
    }

    #[test]
    fn h_state_counts_fall_on_one_detector_in_hv() {
        let rec = simulate_counts(&h_state(), 6000, 1, None).unwrap();
        for e in &rec.entries {
            if e.setting.basis == Basis::HV {
                let [first, second] = e.projector_counts();
                assert_eq!((first, second), (1000, 0));
                if e.setting.swapped {
                    assert_eq!(e.det1, 0);
                } else {
                    assert_eq!(e.det2, 0);
                }
            }
        }
        assert_eq!(rec.total(), 6000);
    }

    #[test]
    fn mixed_state_counts_are_balanced() {
        let n = 60_000;
        let rec = simulate_counts(&DensityMatrix::maximally_mixed(2), n, 7, None).unwrap();
        for e in &rec.entries {
            let m = (e.det1 + e.det2) as f64;
            let frac = e.det1 as f64 / m;
            let sigma = (0.25 / m).sqrt();
            assert!((frac - 0.5).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let rho = DensityMatrix::maximally_mixed(2);
        let a = simulate_counts(&rho, 32_400, 42, None).unwrap();
        let b = simulate_counts(&rho, 32_400, 42, None).unwrap();
        assert_eq!(a, b);
        let c = simulate_counts(&rho, 32_400, 43, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_round_trip() {
        let w = DetectionWindow::from_us(2.0, 4.0).unwrap();
        let rec = simulate_counts(&DensityMatrix::maximally_mixed(2), 1234, 3, Some(w)).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("basis,swapped,det1,det2,t_bin_start_us,t_bin_end_us\n"));
        let back = CountRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.entries.len(), 6);
        for (a, b) in rec.entries.iter().zip(&back.entries) {
            assert_eq!((a.setting, a.det1, a.det2), (b.setting, b.det1, b.det2));
            let (wa, wb) = (a.bin.unwrap(), b.bin.unwrap());
            assert!((wa.t_start - wb.t_start).abs() < 1e-18 && (wa.t_end - wb.t_end).abs() < 1e-18);
        }
    }

    #[test]
    fn mle_exact_h_state() {
        let est = mle_state_from_counts(&expected_counts(&h_state(), 1000.0).unwrap()).unwrap();
        assert!(trace_distance(est.state.matrix(), h_state().matrix()) < 1e-6);
        assert!(est.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn mle_equal_counts_give_mixed_state() {
        let counts: Vec<BasisCounts> = Basis::ALL
            .iter()
            .map(|&b| BasisCounts {
                basis: b,
                counts: [500.0, 500.0],
            })
            .collect();
        let est = mle_state_from_counts(&counts).unwrap();
        let half = ComplexMatrix::identity(2, 2) * c(0.5, 0.0);
        assert!(trace_distance(est.state.matrix(), &half) < 1e-6);
    }

    #[test]
    fn mle_needs_two_bases() {
        let counts = vec![BasisCounts {
            basis: Basis::HV,
            counts: [10.0, 3.0],
        }];
        assert!(matches!(mle_state_from_counts(&counts), Err(Error::NoData(_))));
        assert!(mle_state(&CountRecord::default()).is_err());
    }

    fn random_state(seed: u64) -> DensityMatrix {
        use rand::Rng;
        let mut rng = stream_rng(seed, 99);
        let a = ComplexMatrix::from_fn(2, 2, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        DensityMatrix::new(unit_trace(&a * a.adjoint())).unwrap()
    }

    #[test]
    fn mle_recovers_random_state_from_a_million_shots() {
        let rho = random_state(5);
        let rec = simulate_counts(&rho, 1_000_000, 11, None).unwrap();
        let est = mle_state(&rec).unwrap();
        assert!(trace_distance(est.state.matrix(), rho.matrix()) < 0.005);
    }

    #[test]
    fn swap_summing_is_symmetric_under_detector_relabelling() {
        // unequal detector efficiencies (η₁, η₂) and the relabelled pair
        let rho = random_state(8);
        let m = crate::emission::to_static(rho.matrix()).unwrap();
        let record = |eta: [f64; 2]| CountRecord {
            entries: MeasurementSetting::all()
                .iter()
                .map(|s| {
                    let p = s.basis.probabilities(&m);
                    let on = |det: usize| {
                        let proj = if s.swapped { 1 - det } else { det };
                        (1e5 * eta[det] * p[proj]).round() as u64
                    };
                    CountEntry {
                        setting: *s,
                        det1: on(0),
                        det2: on(1),
                        bin: None,
                    }
                })
                .collect(),
        };
        let a = mle_state(&record([0.9, 0.6])).unwrap();
        let b = mle_state(&record([0.6, 0.9])).unwrap();
        assert_eq!(a.state, b.state);
        assert!(trace_distance(a.state.matrix(), rho.matrix()) < 1e-3);
    }

    fn standard_inputs() -> Vec<PureState> {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
        vec![
            PureState::qubit(0.0, 0.0),
            PureState::qubit(FRAC_PI_2, 0.0),
            PureState::qubit(FRAC_PI_4, PI),
            PureState::qubit(FRAC_PI_4, FRAC_PI_2),
        ]
    }

    fn outputs_of(chi: &ProcessMatrix, shots_per_basis: f64) -> Vec<Vec<BasisCounts>> {
        standard_inputs()
            .iter()
            .map(|psi| {
                let out = DensityMatrix::new(hermitian_part(&chi.apply(&psi.projector()))).unwrap();
                expected_counts(&out, shots_per_basis).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_map_is_recovered() {
        let est = mle_process_from_counts(&standard_inputs(), &outputs_of(&ProcessMatrix::identity(), 1000.0))
            .unwrap();
        assert!((process_fidelity(&est.process) - 1.0).abs() < 1e-6);
        assert!(est.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn depolarizing_map_is_recovered() {
        let depol = ProcessMatrix {
            chi: ComplexMatrix::identity(4, 4) * c(0.25, 0.0),
        };
        let est = mle_process_from_counts(&standard_inputs(), &outputs_of(&depol, 1000.0)).unwrap();
        assert!((&est.process.chi - &depol.chi).iter().all(|z| z.norm() < 1e-3));
        assert_relative_eq!(process_fidelity(&depol), 0.25);
    }

    #[test]
    fn choi_round_trip_and_trace_preservation() {
        let u = crate::linalg::hermitian_map(&(pauli(1).unwrap() + pauli(3).unwrap()), |x| x);
        let u = ComplexMatrix::from_fn(2, 2, |i, j| {
            // exp(-i θ n·σ) with θ = 0.3
            let cth = 0.3f64.cos();
            let s = 0.3f64.sin() / 2f64.sqrt();
            let id = if i == j { c(cth, 0.0) } else { ZERO };
            id + u[(i, j)] * c(0.0, -s)
        });
        let chi = ProcessMatrix::unitary(&u).unwrap();
        assert!((trace(&chi.chi) - c(1.0, 0.0)).norm() < 1e-12);
        let back = ProcessMatrix::from_choi(&chi.choi()).unwrap();
        assert!((&back.chi - &chi.chi).iter().all(|z| z.norm() < 1e-12));
        let tr_out = trace_output(&chi.choi());
        assert!((tr_out - ComplexMatrix::identity(2, 2)).iter().all(|z| z.norm() < 1e-12));
        assert_relative_eq!(chi.fidelity_to_unitary(&u).unwrap(), 1.0, max_relative = 1e-12);
        let rho = random_state(1);
        let direct = &u * rho.matrix() * u.adjoint();
        assert!((chi.apply(rho.matrix()) - direct).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn process_needs_complete_inputs() {
        let inputs = vec![PureState::qubit(0.0, 0.0); 4];
        let data = outputs_of(&ProcessMatrix::identity(), 10.0);
        assert!(mle_process_from_counts(&inputs, &data).is_err());
        assert!(mle_process_from_counts(&standard_inputs(), &data[..3]).is_err());
    }

    #[test]
    fn horodecki_relation() {
        assert_eq!(mean_state_fidelity_from_process(1.0), 1.0);
        assert_relative_eq!(mean_state_fidelity_from_process(0.5), 2.0 / 3.0);
        assert_relative_eq!(process_fidelity_from_mean_state(0.95), 0.925, max_relative = 1e-12);
        // direct average over the six axis states of a depolarized channel
        let p = 0.8;
        let mut chi = ComplexMatrix::identity(4, 4) * c((1.0 - p) / 4.0, 0.0);
        chi[(0, 0)] += c(p, 0.0);
        let ch = ProcessMatrix { chi };
        let mut total = 0.0;
        for b in Basis::ALL {
            for psi in b.states() {
                let out = DensityMatrix::new(hermitian_part(&ch.apply(&psi.projector()))).unwrap();
                total += state_fidelity(&psi, &out).unwrap();
            }
        }
        assert_relative_eq!(total / 6.0, mean_state_fidelity_from_process(process_fidelity(&ch)), max_relative = 1e-12);
    }

    #[test]
    fn bootstrap_degenerate_counts_have_zero_spread() {
        let rec = simulate_counts(&h_state(), 600, 1, None).unwrap();
        let rec = CountRecord {
            entries: rec.entries.into_iter().filter(|e| e.setting.basis == Basis::HV).collect(),
        };
        let r = bootstrap(&[rec], |r| Ok(r[0].entries[0].det1 as f64), 100, 3).unwrap();
        assert_eq!(r.sd, 0.0);
        assert!(bootstrap(&[], |_| Ok(0.0), 99, 3).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let rec = simulate_counts(&random_state(2), 8100, 4, None).unwrap();
        let est = |r: &[CountRecord]| -> Result<f64> {
            Ok(mle_state(&r[0])?.state.matrix()[(0, 0)].re)
        };
        let a = bootstrap(std::slice::from_ref(&rec), est, 100, 9).unwrap();
        let b = bootstrap(std::slice::from_ref(&rec), est, 100, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_seed_spreads_counters() {
        let s: Vec<u64> = (0..100).map(|k| split_seed(7, k)).collect();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
    }
}
