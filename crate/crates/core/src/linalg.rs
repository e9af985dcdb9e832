//! Dense complex linear algebra for small quantum systems.
//!
//! Operators are `nalgebra` dense matrices over `Complex64`. Composite
//! spaces use the Kronecker ordering of [`tensor`]: the first factor is the
//! most significant index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Maximum elementwise |M - M†| accepted for a density matrix.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Maximum |Tr ρ - 1| accepted for a density matrix.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted for a density matrix.
pub const EIGEN_FLOOR: f64 = -1e-9;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// Kronecker product `a ⊗ b`.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, left to right.
pub fn tensor_all(factors: &[ComplexMatrix]) -> ComplexMatrix {
    let mut iter = factors.iter();
    let first = iter.next().cloned().unwrap_or_else(|| identity(1));
    iter.fold(first, |acc, f| acc.kronecker(f))
}

/// Pauli matrices σ₀ = 1, σ₁ = σx, σ₂ = σy, σ₃ = σz.
pub fn pauli(i: usize) -> Result<ComplexMatrix> {
    let entries = match i {
        0 => [ONE, ZERO, ZERO, ONE],
        1 => [ZERO, ONE, ONE, ZERO],
        2 => [ZERO, -I, I, ZERO],
        3 => [ONE, ZERO, ZERO, -ONE],
        _ => {
            return Err(Error::InvalidParameter(format!(
                "Pauli index {i} outside 0..=3"
            )))
        }
    };
    Ok(ComplexMatrix::from_row_slice(2, 2, &entries))
}

/// |ψ⟩⟨φ|
pub fn outer(psi: &ComplexVector, phi: &ComplexVector) -> ComplexMatrix {
    psi * phi.adjoint()
}

/// Largest elementwise deviation |M - M†|.
pub fn hermiticity_error(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigen-decomposition of the Hermitian part: (eigenvalues, eigenvectors as columns).
pub fn hermitian_eigen(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Applies `f` to the eigenvalues of a Hermitian matrix.
pub fn hermitian_map(m: &ComplexMatrix, f: impl Fn(f64) -> f64) -> ComplexMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let n = vals.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for (k, &v) in vals.iter().enumerate() {
        let col = vecs.column(k);
        out += (&col * col.adjoint()) * c(f(v), 0.0);
    }
    out
}

pub fn trace(m: &ComplexMatrix) -> C64 {
    m.trace()
}

/// Tr(a · b) without forming the product.
pub fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: ComplexVector,
}

impl PureState {
    pub fn new(amplitudes: ComplexVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidState("empty state vector".into()));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state norm {norm} != 1")));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes the given amplitudes.
    pub fn normalized(amplitudes: ComplexVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} >= {dim}")));
        }
        let mut v = ComplexVector::zeros(dim);
        v[index] = ONE;
        Ok(Self { amplitudes: v })
    }

    /// cos α |0⟩ + e^{iφ} sin α |1⟩
    pub fn qubit(alpha: f64, phi: f64) -> Self {
        let v = ComplexVector::from_vec(vec![
            c(alpha.cos(), 0.0),
            C64::from_polar(alpha.sin(), phi),
        ]);
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &ComplexVector {
        &self.amplitudes
    }

    pub fn projector(&self) -> ComplexMatrix {
        outer(&self.amplitudes, &self.amplitudes)
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            matrix: self.projector(),
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

/// Result of checking the physicality invariants of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Physicality {
    pub hermiticity_error: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl Physicality {
    pub fn of(m: &ComplexMatrix) -> Self {
        Self {
            hermiticity_error: hermiticity_error(m),
            trace_error: (m.trace() - ONE).norm(),
            min_eigenvalue: hermitian_eigenvalues(m).first().copied().unwrap_or(0.0),
        }
    }

    pub fn within(&self, herm: f64, trace: f64, floor: f64) -> bool {
        self.hermiticity_error <= herm && self.trace_error <= trace && self.min_eigenvalue >= floor
    }

    pub fn is_physical(&self) -> bool {
        self.within(HERMITIAN_TOL, TRACE_TOL, EIGEN_FLOOR)
    }
}

impl DensityMatrix {
    /// Validates the density-matrix invariants at the default tolerances.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "density matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let p = Physicality::of(&matrix);
        if !p.is_physical() {
            return Err(Error::InvalidState(format!(
                "hermiticity error {:.3e}, trace error {:.3e}, min eigenvalue {:.3e}",
                p.hermiticity_error, p.trace_error, p.min_eigenvalue
            )));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix without checks. Callers are responsible for the invariants.
    pub fn from_matrix_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: identity(dim) * c(1.0 / dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.matrix, &self.matrix).re
    }

    pub fn physicality(&self) -> Physicality {
        Physicality::of(&self.matrix)
    }

    pub fn expectation(&self, op: &ComplexMatrix) -> Result<C64> {
        if op.nrows() != self.dim() || op.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "operator {}x{} vs state dim {}",
                op.nrows(),
                op.ncols(),
                self.dim()
            )));
        }
        Ok(trace_product(op, &self.matrix))
    }
}

/// ⟨ψ|ρ|ψ⟩
pub fn state_fidelity(psi: &PureState, rho: &DensityMatrix) -> Result<f64> {
    if psi.dim() != rho.dim() {
        return Err(Error::Dimension(format!(
            "state dim {} vs density matrix dim {}",
            psi.dim(),
            rho.dim()
        )));
    }
    let v = psi.amplitudes();
    let f = (v.adjoint() * rho.matrix() * v)[(0, 0)];
    Ok(f.re.clamp(0.0, 1.0))
}

/// ½ ‖a - b‖₁
pub fn trace_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b))
        .iter()
        .map(|v| v.abs())
        .sum::<f64>()
}

fn digits(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for (k, &d) in dims.iter().enumerate().rev() {
        out[k] = index % d;
        index /= d;
    }
}

/// Partial trace of an arbitrary square operator over all subsystems not in `keep`.
pub fn partial_trace_operator(
    m: &ComplexMatrix,
    dims: &[usize],
    keep: &[usize],
) -> Result<ComplexMatrix> {
    let total: usize = dims.iter().product();
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Dimension("subsystem dimensions must be positive".into()));
    }
    if !m.is_square() || m.nrows() != total {
        return Err(Error::Dimension(format!(
            "subsystem dims {dims:?} (product {total}) inconsistent with operator {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() || keep.iter().any(|&k| k >= dims.len()) {
        return Err(Error::Dimension(format!(
            "keep set {keep:?} invalid for {} subsystems",
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !keep.contains(k)).collect();
    let kept_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = kept_dims.iter().product();

    let reduced_index = |dg: &[usize]| keep.iter().fold(0, |acc, &k| acc * dims[k] + dg[k]);

    let mut out = ComplexMatrix::zeros(out_dim, out_dim);
    let mut dr = vec![0; dims.len()];
    let mut dc = vec![0; dims.len()];
    for r in 0..total {
        digits(r, dims, &mut dr);
        let ro = reduced_index(&dr);
        for col in 0..total {
            digits(col, dims, &mut dc);
            if traced.iter().all(|&k| dr[k] == dc[k]) {
                out[(ro, reduced_index(&dc))] += m[(r, col)];
            }
        }
    }
    Ok(out)
}

/// Reduced density matrix on the subsystems in `keep`.
pub fn partial_trace(rho: &DensityMatrix, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    partial_trace_operator(rho.matrix(), dims, keep).map(DensityMatrix::from_matrix_unchecked)
}

/// JSON form `{dim_rows, dim_cols, re, im}` with row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim_rows: usize,
    pub dim_cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&ComplexMatrix> for MatrixJson {
    fn from(m: &ComplexMatrix) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self {
            dim_rows: m.nrows(),
            dim_cols: m.ncols(),
            re,
            im,
        }
    }
}

impl TryFrom<&MatrixJson> for ComplexMatrix {
    type Error = Error;

    fn try_from(j: &MatrixJson) -> Result<Self> {
        let n = j.dim_rows * j.dim_cols;
        if j.dim_rows == 0 || j.dim_cols == 0 || j.re.len() != n || j.im.len() != n {
            return Err(Error::Dimension(format!(
                "matrix json {}x{} with {} re / {} im entries",
                j.dim_rows,
                j.dim_cols,
                j.re.len(),
                j.im.len()
            )));
        }
        let entries: Vec<C64> = j.re.iter().zip(&j.im).map(|(&r, &i)| c(r, i)).collect();
        Ok(ComplexMatrix::from_row_slice(j.dim_rows, j.dim_cols, &entries))
    }
}
