//! Lindblad master-equation integration.
//!
//! The generator is vectorized row-major (ρ_ij → index i·d + j) into a sparse
//! superoperator restricted to the basis states reachable from the initial
//! support, and integrated with an adaptive Dormand–Prince 5(4) pair with
//! dense output onto the requested grid.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigenvalues, hermiticity_error, trace, ComplexMatrix, DensityMatrix, MatrixJson, ONE,
    ZERO,
};
use crate::system::TimeDependentHamiltonian;

/// Trace drift and eigenvalue floor enforced at every grid point.
pub const TRACE_DRIFT_TOL: f64 = 1e-7;
pub const EVOLUTION_EIGEN_FLOOR: f64 = -1e-7;

/// −i[H,ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})
pub fn lindblad_rhs(rho: &ComplexMatrix, h: &ComplexMatrix, ls: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let d = rho.nrows();
    if rho.ncols() != d || h.shape() != (d, d) || ls.iter().any(|l| l.shape() != (d, d)) {
        return Err(Error::Dimension("operators do not match the state".into()));
    }
    let mi = C64::new(0.0, -1.0);
    let mut out = (h * rho - rho * h) * mi;
    for l in ls {
        let ld = l.adjoint();
        let ldl = &ld * l;
        out += l * rho * &ld - (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: 1e-8, abs: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct MasterEquationProblem {
    pub hamiltonian: TimeDependentHamiltonian,
    pub collapse_ops: Vec<ComplexMatrix>,
    pub rho0: DensityMatrix,
    pub t_grid: Vec<f64>,
    /// Operators whose expectation values are recorded at each grid time.
    pub tracked: Vec<(String, ComplexMatrix)>,
    /// Keep the full state at each grid time.
    pub store_states: bool,
}

impl MasterEquationProblem {
    pub fn new(
        hamiltonian: TimeDependentHamiltonian,
        collapse_ops: Vec<ComplexMatrix>,
        rho0: DensityMatrix,
        t_grid: Vec<f64>,
    ) -> Self {
        Self {
            hamiltonian,
            collapse_ops,
            rho0,
            t_grid,
            tracked: Vec::new(),
            store_states: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    /// Empty when state storage was disabled.
    pub states: Vec<ComplexMatrix>,
    pub tracked: Vec<(String, Vec<C64>)>,
    pub stats: IntegrationStats,
}

#[derive(Serialize)]
struct EvolutionJson<'a> {
    times: &'a [f64],
    states: Vec<MatrixJson>,
    tracked: Vec<TrackedJson<'a>>,
}

#[derive(Serialize)]
struct TrackedJson<'a> {
    name: &'a str,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl EvolutionResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> Result<DensityMatrix> {
        let m = self
            .states
            .get(k)
            .ok_or_else(|| Error::NoData("states were not stored".into()))?;
        DensityMatrix::new(m.clone())
    }

    pub fn tracked_series(&self, name: &str) -> Option<&[C64]> {
        self.tracked
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = EvolutionJson {
            times: &self.times,
            states: self.states.iter().map(MatrixJson::from).collect(),
            tracked: self
                .tracked
                .iter()
                .map(|(name, s)| TrackedJson {
                    name,
                    re: s.iter().map(|z| z.re).collect(),
                    im: s.iter().map(|z| z.im).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Real parts of the tracked observables, one column each, time in µs.
    pub fn write_tracked_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "time_us")?;
        for (name, _) in &self.tracked {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{}", t * 1e6)?;
            for (_, s) in &self.tracked {
                write!(out, ",{:e}", s[k].re)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Tr(op ρ(t)) at each stored grid time.
pub fn expectation_series(result: &EvolutionResult, op: &ComplexMatrix) -> Result<Vec<C64>> {
    if result.states.is_empty() && !result.times.is_empty() {
        return Err(Error::NoData("states were not stored".into()));
    }
    result
        .states
        .iter()
        .map(|rho| {
            if rho.shape() != op.shape() {
                return Err(Error::Dimension(format!(
                    "operator {:?} vs state {:?}",
                    op.shape(),
                    rho.shape()
                )));
            }
            Ok(trace(&(op * rho)))
        })
        .collect()
}

/// Compressed sparse rows.
#[derive(Debug, Clone)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().expect("merged entry") += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        let keep: Vec<bool> = vals.iter().map(|v| *v != ZERO).collect();
        let mut k = 0;
        let (mut c2, mut v2) = (Vec::new(), Vec::new());
        for (i, &r) in rows.iter().enumerate() {
            if keep[i] {
                row_ptr[r + 1] += 1;
                c2.push(cols[i]);
                v2.push(vals[i]);
                k += 1;
            }
        }
        debug_assert_eq!(k, c2.len());
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            row_ptr,
            cols: c2,
            vals: v2,
        }
    }

    fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// out += scale · A x
    fn mul_add(&self, x: &[C64], scale: C64, out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o += scale * acc;
        }
    }
}

/// Vectorized generator L(t) = L₀ + Σ_m e^{iδ_m t} L_m on a basis subset.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    /// Indices of the retained basis states in the full space.
    subspace: Vec<usize>,
    full_dim: usize,
    static_part: Csr,
    oscillating: Vec<(Csr, f64)>,
}

fn restrict(m: &ComplexMatrix, idx: &[usize]) -> ComplexMatrix {
    ComplexMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

fn push_left(t: &mut Vec<(usize, usize, C64)>, a: &ComplexMatrix, coef: C64) {
    let d = a.nrows();
    for i in 0..d {
        for k in 0..d {
            let v = a[(i, k)];
            if v != ZERO {
                for j in 0..d {
                    t.push((i * d + j, k * d + j, coef * v));
                }
            }
        }
    }
}

fn push_right(t: &mut Vec<(usize, usize, C64)>, b: &ComplexMatrix, coef: C64) {
    let d = b.nrows();
    for k in 0..d {
        for j in 0..d {
            let v = b[(k, j)];
            if v != ZERO {
                for i in 0..d {
                    t.push((i * d + j, i * d + k, coef * v));
                }
            }
        }
    }
}

fn push_commutator(t: &mut Vec<(usize, usize, C64)>, h: &ComplexMatrix) {
    push_left(t, h, C64::new(0.0, -1.0));
    push_right(t, h, C64::new(0.0, 1.0));
}

impl Liouvillian {
    /// Builds the generator on the smallest set of basis states that contains
    /// the support of `seed` and is closed under H(t), every L_k and L_k†L_k.
    pub fn new(h: &TimeDependentHamiltonian, ls: &[ComplexMatrix], seed: &ComplexMatrix) -> Result<Self> {
        let n = h.dim();
        if seed.shape() != (n, n)
            || ls.iter().any(|l| l.shape() != (n, n))
            || h.oscillating_parts.iter().any(|p| p.matrix.shape() != (n, n))
        {
            return Err(Error::Dimension("operators do not match the state".into()));
        }
        let subspace = reachable_subspace(h, ls, seed);
        let d = subspace.len();
        let nn = d * d;

        let mut t = Vec::new();
        push_commutator(&mut t, &restrict(&h.static_part, &subspace));
        for l in ls {
            let lr = restrict(l, &subspace);
            let ldl = lr.adjoint() * &lr;
            for i in 0..d {
                for k in 0..d {
                    let a = lr[(i, k)];
                    if a == ZERO {
                        continue;
                    }
                    for j in 0..d {
                        for m in 0..d {
                            let b = lr[(j, m)];
                            if b != ZERO {
                                t.push((i * d + j, k * d + m, a * b.conj()));
                            }
                        }
                    }
                }
            }
            push_left(&mut t, &ldl, C64::new(-0.5, 0.0));
            push_right(&mut t, &ldl, C64::new(-0.5, 0.0));
        }
        let static_part = Csr::from_triplets(nn, t);

        let oscillating = h
            .oscillating_parts
            .iter()
            .map(|p| {
                let mut t = Vec::new();
                push_commutator(&mut t, &restrict(&p.matrix, &subspace));
                (Csr::from_triplets(nn, t), p.frequency)
            })
            .filter(|(m, _)| m.nnz() > 0)
            .collect();

        Ok(Self {
            subspace,
            full_dim: n,
            static_part,
            oscillating,
        })
    }

    pub fn subspace(&self) -> &[usize] {
        &self.subspace
    }

    pub fn nnz(&self) -> usize {
        self.static_part.nnz() + self.oscillating.iter().map(|(m, _)| m.nnz()).sum::<usize>()
    }

    pub fn apply(&self, t: f64, y: &[C64], out: &mut [C64]) {
        out.fill(ZERO);
        self.static_part.mul_add(y, ONE, out);
        for (m, freq) in &self.oscillating {
            m.mul_add(y, C64::from_polar(1.0, freq * t), out);
        }
    }

    fn compress(&self, rho: &ComplexMatrix) -> Vec<C64> {
        let d = self.subspace.len();
        let mut y = vec![ZERO; d * d];
        for (i, &a) in self.subspace.iter().enumerate() {
            for (j, &b) in self.subspace.iter().enumerate() {
                y[i * d + j] = rho[(a, b)];
            }
        }
        y
    }

    fn expand(&self, y: &[C64]) -> ComplexMatrix {
        let d = self.subspace.len();
        let mut m = ComplexMatrix::zeros(self.full_dim, self.full_dim);
        for (i, &a) in self.subspace.iter().enumerate() {
            for (j, &b) in self.subspace.iter().enumerate() {
                m[(a, b)] = y[i * d + j];
            }
        }
        m
    }
}

fn reachable_subspace(h: &TimeDependentHamiltonian, ls: &[ComplexMatrix], seed: &ComplexMatrix) -> Vec<usize> {
    let n = h.dim();
    let mut ops: Vec<&ComplexMatrix> = vec![&h.static_part];
    ops.extend(h.oscillating_parts.iter().map(|p| &p.matrix));
    ops.extend(ls.iter());
    let ldl: Vec<ComplexMatrix> = ls.iter().map(|l| l.adjoint() * l).collect();
    ops.extend(ldl.iter());

    let mut inside = vec![false; n];
    let mut stack = Vec::new();
    for i in 0..n {
        if (0..n).any(|j| seed[(i, j)] != ZERO || seed[(j, i)] != ZERO) {
            inside[i] = true;
            stack.push(i);
        }
    }
    while let Some(k) = stack.pop() {
        for op in &ops {
            for j in 0..n {
                if !inside[j] && op[(j, k)] != ZERO {
                    inside[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    (0..n).filter(|&i| inside[i]).collect()
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy_into(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for (a, k) in terms {
            acc += k[i] * *a;
        }
        *o = y[i] + acc * h;
    }
}

/// Makes the row-major vectorized matrix Hermitian.
fn symmetrize(y: &mut [C64], d: usize) {
    for i in 0..d {
        y[i * d + i].im = 0.0;
        for j in i + 1..d {
            let a = 0.5 * (y[i * d + j] + y[j * d + i].conj());
            y[i * d + j] = a;
            y[j * d + i] = a.conj();
        }
    }
}

/// Evolves an arbitrary operator X under the linear map e^{∫L}. Hermitian
/// inputs are re-symmetrized after each step.
pub fn propagate(
    h: &TimeDependentHamiltonian,
    ls: &[ComplexMatrix],
    x0: &ComplexMatrix,
    t_grid: &[f64],
    tracked: &[(String, ComplexMatrix)],
    store_states: bool,
    tol: Tolerances,
) -> Result<EvolutionResult> {
    if !(tol.rel > 0.0 && tol.abs > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || !t_grid.iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
    }
    if tracked.iter().any(|(_, op)| op.shape() != x0.shape()) {
        return Err(Error::Dimension("tracked operator does not match the state".into()));
    }
    let lv = Liouvillian::new(h, ls, x0)?;
    let d = lv.subspace.len();
    let n = d * d;
    let hermitian = hermiticity_error(x0) == 0.0;
    let tracked_r: Vec<ComplexMatrix> = tracked
        .iter()
        .map(|(_, op)| restrict(op, &lv.subspace))
        .collect();

    let mut result = EvolutionResult {
        times: t_grid.to_vec(),
        states: Vec::new(),
        tracked: tracked.iter().map(|(name, _)| (name.clone(), Vec::new())).collect(),
        stats: IntegrationStats::default(),
    };
    let record = |y: &[C64], result: &mut EvolutionResult| {
        for (k, op) in tracked_r.iter().enumerate() {
            // Tr(op ρ) = Σ_ij op_ji ρ_ij
            let mut acc = ZERO;
            for i in 0..d {
                for j in 0..d {
                    acc += op[(j, i)] * y[i * d + j];
                }
            }
            result.tracked[k].1.push(acc);
        }
        if store_states {
            result.states.push(lv.expand(y));
        }
    };

    let mut y = lv.compress(x0);
    let mut t = t_grid[0];
    record(&y, &mut result);
    if t_grid.len() == 1 {
        return Ok(result);
    }
    let t_end = *t_grid.last().expect("non-empty grid");

    let mut k1 = vec![ZERO; n];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
    );
    let mut ys = vec![ZERO; n];
    let mut y1 = vec![ZERO; n];
    let mut interp = vec![ZERO; n];
    let mut r = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];

    lv.apply(t, &y, &mut k1);
    let mut evals = 1usize;

    let norm = |v: &[C64], sc: &dyn Fn(usize) -> f64| -> f64 {
        (v.iter().enumerate().map(|(i, z)| (z.norm() / sc(i)).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let span = t_end - t;
    let mut step = {
        let sc = |i: usize| tol.abs + tol.rel * y[i].norm();
        let d0 = norm(&y, &sc);
        let d1 = norm(&k1, &sc);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
        h0.min(span)
    };
    let mut next_out = 1usize;
    let mut last_err = 1e-4f64;
    let mut reject_prev = false;

    while next_out < t_grid.len() {
        let min_step = 16.0 * f64::EPSILON * t.abs().max(span);
        if step < min_step {
            return Err(Error::Stiffness { time: t, step });
        }
        let h = step.min(t_end - t);

        axpy_into(&mut ys, &y, h, &[(A21, &k1)]);
        lv.apply(t + C2 * h, &ys, &mut k2);
        axpy_into(&mut ys, &y, h, &[(A31, &k1), (A32, &k2)]);
        lv.apply(t + C3 * h, &ys, &mut k3);
        axpy_into(&mut ys, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        lv.apply(t + C4 * h, &ys, &mut k4);
        axpy_into(&mut ys, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        lv.apply(t + C5 * h, &ys, &mut k5);
        axpy_into(
            &mut ys,
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        lv.apply(t + h, &ys, &mut k6);
        axpy_into(
            &mut y1,
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        lv.apply(t + h, &y1, &mut k7);
        evals += 6;

        let mut err_sum = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = tol.abs + tol.rel * y[i].norm().max(y1[i].norm());
            err_sum += (e.norm() / sc).powi(2);
        }
        let err = (err_sum / n as f64).sqrt();

        if err <= 1.0 {
            // dense output coefficients
            for i in 0..n {
                let ydiff = y1[i] - y[i];
                let bspl = k1[i] * h - ydiff;
                r[0][i] = y[i];
                r[1][i] = ydiff;
                r[2][i] = bspl;
                r[3][i] = ydiff - k7[i] * h - bspl;
                r[4][i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
            }
            let t_new = if h == t_end - t { t_end } else { t + h };
            while next_out < t_grid.len() && t_grid[next_out] <= t_new {
                let tg = t_grid[next_out];
                if tg == t_new {
                    interp.copy_from_slice(&y1);
                } else {
                    let th = (tg - t) / h;
                    let th1 = 1.0 - th;
                    for i in 0..n {
                        interp[i] = r[0][i]
                            + (r[1][i] + (r[2][i] + (r[3][i] + r[4][i] * th1) * th) * th1) * th;
                    }
                }
                if hermitian {
                    symmetrize(&mut interp, d);
                    check_physical(&interp, d, tg)?;
                }
                record(&interp, &mut result);
                next_out += 1;
            }
            std::mem::swap(&mut y, &mut y1);
            if hermitian {
                symmetrize(&mut y, d);
                lv.apply(t_new, &y, &mut k1);
                evals += 1;
            } else {
                std::mem::swap(&mut k1, &mut k7);
            }
            t = t_new;
            result.stats.accepted_steps += 1;

            // PI step control
            let e = err.max(1e-10);
            let mut fac = 0.9 * e.powf(-0.7 / 5.0) * last_err.powf(0.4 / 5.0);
            fac = fac.clamp(0.2, 10.0);
            if reject_prev {
                fac = fac.min(1.0);
            }
            step = h * fac;
            last_err = e;
            reject_prev = false;
        } else {
            result.stats.rejected_steps += 1;
            step = h * (0.9 * err.powf(-0.2)).max(0.2);
            reject_prev = true;
        }
    }
    result.stats.rhs_evaluations = evals;
    Ok(result)
}

fn check_physical(y: &[C64], d: usize, time: f64) -> Result<()> {
    let m = ComplexMatrix::from_fn(d, d, |i, j| y[i * d + j]);
    let tr = trace(&m);
    if (tr.re - 1.0).abs() > TRACE_DRIFT_TOL || tr.im.abs() > TRACE_DRIFT_TOL {
        return Err(Error::Unphysical {
            time,
            detail: format!("trace {tr}"),
        });
    }
    let min = hermitian_eigenvalues(&m)[0];
    if min < EVOLUTION_EIGEN_FLOOR {
        return Err(Error::Unphysical {
            time,
            detail: format!("eigenvalue {min:e}"),
        });
    }
    Ok(())
}

/// Integrates a density-matrix problem; every grid state is checked for
/// trace drift and negative eigenvalues.
pub fn integrate(problem: &MasterEquationProblem, tol: Tolerances) -> Result<EvolutionResult> {
    if problem.t_grid.first().copied() != Some(0.0) {
        return Err(Error::InvalidParameter("time grid must start at 0".into()));
    }
    propagate(
        &problem.hamiltonian,
        &problem.collapse_ops,
        problem.rho0.matrix(),
        &problem.t_grid,
        &problem.tracked,
        problem.store_states,
        tol,
    )
}

/// Uniform grid of `n` points on [0, t_end].
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0];
    }
    (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
}
