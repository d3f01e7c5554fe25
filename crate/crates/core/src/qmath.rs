//! Dense complex linear algebra sized for few-mode quantum optics.
//!
//! Everything here operates on small matrices (states of dimension <= 16,
//! raw matrices up to 256 per axis) stored row-major. Tensor products follow
//! the convention that the first factor is the slow index:
//! `kron(a, b)[ia*rb + ib][ja*cb + jb] = a[ia][ja] * b[ib][jb]`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest axis length `kron` will produce.
pub const MAX_KRON_DIM: usize = 256;

/// Largest matrix the Jacobi eigensolver accepts.
pub const MAX_EIGH_DIM: usize = 64;

/// Hermiticity tolerance enforced when constructing a [`DensityMatrix`].
pub const HERMITICITY_TOL: f64 = 1e-10;

pub const fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        CMatrix {
            rows,
            cols,
            data: vec![C64::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from explicit rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidArgument("matrix must be non-empty".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows in matrix literal".into()));
        }
        Ok(CMatrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut m = CMatrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scaled(&self, k: C64) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * k).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entry of `self - other` in absolute value.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest deviation from `self = self.dagger()`, for square matrices.
    pub fn hermitian_deviation(&self) -> f64 {
        assert!(self.is_square(), "hermiticity of a non-square matrix");
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::ZERO {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;

    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Kronecker product with the first factor as the slow index.
///
/// Rejects results larger than [`MAX_KRON_DIM`] on either axis.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let rows = a.rows() * b.rows();
    let cols = a.cols() * b.cols();
    if rows > MAX_KRON_DIM || cols > MAX_KRON_DIM {
        return Err(Error::InvalidArgument(format!(
            "kron output {rows}x{cols} exceeds {MAX_KRON_DIM} per axis"
        )));
    }
    let mut out = CMatrix::zeros(rows, cols);
    for ia in 0..a.rows() {
        for ja in 0..a.cols() {
            let f = a[(ia, ja)];
            if f == C64::ZERO {
                continue;
            }
            for ib in 0..b.rows() {
                for jb in 0..b.cols() {
                    out[(ia * b.rows() + ib, ja * b.cols() + jb)] = f * b[(ib, jb)];
                }
            }
        }
    }
    Ok(out)
}

/// Pauli matrix by index: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli(idx: usize) -> CMatrix {
    assert!(idx < 4, "pauli index must be 0..=3");
    let i = C64::I;
    let o = C64::ONE;
    let z = C64::ZERO;
    let rows = match idx {
        0 => [[o, z], [z, o]],
        1 => [[z, o], [o, z]],
        2 => [[z, -i], [i, z]],
        _ => [[o, z], [z, -o]],
    };
    CMatrix::from_fn(2, 2, |r, c| rows[r][c])
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: Vec<C64>,
}

impl PureState {
    /// Normalizes the given amplitudes; fails on empty, non-finite, or
    /// zero-norm input.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::InvalidArgument("empty state vector".into()));
        }
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite amplitude".into()));
        }
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-150 {
            return Err(Error::InvalidArgument("zero-norm state vector".into()));
        }
        let inv = 1.0 / norm;
        Ok(PureState {
            amps: amps.into_iter().map(|z| z * inv).collect(),
        })
    }

    /// Computational basis state `|idx>` in `dim` dimensions.
    pub fn basis(dim: usize, idx: usize) -> Self {
        assert!(idx < dim, "basis index out of range");
        let mut amps = vec![C64::ZERO; dim];
        amps[idx] = C64::ONE;
        PureState { amps }
    }

    /// Two-qubit state `(|00> + e^{i phase} |11>) / sqrt(2)` in the
    /// `[00, 01, 10, 11]` product ordering.
    pub fn bell_phi_plus(phase_rad: f64) -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        PureState {
            amps: vec![c64(r, 0.0), C64::ZERO, C64::ZERO, C64::from_polar(r, phase_rad)],
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        assert_eq!(self.dim(), other.dim(), "inner product dimension mismatch");
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn density(&self) -> DensityMatrix {
        let d = self.dim();
        let mat = CMatrix::from_fn(d, d, |i, j| self.amps[i] * self.amps[j].conj());
        DensityMatrix { mat }
    }
}

/// Hermitian operator representing a (possibly sub-normalized) quantum state.
///
/// Construction enforces Hermiticity and a trace in `[-1e-10, 1 + 1e-8]`;
/// sub-normalized states track loss, and zero-trace states are allowed so
/// fully extinguished branches stay representable. Positivity is *not*
/// enforced here because linear tomographic inversion legitimately produces
/// indefinite estimates; use [`is_physical`] or [`project_psd`] where
/// positivity matters.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    pub fn new(mat: CMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch {
                context: "DensityMatrix::new",
                expected: mat.rows(),
                got: mat.cols(),
            });
        }
        if !mat.is_finite() {
            return Err(Error::InvalidArgument("non-finite density matrix".into()));
        }
        let dev = mat.hermitian_deviation();
        let tol = HERMITICITY_TOL.max(1e-12 * mat.max_abs());
        if dev > tol {
            return Err(Error::NotHermitian { dev });
        }
        let tr = mat.trace().re;
        if !(-1e-10..=1.0 + 1e-8).contains(&tr) {
            return Err(Error::NonPhysical(format!(
                "density matrix trace {tr} outside [0, 1]"
            )));
        }
        Ok(DensityMatrix { mat })
    }

    pub fn from_pure(state: &PureState) -> Self {
        state.density()
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            mat: CMatrix::identity(dim).scaled(c64(1.0 / dim as f64, 0.0)),
        }
    }

    /// Isotropic mixture of a phased Bell state with white noise:
    /// `v * |phi(phase)><phi(phase)| + (1 - v) * I/4`.
    pub fn werner(phase_rad: f64, visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::InvalidArgument(format!(
                "visibility {visibility} outside [0, 1]"
            )));
        }
        let bell = PureState::bell_phi_plus(phase_rad).density();
        let mixed = DensityMatrix::maximally_mixed(4);
        let mat = &bell.mat.scaled(c64(visibility, 0.0))
            + &mixed.mat.scaled(c64(1.0 - visibility, 0.0));
        Ok(DensityMatrix { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn trace_real(&self) -> f64 {
        self.mat.trace().re
    }

    /// `tr(op * rho)`, real part.
    pub fn expect_real(&self, op: &CMatrix) -> f64 {
        assert_eq!(op.rows(), self.dim(), "operator dimension mismatch");
        assert_eq!(op.cols(), self.dim(), "operator dimension mismatch");
        (op * &self.mat).trace().re
    }

    /// Applies a (sub-)isometry `k` (shape `out_dim x dim`), giving
    /// `k * rho * k.dagger()`.
    pub fn conjugated_by(&self, k: &CMatrix) -> Result<Self> {
        if k.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "DensityMatrix::conjugated_by",
                expected: self.dim(),
                got: k.cols(),
            });
        }
        DensityMatrix::new(&(k * &self.mat) * &k.dagger())
    }

    /// Rescales to unit trace; fails when the trace is not positive.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace_real();
        if tr <= 0.0 {
            return Err(Error::ZeroTrace("DensityMatrix::normalized"));
        }
        Ok(DensityMatrix {
            mat: self.mat.scaled(c64(1.0 / tr, 0.0)),
        })
    }
}

/// Result of a Hermitian eigendecomposition: `eigenvalues` ascending, with
/// the matching eigenvectors as columns of `eigenvectors`.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// The input must be square, finite, Hermitian within `1e-8 * scale`, and no
/// larger than [`MAX_EIGH_DIM`]; it is symmetrized before iterating so the
/// last-bit asymmetry of accumulated products cannot leak into the result.
pub fn eigh(m: &CMatrix) -> Result<Eigh> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "eigh",
            expected: m.rows(),
            got: m.cols(),
        });
    }
    let n = m.rows();
    if n > MAX_EIGH_DIM {
        return Err(Error::InvalidArgument(format!(
            "eigh input dimension {n} exceeds {MAX_EIGH_DIM}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument("non-finite eigh input".into()));
    }
    let scale = m.max_abs().max(1.0);
    let dev = m.hermitian_deviation();
    if dev > 1e-8 * scale {
        return Err(Error::NotHermitian { dev });
    }

    let mut a = CMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let mut v = CMatrix::identity(n);
    let norm = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let target = 1e-14 * norm;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= target / (n * n) as f64 {
                    continue;
                }
                let phase = apq / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Unitary plane rotation G = diag(1, e^{-i beta}) * [[c, s], [-s, c]]
                // on the (p, q) plane; A <- G^dagger A G zeroes A[p][q].
                let ps = phase.conj() * s;
                let pc = phase.conj() * c;
                for i in 0..n {
                    let x = a[(i, p)];
                    let y = a[(i, q)];
                    a[(i, p)] = x * c - y * ps;
                    a[(i, q)] = x * s + y * pc;
                }
                for j in 0..n {
                    let x = a[(p, j)];
                    let y = a[(q, j)];
                    a[(p, j)] = x * c - y * (phase * s);
                    a[(q, j)] = x * s + y * (phase * c);
                }
                a[(p, q)] = C64::ZERO;
                a[(q, p)] = C64::ZERO;
                a[(p, p)] = c64(a[(p, p)].re, 0.0);
                a[(q, q)] = c64(a[(q, q)].re, 0.0);
                for i in 0..n {
                    let x = v[(i, p)];
                    let y = v[(i, q)];
                    v[(i, p)] = x * c - y * ps;
                    v[(i, q)] = x * s + y * pc;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(Eigh {
        eigenvalues,
        eigenvectors,
    })
}

/// Overlap `<target| rho |target> / tr(rho)`.
///
/// The division makes this the fidelity of the *conditional* state, so
/// sub-normalized survivors compare directly against unit-norm targets.
/// Fails on dimension mismatch or a non-positive trace.
pub fn fidelity_pure(rho: &DensityMatrix, target: &PureState) -> Result<f64> {
    if rho.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            context: "fidelity_pure",
            expected: rho.dim(),
            got: target.dim(),
        });
    }
    let tr = rho.trace_real();
    if tr <= 0.0 {
        return Err(Error::ZeroTrace("fidelity_pure"));
    }
    let rv = rho.matrix().mul_vec(target.amplitudes());
    let overlap: C64 = target
        .amplitudes()
        .iter()
        .zip(&rv)
        .map(|(t, x)| t.conj() * x)
        .sum();
    Ok(overlap.re / tr)
}

/// Nearest positive semidefinite state at fixed trace: eigendecompose, clamp
/// negative eigenvalues to zero, then rescale back to the input trace.
///
/// A state whose spectrum is entirely non-positive comes back as the zero
/// matrix, since there is no mass left to rescale.
pub fn project_psd(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let dec = eigh(rho.matrix())?;
    let orig_trace = rho.trace_real();
    let clamped: Vec<f64> = dec.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let clamped_trace: f64 = clamped.iter().sum();
    let n = rho.dim();
    if clamped_trace <= 0.0 || orig_trace <= 0.0 {
        return DensityMatrix::new(CMatrix::zeros(n, n));
    }
    let rescale = orig_trace / clamped_trace;
    let v = &dec.eigenvectors;
    let mat = CMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| v[(i, k)] * v[(j, k)].conj() * (clamped[k] * rescale))
            .sum()
    });
    // Forcing exact Hermitian symmetry removes summation-order dust.
    let sym = CMatrix::from_fn(n, n, |i, j| (mat[(i, j)] + mat[(j, i)].conj()) * 0.5);
    DensityMatrix::new(sym)
}

/// Outcome of a physicality check; `passed` is the verdict at the tolerance
/// handed to [`is_physical`].
#[derive(Debug, Clone)]
pub struct PhysicalityReport {
    pub hermitian_deviation: f64,
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub passed: bool,
}

/// Checks Hermiticity, positivity, and the trace bound `0 < tr <= 1 + tol`.
pub fn is_physical(rho: &DensityMatrix, tol: f64) -> Result<PhysicalityReport> {
    let dev = rho.matrix().hermitian_deviation();
    let dec = eigh(rho.matrix())?;
    let min_eigenvalue = dec.eigenvalues[0];
    let trace = rho.trace_real();
    let passed =
        dev <= tol && min_eigenvalue >= -tol && trace > 0.0 && trace <= 1.0 + tol;
    Ok(PhysicalityReport {
        hermitian_deviation: dev,
        min_eigenvalue,
        trace,
        passed,
    })
}
