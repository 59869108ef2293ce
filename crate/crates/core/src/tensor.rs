//! Multipartite state and operator types, Kronecker assembly, partial traces,
//! and the reduced-operator construction behind the constrained dynamics.
//!
//! Index convention: for dims `d_1, …, d_N` the joint basis index is
//! `i = Σ_k i_k · s_k` with stride `s_k = d_{k+1} ⋯ d_N`, so subsystem 1
//! varies slowest. This is the ordering produced by `A ⊗ B ⊗ …`.

use crate::error::{Error, Result};
use crate::linalg::{self, hermitian_eigen, max_abs, CMat, CVec, C64, ZERO};

/// Reduced-operator denominators below this are rejected.
pub const DEGENERATE_NORM: f64 = 1e-30;

const HERMITIAN_REL_TOL: f64 = 1e-12;
const DENSITY_HERMITIAN_TOL: f64 = 1e-10;
const DENSITY_TRACE_TOL: f64 = 1e-10;
const DENSITY_POSITIVITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemLayout {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl SubsystemLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidLayout("at least one subsystem required".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidLayout(format!("local dimension {d} < 2")));
        }
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len() - 1).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let total = dims.iter().product();
        Ok(Self { dims, strides, total })
    }

    pub fn qubits(n: usize) -> Self {
        Self::new(vec![2; n.max(1)]).expect("qubit layout is valid")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of subsystems.
    pub fn parties(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn digit(&self, index: usize, k: usize) -> usize {
        (index / self.strides[k]) % self.dims[k]
    }

    pub fn index_of(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    /// The same space viewed as a single subsystem.
    pub fn merged(&self) -> Self {
        Self::new(vec![self.total]).expect("merged layout is valid")
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self::new(dims).expect("concatenation of valid layouts")
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.parties() {
            Err(Error::InvalidSubsystem { index: k, count: self.parties() })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hermiticity {
    Hermitian,
    NonHermitian,
    Unknown,
}

/// A `D × D` operator on a layout. The hermiticity flag is a cache; checks
/// always recompute from the entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMat,
    layout: SubsystemLayout,
    hermiticity: Hermiticity,
}

impl Operator {
    pub fn new(matrix: CMat, layout: SubsystemLayout) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}×{}, layout needs {d}×{d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, layout, hermiticity: Hermiticity::Unknown })
    }

    /// Builds an operator and verifies it is Hermitian.
    pub fn hermitian(matrix: CMat, layout: SubsystemLayout) -> Result<Self> {
        let mut op = Self::new(matrix, layout)?;
        let dev = hermiticity_violation(&op.matrix);
        if dev > 0.0 {
            return Err(Error::NotHermitian(dev));
        }
        op.hermiticity = Hermiticity::Hermitian;
        Ok(op)
    }

    pub fn zeros(layout: SubsystemLayout) -> Self {
        let d = layout.total_dim();
        Self { matrix: CMat::zeros(d, d), layout, hermiticity: Hermiticity::Hermitian }
    }

    pub fn identity(layout: SubsystemLayout) -> Self {
        let d = layout.total_dim();
        Self { matrix: CMat::identity(d, d), layout, hermiticity: Hermiticity::Hermitian }
    }

    /// `1 ⊗ … ⊗ op ⊗ … ⊗ 1` with `op` on subsystem `k`.
    pub fn local(op: &CMat, k: usize, layout: &SubsystemLayout) -> Result<Self> {
        layout.check_index(k)?;
        let dk = layout.dims()[k];
        if op.shape() != (dk, dk) {
            return Err(Error::DimensionMismatch(format!(
                "local operator is {}×{}, subsystem {k} has dimension {dk}",
                op.nrows(),
                op.ncols()
            )));
        }
        Self::new(embed(op, k, layout), layout.clone())
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn hermiticity(&self) -> Hermiticity {
        self.hermiticity
    }

    pub fn is_hermitian(&self) -> bool {
        hermiticity_violation(&self.matrix) == 0.0
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            layout: self.layout.clone(),
            hermiticity: self.hermiticity,
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        let hermiticity = if s.im == 0.0 { self.hermiticity } else { Hermiticity::Unknown };
        Self { matrix: &self.matrix * s, layout: self.layout.clone(), hermiticity }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        self.same_layout(other)?;
        Self::new(&self.matrix + &other.matrix, self.layout.clone())
    }

    pub fn times(&self, other: &Self) -> Result<Self> {
        self.same_layout(other)?;
        Self::new(&self.matrix * &other.matrix, self.layout.clone())
    }

    fn same_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::DimensionMismatch(format!(
                "layouts {:?} and {:?} differ",
                self.layout.dims(),
                other.layout.dims()
            )));
        }
        Ok(())
    }
}

/// Zero when `m` is Hermitian to relative tolerance 1e-12, else the deviation.
fn hermiticity_violation(m: &CMat) -> f64 {
    let dev = linalg::hermiticity_deviation(m);
    if dev <= HERMITIAN_REL_TOL * max_abs(m) {
        0.0
    } else {
        dev
    }
}

pub fn embed(op: &CMat, k: usize, layout: &SubsystemLayout) -> CMat {
    let before: usize = layout.dims()[..k].iter().product();
    let after: usize = layout.dims()[k + 1..].iter().product();
    linalg::kron(&linalg::kron(&linalg::identity(before), op), &linalg::identity(after))
}

/// `⊗_k |ψ_k⟩`, possibly unnormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    locals: Vec<CVec>,
    layout: SubsystemLayout,
}

impl ProductState {
    pub fn new(locals: Vec<CVec>) -> Result<Self> {
        let layout = SubsystemLayout::new(locals.iter().map(|v| v.len()).collect())?;
        Ok(Self { locals, layout })
    }

    pub fn from_slices(locals: &[&[C64]]) -> Result<Self> {
        Self::new(locals.iter().map(|v| CVec::from_column_slice(v)).collect())
    }

    /// Product of computational basis states.
    pub fn basis(layout: &SubsystemLayout, digits: &[usize]) -> Result<Self> {
        if digits.len() != layout.parties() {
            return Err(Error::DimensionMismatch("one digit per subsystem required".into()));
        }
        let locals = layout
            .dims()
            .iter()
            .zip(digits)
            .map(|(&d, &i)| {
                if i >= d {
                    return Err(Error::DimensionMismatch(format!("level {i} ≥ dimension {d}")));
                }
                let mut v = CVec::zeros(d);
                v[i] = linalg::ONE;
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(locals)
    }

    pub fn locals(&self) -> &[CVec] {
        &self.locals
    }

    pub fn local(&self, k: usize) -> &CVec {
        &self.locals[k]
    }

    pub fn into_locals(self) -> Vec<CVec> {
        self.locals
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    /// Norm of the joint vector, the product of local norms.
    pub fn norm_sqr(&self) -> f64 {
        self.locals.iter().map(|v| v.norm_squared()).product()
    }

    /// Normalizes every local factor.
    pub fn normalized(&self) -> Result<Self> {
        let locals = self
            .locals
            .iter()
            .map(|v| {
                let n = v.norm();
                if n == 0.0 || !n.is_finite() {
                    Err(Error::ZeroNorm)
                } else {
                    Ok(v / linalg::c(n, 0.0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { locals, layout: self.layout.clone() })
    }

    /// The joint vector `ψ_1 ⊗ … ⊗ ψ_N`.
    pub fn to_vector(&self) -> CVec {
        tensor_vectors(&self.locals)
    }
}

/// Dense density matrix with a subsystem layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: CMat,
    layout: SubsystemLayout,
}

impl DensityMatrix {
    /// Checks Hermiticity (1e-10) and positivity (eigenvalues ≥ -1e-9).
    pub fn new(matrix: CMat, layout: SubsystemLayout) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}×{}, layout needs {d}×{d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dev = linalg::hermiticity_deviation(&matrix);
        if dev > DENSITY_HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (deviation {dev:e})")));
        }
        let (values, _) = hermitian_eigen(&matrix);
        if values[0] < -DENSITY_POSITIVITY_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {:e}", values[0])));
        }
        Ok(Self { matrix, layout })
    }

    /// As [`DensityMatrix::new`] and additionally requires unit trace.
    pub fn normalized(matrix: CMat, layout: SubsystemLayout) -> Result<Self> {
        let rho = Self::new(matrix, layout)?;
        let tr = rho.trace();
        if (tr - linalg::ONE).norm() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} ≠ 1")));
        }
        Ok(rho)
    }

    /// Wraps a matrix produced by a trusted propagator without re-validating.
    pub fn from_matrix_unchecked(matrix: CMat, layout: SubsystemLayout) -> Self {
        Self { matrix, layout }
    }

    pub fn pure(psi: &CVec, layout: SubsystemLayout) -> Result<Self> {
        if psi.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch("vector length does not match layout".into()));
        }
        let n = psi.norm_squared();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { matrix: psi * psi.adjoint() / linalg::c(n, 0.0), layout })
    }

    pub fn from_product(state: &ProductState) -> Result<Self> {
        Self::pure(&state.to_vector(), state.layout().clone())
    }

    pub fn maximally_mixed(layout: SubsystemLayout) -> Self {
        let d = layout.total_dim();
        Self { matrix: CMat::identity(d, d) / linalg::c(d as f64, 0.0), layout }
    }

    /// `ρ_A ⊗ ρ_B`.
    pub fn tensor(&self, other: &Self) -> Self {
        Self {
            matrix: linalg::kron(&self.matrix, &other.matrix),
            layout: self.layout.concat(&other.layout),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.matrix).0
    }
}

/// Anything an operator expectation can be taken on.
pub trait QuantumState {
    fn layout(&self) -> &SubsystemLayout;
    /// `⟨ψ|O|ψ⟩` or `Tr(ρ O)` without normalization.
    fn raw_expectation(&self, op: &CMat) -> C64;
    /// `⟨ψ|ψ⟩` or `Tr ρ`.
    fn weight(&self) -> f64;
}

impl QuantumState for ProductState {
    fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }
    fn raw_expectation(&self, op: &CMat) -> C64 {
        let v = self.to_vector();
        v.dotc(&(op * &v))
    }
    fn weight(&self) -> f64 {
        self.norm_sqr()
    }
}

impl QuantumState for DensityMatrix {
    fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }
    fn raw_expectation(&self, op: &CMat) -> C64 {
        // Tr(ρ O) = Σ_ij ρ_ij O_ji
        let n = self.matrix.nrows();
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += self.matrix[(i, j)] * op[(j, i)];
            }
        }
        acc
    }
    fn weight(&self) -> f64 {
        self.trace().re
    }
}

fn check_layout(op: &Operator, state: &impl QuantumState) -> Result<()> {
    if op.layout() != state.layout() {
        return Err(Error::DimensionMismatch(format!(
            "operator layout {:?} vs state layout {:?}",
            op.layout().dims(),
            state.layout().dims()
        )));
    }
    Ok(())
}

pub fn expectation_raw(op: &Operator, state: &impl QuantumState) -> Result<C64> {
    check_layout(op, state)?;
    Ok(state.raw_expectation(op.matrix()))
}

/// `⟨O⟩` on the normalized state.
pub fn expectation(op: &Operator, state: &impl QuantumState) -> Result<C64> {
    check_layout(op, state)?;
    let w = state.weight();
    if w.abs() == 0.0 || !w.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(state.raw_expectation(op.matrix()) / w)
}

pub fn tensor_product(factors: &[Operator]) -> Result<Operator> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::DimensionMismatch("empty tensor product".into()))?;
    let mut matrix = first.matrix().clone();
    let mut layout = first.layout().clone();
    for f in rest {
        matrix = linalg::kron(&matrix, f.matrix());
        layout = layout.concat(f.layout());
    }
    Operator::new(matrix, layout)
}

pub fn tensor_vectors(factors: &[CVec]) -> CVec {
    let mut out = CVec::from_element(1, linalg::ONE);
    for f in factors {
        out = linalg::kron_vec(&out, f);
    }
    out
}

/// Kronecker product of local vectors, checked against a layout.
pub fn product_vector(layout: &SubsystemLayout, factors: &[CVec]) -> Result<CVec> {
    if factors.len() != layout.parties()
        || factors.iter().zip(layout.dims()).any(|(f, &d)| f.len() != d)
    {
        return Err(Error::DimensionMismatch("factor dimensions do not match layout".into()));
    }
    Ok(tensor_vectors(factors))
}

/// Traces out every subsystem not in `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let layout = rho.layout();
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() {
        return Err(Error::InvalidLayout("keep set is empty".into()));
    }
    for &k in &keep {
        layout.check_index(k)?;
    }
    let traced: Vec<usize> = (0..layout.parties()).filter(|k| !keep.contains(k)).collect();
    let out_layout = SubsystemLayout::new(keep.iter().map(|&k| layout.dims()[k]).collect())?;
    let d = layout.total_dim();
    let kept_index = |i: usize| {
        keep.iter().fold(0, |acc, &k| acc * layout.dims()[k] + layout.digit(i, k))
    };
    let mut out = CMat::zeros(out_layout.total_dim(), out_layout.total_dim());
    let m = rho.matrix();
    for i in 0..d {
        let ki = kept_index(i);
        for j in 0..d {
            if traced.iter().all(|&k| layout.digit(i, k) == layout.digit(j, k)) {
                out[(ki, kept_index(j))] += m[(i, j)];
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(out, out_layout))
}

/// Nonzero entries of a joint operator, prepared for repeated reduction.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    layout: SubsystemLayout,
    entries: Vec<(usize, usize, C64)>,
    // digits[i * N + k] = digit of joint index i on subsystem k
    digits: Vec<usize>,
}

impl SparseOperator {
    pub fn new(matrix: &CMat, layout: &SubsystemLayout) -> Self {
        let d = layout.total_dim();
        assert_eq!(matrix.shape(), (d, d), "matrix does not match layout");
        let mut entries = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let v = matrix[(i, j)];
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        let n = layout.parties();
        let mut digits = Vec::with_capacity(d * n);
        for i in 0..d {
            digits.extend((0..n).map(|k| layout.digit(i, k)));
        }
        Self { layout: layout.clone(), entries, digits }
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    /// Writes the reduced operator of every subsystem into `out[k]` (row-major
    /// `d_k × d_k`), with `weights` as scratch.
    pub fn reduce_into(
        &self,
        locals: &[&[C64]],
        weights: &mut Vec<C64>,
        out: &mut [Vec<C64>],
    ) -> Result<()> {
        let layout = &self.layout;
        let n = layout.parties();
        let d = layout.total_dim();
        let norms: Vec<f64> = locals.iter().map(|v| linalg::norm_sqr(v)).collect();
        // w[k*d + i] = Π_{j≠k} ψ_j[i_j]
        weights.clear();
        weights.resize(n * d, linalg::ONE);
        for i in 0..d {
            for j in 0..n {
                let amp = locals[j][self.digits[i * n + j]];
                for k in 0..n {
                    if k != j {
                        weights[k * d + i] *= amp;
                    }
                }
            }
        }
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let dk = layout.dims()[k];
            o.clear();
            o.resize(dk * dk, ZERO);
        }
        for &(i, j, v) in &self.entries {
            for (k, o) in out.iter_mut().enumerate().take(n) {
                let dk = layout.dims()[k];
                let a = self.digits[i * n + k];
                let b = self.digits[j * n + k];
                o[a * dk + b] += weights[k * d + i].conj() * v * weights[k * d + j];
            }
        }
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let denom: f64 = (0..n).filter(|&j| j != k).map(|j| norms[j]).product();
            if denom < DEGENERATE_NORM || !denom.is_finite() {
                return Err(Error::DegenerateSandwich { subsystem: k, denominator: denom });
            }
            let inv = 1.0 / denom;
            for z in o.iter_mut() {
                *z *= inv;
            }
        }
        Ok(())
    }
}

/// Reduced operators `(O)_k` for every subsystem.
pub fn reduced_operators(op: &Operator, state: &ProductState) -> Result<Vec<Operator>> {
    if op.layout() != state.layout() {
        return Err(Error::DimensionMismatch("operator and state layouts differ".into()));
    }
    let sparse = SparseOperator::new(op.matrix(), op.layout());
    let locals: Vec<&[C64]> = state.locals().iter().map(|v| v.as_slice()).collect();
    let mut scratch = Vec::new();
    let mut out = vec![Vec::new(); state.layout().parties()];
    sparse.reduce_into(&locals, &mut scratch, &mut out)?;
    out.iter()
        .zip(state.layout().dims())
        .map(|(m, &dk)| {
            Operator::new(linalg::from_row_major(dk, m), SubsystemLayout::new(vec![dk])?)
        })
        .collect()
}

/// `(O)_k = (⊗_{j≠k}⟨ψ_j|) O (⊗_{j≠k}|ψ_j⟩) / Π_{j≠k}⟨ψ_j|ψ_j⟩`.
pub fn reduced_operator(op: &Operator, state: &ProductState, k: usize) -> Result<Operator> {
    state.layout().check_index(k)?;
    Ok(reduced_operators(op, state)?.swap_remove(k))
}

/// `H_ms = Σ_k 1^{⊗(k-1)} ⊗ (H)_k ⊗ 1^{⊗(N-k)}`.
pub fn constrained_hamiltonian(h: &Operator, state: &ProductState) -> Result<Operator> {
    let layout = state.layout();
    let d = layout.total_dim();
    let mut total = CMat::zeros(d, d);
    for (k, red) in reduced_operators(h, state)?.iter().enumerate() {
        total += embed(red.matrix(), k, layout);
    }
    let mut out = Operator::new(total, layout.clone())?;
    if h.hermiticity() == Hermiticity::Hermitian || h.is_hermitian() {
        out.hermiticity = Hermiticity::Hermitian;
    }
    Ok(out)
}

/// Factors a pure product density matrix into normalized local vectors.
pub fn factor_product(rho: &DensityMatrix, tol: f64) -> Result<ProductState> {
    let purity = (rho.matrix() * rho.matrix()).trace().re / rho.trace().re.powi(2);
    if (purity - 1.0).abs() > tol {
        return Err(Error::NotProduct(format!("state is mixed (purity {purity})")));
    }
    let mut locals = Vec::new();
    for k in 0..rho.layout().parties() {
        let red = partial_trace(rho, &[k])?;
        let (vals, vecs) = hermitian_eigen(red.matrix());
        let tr = red.trace().re;
        let top = *vals.last().expect("nonempty spectrum") / tr;
        if (top - 1.0).abs() > tol {
            return Err(Error::NotProduct(format!("subsystem {k} is entangled with the rest")));
        }
        locals.push(vecs.column(vals.len() - 1).into_owned());
    }
    ProductState::new(locals)
}
