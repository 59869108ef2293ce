//! Small dense complex linear algebra used throughout the crate.
//!
//! Matrices passed as slices are row-major `d × d`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Largest entry of `|M - M†|`.
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// Eigenvalues (ascending) and eigenvectors (columns) of the Hermitian part of `m`.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(m.nrows(), m.ncols());
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// `V f(Λ) V†` for Hermitian `m = V Λ V†`.
pub fn hermitian_map(m: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let n = m.nrows();
    let mut scaled = vectors.clone();
    for (col, &lambda) in values.iter().enumerate() {
        let fl = f(lambda);
        for row in 0..n {
            scaled[(row, col)] *= fl;
        }
    }
    scaled * vectors.adjoint()
}

pub fn spectral_norm(m: &CMat) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Full matrix exponential (Padé, scaling and squaring).
pub fn expm(m: &CMat) -> CMat {
    m.exp()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVec, b: &CVec) -> CVec {
    a.kronecker(b)
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `out = M v` for row-major `M`.
#[inline]
pub fn matvec(m: &[C64], d: usize, v: &[C64], out: &mut [C64]) {
    for (row, o) in out.iter_mut().enumerate().take(d) {
        let r = &m[row * d..row * d + d];
        *o = r.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// `⟨v| M |v⟩` for row-major `M`.
#[inline]
pub fn sandwich(m: &[C64], d: usize, v: &[C64]) -> C64 {
    let mut acc = ZERO;
    for row in 0..d {
        let r = &m[row * d..row * d + d];
        let mv: C64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
        acc += v[row].conj() * mv;
    }
    acc
}

/// Applies `exp(-i t G)` to `v` in place, where `G` is a row-major `d × d`
/// generator (not necessarily Hermitian).
///
/// The real part of the scalar `-i t tr(G)/d` is stripped from the result and
/// returned instead, so callers can track the amplitude on a log scale. The
/// imaginary part (a phase) is applied.
pub fn apply_exp(gen: &[C64], d: usize, t: f64, v: &mut [C64]) -> f64 {
    debug_assert_eq!(gen.len(), d * d);
    debug_assert_eq!(v.len(), d);
    let minus_it = c(0.0, -t);
    let mut mu = ZERO;
    for k in 0..d {
        mu += gen[k * d + k];
    }
    mu = mu * minus_it / d as f64;
    let phase = C64::from_polar(1.0, mu.im);
    if d == 2 {
        apply_exp_2x2(gen, minus_it, mu, v);
    } else {
        apply_exp_taylor(gen, d, minus_it, mu, v);
    }
    for z in v.iter_mut() {
        *z *= phase;
    }
    mu.re
}

// exp(B) v with B = A - mu I traceless: B² = δ I, exp(B) = cosh(√δ) + sinh(√δ)/√δ B.
fn apply_exp_2x2(gen: &[C64], minus_it: C64, mu: C64, v: &mut [C64]) {
    let b00 = gen[0] * minus_it - mu;
    let b01 = gen[1] * minus_it;
    let b10 = gen[2] * minus_it;
    let b11 = gen[3] * minus_it - mu;
    let delta = b00 * b00 + b01 * b10;
    let (ch, shc) = if delta.norm() < 1e-4 {
        let d2 = delta * delta;
        (
            ONE + delta / 2.0 + d2 / 24.0 + d2 * delta / 720.0,
            ONE + delta / 6.0 + d2 / 120.0 + d2 * delta / 5040.0,
        )
    } else {
        let s = delta.sqrt();
        (s.cosh(), s.sinh() / s)
    };
    let (x, y) = (v[0], v[1]);
    v[0] = ch * x + shc * (b00 * x + b01 * y);
    v[1] = ch * y + shc * (b10 * x + b11 * y);
}

fn apply_exp_taylor(gen: &[C64], d: usize, minus_it: C64, mu: C64, v: &mut [C64]) {
    let mut b: Vec<C64> = gen.iter().map(|g| g * minus_it).collect();
    for k in 0..d {
        b[k * d + k] -= mu;
    }
    // max column sum bounds the induced 1-norm
    let mut norm1: f64 = 0.0;
    for col in 0..d {
        let s: f64 = (0..d).map(|row| b[row * d + col].norm()).sum();
        norm1 = norm1.max(s);
    }
    let substeps = (norm1 / 0.5).ceil().max(1.0) as usize;
    let inv = 1.0 / substeps as f64;
    for z in b.iter_mut() {
        *z *= inv;
    }
    let mut term = vec![ZERO; d];
    let mut next = vec![ZERO; d];
    for _ in 0..substeps {
        term.copy_from_slice(v);
        let scale = norm_sqr(v).sqrt().max(f64::MIN_POSITIVE);
        for k in 1..60 {
            matvec(&b, d, &term, &mut next);
            let inv_k = 1.0 / k as f64;
            let mut tn = 0.0;
            for (t, n) in term.iter_mut().zip(&next) {
                *t = n * inv_k;
                tn += t.norm_sqr();
            }
            for (x, t) in v.iter_mut().zip(&term) {
                *x += t;
            }
            if tn.sqrt() < 1e-17 * scale {
                break;
            }
        }
    }
}

/// Row-major copy of a dense matrix.
pub fn to_row_major(m: &CMat) -> Vec<C64> {
    let (r, cols) = m.shape();
    let mut out = Vec::with_capacity(r * cols);
    for i in 0..r {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(d: usize, data: &[C64]) -> CMat {
    CMat::from_row_slice(d, d, data)
}

pub mod pauli {
    use super::*;

    pub fn x() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }
    pub fn y() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
    }
    pub fn z() -> CMat {
        CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }
    /// `|0⟩⟨1|`
    pub fn lowering() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
    }
    /// `|1⟩⟨0|`
    pub fn raising() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
    }
    /// `|i⟩⟨j|` on a qubit.
    pub fn ketbra(i: usize, j: usize) -> CMat {
        let mut m = CMat::zeros(2, 2);
        m[(i, j)] = ONE;
        m
    }
}
