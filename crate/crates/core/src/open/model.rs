use crate::error::{Error, Result};
use crate::linalg::{self, c, spectral_norm, CMat, C64, ZERO};
use crate::tensor::{Operator, SubsystemLayout};

/// Hamiltonian plus jump operators. When `shift` is set the stored operators
/// are the shifted ones and the unshifted pair is recoverable.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladModel {
    h: Operator,
    jumps: Vec<Operator>,
    shift: Option<Vec<C64>>,
}

impl LindbladModel {
    pub fn new(h: Operator, jumps: Vec<Operator>) -> Result<Self> {
        if !h.is_hermitian() {
            return Err(Error::NotHermitian(linalg::hermiticity_deviation(h.matrix())));
        }
        if let Some(bad) = jumps.iter().position(|l| l.layout() != h.layout()) {
            return Err(Error::DimensionMismatch(format!("jump {bad} does not share the Hamiltonian layout")));
        }
        Ok(Self { h, jumps, shift: None })
    }

    pub fn closed(h: Operator) -> Result<Self> {
        Self::new(h, Vec::new())
    }

    pub fn h(&self) -> &Operator {
        &self.h
    }

    pub fn jumps(&self) -> &[Operator] {
        &self.jumps
    }

    pub fn layout(&self) -> &SubsystemLayout {
        self.h.layout()
    }

    pub fn shift(&self) -> Option<&[C64]> {
        self.shift.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.layout().total_dim()
    }

    /// `Σ_k L_k† L_k`.
    pub fn jump_sum(&self) -> CMat {
        let d = self.dim();
        self.jumps.iter().fold(CMat::zeros(d, d), |acc, l| acc + l.matrix().adjoint() * l.matrix())
    }

    /// `H - (i/2) Σ_k L_k† L_k`.
    pub fn effective_generator(&self) -> CMat {
        self.h.matrix() - self.jump_sum() * c(0.0, 0.5)
    }

    /// `λ_k = factor · ‖L_k‖` with the spectral norm.
    pub fn lambda_for_factor(&self, factor: f64) -> Vec<C64> {
        self.jumps.iter().map(|l| c(factor * spectral_norm(l.matrix()), 0.0)).collect()
    }

    /// The unshifted model.
    pub fn original(&self) -> Self {
        match &self.shift {
            None => self.clone(),
            Some(lambda) => {
                let neg: Vec<C64> = lambda.iter().map(|z| -z).collect();
                let mut out = apply_shift(self, &neg);
                out.shift = None;
                out
            }
        }
    }
}

fn apply_shift(model: &LindbladModel, lambda: &[C64]) -> LindbladModel {
    let d = model.dim();
    let id = CMat::identity(d, d);
    let mut h = model.h.matrix().clone();
    let mut jumps = Vec::with_capacity(model.jumps.len());
    for (l, &lam) in model.jumps.iter().zip(lambda) {
        // (1/2i)(λ* L - λ L†)
        h += (l.matrix() * lam.conj() - l.matrix().adjoint() * lam) * c(0.0, -0.5);
        jumps.push(Operator::new(l.matrix() + &id * lam, model.layout().clone()).expect("same layout"));
    }
    // the correction is Hermitian up to rounding
    let h = (&h + h.adjoint()) * c(0.5, 0.0);
    let h = Operator::hermitian(h, model.layout().clone()).expect("shifted Hamiltonian is Hermitian");
    LindbladModel { h, jumps, shift: model.shift.clone() }
}

/// `H ← H + (1/2i) Σ_k (λ_k* L_k - λ_k L_k†)`, `L_k ← L_k + λ_k 1`.
/// Shifts compose; the accumulated shift is recorded.
pub fn shift_operators(model: &LindbladModel, lambda: &[C64]) -> Result<LindbladModel> {
    if lambda.len() != model.jumps.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} shifts for {} jump operators",
            lambda.len(),
            model.jumps.len()
        )));
    }
    let mut out = apply_shift(model, lambda);
    let total: Vec<C64> = match &model.shift {
        None => lambda.to_vec(),
        Some(prev) => prev.iter().zip(lambda).map(|(a, b)| a + b).collect(),
    };
    out.shift = if total.iter().all(|z| *z == ZERO) { None } else { Some(total) };
    Ok(out)
}
