//! Two-stage midpoint propagation of product states under a frozen-reduced
//! generator. Shared by the closed (Hermitian) and open (non-Hermitian) engines.

use crate::error::{Error, Result};
use crate::linalg::{apply_exp, norm_sqr, sandwich, CMat, C64};
use crate::tensor::{SparseOperator, SubsystemLayout};

/// Outcome of one midpoint step.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    /// Change of `ln ⟨ψ|ψ⟩` produced by the local propagators (the locals are
    /// renormalized afterwards).
    pub log_norm_change: f64,
    /// `⟨G⟩` on the normalized midpoint state.
    pub mean_generator_mid: C64,
}

/// Holds scratch buffers so a trajectory allocates once.
#[derive(Clone, Debug)]
pub struct MidpointStepper {
    gen: SparseOperator,
    weights: Vec<C64>,
    gens: Vec<Vec<C64>>,
    mid: Vec<Vec<C64>>,
}

impl MidpointStepper {
    pub fn new(generator: &CMat, layout: &SubsystemLayout) -> Self {
        let n = layout.parties();
        Self {
            gen: SparseOperator::new(generator, layout),
            weights: Vec::new(),
            gens: vec![Vec::new(); n],
            mid: layout.dims().iter().map(|&d| vec![C64::new(0.0, 0.0); d]).collect(),
        }
    }

    pub fn layout(&self) -> &SubsystemLayout {
        self.gen.layout()
    }

    /// Reduced generators `(G)_k` on `locals`, row-major.
    pub fn reduced(&mut self, locals: &[Vec<C64>]) -> Result<&[Vec<C64>]> {
        let views: Vec<&[C64]> = locals.iter().map(|v| v.as_slice()).collect();
        self.gen.reduce_into(&views, &mut self.weights, &mut self.gens)?;
        Ok(&self.gens)
    }

    /// `⟨G⟩` on normalized `locals`.
    pub fn mean(&mut self, locals: &[Vec<C64>]) -> Result<C64> {
        let d0 = locals[0].len();
        self.reduced(locals)?;
        Ok(sandwich(&self.gens[0], d0, &locals[0]) / norm_sqr(&locals[0]))
    }

    /// Advances `locals` by `tau`: freeze the reduced generators, move to the
    /// midpoint, refreeze there, and propagate the original locals over the
    /// full step with the exact local exponentials. Locals leave normalized.
    pub fn step(&mut self, locals: &mut [Vec<C64>], tau: f64) -> Result<StepInfo> {
        let views: Vec<&[C64]> = locals.iter().map(|v| v.as_slice()).collect();
        self.gen.reduce_into(&views, &mut self.weights, &mut self.gens)?;
        for ((m, v), g) in self.mid.iter_mut().zip(locals.iter()).zip(&self.gens) {
            m.copy_from_slice(v);
            let d = m.len();
            apply_exp(g, d, 0.5 * tau, m);
            normalize(m)?;
        }
        let views: Vec<&[C64]> = self.mid.iter().map(|v| v.as_slice()).collect();
        self.gen.reduce_into(&views, &mut self.weights, &mut self.gens)?;
        let d0 = self.mid[0].len();
        let mean_generator_mid = sandwich(&self.gens[0], d0, &self.mid[0]);
        let mut log_norm_change = 0.0;
        for (v, g) in locals.iter_mut().zip(&self.gens) {
            let d = v.len();
            let re_mu = apply_exp(g, d, tau, v);
            log_norm_change += 2.0 * re_mu + normalize(v)?;
        }
        if !log_norm_change.is_finite() {
            return Err(Error::NonFinite(f64::NAN));
        }
        Ok(StepInfo { log_norm_change, mean_generator_mid })
    }
}

/// Normalizes in place and returns `ln` of the previous squared norm.
pub fn normalize(v: &mut [C64]) -> Result<f64> {
    let n2 = norm_sqr(v);
    if !n2.is_finite() {
        return Err(Error::NonFinite(f64::NAN));
    }
    if n2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let inv = 1.0 / n2.sqrt();
    for z in v.iter_mut() {
        *z *= inv;
    }
    Ok(n2.ln())
}
