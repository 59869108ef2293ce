//! Dense Lindblad integration: the free dynamics and the reference oracle.

use crate::closed::{TimeGrid, UnitaryPropagator};
use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_eigen, CMat, CVec, I, ONE, ZERO};
use crate::open::LindbladModel;
use crate::tensor::DensityMatrix;

const POSITIVITY_TOL: f64 = 1e-9;

/// `i[ρ, H] + Σ_k (L_k ρ L_k† - ½{L_k† L_k, ρ})`.
pub fn lindblad_rhs_matrix(model: &LindbladModel, rho: &CMat) -> CMat {
    let h = model.h().matrix();
    let mut out = (rho * h - h * rho) * I;
    for l in model.jumps() {
        let lm = l.matrix();
        let ld = lm.adjoint();
        let m = &ld * lm;
        out += lm * rho * &ld - (&m * rho + rho * &m) * c(0.5, 0.0);
    }
    out
}

pub fn lindblad_rhs(model: &LindbladModel, rho: &DensityMatrix) -> Result<CMat> {
    if rho.layout() != model.layout() {
        return Err(Error::DimensionMismatch("density matrix and model layouts differ".into()));
    }
    Ok(lindblad_rhs_matrix(model, rho.matrix()))
}

/// Superoperator on row-major vectorized `ρ` (`vec(ρ)[i D + j] = ρ_ij`).
pub fn superoperator(model: &LindbladModel) -> CMat {
    let d = model.dim();
    let mut s = CMat::zeros(d * d, d * d);
    let mut basis = CMat::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            basis[(k, l)] = ONE;
            let col = lindblad_rhs_matrix(model, &basis);
            basis[(k, l)] = ZERO;
            for i in 0..d {
                for j in 0..d {
                    s[(i * d + j, k * d + l)] = col[(i, j)];
                }
            }
        }
    }
    s
}

pub fn vectorize(rho: &CMat) -> CVec {
    let d = rho.nrows();
    CVec::from_fn(d * d, |idx, _| rho[(idx / d, idx % d)])
}

pub fn unvectorize(v: &CVec, d: usize) -> CMat {
    CMat::from_fn(d, d, |i, j| v[i * d + j])
}

#[derive(Clone, Debug)]
pub struct DensitySeries {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Fixed-step propagator. Closed models use the exact unitary; models with
/// jumps use classical fourth-order Runge–Kutta on the superoperator.
#[derive(Clone, Debug)]
pub enum LindbladPropagator {
    Unitary(UnitaryPropagator),
    Rk4 { step: CMat, dim: usize },
}

impl LindbladPropagator {
    pub fn new(model: &LindbladModel, dt: f64) -> Result<Self> {
        if model.jumps().is_empty() {
            return Ok(Self::Unitary(UnitaryPropagator::new(model.h())?));
        }
        let d = model.dim();
        let a = superoperator(model) * c(dt, 0.0);
        // 1 + A + A²/2 + A³/6 + A⁴/24 is exactly one RK4 step for a linear system
        let n = d * d;
        let mut step = CMat::identity(n, n);
        let mut term = CMat::identity(n, n);
        for k in 1..=4 {
            term = &term * &a * c(1.0 / k as f64, 0.0);
            step += &term;
        }
        Ok(Self::Rk4 { step, dim: d })
    }
}

/// Propagates `ρ0` to `t_end` and returns states on the output grid.
/// Aborts if an output state has an eigenvalue below -1e-9.
pub fn lindblad_propagate(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<DensitySeries> {
    if rho0.layout() != model.layout() {
        return Err(Error::DimensionMismatch("density matrix and model layouts differ".into()));
    }
    let grid = TimeGrid::new(dt, t_end, stride)?;
    let prop = LindbladPropagator::new(model, grid.dt)?;
    let outputs = grid.output_steps();
    let layout = model.layout().clone();
    let mut times = Vec::with_capacity(outputs.len());
    let mut states = Vec::with_capacity(outputs.len());
    match &prop {
        LindbladPropagator::Unitary(u) => {
            for &m in &outputs {
                let t = m as f64 * grid.dt;
                times.push(t);
                states.push(DensityMatrix::from_matrix_unchecked(u.conjugate(rho0.matrix(), t), layout.clone()));
            }
        }
        LindbladPropagator::Rk4 { step, dim } => {
            let mut v = vectorize(rho0.matrix());
            let mut next = 0;
            for m in 0..=grid.steps {
                if outputs[next] == m {
                    let t = m as f64 * grid.dt;
                    let rho = unvectorize(&v, *dim);
                    check_positivity(&rho, t)?;
                    times.push(t);
                    states.push(DensityMatrix::from_matrix_unchecked(rho, layout.clone()));
                    next += 1;
                    if next == outputs.len() {
                        break;
                    }
                }
                v = step * &v;
            }
        }
    }
    Ok(DensitySeries { times, states })
}

fn check_positivity(rho: &CMat, t: f64) -> Result<()> {
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(t));
    }
    let (values, _) = hermitian_eigen(rho);
    if values[0] < -POSITIVITY_TOL {
        return Err(Error::PositivityViolation { t, min_eigenvalue: values[0] });
    }
    Ok(())
}

/// Unit-trace null vector of the generator.
pub fn steady_state(model: &LindbladModel) -> Result<DensityMatrix> {
    let d = model.dim();
    let mut s = superoperator(model);
    let mut rhs = CVec::zeros(d * d);
    // replace the first equation by Tr ρ = 1
    for col in 0..d * d {
        s[(0, col)] = ZERO;
    }
    for i in 0..d {
        s[(0, i * d + i)] = ONE;
    }
    rhs[0] = ONE;
    let v = s
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("generator has no unique steady state".into()))?;
    let rho = unvectorize(&v, d);
    let rho = (&rho + rho.adjoint()) * c(0.5, 0.0);
    DensityMatrix::new(rho, model.layout().clone())
}

/// `Tr(ρ O)` for Hermitian `O`, real part.
pub fn expect_real(rho: &CMat, op: &CMat) -> f64 {
    let n = rho.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (rho[(i, j)] * op[(j, i)]).re;
        }
    }
    acc
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{self, max_abs, pauli, trace};
    use crate::open::shift_operators;
    use crate::tensor::{embed, Operator, SubsystemLayout};

    fn decay(omega: f64) -> LindbladModel {
        let l = SubsystemLayout::qubits(1);
        let h = Operator::hermitian(pauli::ketbra(1, 1) * c(omega, 0.0), l.clone()).unwrap();
        LindbladModel::new(h, vec![Operator::new(pauli::lowering(), l).unwrap()]).unwrap()
    }

    #[test]
    fn decay_rhs_by_hand() {
        let m = decay(0.0);
        let rho = DensityMatrix::new(pauli::ketbra(1, 1), SubsystemLayout::qubits(1)).unwrap();
        let out = lindblad_rhs(&m, &rho).unwrap();
        assert!(max_abs(&(out - pauli::ketbra(0, 0) + pauli::ketbra(1, 1))) < 1e-15);
    }

    #[test]
    fn superoperator_matches_rhs() {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(linalg::kron(&pauli::x(), &pauli::y()), l.clone()).unwrap();
        let jump = Operator::new(embed(&pauli::lowering(), 0, &l) * c(0.3, 0.1), l.clone()).unwrap();
        let m = LindbladModel::new(h, vec![jump]).unwrap();
        let rho = CMat::from_fn(4, 4, |i, j| c((i + 2 * j) as f64 * 0.1, i as f64 - j as f64));
        let via_s = unvectorize(&(superoperator(&m) * vectorize(&rho)), 4);
        assert!(max_abs(&(via_s - lindblad_rhs_matrix(&m, &rho))) < 1e-13);
        assert!(trace(&lindblad_rhs_matrix(&m, &rho)).norm() < 1e-13);
    }

    #[test]
    fn decay_matches_exponential_and_is_fourth_order() {
        let m = decay(0.7);
        let rho0 = DensityMatrix::new(pauli::ketbra(1, 1), SubsystemLayout::qubits(1)).unwrap();
        let err = |dt: f64| {
            let s = lindblad_propagate(&m, &rho0, 2.0, dt, 1).unwrap();
            s.times
                .iter()
                .zip(&s.states)
                .map(|(t, r)| (r.matrix()[(1, 1)].re - (-t).exp()).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(0.1);
        let e2 = err(0.05);
        assert!(e1 < 1e-5);
        assert!((e1 / e2 - 16.0).abs() < 1.5, "ratio {}", e1 / e2);
        let s = lindblad_propagate(&m, &rho0, 0.0, 0.1, 1).unwrap();
        assert_eq!(s.states.len(), 1);
        assert_eq!(s.states[0].matrix(), rho0.matrix());
    }

    #[test]
    fn closed_model_uses_exact_unitary() {
        let l = SubsystemLayout::qubits(1);
        let h = Operator::hermitian(pauli::x(), l.clone()).unwrap();
        let m = LindbladModel::closed(h).unwrap();
        let rho0 = DensityMatrix::new(pauli::ketbra(0, 0), l).unwrap();
        let s = lindblad_propagate(&m, &rho0, 1.0, 0.5, 1).unwrap();
        assert!((s.states[2].matrix()[(1, 1)].re - 1.0f64.sin().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn steady_state_of_thermal_decay() {
        let l = SubsystemLayout::qubits(1);
        let h = Operator::hermitian(pauli::ketbra(1, 1), l.clone()).unwrap();
        let down = Operator::new(pauli::lowering(), l.clone()).unwrap();
        let up = Operator::new(pauli::raising() * c(0.5f64.sqrt(), 0.0), l).unwrap();
        let m = LindbladModel::new(h, vec![down, up]).unwrap();
        let ss = steady_state(&m).unwrap();
        assert!((ss.matrix()[(1, 1)].re - 1.0 / 3.0).abs() < 1e-13);
        let shifted = shift_operators(&m, &[c(2.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert!(max_abs(&(steady_state(&shifted).unwrap().matrix() - ss.matrix())) < 1e-12);
    }
}
