//! Closed-system propagators: exact free evolution, the separability
//! Schrödinger equation (SSE), and closed-form reference solutions.

use crate::error::{Error, Result};
use crate::linalg::{self, c, hermitian_eigen, pauli, CMat, CVec, C64, I};
use crate::stepper::MidpointStepper;
use crate::tensor::{reduced_operators, Operator, ProductState, SubsystemLayout};
use crate::Mode;

/// Uniform time grid with `steps` steps of `dt` ending exactly at `t_end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
}

impl TimeGrid {
    /// The step is shrunk slightly when `t_end / dt` is not an integer.
    pub fn new(dt: f64, t_end: f64, stride: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidParameter(format!("t_end must be ≥ 0, got {t_end}")));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("output stride must be ≥ 1".into()));
        }
        let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { dt } else { t_end / steps as f64 };
        Ok(Self { dt, steps, stride })
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Step indices at which output is recorded (always includes 0 and the last step).
    pub fn output_steps(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..=self.steps).step_by(self.stride).collect();
        if *out.last().expect("nonempty") != self.steps {
            out.push(self.steps);
        }
        out
    }

    pub fn output_times(&self) -> Vec<f64> {
        self.output_steps().iter().map(|&m| m as f64 * self.dt).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SseStepConfig {
    pub dt: f64,
    pub output_stride: usize,
}

impl SseStepConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, output_stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.output_stride = stride;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductSeries {
    pub times: Vec<f64>,
    pub states: Vec<ProductState>,
}

/// `exp(-iHt)` through one eigendecomposition, reusable across times.
#[derive(Clone, Debug)]
pub struct UnitaryPropagator {
    values: Vec<f64>,
    vectors: CMat,
}

impl UnitaryPropagator {
    pub fn new(h: &Operator) -> Result<Self> {
        let dev = linalg::hermiticity_deviation(h.matrix());
        if dev > 1e-12 * linalg::max_abs(h.matrix()).max(1.0) {
            return Err(Error::NotHermitian(dev));
        }
        let (values, vectors) = hermitian_eigen(h.matrix());
        Ok(Self { values, vectors })
    }

    pub fn apply(&self, psi0: &CVec, t: f64) -> CVec {
        let mut coeffs = self.vectors.adjoint() * psi0;
        for (z, &e) in coeffs.iter_mut().zip(&self.values) {
            *z *= C64::from_polar(1.0, -e * t);
        }
        &self.vectors * coeffs
    }

    /// `U(t) ρ U(t)†`.
    pub fn conjugate(&self, rho: &CMat, t: f64) -> CMat {
        let u = self.matrix(t);
        &u * rho * u.adjoint()
    }

    pub fn matrix(&self, t: f64) -> CMat {
        let mut scaled = self.vectors.clone();
        for (col, &e) in self.values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -e * t);
            for row in 0..scaled.nrows() {
                scaled[(row, col)] *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// `ψ(t) = exp(-iHt) ψ0` for Hermitian, time-independent `H`.
pub fn schrodinger_propagate(h: &Operator, psi0: &CVec, t: f64) -> Result<CVec> {
    if psi0.len() != h.layout().total_dim() {
        return Err(Error::DimensionMismatch("state length does not match operator".into()));
    }
    Ok(UnitaryPropagator::new(h)?.apply(psi0, t))
}

/// `d|ψ_k⟩/dt = -i (H)_k |ψ_k⟩` for every subsystem.
pub fn sse_rhs(h: &Operator, state: &ProductState) -> Result<Vec<CVec>> {
    Ok(reduced_operators(h, state)?
        .iter()
        .zip(state.locals())
        .map(|(red, psi)| (red.matrix() * psi) * (-I))
        .collect())
}

/// Integrates the SSE with the two-stage midpoint scheme. Returns normalized
/// product states on the output grid.
pub fn sse_propagate(
    h: &Operator,
    state0: &ProductState,
    t_end: f64,
    cfg: SseStepConfig,
) -> Result<ProductSeries> {
    if h.layout() != state0.layout() {
        return Err(Error::DimensionMismatch("operator and state layouts differ".into()));
    }
    if !h.is_hermitian() {
        return Err(Error::NotHermitian(linalg::hermiticity_deviation(h.matrix())));
    }
    let grid = TimeGrid::new(cfg.dt, t_end, cfg.output_stride)?;
    let mut stepper = MidpointStepper::new(h.matrix(), h.layout());
    let mut locals: Vec<Vec<C64>> = state0
        .normalized()?
        .locals()
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    let outputs = grid.output_steps();
    let mut times = Vec::with_capacity(outputs.len());
    let mut states = Vec::with_capacity(outputs.len());
    let mut next = 0;
    for m in 0..=grid.steps {
        if outputs[next] == m {
            times.push(m as f64 * grid.dt);
            states.push(to_product(&locals)?);
            next += 1;
            if next == outputs.len() {
                break;
            }
        }
        let t = m as f64 * grid.dt;
        stepper.step(&mut locals, grid.dt).map_err(|e| at_time(e, t))?;
    }
    Ok(ProductSeries { times, states })
}

pub(crate) fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::NonFinite(_) => Error::NonFinite(t),
        other => other,
    }
}

pub(crate) fn to_product(locals: &[Vec<C64>]) -> Result<ProductState> {
    ProductState::new(locals.iter().map(|v| CVec::from_column_slice(v)).collect())
}

/// `H_D = κ σˣ⊗σˣ`.
pub fn battery_drive(kappa: f64) -> Operator {
    Operator::hermitian(linalg::kron(&pauli::x(), &pauli::x()) * c(kappa, 0.0), SubsystemLayout::qubits(2))
        .expect("σˣ⊗σˣ is Hermitian")
}

/// Free battery evolution `cos(κt)ψ0 - i sin(κt) σˣ⊗σˣ ψ0`.
pub fn analytic_battery_free(kappa: f64, psi0: &CVec, t: f64) -> Result<CVec> {
    if psi0.len() != 4 {
        return Err(Error::DimensionMismatch("battery state must have dimension 4".into()));
    }
    let xx = linalg::kron(&pauli::x(), &pauli::x());
    let (s, co) = (kappa * t).sin_cos();
    Ok(psi0 * c(co, 0.0) - (xx * psi0) * c(0.0, s))
}

/// Couplings `κ_k = κ ⟨ψ_k|σˣ|ψ_k⟩` on normalized locals.
pub fn battery_couplings(kappa: f64, locals: &[CVec]) -> Result<Vec<f64>> {
    locals
        .iter()
        .map(|v| {
            let n = v.norm_squared();
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            Ok(kappa * (v.dotc(&(pauli::x() * v)).re / n))
        })
        .collect()
}

/// Closed-form constrained battery solution
/// `ψ_A(t) = cos(κ_B t) ψ_A - i sin(κ_B t) σˣ ψ_A` (and A ↔ B).
///
/// The couplings are read off the initial locals. The SSE is integrated
/// alongside and the call is refused if `κ_k(t)` drifts by more than 1e-6.
pub fn analytic_battery_constrained(kappa: f64, locals: &[CVec], t: f64) -> Result<ProductState> {
    if locals.len() != 2 || locals.iter().any(|v| v.len() != 2) {
        return Err(Error::DimensionMismatch("battery needs two qubit locals".into()));
    }
    let k0 = battery_couplings(kappa, locals)?;
    verify_battery_invariance(kappa, locals, t, &k0)?;
    let normed: Vec<CVec> = locals.iter().map(|v| v / c(v.norm(), 0.0)).collect();
    let rot = |psi: &CVec, k: f64| {
        let (s, co) = (k * t).sin_cos();
        psi * c(co, 0.0) - (pauli::x() * psi) * c(0.0, s)
    };
    ProductState::new(vec![rot(&normed[0], k0[1]), rot(&normed[1], k0[0])])
}

fn verify_battery_invariance(kappa: f64, locals: &[CVec], t: f64, k0: &[f64]) -> Result<()> {
    if t == 0.0 || kappa == 0.0 {
        return Ok(());
    }
    let state = ProductState::new(locals.to_vec())?;
    let dt = (1e-2 / kappa.abs()).min(t.abs());
    let series = sse_propagate(&battery_drive(kappa), &state, t.abs(), SseStepConfig::new(dt))?;
    for s in &series.states {
        let k = battery_couplings(kappa, s.locals())?;
        let drift = k.iter().zip(k0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift > 1e-6 {
            return Err(Error::NotApplicable(format!(
                "κ_k drifts by {drift:e} along the constrained solution"
            )));
        }
    }
    Ok(())
}

/// Battery state at time `t` as a joint vector in either mode.
pub fn analytic_battery(kappa: f64, t: f64, mode: Mode, locals: &[CVec]) -> Result<CVec> {
    match mode {
        Mode::Free => {
            let state = ProductState::new(locals.to_vec())?.normalized()?;
            analytic_battery_free(kappa, &state.to_vector(), t)
        }
        Mode::Constrained => Ok(analytic_battery_constrained(kappa, locals, t)?.to_vector()),
    }
}

/// Closed-form constrained swap dynamics under `H = κV`:
/// `ψ_A(t) = cos(|q|κt) ψ_A - i (q*/|q|) sin(|q|κt) ψ_B` and
/// `ψ_B(t) = cos(|q|κt) ψ_B - i (q/|q|) sin(|q|κt) ψ_A` with `q = ⟨ψ_A|ψ_B⟩`
/// on normalized locals. Orthogonal locals are stationary.
pub fn analytic_swap_constrained(psi_a: &CVec, psi_b: &CVec, kappa: f64, t: f64) -> Result<ProductState> {
    if psi_a.len() != psi_b.len() {
        return Err(Error::DimensionMismatch("swap partners must share a dimension".into()));
    }
    let na = psi_a.norm();
    let nb = psi_b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let a = psi_a / c(na, 0.0);
    let b = psi_b / c(nb, 0.0);
    let q = a.dotc(&b);
    let mag = q.norm();
    if mag == 0.0 {
        return ProductState::new(vec![a, b]);
    }
    let (s, co) = (mag * kappa * t).sin_cos();
    let phase = q / mag;
    let at = &a * c(co, 0.0) - &b * (I * phase.conj() * s);
    let bt = &b * c(co, 0.0) - &a * (I * phase * s);
    ProductState::new(vec![at, bt])
}

/// The swap operator `V|ij⟩ = |ji⟩` on two `d`-level systems.
pub fn swap_operator(d: usize) -> CMat {
    let mut v = CMat::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            v[(j * d + i, i * d + j)] = linalg::ONE;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, ONE, ZERO};
    use crate::tensor::{constrained_hamiltonian, embed, expectation};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn ket(v: &[f64]) -> CVec {
        CVec::from_iterator(v.len(), v.iter().map(|&x| c(x, 0.0)))
    }

    fn state_distance(a: &ProductState, b: &ProductState) -> f64 {
        (a.to_vector() - b.to_vector()).norm()
    }

    /// Distance between rays.
    fn ray_distance(a: &CVec, b: &CVec) -> f64 {
        let ov = a.dotc(b);
        let ph = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
        (a * ph - b).norm()
    }

    #[test]
    fn grid_ends_on_t_end() {
        let g = TimeGrid::new(0.3, 1.0, 2).unwrap();
        assert_eq!(g.steps, 4);
        assert!((g.t_end() - 1.0).abs() < 1e-15);
        assert_eq!(g.output_steps(), vec![0, 2, 4]);
        let g = TimeGrid::new(0.1, 1.0, 3).unwrap();
        assert_eq!(g.output_steps(), vec![0, 3, 6, 9, 10]);
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
        assert_eq!(TimeGrid::new(0.1, 0.0, 1).unwrap().output_steps(), vec![0]);
    }

    #[test]
    fn schrodinger_examples() {
        let l = SubsystemLayout::qubits(1);
        let psi = ket(&[0.6, 0.8]);
        let zero = Operator::zeros(l.clone());
        assert_eq!(schrodinger_propagate(&zero, &psi, 3.0).unwrap(), psi);

        let omega = 1.3;
        let h = Operator::hermitian(pauli::ketbra(1, 1) * c(omega, 0.0), l).unwrap();
        let plus = ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        let out = schrodinger_propagate(&h, &plus, PI / omega).unwrap();
        assert!(ray_distance(&out, &ket(&[FRAC_1_SQRT_2, -FRAC_1_SQRT_2])) < 1e-14);

        let kappa = 0.9;
        let hd = battery_drive(kappa);
        let psi00 = ket(&[1.0, 0.0, 0.0, 0.0]);
        for t in [0.1, 0.7, 2.3] {
            let out = schrodinger_propagate(&hd, &psi00, t).unwrap();
            let mut expect = CVec::zeros(4);
            expect[0] = c((kappa * t).cos(), 0.0);
            expect[3] = c(0.0, -(kappa * t).sin());
            assert!((out - expect).norm() < 1e-14);
        }
        let bad = Operator::new(pauli::lowering(), SubsystemLayout::qubits(1)).unwrap();
        assert!(matches!(schrodinger_propagate(&bad, &plus, 1.0), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn sse_rhs_examples() {
        let kappa = 1.1;
        let st = ProductState::basis(&SubsystemLayout::qubits(2), &[0, 0]).unwrap();
        let rhs = sse_rhs(&battery_drive(kappa), &st).unwrap();
        assert!(rhs.iter().all(|v| v.iter().all(|z| *z == ZERO)));

        let l = SubsystemLayout::qubits(2);
        let v = Operator::hermitian(swap_operator(2) * c(kappa, 0.0), l).unwrap();
        let a = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let b = CVec::from_vec(vec![c(0.28, 0.96), c(0.0, 0.0)]);
        let st = ProductState::new(vec![a.clone(), b.clone()]).unwrap();
        let rhs = sse_rhs(&v, &st).unwrap();
        let expect = &b * (c(0.0, -kappa) * b.dotc(&a));
        assert!((&rhs[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn sse_rhs_local_matches_schrodinger_up_to_phase() {
        let l = SubsystemLayout::qubits(2);
        let ha = pauli::z() * c(0.3, 0.0) + pauli::x() * c(0.2, 0.0);
        let hb = pauli::y() * c(-0.7, 0.0);
        let h = Operator::hermitian(embed(&ha, 0, &l) + embed(&hb, 1, &l), l.clone()).unwrap();
        let a = ket(&[0.6, 0.8]);
        let b = CVec::from_vec(vec![c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)]);
        let st = ProductState::new(vec![a.clone(), b.clone()]).unwrap();
        let rhs = sse_rhs(&h, &st).unwrap();
        // the reduced operator carries the partner energy as a scalar
        let eb = b.dotc(&(&hb * &b));
        let ea = a.dotc(&(&ha * &a));
        assert!((&rhs[0] - (&ha * &a + &a * eb) * (-I)).norm() < 1e-14);
        assert!((&rhs[1] - (&hb * &b + &b * ea) * (-I)).norm() < 1e-14);
    }

    #[test]
    fn battery_from_00_is_frozen() {
        let st = ProductState::basis(&SubsystemLayout::qubits(2), &[0, 0]).unwrap();
        let series = sse_propagate(&battery_drive(1.0), &st, 2.0 * PI, SseStepConfig::new(1e-3)).unwrap();
        let v0 = st.to_vector();
        for s in &series.states {
            assert!((s.to_vector() - &v0).norm() < 1e-12);
        }
    }

    #[test]
    fn battery_constrained_matches_closed_form() {
        let kappa = 1.0;
        let eps = 0.1;
        let locals = vec![ket(&[1.0, eps]), ket(&[1.0, eps])];
        let st = ProductState::new(locals.clone()).unwrap();
        let series =
            sse_propagate(&battery_drive(kappa), &st, 2.0 * PI, SseStepConfig::new(1e-3).with_stride(500))
                .unwrap();
        for (t, s) in series.times.iter().zip(&series.states) {
            let expect = analytic_battery_constrained(kappa, &locals, *t).unwrap();
            assert!(ray_distance(&s.to_vector(), &expect.to_vector()) < 1e-8);
            for v in s.locals() {
                let bloch = crate::thermo::bloch_vector(v);
                let r = (bloch[0].powi(2) + bloch[1].powi(2) + bloch[2].powi(2)).sqrt();
                assert!((r - 1.0).abs() < 1e-8);
            }
        }
        let k = battery_couplings(kappa, &locals).unwrap();
        assert!(k.iter().all(|&x| x <= kappa && x > 0.0));
    }

    #[test]
    fn analytic_battery_examples() {
        let kappa = 1.0;
        let zero = vec![ket(&[1.0, 0.0]), ket(&[1.0, 0.0])];
        let free = analytic_battery(kappa, PI / 2.0, Mode::Free, &zero).unwrap();
        assert!((free - CVec::from_vec(vec![ZERO, ZERO, ZERO, -I])).norm() < 1e-15);
        let frozen = analytic_battery(kappa, 1.7, Mode::Constrained, &zero).unwrap();
        assert!((frozen - ket(&[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
        let plus = ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        let out = analytic_battery_constrained(kappa, &[plus.clone(), plus.clone()], PI / 4.0).unwrap();
        let rotated = &plus * C64::from_polar(1.0, -PI / 4.0);
        for v in out.locals() {
            assert!((v - &rotated).norm() < 1e-15);
        }
    }

    #[test]
    fn swap_closed_form_examples() {
        let a = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let b = CVec::from_vec(vec![c(0.28, 0.96), c(0.0, 0.0)]);
        let at0 = analytic_swap_constrained(&a, &b, 1.0, 0.0).unwrap();
        assert!((at0.local(0) - &a).norm() < 1e-15 && (at0.local(1) - &b).norm() < 1e-15);
        let orth = analytic_swap_constrained(&ket(&[1.0, 0.0]), &ket(&[0.0, 1.0]), 1.0, 5.0).unwrap();
        assert_eq!(orth.local(0), &ket(&[1.0, 0.0]));

        // branch with ψ_B = |j⟩: ψ_A(t) = cos(q_j κt) ψ_A - i sin(q_j κt)|j⟩ for real q_j
        let beta_omega: f64 = 0.2;
        let z = 1.0 + (-beta_omega).exp();
        let psi_a = ket(&[1.0 / z.sqrt(), (-beta_omega / 2.0).exp() / z.sqrt()]);
        for (j, q) in [(0usize, psi_a[0].re), (1, psi_a[1].re)] {
            let mut bj = CVec::zeros(2);
            bj[j] = ONE;
            let t = 0.83;
            let out = analytic_swap_constrained(&psi_a, &bj, 1.0, t).unwrap();
            let expect = &psi_a * c((q * t).cos(), 0.0) - &bj * c(0.0, (q * t).sin());
            assert!((out.local(0) - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn sse_swap_matches_closed_form_and_converges_third_order() {
        let kappa = 1.0;
        let l = SubsystemLayout::qubits(2);
        let v = Operator::hermitian(swap_operator(2) * c(kappa, 0.0), l).unwrap();
        let a = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let b = CVec::from_vec(vec![c(0.8, 0.0), c(0.36, 0.48)]);
        let st = ProductState::new(vec![a.clone(), b.clone()]).unwrap();
        let max_err = |dt: f64, t_end: f64| {
            let series = sse_propagate(&v, &st, t_end, SseStepConfig::new(dt)).unwrap();
            series
                .times
                .iter()
                .zip(&series.states)
                .map(|(&t, s)| {
                    let e = analytic_swap_constrained(&a, &b, kappa, t).unwrap();
                    state_distance(s, &e)
                })
                .fold(0.0, f64::max)
        };
        assert!(max_err(1e-3, 2.0 * PI) < 1e-6);
        let coarse = max_err(0.02, 2.0 * PI);
        let fine = max_err(0.01, 2.0 * PI);
        // global error is second order, the local step error third order
        let ratio = coarse / fine;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        let one = max_err(0.02, 0.02);
        let half = max_err(0.01, 0.01);
        let local_ratio = one / half;
        assert!(local_ratio > 7.0 && local_ratio < 9.0, "local ratio {local_ratio}");
    }

    #[test]
    fn constrained_energy_is_conserved() {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(
            swap_operator(2) * c(0.7, 0.0)
                + embed(&(pauli::z() * c(0.4, 0.0)), 0, &l)
                + embed(&(pauli::x() * c(0.3, 0.0)), 1, &l),
            l,
        )
        .unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), CVec::from_vec(vec![c(0.0, 0.6), c(0.8, 0.0)])])
            .unwrap();
        // the midpoint energy error is bounded and oscillatory, O(dt²)
        let series = sse_propagate(&h, &st, 10.0, SseStepConfig::new(2.5e-4).with_stride(400)).unwrap();
        let e0 = expectation(&h, &series.states[0]).unwrap().re;
        for s in &series.states {
            assert!((expectation(&h, s).unwrap().re - e0).abs() < 1e-8);
            let hms = constrained_hamiltonian(&h, s).unwrap();
            let comm = crate::tensor::expectation(
                &Operator::new(linalg::commutator(hms.matrix(), h.matrix()), h.layout().clone()).unwrap(),
                s,
            )
            .unwrap();
            assert!(comm.norm() < 1e-10);
        }
    }

    #[test]
    fn local_hamiltonian_constrained_equals_free() {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(
            embed(&(pauli::z() * c(0.4, 0.0) + pauli::x() * c(0.25, 0.0)), 0, &l)
                + embed(&(pauli::y() * c(-0.3, 0.0)), 1, &l),
            l,
        )
        .unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let series = sse_propagate(&h, &st, 5.0, SseStepConfig::new(1e-3).with_stride(250)).unwrap();
        let u = UnitaryPropagator::new(&h).unwrap();
        for (t, s) in series.times.iter().zip(&series.states) {
            let free = u.apply(&st.to_vector(), *t);
            assert!(ray_distance(&s.to_vector(), &free) < 1e-9);
        }
        assert!(max_abs(&(u.matrix(0.0) - CMat::identity(4, 4))) < 1e-14);
    }
}
