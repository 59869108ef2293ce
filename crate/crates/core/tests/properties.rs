//! Randomized invariants across the tensor, dynamics and thermodynamics layers.

use proptest::prelude::*;

use septhermo::closed::{sse_propagate, SseStepConfig};
use septhermo::linalg::{self, c, commutator, kron, max_abs, pauli, CMat, CVec, C64};
use septhermo::open::{
    constrained_jump_probabilities, lindblad_rhs_matrix, mcwf_run_trajectory, shift_operators, LindbladModel,
    McwfConfig, Observable,
};
use septhermo::scenarios::{delocalized_operators, delocalized_rate, reset_channel, reset_jumps, FridgeParams, ScenarioName, ScenarioSpec};
use septhermo::tensor::{
    constrained_hamiltonian, embed, partial_trace, reduced_operator, DensityMatrix, Operator, ProductState,
    SubsystemLayout,
};
use septhermo::thermo::bloch_vector;
use septhermo::Mode;

fn cmat(d: usize) -> impl Strategy<Value = CMat> {
    proptest::collection::vec(-1.0f64..1.0, 2 * d * d)
        .prop_map(move |x| CMat::from_fn(d, d, |i, j| c(x[2 * (i * d + j)], x[2 * (i * d + j) + 1])))
}

fn hermitian(d: usize) -> impl Strategy<Value = CMat> {
    cmat(d).prop_map(|a| (&a + a.adjoint()) * c(0.5, 0.0))
}

fn density(d: usize) -> impl Strategy<Value = CMat> {
    cmat(d).prop_map(|a| {
        let r = &a * a.adjoint() + CMat::identity(a.nrows(), a.nrows()) * c(1e-3, 0.0);
        let t = linalg::trace(&r).re;
        r / c(t, 0.0)
    })
}

fn cvec(d: usize) -> impl Strategy<Value = CVec> {
    proptest::collection::vec(-1.0f64..1.0, 2 * d)
        .prop_map(move |x| CVec::from_fn(d, |i, _| c(x[2 * i], x[2 * i + 1])))
        .prop_filter("nonzero", |v| v.norm() > 0.1)
}

fn product(dims: &'static [usize]) -> impl Strategy<Value = ProductState> {
    dims.iter()
        .map(|&d| cvec(d).boxed())
        .collect::<Vec<_>>()
        .prop_map(|locals| ProductState::new(locals).unwrap())
}

fn phase() -> impl Strategy<Value = C64> {
    (0.2f64..3.0, -3.2f64..3.2).prop_map(|(r, a)| C64::from_polar(r, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kron_is_associative_and_mixed_product(a in cmat(2), b in cmat(3), c_ in cmat(2), d in cmat(3)) {
        let lhs = kron(&kron(&a, &b), &c_);
        let rhs = kron(&a, &kron(&b, &c_));
        prop_assert!(max_abs(&(lhs - rhs)) < 1e-12);
        let mixed = kron(&a, &b) * kron(&c_, &d);
        prop_assert!(max_abs(&(mixed - kron(&(&a * &c_), &(&b * &d)))) < 1e-12);
    }

    #[test]
    fn reduced_operator_ignores_local_rescaling(h in hermitian(6), st in product(&[2, 3]), z in phase(), k in 0usize..2) {
        let l = SubsystemLayout::new(vec![2, 3]).unwrap();
        let op = Operator::new(h, l).unwrap();
        let mut locals = st.locals().to_vec();
        let other = 1 - k;
        locals[other] *= z;
        let scaled = ProductState::new(locals).unwrap();
        let a = reduced_operator(&op, &st, k).unwrap();
        let b = reduced_operator(&op, &scaled, k).unwrap();
        prop_assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-10);
    }

    #[test]
    fn constrained_commutator_has_zero_mean(h in hermitian(8), st in product(&[2, 2, 2])) {
        let l = SubsystemLayout::qubits(3);
        let op = Operator::hermitian(h.clone(), l).unwrap();
        let st = st.normalized().unwrap();
        let hms = constrained_hamiltonian(&op, &st).unwrap();
        let psi = st.to_vector();
        let m = (psi.adjoint() * commutator(hms.matrix(), &h) * &psi)[(0, 0)];
        prop_assert!(m.norm() < 1e-10, "{m}");
    }

    #[test]
    fn partial_trace_undoes_tensor_product(ra in density(2), rb in density(3)) {
        let a = DensityMatrix::new(ra.clone(), SubsystemLayout::qubits(1)).unwrap();
        let b = DensityMatrix::new(rb.clone(), SubsystemLayout::new(vec![3]).unwrap()).unwrap();
        let ab = a.tensor(&b);
        prop_assert!(max_abs(&(partial_trace(&ab, &[0]).unwrap().into_matrix() - ra)) < 1e-12);
        prop_assert!(max_abs(&(partial_trace(&ab, &[1]).unwrap().into_matrix() - rb)) < 1e-12);
    }

    #[test]
    fn generator_is_shift_invariant(
        h in hermitian(4), l1 in cmat(4), l2 in cmat(4), rho in density(4),
        lam in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let layout = SubsystemLayout::qubits(2);
        let model = LindbladModel::new(
            Operator::hermitian(h, layout.clone()).unwrap(),
            vec![Operator::new(l1, layout.clone()).unwrap(), Operator::new(l2, layout).unwrap()],
        ).unwrap();
        let shifted = shift_operators(&model, &[c(lam[0], lam[1]), c(lam[2], lam[3])]).unwrap();
        let d = lindblad_rhs_matrix(&model, &rho) - lindblad_rhs_matrix(&shifted, &rho);
        prop_assert!(max_abs(&d) < 1e-12 * (1.0 + lam.iter().map(|x| x * x).sum::<f64>()), "{}", max_abs(&d));
    }

    #[test]
    fn jump_probabilities_are_normalized_and_equivariant(
        l1 in cmat(4), l2 in cmat(4), l3 in cmat(4), st in product(&[2, 2]),
    ) {
        let layout = SubsystemLayout::qubits(2);
        let ops: Vec<Operator> = [l1, l2, l3]
            .into_iter()
            .map(|l| Operator::new(l + CMat::identity(4, 4) * c(3.0, 0.0), layout.clone()).unwrap())
            .collect();
        let h = Operator::zeros(layout.clone());
        let model = LindbladModel::new(h.clone(), ops.clone()).unwrap();
        let p = constrained_jump_probabilities(&model, &st).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let permuted = LindbladModel::new(h, vec![ops[2].clone(), ops[0].clone(), ops[1].clone()]).unwrap();
        let q = constrained_jump_probabilities(&permuted, &st).unwrap();
        prop_assert!((q[0] - p[2]).abs() < 1e-12 && (q[1] - p[0]).abs() < 1e-12 && (q[2] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn reset_channel_equals_its_jump_form(rho in density(8), k in 0usize..3, p in 0.01f64..1.0, pop in 0.0f64..1.0) {
        let l = SubsystemLayout::qubits(3);
        let lam = [pop, 1.0 - pop];
        let m = LindbladModel::new(Operator::zeros(l.clone()), reset_jumps(k, p, lam, &l).unwrap()).unwrap();
        let d = lindblad_rhs_matrix(&m, &rho) - reset_channel(&rho, k, p, lam, &l);
        prop_assert!(max_abs(&d) < 1e-12);
    }

    #[test]
    fn delocalized_rates_satisfy_detailed_balance(gamma in 1e-3f64..1.0, beta in 0.01f64..5.0, omega in 0.01f64..3.0) {
        let up = delocalized_rate(gamma, beta, -omega);
        let down = delocalized_rate(gamma, beta, omega);
        prop_assert!((up - (-beta * omega).exp() * down).abs() <= 1e-12 * down.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn constrained_qubits_stay_on_the_bloch_sphere(h in hermitian(4), st in product(&[2, 2])) {
        let l = SubsystemLayout::qubits(2);
        let op = Operator::hermitian(h, l).unwrap();
        let series = sse_propagate(&op, &st, 2.0, SseStepConfig::new(1e-3).with_stride(50)).unwrap();
        for s in &series.states {
            for v in s.locals() {
                let b = bloch_vector(v);
                let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
                prop_assert!((n - 1.0).abs() < 1e-8, "{n}");
            }
        }
    }

    #[test]
    fn constrained_trajectories_stay_product(seed in 0u64..1000) {
        let sc = ScenarioSpec::new(ScenarioName::CorrelatedDecay).build().unwrap();
        let cfg = McwfConfig { dt: 0.01, t_end: 1.0, n_traj: 1, seed, output_stride: 5, mode: Mode::Constrained, ..Default::default() };
        let st = &sc.initial.branches[0].1;
        let tr = mcwf_run_trajectory(&sc.model, st, &cfg, 0, &[Observable::Density]).unwrap();
        let layout = sc.layout().clone();
        for i in 0..tr.times.len() {
            let vals: Vec<f64> = (0..16).map(|ch| tr.at(i, ch)).collect();
            let rho = septhermo::open::density_from_channels(&vals, 4);
            let dm = DensityMatrix::new(rho.clone(), layout.clone()).unwrap();
            let a = partial_trace(&dm, &[0]).unwrap();
            let b = partial_trace(&dm, &[1]).unwrap();
            let rebuilt = a.tensor(&b).into_matrix();
            prop_assert!(max_abs(&(rebuilt - rho)) < 1e-10);
        }
    }
}

#[test]
fn every_delocalized_channel_is_balanced() {
    let spec = ScenarioSpec::new(ScenarioName::RefrigeratorDelocalized);
    let fp = FridgeParams::from_spec(&spec).unwrap();
    let gamma = spec.get("gamma");
    for (bath, omega, _) in delocalized_operators(&fp) {
        let beta = 1.0 / fp.temperature[bath];
        let down = delocalized_rate(gamma, beta, omega);
        let up = delocalized_rate(gamma, beta, -omega);
        assert!((up - (-beta * omega).exp() * down).abs() <= 1e-12 * down, "bath {bath}, ω = {omega}");
    }
}

#[test]
fn local_pauli_embedding_matches_kron() {
    let l = SubsystemLayout::qubits(2);
    assert_eq!(embed(&pauli::x(), 0, &l), kron(&pauli::x(), &CMat::identity(2, 2)));
    assert_eq!(embed(&pauli::x(), 1, &l), kron(&CMat::identity(2, 2), &pauli::x()));
}
