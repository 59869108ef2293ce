//! Ready-made models: battery, absorption refrigerator (localized and
//! delocalized baths), correlated dephasing, swap exchange with a thermal
//! qubit, and correlated decay.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::closed::{analytic_battery, swap_operator};
use crate::error::{Error, Result};
use crate::linalg::{self, c, commutator, kron, max_abs, pauli, CMat, CVec, ONE, ZERO};
use crate::open::{InitialEnsemble, LindbladModel};
use crate::tensor::{embed, Operator, ProductState, SubsystemLayout};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Battery,
    RefrigeratorLocalized,
    RefrigeratorDelocalized,
    Dephasing,
    SwapExchange,
    CorrelatedDecay,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::Battery,
        ScenarioName::RefrigeratorLocalized,
        ScenarioName::RefrigeratorDelocalized,
        ScenarioName::Dephasing,
        ScenarioName::SwapExchange,
        ScenarioName::CorrelatedDecay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Battery => "battery",
            ScenarioName::RefrigeratorLocalized => "refrigerator_localized",
            ScenarioName::RefrigeratorDelocalized => "refrigerator_delocalized",
            ScenarioName::Dephasing => "dephasing",
            ScenarioName::SwapExchange => "swap_exchange",
            ScenarioName::CorrelatedDecay => "correlated_decay",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioName::Battery => "two-qubit battery charged by κσˣ⊗σˣ (closed)",
            ScenarioName::RefrigeratorLocalized => "three-qubit absorption refrigerator, one reset bath per qubit",
            ScenarioName::RefrigeratorDelocalized => "three-qubit absorption refrigerator, baths acting on joint eigenstates",
            ScenarioName::Dephasing => "two qubits under correlated dephasing and ωσᶻ⊗σᶻ",
            ScenarioName::SwapExchange => "qubit A exchanging with a thermal qubit B through κ·SWAP (closed)",
            ScenarioName::CorrelatedDecay => "collective decay of |ee⟩ through the symmetric channel",
        }
    }

    /// Parameter keys with defaults and a one-line meaning.
    pub fn parameters(self) -> &'static [(&'static str, f64, &'static str)] {
        match self {
            ScenarioName::Battery => &[
                ("kappa", 1.0, "drive strength κ"),
                ("omega", 1.0, "qubit frequency ω in H₀ = ω(σᶻ⊗1 + 1⊗σᶻ)"),
                ("epsilon", 0.0, "initial locals ∝ |0⟩ + ε|1⟩"),
            ],
            ScenarioName::RefrigeratorLocalized => &[
                ("omega_w", 1.0, "work qubit frequency"),
                ("omega_c", 0.687, "cold qubit frequency; ω_h = ω_w + ω_c"),
                ("g", 0.1, "three-body coupling"),
                ("t_w", 6.33, "work bath temperature"),
                ("t_h", 3.25, "hot bath temperature"),
                ("t_c", 2.4, "cold bath temperature"),
                ("p_w", 0.1, "work reset rate"),
                ("p_h", 0.1, "hot reset rate"),
                ("p_c", 0.1, "cold reset rate"),
            ],
            ScenarioName::RefrigeratorDelocalized => &[
                ("omega_w", 1.0, "work qubit frequency"),
                ("omega_c", 0.687, "cold qubit frequency; ω_h = ω_w + ω_c"),
                ("g", 0.1, "three-body coupling"),
                ("t_w", 6.33, "work bath temperature"),
                ("t_h", 3.25, "hot bath temperature"),
                ("t_c", 2.4, "cold bath temperature"),
                ("gamma", 0.01, "bath coupling γ in Γ = γω³e^{βω/2}sinh(βω/2)"),
            ],
            ScenarioName::Dephasing => &[
                ("omega", 1.0, "spin-spin coupling ω"),
                ("gamma", 1.0, "dephasing rate γ"),
                ("lambda_init", 1.0, "initial locals ∝ |0⟩ + λ|1⟩"),
            ],
            ScenarioName::SwapExchange => &[
                ("omega_a", 1.0, "frequency of qubit A"),
                ("omega_b", 1.0, "frequency of qubit B"),
                ("t_a", 5.0, "temperature setting the coherence of A"),
                ("t_b", 1.0, "temperature of B"),
                ("kappa", 1.0, "swap strength"),
            ],
            ScenarioName::CorrelatedDecay => &[("gamma", 1.0, "collective decay rate")],
        }
    }

    /// Default run settings in units where the scenario's rates are one.
    pub fn run_defaults(self) -> RunDefaults {
        match self {
            ScenarioName::Battery => RunDefaults { dt: 1e-3, t_end: 2.0 * PI, output_stride: 10, n_traj: 1, full_n_traj: 1 },
            ScenarioName::RefrigeratorLocalized => {
                RunDefaults { dt: 0.01, t_end: 60.0, output_stride: 100, n_traj: 10_000, full_n_traj: 4_000_000 }
            }
            ScenarioName::RefrigeratorDelocalized => {
                RunDefaults { dt: 0.01, t_end: 60.0, output_stride: 100, n_traj: 10_000, full_n_traj: 500_000 }
            }
            ScenarioName::Dephasing => RunDefaults { dt: 0.01, t_end: 3.0, output_stride: 10, n_traj: 20_000, full_n_traj: 20_000 },
            ScenarioName::SwapExchange => {
                RunDefaults { dt: 1e-3, t_end: 4.0 * PI, output_stride: 20, n_traj: 1, full_n_traj: 1 }
            }
            ScenarioName::CorrelatedDecay => {
                RunDefaults { dt: 0.005, t_end: 4.0, output_stride: 20, n_traj: 10_000, full_n_traj: 100_000 }
            }
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunDefaults {
    pub dt: f64,
    pub t_end: f64,
    pub output_stride: usize,
    pub n_traj: usize,
    /// Trajectory count of the published figures.
    pub full_n_traj: usize,
}

/// Scenario name plus a complete parameter map.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub params: BTreeMap<String, f64>,
}

impl ScenarioSpec {
    pub fn new(name: ScenarioName) -> Self {
        let params = name.parameters().iter().map(|(k, v, _)| (k.to_string(), *v)).collect();
        Self { name, params }
    }

    /// Overrides one parameter; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match self.params.get_mut(key) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::InvalidParameter(format!("scenario {} has no parameter `{key}`", self.name))),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Result<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> f64 {
        self.params[key]
    }

    pub fn build(&self) -> Result<Scenario> {
        for (k, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("parameter `{k}` must be finite")));
            }
        }
        match self.name {
            ScenarioName::Battery => build_battery(self),
            ScenarioName::RefrigeratorLocalized => build_refrigerator_localized(self),
            ScenarioName::RefrigeratorDelocalized => build_refrigerator_delocalized(self),
            ScenarioName::Dephasing => build_dephasing(self),
            ScenarioName::SwapExchange => build_swap_exchange(self),
            ScenarioName::CorrelatedDecay => build_correlated_decay(self),
        }
    }
}

/// A built scenario: dynamics, initial ensemble, and what to measure.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub model: LindbladModel,
    /// Observable whose change is reported as heat.
    pub energy: CMat,
    pub initial: InitialEnsemble,
    /// Labels of the subsystems, in layout order.
    pub parties: Vec<&'static str>,
    /// Inverse temperature of the single bath, if there is exactly one.
    pub beta: Option<f64>,
}

impl Scenario {
    pub fn name(&self) -> ScenarioName {
        self.spec.name
    }

    pub fn layout(&self) -> &SubsystemLayout {
        self.model.layout()
    }

    /// Ground-state projectors `|0⟩⟨0|_k`, one per subsystem.
    pub fn ground_projectors(&self) -> Vec<(String, CMat)> {
        let layout = self.layout();
        self.parties
            .iter()
            .enumerate()
            .map(|(k, p)| (p.to_string(), embed(&pauli::ketbra(0, 0), k, layout)))
            .collect()
    }

    /// Initial density matrix of the ensemble.
    pub fn initial_density(&self) -> Result<CMat> {
        let d = self.model.dim();
        let mut rho = CMat::zeros(d, d);
        for (w, st) in &self.initial.branches {
            let v = st.normalized()?.to_vector();
            rho += &v * v.adjoint() * c(*w, 0.0);
        }
        Ok(rho)
    }

    /// Closed-form heat where one exists.
    pub fn analytic_heat(&self, mode: Mode, t: f64) -> Option<f64> {
        match self.name() {
            ScenarioName::SwapExchange => {
                let p = SwapParams::from_spec(&self.spec);
                Some(match mode {
                    Mode::Free => p.heat_free(t),
                    Mode::Constrained => p.heat_constrained(t),
                })
            }
            ScenarioName::Dephasing if mode == Mode::Free => Some(0.0),
            _ => None,
        }
    }

    /// Closed-form Bell overlap of the free correlated decay.
    pub fn analytic_bell_overlap(&self, t: f64) -> Option<f64> {
        (self.name() == ScenarioName::CorrelatedDecay).then(|| {
            let x = 2.0 * self.spec.get("gamma") * t;
            x * (-x).exp()
        })
    }

    /// Closed-form battery state.
    pub fn analytic_battery_state(&self, mode: Mode, t: f64) -> Option<Result<CVec>> {
        (self.name() == ScenarioName::Battery).then(|| {
            let (_, st) = &self.initial.branches[0];
            analytic_battery(self.spec.get("kappa"), t, mode, st.locals())
        })
    }
}

fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg.into()))
    }
}

fn ket2(a: f64, b: f64) -> CVec {
    CVec::from_vec(vec![c(a, 0.0), c(b, 0.0)])
}

fn basis_ket(d: usize, i: usize) -> CVec {
    let mut v = CVec::zeros(d);
    v[i] = ONE;
    v
}

/// `H₀ = ω(σᶻ⊗1 + 1⊗σᶻ)`.
pub fn battery_internal_hamiltonian(omega: f64) -> CMat {
    let l = SubsystemLayout::qubits(2);
    (embed(&pauli::z(), 0, &l) + embed(&pauli::z(), 1, &l)) * c(omega, 0.0)
}

fn build_battery(spec: &ScenarioSpec) -> Result<Scenario> {
    let kappa = spec.get("kappa");
    let eps = spec.get("epsilon");
    let l = SubsystemLayout::qubits(2);
    let h = Operator::hermitian(kron(&pauli::x(), &pauli::x()) * c(kappa, 0.0), l)?;
    let local = ket2(1.0, eps);
    let local = &local / c(local.norm(), 0.0);
    Ok(Scenario {
        spec: spec.clone(),
        model: LindbladModel::closed(h)?,
        energy: battery_internal_hamiltonian(spec.get("omega")),
        initial: InitialEnsemble::pure(ProductState::new(vec![local.clone(), local])?),
        parties: vec!["a", "b"],
        beta: None,
    })
}

/// Two-level Gibbs state `(|0⟩⟨0| + e^{-ω/T}|1⟩⟨1|)/Z` as its populations.
pub fn thermal_populations(omega: f64, temperature: f64) -> [f64; 2] {
    let x = (-omega / temperature).exp();
    [1.0 / (1.0 + x), x / (1.0 + x)]
}

/// Parameters shared by both refrigerator models, qubit order (w, h, c).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FridgeParams {
    pub omega: [f64; 3],
    pub temperature: [f64; 3],
    pub g: f64,
}

impl FridgeParams {
    pub fn from_spec(spec: &ScenarioSpec) -> Result<Self> {
        let (ow, oc) = (spec.get("omega_w"), spec.get("omega_c"));
        let t = [spec.get("t_w"), spec.get("t_h"), spec.get("t_c")];
        require(ow > 0.0 && oc > 0.0, "refrigerator frequencies must be positive")?;
        require(t.iter().all(|&x| x > 0.0), "temperatures must be positive")?;
        require(spec.get("g") >= 0.0, "coupling g must be ≥ 0")?;
        Ok(Self { omega: [ow, ow + oc, oc], temperature: t, g: spec.get("g") })
    }

    pub fn omega_h(&self) -> f64 {
        self.omega[1]
    }

    /// `Σ_k ω_k |1⟩⟨1|_k`.
    pub fn h0(&self) -> CMat {
        let l = SubsystemLayout::qubits(3);
        let mut h = CMat::zeros(8, 8);
        for k in 0..3 {
            h += embed(&pauli::ketbra(1, 1), k, &l) * c(self.omega[k], 0.0);
        }
        h
    }

    /// `g(|101⟩⟨010| + |010⟩⟨101|)`.
    pub fn interaction(&self) -> CMat {
        let mut h = CMat::zeros(8, 8);
        h[(0b101, 0b010)] = c(self.g, 0.0);
        h[(0b010, 0b101)] = c(self.g, 0.0);
        h
    }

    pub fn hamiltonian(&self) -> Result<Operator> {
        Operator::hermitian(self.h0() + self.interaction(), SubsystemLayout::qubits(3))
    }

    pub fn local_thermal(&self, k: usize) -> [f64; 2] {
        thermal_populations(self.omega[k], self.temperature[k])
    }

    fn initial(&self) -> Result<InitialEnsemble> {
        let plus = ket2(FRAC_1_SQRT_2, FRAC_1_SQRT_2);
        Ok(InitialEnsemble::pure(ProductState::new(vec![plus.clone(), plus.clone(), plus])?))
    }
}

/// Jump operators `√(p λ_i) |i⟩⟨j|` on qubit `k` for the reset channel to the
/// local Gibbs state with populations `lambda`.
pub fn reset_jumps(k: usize, p: f64, lambda: [f64; 2], layout: &SubsystemLayout) -> Result<Vec<Operator>> {
    let mut out = Vec::with_capacity(4);
    for (i, li) in lambda.iter().enumerate() {
        for j in 0..2 {
            out.push(Operator::new(embed(&(pauli::ketbra(i, j) * c((p * li).sqrt(), 0.0)), k, layout), layout.clone())?);
        }
    }
    Ok(out)
}

/// Reset dissipator in channel form, `p(τ_k ⊗ Tr_k ρ − ρ)` with `τ_k` in place.
pub fn reset_channel(rho: &CMat, k: usize, p: f64, lambda: [f64; 2], layout: &SubsystemLayout) -> CMat {
    let d = layout.total_dim();
    let mut out = CMat::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let (ia, ib) = (layout.digit(a, k), layout.digit(b, k));
            if ia != ib {
                continue;
            }
            let mut traced = ZERO;
            for s in 0..2 {
                let flip = |x: usize| x - layout.digit(x, k) * (1 << (layout.parties() - 1 - k)) + s * (1 << (layout.parties() - 1 - k));
                traced += rho[(flip(a), flip(b))];
            }
            out[(a, b)] = traced * c(lambda[ia], 0.0);
        }
    }
    (out - rho) * c(p, 0.0)
}

fn build_refrigerator_localized(spec: &ScenarioSpec) -> Result<Scenario> {
    let fp = FridgeParams::from_spec(spec)?;
    let rates = [spec.get("p_w"), spec.get("p_h"), spec.get("p_c")];
    require(rates.iter().all(|&p| p >= 0.0), "reset rates must be ≥ 0")?;
    let l = SubsystemLayout::qubits(3);
    let mut jumps = Vec::new();
    for k in 0..3 {
        jumps.extend(reset_jumps(k, rates[k], fp.local_thermal(k), &l)?);
    }
    Ok(Scenario {
        spec: spec.clone(),
        model: LindbladModel::new(fp.hamiltonian()?, jumps)?,
        energy: fp.h0() + fp.interaction(),
        initial: fp.initial()?,
        parties: vec!["w", "h", "c"],
        beta: None,
    })
}

/// `Γ(ω) = γω³e^{βω/2}sinh(βω/2)`, valid for either sign of `ω`.
pub fn delocalized_rate(gamma: f64, beta: f64, omega: f64) -> f64 {
    gamma * omega.powi(3) * (0.5 * beta * omega).exp() * (0.5 * beta * omega).sinh()
}

/// Joint basis `|1⟩ … |8⟩` of the delocalized model, as vectors over `|w h c⟩`.
pub fn delocalized_basis() -> [CVec; 8] {
    let s = FRAC_1_SQRT_2;
    let e = |i: usize| basis_ket(8, i);
    [
        e(0b000),
        e(0b100),
        e(0b111),
        e(0b001),
        e(0b110),
        e(0b011),
        (e(0b101) - e(0b010)) * c(s, 0.0),
        (e(0b101) + e(0b010)) * c(s, 0.0),
    ]
}

/// The nine `A_{k,ω}` with their bath index and Bohr frequency, for
/// `ω ∈ {ω_k, ω_k + g, ω_k − g}`.
pub fn delocalized_operators(fp: &FridgeParams) -> Vec<(usize, f64, CMat)> {
    let b = delocalized_basis();
    let kb = |i: usize, j: usize| &b[i - 1] * b[j - 1].adjoint();
    let s = c(FRAC_1_SQRT_2, 0.0);
    let [ow, oh, oc] = fp.omega;
    let g = fp.g;
    vec![
        (0, ow, kb(1, 2) + kb(6, 3)),
        (0, ow + g, (kb(4, 8) - kb(7, 5)) * s),
        (0, ow - g, (kb(4, 7) + kb(8, 5)) * s),
        (1, oh, kb(2, 5) + kb(4, 6)),
        (1, oh + g, (kb(7, 3) + kb(1, 8)) * s),
        (1, oh - g, (kb(8, 3) - kb(1, 7)) * s),
        (2, oc, kb(1, 4) + kb(5, 3)),
        (2, oc + g, (kb(2, 8) - kb(7, 6)) * s),
        (2, oc - g, (kb(2, 7) + kb(8, 6)) * s),
    ]
}

fn build_refrigerator_delocalized(spec: &ScenarioSpec) -> Result<Scenario> {
    let fp = FridgeParams::from_spec(spec)?;
    let gamma = spec.get("gamma");
    require(gamma >= 0.0, "γ must be ≥ 0")?;
    let l = SubsystemLayout::qubits(3);
    let mut jumps = Vec::with_capacity(18);
    for (k, w, a) in delocalized_operators(&fp) {
        let beta = 1.0 / fp.temperature[k];
        let down = delocalized_rate(gamma, beta, w);
        let up = delocalized_rate(gamma, beta, -w);
        require(down >= 0.0 && up >= 0.0, format!("negative rate at ω = {w}; need g < ω_k"))?;
        jumps.push(Operator::new(&a * c(down.sqrt(), 0.0), l.clone())?);
        jumps.push(Operator::new(a.adjoint() * c(up.sqrt(), 0.0), l.clone())?);
    }
    Ok(Scenario {
        spec: spec.clone(),
        model: LindbladModel::new(fp.hamiltonian()?, jumps)?,
        energy: fp.h0() + fp.interaction(),
        initial: fp.initial()?,
        parties: vec!["w", "h", "c"],
        beta: None,
    })
}

fn build_dephasing(spec: &ScenarioSpec) -> Result<Scenario> {
    let (omega, gamma, lam) = (spec.get("omega"), spec.get("gamma"), spec.get("lambda_init"));
    require(gamma >= 0.0, "γ must be ≥ 0")?;
    let l = SubsystemLayout::qubits(2);
    let h = kron(&pauli::z(), &pauli::z()) * c(omega, 0.0);
    let jump = (embed(&pauli::z(), 0, &l) + embed(&pauli::z(), 1, &l)) * c(gamma.sqrt(), 0.0);
    if max_abs(&commutator(&h, &jump)) > 1e-12 {
        return Err(Error::InvalidParameter("dephasing jump must commute with H".into()));
    }
    let local = ket2(1.0, lam);
    let local = &local / c(local.norm(), 0.0);
    Ok(Scenario {
        spec: spec.clone(),
        model: LindbladModel::new(Operator::hermitian(h.clone(), l.clone())?, vec![Operator::new(jump, l)?])?,
        energy: h,
        initial: InitialEnsemble::pure(ProductState::new(vec![local.clone(), local])?),
        parties: vec!["a", "b"],
        beta: None,
    })
}

/// Swap-exchange parameters with the closed-form heats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapParams {
    pub omega_a: f64,
    pub omega_b: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub kappa: f64,
}

impl SwapParams {
    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        Self {
            omega_a: spec.get("omega_a"),
            omega_b: spec.get("omega_b"),
            beta_a: 1.0 / spec.get("t_a"),
            beta_b: 1.0 / spec.get("t_b"),
            kappa: spec.get("kappa"),
        }
    }

    fn za(&self) -> f64 {
        1.0 + (-self.beta_a * self.omega_a).exp()
    }

    fn zb(&self) -> f64 {
        1.0 + (-self.beta_b * self.omega_b).exp()
    }

    /// `(q₀, q₁) = (1, e^{-β_Aω_A/2}) / √Z_A`.
    pub fn overlaps(&self) -> (f64, f64) {
        let n = self.za().sqrt();
        (1.0 / n, (-0.5 * self.beta_a * self.omega_a).exp() / n)
    }

    pub fn psi_a(&self) -> CVec {
        let (q0, q1) = self.overlaps();
        ket2(q0, q1)
    }

    /// `ω_A sin²(κt) (e^{-β_Bω_B}/Z_B − e^{-β_Aω_A}/Z_A)`.
    pub fn heat_free(&self, t: f64) -> f64 {
        let xb = (-self.beta_b * self.omega_b).exp();
        let xa = (-self.beta_a * self.omega_a).exp();
        self.omega_a * (self.kappa * t).sin().powi(2) * (xb / self.zb() - xa / self.za())
    }

    /// Weighted constrained branches `ψ_B ∈ {|0⟩, |1⟩}` in closed form.
    pub fn heat_constrained(&self, t: f64) -> f64 {
        let xb = (-self.beta_b * self.omega_b).exp();
        let xa = (-self.beta_a * self.omega_a).exp();
        let (q0, q1) = self.overlaps();
        let (c0, c1) = ((q0 * self.kappa * t).cos(), (q1 * self.kappa * t).cos());
        let s1 = (q1 * self.kappa * t).sin();
        self.omega_a * xa * (c0 * c0 + c1 * c1 * xb) / (self.za() * self.zb()) + self.omega_a * xb / self.zb() * s1 * s1
            - self.omega_a * xa / self.za()
    }
}

fn build_swap_exchange(spec: &ScenarioSpec) -> Result<Scenario> {
    let p = SwapParams::from_spec(spec);
    require(p.beta_a > 0.0 && p.beta_b > 0.0, "temperatures must be positive")?;
    let l = SubsystemLayout::qubits(2);
    let ha = pauli::ketbra(1, 1) * c(p.omega_a, 0.0);
    let hb = pauli::ketbra(1, 1) * c(p.omega_b, 0.0);
    let h = embed(&ha, 0, &l) + embed(&hb, 1, &l) + swap_operator(2) * c(p.kappa, 0.0);
    let xb = (-p.beta_b * p.omega_b).exp();
    let psi_a = p.psi_a();
    let initial = InitialEnsemble::mixture(vec![
        (1.0 / p.zb(), ProductState::new(vec![psi_a.clone(), basis_ket(2, 0)])?),
        (xb / p.zb(), ProductState::new(vec![psi_a, basis_ket(2, 1)])?),
    ])?;
    Ok(Scenario {
        spec: spec.clone(),
        model: LindbladModel::closed(Operator::hermitian(h, l.clone())?)?,
        energy: embed(&ha, 0, &l),
        initial,
        parties: vec!["a", "b"],
        beta: None,
    })
}

/// `|Ψ⁺⟩ = (|01⟩ + |10⟩)/√2`.
pub fn bell_plus() -> CVec {
    (basis_ket(4, 0b01) + basis_ket(4, 0b10)) * c(FRAC_1_SQRT_2, 0.0)
}

pub fn bell_projector() -> CMat {
    let b = bell_plus();
    &b * b.adjoint()
}

fn build_correlated_decay(spec: &ScenarioSpec) -> Result<Scenario> {
    let gamma = spec.get("gamma");
    require(gamma >= 0.0, "γ must be ≥ 0")?;
    let l = SubsystemLayout::qubits(2);
    let jump = (embed(&pauli::lowering(), 0, &l) + embed(&pauli::lowering(), 1, &l)) * c(gamma.sqrt(), 0.0);
    let e = basis_ket(2, 1);
    Ok(Scenario {
        spec: spec.clone(),
        model: LindbladModel::new(Operator::zeros(l.clone()), vec![Operator::new(jump, l)?])?,
        energy: CMat::zeros(4, 4),
        initial: InitialEnsemble::pure(ProductState::new(vec![e.clone(), e])?),
        parties: vec!["a", "b"],
        beta: None,
    })
}

/// Largest `|⟨Ψ⁺|ψ_A ψ_B⟩|²` over a grid of real-amplitude product states
/// with relative phases.
pub fn max_product_bell_overlap(grid: usize) -> f64 {
    let bell = bell_plus();
    let mut best = 0.0f64;
    let local = |th: f64, ph: f64| CVec::from_vec(vec![c(th.cos(), 0.0), c(ph.cos() * th.sin(), ph.sin() * th.sin())]);
    for i in 0..=grid {
        for j in 0..=grid {
            for k in 0..grid {
                let ta = PI * i as f64 / grid as f64;
                let tb = PI * j as f64 / grid as f64;
                let ph = 2.0 * PI * k as f64 / grid as f64;
                let v = linalg::kron_vec(&local(ta / 2.0, 0.0), &local(tb / 2.0, ph));
                best = best.max(bell.dotc(&v).norm_sqr());
            }
        }
    }
    best
}
