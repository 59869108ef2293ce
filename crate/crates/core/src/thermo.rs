//! Energy, heat, work and entropy bookkeeping for free and constrained runs.

use crate::error::{Error, Result};
use crate::linalg::{self, c, hermitian_eigen, pauli, CMat, CVec};
use crate::open::{apply_constrained_jump, expect_real, lindblad_rhs_matrix, LindbladModel};
use crate::tensor::{embed, factor_product, reduced_operators, DensityMatrix, Operator, ProductState};
use crate::Mode;

/// Eigenvalues below this are treated as zero in entropies.
pub const EIGEN_FLOOR: f64 = 1e-14;
/// Weight outside the reference support above which the relative entropy diverges.
pub const SUPPORT_TOL: f64 = 1e-10;

/// Bloch vector `(⟨σˣ⟩, ⟨σʸ⟩, ⟨σᶻ⟩)` of a (possibly unnormalized) qubit state.
pub fn bloch_vector(v: &CVec) -> [f64; 3] {
    let n = v.norm_squared();
    [pauli::x(), pauli::y(), pauli::z()].map(|p| v.dotc(&(p * v)).re / n)
}

/// `Tr(ρH)`.
pub fn internal_energy(rho: &CMat, h: &CMat) -> Result<f64> {
    if rho.shape() != h.shape() {
        return Err(Error::DimensionMismatch(format!("state {:?} vs operator {:?}", rho.shape(), h.shape())));
    }
    Ok(expect_real(rho, h))
}

/// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩`.
pub fn internal_energy_pure(psi: &CVec, h: &CMat) -> Result<f64> {
    if psi.len() != h.nrows() {
        return Err(Error::DimensionMismatch(format!("state {} vs operator {:?}", psi.len(), h.shape())));
    }
    let n = psi.norm_squared();
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(psi.dotc(&(h * psi)).re / n)
}

/// `e^{-βH} / Z`.
pub fn gibbs_state(h: &CMat, beta: f64) -> CMat {
    let (vals, _) = hermitian_eigen(h);
    let e0 = vals.first().copied().unwrap_or(0.0);
    let rho = linalg::hermitian_map(h, |x| c((-beta * (x - e0)).exp(), 0.0));
    let z = linalg::trace(&rho).re;
    rho / c(z, 0.0)
}

/// Which constrained heat-flow expression [`heat_flow_with`] evaluates.
pub use crate::open::HeatFlowForm;

/// Heat flow of the model Hamiltonian into the system.
///
/// Free mode: `Σ_k Tr(D_k(ρ) H)`. Constrained mode: `ρ` must be a pure
/// product state and the trace-corrected constrained generator is used.
pub fn heat_flow(model: &LindbladModel, rho: &DensityMatrix, mode: Mode) -> Result<f64> {
    let energy = model.original().h().matrix().clone();
    heat_flow_with(model, rho, mode, &energy, HeatFlowForm::Dissipator)
}

/// [`heat_flow`] for an arbitrary energy observable.
///
/// In free mode only the dissipators contribute. In constrained mode the full
/// rate of change of `⟨E⟩` is returned in the requested form; for `E = H` the
/// constrained commutator term vanishes and only jump terms remain.
pub fn heat_flow_with(
    model: &LindbladModel,
    rho: &DensityMatrix,
    mode: Mode,
    energy: &CMat,
    form: HeatFlowForm,
) -> Result<f64> {
    if energy.nrows() != model.dim() || rho.matrix().nrows() != model.dim() {
        return Err(Error::DimensionMismatch("heat flow operands".into()));
    }
    match mode {
        Mode::Free => {
            let original = model.original();
            let dissipative = LindbladModel::new(
                Operator::zeros(model.layout().clone()),
                original.jumps().to_vec(),
            )?;
            Ok(expect_real(&lindblad_rhs_matrix(&dissipative, rho.matrix()), energy))
        }
        Mode::Constrained => {
            let state = factor_product(rho, 1e-9)?;
            constrained_heat_flow(model, &state, energy, form)
        }
    }
}

/// Constrained heat flow evaluated densely on a product state.
pub fn constrained_heat_flow(
    model: &LindbladModel,
    state: &ProductState,
    energy: &CMat,
    form: HeatFlowForm,
) -> Result<f64> {
    let state = state.normalized()?;
    let layout = model.layout();
    let n = layout.parties() as f64;
    let psi = state.to_vector();
    let g = Operator::new(model.effective_generator(), layout.clone())?;
    let mut k = CMat::zeros(psi.len(), psi.len());
    for (d, red) in reduced_operators(&g, &state)?.iter().enumerate() {
        k += embed(red.matrix(), d, layout);
    }
    let k_psi = &k * &psi;
    let e_psi = energy * &psi;
    let mean_e = psi.dotc(&e_psi).re;
    let drift = -2.0 * k_psi.dotc(&e_psi).im - 2.0 * mean_e * psi.dotc(&k_psi).im;
    if model.jumps().is_empty() {
        return Ok(drift);
    }
    let mut total = 0.0;
    let mut sandwiches = 0.0;
    for j in 0..model.jumps().len() {
        let jv = apply_constrained_jump(model, &state, j)?.to_vector();
        total += jv.norm_squared();
        sandwiches += jv.dotc(&(energy * &jv)).re;
    }
    let mean_m = -2.0 * psi.dotc(&k_psi).im / n;
    Ok(match form {
        HeatFlowForm::Dissipator => drift + sandwiches - total * mean_e,
        HeatFlowForm::Unraveling if total > 0.0 => drift + mean_m / total * sandwiches - mean_m * mean_e,
        HeatFlowForm::Unraveling => drift - mean_m * mean_e,
    })
}

/// `Q(t) = Tr((ρ(t) − ρ₀)H)`.
pub fn accumulated_heat(rho_t: &CMat, rho_0: &CMat, h: &CMat) -> Result<f64> {
    Ok(internal_energy(rho_t, h)? - internal_energy(rho_0, h)?)
}

/// `Tr(ρ dH/dt)`.
pub fn work_rate(rho: &CMat, dh_dt: &CMat) -> Result<f64> {
    internal_energy(rho, dh_dt)
}

fn eigenvalues(rho: &CMat) -> Vec<f64> {
    let sym = (rho + rho.adjoint()) * c(0.5, 0.0);
    hermitian_eigen(&sym).0
}

/// `−Tr(ρ ln ρ)` with eigenvalues below [`EIGEN_FLOOR`] dropped.
pub fn von_neumann_entropy(rho: &CMat) -> f64 {
    eigenvalues(rho)
        .into_iter()
        .filter(|&p| p > EIGEN_FLOOR)
        .map(|p| -p * p.ln())
        .sum()
}

/// `Tr(ρ ln ρ) − Tr(ρ ln σ)`; `+∞` when `ρ` leaves the support of `σ`.
pub fn relative_entropy(rho: &CMat, sigma: &CMat) -> Result<f64> {
    if rho.shape() != sigma.shape() {
        return Err(Error::DimensionMismatch("relative entropy operands".into()));
    }
    let sym = (sigma + sigma.adjoint()) * c(0.5, 0.0);
    let (mu, vecs) = hermitian_eigen(&sym);
    let mut cross = 0.0;
    let mut outside = 0.0;
    for (j, &m) in mu.iter().enumerate() {
        let v = vecs.column(j);
        let w = v.dotc(&(rho * v)).re;
        if m > EIGEN_FLOOR {
            cross += w * m.ln();
        } else {
            outside += w;
        }
    }
    if outside > SUPPORT_TOL {
        return Ok(f64::INFINITY);
    }
    Ok((-von_neumann_entropy(rho) - cross).max(0.0))
}

/// Derivative on a (possibly non-uniform) grid: centered inside, one-sided at
/// the ends.
pub fn finite_difference(times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::GridMismatch);
    }
    let n = times.len();
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    Ok((0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect())
}

/// `σ(t) = −d/dt S(ρ(t)‖γ)`.
pub fn entropy_production_rate(times: &[f64], states: &[CMat], reference: &CMat) -> Result<Vec<f64>> {
    let s: Vec<f64> = states.iter().map(|r| relative_entropy(r, reference)).collect::<Result<_>>()?;
    Ok(finite_difference(times, &s)?.into_iter().map(|x| -x).collect())
}

/// `Ṡ − βQ̇` for a single-bath free run.
pub fn second_law_residual(
    times: &[f64],
    states: &[CMat],
    model: &LindbladModel,
    beta: f64,
) -> Result<Vec<f64>> {
    if times.len() != states.len() {
        return Err(Error::GridMismatch);
    }
    let energy = model.original().h().matrix().clone();
    let s: Vec<f64> = states.iter().map(von_neumann_entropy).collect();
    let s_dot = finite_difference(times, &s)?;
    states
        .iter()
        .zip(s_dot)
        .map(|(r, sd)| {
            let rho = DensityMatrix::from_matrix_unchecked(r.clone(), model.layout().clone());
            Ok(sd - beta * heat_flow_with(model, &rho, Mode::Free, &energy, HeatFlowForm::Dissipator)?)
        })
        .collect()
}

/// Trapezoidal running mean `(1/t)∫₀ᵗ x`, equal to `x(t₀)` at the first point.
pub fn time_average(times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::GridMismatch);
    }
    let mut out = Vec::with_capacity(values.len());
    let mut integral = 0.0;
    for i in 0..values.len() {
        if i == 0 {
            out.push(values[0]);
            continue;
        }
        integral += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
        let span = times[i] - times[0];
        out.push(if span > 0.0 { integral / span } else { values[i] });
    }
    Ok(out)
}

/// Long-time constrained reference state: the mean density matrix over the
/// final fifth of the horizon, provided every population's least-squares
/// slope there is below `1e-3` per unit time. `None` when no plateau is seen.
pub fn estimate_steady_state(times: &[f64], states: &[CMat]) -> Result<Option<CMat>> {
    if times.len() != states.len() || states.is_empty() {
        return Err(Error::GridMismatch);
    }
    let t0 = times[0] + 0.8 * (times[times.len() - 1] - times[0]);
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t0).collect();
    if idx.len() < 3 {
        return Ok(None);
    }
    let tm = idx.iter().map(|&i| times[i]).sum::<f64>() / idx.len() as f64;
    let stt: f64 = idx.iter().map(|&i| (times[i] - tm).powi(2)).sum();
    let d = states[0].nrows();
    for a in 0..d {
        let pm = idx.iter().map(|&i| states[i][(a, a)].re).sum::<f64>() / idx.len() as f64;
        let slope = idx.iter().map(|&i| (times[i] - tm) * (states[i][(a, a)].re - pm)).sum::<f64>() / stt;
        if slope.abs() >= 1e-3 {
            return Ok(None);
        }
    }
    let mut mean = CMat::zeros(d, d);
    for &i in &idx {
        mean += &states[i];
    }
    Ok(Some(mean / c(idx.len() as f64, 0.0)))
}

/// Thermodynamic channels along a density-matrix series.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermoRecord {
    pub mode: Mode,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub heat: Vec<f64>,
    pub heat_rate: Vec<f64>,
    pub work_rate: Vec<f64>,
    pub entropy: Vec<f64>,
    pub relative_entropy: Option<Vec<f64>>,
    pub entropy_production: Option<Vec<f64>>,
    pub time_averaged_heat: Vec<f64>,
    /// Standard error of `heat` for stochastic records.
    pub heat_stderr: Option<Vec<f64>>,
}

impl ThermoRecord {
    /// Builds every channel from `states` with energy observable `h`.
    ///
    /// Free records take `Q̇` from the dissipators of `model`; constrained
    /// records (ensemble-averaged states) differentiate `Q` numerically.
    pub fn from_states(
        mode: Mode,
        times: &[f64],
        states: &[CMat],
        model: &LindbladModel,
        h: &CMat,
        reference: Option<&CMat>,
    ) -> Result<Self> {
        if times.len() != states.len() || states.is_empty() {
            return Err(Error::GridMismatch);
        }
        let energy: Vec<f64> = states.iter().map(|r| internal_energy(r, h)).collect::<Result<_>>()?;
        let heat: Vec<f64> = energy.iter().map(|e| e - energy[0]).collect();
        let heat_rate = match mode {
            Mode::Free => states
                .iter()
                .map(|r| {
                    let rho = DensityMatrix::from_matrix_unchecked(r.clone(), model.layout().clone());
                    heat_flow_with(model, &rho, Mode::Free, h, HeatFlowForm::Dissipator)
                })
                .collect::<Result<_>>()?,
            Mode::Constrained => finite_difference(times, &heat)?,
        };
        let (relative_entropy, entropy_production) = match reference {
            Some(gamma) => {
                let s: Vec<f64> = states.iter().map(|r| relative_entropy(r, gamma)).collect::<Result<_>>()?;
                let sigma = entropy_production_rate(times, states, gamma)?;
                (Some(s), Some(sigma))
            }
            None => (None, None),
        };
        Ok(Self {
            mode,
            times: times.to_vec(),
            time_averaged_heat: time_average(times, &heat)?,
            energy,
            heat,
            heat_rate,
            work_rate: vec![0.0; times.len()],
            entropy: states.iter().map(von_neumann_entropy).collect(),
            relative_entropy,
            entropy_production,
            heat_stderr: None,
        })
    }
}
