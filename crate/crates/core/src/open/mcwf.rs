//! Monte Carlo wavefunction unraveling, constrained to product states or free
//! on the joint space.
//!
//! The free (unconstrained) mode is the same engine run on the joint space
//! viewed as a single subsystem, where every reduced operator is the full
//! operator and the constrained formulas collapse to the standard ones.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closed::{at_time, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{self, c, norm_sqr, sandwich, to_row_major, CMat, CVec, C64, ONE};
use crate::open::LindbladModel;
use crate::stepper::{normalize, MidpointStepper};
use crate::tensor::{embed, reduced_operators, tensor_vectors, Operator, ProductState, SparseOperator, SubsystemLayout};
use crate::Mode;

/// Squared jump means below this are treated as vanishing.
const VANISHING_MEAN: f64 = 1e-280;
const NORM_COLLAPSE_LN: f64 = -69.07755278982137; // ln 1e-30
/// Accuracy of `ln N` at a located jump time.
const CROSSING_TOL: f64 = 1e-7;
const CROSSING_MAX_ITER: usize = 100;
/// Largest `‖Σ L†L‖ dt` accepted by [`JumpRule::PerStep`].
pub const PER_STEP_MAX_RATE_DT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpRule {
    /// Draw `r` after each jump; evolve without renormalizing until the norm
    /// falls to `r`, locating the crossing within the step.
    Segment,
    /// Renormalize every step and compare the one-step survival norm with a
    /// fresh `r`.
    PerStep,
}

impl JumpRule {
    pub fn as_str(self) -> &'static str {
        match self {
            JumpRule::Segment => "segment",
            JumpRule::PerStep => "per_step",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McwfConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// `λ_k = lambda_factor · ‖L_k‖`.
    pub lambda_factor: f64,
    pub jump_rule: JumpRule,
    pub output_stride: usize,
    /// `Constrained` keeps product states, `Free` runs on the joint space.
    pub mode: Mode,
}

impl Default for McwfConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            t_end: 1.0,
            n_traj: 1000,
            seed: 0,
            lambda_factor: 10.0,
            jump_rule: JumpRule::Segment,
            output_stride: 1,
            mode: Mode::Constrained,
        }
    }
}

impl McwfConfig {
    pub fn validate(&self) -> Result<()> {
        TimeGrid::new(self.dt, self.t_end, self.output_stride)?;
        if self.n_traj == 0 {
            return Err(Error::InvalidParameter("n_traj must be ≥ 1".into()));
        }
        if !(self.lambda_factor >= 0.0) || !self.lambda_factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda_factor must be ≥ 0, got {}",
                self.lambda_factor
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.dt, self.t_end, self.output_stride)
    }
}

/// Which heat-flow expression to evaluate on a trajectory state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeatFlowForm {
    /// Expected `d⟨E⟩/dt` of the unraveling itself: the deterministic drift
    /// plus the jump rate times the mean energy change per jump.
    Unraveling,
    /// `Tr(L̂_ms(ρ) E)` with the trace-corrected constrained generator.
    Dissipator,
}

/// A quantity recorded along every trajectory at the output times.
#[derive(Clone, Debug)]
pub enum Observable {
    /// `Re ⟨O⟩` on the normalized state.
    Expectation(CMat),
    /// All `D²` real degrees of freedom of `|ψ⟩⟨ψ|`: diagonal first, then
    /// `Re ρ_ij, Im ρ_ij` for `i < j` in row order.
    Density,
    HeatFlow { energy: CMat, form: HeatFlowForm },
    /// Running trapezoidal integral of the heat flow over the output grid.
    IntegratedHeatFlow { energy: CMat, form: HeatFlowForm },
    /// Running trapezoidal mean `(1/t)∫₀ᵗ Re⟨O⟩` over the output grid.
    TimeAverage(CMat),
}

impl Observable {
    pub fn channels(&self, dim: usize) -> usize {
        match self {
            Observable::Density => dim * dim,
            _ => 1,
        }
    }
}

/// Rebuilds a density matrix from the channels written by [`Observable::Density`].
pub fn density_from_channels(values: &[f64], dim: usize) -> CMat {
    let mut rho = CMat::zeros(dim, dim);
    for i in 0..dim {
        rho[(i, i)] = c(values[i], 0.0);
    }
    let mut idx = dim;
    for i in 0..dim {
        for j in i + 1..dim {
            let z = c(values[idx], values[idx + 1]);
            rho[(i, j)] = z;
            rho[(j, i)] = z.conj();
            idx += 2;
        }
    }
    rho
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JumpStats {
    pub per_channel: Vec<u64>,
}

impl JumpStats {
    pub fn total(&self) -> u64 {
        self.per_channel.iter().sum()
    }

    pub fn merge(&mut self, other: &JumpStats) {
        if self.per_channel.len() < other.per_channel.len() {
            self.per_channel.resize(other.per_channel.len(), 0);
        }
        for (a, b) in self.per_channel.iter_mut().zip(&other.per_channel) {
            *a += b;
        }
    }
}

/// One trajectory's observable values, row-major in (output time, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySeries {
    pub times: Vec<f64>,
    pub channels: usize,
    pub values: Vec<f64>,
    pub jumps: JumpStats,
}

impl TrajectorySeries {
    pub fn at(&self, time_index: usize, channel: usize) -> f64 {
        self.values[time_index * self.channels + channel]
    }
}

#[derive(Clone, Debug)]
enum JumpKind {
    /// `L = 1 ⊗ … ⊗ l ⊗ … ⊗ 1` acting on one subsystem (row-major `l`).
    Local { site: usize, op: Vec<C64> },
    General(SparseOperator),
}

#[derive(Clone, Debug)]
struct Jump {
    kind: JumpKind,
}

/// Returns `Some((k, l))` when `m = embed(l, k)` exactly.
fn as_local(m: &CMat, layout: &SubsystemLayout) -> Option<(usize, CMat)> {
    for k in 0..layout.parties() {
        let dk = layout.dims()[k];
        let stride: usize = layout.dims()[k + 1..].iter().product();
        let l = CMat::from_fn(dk, dk, |a, b| m[(a * stride, b * stride)]);
        if embed(&l, k, layout) == *m {
            return Some((k, l));
        }
    }
    None
}

/// The propagation engine for one (shifted) model.
#[derive(Clone, Debug)]
pub struct McwfEngine {
    model: LindbladModel,
    layout: SubsystemLayout,
    generator: CMat,
    jumps: Vec<Jump>,
    rule: JumpRule,
    grid: TimeGrid,
    mode: Mode,
}

impl McwfEngine {
    /// Shifts `model` by `cfg.lambda_factor` (unless it is zero) and prepares
    /// the engine. In free mode the joint space is treated as one subsystem.
    pub fn new(model: &LindbladModel, cfg: &McwfConfig) -> Result<Self> {
        cfg.validate()?;
        let shifted = if cfg.lambda_factor > 0.0 && !model.jumps().is_empty() {
            crate::open::shift_operators(model, &model.lambda_for_factor(cfg.lambda_factor))?
        } else {
            model.clone()
        };
        Self::from_shifted(shifted, cfg)
    }

    /// Uses `model` as given, without applying any further shift.
    pub fn from_shifted(model: LindbladModel, cfg: &McwfConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.jump_rule == JumpRule::PerStep && !model.jumps().is_empty() {
            let rate_dt = linalg::spectral_norm(&model.jump_sum()) * cfg.dt;
            if rate_dt > PER_STEP_MAX_RATE_DT {
                return Err(Error::InvalidParameter(format!(
                    "per_step jumps need ‖Σ L†L‖·dt ≤ {PER_STEP_MAX_RATE_DT}, got {rate_dt:.3}; reduce dt or lambda_factor, or use segment"
                )));
            }
        }
        let layout = match cfg.mode {
            Mode::Constrained => model.layout().clone(),
            Mode::Free => model.layout().merged(),
        };
        let jumps = model
            .jumps()
            .iter()
            .map(|l| {
                let kind = match as_local(l.matrix(), &layout) {
                    Some((site, op)) => JumpKind::Local { site, op: to_row_major(&op) },
                    None => JumpKind::General(SparseOperator::new(l.matrix(), &layout)),
                };
                Jump { kind }
            })
            .collect();
        Ok(Self {
            generator: model.effective_generator(),
            model,
            layout,
            jumps,
            rule: cfg.jump_rule,
            grid: cfg.grid()?,
            mode: cfg.mode,
        })
    }

    pub fn model(&self) -> &LindbladModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn channels(&self, observables: &[Observable]) -> usize {
        observables.iter().map(|o| o.channels(self.dim())).sum()
    }

    /// Stream `stream` of the ChaCha generator seeded by `seed`.
    pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    fn initial_locals(&self, state: &ProductState) -> Result<Vec<Vec<C64>>> {
        if state.layout() != self.model.layout() {
            return Err(Error::DimensionMismatch("initial state layout differs from the model".into()));
        }
        let mut locals: Vec<Vec<C64>> = match self.mode {
            Mode::Constrained => state.locals().iter().map(|v| v.iter().copied().collect()).collect(),
            Mode::Free => vec![state.to_vector().iter().copied().collect()],
        };
        for v in locals.iter_mut() {
            normalize(v)?;
        }
        Ok(locals)
    }

    /// Runs one trajectory with the given random stream and records the
    /// observables on the output grid.
    pub fn run_trajectory(
        &self,
        state0: &ProductState,
        rng: &mut ChaCha8Rng,
        observables: &[Observable],
    ) -> Result<TrajectorySeries> {
        let mut walker = Walker::new(self, self.initial_locals(state0)?);
        let channels = self.channels(observables);
        let outputs = self.grid.output_steps();
        let mut values = Vec::with_capacity(outputs.len() * channels);
        let mut times = Vec::with_capacity(outputs.len());
        let mut integrals = vec![Running::default(); observables.len()];
        let mut next = 0;
        if self.rule == JumpRule::Segment {
            walker.ln_r = rng.sample::<f64, _>(Open01).ln();
        }
        for m in 0..=self.grid.steps {
            let t = m as f64 * self.grid.dt;
            if outputs[next] == m {
                times.push(t);
                walker.record(t, next == 0, observables, &mut integrals, &mut values)?;
                next += 1;
                if next == outputs.len() {
                    break;
                }
            }
            walker.advance(self.grid.dt, rng).map_err(|e| at_time(e, t))?;
        }
        Ok(TrajectorySeries { times, channels, values, jumps: JumpStats { per_channel: walker.jump_counts } })
    }
}

/// Running trapezoidal integral over the output grid.
#[derive(Clone, Copy, Debug, Default)]
struct Running {
    t0: f64,
    t: f64,
    flow: f64,
    total: f64,
}

impl Running {
    fn add(&mut self, t: f64, flow: f64, first: bool) -> Running {
        if first {
            *self = Running { t0: t, t, flow, total: 0.0 };
        } else {
            self.total += 0.5 * (t - self.t) * (flow + self.flow);
            self.t = t;
            self.flow = flow;
        }
        *self
    }
}

/// Mutable per-trajectory state with preallocated buffers.
struct Walker<'a> {
    engine: &'a McwfEngine,
    stepper: MidpointStepper,
    locals: Vec<Vec<C64>>,
    saved: Vec<Vec<C64>>,
    /// `ln ⟨ψ|ψ⟩` since the last renormalization; the locals themselves are unit vectors.
    log_n: f64,
    ln_r: f64,
    weights: Vec<C64>,
    red: Vec<Vec<C64>>,
    jump_vecs: Vec<Vec<Vec<C64>>>,
    p_tilde: Vec<f64>,
    jump_counts: Vec<u64>,
}

impl<'a> Walker<'a> {
    fn new(engine: &'a McwfEngine, locals: Vec<Vec<C64>>) -> Self {
        let nj = engine.jumps.len();
        Self {
            stepper: MidpointStepper::new(&engine.generator, &engine.layout),
            saved: locals.clone(),
            jump_vecs: vec![locals.clone(); nj],
            locals,
            engine,
            log_n: 0.0,
            ln_r: f64::NEG_INFINITY,
            weights: Vec::new(),
            red: vec![Vec::new(); engine.layout.parties()],
            p_tilde: vec![0.0; nj],
            jump_counts: vec![0; nj],
        }
    }

    fn parties(&self) -> usize {
        self.locals.len()
    }

    /// One deterministic midpoint step of the effective Hamiltonian; returns
    /// the change of `ln ⟨ψ|ψ⟩`.
    fn deterministic(&mut self, tau: f64) -> Result<f64> {
        let info = self.stepper.step(&mut self.locals, tau)?;
        // ⟨M⟩ = -2 Im⟨G⟩; the scalar (n-1)⟨M⟩/2 term of the effective
        // Hamiltonian raises the norm by (n-1)⟨M⟩τ
        let mean_m = -2.0 * info.mean_generator_mid.im;
        Ok(info.log_norm_change + (self.parties() as f64 - 1.0) * mean_m * tau)
    }

    fn save(&mut self) {
        for (s, v) in self.saved.iter_mut().zip(&self.locals) {
            s.copy_from_slice(v);
        }
    }

    fn restore(&mut self) {
        for (s, v) in self.saved.iter().zip(self.locals.iter_mut()) {
            v.copy_from_slice(s);
        }
    }

    fn advance(&mut self, tau: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.engine.jumps.is_empty() {
            self.deterministic(tau)?;
            return Ok(());
        }
        match self.engine.rule {
            JumpRule::Segment => self.advance_segment(tau, rng),
            JumpRule::PerStep => self.advance_per_step(tau, rng),
        }
    }

    fn advance_segment(&mut self, tau: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut left = tau;
        // each pass either finishes the step or performs one jump
        for _ in 0..10_000 {
            self.save();
            let start = self.log_n;
            let end = start + self.deterministic(left)?;
            if end > self.ln_r {
                self.log_n = end;
                return Ok(());
            }
            let sub = self.locate_crossing(start, end, left)?;
            self.jump(rng)?;
            self.log_n = 0.0;
            self.ln_r = rng.sample::<f64, _>(Open01).ln();
            left -= sub;
            if left <= 0.0 {
                return Ok(());
            }
        }
        Err(Error::NormCollapse(f64::NAN))
    }

    /// Finds `s ∈ [0, span]` where `ln N` reaches `ln_r`, starting from the
    /// saved locals, and leaves the locals propagated to it. Illinois
    /// regula falsi on the bracket `[0, span]`.
    fn locate_crossing(&mut self, start: f64, end: f64, span: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0, span);
        let (mut g_lo, mut g_hi) = (start - self.ln_r, end - self.ln_r);
        let mut side = 0i8;
        let mut s = span;
        for _ in 0..CROSSING_MAX_ITER {
            if g_hi.abs() <= CROSSING_TOL {
                break;
            }
            if g_lo <= CROSSING_TOL {
                s = lo;
                break;
            }
            s = lo + g_lo / (g_lo - g_hi) * (hi - lo);
            self.restore();
            let g = if s > 0.0 { start + self.deterministic(s)? - self.ln_r } else { g_lo };
            if g.abs() <= CROSSING_TOL || hi - lo <= 1e-15 * span {
                return Ok(s);
            }
            if g > 0.0 {
                lo = s;
                g_lo = g;
                if side == 1 {
                    g_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = s;
                g_hi = g;
                if side == -1 {
                    g_lo *= 0.5;
                }
                side = -1;
            }
        }
        self.restore();
        if s > 0.0 {
            self.deterministic(s)?;
        }
        Ok(s)
    }

    fn advance_per_step(&mut self, tau: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let ln_r = rng.sample::<f64, _>(Open01).ln();
        self.save();
        let change = self.deterministic(tau)?;
        if change < NORM_COLLAPSE_LN {
            return Err(Error::NormCollapse(f64::NAN));
        }
        if change <= ln_r {
            self.restore();
            self.jump(rng)?;
        }
        self.log_n = 0.0;
        Ok(())
    }

    /// Fills `p_tilde` and `jump_vecs` for the current (normalized) locals.
    fn prepare_jumps(&mut self) -> Result<f64> {
        let n = self.parties();
        let mut total = 0.0;
        for (k, jump) in self.engine.jumps.iter().enumerate() {
            let vecs = &mut self.jump_vecs[k];
            match &jump.kind {
                JumpKind::Local { site, op } => {
                    for (d, (dst, src)) in vecs.iter_mut().zip(&self.locals).enumerate() {
                        if d == *site {
                            linalg::matvec(op, src.len(), src, dst);
                        } else {
                            dst.copy_from_slice(src);
                        }
                    }
                    self.p_tilde[k] = norm_sqr(&vecs[*site]);
                }
                JumpKind::General(sparse) => {
                    let views: Vec<&[C64]> = self.locals.iter().map(|v| v.as_slice()).collect();
                    sparse.reduce_into(&views, &mut self.weights, &mut self.red)?;
                    let mut p = 1.0;
                    for (d, dst) in vecs.iter_mut().enumerate() {
                        linalg::matvec(&self.red[d], dst.len(), &self.locals[d], dst);
                        p *= norm_sqr(dst);
                    }
                    if n > 1 {
                        let mean = sandwich(&self.red[0], self.locals[0].len(), &self.locals[0]);
                        let m2 = mean.norm_sqr();
                        if m2 < VANISHING_MEAN {
                            return Err(Error::VanishingJumpMean(k));
                        }
                        p /= m2.powi(n as i32 - 1);
                        // global amplitude ⟨L⟩^{-(n-1)} carried on the first factor
                        let scale = ONE / mean.powi(n as i32 - 1);
                        for z in vecs[0].iter_mut() {
                            *z *= scale;
                        }
                    }
                    self.p_tilde[k] = p;
                }
            }
            total += self.p_tilde[k];
        }
        Ok(total)
    }

    fn jump(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let total = self.prepare_jumps()?;
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NoJumpWeight);
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = self.p_tilde.len() - 1;
        for (k, &p) in self.p_tilde.iter().enumerate() {
            acc += p;
            if u < acc && p > 0.0 {
                chosen = k;
                break;
            }
        }
        while self.p_tilde[chosen] == 0.0 {
            chosen -= 1;
        }
        for (dst, src) in self.locals.iter_mut().zip(&self.jump_vecs[chosen]) {
            dst.copy_from_slice(src);
            normalize(dst)?;
        }
        self.jump_counts[chosen] += 1;
        Ok(())
    }

    fn joint(&self) -> CVec {
        tensor_vectors(&self.locals.iter().map(|v| CVec::from_column_slice(v)).collect::<Vec<_>>())
    }

    fn record(
        &mut self,
        t: f64,
        first: bool,
        observables: &[Observable],
        integrals: &mut [Running],
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let psi = self.joint();
        for (idx, obs) in observables.iter().enumerate() {
            match obs {
                Observable::Expectation(op) => out.push(psi.dotc(&(op * &psi)).re),
                Observable::Density => {
                    let d = psi.len();
                    for i in 0..d {
                        out.push(psi[i].norm_sqr());
                    }
                    for i in 0..d {
                        for j in i + 1..d {
                            let z = psi[i] * psi[j].conj();
                            out.push(z.re);
                            out.push(z.im);
                        }
                    }
                }
                Observable::HeatFlow { energy, form } => out.push(self.heat_flow(&psi, energy, *form)?),
                Observable::IntegratedHeatFlow { energy, form } => {
                    let flow = self.heat_flow(&psi, energy, *form)?;
                    out.push(integrals[idx].add(t, flow, first).total);
                }
                Observable::TimeAverage(op) => {
                    let x = psi.dotc(&(op * &psi)).re;
                    let slot = integrals[idx].add(t, x, first);
                    out.push(if first { x } else { slot.total / (t - slot.t0) });
                }
            }
        }
        Ok(())
    }

    /// Heat flow into the system on the current normalized state.
    fn heat_flow(&mut self, psi: &CVec, energy: &CMat, form: HeatFlowForm) -> Result<f64> {
        let layout = &self.engine.layout;
        let n = self.parties() as f64;
        let e_psi = energy * psi;
        let mean_e = psi.dotc(&e_psi).re;
        // K ψ with K = Σ_d embed((G)_d)
        let gens = self.stepper.reduced(&self.locals)?.to_vec();
        let mut k_psi = CVec::zeros(psi.len());
        for (d, g) in gens.iter().enumerate() {
            let dk = layout.dims()[d];
            k_psi += embed(&linalg::from_row_major(dk, g), d, layout) * psi;
        }
        let drift = -2.0 * k_psi.dotc(&e_psi).im - 2.0 * mean_e * psi.dotc(&k_psi).im;
        if self.engine.jumps.is_empty() {
            return Ok(drift);
        }
        let mean_m = -2.0 * psi.dotc(&k_psi).im / n;
        let total = self.prepare_jumps()?;
        let mut sandwiches = 0.0;
        for vecs in &self.jump_vecs {
            let j = tensor_vectors(&vecs.iter().map(|v| CVec::from_column_slice(v)).collect::<Vec<_>>());
            sandwiches += j.dotc(&(energy * &j)).re;
        }
        Ok(match form {
            HeatFlowForm::Unraveling => {
                if total > 0.0 {
                    drift + mean_m / total * sandwiches - mean_m * mean_e
                } else {
                    drift - mean_m * mean_e
                }
            }
            HeatFlowForm::Dissipator => drift + sandwiches - total * mean_e,
        })
    }
}

/// `Ĥ_ms = (i(n-1)/2) Σ_k ⟨L_k†L_k⟩ 1 + Σ_d embed((H)_d - (i/2) Σ_k (L_k†L_k)_d)`
/// with every expectation on the normalized `state`.
pub fn effective_hamiltonian_constrained(model: &LindbladModel, state: &ProductState) -> Result<Operator> {
    let state = state.normalized()?;
    let layout = model.layout();
    let n = layout.parties() as f64;
    let g = Operator::new(model.effective_generator(), layout.clone())?;
    let m = Operator::new(model.jump_sum(), layout.clone())?;
    let mean_m = crate::tensor::expectation(&m, &state)?.re;
    let d = layout.total_dim();
    let mut out = CMat::identity(d, d) * c(0.0, 0.5 * (n - 1.0) * mean_m);
    for (k, red) in reduced_operators(&g, &state)?.iter().enumerate() {
        out += embed(red.matrix(), k, layout);
    }
    Operator::new(out, layout.clone())
}

fn reduced_jump(model: &LindbladModel, state: &ProductState, k: usize) -> Result<(Vec<CMat>, C64)> {
    let jump = model
        .jumps()
        .get(k)
        .ok_or_else(|| Error::InvalidParameter(format!("no jump operator {k}")))?;
    let normed = state.normalized()?;
    let red: Vec<CMat> = reduced_operators(jump, &normed)?.into_iter().map(|o| o.into_matrix()).collect();
    let psi0 = normed.local(0);
    let mean = psi0.dotc(&(&red[0] * psi0));
    Ok((red, mean))
}

/// `p_k = p̃_k / Σ p̃` with `p̃_k = ⟨ψ|⊗_d (L_k†)_d (L_k)_d|ψ⟩ / |⟨L_k⟩|^{2(n-1)}`.
pub fn constrained_jump_probabilities(model: &LindbladModel, state: &ProductState) -> Result<Vec<f64>> {
    let normed = state.normalized()?;
    let n = normed.layout().parties() as i32;
    let mut weights = Vec::with_capacity(model.jumps().len());
    for k in 0..model.jumps().len() {
        let (red, mean) = reduced_jump(model, &normed, k)?;
        let m2 = mean.norm_sqr();
        if n > 1 && m2 < VANISHING_MEAN {
            return Err(Error::VanishingJumpMean(k));
        }
        let p: f64 = red.iter().zip(normed.locals()).map(|(r, v)| (r * v).norm_squared()).product();
        weights.push(p / m2.powi(n - 1));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NoJumpWeight);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// `|ψ⟩ ↦ ⊗_d (L_k)_d |ψ⟩ / ⟨L_k⟩^{n-1}`, applied to `state` as given.
pub fn apply_constrained_jump(model: &LindbladModel, state: &ProductState, k: usize) -> Result<ProductState> {
    let (red, mean) = reduced_jump(model, state, k)?;
    let n = state.layout().parties() as i32;
    if n > 1 && mean.norm_sqr() < VANISHING_MEAN {
        return Err(Error::VanishingJumpMean(k));
    }
    let mut locals: Vec<CVec> = red.iter().zip(state.locals()).map(|(r, v)| r * v).collect();
    locals[0] /= mean.powi(n - 1);
    ProductState::new(locals)
}

/// Single trajectory with the stream `traj_index` of `cfg.seed`.
pub fn mcwf_run_trajectory(
    model: &LindbladModel,
    state0: &ProductState,
    cfg: &McwfConfig,
    traj_index: u64,
    observables: &[Observable],
) -> Result<TrajectorySeries> {
    let engine = McwfEngine::new(model, cfg)?;
    let mut rng = McwfEngine::rng(cfg.seed, traj_index);
    engine.run_trajectory(state0, &mut rng, observables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed::{sse_propagate, swap_operator, SseStepConfig};
    use crate::linalg::{kron, max_abs, pauli, ZERO};
    use crate::open::{ensemble_average, lindblad_propagate, shift_operators};
    use crate::tensor::{constrained_hamiltonian, DensityMatrix};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn ket(v: &[f64]) -> CVec {
        CVec::from_iterator(v.len(), v.iter().map(|&x| c(x, 0.0)))
    }

    fn dephasing(gamma: f64, omega: f64) -> LindbladModel {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(kron(&pauli::z(), &pauli::z()) * c(omega, 0.0), l.clone()).unwrap();
        let jump = (embed(&pauli::z(), 0, &l) + embed(&pauli::z(), 1, &l)) * c(gamma.sqrt(), 0.0);
        LindbladModel::new(h, vec![Operator::new(jump, l).unwrap()]).unwrap()
    }

    fn qubit_decay(omega: f64, gamma_down: f64, gamma_up: f64) -> LindbladModel {
        let l = SubsystemLayout::qubits(1);
        let h = Operator::hermitian(pauli::ketbra(1, 1) * c(omega, 0.0), l.clone()).unwrap();
        LindbladModel::new(
            h,
            vec![
                Operator::new(pauli::lowering() * c(gamma_down.sqrt(), 0.0), l.clone()).unwrap(),
                Operator::new(pauli::raising() * c(gamma_up.sqrt(), 0.0), l).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn effective_hamiltonian_without_jumps_is_constrained_h() {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(swap_operator(2) * c(0.8, 0.0), l).unwrap();
        let m = LindbladModel::closed(h.clone()).unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let eff = effective_hamiltonian_constrained(&m, &st).unwrap();
        assert!(max_abs(&(eff.matrix() - constrained_hamiltonian(&h, &st).unwrap().matrix())) < 1e-14);
    }

    #[test]
    fn effective_hamiltonian_pure_shift() {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(kron(&pauli::x(), &pauli::z()), l.clone()).unwrap();
        let lam = c(0.7, -0.4);
        let jump = Operator::new(CMat::identity(4, 4) * lam, l).unwrap();
        let m = LindbladModel::new(h.clone(), vec![jump]).unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[0.28, 0.96])]).unwrap();
        let eff = effective_hamiltonian_constrained(&m, &st).unwrap();
        let expect = constrained_hamiltonian(&h, &st).unwrap().matrix() - CMat::identity(4, 4) * c(0.0, 0.5 * lam.norm_sqr());
        assert!(max_abs(&(eff.matrix() - expect)) < 1e-14);
    }

    #[test]
    fn effective_hamiltonian_local_pieces() {
        // local H and jumps on distinct qubits: reduced pieces are the local operators
        let l = SubsystemLayout::qubits(2);
        let ha = pauli::z() * c(0.3, 0.0);
        let la = pauli::lowering() * c(0.5, 0.0);
        let h = Operator::hermitian(embed(&ha, 0, &l), l.clone()).unwrap();
        let m = LindbladModel::new(h, vec![Operator::new(embed(&la, 0, &l), l.clone()).unwrap()]).unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[1.0, 0.0])]).unwrap();
        let eff = effective_hamiltonian_constrained(&m, &st).unwrap();
        let ma = la.adjoint() * &la;
        let mean_h = 0.3 * (0.36 - 0.64);
        let mean_m = 0.25 * 0.64;
        // subsystem 1 picks up the scalars ⟨H⟩ - (i/2)⟨M⟩; the global term adds (i/2)⟨M⟩
        let expect = embed(&(ha - ma * c(0.0, 0.5)), 0, &l) + CMat::identity(4, 4) * c(mean_h, 0.0);
        assert!(max_abs(&(eff.matrix() - expect)) < 1e-14, "{}", mean_m);
    }

    #[test]
    fn jump_probability_examples() {
        let l = SubsystemLayout::qubits(2);
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let h = Operator::zeros(l.clone());
        let op = Operator::new(kron(&pauli::x(), &pauli::z()) + CMat::identity(4, 4) * c(2.0, 0.0), l.clone()).unwrap();
        let single = LindbladModel::new(h.clone(), vec![op.clone()]).unwrap();
        assert_eq!(constrained_jump_probabilities(&single, &st).unwrap(), vec![1.0]);
        let twin = LindbladModel::new(h, vec![op.clone(), op]).unwrap();
        let p = constrained_jump_probabilities(&twin, &st).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dephasing_weights_match_dense_contraction() {
        let m = dephasing(1.0, 1.0);
        let shifted = shift_operators(&m, &m.lambda_for_factor(10.0)).unwrap();
        let st = ProductState::new(vec![ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]), ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let jump = &shifted.jumps()[0];
        // brute force: (L)_A = ⟨ψ_B|L|ψ_B⟩ by explicit partial contraction
        let psi = st.to_vector();
        let mut la = CMat::zeros(2, 2);
        let mut lb = CMat::zeros(2, 2);
        for a in 0..2 {
            for a2 in 0..2 {
                for b in 0..2 {
                    for b2 in 0..2 {
                        let e = jump.matrix()[(2 * a + b, 2 * a2 + b2)];
                        la[(a, a2)] += st.local(1)[b].conj() * e * st.local(1)[b2];
                        lb[(b, b2)] += st.local(0)[a].conj() * e * st.local(0)[a2];
                    }
                }
            }
        }
        let prod = kron(&la, &lb);
        let mean = psi.dotc(&(jump.matrix() * &psi));
        let p_tilde = psi.dotc(&(prod.adjoint() * &prod * &psi)).re / mean.norm_sqr();
        assert!(p_tilde > 0.0);
        // the engine's fast path agrees with the dense one
        let engine = McwfEngine::from_shifted(shifted.clone(), &McwfConfig::default()).unwrap();
        let mut w = Walker::new(&engine, st.locals().iter().map(|v| v.iter().copied().collect()).collect());
        let total = w.prepare_jumps().unwrap();
        assert!((total - p_tilde).abs() < 1e-12 * p_tilde);
        let out = apply_constrained_jump(&shifted, &st, 0).unwrap();
        let expect = prod * &psi / mean;
        assert!((out.to_vector() - expect).norm() < 1e-12);
    }

    #[test]
    fn identity_jump_multiplies_by_lambda() {
        let l = SubsystemLayout::qubits(3);
        let lam = c(0.3, 1.2);
        let m = LindbladModel::new(Operator::zeros(l.clone()), vec![Operator::new(CMat::identity(8, 8) * lam, l).unwrap()]).unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[1.0, 0.0]), ket(&[0.0, 1.0])]).unwrap();
        let out = apply_constrained_jump(&m, &st, 0).unwrap();
        assert!((out.to_vector() - st.to_vector() * lam).norm() < 1e-14);
    }

    #[test]
    fn local_jump_equals_free_jump() {
        let l = SubsystemLayout::qubits(2);
        let jump = embed(&(pauli::lowering() + pauli::z() * c(0.2, 0.0)), 1, &l);
        let m = LindbladModel::new(Operator::zeros(l.clone()), vec![Operator::new(jump.clone(), l).unwrap()]).unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let out = apply_constrained_jump(&m, &st, 0).unwrap();
        assert!((out.to_vector() - jump * st.to_vector()).norm() < 1e-14);
    }

    #[test]
    fn collective_decay_jump_keeps_product_form() {
        let l = SubsystemLayout::qubits(2);
        let sm = embed(&pauli::lowering(), 0, &l) + embed(&pauli::lowering(), 1, &l);
        let m = LindbladModel::new(Operator::zeros(l.clone()), vec![Operator::new(sm, l.clone()).unwrap()]).unwrap();
        let shifted = shift_operators(&m, &m.lambda_for_factor(10.0)).unwrap();
        let ee = ProductState::basis(&l, &[1, 1]).unwrap();
        let out = apply_constrained_jump(&shifted, &ee, 0).unwrap().normalized().unwrap();
        let bell = ket(&[0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0]);
        assert!(bell.dotc(&out.to_vector()).norm_sqr() <= 0.5 + 1e-12);
    }

    #[test]
    fn jumpless_trajectory_reproduces_sse() {
        let l = SubsystemLayout::qubits(2);
        let h = Operator::hermitian(swap_operator(2) + embed(&pauli::z(), 0, &l) * c(0.3, 0.0), l).unwrap();
        let m = LindbladModel::closed(h.clone()).unwrap();
        let st = ProductState::new(vec![ket(&[0.6, 0.8]), CVec::from_vec(vec![c(0.0, 0.6), c(0.8, 0.0)])]).unwrap();
        let cfg = McwfConfig { dt: 1e-2, t_end: 1.0, output_stride: 10, ..Default::default() };
        let obs = [Observable::Density];
        let tr = mcwf_run_trajectory(&m, &st, &cfg, 0, &obs).unwrap();
        let sse = sse_propagate(&h, &st, 1.0, SseStepConfig::new(1e-2).with_stride(10)).unwrap();
        for (i, s) in sse.states.iter().enumerate() {
            let rho = density_from_channels(&tr.values[i * 16..(i + 1) * 16], 4);
            let v = s.to_vector();
            assert!(max_abs(&(rho - &v * v.adjoint())) < 1e-15);
        }
    }

    fn agree_with_dense(model: &LindbladModel, st: &ProductState, cfg: &McwfConfig, obs: &[CMat]) {
        let observables: Vec<Observable> = obs.iter().cloned().map(Observable::Expectation).collect();
        let engine = McwfEngine::new(model, cfg).unwrap();
        let trajs: Vec<_> = (0..cfg.n_traj as u64)
            .map(|i| engine.run_trajectory(st, &mut McwfEngine::rng(cfg.seed, i), &observables).unwrap())
            .collect();
        let ens = ensemble_average(&trajs).unwrap();
        let rho0 = DensityMatrix::from_product(st).unwrap();
        let dense = lindblad_propagate(model, &rho0, cfg.t_end, cfg.dt, cfg.output_stride).unwrap();
        let mut worst: f64 = 0.0;
        for (ti, rho) in dense.states.iter().enumerate() {
            for (ch, op) in obs.iter().enumerate() {
                let exact = crate::open::expect_real(rho.matrix(), op);
                let z = (ens.mean_at(ti, ch) - exact).abs() / ens.stderr_at(ti, ch).max(1e-12);
                worst = worst.max(z);
            }
        }
        assert!(worst < 4.0, "worst deviation {worst} standard errors");
    }

    #[test]
    fn unconstrained_segment_matches_dense_for_thermal_qubit() {
        let m = qubit_decay(1.0, 1.0, 0.4);
        let st = ProductState::new(vec![ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let obs = [pauli::ketbra(1, 1), pauli::x()];
        for lambda_factor in [0.0, 10.0] {
            let cfg = McwfConfig {
                dt: 0.02,
                t_end: 2.0,
                n_traj: 4000,
                seed: 7,
                lambda_factor,
                output_stride: 10,
                mode: Mode::Free,
                ..Default::default()
            };
            agree_with_dense(&m, &st, &cfg, &obs);
        }
    }

    #[test]
    fn unconstrained_per_step_matches_dense_for_thermal_qubit() {
        let m = qubit_decay(1.0, 1.0, 0.4);
        let st = ProductState::new(vec![ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2])]).unwrap();
        let cfg = McwfConfig {
            dt: 2e-3,
            t_end: 2.0,
            n_traj: 4000,
            seed: 3,
            lambda_factor: 0.0,
            jump_rule: JumpRule::PerStep,
            output_stride: 100,
            mode: Mode::Free,
        };
        agree_with_dense(&m, &st, &cfg, &[pauli::ketbra(1, 1), pauli::x()]);
    }

    #[test]
    fn unconstrained_dephasing_matches_dense() {
        let m = dephasing(1.0, 1.0);
        let st = ProductState::new(vec![ket(&[0.8, 0.6]), ket(&[0.8, 0.6])]).unwrap();
        let l = SubsystemLayout::qubits(2);
        let obs = [
            embed(&pauli::x(), 0, &l),
            kron(&pauli::x(), &pauli::x()),
            embed(&pauli::y(), 1, &l),
            embed(&pauli::z(), 0, &l),
        ];
        let cfg = McwfConfig { dt: 0.01, t_end: 1.0, n_traj: 3000, seed: 11, output_stride: 10, mode: Mode::Free, ..Default::default() };
        agree_with_dense(&m, &st, &cfg, &obs);
    }

    #[test]
    fn per_step_rejects_large_rate_steps() {
        let m = qubit_decay(1.0, 1.0, 0.4);
        let cfg = McwfConfig { dt: 0.01, jump_rule: JumpRule::PerStep, ..Default::default() };
        assert!(matches!(McwfEngine::new(&m, &cfg), Err(Error::InvalidParameter(_))));
        let cfg = McwfConfig { lambda_factor: 0.0, ..cfg };
        assert!(McwfEngine::new(&m, &cfg).is_ok());
    }

    #[test]
    fn heat_flow_forms_agree_for_local_jumps_and_free_mode() {
        let m = qubit_decay(1.3, 1.0, 0.4);
        let energy = pauli::ketbra(1, 1) * c(1.3, 0.0);
        let st = ProductState::new(vec![ket(&[0.6, 0.8])]).unwrap();
        let cfg = McwfConfig { dt: 0.01, t_end: 0.0, mode: Mode::Free, ..Default::default() };
        let obs = [
            Observable::HeatFlow { energy: energy.clone(), form: HeatFlowForm::Unraveling },
            Observable::HeatFlow { energy: energy.clone(), form: HeatFlowForm::Dissipator },
        ];
        let tr = mcwf_run_trajectory(&m, &st, &cfg, 0, &obs).unwrap();
        let rho = DensityMatrix::from_product(&st).unwrap();
        let exact = crate::open::expect_real(&crate::open::lindblad_rhs_matrix(&m, rho.matrix()), &energy);
        assert!((tr.values[0] - exact).abs() < 1e-12);
        assert!((tr.values[1] - exact).abs() < 1e-12);
        let _ = ZERO;
    }
}
