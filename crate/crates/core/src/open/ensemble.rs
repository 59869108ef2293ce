//! Ensemble averaging with deterministic parallel execution.
//!
//! Trajectory `i` of branch `b` draws from ChaCha stream `(b << 32) | i` of the
//! master seed. Trajectories are grouped in fixed blocks, each block is
//! accumulated sequentially, and blocks are merged in index order, so the
//! result does not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::open::{JumpStats, LindbladModel, McwfConfig, McwfEngine, Observable, TrajectorySeries};
use crate::tensor::ProductState;

const BLOCK: usize = 64;

/// Pointwise mean and standard error of trajectory observables.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub channels: usize,
    pub n_traj: usize,
    /// Row-major in (time, channel).
    pub mean: Vec<f64>,
    /// Sample standard deviation over `√n`, same layout as `mean`.
    pub stderr: Vec<f64>,
    pub seed: u64,
    pub dt: f64,
    pub jumps: JumpStats,
    /// The first few trajectories, when requested.
    pub kept: Vec<TrajectorySeries>,
}

impl TrajectoryEnsemble {
    pub fn mean_at(&self, time_index: usize, channel: usize) -> f64 {
        self.mean[time_index * self.channels + channel]
    }

    pub fn stderr_at(&self, time_index: usize, channel: usize) -> f64 {
        self.stderr[time_index * self.channels + channel]
    }

    pub fn channel_mean(&self, channel: usize) -> Vec<f64> {
        (0..self.times.len()).map(|t| self.mean_at(t, channel)).collect()
    }

    pub fn channel_stderr(&self, channel: usize) -> Vec<f64> {
        (0..self.times.len()).map(|t| self.stderr_at(t, channel)).collect()
    }

    /// Pools two ensembles of the same single-branch (or sampled) problem run
    /// over disjoint trajectory ranges.
    pub fn merge(&self, other: &TrajectoryEnsemble) -> Result<TrajectoryEnsemble> {
        if self.times != other.times || self.channels != other.channels {
            return Err(Error::GridMismatch);
        }
        let to_moments = |e: &TrajectoryEnsemble| {
            let n = e.n_traj as f64;
            Moments {
                count: e.n_traj as u64,
                mean: e.mean.clone(),
                m2: e.stderr.iter().map(|s| s * s * n * (n - 1.0)).collect(),
            }
        };
        let mut m = to_moments(self);
        m.merge(&to_moments(other));
        let mut jumps = self.jumps.clone();
        jumps.merge(&other.jumps);
        let mut kept = self.kept.clone();
        kept.extend(other.kept.iter().cloned());
        Ok(TrajectoryEnsemble {
            times: self.times.clone(),
            channels: self.channels,
            n_traj: self.n_traj + other.n_traj,
            stderr: m.stderr(),
            mean: m.mean,
            seed: self.seed,
            dt: self.dt,
            jumps,
            kept,
        })
    }
}

/// Streaming mean and centered second moment (Welford), mergeable (Chan et al.).
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|s| (s.max(0.0) / (n - 1.0)).sqrt() / n.sqrt()).collect()
    }
}

/// Mean and standard error over an explicit list of trajectories.
pub fn ensemble_average(trajectories: &[TrajectorySeries]) -> Result<TrajectoryEnsemble> {
    let first = trajectories.first().ok_or(Error::EmptyEnsemble)?;
    let mut moments = Moments::new(first.values.len());
    let mut jumps = JumpStats::default();
    for tr in trajectories {
        if tr.times != first.times || tr.channels != first.channels {
            return Err(Error::GridMismatch);
        }
        moments.push(&tr.values);
        jumps.merge(&tr.jumps);
    }
    let dt = if first.times.len() > 1 { first.times[1] - first.times[0] } else { 0.0 };
    Ok(TrajectoryEnsemble {
        times: first.times.clone(),
        channels: first.channels,
        n_traj: trajectories.len(),
        stderr: moments.stderr(),
        mean: moments.mean,
        seed: 0,
        dt,
        jumps,
        kept: Vec::new(),
    })
}

/// Pure product states with weights summing to one.
#[derive(Clone, Debug)]
pub struct InitialEnsemble {
    pub branches: Vec<(f64, ProductState)>,
    /// Propagate every branch and combine with weights; otherwise each
    /// trajectory samples its branch.
    pub exhaustive: bool,
}

impl InitialEnsemble {
    pub fn pure(state: ProductState) -> Self {
        Self { branches: vec![(1.0, state)], exhaustive: true }
    }

    pub fn mixture(branches: Vec<(f64, ProductState)>) -> Result<Self> {
        let total: f64 = branches.iter().map(|b| b.0).sum();
        if branches.is_empty() || branches.iter().any(|b| !(b.0 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("mixture weights must be ≥ 0 and sum to 1".into()));
        }
        Ok(Self { exhaustive: branches.len() <= 4, branches })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 means all logical cores.
    pub jobs: usize,
    /// Trajectories to keep in full (per branch).
    pub keep: usize,
    /// Index of the first trajectory, so that disjoint ranges can be run
    /// separately and merged.
    pub first_trajectory: u64,
}

struct BlockResult {
    moments: Moments,
    jumps: JumpStats,
    kept: Vec<TrajectorySeries>,
}

fn run_blocks<F>(n_traj: usize, len: usize, keep: usize, run: F) -> Result<BlockResult>
where
    F: Fn(u64) -> Result<TrajectorySeries> + Sync,
{
    let blocks = n_traj.div_ceil(BLOCK);
    let results: Vec<Result<BlockResult>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut moments = Moments::new(len);
            let mut jumps = JumpStats::default();
            let mut kept = Vec::new();
            for i in b * BLOCK..((b + 1) * BLOCK).min(n_traj) {
                let tr = run(i as u64)?;
                moments.push(&tr.values);
                jumps.merge(&tr.jumps);
                if i < keep {
                    kept.push(tr);
                }
            }
            Ok(BlockResult { moments, jumps, kept })
        })
        .collect();
    let mut total = BlockResult { moments: Moments::new(len), jumps: JumpStats::default(), kept: Vec::new() };
    for r in results {
        let r = r?;
        total.moments.merge(&r.moments);
        total.jumps.merge(&r.jumps);
        total.kept.extend(r.kept);
    }
    Ok(total)
}

/// Runs the MCWF ensemble for `init` and averages the observables.
///
/// Models without jump operators are deterministic and use one trajectory per
/// branch.
pub fn run_ensemble(
    model: &LindbladModel,
    init: &InitialEnsemble,
    cfg: &McwfConfig,
    observables: &[Observable],
    opts: &RunOptions,
) -> Result<TrajectoryEnsemble> {
    let engine = McwfEngine::new(model, cfg)?;
    let grid = engine.grid();
    let times = grid.output_times();
    let channels = engine.channels(observables);
    let len = times.len() * channels;
    let deterministic = model.jumps().is_empty();
    let n_traj = if deterministic { 1 } else { cfg.n_traj };

    let work = || -> Result<TrajectoryEnsemble> {
        let mut mean = vec![0.0; len];
        let mut var = vec![0.0; len];
        let mut jumps = JumpStats::default();
        let mut kept = Vec::new();
        if init.exhaustive || init.branches.len() == 1 {
            for (b, (w, state)) in init.branches.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let res = run_blocks(n_traj, len, opts.keep, |i| {
                    let mut rng = McwfEngine::rng(cfg.seed, ((b as u64) << 32) | (opts.first_trajectory + i));
                    engine.run_trajectory(state, &mut rng, observables)
                })?;
                let se = res.moments.stderr();
                for i in 0..len {
                    mean[i] += w * res.moments.mean[i];
                    var[i] += w * w * se[i] * se[i];
                }
                jumps.merge(&res.jumps);
                kept.extend(res.kept);
            }
        } else {
            let weights: Vec<f64> = init.branches.iter().map(|b| b.0).collect();
            let res = run_blocks(cfg.n_traj, len, opts.keep, |i| {
                let mut rng = McwfEngine::rng(cfg.seed, opts.first_trajectory + i);
                let u: f64 = rand::Rng::random(&mut rng);
                let mut acc = 0.0;
                let mut pick = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                engine.run_trajectory(&init.branches[pick].1, &mut rng, observables)
            })?;
            var = res.moments.stderr().iter().map(|s| s * s).collect();
            mean = res.moments.mean;
            jumps = res.jumps;
            kept = res.kept;
        }
        Ok(TrajectoryEnsemble {
            times: times.clone(),
            channels,
            n_traj,
            mean,
            stderr: var.iter().map(|v| v.sqrt()).collect(),
            seed: cfg.seed,
            dt: grid.dt,
            jumps,
            kept,
        })
    };

    if opts.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli, CVec};
    use crate::open::mcwf_run_trajectory;
    use crate::tensor::{Operator, SubsystemLayout};
    use crate::Mode;

    fn decay() -> LindbladModel {
        let l = SubsystemLayout::qubits(1);
        let h = Operator::hermitian(pauli::ketbra(1, 1), l.clone()).unwrap();
        LindbladModel::new(h, vec![Operator::new(pauli::lowering() * c(0.8, 0.0), l).unwrap()]).unwrap()
    }

    fn excited() -> ProductState {
        ProductState::new(vec![CVec::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)])]).unwrap()
    }

    fn cfg(n: usize) -> McwfConfig {
        McwfConfig { dt: 0.01, t_end: 1.0, n_traj: n, seed: 11, output_stride: 10, mode: Mode::Free, ..Default::default() }
    }

    #[test]
    fn result_is_independent_of_worker_count() {
        let obs = [Observable::Expectation(pauli::ketbra(1, 1))];
        let init = InitialEnsemble::pure(excited());
        let a = run_ensemble(&decay(), &init, &cfg(300), &obs, &RunOptions { jobs: 1, ..Default::default() }).unwrap();
        let b = run_ensemble(&decay(), &init, &cfg(300), &obs, &RunOptions { jobs: 3, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn streaming_average_matches_explicit_list() {
        let obs = [Observable::Expectation(pauli::ketbra(1, 1))];
        let n = 150;
        let e = run_ensemble(&decay(), &InitialEnsemble::pure(excited()), &cfg(n), &obs, &RunOptions::default()).unwrap();
        let list: Vec<_> = (0..n as u64).map(|i| mcwf_run_trajectory(&decay(), &excited(), &cfg(n), i, &obs).unwrap()).collect();
        let f = ensemble_average(&list).unwrap();
        for (x, y) in e.mean.iter().zip(&f.mean).chain(e.stderr.iter().zip(&f.stderr)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(e.jumps, f.jumps);
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let obs = [Observable::Expectation(pauli::ketbra(1, 1))];
        let tr = mcwf_run_trajectory(&decay(), &excited(), &cfg(1), 4, &obs).unwrap();
        let e = ensemble_average(&vec![tr.clone(); 7]).unwrap();
        for (m, v) in e.mean.iter().zip(&tr.values) {
            assert!((m - v).abs() < 1e-15);
        }
        assert!(e.stderr.iter().all(|&s| s == 0.0));
        assert_eq!(ensemble_average(&[]), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn disjoint_ranges_merge_into_the_full_run() {
        let obs = [Observable::Expectation(pauli::ketbra(1, 1))];
        let init = InitialEnsemble::pure(excited());
        let full = run_ensemble(&decay(), &init, &cfg(200), &obs, &RunOptions::default()).unwrap();
        let a = run_ensemble(&decay(), &init, &cfg(130), &obs, &RunOptions::default()).unwrap();
        let b = run_ensemble(&decay(), &init, &cfg(70), &obs, &RunOptions { first_trajectory: 130, ..Default::default() })
            .unwrap();
        let m = a.merge(&b).unwrap();
        assert_eq!(m.n_traj, 200);
        for (x, y) in m.mean.iter().zip(&full.mean).chain(m.stderr.iter().zip(&full.stderr)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn exhaustive_branches_are_weighted() {
        let l = SubsystemLayout::qubits(1);
        let closed = LindbladModel::closed(Operator::hermitian(pauli::x(), l).unwrap()).unwrap();
        let up = ProductState::new(vec![CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)])]).unwrap();
        let down = ProductState::new(vec![CVec::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)])]).unwrap();
        let init = InitialEnsemble::mixture(vec![(0.25, up), (0.75, down)]).unwrap();
        assert!(init.exhaustive);
        let obs = [Observable::Expectation(pauli::z())];
        let e = run_ensemble(&closed, &init, &cfg(1000), &obs, &RunOptions::default()).unwrap();
        assert_eq!(e.n_traj, 1);
        for (t, m) in e.times.iter().zip(&e.mean) {
            // ⟨σᶻ⟩ = ±cos 2t on the two branches
            assert!((m - (0.25 - 0.75) * (2.0 * t).cos()).abs() < 1e-8);
        }
        assert!(e.stderr.iter().all(|&s| s == 0.0));
        assert!(InitialEnsemble::mixture(vec![(0.5, excited())]).is_err());
    }
}
