//! Executes a [`RunConfig`]: free and constrained solves, the results table,
//! the manifest and the optional dumps, written to the output directory in
//! one step.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cli::config::{FreeSolver, ObservableKind, RunConfig};
use crate::cli::table::{format_value, ResultTable};
use crate::linalg::{pauli, CMat};
use crate::open::{
    density_from_channels, expect_real, lindblad_propagate, run_ensemble, steady_state, HeatFlowForm, JumpStats,
    Observable, RunOptions as EnsembleOptions, TrajectoryEnsemble, TrajectorySeries,
};
use crate::scenarios::{bell_projector, Scenario};
use crate::tensor::{embed, DensityMatrix};
use crate::thermo::{
    entropy_production_rate, estimate_steady_state, heat_flow_with, relative_entropy, time_average,
    von_neumann_entropy,
};
use crate::{Error, Mode, Result, MODULE_VERSIONS};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SEPTHERMO_OUT_DIR";
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const PLOT_FILE: &str = "plot.py";

/// Command-line adjustments applied on top of a parsed config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_traj: Option<usize>,
    /// Use the scenario's full-scale trajectory count.
    pub full: bool,
}

/// Applies `ov` and revalidates.
pub fn apply_overrides(cfg: &RunConfig, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = cfg.clone();
    if ov.full {
        cfg.mcwf.n_traj = cfg.scenario.name.run_defaults().full_n_traj;
    }
    if let Some(n) = ov.n_traj {
        cfg.mcwf.n_traj = n;
    }
    if let Some(s) = ov.seed {
        cfg.mcwf.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.output.dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `--out`, then the environment override, then the config, then
/// `runs/<scenario>`.
pub fn resolve_output_dir(cfg: &RunConfig, cli_out: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.scenario.name.as_str()))
}

/// Bookkeeping for one stochastic solve.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticRun {
    pub mode: Mode,
    pub n_traj: usize,
    pub jumps: JumpStats,
    pub channel_names: Vec<String>,
    pub kept: Vec<TrajectorySeries>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub table: ResultTable,
    pub stochastic: Vec<StochasticRun>,
    pub wall_time: f64,
    pub jobs: usize,
}

/// Per-mode values of every base column, with optional standard errors.
struct Series {
    values: Vec<(String, Vec<f64>, Option<Vec<f64>>)>,
}

impl Series {
    fn get(&self, name: &str) -> Option<&(String, Vec<f64>, Option<Vec<f64>>)> {
        self.values.iter().find(|v| v.0 == name)
    }
}

fn base_names(sc: &Scenario, kind: ObservableKind) -> Vec<String> {
    match kind {
        ObservableKind::Populations => sc.parties.iter().map(|p| format!("population_{p}")).collect(),
        ObservableKind::BlochVectors => sc
            .parties
            .iter()
            .flat_map(|p| ["x", "y", "z"].map(|a| format!("bloch_{p}_{a}")))
            .collect(),
        k => vec![k.as_str().to_string()],
    }
}

fn bloch_ops(sc: &Scenario) -> Vec<CMat> {
    let layout = sc.layout();
    (0..sc.parties.len())
        .flat_map(|k| [pauli::x(), pauli::y(), pauli::z()].map(|s| embed(&s, k, layout)))
        .collect()
}

fn cumulative_trapezoid(times: &[f64], rate: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(rate.len());
    for i in 0..rate.len() {
        if i > 0 {
            acc += 0.5 * (rate[i] + rate[i - 1]) * (times[i] - times[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Entropy-type channels of a density-matrix series.
fn entropic(
    kind: ObservableKind,
    times: &[f64],
    states: &[CMat],
    reference: Option<&CMat>,
) -> Result<Vec<f64>> {
    let nan = || vec![f64::NAN; times.len()];
    Ok(match kind {
        ObservableKind::Entropy => states.iter().map(von_neumann_entropy).collect(),
        ObservableKind::RelativeEntropy => match reference {
            Some(r) => states.iter().map(|s| relative_entropy(s, r)).collect::<Result<_>>()?,
            None => nan(),
        },
        ObservableKind::EntropyProduction => match reference {
            Some(r) => entropy_production_rate(times, states, r)?,
            None => nan(),
        },
        _ => unreachable!("not an entropic observable"),
    })
}

fn free_reference(sc: &Scenario) -> Option<CMat> {
    if sc.model.jumps().is_empty() {
        return None;
    }
    steady_state(&sc.model).ok().map(DensityMatrix::into_matrix)
}

fn dense_free(cfg: &RunConfig, sc: &Scenario) -> Result<(Vec<f64>, Series)> {
    let n = &cfg.numerics;
    let rho0 = DensityMatrix::new(sc.initial_density()?, sc.layout().clone())?;
    let series = lindblad_propagate(&sc.model, &rho0, n.t_end, n.dt, n.output_stride)?;
    let times = series.times.clone();
    let states: Vec<CMat> = series.states.into_iter().map(DensityMatrix::into_matrix).collect();
    let expect = |op: &CMat| states.iter().map(|r| expect_real(r, op)).collect::<Vec<f64>>();
    let energy = expect(&sc.energy);
    let heat: Vec<f64> = energy.iter().map(|e| e - energy[0]).collect();
    let reference = free_reference(sc);

    let mut values = Vec::new();
    for &kind in &cfg.observables {
        let names = base_names(sc, kind);
        let cols: Vec<Vec<f64>> = match kind {
            ObservableKind::Populations => sc.ground_projectors().iter().map(|(_, p)| expect(p)).collect(),
            ObservableKind::BlochVectors => bloch_ops(sc).iter().map(expect).collect(),
            ObservableKind::Heat => vec![heat.clone()],
            ObservableKind::ConstrainedHeat => {
                let rate: Vec<f64> = states
                    .iter()
                    .map(|r| {
                        let rho = DensityMatrix::from_matrix_unchecked(r.clone(), sc.layout().clone());
                        heat_flow_with(&sc.model, &rho, Mode::Free, &sc.energy, HeatFlowForm::Dissipator)
                    })
                    .collect::<Result<_>>()?;
                vec![cumulative_trapezoid(&times, &rate)]
            }
            ObservableKind::BellOverlap => vec![expect(&bell_projector())],
            ObservableKind::TimeAveragedHeat => vec![time_average(&times, &heat)?],
            k => vec![entropic(k, &times, &states, reference.as_ref())?],
        };
        values.extend(names.into_iter().zip(cols).map(|(n, v)| (n, v, None)));
    }
    Ok((times, Series { values }))
}

/// Stochastic channels, one entry per table base column.
enum Probe {
    Linear(usize),
    /// Channel minus its own first mean.
    Shifted { channel: usize, origin: usize },
    Entropic(ObservableKind),
}

struct ProbePlan {
    observables: Vec<Observable>,
    names: Vec<String>,
    columns: Vec<(String, Probe)>,
    density: Option<usize>,
}

impl ProbePlan {
    fn add(&mut self, name: &str, obs: Observable, dim: usize) -> usize {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return i;
        }
        let first = self.names.len();
        let count = obs.channels(dim);
        if count == 1 {
            self.names.push(name.to_string());
        } else {
            self.names.extend((0..count).map(|i| format!("{name}_{i}")));
        }
        self.observables.push(obs);
        first
    }

    fn build(cfg: &RunConfig, sc: &Scenario) -> Self {
        let dim = sc.model.dim();
        let mut plan = ProbePlan { observables: Vec::new(), names: Vec::new(), columns: Vec::new(), density: None };
        for &kind in &cfg.observables {
            let names = base_names(sc, kind);
            match kind {
                ObservableKind::Populations => {
                    for ((_, p), n) in sc.ground_projectors().into_iter().zip(names) {
                        let ch = plan.add(&n, Observable::Expectation(p), dim);
                        plan.columns.push((n, Probe::Linear(ch)));
                    }
                }
                ObservableKind::BlochVectors => {
                    for (op, n) in bloch_ops(sc).into_iter().zip(names) {
                        let ch = plan.add(&n, Observable::Expectation(op), dim);
                        plan.columns.push((n, Probe::Linear(ch)));
                    }
                }
                ObservableKind::Heat => {
                    let ch = plan.add("energy", Observable::Expectation(sc.energy.clone()), dim);
                    plan.columns.push((names[0].clone(), Probe::Shifted { channel: ch, origin: ch }));
                }
                ObservableKind::ConstrainedHeat => {
                    let obs = Observable::IntegratedHeatFlow { energy: sc.energy.clone(), form: HeatFlowForm::Unraveling };
                    let ch = plan.add("integrated_heat_flow", obs, dim);
                    plan.columns.push((names[0].clone(), Probe::Linear(ch)));
                }
                ObservableKind::BellOverlap => {
                    let ch = plan.add("bell_overlap", Observable::Expectation(bell_projector()), dim);
                    plan.columns.push((names[0].clone(), Probe::Linear(ch)));
                }
                ObservableKind::TimeAveragedHeat => {
                    let origin = plan.add("energy", Observable::Expectation(sc.energy.clone()), dim);
                    let ch = plan.add("time_averaged_energy", Observable::TimeAverage(sc.energy.clone()), dim);
                    plan.columns.push((names[0].clone(), Probe::Shifted { channel: ch, origin }));
                }
                k => {
                    plan.density = Some(plan.add("rho", Observable::Density, dim));
                    plan.columns.push((names[0].clone(), Probe::Entropic(k)));
                }
            }
        }
        plan
    }
}

fn stochastic(cfg: &RunConfig, sc: &Scenario, mode: Mode, jobs: usize) -> Result<(Vec<f64>, Series, StochasticRun)> {
    let plan = ProbePlan::build(cfg, sc);
    let opts = EnsembleOptions { jobs, keep: cfg.output.trajectories, first_trajectory: 0 };
    let ens: TrajectoryEnsemble = run_ensemble(&sc.model, &sc.initial, &cfg.mcwf_config(mode), &plan.observables, &opts)?;
    let times = ens.times.clone();
    let dim = sc.model.dim();

    let states: Option<Vec<CMat>> = plan.density.map(|first| {
        (0..times.len())
            .map(|t| {
                let start = t * ens.channels + first;
                density_from_channels(&ens.mean[start..start + dim * dim], dim)
            })
            .collect()
    });
    let reference = match (&states, mode) {
        (Some(_), Mode::Free) => free_reference(sc),
        (Some(s), Mode::Constrained) => estimate_steady_state(&times, s)?,
        _ => None,
    };

    let mut values = Vec::new();
    for (name, probe) in &plan.columns {
        let (v, se) = match probe {
            Probe::Linear(ch) => (ens.channel_mean(*ch), ens.channel_stderr(*ch)),
            Probe::Shifted { channel, origin } => {
                let e0 = ens.mean_at(0, *origin);
                (ens.channel_mean(*channel).iter().map(|x| x - e0).collect(), ens.channel_stderr(*channel))
            }
            Probe::Entropic(k) => {
                let s = states.as_ref().expect("density channels recorded");
                (entropic(*k, &times, s, reference.as_ref())?, vec![f64::NAN; times.len()])
            }
        };
        values.push((name.clone(), v, Some(se)));
    }
    let run = StochasticRun { mode, n_traj: ens.n_traj, jumps: ens.jumps.clone(), channel_names: plan.names, kept: ens.kept };
    Ok((times, Series { values }, run))
}

/// Closed-form columns for `kind`, keyed by suffixed column name.
fn analytic_columns(sc: &Scenario, kind: ObservableKind, modes: &[Mode], times: &[f64]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for &mode in modes {
        let tag = mode.as_str();
        let heat = || -> Result<Option<Vec<f64>>> {
            if let Some(q) = times.iter().map(|&t| sc.analytic_heat(mode, t)).collect::<Option<Vec<f64>>>() {
                return Ok(Some(q));
            }
            if let Some(states) = battery_states(sc, mode, times)? {
                let e: Vec<f64> = states.iter().map(|v| (v.adjoint() * &sc.energy * v)[(0, 0)].re).collect();
                return Ok(Some(e.iter().map(|x| x - e[0]).collect()));
            }
            Ok(None)
        };
        match kind {
            ObservableKind::Heat => {
                if let Some(q) = heat()? {
                    out.push((format!("heat_analytic_{tag}"), q));
                }
            }
            ObservableKind::TimeAveragedHeat => {
                if let Some(q) = heat()? {
                    out.push((format!("time_averaged_heat_analytic_{tag}"), time_average(times, &q)?));
                }
            }
            ObservableKind::BellOverlap if mode == Mode::Free => {
                if let Some(b) = times.iter().map(|&t| sc.analytic_bell_overlap(t)).collect::<Option<Vec<f64>>>() {
                    out.push(("bell_overlap_analytic_free".to_string(), b));
                }
            }
            ObservableKind::BlochVectors => {
                if let Some(states) = battery_states(sc, mode, times)? {
                    for (op, name) in bloch_ops(sc).iter().zip(base_names(sc, kind)) {
                        let v = states.iter().map(|s| (s.adjoint() * op * s)[(0, 0)].re).collect();
                        out.push((format!("{name}_analytic_{tag}"), v));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

fn battery_states(sc: &Scenario, mode: Mode, times: &[f64]) -> Result<Option<Vec<crate::linalg::CVec>>> {
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        match sc.analytic_battery_state(mode, t) {
            Some(v) => out.push(v?),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

fn wrap(cfg: &RunConfig, mode: Mode, e: Error) -> Error {
    Error::Run {
        scenario: cfg.scenario.name.to_string(),
        mode: format!("{} (dt = {}, t_end = {})", mode.as_str(), cfg.numerics.dt, cfg.numerics.t_end),
        source: Box::new(e),
    }
}

/// Runs every requested mode and assembles the results table.
pub fn compute(cfg: &RunConfig, jobs: usize) -> Result<RunOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let sc = cfg.scenario.build()?;
    let modes = cfg.mode.modes();
    let mut per_mode: Vec<(Mode, Series)> = Vec::new();
    let mut stochastic_runs = Vec::new();
    let mut times: Option<Vec<f64>> = None;
    for &mode in &modes {
        let (t, s) = match (mode, cfg.numerics.free_solver) {
            (Mode::Free, FreeSolver::Dense) => dense_free(cfg, &sc).map_err(|e| wrap(cfg, mode, e))?,
            _ => {
                let (t, s, run) = stochastic(cfg, &sc, mode, jobs).map_err(|e| wrap(cfg, mode, e))?;
                stochastic_runs.push(run);
                (t, s)
            }
        };
        if let Some(prev) = &times {
            if prev.len() != t.len() || prev.iter().zip(&t).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
                return Err(wrap(cfg, mode, Error::GridMismatch));
            }
        } else {
            times = Some(t);
        }
        per_mode.push((mode, s));
    }
    let times = times.expect("at least one mode");

    let mut table = ResultTable::new(times.clone());
    for &kind in &cfg.observables {
        for name in base_names(&sc, kind) {
            for (mode, series) in &per_mode {
                let (_, v, se) = series.get(&name).expect("every mode fills every column");
                table.push(format!("{name}_{}", mode.as_str()), v.clone())?;
                if let Some(se) = se {
                    table.push(format!("{name}_{}_stderr", mode.as_str()), se.clone())?;
                }
            }
        }
        for (name, v) in analytic_columns(&sc, kind, &modes, &times)? {
            table.push(name, v)?;
        }
    }
    Ok(RunOutcome {
        config: cfg.clone(),
        table,
        stochastic: stochastic_runs,
        wall_time: start.elapsed().as_secs_f64(),
        jobs,
    })
}

impl RunOutcome {
    /// Manifest text: run facts followed by the full resolved config.
    pub fn manifest(&self) -> String {
        use toml::{Table, Value};
        let mut doc = Table::new();
        let mut run = Table::new();
        run.insert("scenario".into(), Value::from(self.config.scenario.name.as_str()));
        run.insert(
            "modes".into(),
            Value::Array(self.config.mode.modes().iter().map(|m| Value::from(m.as_str())).collect()),
        );
        run.insert("master_seed".into(), Value::from(self.config.mcwf.seed as i64));
        run.insert("jobs".into(), Value::from(self.jobs as i64));
        run.insert("wall_time_s".into(), Value::from(self.wall_time));
        run.insert("rows".into(), Value::from(self.table.times.len() as i64));
        run.insert(
            "columns".into(),
            Value::Array(self.table.header().into_iter().map(Value::from).collect()),
        );
        doc.insert("run".into(), Value::Table(run));

        let mut versions = Table::new();
        for (m, v) in MODULE_VERSIONS {
            versions.insert(m.into(), Value::from(v));
        }
        doc.insert("versions".into(), Value::Table(versions));

        let mut jumps = Table::new();
        for s in &self.stochastic {
            let mut t = Table::new();
            let total = s.jumps.total();
            t.insert("trajectories".into(), Value::from(s.n_traj as i64));
            t.insert("total".into(), Value::from(total as i64));
            t.insert("mean_per_trajectory".into(), Value::from(total as f64 / s.n_traj.max(1) as f64));
            t.insert(
                "per_channel".into(),
                Value::Array(s.jumps.per_channel.iter().map(|&n| Value::from(n as i64)).collect()),
            );
            jumps.insert(s.mode.as_str().into(), Value::Table(t));
        }
        doc.insert("jumps".into(), Value::Table(jumps));

        let config: Table = toml::from_str(&self.config.to_toml()).expect("canonical config parses");
        doc.insert("config".into(), Value::Table(config));
        toml::to_string(&doc).expect("manifest serializes")
    }

    /// Long-format dump of the kept trajectories, if any.
    pub fn trajectories_csv(&self) -> Option<String> {
        let runs: Vec<&StochasticRun> = self.stochastic.iter().filter(|s| !s.kept.is_empty()).collect();
        if runs.is_empty() {
            return None;
        }
        let mut names: Vec<String> = Vec::new();
        for r in &runs {
            for n in &r.channel_names {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header = ["mode", "trajectory", "t"].into_iter().map(String::from).chain(names.iter().cloned());
        w.write_record(header).ok()?;
        for r in runs {
            let index: Vec<Option<usize>> =
                names.iter().map(|n| r.channel_names.iter().position(|m| m == n)).collect();
            for (k, tr) in r.kept.iter().enumerate() {
                for (i, t) in tr.times.iter().enumerate() {
                    let mut row = vec![r.mode.as_str().to_string(), k.to_string(), format_value(*t)];
                    row.extend(index.iter().map(|c| match c {
                        Some(c) => format_value(tr.at(i, *c)),
                        None => String::new(),
                    }));
                    w.write_record(row).ok()?;
                }
            }
        }
        String::from_utf8(w.into_inner().ok()?).ok()
    }
}

/// Ready-to-edit matplotlib script for the results table.
pub fn plot_script() -> &'static str {
    r#"import csv
import math
import sys
from collections import OrderedDict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "results.csv"
with open(path) as f:
    rows = list(csv.DictReader(f))
t = [float(r["t"]) for r in rows]
col = lambda name: [float(r[name]) for r in rows]

groups = OrderedDict()
for name in rows[0]:
    if name == "t" or name.endswith("_stderr"):
        continue
    for tag in ("_analytic_free", "_analytic_constrained", "_free", "_constrained"):
        if name.endswith(tag):
            groups.setdefault(name[: -len(tag)], []).append(name)
            break

fig, axes = plt.subplots(len(groups), 1, sharex=True, figsize=(6, 2.4 * len(groups)), squeeze=False)
for ax, (base, names) in zip(axes[:, 0], groups.items()):
    for name in names:
        y = col(name)
        style = "--" if "_analytic_" in name else "-"
        ax.plot(t, y, style, label=name)
        if name + "_stderr" in rows[0]:
            se = col(name + "_stderr")
            if not any(math.isnan(s) for s in se):
                lo = [a - 3 * s for a, s in zip(y, se)]
                hi = [a + 3 * s for a, s in zip(y, se)]
                ax.fill_between(t, lo, hi, alpha=0.2)
    ax.set_ylabel(base)
    ax.legend(fontsize="small")
axes[-1, 0].set_xlabel("t")
fig.tight_layout()
fig.savefig("plot.png", dpi=150)
"#
}

fn is_replaceable_run_dir(dir: &Path) -> Result<bool> {
    if !dir.exists() {
        return Ok(true);
    }
    if !dir.is_dir() {
        return Ok(false);
    }
    Ok(dir.join(MANIFEST_FILE).is_file() || std::fs::read_dir(dir)?.next().is_none())
}

fn write_files(staging: &Path, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(staging)?;
    for (name, body) in files {
        std::fs::write(staging.join(name), body)?;
    }
    Ok(())
}

/// Writes the outcome into `dir`, replacing an earlier run there. Files are
/// written to a sibling staging directory first, so a failure leaves no
/// partial output behind.
pub fn write_outcome(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    if !is_replaceable_run_dir(dir)? {
        return Err(Error::Io(format!(
            "{} exists and is not a run directory (no {MANIFEST_FILE})",
            dir.display()
        )));
    }
    let mut files = vec![(RESULTS_FILE, outcome.table.to_csv_string()), (MANIFEST_FILE, outcome.manifest())];
    if let Some(t) = outcome.trajectories_csv() {
        files.push((TRAJECTORIES_FILE, t));
    }
    if outcome.config.output.plot_script {
        files.push((PLOT_FILE, plot_script().to_string()));
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)?;
    let leaf = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let staging = parent.join(format!(".{leaf}.partial-{}", std::process::id()));
    let result = write_files(&staging, &files).and_then(|_| {
        if dir.exists() {
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::rename(&staging, dir)?;
        Ok(())
    });
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&staging);
    }
    result
}

/// Computes and writes a run; returns the outcome and the directory used.
pub fn run(cfg: &RunConfig, jobs: usize, cli_out: Option<&Path>) -> Result<(RunOutcome, PathBuf)> {
    let dir = resolve_output_dir(cfg, cli_out);
    let outcome = compute(cfg, jobs)?;
    write_outcome(&outcome, &dir)?;
    Ok((outcome, dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::{parse_config, RunMode};
    use crate::scenarios::ScenarioName;

    fn quick(name: ScenarioName, extra: &str) -> RunConfig {
        parse_config(&format!("scenario = \"{name}\"\n{extra}")).unwrap()
    }

    #[test]
    fn header_pairs_free_and_constrained_columns() {
        let cfg = quick(
            ScenarioName::Dephasing,
            "[numerics]\nt_end = 0.2\ndt = 0.01\noutput_stride = 5\n[mcwf]\nn_traj = 8\n",
        );
        let out = compute(&cfg, 1).unwrap();
        assert_eq!(
            out.table.header(),
            ["t", "heat_free", "heat_constrained", "heat_constrained_stderr", "heat_analytic_free"]
        );
        assert_eq!(out.table.times.len(), 5);
    }

    #[test]
    fn mcwf_free_solver_adds_stderr() {
        let cfg = quick(
            ScenarioName::Dephasing,
            "mode = \"free\"\n[numerics]\nt_end = 0.1\nfree_solver = \"mcwf\"\n[mcwf]\nn_traj = 4\n",
        );
        let out = compute(&cfg, 1).unwrap();
        assert_eq!(out.table.header(), ["t", "heat_free", "heat_free_stderr", "heat_analytic_free"]);
        assert_eq!(out.stochastic.len(), 1);
    }

    #[test]
    fn free_dephasing_heat_vanishes() {
        let cfg = quick(ScenarioName::Dephasing, "mode = \"free\"\n");
        let out = compute(&cfg, 1).unwrap();
        assert!(out.table.column("heat_free").unwrap().iter().all(|q| q.abs() < 1e-10));
    }

    #[test]
    fn swap_columns_match_closed_forms() {
        let cfg = quick(ScenarioName::SwapExchange, "[numerics]\nt_end = 3.0\n");
        let out = compute(&cfg, 1).unwrap();
        for mode in ["free", "constrained"] {
            let num = out.table.column(&format!("heat_{mode}")).unwrap();
            let ana = out.table.column(&format!("heat_analytic_{mode}")).unwrap();
            let err = num.iter().zip(ana).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "{mode}: {err}");
        }
    }

    #[test]
    fn entropy_columns_have_nan_stderr() {
        let cfg = quick(
            ScenarioName::CorrelatedDecay,
            "mode = \"constrained\"\nobservables = [\"entropy\", \"bell_overlap\"]\n[numerics]\nt_end = 0.2\n[mcwf]\nn_traj = 16\n",
        );
        let out = compute(&cfg, 1).unwrap();
        assert!(out.table.column("entropy_constrained_stderr").unwrap().iter().all(|s| s.is_nan()));
        assert!(out.table.column("bell_overlap_constrained_stderr").unwrap().iter().all(|s| s.is_finite()));
    }

    #[test]
    fn closed_free_run_has_no_relative_entropy_reference() {
        let cfg = quick(
            ScenarioName::Battery,
            "mode = \"free\"\nobservables = [\"relative_entropy\", \"entropy\"]\n[numerics]\nt_end = 0.5\n",
        );
        let out = compute(&cfg, 1).unwrap();
        assert!(out.table.column("relative_entropy_free").unwrap().iter().all(|s| s.is_nan()));
        assert!(out.table.column("entropy_free").unwrap().iter().all(|s| s.abs() < 1e-8));
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = quick(ScenarioName::Dephasing, "[mcwf]\nn_traj = 10\nseed = 3\n");
        let ov = Overrides { seed: Some(9), full: true, ..Default::default() };
        let r = apply_overrides(&cfg, &ov).unwrap();
        assert_eq!(r.mcwf.seed, 9);
        assert_eq!(r.mcwf.n_traj, ScenarioName::Dephasing.run_defaults().full_n_traj);
        let r = apply_overrides(&cfg, &Overrides { n_traj: Some(0), ..Default::default() });
        assert!(r.is_err());
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = quick(ScenarioName::Dephasing, "");
        assert_eq!(resolve_output_dir(&cfg, Some(Path::new("x"))), PathBuf::from("x"));
        if std::env::var_os(OUT_DIR_ENV).is_none() {
            assert_eq!(resolve_output_dir(&cfg, None), PathBuf::from("runs/dephasing"));
            cfg.output.dir = Some(PathBuf::from("y"));
            assert_eq!(resolve_output_dir(&cfg, None), PathBuf::from("y"));
        }
    }

    #[test]
    fn writes_are_atomic_and_refuse_foreign_dirs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = quick(ScenarioName::Battery, "mode = \"both\"\n[numerics]\nt_end = 0.1\n[output]\ntrajectories = 0\n");
        let out = compute(&cfg, 1).unwrap();
        let dir = tmp.path().join("run");
        write_outcome(&out, &dir).unwrap();
        assert!(dir.join(RESULTS_FILE).is_file());
        assert!(dir.join(PLOT_FILE).is_file());
        write_outcome(&out, &dir).unwrap();
        let foreign = tmp.path().join("foreign");
        std::fs::create_dir(&foreign).unwrap();
        std::fs::write(foreign.join("notes.txt"), "keep").unwrap();
        assert!(write_outcome(&out, &foreign).is_err());
        assert!(foreign.join("notes.txt").is_file());
        let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("partial"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn trajectory_dump_has_one_block_per_kept_trajectory() {
        let cfg = quick(
            ScenarioName::CorrelatedDecay,
            "mode = \"constrained\"\n[numerics]\nt_end = 0.1\n[mcwf]\nn_traj = 5\n[output]\ntrajectories = 2\n",
        );
        let out = compute(&cfg, 1).unwrap();
        let text = out.trajectories_csv().unwrap();
        let rows = out.table.times.len();
        assert_eq!(text.lines().count(), 1 + 2 * rows);
        assert_eq!(cfg.mode, RunMode::Constrained);
    }
}
