//! Run configuration: TOML text in, validated [`RunConfig`] out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::closed::TimeGrid;
use crate::open::{JumpRule, McwfConfig};
use crate::scenarios::{ScenarioName, ScenarioSpec};
use crate::{Error, Mode, Result};

/// Which dynamics to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Free,
    Constrained,
    Both,
}

impl RunMode {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            RunMode::Free => vec![Mode::Free],
            RunMode::Constrained => vec![Mode::Constrained],
            RunMode::Both => vec![Mode::Free, Mode::Constrained],
        }
    }
}

/// Solver for the free dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeSolver {
    /// Dense Lindblad integration of the joint density matrix.
    Dense,
    /// Unconstrained quantum-jump ensemble.
    Mcwf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    Populations,
    Heat,
    ConstrainedHeat,
    BellOverlap,
    Entropy,
    RelativeEntropy,
    EntropyProduction,
    TimeAveragedHeat,
    BlochVectors,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 9] = [
        ObservableKind::Populations,
        ObservableKind::Heat,
        ObservableKind::ConstrainedHeat,
        ObservableKind::BellOverlap,
        ObservableKind::Entropy,
        ObservableKind::RelativeEntropy,
        ObservableKind::EntropyProduction,
        ObservableKind::TimeAveragedHeat,
        ObservableKind::BlochVectors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObservableKind::Populations => "populations",
            ObservableKind::Heat => "heat",
            ObservableKind::ConstrainedHeat => "constrained_heat",
            ObservableKind::BellOverlap => "bell_overlap",
            ObservableKind::Entropy => "entropy",
            ObservableKind::RelativeEntropy => "relative_entropy",
            ObservableKind::EntropyProduction => "entropy_production",
            ObservableKind::TimeAveragedHeat => "time_averaged_heat",
            ObservableKind::BlochVectors => "bloch_vectors",
        }
    }

    /// Whether the value is a nonlinear functional of the averaged state.
    pub fn nonlinear(self) -> bool {
        matches!(
            self,
            ObservableKind::Entropy | ObservableKind::RelativeEntropy | ObservableKind::EntropyProduction
        )
    }
}

impl fmt::Display for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observables written when the config does not list any.
pub fn default_observables(name: ScenarioName) -> Vec<ObservableKind> {
    use ObservableKind::*;
    match name {
        ScenarioName::Battery => vec![BlochVectors, Heat],
        ScenarioName::RefrigeratorLocalized | ScenarioName::RefrigeratorDelocalized => vec![Populations, Heat],
        ScenarioName::Dephasing => vec![Heat],
        ScenarioName::SwapExchange => vec![Heat, TimeAveragedHeat],
        ScenarioName::CorrelatedDecay => vec![BellOverlap, Populations],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Numerics {
    pub dt: f64,
    pub t_end: f64,
    pub output_stride: usize,
    pub free_solver: FreeSolver,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McwfSettings {
    pub n_traj: usize,
    pub seed: u64,
    pub lambda_factor: f64,
    pub jump_rule: JumpRule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    /// Number of trajectories per stochastic run dumped in full.
    pub trajectories: usize,
    pub plot_script: bool,
}

/// Fully resolved and validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub mode: RunMode,
    pub observables: Vec<ObservableKind>,
    pub numerics: Numerics,
    pub mcwf: McwfSettings,
    pub output: OutputSettings,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<ScenarioName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<RunMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    observables: Option<Vec<ObservableKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parameters: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    numerics: Option<RawNumerics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mcwf: Option<RawMcwf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_stride: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    free_solver: Option<FreeSolver>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMcwf {
    #[serde(skip_serializing_if = "Option::is_none")]
    n_traj: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jump_rule: Option<JumpRule>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectories: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plot_script: Option<bool>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn count(key: &str, v: i64, min: i64) -> Result<usize> {
    if v < min {
        return Err(config_err(format!("`{key}` must be ≥ {min}, got {v}")));
    }
    Ok(v as usize)
}

/// Parses and validates a TOML run configuration, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| config_err(e.message().to_string()))?;
    let name = raw.scenario.ok_or_else(|| config_err("missing key `scenario`"))?;
    let defaults = name.run_defaults();

    let mut scenario = ScenarioSpec::new(name);
    for (k, v) in raw.parameters.unwrap_or_default() {
        if scenario.set(&k, v).is_err() {
            return Err(config_err(format!("unknown key `parameters.{k}` for scenario {name}")));
        }
    }

    let n = raw.numerics.unwrap_or_default();
    let numerics = Numerics {
        dt: n.dt.unwrap_or(defaults.dt),
        t_end: n.t_end.unwrap_or(defaults.t_end),
        output_stride: match n.output_stride {
            Some(s) => count("numerics.output_stride", s, 1)?,
            None => defaults.output_stride,
        },
        free_solver: n.free_solver.unwrap_or(FreeSolver::Dense),
    };

    let m = raw.mcwf.unwrap_or_default();
    let mcwf = McwfSettings {
        n_traj: match m.n_traj {
            Some(v) => count("mcwf.n_traj", v, 1)?,
            None => defaults.n_traj,
        },
        seed: match m.seed {
            Some(v) => count("mcwf.seed", v, 0)? as u64,
            None => 0,
        },
        lambda_factor: m.lambda_factor.unwrap_or(McwfConfig::default().lambda_factor),
        jump_rule: m.jump_rule.unwrap_or(JumpRule::Segment),
    };

    let o = raw.output.unwrap_or_default();
    let output = OutputSettings {
        dir: o.dir,
        trajectories: match o.trajectories {
            Some(v) => count("output.trajectories", v, 0)?,
            None => 0,
        },
        plot_script: o.plot_script.unwrap_or(true),
    };

    let observables = match raw.observables {
        Some(list) => {
            let mut seen = Vec::new();
            for o in list {
                if seen.contains(&o) {
                    return Err(config_err(format!("observable `{o}` listed twice")));
                }
                seen.push(o);
            }
            seen
        }
        None => default_observables(name),
    };

    let cfg = RunConfig {
        scenario,
        mode: raw.mode.unwrap_or(RunMode::Both),
        observables,
        numerics,
        mcwf,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Default configuration of a scenario.
    pub fn for_scenario(name: ScenarioName) -> Self {
        parse_config(&format!("scenario = \"{name}\"")).expect("scenario defaults are valid")
    }

    /// Checks numerics and builds the scenario once.
    pub fn validate(&self) -> Result<()> {
        let n = &self.numerics;
        if !(n.dt > 0.0) || !n.dt.is_finite() {
            return Err(config_err(format!("`numerics.dt` must be > 0, got {}", n.dt)));
        }
        if !(n.t_end > n.dt) || !n.t_end.is_finite() {
            return Err(config_err(format!(
                "`numerics.t_end` must exceed `numerics.dt`, got t_end = {} and dt = {}",
                n.t_end, n.dt
            )));
        }
        if n.output_stride == 0 {
            return Err(config_err("`numerics.output_stride` must be ≥ 1"));
        }
        if self.mcwf.n_traj == 0 {
            return Err(config_err("`mcwf.n_traj` must be ≥ 1"));
        }
        if self.mcwf.seed > i64::MAX as u64 {
            return Err(config_err(format!("`mcwf.seed` must be ≤ {}", i64::MAX)));
        }
        let lf = self.mcwf.lambda_factor;
        if !(lf >= 0.0) || !lf.is_finite() {
            return Err(config_err(format!("`mcwf.lambda_factor` must be ≥ 0, got {lf}")));
        }
        TimeGrid::new(n.dt, n.t_end, n.output_stride).map_err(|e| config_err(format!("`numerics`: {e}")))?;
        let sc = self
            .scenario
            .build()
            .map_err(|e| config_err(format!("`parameters` for scenario {}: {e}", self.scenario.name)))?;
        if self.observables.contains(&ObservableKind::BellOverlap) && sc.layout().dims() != [2, 2] {
            return Err(config_err(format!(
                "observable `bell_overlap` needs two qubits; scenario {} has {} subsystems",
                self.scenario.name,
                sc.layout().parties()
            )));
        }
        Ok(())
    }

    /// Quantum-jump settings for `mode`.
    pub fn mcwf_config(&self, mode: Mode) -> McwfConfig {
        McwfConfig {
            dt: self.numerics.dt,
            t_end: self.numerics.t_end,
            n_traj: self.mcwf.n_traj,
            seed: self.mcwf.seed,
            lambda_factor: self.mcwf.lambda_factor,
            jump_rule: self.mcwf.jump_rule,
            output_stride: self.numerics.output_stride,
            mode,
        }
    }

    /// Canonical TOML with every key spelled out; parses back to `self`.
    pub fn to_toml(&self) -> String {
        let raw = RawConfig {
            scenario: Some(self.scenario.name),
            mode: Some(self.mode),
            observables: Some(self.observables.clone()),
            parameters: Some(self.scenario.params.clone()),
            numerics: Some(RawNumerics {
                dt: Some(self.numerics.dt),
                t_end: Some(self.numerics.t_end),
                output_stride: Some(self.numerics.output_stride as i64),
                free_solver: Some(self.numerics.free_solver),
            }),
            mcwf: Some(RawMcwf {
                n_traj: Some(self.mcwf.n_traj as i64),
                seed: Some(self.mcwf.seed as i64),
                lambda_factor: Some(self.mcwf.lambda_factor),
                jump_rule: Some(self.mcwf.jump_rule),
            }),
            output: Some(RawOutput {
                dir: self.output.dir.clone(),
                trajectories: Some(self.output.trajectories as i64),
                plot_script: Some(self.output.plot_script),
            }),
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

/// Human-readable description of every accepted key.
pub fn schema_text() -> String {
    let mut s = String::new();
    s.push_str("# Run configuration (TOML). Unknown keys are rejected.\n\n");
    s.push_str("scenario = <string>            # required; one of:");
    for n in ScenarioName::ALL {
        s.push_str(&format!(" {n}"));
    }
    s.push('\n');
    s.push_str("mode = \"both\"                  # free | constrained | both\n");
    s.push_str("observables = [...]            # subset of:");
    for o in ObservableKind::ALL {
        s.push_str(&format!(" {o}"));
    }
    s.push_str("\n                               # default depends on the scenario\n\n");
    s.push_str("[parameters]                   # scenario parameters, see `scenarios`\n\n");
    s.push_str("[numerics]\n");
    s.push_str("dt = <float>                   # > 0, scenario default\n");
    s.push_str("t_end = <float>                # > dt, scenario default\n");
    s.push_str("output_stride = <int>          # steps between output rows, ≥ 1\n");
    s.push_str("free_solver = \"dense\"          # dense | mcwf\n\n");
    s.push_str("[mcwf]\n");
    s.push_str("n_traj = <int>                 # ≥ 1, scenario default\n");
    s.push_str("seed = 0                       # 0 ≤ seed ≤ 2^63 - 1\n");
    s.push_str("lambda_factor = 10.0           # shift λ_k = lambda_factor · ‖L_k‖, ≥ 0\n");
    s.push_str("jump_rule = \"segment\"          # segment | per_step\n\n");
    s.push_str("[output]\n");
    s.push_str("dir = <path>                   # default runs/<scenario>\n");
    s.push_str("trajectories = 0               # trajectories per run dumped to trajectories.csv\n");
    s.push_str("plot_script = true             # write plot.py next to the table\n");
    s
}
