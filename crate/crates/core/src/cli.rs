//! Run configuration, result files and the command implementations behind
//! the `rbrhc` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::Algorithm;
use crate::error::{Error, Result};
use crate::scenario::{builtin, builtin_scenarios, Scenario, ScenarioSpec};
use crate::sim::{run_monte_carlo, MonteCarloRun, MonteCarloSummary, SimMode};
use crate::verify::{self, Check};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "RBRHC_OUT_DIR";
/// Output directory when neither flag, environment nor config name one.
pub const DEFAULT_OUT_DIR: &str = "rbrhc-out";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const DEFAULT_TRIALS: usize = 100;
const DEFAULT_MISMATCH_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Guarantee,
    ModelMismatch,
}

/// A Monte Carlo run. Unset overrides fall back to the scenario's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin scenario name, or a scenario file path relative to the config.
    pub scenario: String,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Episode length T.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Planning horizon N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_horizon: Option<usize>,
    /// Number of seeded trials M.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_res: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_res: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disks: Option<usize>,
    #[serde(default)]
    pub mode: ModeName,
    /// Factor on the true agent deviations in model-mismatch mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch_scale: Option<f64>,
}

const CONFIG_KEYS: &[&str] = &[
    "scenario",
    "algorithms",
    "rho0",
    "delta",
    "horizon",
    "plan_horizon",
    "trials",
    "seed",
    "out",
    "s_res",
    "v_res",
    "disks",
    "mode",
    "mismatch_scale",
];

const SCENARIO_KEYS: &[&str] = &[
    "name",
    "description",
    "dt",
    "horizon",
    "plan_horizon",
    "rho0",
    "delta",
    "planning",
    "noise",
    "ego",
    "agents",
    "s_res",
    "v_res",
    "v_max",
    "u_stop",
    "accels",
    "disks",
    "ego_process_std",
    "observation_std",
    "waypoints",
    "footprint",
    "s0",
    "v0",
    "s0_spread",
    "goal",
    "patterns",
    "weight",
    "start_s",
    "speed",
    "speed_changes",
    "stop_at_s",
    "along_std",
    "across_std",
    "length",
    "width",
    "offset",
];

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

impl RunConfig {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            algorithms: all_algorithms(),
            rho0: None,
            delta: None,
            horizon: None,
            plan_horizon: None,
            trials: DEFAULT_TRIALS,
            seed: 0,
            out: None,
            s_res: None,
            v_res: None,
            disks: None,
            mode: ModeName::Guarantee,
            mismatch_scale: None,
        }
    }

    /// TOML text of the config; parses back to an equal value.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sim_mode(&self) -> SimMode {
        match self.mode {
            ModeName::Guarantee => SimMode::Guarantee,
            ModeName::ModelMismatch => SimMode::ModelMismatch {
                scale: self.mismatch_scale.unwrap_or(DEFAULT_MISMATCH_SCALE),
            },
        }
    }

    /// Checks the config-level invariants, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let prob = |field: &str, v: Option<f64>| match v {
            Some(x) if !(0.0..=1.0).contains(&x) => Err(Error::config(field, format!("must lie in [0, 1], got {x}"))),
            _ => Ok(()),
        };
        prob("rho0", self.rho0)?;
        prob("delta", self.delta)?;
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "at least one algorithm is required"));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(Error::config("algorithms", "algorithms must not repeat"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "at least one trial is required"));
        }
        if self.horizon == Some(0) {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.plan_horizon == Some(0) {
            return Err(Error::config("plan_horizon", "must be at least 1"));
        }
        if let (Some(n), Some(t)) = (self.plan_horizon, self.horizon) {
            if n > t {
                return Err(Error::config("plan_horizon", format!("N = {n} exceeds T = {t}")));
            }
        }
        for (field, v) in [("s_res", self.s_res), ("v_res", self.v_res), ("mismatch_scale", self.mismatch_scale)] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::config(field, format!("must be positive, got {x}")));
                }
            }
        }
        if self.disks == Some(0) {
            return Err(Error::config("disks", "must be at least 1"));
        }
        if self.mismatch_scale.is_some() && self.mode != ModeName::ModelMismatch {
            return Err(Error::config("mismatch_scale", "only valid with mode = \"model-mismatch\""));
        }
        Ok(())
    }

    /// Applies the overrides to a scenario spec.
    pub fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(v) = self.rho0 {
            spec.rho0 = v;
        }
        if let Some(v) = self.delta {
            spec.delta = v;
        }
        if let Some(v) = self.horizon {
            spec.horizon = v;
        }
        if let Some(v) = self.plan_horizon {
            spec.plan_horizon = v;
        }
        if let Some(v) = self.s_res {
            spec.planning.s_res = v;
        }
        if let Some(v) = self.v_res {
            spec.planning.v_res = v;
        }
        if let Some(v) = self.disks {
            spec.planning.disks = v;
        }
    }

    /// The config with every default made explicit from `spec`.
    pub fn resolved(&self, spec: &ScenarioSpec) -> Self {
        Self {
            rho0: Some(spec.rho0),
            delta: Some(spec.delta),
            horizon: Some(spec.horizon),
            plan_horizon: Some(spec.plan_horizon),
            s_res: Some(spec.planning.s_res),
            v_res: Some(spec.planning.v_res),
            disks: Some(spec.planning.disks),
            mismatch_scale: match self.mode {
                ModeName::Guarantee => None,
                ModeName::ModelMismatch => Some(self.mismatch_scale.unwrap_or(DEFAULT_MISMATCH_SCALE)),
            },
            ..self.clone()
        }
    }
}

/// Turns a TOML error into a config error, adding a suggestion for
/// misspelled keys.
fn toml_error(source: &str, err: toml::de::Error, known: &[&str]) -> Error {
    let message = err.to_string();
    let unknown = message
        .split("unknown field `")
        .nth(1)
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    match unknown {
        Some(key) => {
            let best = known
                .iter()
                .map(|k| (strsim::jaro_winkler(&key, k), *k))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .filter(|(score, _)| *score > 0.7);
            let hint = best.map(|(_, k)| format!("\ndid you mean `{k}`?")).unwrap_or_default();
            Error::Config {
                field: Some(key),
                message: format!("{source}: {}{hint}", message.trim_end()),
            }
        }
        None => Error::Config {
            field: None,
            message: format!("{source}: {}", message.trim_end()),
        },
    }
}

/// Parses config text (strict: unknown keys are rejected).
pub fn parse_config_str(text: &str, source: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(source, e, CONFIG_KEYS))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a scenario file (strict).
pub fn parse_scenario_str(text: &str, source: &str) -> Result<ScenarioSpec> {
    toml::from_str(text).map_err(|e| toml_error(source, e, SCENARIO_KEYS))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Short builtin aliases.
pub fn builtin_alias(name: &str) -> Option<ScenarioSpec> {
    match name {
        "exp1" => builtin("exp1_tjunction"),
        "exp2" => builtin("exp2_three_vehicle"),
        other => builtin(other),
    }
}

/// Resolves a builtin name or a scenario file path (relative to `base`).
pub fn load_scenario_spec(name: &str, base: &Path) -> Result<ScenarioSpec> {
    if let Some(spec) = builtin_alias(name) {
        return Ok(spec);
    }
    let path = base.join(name);
    if path.is_file() {
        return parse_scenario_str(&read(&path)?, &path.display().to_string());
    }
    let names: Vec<String> = builtin_scenarios().into_iter().map(|s| s.name).collect();
    let hint = names
        .iter()
        .map(|k| (strsim::jaro_winkler(name, k), k))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(score, _)| *score > 0.7)
        .map(|(_, k)| format!("; did you mean `{k}`?"))
        .unwrap_or_default();
    Err(Error::config(
        "scenario",
        format!("`{name}` is neither a builtin ({}) nor a file{hint}", names.join(", ")),
    ))
}

/// A config together with its built scenario.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    /// The config with every default made explicit.
    pub config: RunConfig,
    pub scenario: Scenario,
}

/// Applies the overrides and builds the scenario.
pub fn resolve(config: &RunConfig, base: &Path) -> Result<ResolvedRun> {
    config.validate()?;
    let mut spec = load_scenario_spec(&config.scenario, base)?;
    config.apply(&mut spec);
    let scenario = spec.build()?;
    Ok(ResolvedRun {
        config: config.resolved(&scenario.spec),
        scenario,
    })
}

/// Reads, validates and resolves a config file.
pub fn parse_config(path: &Path) -> Result<ResolvedRun> {
    let cfg = parse_config_str(&read(path)?, &path.display().to_string())?;
    resolve(&cfg, path.parent().unwrap_or(Path::new(".")))
}

/// Everything written to the output directory's manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub scenario: &'a ScenarioSpec,
    pub files: Vec<&'static str>,
    /// `(seed, message)` of trials that raised an error.
    pub trial_errors: &'a [(u64, String)],
}

pub const TRIALS_CSV: &str = "trials.csv";
pub const STEPS_CSV: &str = "steps.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_trials(path: &Path, run: &MonteCarloRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["seed", "algorithm", "collided", "cost", "steps", "reached_goal"])
        .map_err(|e| csv_error(path, e))?;
    for t in &run.trials {
        w.write_record([
            t.seed.to_string(),
            t.algorithm.to_string(),
            t.collided.to_string(),
            t.cost.to_string(),
            t.steps.to_string(),
            t.trace.reached_goal.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_steps(path: &Path, run: &MonteCarloRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "seed",
        "algorithm",
        "step",
        "rho",
        "planned_risk",
        "booked_risk",
        "min_agent_distance",
        "control",
        "action",
        "s",
        "v",
        "collided",
    ])
    .map_err(|e| csv_error(path, e))?;
    for t in &run.trials {
        for s in &t.trace.steps {
            let action = match s.action {
                crate::controller::ActionKind::Planned => "planned",
                crate::controller::ActionKind::EmergencyStop => "emergency-stop",
                crate::controller::ActionKind::NoOp => "no-op",
            };
            w.write_record([
                t.seed.to_string(),
                t.algorithm.to_string(),
                s.step.to_string(),
                s.rho.to_string(),
                s.planned_risk.map(|r| r.to_string()).unwrap_or_default(),
                s.booked_risk.to_string(),
                s.min_agent_distance.to_string(),
                s.control.to_string(),
                action.to_string(),
                s.state.s.to_string(),
                s.state.v.to_string(),
                s.collided.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the Monte Carlo experiment and writes `trials.csv`, `steps.csv`,
/// `summary.json` and `manifest.json` into `out_dir`. Output bytes depend
/// only on the resolved config and the crate version.
pub fn cmd_run(run: &ResolvedRun, out_dir: &Path) -> Result<MonteCarloRun> {
    let cfg = &run.config;
    // the output location is not part of the experiment
    let recorded = RunConfig { out: None, ..cfg.clone() };
    let result = run_monte_carlo(
        &run.scenario,
        &cfg.algorithms,
        &run.scenario.irb,
        cfg.trials,
        cfg.seed,
        cfg.sim_mode(),
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_trials(&out_dir.join(TRIALS_CSV), &result)?;
    write_steps(&out_dir.join(STEPS_CSV), &result)?;
    write_json(&out_dir.join(SUMMARY_JSON), &result.summary)?;
    write_json(
        &out_dir.join(MANIFEST_JSON),
        &Manifest {
            version: VERSION,
            config: &recorded,
            scenario: &run.scenario.spec,
            files: vec![TRIALS_CSV, STEPS_CSV, SUMMARY_JSON, MANIFEST_JSON],
            trial_errors: &result.errors,
        },
    )?;
    Ok(result)
}

/// Human-readable table of a summary.
pub fn format_summary(summary: &MonteCarloSummary) -> String {
    let mut s = format!(
        "scenario {}  trials {}  seed {}  bound rho0 + delta T = {}\n",
        summary.scenario, summary.trials, summary.base_seed, summary.interval_bound
    );
    s.push_str("algorithm  collisions  rate     wilson95          mean cost  goal\n");
    for a in &summary.algorithms {
        s.push_str(&format!(
            "{:<10} {:>10}  {:<7.4}  [{:.4}, {:.4}]  {:>9.3}  {:.3}\n",
            a.algorithm.name(),
            a.collisions,
            a.collision_rate,
            a.wilson_low,
            a.wilson_high,
            a.mean_cost,
            a.goal_rate
        ));
    }
    s
}

/// Runs the bundled checks, printing a pass/fail table; true iff all pass.
pub fn cmd_verify(out: &mut impl Write) -> std::io::Result<bool> {
    writeln!(out, "racetrack (interval bound rho0 = 0.1, delta = 0, T = N = 2)")?;
    match verify::racetrack_table() {
        Ok(rows) => {
            for r in rows {
                writeln!(out, "  {:<22} exact risk {:<6} bound {}", r.policy, r.exact_risk, r.interval_bound)?;
            }
        }
        Err(e) => writeln!(out, "  racetrack enumeration failed: {e}")?,
    }
    let checks: Vec<Check> = verify::run_all();
    for c in &checks {
        writeln!(out, "{} {:<34} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    Ok(checks.iter().all(|c| c.passed))
}

/// One line per builtin scenario.
pub fn scenarios_list(out: &mut impl Write) -> std::io::Result<()> {
    for s in builtin_scenarios() {
        writeln!(
            out,
            "{:<20} T={:<3} N={:<3} rho0={:<5} delta={:<4} agents={}  {}",
            s.name,
            s.horizon,
            s.plan_horizon,
            s.rho0,
            s.delta,
            s.agents.len(),
            s.description
        )?;
    }
    Ok(())
}

/// Exit status for an error: 2 for config problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        "config" | "io" => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Machine-readable error document.
pub fn error_json(err: &Error) -> String {
    let field = match err {
        Error::Config { field, .. } => field.clone(),
        _ => None,
    };
    serde_json::json!({
        "error": {
            "kind": err.kind(),
            "field": field,
            "message": err.to_string(),
        }
    })
    .to_string()
}

/// Output directory: explicit choice, then the config's `out`, then
/// [`DEFAULT_OUT_DIR`].
pub fn output_dir(explicit: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    explicit
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
