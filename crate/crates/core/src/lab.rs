//! Experiment configs, command dispatch and report emission.
//!
//! A run reads one JSON config, validates it into an [`ExperimentConfig`]
//! (collecting every problem with its JSON-pointer path), dispatches to the
//! library, and writes `report.json` plus any CSV series into an output
//! directory. Reports are deterministic given the config except for
//! `wall_clock_seconds`.

use std::cell::Cell as StreamCounter;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::constructions::{
    build_uk, extract_eta_sets, simulate_orbit, synthesize_finite_horizon, EtaStatus, OrbitSeries,
    SynthesisOutcome,
};
use crate::criteria::{
    check_theorem31_condition2, check_theorem_a, default_suite, probe_d_transitivity,
    verify_dhc_criterion, DCriterionReport, DDecision, DhcMode, OrderedPair, ProbeOutcome, Verdict,
    WitnessSchedule, RELAXATION_NOTE,
};
use crate::error::Error;
use crate::funcspace::{LatticeFunction, NormParam};
use crate::group::{
    aperiodicity_horizon, haar_measure, require_aperiodic, Aperiodicity, CompactRegion, GroupModel,
    GroupPoint,
};
use crate::sampling::{random_function, rng_for};
use crate::translation::OperatorSpec;
use crate::weights::WeightSpec;

pub const SCHEMA_VERSION: &str = "v1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Aperiodicity,
    CheckHc,
    CheckDhc,
    Dcriterion,
    Probe,
    Construct,
    Extract,
    Synthesize,
    Orbit,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Aperiodicity,
        Command::CheckHc,
        Command::CheckDhc,
        Command::Dcriterion,
        Command::Probe,
        Command::Construct,
        Command::Extract,
        Command::Synthesize,
        Command::Orbit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Aperiodicity => "aperiodicity",
            Command::CheckHc => "check-hc",
            Command::CheckDhc => "check-dhc",
            Command::Dcriterion => "dcriterion",
            Command::Probe => "probe",
            Command::Construct => "construct",
            Command::Extract => "extract",
            Command::Synthesize => "synthesize",
            Command::Orbit => "orbit",
        }
    }

    pub fn from_name(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Commands whose underlying statements need an aperiodic element.
    fn needs_aperiodic(self) -> bool {
        !matches!(
            self,
            Command::Aperiodicity | Command::Construct | Command::Orbit
        )
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Paper,
    OneDirectional,
}

impl ModeName {
    pub fn from_name(s: &str) -> Option<ModeName> {
        match s {
            "paper" => Some(ModeName::Paper),
            "one-directional" => Some(ModeName::OneDirectional),
            _ => None,
        }
    }
}

/// A finite region: an integer interval, a lattice box, or explicit cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Interval([i64; 2]),
    Box { lo: Vec<i64>, hi: Vec<i64> },
    Cells(Vec<Vec<i64>>),
}

impl RegionSpec {
    pub fn resolve(&self, model: &GroupModel) -> Result<CompactRegion, String> {
        match self {
            RegionSpec::Interval([lo, hi]) => {
                if model.dim() != 1 {
                    return Err(format!(
                        "interval needs a one-dimensional model, got dimension {}",
                        model.dim()
                    ));
                }
                (*lo..=*hi)
                    .map(|i| model.point(vec![i]))
                    .collect::<crate::Result<CompactRegion>>()
                    .map_err(|e| e.to_string())
            }
            RegionSpec::Box { lo, hi } => {
                let b = CompactRegion::lattice_box(lo, hi).map_err(|e| e.to_string())?;
                b.iter()
                    .map(|x| model.point(x.coords().to_vec()))
                    .collect::<crate::Result<CompactRegion>>()
                    .map_err(|e| e.to_string())
            }
            RegionSpec::Cells(cells) => cells
                .iter()
                .map(|c| model.point(c.clone()))
                .collect::<crate::Result<CompactRegion>>()
                .map_err(|e| e.to_string()),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// A compactly supported test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Zero,
    Points {
        points: Vec<(Vec<i64>, f64)>,
    },
    Delta {
        at: Vec<i64>,
        #[serde(default = "one")]
        value: f64,
    },
    Indicator {
        region: RegionSpec,
        #[serde(default = "one")]
        height: f64,
    },
    /// Values uniform in `[-1, 1]` on a random subset of `region`; needs `seed`.
    Random {
        region: RegionSpec,
        #[serde(default = "one")]
        density: f64,
    },
    /// The vector `u` built from `f` and `targets` (one per weight) at power `n`
    /// on `region`, with the config's operators.
    Uk {
        f: Box<FunctionSpec>,
        targets: Vec<FunctionSpec>,
        n: u64,
        region: RegionSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SuiteSpec {
    /// `{δ_x : x ∈ [-b, b]} ∪ {χ_[-b, b]}` for the forward suite and every operator.
    Default { b: i64 },
    Explicit {
        x0: Vec<FunctionSpec>,
        xl: Vec<Vec<FunctionSpec>>,
    },
}

/// Raw schedule fields; after validation all four are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deficit: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
}

/// A validated, normalized experiment. Serializing and re-validating it gives
/// the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub model: GroupModel,
    pub a: GroupPoint,
    pub p: NormParam,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<WeightSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub powers: Vec<u64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_seq: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<FunctionSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuples: Option<Vec<Vec<FunctionSpec>>>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    pub e: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSpec>,
}

const KNOWN_KEYS: [&str; 26] = [
    "command",
    "model",
    "a",
    "p",
    "weights",
    "powers",
    "K",
    "schedule",
    "mode",
    "pairs",
    "tolerance",
    "seed",
    "n",
    "n_max",
    "n_seq",
    "eps",
    "eta",
    "m",
    "budget",
    "f",
    "u",
    "targets",
    "tuples",
    "E",
    "suite",
    "description",
];

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// One validation problem, located by JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "/"
        } else {
            &self.path
        };
        write!(f, "{path}: {}", self.message)
    }
}

#[derive(Default)]
struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn missing(&mut self, key: &str, command: Command) {
        self.push(format!("/{key}"), format!("required by {command}"));
    }
}

fn parse_at<T: DeserializeOwned>(v: &Value, path: &str, issues: &mut Issues) -> Option<T> {
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            issues.push(path, e.to_string());
            None
        }
    }
}

fn field<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    key: &str,
    issues: &mut Issues,
) -> Option<T> {
    obj.get(key)
        .and_then(|v| parse_at(v, &format!("/{key}"), issues))
}

/// Parses a list element by element so each bad entry gets its own path.
fn list_field<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    key: &str,
    issues: &mut Issues,
) -> Option<Vec<T>> {
    let v = obj.get(key)?;
    let Some(items) = v.as_array() else {
        issues.push(format!("/{key}"), "expected an array");
        return None;
    };
    let before = issues.0.len();
    let parsed: Vec<Option<T>> = items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_at(item, &format!("/{key}/{i}"), issues))
        .collect();
    (issues.0.len() == before).then(|| parsed.into_iter().flatten().collect())
}

/// Command-line settings that override or complete the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub mode: Option<ModeName>,
    pub seed: Option<u64>,
}

/// Validates raw JSON into a normalized config, reporting every issue found.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    validate_with(raw, &Overrides::default())
}

pub fn validate_with(
    raw: &str,
    overrides: &Overrides,
) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let value: Value = serde_json::from_str(raw).map_err(|e| {
        vec![ConfigIssue {
            path: String::new(),
            message: format!("malformed JSON: {e}"),
        }]
    })?;
    validate_value(&value, overrides)
}

pub fn validate_value(
    value: &Value,
    overrides: &Overrides,
) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let mut issues = Issues::default();
    let Some(obj) = value.as_object() else {
        return Err(vec![ConfigIssue {
            path: String::new(),
            message: "config must be a JSON object".into(),
        }]);
    };
    for key in obj.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            issues.push(format!("/{key}"), "unknown field");
        }
    }

    let file_command: Option<Command> = field(obj, "command", &mut issues);
    let command = match (overrides.command, file_command) {
        (Some(c), Some(f)) if c != f => {
            issues.push("/command", format!("config says {f} but {c} was requested"));
            Some(c)
        }
        (Some(c), _) => Some(c),
        (None, Some(f)) => Some(f),
        (None, None) => {
            if !obj.contains_key("command") {
                issues.push("/command", "missing command");
            }
            None
        }
    };

    let model: Option<GroupModel> = match field::<GroupModel>(obj, "model", &mut issues) {
        Some(m) => match m.validate() {
            Ok(()) => Some(m),
            Err(e) => {
                issues.push("/model", e.to_string());
                None
            }
        },
        None => {
            if !obj.contains_key("model") {
                issues.push("/model", "missing model");
            }
            None
        }
    };
    let a: Option<GroupPoint> = field(obj, "a", &mut issues);
    if a.is_none() && !obj.contains_key("a") {
        issues.push("/a", "missing translation element");
    }
    let a = match (&model, a) {
        (Some(m), Some(a)) => match m.point(a.coords().to_vec()) {
            Ok(pt) => Some(pt),
            Err(e) => {
                issues.push("/a", e.to_string());
                None
            }
        },
        (_, a) => a,
    };
    let p: NormParam = field(obj, "p", &mut issues).unwrap_or_default();
    let weights: Vec<WeightSpec> = list_field(obj, "weights", &mut issues).unwrap_or_default();
    if let Some(m) = &model {
        for (i, w) in weights.iter().enumerate() {
            if let Err(e) = w.validate_for(m) {
                issues.push(format!("/weights/{i}"), e.to_string());
            }
        }
    }
    let mut powers: Vec<u64> = field(obj, "powers", &mut issues).unwrap_or_default();
    if powers.is_empty() {
        powers = vec![1; weights.len()];
    } else if powers.len() != weights.len() {
        issues.push(
            "/powers",
            format!("{} powers for {} weights", powers.len(), weights.len()),
        );
    }
    for (i, r) in powers.iter().enumerate() {
        if *r == 0 {
            issues.push(format!("/powers/{i}"), "powers must be >= 1");
        }
    }
    let k: Option<RegionSpec> = field(obj, "K", &mut issues);
    let k_region = match (&model, &k) {
        (Some(m), Some(spec)) => match spec.resolve(m) {
            Ok(r) => Some(r),
            Err(e) => {
                issues.push("/K", e);
                None
            }
        },
        _ => None,
    };
    let schedule: Option<ScheduleSpec> = field(obj, "schedule", &mut issues);
    let file_mode: Option<ModeName> = field(obj, "mode", &mut issues);
    let mode = overrides.mode.or(file_mode);
    let mut pairs: Vec<[usize; 2]> = field(obj, "pairs", &mut issues).unwrap_or_default();
    // `--mode paper` on a one-directional config checks every pair.
    if overrides.mode == Some(ModeName::Paper) {
        pairs.clear();
    }
    let tolerance: Option<f64> = field(obj, "tolerance", &mut issues);
    let seed: Option<u64> = overrides.seed.or(field(obj, "seed", &mut issues));

    let mut cfg = ExperimentConfig {
        command: command.unwrap_or(Command::Aperiodicity),
        description: field(obj, "description", &mut issues),
        model: model.clone().unwrap_or_else(GroupModel::z),
        a: a.clone().unwrap_or_else(|| GroupPoint::scalar(0)),
        p,
        weights,
        powers,
        k,
        schedule,
        mode,
        pairs,
        tolerance,
        seed,
        n: field(obj, "n", &mut issues),
        n_max: field(obj, "n_max", &mut issues),
        n_seq: field(obj, "n_seq", &mut issues),
        eps: field(obj, "eps", &mut issues),
        eta: field(obj, "eta", &mut issues),
        m: field(obj, "m", &mut issues),
        budget: field(obj, "budget", &mut issues),
        f: field(obj, "f", &mut issues),
        u: field(obj, "u", &mut issues),
        targets: list_field(obj, "targets", &mut issues),
        tuples: field(obj, "tuples", &mut issues),
        e: field(obj, "E", &mut issues),
        suite: field(obj, "suite", &mut issues),
    };

    let (Some(command), Some(_), Some(_)) = (command, model, a) else {
        return Err(issues.0);
    };
    check_command(&mut cfg, command, k_region.as_ref(), &mut issues);
    if issues.0.is_empty() {
        // resolving every function catches bad points and missing seeds
        if let Err(e) = Prepared::new(&cfg) {
            issues.0.extend(e);
        }
    }
    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(issues.0)
    }
}

fn check_command(
    cfg: &mut ExperimentConfig,
    command: Command,
    k_region: Option<&CompactRegion>,
    issues: &mut Issues,
) {
    let n_w = cfg.weights.len();
    let need_k = matches!(
        command,
        Command::Aperiodicity | Command::CheckHc | Command::CheckDhc | Command::Extract
    );
    if need_k && cfg.k.is_none() {
        issues.missing("K", command);
    }
    if let Some(k) = k_region {
        if need_k && k.is_empty() {
            issues.push("/K", "K must be nonempty");
        }
    }
    if command.needs_aperiodic() {
        let probe_region = match k_region {
            Some(k) if !k.is_empty() => k.clone(),
            _ => CompactRegion::new([cfg.model.identity()]),
        };
        if let Err(e) = require_aperiodic(&cfg.model, &probe_region, &cfg.a) {
            issues.push("/a", e.to_string());
        }
    }
    match command {
        Command::Aperiodicity => {}
        Command::CheckHc => {
            if n_w != 1 {
                issues.push(
                    "/weights",
                    format!("check-hc takes exactly one weight, got {n_w}"),
                );
            }
        }
        Command::CheckDhc => {
            if n_w < 2 {
                issues.push(
                    "/weights",
                    format!("check-dhc needs at least two weights, got {n_w}"),
                );
            }
            let mode = *cfg.mode.get_or_insert(ModeName::Paper);
            match mode {
                ModeName::Paper if !cfg.pairs.is_empty() => {
                    issues.push("/pairs", "pairs only apply to one-directional mode");
                }
                ModeName::OneDirectional if cfg.pairs.is_empty() => {
                    issues.push("/pairs", "one-directional mode needs at least one pair");
                }
                _ => {}
            }
            for (i, [j, l]) in cfg.pairs.iter().enumerate() {
                if j == l || *j == 0 || *l == 0 || *j > n_w || *l > n_w {
                    issues.push(
                        format!("/pairs/{i}"),
                        format!("expected distinct indices in 1..={n_w}"),
                    );
                }
            }
        }
        Command::Dcriterion => {
            if n_w < 2 {
                issues.push("/weights", "dcriterion needs at least two weights");
            }
            match &cfg.n_seq {
                None => issues.missing("n_seq", command),
                Some(s) if s.is_empty() => issues.push("/n_seq", "empty n_seq"),
                Some(s) if s[0] == 0 || s.windows(2).any(|w| w[1] <= w[0]) => {
                    issues.push("/n_seq", "must be positive and strictly increasing")
                }
                _ => {}
            }
            match &cfg.suite {
                None => issues.missing("suite", command),
                Some(SuiteSpec::Explicit { xl, .. }) if xl.len() != n_w => issues.push(
                    "/suite/xl",
                    format!("{} suites for {n_w} weights", xl.len()),
                ),
                Some(SuiteSpec::Default { b }) if *b < 0 || cfg.model.dim() != 1 => issues.push(
                    "/suite",
                    "default suite needs b >= 0 on a one-dimensional model",
                ),
                _ => {}
            }
            let tol = *cfg.tolerance.get_or_insert(DEFAULT_TOLERANCE);
            if !(tol > 0.0) {
                issues.push("/tolerance", "tolerance must be positive");
            }
        }
        Command::Probe => {
            need_weights(n_w, issues);
            need_targets(cfg, n_w + 1, issues);
            need_eps(cfg, issues);
            need_positive(cfg.n_max, "n_max", command, issues);
        }
        Command::Construct => {
            need_weights(n_w, issues);
            need_targets(cfg, n_w, issues);
            if cfg.f.is_none() {
                issues.missing("f", command);
            }
            if cfg.n.is_none() {
                issues.missing("n", command);
            }
            if cfg.e.is_none() {
                issues.missing("E", command);
            }
        }
        Command::Extract => {
            need_weights(n_w, issues);
            if cfg.f.is_none() {
                issues.missing("f", command);
            }
            need_positive(cfg.m, "m", command, issues);
            match cfg.eta {
                None => issues.missing("eta", command),
                Some(e) if !(e > 0.0 && e < 1.0) => issues.push("/eta", "eta must lie in (0, 1)"),
                _ => {}
            }
            if let (Some(m), Some(k)) = (cfg.m, k_region) {
                if let Ok(Aperiodicity::Horizon(h)) = aperiodicity_horizon(&cfg.model, k, &cfg.a) {
                    if m <= h {
                        issues.push(
                            "/m",
                            format!("m must exceed the aperiodicity horizon {h} of K"),
                        );
                    }
                }
            }
        }
        Command::Synthesize => {
            need_weights(n_w, issues);
            need_eps(cfg, issues);
            need_positive(cfg.budget, "budget", command, issues);
            match &cfg.tuples {
                None => issues.missing("tuples", command),
                Some(t) if t.is_empty() => issues.push("/tuples", "at least one tuple required"),
                Some(t) => {
                    for (i, tuple) in t.iter().enumerate() {
                        if tuple.len() != n_w {
                            issues.push(
                                format!("/tuples/{i}"),
                                format!("{} targets for {n_w} weights", tuple.len()),
                            );
                        }
                    }
                }
            }
        }
        Command::Orbit => {
            need_weights(n_w, issues);
            need_targets(cfg, n_w, issues);
            need_positive(cfg.n_max, "n_max", command, issues);
            if cfg.u.is_none() {
                issues.missing("u", command);
            }
            if let Some(e) = cfg.eps {
                if !(e > 0.0) {
                    issues.push("/eps", "eps must be positive");
                }
            }
        }
    }
    if matches!(command, Command::CheckHc | Command::CheckDhc) {
        if let Some(k) = k_region {
            normalize_schedule(cfg, haar_measure(&cfg.model, k), issues);
        }
    }
}

fn need_weights(n_w: usize, issues: &mut Issues) {
    if n_w == 0 {
        issues.push("/weights", "at least one weight required");
    }
}

fn need_targets(cfg: &ExperimentConfig, expected: usize, issues: &mut Issues) {
    match &cfg.targets {
        None => issues.missing("targets", cfg.command),
        Some(t) if t.len() != expected => issues.push(
            "/targets",
            format!("expected {expected} targets, got {}", t.len()),
        ),
        _ => {}
    }
}

fn need_eps(cfg: &ExperimentConfig, issues: &mut Issues) {
    match cfg.eps {
        None => issues.missing("eps", cfg.command),
        Some(e) if !(e > 0.0) => issues.push("/eps", "eps must be positive"),
        _ => {}
    }
}

fn need_positive(v: Option<u64>, key: &str, command: Command, issues: &mut Issues) {
    match v {
        None => issues.missing(key, command),
        Some(0) => issues.push(format!("/{key}"), "must be >= 1"),
        _ => {}
    }
}

fn normalize_schedule(cfg: &mut ExperimentConfig, measure_k: f64, issues: &mut Issues) {
    let spec = cfg.schedule.take().unwrap_or(ScheduleSpec {
        eps: None,
        deficit: None,
        k_max: None,
        n_max: None,
    });
    let k_max = spec
        .k_max
        .or(spec.eps.as_ref().map(Vec::len))
        .or(spec.deficit.as_ref().map(Vec::len))
        .unwrap_or(WitnessSchedule::DEFAULT_K_MAX);
    let n_max = spec.n_max.unwrap_or(WitnessSchedule::DEFAULT_N_MAX);
    let defaults = WitnessSchedule::defaults(measure_k, cfg.p, k_max.max(1), n_max.max(1));
    let (d_eps, d_def) = match defaults {
        Ok(d) => (d.eps, d.deficit),
        Err(_) => (vec![], vec![]),
    };
    let eps = spec.eps.unwrap_or(d_eps);
    let deficit = spec.deficit.unwrap_or(d_def);
    if eps.len() != k_max {
        issues.push(
            "/schedule/eps",
            format!("expected k_max = {k_max} entries, got {}", eps.len()),
        );
    }
    if deficit.len() != k_max {
        issues.push(
            "/schedule/deficit",
            format!("expected k_max = {k_max} entries, got {}", deficit.len()),
        );
    }
    if let Err(e) = WitnessSchedule::new(eps.clone(), deficit.clone(), n_max) {
        issues.push("/schedule", e.to_string());
    }
    cfg.schedule = Some(ScheduleSpec {
        eps: Some(eps),
        deficit: Some(deficit),
        k_max: Some(k_max),
        n_max: Some(n_max),
    });
}

/// A config with every function and region resolved.
struct Prepared {
    ops: Vec<OperatorSpec>,
    k: Option<CompactRegion>,
    e: Option<CompactRegion>,
    f: Option<LatticeFunction>,
    u: Option<LatticeFunction>,
    targets: Vec<LatticeFunction>,
    tuples: Vec<Vec<LatticeFunction>>,
    suite: Option<(Vec<LatticeFunction>, Vec<Vec<LatticeFunction>>)>,
}

struct Resolver<'a> {
    cfg: &'a ExperimentConfig,
    ops: &'a [OperatorSpec],
    stream: StreamCounter<u64>,
}

impl Resolver<'_> {
    fn region(&self, spec: &RegionSpec, path: &str) -> Result<CompactRegion, ConfigIssue> {
        spec.resolve(&self.cfg.model)
            .map_err(|message| ConfigIssue {
                path: path.to_string(),
                message,
            })
    }

    fn function(&self, spec: &FunctionSpec, path: &str) -> Result<LatticeFunction, ConfigIssue> {
        let model = &self.cfg.model;
        let issue = |message: String| ConfigIssue {
            path: path.to_string(),
            message,
        };
        let point = |c: &[i64]| model.point(c.to_vec()).map_err(|e| issue(e.to_string()));
        match spec {
            FunctionSpec::Zero => Ok(LatticeFunction::zero(model)),
            FunctionSpec::Points { points } => {
                let entries = points
                    .iter()
                    .map(|(c, v)| Ok((point(c)?, *v)))
                    .collect::<Result<Vec<_>, ConfigIssue>>()?;
                LatticeFunction::from_entries(model, entries).map_err(|e| issue(e.to_string()))
            }
            FunctionSpec::Delta { at, value } => {
                LatticeFunction::delta(model, point(at)?, *value).map_err(|e| issue(e.to_string()))
            }
            FunctionSpec::Indicator { region, height } => {
                let r = self.region(region, &format!("{path}/region"))?;
                if !height.is_finite() {
                    return Err(issue("height must be finite".into()));
                }
                Ok(LatticeFunction::indicator(model, &r)
                    .map_err(|e| issue(e.to_string()))?
                    .scale(*height))
            }
            FunctionSpec::Random { region, density } => {
                let seed = self
                    .cfg
                    .seed
                    .ok_or_else(|| issue("random test functions need a seed".into()))?;
                if !(0.0..=1.0).contains(density) {
                    return Err(issue("density must lie in [0, 1]".into()));
                }
                let r = self.region(region, &format!("{path}/region"))?;
                let stream = self.stream.get();
                self.stream.set(stream + 1);
                Ok(random_function(
                    &mut rng_for(seed, stream),
                    model,
                    &r,
                    *density,
                ))
            }
            FunctionSpec::Uk {
                f,
                targets,
                n,
                region,
            } => {
                if self.ops.is_empty() {
                    return Err(issue("uk needs the config's weights".into()));
                }
                if targets.len() != self.ops.len() {
                    return Err(issue(format!(
                        "uk needs {} targets, got {}",
                        self.ops.len(),
                        targets.len()
                    )));
                }
                let f = self.function(f, &format!("{path}/f"))?;
                let targets = targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| self.function(t, &format!("{path}/targets/{i}")))
                    .collect::<Result<Vec<_>, _>>()?;
                let e = self.region(region, &format!("{path}/region"))?;
                build_uk(&f, &targets, self.ops, *n, &e, self.cfg.p)
                    .map(|r| r.u)
                    .map_err(|e| issue(e.to_string()))
            }
        }
    }

    fn list(
        &self,
        specs: &[FunctionSpec],
        path: &str,
    ) -> Result<Vec<LatticeFunction>, ConfigIssue> {
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| self.function(s, &format!("{path}/{i}")))
            .collect()
    }
}

impl Prepared {
    fn new(cfg: &ExperimentConfig) -> Result<Prepared, Vec<ConfigIssue>> {
        let ops = cfg
            .weights
            .iter()
            .zip(&cfg.powers)
            .map(|(w, r)| OperatorSpec::new(cfg.a.clone(), w.clone(), *r))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| {
                vec![ConfigIssue {
                    path: "/weights".into(),
                    message: e.to_string(),
                }]
            })?;
        let r = Resolver {
            cfg,
            ops: &ops,
            stream: StreamCounter::new(0),
        };
        let mut issues = Vec::new();
        fn keep<T>(issues: &mut Vec<ConfigIssue>, res: Result<T, ConfigIssue>) -> Option<T> {
            res.map_err(|e| issues.push(e)).ok()
        }
        let k = cfg
            .k
            .as_ref()
            .and_then(|s| keep(&mut issues, r.region(s, "/K")));
        let e = cfg
            .e
            .as_ref()
            .and_then(|s| keep(&mut issues, r.region(s, "/E")));
        let f = cfg
            .f
            .as_ref()
            .and_then(|s| keep(&mut issues, r.function(s, "/f")));
        let u = cfg
            .u
            .as_ref()
            .and_then(|s| keep(&mut issues, r.function(s, "/u")));
        let targets = cfg
            .targets
            .as_ref()
            .and_then(|t| keep(&mut issues, r.list(t, "/targets")))
            .unwrap_or_default();
        let tuples = cfg
            .tuples
            .as_ref()
            .map(|ts| {
                ts.iter()
                    .enumerate()
                    .filter_map(|(i, t)| keep(&mut issues, r.list(t, &format!("/tuples/{i}"))))
                    .collect()
            })
            .unwrap_or_default();
        let suite = match &cfg.suite {
            None => None,
            Some(SuiteSpec::Default { b }) => keep(
                &mut issues,
                default_suite(&cfg.model, *b).map_err(|e| ConfigIssue {
                    path: "/suite".into(),
                    message: e.to_string(),
                }),
            )
            .map(|s| (s.clone(), vec![s; ops.len()])),
            Some(SuiteSpec::Explicit { x0, xl }) => {
                let x0 = keep(&mut issues, r.list(x0, "/suite/x0"));
                let xl: Option<Vec<_>> = xl
                    .iter()
                    .enumerate()
                    .map(|(i, s)| keep(&mut issues, r.list(s, &format!("/suite/xl/{i}"))))
                    .collect();
                x0.zip(xl)
            }
        };
        if !issues.is_empty() {
            return Err(issues);
        }
        Ok(Prepared {
            ops,
            k,
            e,
            f,
            u,
            targets,
            tuples,
            suite,
        })
    }
}

/// One cell of a CSV series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => ryu::Buffer::new().format(*x).to_string(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

pub const WITNESS_COLUMNS: [&str; 7] = [
    "k",
    "n_k",
    "eps_k",
    "deficit",
    "sup_forward",
    "sup_backward",
    "sup_ratio",
];

/// Witness rows (sups over `E_k`) for satisfied verdicts, search diagnostics
/// (sups over `K`) otherwise; header only for refutations.
pub fn witness_series(verdict: &Verdict) -> Series {
    let rows = match verdict {
        Verdict::Satisfied { witness, .. } => witness
            .entries
            .iter()
            .map(|e| {
                vec![
                    Cell::Int(e.k as u64),
                    Cell::Int(e.n),
                    Cell::Float(e.eps),
                    Cell::Float(e.deficit),
                    e.sup_forward.into(),
                    e.sup_backward.into(),
                    e.sup_ratio.into(),
                ]
            })
            .collect(),
        Verdict::BudgetExhausted { diagnostics, .. } => diagnostics
            .iter()
            .map(|d| {
                vec![
                    Cell::Int(d.k as u64),
                    Cell::Int(d.n),
                    Cell::Float(d.eps),
                    Cell::Float(d.deficit),
                    d.sup_forward.into(),
                    d.sup_backward.into(),
                    d.sup_ratio.into(),
                ]
            })
            .collect(),
        Verdict::Refuted { .. } => Vec::new(),
    };
    Series {
        file: "witness.csv".into(),
        header: WITNESS_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

/// Columns `n, d_n, d_n_l1, …, d_n_lN`.
pub fn orbit_series(series: &OrbitSeries, n_ops: usize) -> Series {
    let mut header = vec!["n".to_string(), "d_n".to_string()];
    header.extend((1..=n_ops).map(|l| format!("d_n_l{l}")));
    let rows = series
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![Cell::Int(r.n), Cell::Float(r.d)];
            row.extend(r.per_op.iter().map(|v| Cell::Float(*v)));
            row
        })
        .collect();
    Series {
        file: "orbit.csv".into(),
        header,
        rows,
    }
}

fn dcriterion_series(rep: &DCriterionReport) -> Series {
    Series {
        file: "dcriterion.csv".into(),
        header: ["k", "n_k", "forward", "inverse", "cross"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: rep
            .rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Int(r.k as u64),
                    Cell::Int(r.n),
                    Cell::Float(r.forward),
                    Cell::Float(r.inverse),
                    Cell::Float(r.cross),
                ]
            })
            .collect(),
    }
}

/// Writes each series as a CSV file in `dir`.
pub fn emit_series(series: &[Series], dir: &Path) -> std::io::Result<()> {
    for s in series {
        let mut w = csv::Writer::from_path(dir.join(&s.file))?;
        w.write_record(&s.header)?;
        for row in &s.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub command: Option<Command>,
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub config: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<ConfigIssue>,
    pub result: Value,
    pub series: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl Report {
    /// The report with its single nondeterministic field zeroed.
    pub fn payload(&self) -> Report {
        Report {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    fn config_error(command: Option<Command>, issues: Vec<ConfigIssue>) -> Report {
        Report {
            version: SCHEMA_VERSION.into(),
            command,
            status: "config_error".into(),
            exit_code: EXIT_ERROR,
            notes: Vec::new(),
            config: None,
            issues,
            result: Value::Null,
            series: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }
}

/// A finished run: its report and the series it references.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub series: Vec<Series>,
}

struct Outcome {
    status: String,
    exit_code: i32,
    result: Value,
    series: Vec<Series>,
    notes: Vec<String>,
}

impl Outcome {
    fn new(status: &str, exit_code: i32, result: Value) -> Self {
        Outcome {
            status: status.into(),
            exit_code,
            result,
            series: Vec::new(),
            notes: Vec::new(),
        }
    }
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("report types serialize")
}

fn verdict_status(v: &Verdict) -> (&'static str, i32) {
    match v {
        Verdict::Satisfied { .. } => ("satisfied", EXIT_OK),
        Verdict::Refuted { .. } => ("refuted", EXIT_NEGATIVE),
        Verdict::BudgetExhausted { .. } => ("budget_exhausted", EXIT_NEGATIVE),
    }
}

fn schedule_of(cfg: &ExperimentConfig) -> crate::Result<WitnessSchedule> {
    let s = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Internal("schedule not normalized".into()))?;
    WitnessSchedule::new(
        s.eps.clone().unwrap_or_default(),
        s.deficit.clone().unwrap_or_default(),
        s.n_max.unwrap_or(WitnessSchedule::DEFAULT_N_MAX),
    )
}

fn required<T>(v: Option<T>, what: &str) -> crate::Result<T> {
    v.ok_or_else(|| Error::Internal(format!("{what} missing after validation")))
}

fn dispatch(cfg: &ExperimentConfig, prep: &Prepared) -> crate::Result<Outcome> {
    let model = &cfg.model;
    let a = &cfg.a;
    let p = cfg.p;
    match cfg.command {
        Command::Aperiodicity => {
            let k = required(prep.k.as_ref(), "K")?;
            let ap = aperiodicity_horizon(model, k, a)?;
            let (status, code) = match ap {
                Aperiodicity::Horizon(_) => ("horizon", EXIT_OK),
                Aperiodicity::Periodic => ("periodic", EXIT_NEGATIVE),
            };
            Ok(Outcome::new(
                status,
                code,
                json!({ "aperiodicity": ap, "measure_k": haar_measure(model, k) }),
            ))
        }
        Command::CheckHc => {
            let k = required(prep.k.as_ref(), "K")?;
            let sched = schedule_of(cfg)?;
            let verdict = check_theorem_a(model, &cfg.weights[0], a, k, &sched)?;
            let (status, code) = verdict_status(&verdict);
            let mut out = Outcome::new(status, code, json!({ "verdict": verdict }));
            out.series.push(witness_series(&verdict));
            Ok(out)
        }
        Command::CheckDhc => {
            let k = required(prep.k.as_ref(), "K")?;
            let sched = schedule_of(cfg)?;
            let mode = match cfg.mode.unwrap_or(ModeName::Paper) {
                ModeName::Paper => DhcMode::PaperLiteral,
                ModeName::OneDirectional => DhcMode::OneDirectional {
                    pairs: cfg
                        .pairs
                        .iter()
                        .map(|[j, l]| OrderedPair { j: *j, l: *l })
                        .collect(),
                },
            };
            let outcome = check_theorem31_condition2(model, &cfg.weights, a, k, &sched, &mode)?;
            // hypercyclicity of each operator is a separate hypothesis, reported alongside
            let individual = cfg
                .weights
                .iter()
                .map(|w| check_theorem_a(model, w, a, k, &sched))
                .collect::<crate::Result<Vec<_>>>()?;
            let (status, code) = verdict_status(&outcome.verdict);
            let series = witness_series(&outcome.verdict);
            let mut out = Outcome::new(
                status,
                code,
                json!({ "condition": outcome, "individual": individual }),
            );
            if outcome.relaxation.is_some() {
                out.notes.push(RELAXATION_NOTE.to_string());
            }
            out.series.push(series);
            Ok(out)
        }
        Command::Dcriterion => {
            let (x0, xl) = required(prep.suite.as_ref(), "suite")?;
            let n_seq = required(cfg.n_seq.as_ref(), "n_seq")?;
            let tol = cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE);
            let rep = verify_dhc_criterion(&prep.ops, n_seq, x0, xl, p, tol)?;
            let (status, code) = match rep.decision {
                DDecision::SatisfiedOnSuite => ("satisfied_on_suite", EXIT_OK),
                DDecision::Failed { .. } => ("failed", EXIT_NEGATIVE),
            };
            let series = dcriterion_series(&rep);
            let mut out = Outcome::new(status, code, to_value(&rep));
            out.series.push(series);
            Ok(out)
        }
        Command::Probe => {
            let eps = required(cfg.eps, "eps")?;
            let n_max = required(cfg.n_max, "n_max")?;
            let outcome = probe_d_transitivity(&prep.ops, &prep.targets, eps, n_max, p)?;
            let (status, code) = match outcome {
                ProbeOutcome::Success { .. } => ("success", EXIT_OK),
                ProbeOutcome::Exhausted { .. } => ("exhausted", EXIT_NEGATIVE),
            };
            Ok(Outcome::new(status, code, to_value(&outcome)))
        }
        Command::Construct => {
            let f = required(prep.f.as_ref(), "f")?;
            let e = required(prep.e.as_ref(), "E")?;
            let n = required(cfg.n, "n")?;
            let rep = build_uk(f, &prep.targets, &prep.ops, n, e, p)?;
            let mut result = json!({
                "report": rep,
                "u_distance": rep.u_distance(),
                "target_distances": rep.target_distances(),
            });
            if let Some(eps) = cfg.eps {
                result["eps_accounting"] = to_value(&rep.eps_accounting(eps));
            }
            Ok(Outcome::new("constructed", EXIT_OK, result))
        }
        Command::Extract => {
            let f = required(prep.f.as_ref(), "f")?;
            let k = required(prep.k.as_ref(), "K")?;
            let dec = extract_eta_sets(
                f,
                &cfg.weights,
                a,
                required(cfg.m, "m")?,
                k,
                required(cfg.eta, "eta")?,
                p,
            )?;
            let (status, code) = match dec.status {
                EtaStatus::BoundsHold => ("bounds_hold", EXIT_OK),
                EtaStatus::PremiseViolated => ("premise_violated", EXIT_NEGATIVE),
                // the bounds follow from the premise, so a violation is a defect
                EtaStatus::BoundsViolated => ("bounds_violated", EXIT_ERROR),
            };
            Ok(Outcome::new(status, code, to_value(&dec)))
        }
        Command::Synthesize => {
            let eps = required(cfg.eps, "eps")?;
            let budget = required(cfg.budget, "budget")?;
            let outcome = synthesize_finite_horizon(&prep.ops, &prep.tuples, eps, budget, p)?;
            let out = match &outcome {
                SynthesisOutcome::Success { u, times, .. } => {
                    let horizon = *times.last().expect("J >= 1");
                    let mut visits = Vec::new();
                    let mut orbits = Vec::new();
                    for (j, (tuple, &m)) in prep.tuples.iter().zip(times).enumerate() {
                        let orbit = simulate_orbit(&prep.ops, u, tuple, p, horizon)?;
                        let d = orbit.distance_at(m).expect("m within the horizon");
                        visits.push(json!({ "tuple": j + 1, "m": m, "d": d, "visited": d < eps }));
                        orbits.push(orbit);
                    }
                    let all = visits.iter().all(|v| v["visited"] == Value::Bool(true));
                    let mut out = Outcome::new(
                        if all { "success" } else { "visit_mismatch" },
                        if all { EXIT_OK } else { EXIT_ERROR },
                        json!({ "synthesis": outcome, "visits": visits }),
                    );
                    for (j, orbit) in orbits.iter().enumerate() {
                        let mut s = orbit_series(orbit, prep.ops.len());
                        s.file = format!("orbit_tuple{}.csv", j + 1);
                        out.series.push(s);
                    }
                    out
                }
                SynthesisOutcome::Exhausted { .. } => {
                    Outcome::new("exhausted", EXIT_NEGATIVE, json!({ "synthesis": outcome }))
                }
            };
            Ok(out)
        }
        Command::Orbit => {
            let u = required(prep.u.as_ref(), "u")?;
            let n_max = required(cfg.n_max, "n_max")?;
            let orbit = simulate_orbit(&prep.ops, u, &prep.targets, p, n_max)?;
            let mut result = json!({ "rows": orbit.rows.len() });
            if let Some(eps) = cfg.eps {
                result["visits"] = to_value(&orbit.visits(eps));
            }
            let mut out = Outcome::new("simulated", EXIT_OK, result);
            out.series.push(orbit_series(&orbit, prep.ops.len()));
            Ok(out)
        }
    }
}

/// Runs a validated config.
pub fn run(cfg: &ExperimentConfig) -> RunOutput {
    let start = Instant::now();
    let outcome = Prepared::new(cfg)
        .map_err(|issues| Error::Internal(format!("config no longer resolves: {issues:?}")))
        .and_then(|prep| dispatch(cfg, &prep));
    let outcome = outcome
        .unwrap_or_else(|e| Outcome::new("error", EXIT_ERROR, json!({ "error": e.to_string() })));
    let report = Report {
        version: SCHEMA_VERSION.into(),
        command: Some(cfg.command),
        status: outcome.status,
        exit_code: outcome.exit_code,
        notes: outcome.notes,
        config: Some(cfg.clone()),
        issues: Vec::new(),
        result: outcome.result,
        series: outcome.series.iter().map(|s| s.file.clone()).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    RunOutput {
        report,
        series: outcome.series,
    }
}

/// Validates `raw`, runs it, and writes `report.json` and its series into
/// `out`. Returns the exit code.
pub fn execute(raw: &str, overrides: &Overrides, out: &Path) -> std::io::Result<i32> {
    let output = match validate_with(raw, overrides) {
        Ok(cfg) => run(&cfg),
        Err(issues) => RunOutput {
            report: Report::config_error(overrides.command, issues),
            series: Vec::new(),
        },
    };
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(&output.report).expect("report serializes");
    text.push('\n');
    fs::write(out.join("report.json"), text)?;
    emit_series(&output.series, out)?;
    Ok(output.report.exit_code)
}
