//! Config files, experiment dispatch and result files for `bars-lab`.
//!
//! A config is a flat `key = value` file with two sections:
//!
//! ```text
//! [experiment]
//! id = ratio
//! fixture = ratio-family   # optional, defaults per experiment
//! seed = 7                 # optional, the CLI flag wins
//!
//! [params]
//! epsilon = 0.2
//! widths = 0.5, 0.25, 0.125
//! ```
//!
//! Every parameter has a default, so `[experiment]` with an `id` is a
//! complete config.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::bars::bars_run;
use crate::error::{invalid, Error, Result};
use crate::experiments::{
    backward_scaling, consistency_slopes, dimension_scaling, forward_scaling, gapped_regret_curve, ou_coupling,
    ratio_run, tuned_regret_curve, RegretCurve,
};
use crate::fixtures;
use crate::mdp::check_gap;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("[config.syntax] line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("[config.unknown-section] line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("[config.unknown-key] line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("[config.duplicate-key] line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("[config.missing-key] required key `{key}` is missing")]
    MissingKey { key: String },
    #[error("[config.type-mismatch] line {line}: `{key}` expects {expected}, got `{found}`")]
    TypeMismatch { line: usize, key: String, expected: &'static str, found: String },
    #[error("[config.unknown-experiment] line {line}: unknown experiment id `{value}`")]
    UnknownExperiment { line: usize, value: String },
    #[error("[config.conflict] `{key}` is `{config}` in the config but `{cli}` on the command line")]
    Conflict { key: String, config: String, cli: String },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Syntax { .. } => "config.syntax",
            Self::UnknownSection { .. } => "config.unknown-section",
            Self::UnknownKey { .. } => "config.unknown-key",
            Self::DuplicateKey { .. } => "config.duplicate-key",
            Self::MissingKey { .. } => "config.missing-key",
            Self::TypeMismatch { .. } => "config.type-mismatch",
            Self::UnknownExperiment { .. } => "config.unknown-experiment",
            Self::Conflict { .. } => "config.conflict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExperimentId {
    Gamma2,
    ForwardHit,
    BackwardHit,
    Ratio,
    RegretStatic,
    RegretGap,
    Bars,
    Coupling,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Int,
    Float,
    FloatList,
}

impl ParamKind {
    fn describe(self) -> &'static str {
        match self {
            Self::Int => "an unsigned integer",
            Self::Float => "a finite real",
            Self::FloatList => "a comma-separated list of finite reals",
        }
    }
}

/// Parameter name, type and default (in config syntax).
pub struct ParamSpec {
    pub key: &'static str,
    pub kind: ParamKind,
    pub default: &'static str,
}

const fn p(key: &'static str, kind: ParamKind, default: &'static str) -> ParamSpec {
    ParamSpec { key, kind, default }
}

use ParamKind::{Float, FloatList, Int};

const GAMMA2_PARAMS: &[ParamSpec] = &[
    p("dims", FloatList, "1, 2, 4, 8"),
    p("spacings", FloatList, "0.001, 0.04, 0.25, 0.5"),
    p("slope_tolerance", Float, "0.15"),
];
const FORWARD_PARAMS: &[ParamSpec] = &[
    p("domains", FloatList, "1, 2, 4"),
    p("epsilons", FloatList, "0.1, 0.05, 0.025"),
    p("spacing", Float, "0.025"),
    p("slope_tolerance", Float, "0.5"),
];
const BACKWARD_PARAMS: &[ParamSpec] = &[
    p("width", Float, "0.5"),
    p("epsilons", FloatList, "0.2, 0.1, 0.05"),
    p("mesh_constant", Float, "4"),
    p("terminal_offset", Float, "100"),
    p("slope_tolerance", Float, "0.5"),
];
const RATIO_PARAMS: &[ParamSpec] = &[
    p("epsilon", Float, "0.2"),
    p("widths", FloatList, "0.5, 0.25, 0.125"),
    p("ratio_factor", Float, "4"),
];
const REGRET_STATIC_PARAMS: &[ParamSpec] = &[
    p("decisions", Int, "256"),
    p("discount", Float, "0.9"),
    p("tolerance_scale", Float, "1"),
    p("t_min", Int, "64"),
    p("t_max", Int, "1024"),
    p("r_squared_min", Float, "0.9"),
];
const REGRET_GAP_PARAMS: &[ParamSpec] = &[
    p("t_min", Int, "64"),
    p("t_max", Int, "1024"),
    p("gap_delta", Float, "0.005"),
    p("gap_epsilon", Float, "0.5"),
    p("r_squared_min", Float, "0.9"),
];
const BARS_PARAMS: &[ParamSpec] = &[
    p("rounds", Int, "512"),
    p("alpha", Float, "0.002"),
    p("subgaussian", Float, "0.0001"),
    p("confidence", Float, "0.1"),
    p("gap", Float, "0.5"),
    p("r_squared_min", Float, "0.9"),
    p("exception_rate", Float, "0.05"),
];
const COUPLING_PARAMS: &[ParamSpec] = &[
    p("delta", Float, "0.015625"),
    p("steps", Int, "64"),
    p("trials", Int, "10000"),
    p("violation_rate", Float, "0.01"),
];
const CONSISTENCY_PARAMS: &[ParamSpec] = &[
    p("deltas", FloatList, "0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625"),
    p("slope_min", Float, "1.5"),
];

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        Self::Gamma2,
        Self::ForwardHit,
        Self::BackwardHit,
        Self::Ratio,
        Self::RegretStatic,
        Self::RegretGap,
        Self::Bars,
        Self::Coupling,
        Self::Consistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gamma2 => "gamma2",
            Self::ForwardHit => "forward-hit",
            Self::BackwardHit => "backward-hit",
            Self::Ratio => "ratio",
            Self::RegretStatic => "regret-static",
            Self::RegretGap => "regret-gap",
            Self::Bars => "bars",
            Self::Coupling => "coupling",
            Self::Consistency => "consistency",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s)
    }

    pub fn params(self) -> &'static [ParamSpec] {
        match self {
            Self::Gamma2 => GAMMA2_PARAMS,
            Self::ForwardHit => FORWARD_PARAMS,
            Self::BackwardHit => BACKWARD_PARAMS,
            Self::Ratio => RATIO_PARAMS,
            Self::RegretStatic => REGRET_STATIC_PARAMS,
            Self::RegretGap => REGRET_GAP_PARAMS,
            Self::Bars => BARS_PARAMS,
            Self::Coupling => COUPLING_PARAMS,
            Self::Consistency => CONSISTENCY_PARAMS,
        }
    }

    /// Claim id written to summary.json.
    pub fn claim(self) -> &'static str {
        match self {
            Self::Gamma2 => "gamma2-dimension-scaling",
            Self::ForwardHit => "forward-hitting-time-inverse-square",
            Self::BackwardHit => "backward-hitting-time-inverse-linear",
            Self::Ratio => "hitting-time-ratio-support-complexity",
            Self::RegretStatic => "static-regret-sqrt-horizon",
            Self::RegretGap => "gapped-static-regret-log-horizon",
            Self::Bars => "bars-log-dynamic-regret",
            Self::Coupling => "coupling-subgaussian-tail",
            Self::Consistency => "local-consistency-second-order",
        }
    }

    pub fn default_fixture(self) -> &'static str {
        FIXTURES.iter().find(|(_, id)| *id == self).map(|(name, _)| *name).expect("every experiment has a fixture")
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fixture registry; the first entry per experiment is its default.
pub const FIXTURES: &[(&str, ExperimentId)] = &[
    ("unit-ball-grids", ExperimentId::Gamma2),
    ("forward-family", ExperimentId::ForwardHit),
    ("ratio-family", ExperimentId::BackwardHit),
    ("ratio-family", ExperimentId::Ratio),
    ("decision-fan", ExperimentId::RegretStatic),
    ("gapped-ladder", ExperimentId::RegretGap),
    ("bars-ladder", ExperimentId::Bars),
    ("ou", ExperimentId::Coupling),
    ("consistency-set", ExperimentId::Consistency),
    ("ou1", ExperimentId::Consistency),
    ("sin1", ExperimentId::Consistency),
    ("aff2", ExperimentId::Consistency),
];

pub fn resolve_fixture(id: ExperimentId, name: &str) -> Result<()> {
    if FIXTURES.iter().any(|&(n, e)| n == name && e == id) {
        Ok(())
    } else if FIXTURES.iter().any(|&(n, _)| n == name) {
        Err(Error::FixtureMissing(format!("fixture `{name}` is not available for experiment `{id}`")))
    } else {
        Err(Error::FixtureMissing(format!("no fixture named `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(u64),
    Float(f64),
    FloatList(Vec<f64>),
}

/// Shortest text that parses back to the same f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(n) => write!(f, "{n}"),
            Self::Float(x) => f.write_str(&fmt_f64(*x)),
            Self::FloatList(xs) => f.write_str(&xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ")),
        }
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_value(kind: ParamKind, raw: &str) -> Option<ParamValue> {
    match kind {
        Int => raw.parse().ok().map(ParamValue::Int),
        Float => parse_finite(raw).map(ParamValue::Float),
        FloatList => raw.split(',').map(parse_finite).collect::<Option<Vec<_>>>().map(ParamValue::FloatList),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub fixture: String,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Every parameter of the experiment, defaults filled in.
    pub params: BTreeMap<String, ParamValue>,
}

impl ExperimentConfig {
    /// Defaults for `id` with no seed or output directory.
    pub fn defaults(id: ExperimentId) -> Self {
        let params = id
            .params()
            .iter()
            .map(|s| (s.key.to_string(), parse_value(s.kind, s.default).expect("defaults parse")))
            .collect();
        Self { id, fixture: id.default_fixture().to_string(), seed: None, out: None, params }
    }

    fn int(&self, key: &str) -> usize {
        match self.params.get(key) {
            Some(ParamValue::Int(n)) => *n as usize,
            other => panic!("parameter {key} is {other:?}"),
        }
    }

    fn float(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(ParamValue::Float(x)) => *x,
            other => panic!("parameter {key} is {other:?}"),
        }
    }

    fn list(&self, key: &str) -> &[f64] {
        match self.params.get(key) {
            Some(ParamValue::FloatList(xs)) => xs,
            other => panic!("parameter {key} is {other:?}"),
        }
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn dump(&self) -> String {
        let mut s = String::from("[experiment]\n");
        s.push_str(&format!("id = {}\nfixture = {}\n", self.id, self.fixture));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        if let Some(out) = &self.out {
            s.push_str(&format!("out = {}\n", out.display()));
        }
        s.push_str("\n[params]\n");
        for (k, v) in &self.params {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn params_json(&self) -> Value {
        let map = self
            .params
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    ParamValue::Int(n) => json!(n),
                    ParamValue::Float(x) => json!(x),
                    ParamValue::FloatList(xs) => json!(xs),
                };
                (k.clone(), v)
            })
            .collect();
        Value::Object(map)
    }
}

pub fn parse_config_str(text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Experiment,
        Params,
    }
    let mut section = Section::None;
    let mut seen_sections = Vec::new();
    let mut header: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    let mut raw_params: Vec<(usize, String, String)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, message: "unterminated section header".into() })?
                .trim();
            section = match name {
                "experiment" => Section::Experiment,
                "params" => Section::Params,
                _ => return Err(ConfigError::UnknownSection { line, name: name.to_string() }),
            };
            if seen_sections.contains(&name.to_string()) {
                return Err(ConfigError::Syntax { line, message: format!("section [{name}] repeated") });
            }
            seen_sections.push(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, message: "expected `key = value`".into() })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(ConfigError::Syntax { line, message: format!("bad key `{key}`") });
        }
        if value.is_empty() {
            return Err(ConfigError::Syntax { line, message: format!("`{key}` has no value") });
        }
        match section {
            Section::None => {
                return Err(ConfigError::Syntax { line, message: format!("`{key}` appears before any section") })
            }
            Section::Experiment => {
                let known = ["id", "fixture", "seed", "out"];
                let Some(&k) = known.iter().find(|&&k| k == key) else {
                    return Err(ConfigError::UnknownKey { line, key: key.to_string() });
                };
                if header.insert(k, (line, value.to_string())).is_some() {
                    return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
                }
            }
            Section::Params => {
                if raw_params.iter().any(|(_, k, _)| k == key) {
                    return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
                }
                raw_params.push((line, key.to_string(), value.to_string()));
            }
        }
    }

    let (id_line, id_text) = header.get("id").ok_or_else(|| ConfigError::MissingKey { key: "id".into() })?;
    let id = ExperimentId::parse(id_text)
        .ok_or_else(|| ConfigError::UnknownExperiment { line: *id_line, value: id_text.clone() })?;
    let mut cfg = ExperimentConfig::defaults(id);
    if let Some((_, f)) = header.get("fixture") {
        cfg.fixture = f.clone();
    }
    if let Some((line, s)) = header.get("seed") {
        cfg.seed = Some(s.parse().map_err(|_| ConfigError::TypeMismatch {
            line: *line,
            key: "seed".into(),
            expected: "an unsigned 64-bit integer",
            found: s.clone(),
        })?);
    }
    if let Some((_, o)) = header.get("out") {
        cfg.out = Some(PathBuf::from(o));
    }
    for (line, key, value) in raw_params {
        let spec = id
            .params()
            .iter()
            .find(|s| s.key == key)
            .ok_or_else(|| ConfigError::UnknownKey { line, key: key.clone() })?;
        let v = parse_value(spec.kind, &value).ok_or_else(|| ConfigError::TypeMismatch {
            line,
            key: key.clone(),
            expected: spec.kind.describe(),
            found: value.clone(),
        })?;
        cfg.params.insert(key, v);
    }
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(parse_config_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NonHit,
    Infeasible,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::NonHit => "non-hit",
            Self::Infeasible => "infeasible",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Ok, Self::NonHit, Self::Infeasible].into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Int(n) => n.to_string(),
            Self::Float(x) => fmt_f64(*x),
            Self::Text(s) => s.clone(),
            Self::Missing => String::new(),
        }
    }

    /// Inverse of `render`: floats always carry '.', 'e', "NaN" or "inf".
    fn read(s: &str) -> Self {
        if s.is_empty() {
            Self::Missing
        } else if let Ok(n) = s.parse::<i64>() {
            Self::Int(n)
        } else if let Ok(x) = s.parse::<f64>() {
            Self::Float(x)
        } else {
            Self::Text(s.to_string())
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Self::Int(n as i64)
    }
}

impl From<Option<usize>> for Cell {
    fn from(n: Option<usize>) -> Self {
        n.map_or(Self::Missing, Self::from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub fixture: String,
    pub seed: u64,
    pub params: Vec<(String, Cell)>,
    pub metrics: Vec<(String, Cell)>,
    pub status: Status,
}

const PARAM_PREFIX: &str = "param.";
const METRIC_PREFIX: &str = "metric.";

impl ResultRow {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["schema_version", "experiment", "fixture", "seed"].map(String::from).to_vec();
        h.extend(self.params.iter().map(|(k, _)| format!("{PARAM_PREFIX}{k}")));
        h.extend(self.metrics.iter().map(|(k, _)| format!("{METRIC_PREFIX}{k}")));
        h.push("status".into());
        h
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![SCHEMA_VERSION.to_string(), self.experiment.clone(), self.fixture.clone(), self.seed.to_string()];
        r.extend(self.params.iter().chain(&self.metrics).map(|(_, c)| c.render()));
        r.push(self.status.as_str().into());
        r
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn render_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let first = rows.first().ok_or_else(|| invalid("no rows to write"))?;
    let header = first.header();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        if row.header() != header {
            return Err(invalid("rows of one file must share their columns"));
        }
        w.write_record(row.record())?;
    }
    w.into_inner().map_err(|e| invalid(format!("csv flush: {e}")))
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_atomic(path, &render_csv(rows)?)
}

pub fn emit_json(summary: &Value, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| invalid(format!("json: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Reads a file written by `emit_csv`.
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let n = header.len();
    if n < 5 || header[..4] != ["schema_version", "experiment", "fixture", "seed"] || header[n - 1] != "status" {
        return Err(invalid(format!("{}: not a result file", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let idx = rows.len() + 1;
        let bad = |what: &str| invalid(format!("{}: bad {what} in record {idx}", path.display()));
        if rec[0].parse::<u64>().ok() != Some(SCHEMA_VERSION) {
            return Err(bad("schema_version"));
        }
        let mut params = Vec::new();
        let mut metrics = Vec::new();
        for (name, value) in header[4..n - 1].iter().zip(rec.iter().skip(4)) {
            if let Some(k) = name.strip_prefix(PARAM_PREFIX) {
                params.push((k.to_string(), Cell::read(value)));
            } else if let Some(k) = name.strip_prefix(METRIC_PREFIX) {
                metrics.push((k.to_string(), Cell::read(value)));
            } else {
                return Err(invalid(format!("{}: unexpected column {name}", path.display())));
            }
        }
        rows.push(ResultRow {
            experiment: rec[1].to_string(),
            fixture: rec[2].to_string(),
            seed: rec[3].parse().map_err(|_| bad("seed"))?,
            params,
            metrics,
            status: Status::parse(&rec[n - 1]).ok_or_else(|| bad("status"))?,
        });
    }
    Ok(rows)
}

/// Rows, named pass/fail checks and summary metrics of one run.
#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub checks: Vec<(String, bool)>,
    pub metrics: BTreeMap<String, Value>,
}

impl Report {
    pub fn verdict(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect()
    }

    pub fn summary(&self, cfg: &ExperimentConfig, seed: u64) -> Value {
        let checks: serde_json::Map<String, Value> = self.checks.iter().map(|(n, ok)| (n.clone(), json!(ok))).collect();
        json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": cfg.id.as_str(),
            "fixture": cfg.fixture,
            "seed": seed,
            "claim": cfg.id.claim(),
            "verdict": self.verdict(),
            "checks": checks,
            "failing": self.failing(),
            "metrics": self.metrics,
            "params": cfg.params_json(),
        })
    }
}

struct Builder<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    report: Report,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Self {
        Self { cfg, seed, report: Report { rows: Vec::new(), checks: Vec::new(), metrics: BTreeMap::new() } }
    }

    fn row(&mut self, params: Vec<(&str, Cell)>, metrics: Vec<(&str, Cell)>, status: Status) {
        let own = |v: Vec<(&str, Cell)>| v.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
        self.report.rows.push(ResultRow {
            experiment: self.cfg.id.as_str().into(),
            fixture: self.cfg.fixture.clone(),
            seed: self.seed,
            params: own(params),
            metrics: own(metrics),
            status,
        });
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.report.checks.push((name.into(), ok));
    }

    fn metric(&mut self, name: impl Into<String>, v: impl Into<Value>) {
        self.report.metrics.insert(name.into(), v.into());
    }
}

fn hit_status(tau: Option<usize>) -> Status {
    if tau.is_some() {
        Status::Ok
    } else {
        Status::NonHit
    }
}

fn horizons(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let (lo, hi) = (cfg.int("t_min"), cfg.int("t_max"));
    if lo < 2 || hi <= lo {
        return Err(invalid("need 2 <= t_min < t_max"));
    }
    Ok((lo..=hi).collect())
}

fn regret_rows(b: &mut Builder, curve: &RegretCurve, fit_name: &str) {
    for (&t, &r) in curve.horizons.iter().zip(&curve.totals) {
        b.row(vec![("horizon", t.into())], vec![("regret", r.into())], Status::Ok);
    }
    let r2 = curve.fit.map_or(f64::NAN, |f| f.r_squared);
    b.metric(format!("{fit_name}_slope"), curve.fit.map_or(f64::NAN, |f| f.slope));
    b.metric(format!("{fit_name}_r_squared"), r2);
    b.check(format!("{fit_name}_fit"), r2 >= b.cfg.float("r_squared_min"));
}

/// Runs the experiment described by `cfg` with the given seed.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    resolve_fixture(cfg.id, &cfg.fixture)?;
    let mut b = Builder::new(cfg, seed);
    match cfg.id {
        ExperimentId::Gamma2 => {
            let dims = cfg.list("dims");
            let spacings = cfg.list("spacings");
            if dims.len() != spacings.len() || dims.iter().any(|&d| d < 1.0 || d.fract() != 0.0) {
                return Err(invalid("dims must be positive integers paired one-to-one with spacings"));
            }
            let grids: Vec<(usize, f64)> = dims.iter().map(|&d| d as usize).zip(spacings.iter().copied()).collect();
            let s = dimension_scaling(&grids)?;
            for (i, &(d, h)) in grids.iter().enumerate() {
                b.row(
                    vec![("dim", d.into()), ("spacing", h.into())],
                    vec![("points", s.sizes[i].into()), ("gamma2_upper", s.estimates[i].into())],
                    Status::Ok,
                );
            }
            b.metric("dimension_slope", s.slope);
            b.check("dimension_slope", (s.slope - 0.5).abs() <= cfg.float("slope_tolerance"));
            b.check("estimates_increase", s.estimates.windows(2).all(|w| w[0] < w[1]));
        }
        ExperimentId::ForwardHit => {
            let eps = cfg.list("epsilons");
            let mut reports = Vec::new();
            for &d in cfg.list("domains") {
                let r = forward_scaling(d, cfg.float("spacing"), eps)?;
                for i in 0..eps.len() {
                    b.row(
                        vec![("domain", d.into()), ("epsilon", eps[i].into())],
                        vec![("gamma2_upper", r.gamma2.into()), ("delta", r.deltas[i].into()), ("tau", r.taus[i].into())],
                        hit_status(r.taus[i]),
                    );
                }
                b.metric(format!("slope_domain_{}", fmt_f64(d)), r.slope);
                b.check(format!("slope_domain_{}", fmt_f64(d)), (r.slope - 2.0).abs() <= cfg.float("slope_tolerance"));
                reports.push(r);
            }
            let monotone = (0..eps.len()).all(|i| {
                reports.windows(2).all(|w| matches!((w[0].taus[i], w[1].taus[i]), (Some(a), Some(c)) if a < c))
            });
            b.check("monotone_in_domain", monotone);
        }
        ExperimentId::BackwardHit => {
            let eps = cfg.list("epsilons");
            let r = backward_scaling(
                cfg.float("width"),
                eps,
                cfg.float("mesh_constant"),
                cfg.float("terminal_offset"),
                seed,
            )?;
            for i in 0..eps.len() {
                b.row(
                    vec![("width", r.width.into()), ("epsilon", eps[i].into())],
                    vec![("delta", r.deltas[i].into()), ("tau", r.taus[i].into())],
                    hit_status(r.taus[i]),
                );
            }
            b.metric("slope", r.slope);
            b.check("slope", (r.slope - 1.0).abs() <= cfg.float("slope_tolerance"));
        }
        ExperimentId::Ratio => {
            let eps = cfg.float("epsilon");
            let factor = cfg.float("ratio_factor");
            let mut rows = Vec::new();
            for &w in cfg.list("widths") {
                let r = ratio_run(w, eps, seed)?;
                let status = if r.tau_ratio().is_some() { Status::Ok } else { Status::NonHit };
                b.row(
                    vec![("width", w.into()), ("epsilon", eps.into())],
                    vec![
                        ("support_size", r.support_size.into()),
                        ("gamma2_space", r.gamma2_space.into()),
                        ("gamma2_support", r.gamma2_support.into()),
                        ("forward_delta", r.forward_delta.into()),
                        ("backward_delta", r.backward_delta.into()),
                        ("tau_forward", r.tau_forward.into()),
                        ("tau_backward", r.tau_backward.into()),
                        ("tau_ratio", r.tau_ratio().map_or(Cell::Missing, Cell::Float)),
                        ("gamma2_ratio_sq", r.gamma2_ratio_sq().into()),
                        ("terminal_error", r.terminal_error.into()),
                    ],
                    status,
                );
                rows.push(r);
            }
            b.check(
                "ratio_bound",
                rows.iter().all(|r| r.tau_ratio().is_some_and(|x| x <= factor * r.gamma2_ratio_sq())),
            );
            b.check(
                "ordering",
                rows.windows(2).all(|w| {
                    w[1].gamma2_ratio_sq() < w[0].gamma2_ratio_sq()
                        && matches!((w[0].tau_ratio(), w[1].tau_ratio()), (Some(a), Some(c)) if c < a)
                }),
            );
            b.check("terminal_error", rows.iter().all(|r| r.terminal_error <= eps / 2.0));
        }
        ExperimentId::RegretStatic => {
            let (mdp, mu, v0) = fixtures::decision_fan(cfg.int("decisions"), cfg.float("discount"))?;
            let curve = tuned_regret_curve(&mdp, &mu, &v0, cfg.float("tolerance_scale"), &horizons(cfg)?)?;
            regret_rows(&mut b, &curve, "sqrt_horizon");
        }
        ExperimentId::RegretGap => {
            let (mdp, mu) = fixtures::gapped_ladder()?;
            let gap = check_gap(&mdp, cfg.float("gap_delta"), cfg.float("gap_epsilon"))?;
            b.check("gap_certificate", gap.holds);
            let curve = gapped_regret_curve(&mdp, &mu, &horizons(cfg)?)?;
            regret_rows(&mut b, &curve, "log_horizon");
        }
        ExperimentId::Bars => {
            let mut bc = fixtures::bars_ladder(cfg.int("rounds"))?;
            bc.alpha = cfg.float("alpha");
            bc.subgaussian = cfg.float("subgaussian");
            bc.confidence = cfg.float("confidence");
            bc.gap = cfg.float("gap");
            let run = bars_run(&bc, seed)?;
            for r in &run.rounds {
                b.row(
                    vec![("round", r.t.into())],
                    vec![
                        ("sampled_state", r.sampled_state.into()),
                        ("support_size", r.support_size.into()),
                        ("gamma2_hat", r.gamma2_hat.into()),
                        ("lambda", r.lambda.into()),
                        ("lambda_min", r.lambda_min.into()),
                        ("lambda_max", r.lambda_max.into()),
                        ("tau", r.tau.into()),
                        ("epsilon", r.epsilon.into()),
                        ("backward_error", r.backward_error.into()),
                        ("j_star", r.j_star.into()),
                        ("j_policy", r.j_policy.into()),
                        ("regret", r.regret.into()),
                        ("cumulative_regret", r.cumulative_regret.into()),
                        ("gap_holds", Cell::Int(r.gap_holds as i64)),
                    ],
                    hit_status(r.tau),
                );
            }
            let s = &run.summary;
            b.metric("total_regret", s.total_regret);
            b.metric("log_slope", s.log_slope);
            b.metric("log_intercept", s.log_intercept);
            b.metric("log_r_squared", s.log_r_squared);
            b.metric("envelope_c", s.envelope_c);
            b.metric("envelope_exceptions", s.envelope_exceptions);
            b.metric("non_hits", s.non_hits);
            b.metric("gap_failures", s.gap_failures);
            b.check(
                "lambda_contained",
                run.rounds.iter().all(|r| r.lambda_min <= r.lambda && r.lambda < r.lambda_max),
            );
            b.check(
                "support_monotone",
                run.rounds.windows(2).all(|w| w[0].support_size <= w[1].support_size)
                    && run.rounds.iter().all(|r| r.support_size <= r.t),
            );
            b.check("log_fit", s.log_r_squared >= cfg.float("r_squared_min"));
            b.check(
                "envelope",
                s.envelope_exceptions as f64 <= cfg.float("exception_rate") * s.envelope_checked as f64,
            );
        }
        ExperimentId::Coupling => {
            let r = ou_coupling(cfg.float("delta"), cfg.int("steps"), cfg.int("trials"), seed)?;
            for i in 0..r.r_grid.len() {
                b.row(
                    vec![("r", r.r_grid[i].into())],
                    vec![("empirical_tail", r.empirical_tail[i].into()), ("bound", r.bound[i].into())],
                    Status::Ok,
                );
            }
            b.metric("k_hat", r.k_hat);
            b.metric("violations", r.violations);
            b.check(
                "tail_bound",
                r.violations as f64 <= cfg.float("violation_rate") * r.r_grid.len() as f64,
            );
        }
        ExperimentId::Consistency => {
            let deltas = cfg.list("deltas");
            let min = cfg.float("slope_min");
            for (name, spec, grid) in fixtures::consistency_fixtures()? {
                if cfg.fixture != "consistency-set" && cfg.fixture != name {
                    continue;
                }
                let r = consistency_slopes(&spec, &grid, deltas)?;
                for i in 0..deltas.len() {
                    b.row(
                        vec![("problem", Cell::Text(name.into())), ("delta", deltas[i].into())],
                        vec![("mean_remainder", r.mean_remainders[i].into()), ("cov_remainder", r.cov_remainders[i].into())],
                        Status::Ok,
                    );
                }
                b.metric(format!("{name}_mean_slope"), r.mean_slope);
                b.metric(format!("{name}_cov_slope"), r.cov_slope);
                b.check(format!("{name}_mean_slope"), r.mean_slope >= min);
                b.check(format!("{name}_cov_slope"), r.cov_slope >= min);
            }
        }
    }
    Ok(b.report)
}

/// Merges CLI arguments into the config, runs it and writes rows.csv and
/// summary.json. Returns the report.
pub fn run_to_dir(cfg: &mut ExperimentConfig, seed: u64, out: &Path) -> Result<Report> {
    if let Some(s) = cfg.seed.filter(|&s| s != seed) {
        return Err(ConfigError::Conflict { key: "seed".into(), config: s.to_string(), cli: seed.to_string() }.into());
    }
    cfg.seed = Some(seed);
    cfg.out = Some(out.to_path_buf());
    fs::create_dir_all(out).map_err(io_err(out))?;
    let report = run_experiment(cfg, seed)?;
    emit_csv(&report.rows, &out.join("rows.csv"))?;
    emit_json(&report.summary(cfg, seed), &out.join("summary.json"))?;
    Ok(report)
}

/// 0 ok, 1 failed check or numerical failure, 2 config/fixture/IO, 3 infeasible.
pub fn exit_code(result: &Result<Report>) -> u8 {
    match result {
        Ok(r) if r.verdict() => 0,
        Ok(_) => 1,
        Err(Error::Config(_) | Error::FixtureMissing(_) | Error::Io { .. }) => 2,
        Err(Error::Infeasible(_)) => 3,
        Err(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_gamma2_config_gets_defaults() {
        let cfg = parse_config_str("[experiment]\nid = gamma2\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentId::Gamma2));
        let dump = cfg.dump();
        assert!(dump.contains("fixture = unit-ball-grids"));
        assert!(dump.contains("dims = 1.0, 2.0, 4.0, 8.0"));
        assert!(dump.contains("slope_tolerance = 0.15"));
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let text = "[experiment]\nid = bars\n\n[params]\nrounds = 8\nlamda_min = 0.1\n";
        let err = parse_config_str(text).unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { line: 6, key: "lamda_min".into() });
        assert!(err.to_string().contains("lamda_min"));
        assert!(err.to_string().contains("line 6"));
    }

    #[test]
    fn error_kinds_have_distinct_codes() {
        let cases = [
            ("[params]\nx = 1\n", "config.missing-key"),
            ("[experiment]\nid = ratio\nwho = 1\n", "config.unknown-key"),
            ("[experiment]\nid = ratio\n[params]\nepsilon = fast\n", "config.type-mismatch"),
            ("[experiment]\nid = bars\n[params]\nrounds = 1.5\n", "config.type-mismatch"),
            ("[experiment]\nid = ratio\nseed = -1\n", "config.type-mismatch"),
            ("[experiment]\nid\n", "config.syntax"),
            ("id = ratio\n", "config.syntax"),
            ("[experiment\n", "config.syntax"),
            ("[extras]\n", "config.unknown-section"),
            ("[experiment]\nid = ratio\nid = bars\n", "config.duplicate-key"),
            ("[experiment]\nid = ratios\n", "config.unknown-experiment"),
        ];
        for (text, code) in cases {
            assert_eq!(parse_config_str(text).unwrap_err().code(), code, "{text:?}");
        }
    }

    #[test]
    fn dump_round_trips_for_every_experiment() {
        for id in ExperimentId::ALL {
            let mut cfg = ExperimentConfig::defaults(id);
            cfg.seed = Some(u64::MAX);
            cfg.out = Some(PathBuf::from("out/dir"));
            let dump = cfg.dump();
            let again = parse_config_str(&dump).unwrap();
            assert_eq!(again, cfg);
            assert_eq!(again.dump(), dump);
        }
        let cfg = parse_config_str("[experiment]\nid = ratio # trailing\n[params]\nwidths = 0.1,1e-7 , 3\n").unwrap();
        assert_eq!(cfg.params["widths"], ParamValue::FloatList(vec![0.1, 1e-7, 3.0]));
        assert_eq!(parse_config_str(&cfg.dump()).unwrap().dump(), cfg.dump());
    }

    #[test]
    fn non_finite_reals_are_rejected() {
        let err = parse_config_str("[experiment]\nid = ratio\n[params]\nepsilon = inf\n").unwrap_err();
        assert_eq!(err.code(), "config.type-mismatch");
    }

    #[test]
    fn fixture_registry_resolves_by_experiment() {
        for id in ExperimentId::ALL {
            resolve_fixture(id, id.default_fixture()).unwrap();
        }
        assert!(matches!(resolve_fixture(ExperimentId::Bars, "ou"), Err(Error::FixtureMissing(_))));
        assert!(matches!(resolve_fixture(ExperimentId::Bars, "nowhere"), Err(Error::FixtureMissing(_))));
    }

    fn row(i: usize, x: f64) -> ResultRow {
        ResultRow {
            experiment: "ratio".into(),
            fixture: "ratio-family".into(),
            seed: 3,
            params: vec![("width".into(), Cell::Float(x))],
            metrics: vec![
                ("tau".into(), if i % 7 == 0 { Cell::Missing } else { Cell::Int(i as i64) }),
                ("value".into(), Cell::Float(x * 1e-300)),
                ("name".into(), Cell::Text(format!("a,\"b\" {i}"))),
            ],
            status: if i % 7 == 0 { Status::NonHit } else { Status::Ok },
        }
    }

    #[test]
    fn one_row_gives_header_and_one_line() {
        let text = String::from_utf8(render_csv(&[row(1, 0.5)]).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "schema_version,experiment,fixture,seed,param.width,metric.tau,metric.value,metric.name,status"
        );
        assert!(lines[1].starts_with("1,ratio,ratio-family,3,0.5,1,"));
    }

    #[test]
    fn float_point_one_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        emit_csv(&[row(1, 0.1)], &path).unwrap();
        let back = read_csv(&path).unwrap();
        match back[0].params[0].1 {
            Cell::Float(x) => assert_eq!(x.to_bits(), 0.1f64.to_bits()),
            ref c => panic!("{c:?}"),
        }
    }

    #[test]
    fn ten_thousand_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows: Vec<ResultRow> = (0..10_000).map(|i| row(i, (i as f64).sqrt() / 3.0 - 7.0)).collect();
        emit_csv(&rows, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
        assert!(!dir.path().join(".rows.csv.tmp").exists());
    }

    #[test]
    fn empty_or_ragged_rows_are_refused() {
        assert!(render_csv(&[]).is_err());
        let mut other = row(2, 1.0);
        other.metrics.pop();
        assert!(render_csv(&[row(1, 1.0), other]).is_err());
    }

    #[test]
    fn summary_keys_are_sorted_and_name_failures() {
        let cfg = ExperimentConfig::defaults(ExperimentId::Gamma2);
        let report = Report {
            rows: vec![],
            checks: vec![("zeta".into(), true), ("alpha".into(), false)],
            metrics: BTreeMap::new(),
        };
        let text = serde_json::to_string(&report.summary(&cfg, 9)).unwrap();
        let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("checks") < pos("claim") && pos("claim") < pos("verdict"));
        assert!(text.contains("\"failing\":[\"alpha\"]"));
        assert!(text.contains("\"verdict\":false"));
    }

    #[test]
    fn seed_conflict_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::defaults(ExperimentId::Gamma2);
        cfg.seed = Some(1);
        let r = run_to_dir(&mut cfg, 2, dir.path());
        assert_eq!(exit_code(&r), 2);
    }

    #[test]
    fn infeasible_bars_config_exits_three() {
        let mut cfg = ExperimentConfig::defaults(ExperimentId::Bars);
        cfg.params.insert("rounds".into(), ParamValue::Int(2));
        cfg.params.insert("subgaussian".into(), ParamValue::Float(1e6));
        assert_eq!(exit_code(&run_experiment(&cfg, 1)), 3);
    }
}
