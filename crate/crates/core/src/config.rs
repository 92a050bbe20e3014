//! Run configuration files.
//!
//! The format is line oriented:
//!
//! ```text
//! # comment
//! scenario = flocking          # top-level keys
//! gains = [0.5, 1, 2]
//! [params]                     # scenario parameters
//! masses = [2, 2, 2, 2]
//! [initial]                    # initial-state overrides
//! v = [0.5, 1, 1, 1, -1, -1, 0.6, 0]
//! project = true
//! ```
//!
//! Values are numbers, bare words (`[A-Za-z0-9_.+/-]`, not starting with a
//! digit or sign), double-quoted strings, or one-level lists of those.
//! Unknown sections and keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::constraint::project_actuated;
use crate::scenarios::{
    build_flocking, build_usv, FlockingParams, LinearCurrent, Preset, Scenario, UniformCurrent,
    UsvConstraint, UsvParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value for '{key}': {message}")]
    Validation { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Word(String),
    List(Vec<Value>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Word(w) => write!(f, "{w}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    section: Option<String>,
    key: String,
    value: Value,
}

impl Entry {
    fn path(&self) -> String {
        match &self.section {
            Some(s) => format!("{s}.{}", self.key),
            None => self.key.clone(),
        }
    }
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(src: &str, line: usize) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line,
        }
    }

    fn error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Parse {
            line: self.line,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        matches!(self.peek(), None | Some('#'))
    }

    fn expect(&mut self, c: char) -> Result<(), ConfigError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    fn ident(&mut self) -> Result<String, ConfigError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            self.pos += 1;
        }
        if start == self.pos || self.chars[start].is_ascii_digit() {
            self.pos = start;
            return Err(self.error("expected a key name"));
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn scalar(&mut self) -> Result<Value, ConfigError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some('"') => {
                self.pos += 1;
                let body = self.pos;
                while !matches!(self.peek(), Some('"') | None) {
                    self.pos += 1;
                }
                if self.peek().is_none() {
                    return Err(self.error("unterminated string"));
                }
                let s: String = self.chars[body..self.pos].iter().collect();
                self.pos += 1;
                Ok(Value::Word(s))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || "+-.".contains(c))
                {
                    self.pos += 1;
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                text.parse::<f64>().map(Value::Number).map_err(|_| {
                    self.pos = start;
                    self.error(format!("invalid number '{text}'"))
                })
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || "_-./+".contains(c))
                {
                    self.pos += 1;
                }
                Ok(Value::Word(self.chars[start..self.pos].iter().collect()))
            }
            _ => Err(self.error("expected a value")),
        }
    }

    fn value(&mut self) -> Result<Value, ConfigError> {
        self.skip_ws();
        if self.peek() != Some('[') {
            return self.scalar();
        }
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.pos += 1;
            return Ok(Value::List(items));
        }
        loop {
            items.push(self.scalar()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(']') => {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                _ => return Err(self.error("expected ',' or ']'")),
            }
        }
    }
}

/// Syntactically valid but not yet validated configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: Vec<Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section: Option<String> = None;
        for (index, line) in text.lines().enumerate() {
            let mut cur = Cursor::new(line, index + 1);
            if cur.at_end() {
                continue;
            }
            if cur.peek() == Some('[') {
                cur.pos += 1;
                section = Some(cur.ident()?);
                cur.expect(']')?;
            } else {
                let column = cur.pos + 1;
                let key = cur.ident()?;
                cur.expect('=')?;
                let value = cur.value()?;
                let entry = Entry {
                    section: section.clone(),
                    key,
                    value,
                };
                if entries.iter().any(|e| e.section == entry.section && e.key == entry.key) {
                    return Err(ConfigError::Parse {
                        line: index + 1,
                        column,
                        message: format!("duplicate key '{}'", entry.path()),
                    });
                }
                entries.push(entry);
            }
            if !cur.at_end() {
                return Err(cur.error("unexpected trailing characters"));
            }
        }
        Ok(Self { entries })
    }

    /// Sets (or replaces) a key; `section` is `None` for top-level keys.
    pub fn set(&mut self, section: Option<&str>, key: &str, value: Value) {
        let section = section.map(str::to_string);
        self.entries.retain(|e| !(e.section == section && e.key == key));
        self.entries.push(Entry {
            section,
            key: key.into(),
            value,
        });
    }

    fn get(&self, section: Option<&str>, key: &str) -> Option<&Value> {
        self.entries
            .iter()
            .find(|e| e.section.as_deref() == section && e.key == key)
            .map(|e| &e.value)
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        RunConfig::from_raw(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Run,
    Drift,
    Chetaev,
    Check,
    Decay,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Drift => "drift",
            Mode::Chetaev => "chetaev",
            Mode::Check => "check",
            Mode::Decay => "decay",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Run, Mode::Drift, Mode::Chetaev, Mode::Check, Mode::Decay]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected run, drift, chetaev, check or decay)"))
    }
}

/// Stream models expressible in a config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurrentSpec {
    Uniform([f64; 2]),
    Linear(LinearCurrent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsvSettings {
    pub mass: f64,
    pub inertia: f64,
    pub current: CurrentSpec,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub constraint: UsvConstraint,
}

impl UsvSettings {
    fn preset(preset: Preset) -> Self {
        let (p, current) = match preset {
            Preset::UsvAnticyclone => (
                UsvParams::anticyclone(),
                CurrentSpec::Linear(LinearCurrent::anticyclone()),
            ),
            _ => (UsvParams::northeast(), CurrentSpec::Uniform([1.0, 1.0])),
        };
        Self {
            mass: p.mass,
            inertia: p.inertia,
            current,
            position: p.position,
            velocity: p.velocity,
            constraint: p.constraint,
        }
    }

    pub fn to_params(&self) -> UsvParams {
        UsvParams {
            mass: self.mass,
            inertia: self.inertia,
            current: match self.current {
                CurrentSpec::Uniform(c) => std::sync::Arc::new(UniformCurrent(c)),
                CurrentSpec::Linear(l) => std::sync::Arc::new(l),
            },
            position: self.position,
            velocity: self.velocity,
            constraint: self.constraint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioParams {
    Flocking(FlockingParams),
    Usv(UsvSettings),
}

impl ScenarioParams {
    pub fn dof(&self) -> usize {
        match self {
            ScenarioParams::Flocking(_) => 8,
            ScenarioParams::Usv(_) => 3,
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            ScenarioParams::Flocking(_) => 3,
            ScenarioParams::Usv(_) => 1,
        }
    }
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Preset,
    pub params: ScenarioParams,
    pub dt: f64,
    pub t_final: f64,
    pub gains: Vec<f64>,
    /// Project the initial velocity onto the constraint manifold before running.
    pub project: bool,
    pub out: PathBuf,
    pub mode: Mode,
}

fn number(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Number(x) if x.is_finite() => Ok(*x),
        _ => Err(invalid(key, format!("expected a finite number, got {v}"))),
    }
}

fn word<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    match v {
        Value::Word(w) => Ok(w),
        _ => Err(invalid(key, format!("expected a word, got {v}"))),
    }
}

fn numbers<const N: usize>(key: &str, v: &Value) -> Result<[f64; N], ConfigError> {
    let list = number_list(key, v)?;
    list.try_into()
        .map_err(|l: Vec<f64>| invalid(key, format!("expected {N} numbers, got {}", l.len())))
}

fn number_list(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::List(items) => items.iter().map(|x| number(key, x)).collect(),
        Value::Number(_) => Ok(vec![number(key, v)?]),
        _ => Err(invalid(key, format!("expected a list of numbers, got {v}"))),
    }
}

fn positive(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(key, format!("{x} must be > 0")))
    }
}

impl RunConfig {
    /// Builds the configured system; when `project` is set the actuated part
    /// of the initial velocity is moved onto `M`.
    pub fn build(&self) -> crate::error::Result<Scenario> {
        let mut sc = match &self.params {
            ScenarioParams::Flocking(p) => build_flocking(p)?,
            ScenarioParams::Usv(p) => build_usv(&p.to_params())?,
        };
        sc.name = self.scenario.name().into();
        sc.dt = self.dt;
        sc.t_final = self.t_final;
        if self.project {
            sc.initial.v = project_actuated(sc.system.as_ref(), sc.constraint.as_ref(), &sc.initial)?;
        }
        Ok(sc)
    }

    /// Parses and validates configuration text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        RawConfig::parse(text)?.resolve()
    }

    fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        for e in &raw.entries {
            let known: &[&str] = match e.section.as_deref() {
                None => &["scenario", "dt", "t_final", "gains", "out", "mode"],
                Some("params") => &[
                    "masses", "g", "mass", "inertia", "current", "current_linear", "constraint",
                ],
                Some("initial") => &["q", "v", "project"],
                Some(other) => return Err(invalid(other, "unknown section")),
            };
            if !known.contains(&e.key.as_str()) {
                return Err(invalid(&e.path(), "unknown key"));
            }
        }

        let scenario: Preset = match raw.get(None, "scenario") {
            Some(v) => word("scenario", v)?
                .parse()
                .map_err(|e: String| invalid("scenario", e))?,
            None => return Err(invalid("scenario", "missing (expected a preset name)")),
        };
        let mut params = match scenario {
            Preset::Flocking => ScenarioParams::Flocking(FlockingParams::default()),
            p => ScenarioParams::Usv(UsvSettings::preset(p)),
        };
        let (default_t_final, n) = match scenario {
            Preset::Flocking => (500.0, 8),
            _ => (100.0, 3),
        };

        for e in raw.entries.iter().filter(|e| e.section.as_deref() == Some("params")) {
            let key = e.path();
            let key = key.as_str();
            match (&mut params, e.key.as_str()) {
                (ScenarioParams::Flocking(p), "masses") => {
                    p.masses = numbers::<4>(key, &e.value)?;
                    for m in p.masses {
                        positive(key, m)?;
                    }
                }
                (ScenarioParams::Flocking(p), "g") => p.g = number(key, &e.value)?,
                (ScenarioParams::Usv(p), "mass") => p.mass = positive(key, number(key, &e.value)?)?,
                (ScenarioParams::Usv(p), "inertia") => {
                    p.inertia = positive(key, number(key, &e.value)?)?
                }
                (ScenarioParams::Usv(p), "current") => {
                    p.current = CurrentSpec::Uniform(numbers::<2>(key, &e.value)?)
                }
                (ScenarioParams::Usv(p), "current_linear") => {
                    let [a, b, c, d, e1, e2] = numbers::<6>(key, &e.value)?;
                    p.current = CurrentSpec::Linear(LinearCurrent {
                        matrix: [[a, b], [c, d]],
                        offset: [e1, e2],
                    });
                }
                (ScenarioParams::Usv(p), "constraint") => {
                    p.constraint = match word(key, &e.value)? {
                        "counter-stream" => UsvConstraint::CounterStream,
                        "with-stream" => UsvConstraint::WithStream,
                        other => {
                            return Err(invalid(
                                key,
                                format!("'{other}' (expected counter-stream or with-stream)"),
                            ))
                        }
                    }
                }
                _ => {
                    return Err(invalid(
                        key,
                        format!("not a parameter of scenario {scenario}"),
                    ))
                }
            }
        }

        let mut project = false;
        for e in raw.entries.iter().filter(|e| e.section.as_deref() == Some("initial")) {
            let key = e.path();
            let key = key.as_str();
            match e.key.as_str() {
                "project" => {
                    project = match word(key, &e.value)? {
                        "true" => true,
                        "false" => false,
                        other => return Err(invalid(key, format!("'{other}' is not a boolean"))),
                    }
                }
                which => {
                    let list = number_list(key, &e.value)?;
                    if list.len() != n {
                        return Err(invalid(
                            key,
                            format!("expected {n} numbers, got {}", list.len()),
                        ));
                    }
                    let position = which == "q";
                    match &mut params {
                        ScenarioParams::Flocking(p) => {
                            let target = if position {
                                &mut p.positions
                            } else {
                                &mut p.velocities
                            };
                            for (i, pair) in target.iter_mut().enumerate() {
                                *pair = [list[2 * i], list[2 * i + 1]];
                            }
                        }
                        ScenarioParams::Usv(p) => {
                            let target = if position {
                                &mut p.position
                            } else {
                                &mut p.velocity
                            };
                            target.copy_from_slice(&list);
                        }
                    }
                }
            }
        }

        let dt = match raw.get(None, "dt") {
            Some(v) => number("dt", v)?,
            None => 0.01,
        };
        if dt <= 0.0 {
            return Err(invalid("dt", format!("{dt} must be > 0")));
        }
        let t_final = match raw.get(None, "t_final") {
            Some(v) => number("t_final", v)?,
            None => default_t_final,
        };
        if t_final < 0.0 {
            return Err(invalid("t_final", format!("{t_final} must be >= 0")));
        }
        let steps = (t_final / dt).round();
        if (steps * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
            return Err(invalid(
                "t_final",
                format!("{t_final} is not an integer multiple of dt = {dt}"),
            ));
        }

        let m = params.inputs();
        let gains = match raw.get(None, "gains") {
            Some(v) => {
                let g = number_list("gains", v)?;
                if g.len() != m {
                    return Err(invalid(
                        "gains",
                        format!("expected {m} gains for {scenario}, got {}", g.len()),
                    ));
                }
                for k in &g {
                    positive("gains", *k)?;
                }
                g
            }
            None => vec![1.0; m],
        };

        let out = match raw.get(None, "out") {
            Some(v) => PathBuf::from(word("out", v)?),
            None => PathBuf::from("out"),
        };
        let mode = match raw.get(None, "mode") {
            Some(v) => word("mode", v)?.parse().map_err(|e: String| invalid("mode", e))?,
            None => Mode::Run,
        };

        Ok(Self {
            scenario,
            params,
            dt,
            t_final,
            gains,
            project,
            out,
            mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_flocking_defaults() {
        let cfg = RunConfig::parse("scenario=flocking").unwrap();
        assert_eq!(cfg.scenario, Preset::Flocking);
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(cfg.t_final, 500.0);
        assert_eq!(cfg.gains, vec![1.0; 3]);
        assert_eq!(cfg.mode, Mode::Run);
        assert_eq!(cfg.params, ScenarioParams::Flocking(FlockingParams::default()));
    }

    #[test]
    fn gains_map_to_diagonal() {
        let cfg = RunConfig::parse("scenario = flocking\ngains=[0.5,1,2]").unwrap();
        assert_eq!(cfg.gains, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn negative_dt_rejected() {
        let err = RunConfig::parse("scenario=flocking\ndt=-1").unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref key, .. } if key == "dt"), "{err}");
    }

    #[test]
    fn full_usv_config() {
        let text = "\
# anticyclone with a custom hull
scenario = usv-anticyclone
dt = 0.02
t_final = 4
out = \"results dir\"
[params]
mass = 12.5
constraint = with-stream   # v - C in D
current_linear = [0, 1, -1, 1, 0.5, 0]
[initial]
v = [0.1, 0.2, 0.3]
project = true
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.t_final, 4.0);
        assert!(cfg.project);
        assert_eq!(cfg.out, PathBuf::from("results dir"));
        let ScenarioParams::Usv(p) = &cfg.params else {
            panic!("usv params expected")
        };
        assert_eq!(p.mass, 12.5);
        assert_eq!(p.inertia, 4.0);
        assert_eq!(p.velocity, [0.1, 0.2, 0.3]);
        assert_eq!(p.constraint, UsvConstraint::WithStream);
        assert_eq!(
            p.current,
            CurrentSpec::Linear(LinearCurrent {
                matrix: [[0.0, 1.0], [-1.0, 1.0]],
                offset: [0.5, 0.0]
            })
        );
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = RunConfig::parse("scenario = flocking\ngains = [1, 2,").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, column: 15, .. }), "{err:?}");
        let err = RunConfig::parse("dt 0.1").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, column: 4, .. }), "{err:?}");
        let err = RunConfig::parse("scenario = flocking\ndt = 0.1\ndt = 0.2").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err:?}");
        let err = RunConfig::parse("dt = 1e").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, column: 6, .. }), "{err:?}");
    }

    #[test]
    fn unknown_and_misplaced_keys_rejected() {
        let key_of = |text: &str| match RunConfig::parse(text).unwrap_err() {
            ConfigError::Validation { key, .. } => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key_of("scenario=flocking\nspeed=3"), "speed");
        assert_eq!(key_of("scenario=flocking\n[params]\nmass=3"), "params.mass");
        assert_eq!(key_of("scenario=flocking\n[extra]\nx=1"), "extra");
        assert_eq!(key_of("scenario=boat"), "scenario");
        assert_eq!(key_of("dt=0.1"), "scenario");
        assert_eq!(key_of("scenario=flocking\ngains=[1,1]"), "gains");
        assert_eq!(key_of("scenario=flocking\ngains=[1,0,1]"), "gains");
        assert_eq!(key_of("scenario=flocking\nt_final=0.015"), "t_final");
        assert_eq!(key_of("scenario=usv-northeast\n[initial]\nq=[1,2]"), "initial.q");
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse("scenario=flocking\ndt=0.1").unwrap();
        raw.set(None, "dt", Value::Number(0.05));
        raw.set(None, "scenario", Value::Word("usv-northeast".into()));
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.dt, 0.05);
        assert_eq!(cfg.scenario, Preset::UsvNortheast);
        assert_eq!(cfg.t_final, 100.0);
    }
}
