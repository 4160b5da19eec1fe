//! Flat `key = value` run configuration with `[section]` headers.
//!
//! The schema is closed: every key must appear in [`SCHEMA`], which also
//! holds the defaults. `seed` may appear before the first header.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex;
use shell_ld::experiments::EnsembleSpec;
use shell_ld::{
    ControlPath, CovarianceSpec, Forcing, Model, ModelParams, NoiseCoefficient, ShellState,
    TimeGrid, Variant, WienerConvention,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{origin}:{line}: {message}")]
pub struct ConfigError {
    /// `config` for the file, `--set` for command-line overrides.
    pub origin: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Uint,
    Float,
    FloatList,
    Choice(&'static [&'static str]),
    Text,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub kind: Kind,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

const fn key(
    section: &'static str,
    key: &'static str,
    kind: Kind,
    default: &'static str,
    doc: &'static str,
) -> KeySpec {
    KeySpec {
        section,
        key,
        kind,
        default: Some(default),
        doc,
    }
}

pub const VARIANTS: &[&str] = &["goy", "sabra"];
pub const COVARIANCES: &[&str] = &["geometric", "explicit"];
pub const CONVENTIONS: &[&str] = &["complex", "real"];
pub const SIGMAS: &[&str] = &["single_mode", "additive", "multiplicative", "zero"];
pub const FORCINGS: &[&str] = &["zero", "constant"];
pub const INITIALS: &[&str] = &["basis", "zero", "explicit", "kolmogorov"];
pub const CONTROLS: &[&str] = &["zero", "constant", "explicit"];
pub const TARGETS: &[&str] = &["point", "sphere"];
pub const FORMATS: &[&str] = &["ndjson", "csv", "binary"];

/// Sections in canonical order.
pub const SECTIONS: &[&str] = &[
    "",
    "model",
    "noise",
    "forcing",
    "grid",
    "initial",
    "control",
    "action",
    "experiment",
    "output",
];

pub const SCHEMA: &[KeySpec] = &[
    key(
        "",
        "seed",
        Kind::Uint,
        "0",
        "master seed of every random stream",
    ),
    KeySpec {
        section: "model",
        key: "N",
        kind: Kind::Uint,
        default: None,
        doc: "number of shells",
    },
    key(
        "model",
        "k0",
        Kind::Float,
        "1",
        "base wavenumber, k_n = k0 2^n",
    ),
    key("model", "nu", Kind::Float, "1", "viscosity"),
    key("model", "a", Kind::Float, "-1", "nonlinear coefficient a"),
    key("model", "b", Kind::Float, "0.5", "nonlinear coefficient b"),
    key(
        "model",
        "c",
        Kind::Float,
        "0.5",
        "nonlinear coefficient c (a + b + c = 0)",
    ),
    key(
        "model",
        "variant",
        Kind::Choice(VARIANTS),
        "goy",
        "shell model family",
    ),
    key(
        "noise",
        "covariance",
        Kind::Choice(COVARIANCES),
        "geometric",
        "eigenvalue generator of Q",
    ),
    key(
        "noise",
        "lambda0",
        Kind::Float,
        "1",
        "geometric: lambda_n = lambda0 2^(-gamma n)",
    ),
    key(
        "noise",
        "gamma",
        Kind::Float,
        "1",
        "geometric decay exponent",
    ),
    key(
        "noise",
        "lambda",
        Kind::FloatList,
        "",
        "explicit eigenvalues, one per shell",
    ),
    key(
        "noise",
        "convention",
        Kind::Choice(CONVENTIONS),
        "complex",
        "complex or real Wiener increments",
    ),
    key(
        "noise",
        "sigma",
        Kind::Choice(SIGMAS),
        "single_mode",
        "noise coefficient family",
    ),
    key(
        "noise",
        "sigma_mode",
        Kind::Uint,
        "1",
        "single_mode: forced shell (1-based)",
    ),
    key(
        "noise",
        "sigma_re",
        Kind::FloatList,
        "",
        "additive/multiplicative coefficients, real parts",
    ),
    key(
        "noise",
        "sigma_im",
        Kind::FloatList,
        "",
        "additive/multiplicative coefficients, imaginary parts",
    ),
    key(
        "forcing",
        "kind",
        Kind::Choice(FORCINGS),
        "zero",
        "deterministic forcing f",
    ),
    key(
        "forcing",
        "re",
        Kind::FloatList,
        "",
        "constant forcing, real parts",
    ),
    key(
        "forcing",
        "im",
        Kind::FloatList,
        "",
        "constant forcing, imaginary parts",
    ),
    key("grid", "t0", Kind::Float, "0", "initial time"),
    key("grid", "T", Kind::Float, "1", "final time"),
    key(
        "grid",
        "steps",
        Kind::Uint,
        "1000",
        "number of uniform steps",
    ),
    key(
        "initial",
        "kind",
        Kind::Choice(INITIALS),
        "basis",
        "initial state u0",
    ),
    key(
        "initial",
        "shell",
        Kind::Uint,
        "1",
        "basis: populated shell (1-based)",
    ),
    key(
        "initial",
        "amplitude",
        Kind::Float,
        "1",
        "basis/kolmogorov amplitude",
    ),
    key(
        "initial",
        "re",
        Kind::FloatList,
        "",
        "explicit u0, real parts",
    ),
    key(
        "initial",
        "im",
        Kind::FloatList,
        "",
        "explicit u0, imaginary parts",
    ),
    key(
        "control",
        "kind",
        Kind::Choice(CONTROLS),
        "zero",
        "deterministic control v (constant in time)",
    ),
    key(
        "control",
        "shell",
        Kind::Uint,
        "1",
        "constant: controlled shell (1-based)",
    ),
    key(
        "control",
        "amplitude",
        Kind::Float,
        "0.5",
        "constant: real amplitude",
    ),
    key(
        "control",
        "re",
        Kind::FloatList,
        "",
        "explicit control, real parts",
    ),
    key(
        "control",
        "im",
        Kind::FloatList,
        "",
        "explicit control, imaginary parts",
    ),
    key(
        "action",
        "target",
        Kind::Choice(TARGETS),
        "point",
        "point phi or sphere around the noiseless terminal",
    ),
    key(
        "action",
        "shell",
        Kind::Uint,
        "1",
        "point target e_shell * amplitude when re/im are empty",
    ),
    key(
        "action",
        "amplitude",
        Kind::Float,
        "1",
        "point target amplitude",
    ),
    key(
        "action",
        "re",
        Kind::FloatList,
        "",
        "explicit point target, real parts",
    ),
    key(
        "action",
        "im",
        Kind::FloatList,
        "",
        "explicit point target, imaginary parts",
    ),
    key(
        "action",
        "radius",
        Kind::Float,
        "0.5",
        "sphere radius delta",
    ),
    key(
        "action",
        "scales",
        Kind::FloatList,
        "0.5, 1, 2",
        "rate: target multiples (point) or radius multiples (sphere)",
    ),
    key(
        "action",
        "penalty",
        Kind::Float,
        "1000",
        "initial terminal penalty rho",
    ),
    key(
        "action",
        "penalty_growth",
        Kind::Float,
        "10",
        "penalty growth per stage",
    ),
    key(
        "action",
        "penalty_stages",
        Kind::Uint,
        "5",
        "penalty continuation stages",
    ),
    key(
        "action",
        "grad_tol",
        Kind::Float,
        "1e-6",
        "stage stop: ||g|| <= grad_tol (1 + ||v||)",
    ),
    key(
        "action",
        "step_tol",
        Kind::Float,
        "1e-15",
        "stage stop: relative decrease of J",
    ),
    key(
        "action",
        "max_iters",
        Kind::Uint,
        "500",
        "total optimizer iterations",
    ),
    key("action", "memory", Kind::Uint, "10", "L-BFGS memory"),
    key(
        "experiment",
        "epsilon",
        Kind::Float,
        "0.1",
        "noise intensity",
    ),
    key("experiment", "paths", Kind::Uint, "200", "ensemble size"),
    key(
        "experiment",
        "delta_weight",
        Kind::Float,
        "1",
        "exponential weight of the weighted energy estimates",
    ),
    key(
        "experiment",
        "eps_list",
        Kind::FloatList,
        "0.1, 0.01, 0.001, 0.0001",
        "weak-convergence sweep",
    ),
    key(
        "experiment",
        "ldp_eps",
        Kind::FloatList,
        "0.05, 0.02, 0.01",
        "ldp-check sweep",
    ),
    key(
        "experiment",
        "delta",
        Kind::Float,
        "0.5",
        "rare-event sphere radius",
    ),
    key(
        "experiment",
        "identity_pairs",
        Kind::Uint,
        "1000",
        "random pairs per shell count",
    ),
    key(
        "experiment",
        "identity_states",
        Kind::Uint,
        "10000",
        "random states for the interpolation inequality",
    ),
    key(
        "experiment",
        "monotonicity_samples",
        Kind::Uint,
        "10000",
        "random pairs for local monotonicity",
    ),
    key(
        "experiment",
        "constants_samples",
        Kind::Uint,
        "10000",
        "random pairs for operator constants",
    ),
    key("output", "dir", Kind::Text, "out", "output directory"),
    key(
        "output",
        "format",
        Kind::Choice(FORMATS),
        "ndjson",
        "ndjson, csv or binary",
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Uint(u64),
    Float(f64),
    FloatList(Vec<f64>),
    Text(String),
}

impl Value {
    fn canonical(&self) -> String {
        match self {
            Value::Uint(u) => u.to_string(),
            Value::Float(x) => fmt_float(*x),
            Value::FloatList(v) => v
                .iter()
                .map(|x| fmt_float(*x))
                .collect::<Vec<_>>()
                .join(", "),
            Value::Text(s) => s.clone(),
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

fn parse_value(kind: Kind, raw: &str) -> Result<Value, String> {
    let raw = raw.trim();
    let unquoted = raw
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .unwrap_or(raw);
    let float = |s: &str| -> Result<f64, String> {
        let x: f64 = s
            .trim()
            .parse()
            .map_err(|_| format!("expected a number, got `{}`", s.trim()))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("expected a finite number, got `{}`", s.trim()))
        }
    };
    match kind {
        Kind::Uint => raw
            .parse::<u64>()
            .map(Value::Uint)
            .map_err(|_| format!("expected a nonnegative integer, got `{raw}`")),
        Kind::Float => float(raw).map(Value::Float),
        Kind::FloatList => {
            if raw.is_empty() {
                return Ok(Value::FloatList(Vec::new()));
            }
            raw.split(',')
                .map(float)
                .collect::<Result<Vec<_>, _>>()
                .map(Value::FloatList)
        }
        Kind::Choice(options) => {
            let s = unquoted.to_ascii_lowercase();
            if options.contains(&s.as_str()) {
                Ok(Value::Text(s))
            } else {
                Err(format!(
                    "expected one of {}, got `{raw}`",
                    options.join("|")
                ))
            }
        }
        Kind::Text => Ok(Value::Text(unquoted.to_string())),
    }
}

fn spec_index(section: &str, key: &str) -> Option<usize> {
    SCHEMA
        .iter()
        .position(|s| s.section == section && s.key == key)
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: Value,
    origin: String,
    line: usize,
}

/// Raw key/value layer: explicit entries with their source positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    entries: BTreeMap<usize, Entry>,
    sections: BTreeMap<String, usize>,
    lines: usize,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        let err = |line: usize, message: String| ConfigError {
            origin: "config".into(),
            line,
            message,
        };
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            raw.lines = lineno;
            let content = strip_comment(line).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(lineno, format!("malformed section header `{content}`")))?
                    .trim();
                if name.is_empty() || !SECTIONS.contains(&name) {
                    return Err(err(lineno, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                raw.sections.entry(section.clone()).or_insert(lineno);
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(lineno, format!("expected `key = value`, got `{content}`")))?;
            raw.insert(&section, k.trim(), v, "config", lineno)?;
        }
        Ok(raw)
    }

    fn insert(
        &mut self,
        section: &str,
        key: &str,
        raw: &str,
        origin: &str,
        line: usize,
    ) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError {
            origin: origin.into(),
            line,
            message,
        };
        let idx = spec_index(section, key)
            .ok_or_else(|| err(format!("unknown key `{}`", qualified(section, key))))?;
        let value = parse_value(SCHEMA[idx].kind, raw)
            .map_err(|m| err(format!("`{}`: {m}", qualified(section, key))))?;
        if origin == "config" {
            if let Some(prev) = self.entries.get(&idx) {
                return Err(err(format!(
                    "duplicate key `{}` (first set on line {})",
                    qualified(section, key),
                    prev.line
                )));
            }
        }
        self.entries.insert(
            idx,
            Entry {
                value,
                origin: origin.into(),
                line,
            },
        );
        Ok(())
    }

    /// Applies `section.key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            let line = i + 1;
            let err = |message: String| ConfigError {
                origin: "--set".into(),
                line,
                message,
            };
            let (path, value) = o
                .split_once('=')
                .ok_or_else(|| err(format!("expected section.key=value, got `{o}`")))?;
            let path = path.trim();
            let (section, key) = path.rsplit_once('.').unwrap_or(("", path));
            if !section.is_empty() {
                self.sections.entry(section.to_string()).or_insert(0);
            }
            self.insert(section, key, value, "--set", line)?;
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> (Value, Option<(&str, usize)>) {
        let idx = spec_index(section, key).expect("schema key");
        match self.entries.get(&idx) {
            Some(e) => (e.value.clone(), Some((e.origin.as_str(), e.line))),
            None => {
                let d = SCHEMA[idx]
                    .default
                    .expect("required keys are checked before lookup");
                (
                    parse_value(SCHEMA[idx].kind, d).expect("schema defaults parse"),
                    None,
                )
            }
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with(';') {
        return "";
    }
    match line.find(" #") {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Fully validated configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Every schema key in canonical order.
    values: Vec<Value>,
}

struct Builder<'a> {
    raw: &'a RawConfig,
}

impl Builder<'_> {
    fn err(&self, section: &str, key: &str, message: String) -> ConfigError {
        let (_, pos) = self.raw.get(section, key);
        let (origin, line) = match pos {
            Some((o, l)) => (o.to_string(), l),
            None => (
                "config".to_string(),
                self.raw
                    .sections
                    .get(section)
                    .copied()
                    .unwrap_or(self.raw.lines),
            ),
        };
        ConfigError {
            origin,
            line,
            message,
        }
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        for s in SCHEMA.iter().filter(|s| s.default.is_none()) {
            if !s.section.is_empty() && !raw.sections.contains_key(s.section) {
                return Err(ConfigError {
                    origin: "config".into(),
                    line: raw.lines + 1,
                    message: format!("missing required section [{}]", s.section),
                });
            }
            if !raw
                .entries
                .contains_key(&spec_index(s.section, s.key).expect("schema"))
            {
                return Err(ConfigError {
                    origin: "config".into(),
                    line: raw
                        .sections
                        .get(s.section)
                        .copied()
                        .unwrap_or(raw.lines + 1),
                    message: format!("missing required key `{}`", qualified(s.section, s.key)),
                });
            }
        }
        let values = SCHEMA.iter().map(|s| raw.get(s.section, s.key).0).collect();
        let cfg = RunConfig { values };
        cfg.validate(&Builder { raw })?;
        Ok(cfg)
    }

    fn value(&self, section: &str, key: &str) -> &Value {
        &self.values
            [spec_index(section, key).unwrap_or_else(|| panic!("unknown key {section}.{key}"))]
    }

    pub fn uint(&self, section: &str, key: &str) -> u64 {
        match self.value(section, key) {
            Value::Uint(u) => *u,
            v => panic!("{section}.{key} is not an integer: {v:?}"),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> usize {
        usize::try_from(self.uint(section, key)).unwrap_or(usize::MAX)
    }

    pub fn float(&self, section: &str, key: &str) -> f64 {
        match self.value(section, key) {
            Value::Float(x) => *x,
            v => panic!("{section}.{key} is not a number: {v:?}"),
        }
    }

    pub fn list(&self, section: &str, key: &str) -> &[f64] {
        match self.value(section, key) {
            Value::FloatList(v) => v,
            v => panic!("{section}.{key} is not a list: {v:?}"),
        }
    }

    pub fn text(&self, section: &str, key: &str) -> &str {
        match self.value(section, key) {
            Value::Text(s) => s,
            v => panic!("{section}.{key} is not text: {v:?}"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.uint("", "seed")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.values[spec_index("", "seed").expect("schema")] = Value::Uint(seed);
    }

    pub fn num_shells(&self) -> usize {
        self.usize("model", "N")
    }

    fn validate(&self, b: &Builder) -> Result<(), ConfigError> {
        let n = self.num_shells();
        if n == 0 {
            return Err(b.err("model", "N", "`model.N` must be at least 1".into()));
        }
        let (a, bb, c) = (
            self.float("model", "a"),
            self.float("model", "b"),
            self.float("model", "c"),
        );
        if a + bb + c != 0.0 {
            let which = ["c", "b", "a"]
                .into_iter()
                .find(|k| b.raw.get("model", k).1.is_some())
                .unwrap_or("a");
            return Err(b.err(
                "model",
                which,
                format!("coefficients violate the energy conservation constraint a + b + c = 0 (a + b + c = {})", a + bb + c),
            ));
        }
        self.model_params()
            .map_err(|e| b.err("model", "nu", e.to_string()))?;
        let check_len = |section: &str, key: &str, required: bool| -> Result<(), ConfigError> {
            let len = self.list(section, key).len();
            if (required || len > 0) && len != n {
                return Err(b.err(
                    section,
                    key,
                    format!("`{}` needs {n} entries, got {len}", qualified(section, key)),
                ));
            }
            Ok(())
        };
        if self.text("noise", "covariance") == "explicit" {
            check_len("noise", "lambda", true)?;
        }
        if matches!(self.text("noise", "sigma"), "additive" | "multiplicative") {
            check_len("noise", "sigma_re", true)?;
            check_len("noise", "sigma_im", false)?;
        }
        let mode = self.usize("noise", "sigma_mode");
        if self.text("noise", "sigma") == "single_mode" && !(1..=n).contains(&mode) {
            return Err(b.err(
                "noise",
                "sigma_mode",
                format!("`noise.sigma_mode` must be in 1..={n}"),
            ));
        }
        self.covariance()
            .map_err(|e| b.err("noise", "lambda0", e.to_string()))?;
        if self.text("forcing", "kind") == "constant" {
            check_len("forcing", "re", true)?;
            check_len("forcing", "im", false)?;
        }
        if self.text("initial", "kind") == "explicit" {
            check_len("initial", "re", true)?;
            check_len("initial", "im", false)?;
        }
        if self.text("initial", "kind") == "basis"
            && !(1..=n).contains(&self.usize("initial", "shell"))
        {
            return Err(b.err(
                "initial",
                "shell",
                format!("`initial.shell` must be in 1..={n}"),
            ));
        }
        match self.text("control", "kind") {
            "constant" if !(1..=n).contains(&self.usize("control", "shell")) => {
                return Err(b.err(
                    "control",
                    "shell",
                    format!("`control.shell` must be in 1..={n}"),
                ));
            }
            "explicit" => {
                check_len("control", "re", true)?;
                check_len("control", "im", false)?;
            }
            _ => {}
        }
        if self.text("action", "target") == "point" {
            if self.list("action", "re").is_empty() {
                if !(1..=n).contains(&self.usize("action", "shell")) {
                    return Err(b.err(
                        "action",
                        "shell",
                        format!("`action.shell` must be in 1..={n}"),
                    ));
                }
            } else {
                check_len("action", "re", true)?;
                check_len("action", "im", false)?;
            }
        } else if !(self.float("action", "radius") > 0.0) {
            return Err(b.err(
                "action",
                "radius",
                "`action.radius` must be positive".into(),
            ));
        }
        if self.grid().is_err() {
            let msg = self.grid().err().map(|e| e.to_string()).unwrap_or_default();
            return Err(b.err("grid", "steps", msg));
        }
        if self.usize("experiment", "paths") == 0 {
            return Err(b.err(
                "experiment",
                "paths",
                "`experiment.paths` must be at least 1".into(),
            ));
        }
        if !(self.float("experiment", "epsilon") >= 0.0) {
            return Err(b.err(
                "experiment",
                "epsilon",
                "`experiment.epsilon` must be nonnegative".into(),
            ));
        }
        for key in ["eps_list", "ldp_eps"] {
            let l = self.list("experiment", key);
            if l.is_empty() || l.iter().any(|e| !(*e > 0.0)) {
                return Err(b.err(
                    "experiment",
                    key,
                    format!("`experiment.{key}` needs positive values"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical text: every key, defaults included, in schema order.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            if !section.is_empty() {
                let _ = writeln!(out, "\n[{section}]");
            }
            for (spec, v) in SCHEMA
                .iter()
                .zip(&self.values)
                .filter(|(s, _)| s.section == *section)
            {
                let _ = writeln!(out, "{} = {}", spec.key, v.canonical());
            }
        }
        out
    }

    pub fn model_params(&self) -> shell_ld::Result<ModelParams<f64>> {
        let variant = if self.text("model", "variant") == "sabra" {
            Variant::Sabra
        } else {
            Variant::Goy
        };
        ModelParams::new(
            self.num_shells(),
            self.float("model", "k0"),
            self.float("model", "nu"),
            self.float("model", "a"),
            self.float("model", "b"),
            self.float("model", "c"),
            variant,
        )
    }

    /// `a = b = c = 0`
    pub fn is_linear(&self) -> bool {
        ["a", "b", "c"]
            .iter()
            .all(|k| self.float("model", k) == 0.0)
    }

    fn complex_list(&self, section: &str) -> Vec<Complex<f64>> {
        let re = self.list(section, "re");
        let im = self.list(section, "im");
        re.iter()
            .enumerate()
            .map(|(i, &r)| Complex::new(r, im.get(i).copied().unwrap_or(0.0)))
            .collect()
    }

    pub fn covariance(&self) -> shell_ld::Result<CovarianceSpec<f64>> {
        let n = self.num_shells();
        let q = if self.text("noise", "covariance") == "explicit" {
            CovarianceSpec::explicit(self.list("noise", "lambda").to_vec())?
        } else {
            CovarianceSpec::geometric(
                n,
                self.float("noise", "lambda0"),
                self.float("noise", "gamma"),
            )?
        };
        let conv = if self.text("noise", "convention") == "real" {
            WienerConvention::Real
        } else {
            WienerConvention::Complex
        };
        Ok(q.with_convention(conv))
    }

    pub fn sigma(&self) -> shell_ld::Result<NoiseCoefficient<f64>> {
        let n = self.num_shells();
        let coeffs = || {
            let re = self.list("noise", "sigma_re");
            let im = self.list("noise", "sigma_im");
            re.iter()
                .enumerate()
                .map(|(i, &r)| Complex::new(r, im.get(i).copied().unwrap_or(0.0)))
                .collect()
        };
        match self.text("noise", "sigma") {
            "additive" => NoiseCoefficient::additive(coeffs()),
            "multiplicative" => NoiseCoefficient::multiplicative(coeffs()),
            "zero" => Ok(NoiseCoefficient::zero(n)),
            _ => Ok(NoiseCoefficient::single_mode(
                n,
                self.usize("noise", "sigma_mode"),
            )),
        }
    }

    pub fn is_additive(&self) -> bool {
        self.text("noise", "sigma") != "multiplicative"
    }

    pub fn forcing(&self) -> shell_ld::Result<Forcing<f64>> {
        match self.text("forcing", "kind") {
            "constant" => Ok(Forcing::Constant(ShellState::from_vec(
                self.complex_list("forcing"),
            )?)),
            _ => Ok(Forcing::Zero),
        }
    }

    pub fn grid(&self) -> shell_ld::Result<TimeGrid<f64>> {
        TimeGrid::new(
            self.float("grid", "t0"),
            self.float("grid", "T"),
            self.usize("grid", "steps"),
        )
    }

    pub fn model(&self) -> shell_ld::Result<Model<f64>> {
        Model::new(
            self.model_params()?,
            self.sigma()?,
            self.covariance()?,
            self.forcing()?,
        )
    }

    pub fn initial_state(&self) -> shell_ld::Result<ShellState<f64>> {
        let n = self.num_shells();
        let amp = self.float("initial", "amplitude");
        match self.text("initial", "kind") {
            "zero" => Ok(ShellState::zeros(n)),
            "explicit" => ShellState::from_vec(self.complex_list("initial")),
            "kolmogorov" => {
                let k = self.model_params()?.wavenumbers();
                ShellState::from_vec(
                    k.iter()
                        .enumerate()
                        .map(|(i, &kn)| {
                            Complex::from_polar(amp * (kn / k[0]).powf(-1.0 / 3.0), (i + 1) as f64)
                        })
                        .collect(),
                )
            }
            _ => Ok(ShellState::basis(n, self.usize("initial", "shell")).scale(amp)),
        }
    }

    pub fn control(&self) -> shell_ld::Result<ControlPath<f64>> {
        let n = self.num_shells();
        let grid = self.grid()?;
        match self.text("control", "kind") {
            "constant" => Ok(ControlPath::constant(
                grid,
                ShellState::basis(n, self.usize("control", "shell"))
                    .scale(self.float("control", "amplitude")),
            )),
            "explicit" => Ok(ControlPath::constant(
                grid,
                ShellState::from_vec(self.complex_list("control"))?,
            )),
            _ => Ok(ControlPath::zeros(grid, n)),
        }
    }

    pub fn has_control(&self) -> bool {
        self.text("control", "kind") != "zero"
    }

    /// Point target of the action problem (`None` for sphere targets).
    pub fn point_target(&self) -> shell_ld::Result<Option<ShellState<f64>>> {
        if self.text("action", "target") != "point" {
            return Ok(None);
        }
        if self.list("action", "re").is_empty() {
            let n = self.num_shells();
            Ok(Some(
                ShellState::basis(n, self.usize("action", "shell"))
                    .scale(self.float("action", "amplitude")),
            ))
        } else {
            ShellState::from_vec(self.complex_list("action")).map(Some)
        }
    }

    pub fn ensemble(&self) -> shell_ld::Result<EnsembleSpec<f64>> {
        Ok(EnsembleSpec {
            model: self.model()?,
            u0: self.initial_state()?,
            grid: self.grid()?,
            paths: self.usize("experiment", "paths"),
            master_seed: self.seed(),
            epsilon: self.float("experiment", "epsilon"),
        })
    }

    pub fn format(&self) -> &str {
        self.text("output", "format")
    }
}

/// Parses and validates configuration text (no overrides).
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    RunConfig::from_raw(&RawConfig::parse(text)?)
}

/// Parses configuration text, then applies `section.key=value` overrides.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;
    raw.apply_overrides(overrides)?;
    RunConfig::from_raw(&raw)
}

/// Markdown table of every key and its default.
pub fn defaults_table() -> String {
    let mut out = String::from("| key | default | meaning |\n|---|---|---|\n");
    for s in SCHEMA {
        let _ = writeln!(
            out,
            "| `{}` | {} | {} |",
            qualified(s.section, s.key),
            s.default
                .map(|d| if d.is_empty() {
                    "(empty)".to_string()
                } else {
                    format!("`{d}`")
                })
                .unwrap_or("required".into()),
            s.doc
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("[model]\nN = 8\n").unwrap();
        assert_eq!(c.num_shells(), 8);
        assert_eq!(c.float("model", "k0"), 1.0);
        assert_eq!(c.float("model", "nu"), 1.0);
        assert_eq!(
            (
                c.float("model", "a"),
                c.float("model", "b"),
                c.float("model", "c")
            ),
            (-1.0, 0.5, 0.5)
        );
        assert_eq!(c.text("model", "variant"), "goy");
    }

    #[test]
    fn constraint_violation_is_rejected_with_line() {
        let e = parse_config("[model]\nN = 4\na = 1\nb = 1\nc = 1\n").unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("a + b + c = 0"), "{e}");
    }

    #[test]
    fn unknown_key_and_section() {
        let e = parse_config("[model]\nN = 4\nfoo = 1\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("unknown key `model.foo`"));
        let e = parse_config("[model]\nN = 4\n[bogus]\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn type_mismatch_and_missing() {
        let e = parse_config("# c\n[model]\nN = eight\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_config("[grid]\nsteps = 10\n").unwrap_err();
        assert!(e.message.contains("missing required section [model]"));
        let e = parse_config("seed = 3\n[model]\nnu = 2\n").unwrap_err();
        assert!(e.message.contains("model.N"));
        assert_eq!(e.line, 2);
        let e = parse_config("[model]\nN = 2\nN = 3\n").unwrap_err();
        assert!(e.message.contains("duplicate"));
    }

    #[test]
    fn canonical_round_trip_and_order_independence() {
        let a = parse_config(
            "seed = 5\n[model]\nN = 6\nnu = 0.25 # viscosity\n[grid]\nsteps = 64\nT = 0.5\n",
        )
        .unwrap();
        let b = parse_config(
            "; other comment\n[grid]\nT = 0.5\nsteps = 64\n[model]\nnu = 0.25\nN = 6\n\n[]\n",
        )
        .err();
        assert!(b.is_some(), "empty section header is rejected");
        let b = parse_config("[grid]\nT = 0.5\nsteps = 64\n[model]\nnu = 0.25\nN = 6\n").unwrap();
        let mut b = b;
        b.set_seed(5);
        assert_eq!(a.to_canonical_string(), b.to_canonical_string());
        let again = parse_config(&a.to_canonical_string()).unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn overrides_apply_and_report_origin() {
        let c = parse_config_with(
            "[model]\nN = 4\n",
            &["model.nu=0.5".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(c.float("model", "nu"), 0.5);
        assert_eq!(c.seed(), 9);
        let e = parse_config_with("[model]\nN = 4\n", &["model.nope=1".into()]).unwrap_err();
        assert_eq!((e.origin.as_str(), e.line), ("--set", 1));
    }

    #[test]
    fn builds_core_objects() {
        let c = parse_config(
            "[model]\nN = 3\n[noise]\ncovariance = explicit\nlambda = 1, 0.5, 0.25\nsigma = additive\nsigma_re = 1, 0, 0\n[initial]\nkind = kolmogorov\n",
        )
        .unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.q.eigenvalues(), &[1.0, 0.5, 0.25]);
        assert_eq!(c.initial_state().unwrap().len(), 3);
        let e = parse_config("[model]\nN = 3\n[noise]\ncovariance = explicit\nlambda = 1, 2\n")
            .unwrap_err();
        assert_eq!(e.line, 5);
    }
}
