//! Flat key/value experiment configs.
//!
//! A config is a JSON object whose keys come from a per-command schema.
//! Values from `--key value` flags override the file; every key missing from
//! both is filled from its default, and the resolved map is what gets echoed
//! into the artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Capacity,
    Learnability,
    Recall,
    Equivalence,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Capacity, Command::Learnability, Command::Recall, Command::Equivalence];

    pub fn name(self) -> &'static str {
        match self {
            Command::Capacity => "capacity",
            Command::Learnability => "learnability",
            Command::Recall => "recall",
            Command::Equivalence => "equivalence",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::choice("command", s, &Self::ALL.map(|c| c.name())))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str(&'static [&'static str]),
    IntList,
    StrList(&'static [&'static str]),
}

/// A key with its type and default; `None` marks a required key.
#[derive(Debug, Clone)]
pub struct Field {
    pub key: &'static str,
    pub kind: Kind,
    pub default: Option<Value>,
}

pub const RULES: &[&str] = &[
    "hebbian",
    "delta",
    "titans",
    "omega",
    "atlas",
    "dla",
    "swla",
    "deeptransformer",
    "dot",
];
pub const ARCHS: &[&str] = &["matrix", "mlp2", "gated_mlp", "stack"];
pub const MAPS: &[&str] = &["identity", "polynomial", "block", "exp_truncated"];
pub const FITS: &[&str] = &["auto", "pseudoinverse", "gd"];
pub const SETTINGS: &[&str] = &["low_rank", "mlp_map", "attn_mlp", "attn_outputs_as_inputs", "swa_mlp"];
pub const OPTIMIZERS: &[&str] = &["sgd", "rmsprop", "adam"];
pub const GATE_MODES: &[&str] = &["normalized", "constant"];
pub const COMPARES: &[&str] = &["chunk", "closed_form"];

fn f(key: &'static str, kind: Kind, default: Value) -> Field {
    Field {
        key,
        kind,
        default: Some(default),
    }
}

fn common() -> Vec<Field> {
    vec![
        Field {
            key: "out",
            kind: Kind::Str(&[]),
            default: None,
        },
        f("seeds", Kind::IntList, Value::from(vec![0])),
    ]
}

pub fn schema(cmd: Command) -> Vec<Field> {
    use Kind::*;
    let mut s = common();
    s.extend(match cmd {
        Command::Capacity => vec![
            f("d_k", Int, 8.into()),
            f("d_v", Int, 8.into()),
            f("m_min", Int, 1.into()),
            f("m_max", Int, 16.into()),
            f("map", Str(MAPS), "identity".into()),
            f("degree", Int, 2.into()),
            f("arch", Str(ARCHS), "matrix".into()),
            f("depth", Int, 2.into()),
            f("hidden", Int, 32.into()),
            f("fit", Str(FITS), "auto".into()),
            f("gd_iters", Int, 200_000.into()),
            f("gd_step", Float, Value::Null),
            f("tol_fit", Float, 1e-6.into()),
            f("unit_keys", Bool, true.into()),
        ],
        Command::Learnability => vec![
            f("settings", StrList(SETTINGS), Value::from(vec!["low_rank"])),
            f("d", Int, 32.into()),
            f("t", Int, 5000.into()),
            f("steps", Int, Value::Null),
            f("rank", Int, Value::Null),
            f("swa_window", Int, 512.into()),
            f("optimizer", Str(OPTIMIZERS), "adam".into()),
            f("lr", Float, 1e-3.into()),
            f("beta1", Float, 0.9.into()),
            f("beta2", Float, 0.999.into()),
            f("eps", Float, 1e-8.into()),
            f("hidden_layers", Int, 2.into()),
            f("expansion", Int, 1.into()),
            f("window_mean", Int, 500.into()),
        ],
        Command::Recall => vec![
            f("rule", Str(RULES), "delta".into()),
            f("map", Str(MAPS), "identity".into()),
            f("degree", Int, 2.into()),
            f("d", Int, 16.into()),
            f("n_pairs", IntList, Value::from(vec![1, 2, 4, 8, 16, 32, 64, 128])),
            f("distractors", Int, 8.into()),
            f("gate", Str(GATE_MODES), "normalized".into()),
            f("eta_scale", Float, 0.5.into()),
            f("eta", Float, 0.1.into()),
            f("alpha", Float, 1.0.into()),
            f("theta", Float, 0.0.into()),
            f("c", Int, 1.into()),
            f("gamma", Float, 1.0.into()),
        ],
        Command::Equivalence => vec![
            f("rule", Str(RULES), "omega".into()),
            f("compare", Str(COMPARES), "chunk".into()),
            f("map", Str(MAPS), "identity".into()),
            f("degree", Int, 2.into()),
            f("arch", Str(ARCHS), "matrix".into()),
            f("depth", Int, 2.into()),
            f("hidden", Int, 8.into()),
            f("d_k", Int, 4.into()),
            f("d_v", Int, 4.into()),
            f("tokens", Int, 64.into()),
            f("b", Int, 1.into()),
            f("c", Int, 1.into()),
            f("ns_steps", Int, 5.into()),
            f("tol", Float, 1e-12.into()),
        ],
    });
    s
}

/// Validated config: the command plus every schema key with a concrete value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub values: BTreeMap<String, Value>,
}

fn coerce_flag(key: &str, kind: Kind, raw: &str) -> Result<Value, CliError> {
    let bad = |what: &str| CliError::Config(format!("field `{key}`: expected {what}, got `{raw}`"));
    match kind {
        Kind::Int => raw.parse::<u64>().map(Value::from).map_err(|_| bad("a non-negative integer")),
        Kind::Float => raw.parse::<f64>().map(Value::from).map_err(|_| bad("a number")),
        Kind::Bool => raw.parse::<bool>().map(Value::from).map_err(|_| bad("true or false")),
        Kind::Str(_) => Ok(Value::from(raw)),
        Kind::IntList | Kind::StrList(_) => {
            if let Ok(v @ Value::Array(_)) = serde_json::from_str::<Value>(raw) {
                return Ok(v);
            }
            let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            match kind {
                Kind::IntList => items
                    .iter()
                    .map(|s| s.parse::<u64>().map(Value::from))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Value::Array)
                    .map_err(|_| bad("a comma-separated list of integers")),
                _ => Ok(Value::Array(items.into_iter().map(Value::from).collect())),
            }
        }
    }
}

fn check_value(key: &str, kind: Kind, v: &Value) -> Result<(), CliError> {
    let type_err = |what: &str| CliError::Config(format!("field `{key}`: expected {what}, got {v}"));
    let check_choice = |s: &str, choices: &[&str]| {
        if choices.is_empty() || choices.contains(&s) {
            Ok(())
        } else {
            Err(CliError::choice(key, s, choices))
        }
    };
    match kind {
        Kind::Int => v.as_u64().map(|_| ()).ok_or_else(|| type_err("a non-negative integer")),
        Kind::Float => v.as_f64().map(|_| ()).ok_or_else(|| type_err("a number")),
        Kind::Bool => v.as_bool().map(|_| ()).ok_or_else(|| type_err("true or false")),
        Kind::Str(choices) => check_choice(v.as_str().ok_or_else(|| type_err("a string"))?, choices),
        Kind::IntList => {
            let arr = v.as_array().ok_or_else(|| type_err("a list of integers"))?;
            if arr.is_empty() {
                return Err(CliError::Config(format!("field `{key}` must not be empty")));
            }
            arr.iter()
                .all(|x| x.as_u64().is_some())
                .then_some(())
                .ok_or_else(|| type_err("a list of integers"))
        }
        Kind::StrList(choices) => {
            let arr = v.as_array().ok_or_else(|| type_err("a list of strings"))?;
            if arr.is_empty() {
                return Err(CliError::Config(format!("field `{key}` must not be empty")));
            }
            for x in arr {
                check_choice(x.as_str().ok_or_else(|| type_err("a list of strings"))?, choices)?;
            }
            Ok(())
        }
    }
}

/// `--key value` / `--key=value` pairs, in order.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            return Err(CliError::Config(format!("expected `--key value`, got `{a}`")));
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("flag `--{flag}` is missing a value")))?;
                out.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn unknown_key(cmd: Command, key: &str, fields: &[Field]) -> CliError {
    let valid: Vec<&str> = fields.iter().map(|f| f.key).collect();
    CliError::Config(format!(
        "unknown field `{key}` for `{cmd}`; valid fields: {}",
        valid.join(", ")
    ))
}

/// Merges file text (a JSON object, may be empty) with flag overrides.
pub fn parse_config(cmd: Command, file_text: Option<&str>, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    let fields = schema(cmd);
    let lookup = |k: &str| fields.iter().find(|f| f.key == k);
    let mut given: Map<String, Value> = match file_text.map(str::trim) {
        None | Some("") => Map::new(),
        Some(text) => match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(CliError::Config("config file must hold a JSON object".into())),
            Err(e) => return Err(CliError::Config(format!("config file is not valid JSON: {e}"))),
        },
    };
    if let Some(c) = given.remove("command") {
        let named = c.as_str().ok_or_else(|| CliError::Config("field `command` must be a string".into()))?;
        if Command::parse(named)? != cmd {
            return Err(CliError::Config(format!("config is for `{named}` but `{cmd}` was requested")));
        }
    }
    for (k, raw) in overrides {
        let field = lookup(k).ok_or_else(|| unknown_key(cmd, k, &fields))?;
        given.insert(k.clone(), coerce_flag(k, field.kind, raw)?);
    }
    let mut values = BTreeMap::new();
    for (k, v) in given {
        let field = lookup(&k).ok_or_else(|| unknown_key(cmd, &k, &fields))?;
        check_value(&k, field.kind, &v)?;
        values.insert(k, v);
    }
    for field in &fields {
        if values.contains_key(field.key) {
            continue;
        }
        match &field.default {
            Some(d) => {
                values.insert(field.key.to_string(), d.clone());
            }
            None => return Err(CliError::Config(format!("missing required field `{}`", field.key))),
        }
    }
    let mut cfg = ExperimentConfig { command: cmd, values };
    cfg.resolve_derived()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Replaces `null` defaults that depend on other fields.
    fn resolve_derived(&mut self) -> Result<(), CliError> {
        match self.command {
            Command::Capacity => {
                if self.str("fit") == "auto" {
                    let fit = if self.str("arch") == "matrix" { "pseudoinverse" } else { "gd" };
                    self.values.insert("fit".into(), fit.into());
                }
                if self.values["gd_step"].is_null() {
                    let step = if self.str("arch") == "matrix" { 1.0 } else { 0.05 };
                    self.values.insert("gd_step".into(), step.into());
                }
                if self.usize("m_min") == 0 || self.usize("m_min") > self.usize("m_max") {
                    return Err(CliError::Config("fields `m_min`/`m_max`: need 1 <= m_min <= m_max".into()));
                }
            }
            Command::Learnability => {
                if self.values["steps"].is_null() {
                    let t = self.values["t"].clone();
                    self.values.insert("steps".into(), t);
                }
                if self.values["rank"].is_null() {
                    let r = (self.usize("d") / 4).max(1);
                    self.values.insert("rank".into(), r.into());
                }
            }
            Command::Recall | Command::Equivalence => {}
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &Value {
        &self.values[key]
    }

    pub fn str(&self, key: &str) -> &str {
        self.values[key].as_str().unwrap_or_default()
    }

    pub fn usize(&self, key: &str) -> usize {
        self.values[key].as_u64().unwrap_or_default() as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.values[key].as_f64().unwrap_or(f64::NAN)
    }

    pub fn bool(&self, key: &str) -> bool {
        self.values[key].as_bool().unwrap_or_default()
    }

    pub fn u64_list(&self, key: &str) -> Vec<u64> {
        self.values[key].as_array().map(|a| a.iter().filter_map(Value::as_u64).collect()).unwrap_or_default()
    }

    pub fn str_list(&self, key: &str) -> Vec<String> {
        self.values[key]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .unwrap_or_default()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.u64_list("seeds")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str("out"))
    }

    /// Compact JSON of the resolved config, keys sorted, command first.
    pub fn echo(&self) -> String {
        let mut m = Map::new();
        m.insert("command".into(), self.command.name().into());
        for (k, v) in &self.values {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m).to_string()
    }

    pub fn echo_value(&self) -> Value {
        serde_json::from_str(&self.echo()).expect("echo is valid JSON")
    }
}
