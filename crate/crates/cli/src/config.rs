//! Resolved run configuration.
//!
//! Every command-line invocation is turned into a [`RunConfig`] with all
//! defaults filled in; `--print-config` emits it as canonical JSON and
//! `skipwalk run --config FILE` replays it.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use skipwalk::PerturbationSpec;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_N_CAP: u64 = 1 << 20;
pub const DEFAULT_SEED: u64 = 20261014;
pub const DEFAULT_REPLICAS: u64 = 100_000;
pub const DEFAULT_MAX_STEPS: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Tails,
    Dseries,
    Exact,
    Simulate,
    Classify,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Query {
    P,
    Q,
    Q1,
    Q2,
    H,
    Eta,
    Skip,
    Joint,
    Ab,
    Escape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Symbolic for `theorem2`, numeric otherwise.
    #[default]
    Auto,
    Symbolic,
    Numeric,
    Recurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub spec: PerturbationSpec,
    pub tol: f64,
    pub n_cap: u64,
    pub seed: u64,
    pub replicas: u64,
    pub max_steps: u64,
    pub levels: Vec<u64>,
    pub k: Vec<u64>,
    pub j: Vec<u64>,
    pub a: Option<u64>,
    pub b: Option<u64>,
    pub c: Option<u64>,
    pub n_lo: u64,
    pub n_hi: u64,
    pub step: u64,
    pub query: Option<Query>,
    pub method: Method,
    pub delta: f64,
    pub eps: f64,
    pub series: bool,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("--config", e.to_string()))
    }
}

/// A configuration problem, tied to the flag or field at fault.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Flags shared by all subcommands; unset values take per-command defaults.
#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// Perturbation spec: inline JSON (starting with `{`) or a file path.
    #[arg(long)]
    pub spec: Option<String>,
    /// Relative tolerance for D limits.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Largest index summed directly for D limits.
    #[arg(long = "n-cap")]
    pub n_cap: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Step budget per simulated walk.
    #[arg(long = "max-steps")]
    pub max_steps: Option<u64>,
    /// Target levels for growth tables (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<u64>,
    /// Layer or start indices (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<u64>,
    /// Second layer indices (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub j: Vec<u64>,
    #[arg(long)]
    pub a: Option<u64>,
    #[arg(long)]
    pub b: Option<u64>,
    #[arg(long)]
    pub c: Option<u64>,
    /// Lower end of the index range.
    #[arg(long = "n-lo")]
    pub n_lo: Option<u64>,
    /// Upper end of the index range.
    #[arg(long = "n-hi")]
    pub n_hi: Option<u64>,
    /// Grid step for `verify`.
    #[arg(long)]
    pub step: Option<u64>,
    #[arg(long, value_enum)]
    pub query: Option<Query>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Probe value for the side condition `D(n) <= delta n ln n`.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Slack in the pair bounds.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Emit the criterion series instead of the D table.
    #[arg(long)]
    pub series: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_spec(arg: Option<&str>) -> Result<PerturbationSpec, ConfigError> {
    let arg = arg.ok_or_else(|| ConfigError::new("--spec", "required"))?;
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| ConfigError::new("--spec", format!("cannot read `{arg}`: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| ConfigError::new("--spec", e.to_string()))
}

impl CommonArgs {
    /// Fills defaults for `command` and checks the flags it needs.
    pub fn resolve(&self, command: Command) -> Result<RunConfig, ConfigError> {
        let spec = parse_spec(self.spec.as_deref())?;
        let (n_lo, n_hi, step) = match command {
            Command::Classify => (1000, 100_000, 1),
            Command::Verify => (50, 1000, 50),
            _ => (1, 1000, 1),
        };
        let k = if self.k.is_empty() && command == Command::Verify { vec![30, 50, 100] } else { self.k.clone() };
        let cfg = RunConfig {
            command,
            spec,
            tol: self.tol.unwrap_or(DEFAULT_TOL),
            n_cap: self.n_cap.unwrap_or(DEFAULT_N_CAP),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            replicas: self.replicas.unwrap_or(DEFAULT_REPLICAS),
            max_steps: self.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
            levels: self.levels.clone(),
            k,
            j: self.j.clone(),
            a: self.a,
            b: self.b,
            c: self.c,
            n_lo: self.n_lo.unwrap_or(n_lo),
            n_hi: self.n_hi.unwrap_or(n_hi),
            step: self.step.unwrap_or(step),
            query: self.query,
            method: self.method.unwrap_or_default(),
            delta: self.delta.unwrap_or(1.0),
            eps: self.eps.unwrap_or(0.05),
            series: self.series,
            format: self.format.unwrap_or_default(),
            out: self.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(ConfigError::new("--tol", format!("must lie in (0, 1), got {}", self.tol)));
        }
        if self.n_lo > self.n_hi {
            return Err(ConfigError::new("--n-lo", format!("{} exceeds --n-hi {}", self.n_lo, self.n_hi)));
        }
        if self.replicas == 0 {
            return Err(ConfigError::new("--replicas", "must be at least 1"));
        }
        if self.step == 0 {
            return Err(ConfigError::new("--step", "must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(ConfigError::new("--eps", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(ConfigError::new("--delta", "must be positive"));
        }
        match self.command {
            Command::Exact => {
                let q = self.query.ok_or_else(|| ConfigError::new("--query", "required for `exact`"))?;
                let need = |v: Option<u64>, name: &str| {
                    v.map(|_| ()).ok_or_else(|| ConfigError::new(name, format!("required for query `{}`", query_name(q))))
                };
                match q {
                    Query::P | Query::Q | Query::Q1 | Query::Q2 => {
                        need(self.a, "--a")?;
                        need(self.b, "--b")?;
                        need(self.c, "--c")?;
                    }
                    Query::Escape => {
                        need(self.a, "--a")?;
                        need(self.b, "--b")?;
                    }
                    Query::H | Query::Skip if self.k.is_empty() => {
                        return Err(ConfigError::new("--k", "required"));
                    }
                    Query::Eta | Query::Joint | Query::Ab if self.k.is_empty() || self.j.is_empty() => {
                        return Err(ConfigError::new(if self.k.is_empty() { "--k" } else { "--j" }, "required"));
                    }
                    _ => {}
                }
            }
            Command::Simulate if self.levels.is_empty() && self.k.is_empty() => {
                return Err(ConfigError::new("--levels", "`simulate` needs --levels (growth) or --k (skip frequencies)"));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn query_name(q: Query) -> &'static str {
    match q {
        Query::P => "p",
        Query::Q => "q",
        Query::Q1 => "q1",
        Query::Q2 => "q2",
        Query::H => "h",
        Query::Eta => "eta",
        Query::Skip => "skip",
        Query::Joint => "joint",
        Query::Ab => "ab",
        Query::Escape => "escape",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(spec: &str) -> CommonArgs {
        CommonArgs { spec: Some(spec.into()), ..Default::default() }
    }

    #[test]
    fn canonical_round_trip() {
        let mut a = args(r#"{"family":"theorem2","beta":2}"#);
        a.levels = vec![1024, 2048];
        a.format = Some(Format::Csv);
        let cfg = a.resolve(Command::Simulate).unwrap();
        let text = cfg.to_canonical_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn errors_name_the_field() {
        let e = args(r#"{"family":"theorem2","bta":2}"#).resolve(Command::Tails).unwrap_err();
        assert_eq!(e.field, "--spec");
        assert!(e.message.contains("bta"));
        let e = args(r#"{"family":"zero"}"#).resolve(Command::Exact).unwrap_err();
        assert_eq!(e.field, "--query");
        let mut a = args(r#"{"family":"zero"}"#);
        a.query = Some(Query::P);
        a.a = Some(1);
        assert_eq!(a.resolve(Command::Exact).unwrap_err().field, "--b");
        let e = RunConfig::from_json(r#"{"command":"tails"}"#).unwrap_err();
        assert_eq!(e.field, "--config");
    }

    #[test]
    fn per_command_defaults() {
        let v = args(r#"{"family":"zero"}"#).resolve(Command::Verify).unwrap();
        assert_eq!((v.n_lo, v.n_hi, v.step, v.k.clone()), (50, 1000, 50, vec![30, 50, 100]));
        let c = args(r#"{"family":"zero"}"#).resolve(Command::Classify).unwrap();
        assert_eq!((c.n_lo, c.n_hi), (1000, 100_000));
    }
}
