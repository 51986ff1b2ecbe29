//! Run specifications and their flat `key=value` configuration format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ncgal::experiments::{published_grid, small_grid};
use ncgal::{Dims, Family};
use thiserror::Error;

/// Prefix of the environment variables that override configuration keys,
/// e.g. `NCGAL_BENCH_EPS`.
pub const ENV_PREFIX: &str = "NCGAL_BENCH_";

/// Keys accepted in configuration files, in canonical output order.
pub const KEYS: [&str; 11] = [
    "family", "grid", "small", "instances", "seed", "solvers", "eps", "eps2", "oracle", "workers", "out",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("invalid value for `{key}`: {reason}")]
    Value { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Solver {
    BarrierAl,
    Sparsa,
}

impl Solver {
    pub const ALL: [Solver; 2] = [Solver::BarrierAl, Solver::Sparsa];

    pub fn name(self) -> &'static str {
        match self {
            Solver::BarrierAl => "barrier_al",
            Solver::Sparsa => "sparsa",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown solver `{s}` (expected barrier_al or sparsa)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleChoice {
    Det,
    Rand,
}

impl OracleChoice {
    pub fn name(self) -> &'static str {
        match self {
            OracleChoice::Det => "det",
            OracleChoice::Rand => "rand",
        }
    }
}

impl FromStr for OracleChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "det" => Ok(OracleChoice::Det),
            "rand" => Ok(OracleChoice::Rand),
            _ => Err(format!("unknown oracle `{s}` (expected det or rand)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub families: Vec<Family>,
    /// Explicit cells; when absent each family uses its published grid.
    pub grid: Option<Vec<Dims>>,
    /// Restrict published grids to `n ≤ 40`.
    pub small: bool,
    pub instances: usize,
    pub seed: u64,
    pub solvers: Vec<Solver>,
    pub eps: f64,
    pub eps2: f64,
    pub oracle: OracleChoice,
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            grid: None,
            small: false,
            instances: 10,
            seed: 0,
            solvers: Solver::ALL.to_vec(),
            eps: 1e-4,
            eps2: 1e-2,
            oracle: OracleChoice::Det,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            out: PathBuf::from("bench-out"),
        }
    }
}

fn value_err(key: &'static str, reason: impl Into<String>) -> SpecError {
    SpecError::Value {
        key,
        reason: reason.into(),
    }
}

fn parse_list<T: FromStr<Err = String>>(key: &'static str, raw: &str) -> Result<Vec<T>, SpecError> {
    let items = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| value_err(key, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err(value_err(key, "list is empty"));
    }
    Ok(items)
}

fn parse_num<T: FromStr>(key: &'static str, raw: &str) -> Result<T, SpecError> {
    raw.trim()
        .parse()
        .map_err(|_| value_err(key, format!("cannot parse `{raw}`")))
}

impl RunSpec {
    /// Builds a spec from string settings layered over the defaults.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<Self, SpecError> {
        let mut spec = RunSpec::default();
        for (key, raw) in settings {
            match key.as_str() {
                "family" => {
                    spec.families = if raw.trim() == "all" {
                        Family::ALL.to_vec()
                    } else {
                        parse_list("family", raw)?
                    }
                }
                "grid" => spec.grid = Some(parse_list("grid", raw)?),
                "small" => spec.small = parse_num::<bool>("small", raw)?,
                "instances" => spec.instances = parse_num("instances", raw)?,
                "seed" => spec.seed = parse_num("seed", raw)?,
                "solvers" => spec.solvers = parse_list("solvers", raw)?,
                "eps" => spec.eps = parse_num("eps", raw)?,
                "eps2" => spec.eps2 = parse_num("eps2", raw)?,
                "oracle" => spec.oracle = raw.trim().parse().map_err(|e| value_err("oracle", e))?,
                "workers" => spec.workers = parse_num("workers", raw)?,
                "out" => spec.out = PathBuf::from(raw.trim()),
                other => return Err(SpecError::UnknownKey(other.to_string())),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.instances == 0 {
            return Err(value_err("instances", "must be positive"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(value_err("eps", "must lie in (0, 1)"));
        }
        if self.eps2.is_nan() || self.eps2 <= 0.0 {
            return Err(value_err("eps2", "must be positive"));
        }
        if self.workers == 0 {
            return Err(value_err("workers", "must be positive"));
        }
        if self.families.is_empty() || self.solvers.is_empty() {
            return Err(value_err("solvers", "families and solvers must be nonempty"));
        }
        Ok(())
    }

    /// Every `(family, dims)` cell in run order.
    pub fn cells(&self) -> Vec<(Family, Dims)> {
        let mut cells = Vec::new();
        for &family in &self.families {
            let dims = match (&self.grid, self.small) {
                (Some(grid), _) => grid.clone(),
                (None, true) => small_grid(family),
                (None, false) => published_grid(family),
            };
            cells.extend(dims.into_iter().map(|d| (family, d)));
        }
        cells
    }

    /// The spec as `key=value` lines, readable by [`parse_config`].
    pub fn to_config(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        line("family", join(self.families.iter().map(|f| f.to_string()).collect()));
        if let Some(grid) = &self.grid {
            line("grid", join(grid.iter().map(|d| d.to_string()).collect()));
        }
        line("small", self.small.to_string());
        line("instances", self.instances.to_string());
        line("seed", self.seed.to_string());
        line("solvers", join(self.solvers.iter().map(|s| s.to_string()).collect()));
        line("eps", format!("{:e}", self.eps));
        line("eps2", format!("{:e}", self.eps2));
        line("oracle", self.oracle.name().to_string());
        line("out", self.out.display().to_string());
        out
    }
}

/// Parses a flat configuration file: one `key=value` per line, `#` comments
/// and blank lines ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, SpecError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| SpecError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(SpecError::UnknownKey(key.to_string()));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip() {
        let spec = RunSpec {
            families: vec![Family::NmfSphere],
            grid: Some(vec![Dims::new(20, 2, 5)]),
            instances: 3,
            seed: 7,
            solvers: vec![Solver::Sparsa],
            eps: 1e-3,
            ..RunSpec::default()
        };
        let back = RunSpec::from_settings(&parse_config(&spec.to_config()).unwrap()).unwrap();
        assert_eq!(back.cells(), spec.cells());
        assert_eq!((back.instances, back.seed, back.eps), (3, 7, 1e-3));
        assert_eq!(back.solvers, vec![Solver::Sparsa]);
    }

    #[test]
    fn unknown_solver_is_rejected() {
        let mut map = BTreeMap::new();
        map.insert("solvers".to_string(), "newton".to_string());
        assert!(matches!(
            RunSpec::from_settings(&map),
            Err(SpecError::Value { key: "solvers", .. })
        ));
    }

    #[test]
    fn config_syntax_errors_carry_line_numbers() {
        assert_eq!(
            parse_config("# header\n\neps 1e-4\n"),
            Err(SpecError::Syntax {
                line: 3,
                text: "eps 1e-4".to_string()
            })
        );
        assert_eq!(parse_config("colour=red"), Err(SpecError::UnknownKey("colour".into())));
    }

    #[test]
    fn small_flag_filters_published_grid() {
        let spec = RunSpec {
            families: vec![Family::Recovery],
            small: true,
            ..RunSpec::default()
        };
        assert_eq!(spec.cells().len(), 4);
        assert!(spec.cells().iter().all(|(_, d)| d.n <= 40));
    }
}
