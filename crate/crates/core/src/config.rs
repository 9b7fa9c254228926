//! Run configuration and its flat `key = value` file format.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::kinetic::FieldConfig;
use crate::mesh::{build_mesh, DiscreteMaxwellian, PhaseMesh};
use crate::scenario::{Case, EpsProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Kinetic,
    Limit,
    Hybrid,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Kinetic => "kinetic",
            SolverKind::Limit => "limit",
            SolverKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kinetic" => Ok(SolverKind::Kinetic),
            "limit" => Ok(SolverKind::Limit),
            "hybrid" => Ok(SolverKind::Hybrid),
            other => Err(config_err(format!(
                "unknown solver {other:?}, expected kinetic, limit or hybrid"
            ))),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub case: Case,
    pub epsilon: EpsProfile,
    pub nx: usize,
    pub nv: usize,
    pub x_star: f64,
    pub v_star: f64,
    pub dt: f64,
    pub t_final: f64,
    pub eta0: f64,
    pub delta0: f64,
    /// Directory receiving the CSV files, if any.
    pub out: Option<PathBuf>,
    pub snapshots: Vec<f64>,
    pub seed: u64,
    /// Steps between two diagnostics rows.
    pub diag_every: u64,
    /// Accept a time step above the parabolic bound (with a warning).
    pub allow_unstable_dt: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Kinetic,
            case: Case::One,
            epsilon: EpsProfile::Constant { value: 1.0 },
            nx: 100,
            nv: 256,
            x_star: std::f64::consts::PI,
            v_star: 8.0,
            dt: 1e-4,
            t_final: 5.0,
            eta0: 1e-4,
            delta0: 1e-4,
            out: None,
            snapshots: vec![0.0, 0.2, 1.0, 5.0],
            seed: 0,
            diag_every: 1,
            allow_unstable_dt: false,
        }
    }
}

const KEYS: [&str; 16] = [
    "solver",
    "case",
    "epsilon",
    "nx",
    "nv",
    "x_star",
    "v_star",
    "dt",
    "t_final",
    "eta0",
    "delta0",
    "out",
    "snapshots",
    "seed",
    "diag_every",
    "allow_unstable_dt",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(format!("{key}: cannot parse {value:?}")))
}

fn parse_times(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num("snapshots", s))
        .collect()
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "solver" => self.solver = v.parse()?,
            "case" => self.case = v.parse()?,
            "epsilon" | "eps_profile" => self.epsilon = v.parse()?,
            "nx" => self.nx = parse_num(key, v)?,
            "nv" => self.nv = parse_num(key, v)?,
            "x_star" => self.x_star = parse_num(key, v)?,
            "v_star" => self.v_star = parse_num(key, v)?,
            "dt" => self.dt = parse_num(key, v)?,
            "t_final" | "tfinal" => self.t_final = parse_num(key, v)?,
            "eta0" => self.eta0 = parse_num(key, v)?,
            "delta0" => self.delta0 = parse_num(key, v)?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "snapshots" => self.snapshots = parse_times(v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "diag_every" => self.diag_every = parse_num(key, v)?,
            "allow_unstable_dt" => self.allow_unstable_dt = parse_num(key, v)?,
            other => return Err(config_err(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| config_err(format!("line {}: {}", n + 1, strip(&e))))?;
        }
        Ok(cfg)
    }

    /// Text form that [`RunConfig::parse`] maps back to an identical config.
    pub fn to_kv(&self) -> String {
        let times: Vec<String> = self.snapshots.iter().map(|t| format!("{t:?}")).collect();
        let out = self
            .out
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let values = [
            self.solver.to_string(),
            self.case.to_string(),
            match self.epsilon {
                EpsProfile::Constant { value } => format!("{value:?}"),
                EpsProfile::ArctanBump => "arctan_bump".into(),
            },
            self.nx.to_string(),
            self.nv.to_string(),
            format!("{:?}", self.x_star),
            format!("{:?}", self.v_star),
            format!("{:?}", self.dt),
            format!("{:?}", self.t_final),
            format!("{:?}", self.eta0),
            format!("{:?}", self.delta0),
            out,
            times.join(","),
            self.seed.to_string(),
            self.diag_every.to_string(),
            self.allow_unstable_dt.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn build_mesh(&self) -> Result<PhaseMesh> {
        build_mesh(self.nx, self.nv, self.x_star, self.v_star)
    }

    /// Number of time steps, `round(t_final / dt)`.
    pub fn n_steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }

    /// Checks every field. Returns the warnings that do not stop a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let mesh = self.build_mesh()?;
        let positive = [
            ("dt", self.dt),
            ("x_star", self.x_star),
            ("v_star", self.v_star),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("{k} = {v} must be positive")));
            }
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(config_err(format!(
                "t_final = {} must be non-negative",
                self.t_final
            )));
        }
        if let EpsProfile::Constant { value } = self.epsilon {
            EpsProfile::constant(value)?;
        }
        for (k, v) in [("eta0", self.eta0), ("delta0", self.delta0)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("{k} = {v} must be non-negative")));
            }
        }
        if self.diag_every == 0 {
            return Err(config_err("diag_every must be at least 1"));
        }
        if let Some(t) = self
            .snapshots
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0))
        {
            return Err(config_err(format!(
                "snapshot time {t} must be non-negative"
            )));
        }
        let dropped: Vec<f64> = self
            .snapshots
            .iter()
            .copied()
            .filter(|&t| t > self.t_final + 0.5 * self.dt)
            .collect();
        if !dropped.is_empty() {
            warnings.push(format!(
                "snapshot times {dropped:?} lie beyond t_final = {} and are skipped",
                self.t_final
            ));
        }
        let bound = FieldConfig::parabolic_dt_bound(&mesh, &DiscreteMaxwellian::new(&mesh));
        if self.dt > bound {
            let msg = format!(
                "dt = {} exceeds the parabolic bound 0.25 dx^2 / m2 = {bound:.4e}",
                self.dt
            );
            if self.allow_unstable_dt {
                warnings.push(msg);
            } else {
                return Err(config_err(format!(
                    "{msg} (set allow_unstable_dt to run anyway)"
                )));
            }
        }
        if self.solver == SolverKind::Hybrid && (self.eta0 == 0.0 || self.delta0 == 0.0) {
            warnings
                .push("a zero threshold disables coupling: the hybrid run stays kinetic".into());
        }
        Ok(warnings)
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        assert!(cfg.validate().unwrap().is_empty());
        assert_eq!(cfg.n_steps(), 50_000);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig {
            solver: SolverKind::Hybrid,
            case: Case::Four,
            epsilon: EpsProfile::Constant { value: 0.1 + 0.2 },
            dt: 7.4e-5,
            out: Some("runs/a b".into()),
            snapshots: vec![0.0, 1.0 / 3.0],
            ..Default::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_kv()).unwrap(), cfg);
        cfg.epsilon = EpsProfile::ArctanBump;
        cfg.out = None;
        cfg.snapshots.clear();
        assert_eq!(RunConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn parse_skips_comments_and_reports_lines() {
        let cfg = RunConfig::parse("# run\n\nsolver = limit\ncase=2\n").unwrap();
        assert_eq!(cfg.solver, SolverKind::Limit);
        assert_eq!(cfg.case, Case::Two);
        let err = RunConfig::parse("nx = 10\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::parse("nx 10").is_err());
        assert!(RunConfig::parse("nx = ten").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = [
            ("nv", "5"),
            ("nx", "4"),
            ("dt", "0"),
            ("t_final", "-1"),
            ("eta0", "-1"),
            ("diag_every", "0"),
            ("dt", "1e-3"),
        ];
        for (k, v) in bad {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k} = {v} accepted");
        }
        assert!(RunConfig::default().set("case", "7").is_err());
        assert!(RunConfig::default().set("epsilon", "0").is_err());
    }

    #[test]
    fn unstable_dt_override_warns() {
        let mut cfg = RunConfig::default();
        cfg.nx = 200;
        cfg.dt = 7.4e-5;
        assert!(cfg.validate().is_err());
        cfg.allow_unstable_dt = true;
        let w = cfg.validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("parabolic"));
    }

    #[test]
    fn late_snapshots_are_reported() {
        let cfg = RunConfig {
            t_final: 1.0,
            ..Default::default()
        };
        let w = cfg.validate().unwrap();
        assert!(w.iter().any(|m| m.contains("5.0")));
    }
}
