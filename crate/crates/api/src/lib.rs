//! Request and response bodies of the mmhybrid HTTP service.
//!
//! Runs are submitted with `POST /runs` and complete in the background:
//!
//! | method | path                     | body / result                     |
//! |--------|--------------------------|-----------------------------------|
//! | GET    | `/health`                | [`Health`]                        |
//! | POST   | `/runs`                  | [`RunConfig`] -> [`RunSubmitted`] |
//! | GET    | `/runs`                  | `Vec<JobStatus>`                  |
//! | GET    | `/runs/{id}`             | [`JobStatus`]                     |
//! | DELETE | `/runs/{id}`             | cancels, [`JobStatus`]            |
//! | GET    | `/runs/{id}/record`      | [`RunRecord`]                     |
//! | GET    | `/runs/{id}/csv/{table}` | CSV text, see [`CsvKind`]         |
//! | POST   | `/maxwellian`            | [`MaxwellianRequest`]             |
//! | GET    | `/stencil/{order}`       | [`StencilRow`]                    |
//! | POST   | `/remainder`             | [`RemainderRequest`]              |
//! | POST   | `/decay-rate`            | [`DecayRateRequest`]              |
//!
//! Every failure carries an [`ApiError`] body.

use std::fmt;

use mmhybrid_core::Error;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub use mmhybrid_core::config::RunConfig;
pub use mmhybrid_core::output::CsvKind;
pub use mmhybrid_core::run::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Rejected configuration or request body.
    Config,
    /// Well-formed request outside an operation's domain.
    InvalidInput,
    /// The state became NaN or infinite.
    Numerical,
    Cancelled,
    NotFound,
    /// The resource exists but is not ready, e.g. a record of a running job.
    Conflict,
    /// Too many retained jobs still queued or running.
    Overloaded,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
    /// Step at which a numerical failure or a cancellation happened.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            step: None,
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        let (kind, step) = match e {
            Error::Config(_) => (ErrorKind::Config, None),
            Error::InvalidInput(_) => (ErrorKind::InvalidInput, None),
            Error::NonFinite { step, .. } => (ErrorKind::Numerical, Some(*step)),
            Error::Cancelled { step } => (ErrorKind::Cancelled, Some(*step)),
            Error::Io(_) => (ErrorKind::Internal, None),
        };
        Self {
            kind,
            message: e.to_string(),
            step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSubmitted {
    pub id: Uuid,
    /// Non-fatal findings of the config validation.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(
            self,
            JobState::Succeeded | JobState::Failed | JobState::Cancelled
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub steps_done: u64,
    pub steps_total: u64,
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub stepping_seconds: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub relative_mass_drift: f64,
    pub max_abs_delta_m: f64,
    pub all_fluid_since: Option<f64>,
    pub min_fluid_run: Option<usize>,
    /// Run-length encoded labels at the end of a hybrid run.
    pub final_labels: Option<String>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            steps: r.timing.steps,
            stepping_seconds: r.timing.stepping_seconds,
            initial_mass: r.initial_mass,
            final_mass: r.final_mass,
            relative_mass_drift: r.relative_mass_drift(),
            max_abs_delta_m: r.max_abs_delta_m,
            all_fluid_since: r.all_fluid_since,
            min_fluid_run: r.min_fluid_run,
            final_labels: r.cell_trace.last().map(|row| row.labels.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: Uuid,
    pub state: JobState,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub progress: Progress,
    pub summary: Option<RunSummary>,
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxwellianRequest {
    pub nv: usize,
    pub v_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maxwellian {
    pub v_centers: Vec<f64>,
    pub values: Vec<f64>,
    pub m0: f64,
    pub m2: f64,
    pub m4: f64,
    pub m1p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StencilRow {
    pub order: usize,
    /// `(numerator, denominator)` for offsets -3..=3.
    pub fractions: Vec<(i64, i64)>,
    pub coefficients: Vec<f64>,
}

/// Remainder of a density on a periodic mesh of `rho.len()` cells over
/// `[0, x_star]`. Missing field samples default to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderRequest {
    pub rho: Vec<f64>,
    pub x_star: f64,
    /// One value per cell, or a single value broadcast to every cell.
    pub eps: Vec<f64>,
    #[serde(default)]
    pub e: Option<Vec<f64>>,
    #[serde(default)]
    pub de: Option<Vec<f64>>,
    #[serde(default)]
    pub d2e: Option<Vec<f64>>,
    #[serde(default)]
    pub d3e: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Remainder {
    pub x_centers: Vec<f64>,
    pub remainder: Vec<f64>,
}

/// Log-linear fit of `(t, norm)` samples. Without a window the default for
/// `eps` is used; `floor` ends the window where the norm first drops below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRateRequest {
    pub series: Vec<(f64, f64)>,
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRate {
    pub slope: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmhybrid_core::config::SolverKind;
    use mmhybrid_core::diagnostics::DiagnosticsRow;
    use mmhybrid_core::run::run;

    #[test]
    fn record_survives_json() {
        let cfg = RunConfig {
            solver: SolverKind::Hybrid,
            nx: 8,
            nv: 4,
            t_final: 0.001,
            diag_every: 3,
            snapshots: vec![0.0],
            ..Default::default()
        };
        let rec = run(&cfg).unwrap();
        let text = serde_json::to_string(&rec).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn nan_norms_travel_as_null() {
        let mut row = DiagnosticsRow {
            step: 3,
            t: 0.5,
            mass: 1.0,
            delta_m: 0.0,
            norm_f_minus_f: f64::NAN,
            norm_g: 0.25,
            norm_rho_minus_rho_f: f64::NAN,
            n_kinetic_cells: 2,
        };
        let text = serde_json::to_string(&row).unwrap();
        assert!(text.contains(r#""norm_f_minus_f":null"#), "{text}");
        let back: DiagnosticsRow = serde_json::from_str(&text).unwrap();
        assert!(back.norm_f_minus_f.is_nan() && back.norm_rho_minus_rho_f.is_nan());
        row.norm_f_minus_f = back.norm_f_minus_f;
        row.norm_rho_minus_rho_f = back.norm_rho_minus_rho_f;
        assert_eq!(back.norm_g, row.norm_g);
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"solver": "limit", "case": 2}"#).unwrap();
        assert_eq!(cfg.solver, SolverKind::Limit);
        assert_eq!(cfg.nx, RunConfig::default().nx);
    }

    #[test]
    fn numerical_errors_keep_their_step() {
        let e = ApiError::from(&Error::NonFinite { step: 7, time: 0.1 });
        assert_eq!((e.kind, e.step), (ErrorKind::Numerical, Some(7)));
        let text = serde_json::to_string(&ApiError::new(ErrorKind::Config, "x")).unwrap();
        assert!(!text.contains("step"));
    }
}
