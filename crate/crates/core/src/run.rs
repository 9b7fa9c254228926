//! Run orchestration: builds the problem, steps the selected solver and
//! records diagnostics, snapshots and timings.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SolverKind};
use crate::coupling::{DomainDecomposition, HybridSolver};
use crate::diagnostics::{reconstruct_f, state_norms, total_mass, DiagnosticsRow};
use crate::error::{Error, Result};
use crate::kinetic::{KineticSolver, KineticState, LimitSolver};
use crate::scenario::Problem;

/// Shared handle to observe and cancel a running job.
#[derive(Debug, Default)]
pub struct RunControl {
    cancel: AtomicBool,
    steps_done: AtomicU64,
    steps_total: AtomicU64,
}

impl RunControl {
    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    /// `(steps done, steps planned)`.
    pub fn progress(&self) -> (u64, u64) {
        (
            self.steps_done.load(Ordering::Relaxed),
            self.steps_total.load(Ordering::Relaxed),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub rho: Vec<f64>,
    /// Reconstructed distribution on primal x velocity cells, row-major by x.
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTraceRow {
    pub step: u64,
    pub t: f64,
    /// Run-length encoded labels, e.g. `40K60F`.
    pub labels: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Wall-clock seconds spent inside solver steps only.
    pub stepping_seconds: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub x_centers: Vec<f64>,
    pub v_centers: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub cell_trace: Vec<CellTraceRow>,
    pub timing: Timing,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest per-step `|delta_m|` over every step, recorded or not.
    pub max_abs_delta_m: f64,
    /// Time from which the decomposition stayed all fluid to the end.
    pub all_fluid_since: Option<f64>,
    /// Narrowest fluid run seen after any decomposition update.
    pub min_fluid_run: Option<usize>,
    pub final_state: KineticState,
}

impl RunRecord {
    pub fn relative_mass_drift(&self) -> f64 {
        (self.final_mass - self.initial_mass).abs() / self.initial_mass.abs()
    }

    /// `(t, ||f - F||)` pairs on recorded rows.
    pub fn norm_series(&self) -> Vec<(f64, f64)> {
        self.diagnostics
            .iter()
            .map(|r| (r.t, r.norm_f_minus_f))
            .collect()
    }
}

enum Stepper {
    Kinetic(KineticSolver),
    Limit(LimitSolver),
    Hybrid(Box<HybridSolver>),
}

pub fn run(config: &RunConfig) -> Result<RunRecord> {
    run_with_control(config, &RunControl::default())
}

pub fn run_with_control(config: &RunConfig, control: &RunControl) -> Result<RunRecord> {
    let warnings = config.validate()?;
    let problem = Problem::new(config.case, config.epsilon, config.build_mesh()?, config.dt)?;
    let Problem {
        disc,
        indicators,
        initial,
        equilibrium,
        ..
    } = problem;
    let mesh = disc.mesh.clone();
    let maxw = disc.maxw.clone();
    let (nx, dt) = (mesh.nx, config.dt);

    let mut state = initial;
    let mut stepper = match config.solver {
        SolverKind::Kinetic => Stepper::Kinetic(KineticSolver::new(disc)),
        SolverKind::Limit => {
            state.g.fill(0.0);
            Stepper::Limit(LimitSolver::new(disc))
        }
        SolverKind::Hybrid => {
            let dec = DomainDecomposition::all_kinetic(nx, config.eta0, config.delta0)?;
            Stepper::Hybrid(Box::new(HybridSolver::new(disc, indicators, dec)?))
        }
    };

    let n_steps = config.n_steps();
    control.steps_total.store(n_steps, Ordering::Relaxed);
    control.steps_done.store(0, Ordering::Relaxed);

    let mut snapshot_steps: Vec<u64> = config
        .snapshots
        .iter()
        .map(|t| (t / dt).round() as u64)
        .filter(|&s| s <= n_steps)
        .collect();
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();
    let mut next_snapshot = snapshot_steps.iter().peekable();

    let initial_mass = total_mass(&state.rho, &mesh);
    let mut diagnostics = Vec::new();
    let mut snapshots = Vec::new();
    let mut cell_trace = Vec::new();
    let mut max_abs_delta_m: f64 = 0.0;
    let mut stepping = 0.0;
    let mut all_fluid_since = None;
    let mut min_fluid_run: Option<usize> = None;
    let mut rho_old = state.rho.clone();

    let n_kinetic = |stepper: &Stepper| match stepper {
        Stepper::Kinetic(_) => nx,
        Stepper::Limit(_) => 0,
        Stepper::Hybrid(h) => h.decomposition().n_kinetic(),
    };
    let record_row = |state: &KineticState, delta_m: f64, n_kin: usize| {
        let norms = state_norms(state, &equilibrium, &mesh, &maxw);
        DiagnosticsRow {
            step: state.step,
            t: state.time,
            mass: total_mass(&state.rho, &mesh),
            delta_m,
            norm_f_minus_f: norms.f_minus_f,
            norm_g: norms.g,
            norm_rho_minus_rho_f: norms.rho_minus_rho_f,
            n_kinetic_cells: n_kin,
        }
    };
    let take_snapshot = |state: &KineticState| Snapshot {
        step: state.step,
        t: state.time,
        rho: state.rho.clone(),
        f: reconstruct_f(state, &mesh, &maxw),
    };

    diagnostics.push(record_row(&state, 0.0, n_kinetic(&stepper)));
    if next_snapshot.next_if_eq(&&0).is_some() {
        snapshots.push(take_snapshot(&state));
    }
    if let Stepper::Hybrid(h) = &stepper {
        cell_trace.push(CellTraceRow {
            step: 0,
            t: 0.0,
            labels: h.decomposition().rle(),
        });
    }

    for n in 1..=n_steps {
        if control.is_cancelled() {
            return Err(Error::Cancelled { step: state.step });
        }
        rho_old.copy_from_slice(&state.rho);
        let started = Instant::now();
        let hybrid_delta = match &mut stepper {
            Stepper::Kinetic(s) => {
                s.step(&mut state);
                None
            }
            Stepper::Limit(s) => {
                s.step(&mut state);
                None
            }
            Stepper::Hybrid(s) => Some(s.step(&mut state).delta_m),
        };
        stepping += started.elapsed().as_secs_f64();

        let delta_m = hybrid_delta.unwrap_or_else(|| {
            state
                .rho
                .iter()
                .zip(&rho_old)
                .map(|(a, b)| a - b)
                .sum::<f64>()
                * mesh.dx
                / dt
        });
        max_abs_delta_m = max_abs_delta_m.max(delta_m.abs());

        let full = n % config.diag_every == 0 || n == n_steps;
        if state.rho.iter().any(|r| !r.is_finite()) || (full && !state.is_finite()) {
            return Err(Error::NonFinite {
                step: state.step,
                time: state.time,
            });
        }

        if let Stepper::Hybrid(h) = &stepper {
            let dec = h.decomposition();
            let changed = h.labels_changed();
            if changed {
                if let Some(w) = dec.shortest_fluid_run() {
                    min_fluid_run = Some(min_fluid_run.map_or(w, |m| m.min(w)));
                }
                all_fluid_since = dec.is_all_fluid().then_some(state.time);
            }
            if changed || full {
                cell_trace.push(CellTraceRow {
                    step: state.step,
                    t: state.time,
                    labels: dec.rle(),
                });
            }
        }
        if full {
            diagnostics.push(record_row(&state, delta_m, n_kinetic(&stepper)));
        }
        if next_snapshot.next_if_eq(&&n).is_some() {
            snapshots.push(take_snapshot(&state));
        }
        control.steps_done.store(n, Ordering::Relaxed);
    }

    Ok(RunRecord {
        config: config.clone(),
        warnings,
        x_centers: mesh.x_centers.clone(),
        v_centers: mesh.v_centers.clone(),
        snapshots,
        diagnostics,
        cell_trace,
        timing: Timing {
            stepping_seconds: stepping,
            steps: n_steps,
        },
        initial_mass,
        final_mass: total_mass(&state.rho, &mesh),
        max_abs_delta_m,
        all_fluid_since,
        min_fluid_run,
        final_state: state,
    })
}

/// Median of the stepping times of `repeats` identical runs.
pub fn median_stepping_seconds(config: &RunConfig, repeats: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        times.push(run(config)?.timing.stepping_seconds);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}
