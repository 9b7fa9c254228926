//! In-memory job table. Each job runs on the blocking pool once it holds a
//! worker permit, so at most `workers` simulations step at a time.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};

use mmhybrid_api::{ApiError, ErrorKind, JobState, JobStatus, Progress, RunConfig, RunSummary};
use mmhybrid_core::run::{run_with_control, RunControl, RunRecord};
use tokio::sync::Semaphore;
use uuid::Uuid;

struct Job {
    config: RunConfig,
    warnings: Vec<String>,
    state: JobState,
    control: Arc<RunControl>,
    record: Option<Arc<RunRecord>>,
    error: Option<ApiError>,
}

impl Job {
    fn status(&self, id: Uuid) -> JobStatus {
        let (steps_done, steps_total) = self.control.progress();
        let steps_total = if steps_total == 0 {
            self.config.n_steps()
        } else {
            steps_total
        };
        JobStatus {
            id,
            state: self.state,
            config: self.config.clone(),
            warnings: self.warnings.clone(),
            progress: Progress {
                steps_done,
                steps_total,
            },
            summary: self.record.as_deref().map(RunSummary::from),
            error: self.error.clone(),
        }
    }
}

#[derive(Default)]
struct Table {
    jobs: HashMap<Uuid, Job>,
    /// Submission order, oldest first.
    order: VecDeque<Uuid>,
}

pub(crate) struct Jobs {
    table: Mutex<Table>,
    workers: Arc<Semaphore>,
    capacity: usize,
}

/// Outcome of looking up a finished record.
pub(crate) enum RecordLookup {
    Ready(Arc<RunRecord>),
    NotReady(JobState),
    Missing,
}

impl Jobs {
    pub(crate) fn new(workers: usize, capacity: usize) -> Self {
        Self {
            table: Mutex::default(),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            capacity: capacity.max(1),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Table> {
        // a panic while holding the lock leaves the table usable
        self.table.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a validated config and starts it in the background.
    pub(crate) fn submit(
        self: &Arc<Self>,
        config: RunConfig,
        warnings: Vec<String>,
    ) -> Result<Uuid, ApiError> {
        let id = Uuid::new_v4();
        let control = Arc::new(RunControl::default());
        {
            let mut t = self.lock();
            if t.jobs.len() >= self.capacity {
                let oldest_done = t
                    .order
                    .iter()
                    .position(|id| t.jobs[id].state.is_finished())
                    .ok_or_else(|| {
                        ApiError::new(
                            ErrorKind::Overloaded,
                            format!("{} jobs are queued or running", t.jobs.len()),
                        )
                    })?;
                let evicted = t.order.remove(oldest_done).expect("index in range");
                t.jobs.remove(&evicted);
            }
            t.jobs.insert(
                id,
                Job {
                    config: config.clone(),
                    warnings,
                    state: JobState::Queued,
                    control: control.clone(),
                    record: None,
                    error: None,
                },
            );
            t.order.push_back(id);
        }

        let jobs = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = jobs.workers.clone().acquire_owned().await else {
                return;
            };
            if !jobs.mark_running(id) {
                return;
            }
            tracing::info!(%id, solver = %config.solver, case = %config.case, "run started");
            let outcome =
                tokio::task::spawn_blocking(move || run_with_control(&config, &control)).await;
            let outcome = match outcome {
                Ok(result) => result.map_err(|e| ApiError::from(&e)),
                Err(join) => Err(ApiError::new(
                    ErrorKind::Internal,
                    format!("solver task failed: {join}"),
                )),
            };
            jobs.finish(id, outcome);
        });
        Ok(id)
    }

    /// Moves a queued job to running; `false` if it was cancelled meanwhile.
    fn mark_running(&self, id: Uuid) -> bool {
        let mut t = self.lock();
        match t.jobs.get_mut(&id) {
            Some(job) if job.state == JobState::Queued => {
                job.state = JobState::Running;
                true
            }
            _ => false,
        }
    }

    fn finish(&self, id: Uuid, outcome: Result<RunRecord, ApiError>) {
        let mut t = self.lock();
        let Some(job) = t.jobs.get_mut(&id) else {
            return;
        };
        match outcome {
            Ok(record) => {
                tracing::info!(%id, seconds = record.timing.stepping_seconds, "run finished");
                job.state = JobState::Succeeded;
                job.record = Some(Arc::new(record));
            }
            Err(e) => {
                tracing::warn!(%id, error = %e, "run failed");
                job.state = if e.kind == ErrorKind::Cancelled {
                    JobState::Cancelled
                } else {
                    JobState::Failed
                };
                job.error = Some(e);
            }
        }
    }

    pub(crate) fn status(&self, id: Uuid) -> Option<JobStatus> {
        self.lock().jobs.get(&id).map(|job| job.status(id))
    }

    pub(crate) fn list(&self) -> Vec<JobStatus> {
        let t = self.lock();
        t.order.iter().map(|id| t.jobs[id].status(*id)).collect()
    }

    /// Requests cancellation. A queued job is cancelled at once, a running
    /// one stops at its next step.
    pub(crate) fn cancel(&self, id: Uuid) -> Option<JobStatus> {
        let mut t = self.lock();
        let job = t.jobs.get_mut(&id)?;
        job.control.cancel();
        if job.state == JobState::Queued {
            job.state = JobState::Cancelled;
            job.error = Some(ApiError::new(
                ErrorKind::Cancelled,
                "run cancelled before it started",
            ));
        }
        Some(job.status(id))
    }

    pub(crate) fn record(&self, id: Uuid) -> RecordLookup {
        match self.lock().jobs.get(&id) {
            None => RecordLookup::Missing,
            Some(job) => match &job.record {
                Some(r) => RecordLookup::Ready(r.clone()),
                None => RecordLookup::NotReady(job.state),
            },
        }
    }
}
