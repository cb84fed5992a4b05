//! Validation simulations: one background worker draining a bounded FIFO
//! queue, with pollable job status.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use nonwoven::explore::{ObjectiveSpec, Status};
use nonwoven::homogeneity::{deposit_profile, render_image, CvProfile, BASE_RESOLUTION_MM};
use nonwoven::laydown::{deposit_sample, LaydownConfig};
use nonwoven::params::{ProcessParams, SampleWindow};
use nonwoven::{Error, Result};

use crate::store::CandidateStore;

/// Runs one validation simulation and writes its image.
pub trait Backend: Send + Sync {
    fn simulate(
        &self,
        params: &ProcessParams,
        window: &SampleWindow,
        seed: u64,
        image: &Path,
        progress: &dyn Fn(f64),
    ) -> Result<CvProfile>;
}

/// The laydown simulator; the image is the base-grid mass map as PGM.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaydownBackend {
    pub config: LaydownConfig,
}

impl Backend for LaydownBackend {
    fn simulate(
        &self,
        params: &ProcessParams,
        window: &SampleWindow,
        seed: u64,
        image: &Path,
        progress: &dyn Fn(f64),
    ) -> Result<CvProfile> {
        let dep = deposit_sample(params, window, seed, &self.config, BASE_RESOLUTION_MM)?;
        progress(0.8);
        let profile = deposit_profile(&dep)?;
        progress(0.9);
        render_image(&dep.grid(BASE_RESOLUTION_MM)?, image)?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: u64,
    pub candidate_id: u64,
    pub state: JobState,
    pub progress: f64,
    pub message: Option<String>,
    /// |simulated - predicted| / simulated objective, once finished.
    pub objective_gap: Option<f64>,
}

struct Job {
    job_id: u64,
    candidate_id: u64,
    params: ProcessParams,
    window: SampleWindow,
    seed: u64,
}

pub struct JobQueue {
    tx: mpsc::Sender<Job>,
    jobs: Arc<Mutex<HashMap<u64, JobStatus>>>,
    next: AtomicU64,
}

impl JobQueue {
    /// Spawns the worker on the current tokio runtime.
    pub fn start(
        depth: usize,
        backend: Arc<dyn Backend>,
        store: Arc<Mutex<CandidateStore>>,
        image_dir: PathBuf,
        objective: ObjectiveSpec,
    ) -> Self {
        let (tx, mut rx) = mpsc::channel::<Job>(depth.max(1));
        let jobs: Arc<Mutex<HashMap<u64, JobStatus>>> = Arc::default();
        let table = jobs.clone();
        tokio::spawn(async move {
            while let Some(job) = rx.recv().await {
                let table2 = table.clone();
                let backend = backend.clone();
                let store = store.clone();
                let image = image_dir.join(format!("candidate-{}.pgm", job.candidate_id));
                set(&table, job.job_id, |s| s.state = JobState::Running);
                let outcome = tokio::task::spawn_blocking(move || {
                    let progress = |f: f64| set(&table2, job.job_id, |s| s.progress = f);
                    let result = std::fs::create_dir_all(image.parent().unwrap_or(Path::new(".")))
                        .map_err(Error::from)
                        .and_then(|_| backend.simulate(&job.params, &job.window, job.seed, &image, &progress));
                    let mut st = store.lock().unwrap();
                    match result {
                        Ok(profile) => st
                            .update(job.candidate_id, Status::Simulated, |c| {
                                c.simulated = Some(profile.cv);
                                c.simulated_objective = Some(objective.value(&profile.cv));
                                c.image_path = image.file_name().map(|f| f.to_string_lossy().into_owned());
                            })
                            .map(|c| c.objective_gap()),
                        Err(e) => {
                            let _ = st.update(job.candidate_id, Status::Proposed, |_| {});
                            Err(e)
                        }
                    }
                })
                .await
                .unwrap_or_else(|e| Err(Error::InvalidArgument(format!("simulation task aborted: {e}"))));
                set(&table, job.job_id, |s| match outcome {
                    Ok(gap) => {
                        s.state = JobState::Succeeded;
                        s.progress = 1.0;
                        s.objective_gap = gap;
                    }
                    Err(e) => {
                        s.state = JobState::Failed;
                        s.message = Some(e.to_string());
                    }
                });
            }
        });
        JobQueue {
            tx,
            jobs,
            next: AtomicU64::new(1),
        }
    }

    /// Moves the candidate to `simulating` and enqueues its job. A full
    /// queue leaves the candidate untouched.
    pub fn submit(
        &self,
        store: &Mutex<CandidateStore>,
        candidate_id: u64,
        window: SampleWindow,
        seed: u64,
    ) -> Result<JobStatus> {
        let mut st = store.lock().unwrap();
        let c = st.get(candidate_id)?.clone();
        if c.status != Status::Proposed {
            return Err(Error::IllegalTransition {
                from: c.status.to_string(),
                to: Status::Simulating.to_string(),
            });
        }
        let permit = self
            .tx
            .try_reserve()
            .map_err(|_| Error::InvalidArgument("simulation queue is full; retry later".into()))?;
        st.update(candidate_id, Status::Simulating, |_| {})?;
        let job_id = self.next.fetch_add(1, Ordering::Relaxed);
        let status = JobStatus {
            job_id,
            candidate_id,
            state: JobState::Queued,
            progress: 0.0,
            message: None,
            objective_gap: None,
        };
        self.jobs.lock().unwrap().insert(job_id, status.clone());
        permit.send(Job {
            job_id,
            candidate_id,
            params: c.params,
            window,
            seed,
        });
        Ok(status)
    }

    pub fn status(&self, job_id: u64) -> Result<JobStatus> {
        self.jobs
            .lock()
            .unwrap()
            .get(&job_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("job {job_id}")))
    }
}

fn set(table: &Mutex<HashMap<u64, JobStatus>>, id: u64, f: impl FnOnce(&mut JobStatus)) {
    if let Some(s) = table.lock().unwrap().get_mut(&id) {
        f(s);
    }
}
