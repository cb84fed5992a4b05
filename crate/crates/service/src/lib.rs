//! HTTP service for exploring the process space through a trained
//! surrogate and checking shortlisted settings by simulation.

pub mod api;
pub mod jobs;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use nonwoven::explore::ObjectiveSpec;
use nonwoven::params::{ParamRanges, SampleWindow};
use nonwoven::surrogates::TrainedSurrogate;
use nonwoven::Result;

pub use api::router;
pub use jobs::{Backend, JobQueue, JobState, JobStatus, LaydownBackend};
pub use store::CandidateStore;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model_path: Option<PathBuf>,
    pub store_dir: PathBuf,
    pub bind: SocketAddr,
    pub queue_depth: usize,
    /// Directory with the web UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Window of validation simulations unless a request names one.
    pub window: SampleWindow,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            model_path: None,
            store_dir: PathBuf::from("explorer-store"),
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            queue_depth: 16,
            static_dir: None,
            window: SampleWindow::desk(),
        }
    }
}

/// Shared by every handler. The model is read-only; candidate mutations go
/// through the store mutex.
pub struct AppState {
    pub model: Option<Arc<TrainedSurrogate>>,
    pub ranges: ParamRanges,
    pub objective: ObjectiveSpec,
    pub store: Arc<Mutex<CandidateStore>>,
    pub jobs: JobQueue,
    pub window: SampleWindow,
    pub image_dir: PathBuf,
}

impl AppState {
    /// Opens the store and starts the job worker; must run inside a tokio
    /// runtime.
    pub fn new(model: Option<TrainedSurrogate>, cfg: &ServiceConfig, backend: Arc<dyn Backend>) -> Result<Arc<Self>> {
        let store = Arc::new(Mutex::new(CandidateStore::open(&cfg.store_dir)?));
        let image_dir = cfg.store_dir.join("images");
        std::fs::create_dir_all(&image_dir)?;
        let objective = ObjectiveSpec::default();
        let jobs = JobQueue::start(cfg.queue_depth, backend, store.clone(), image_dir.clone(), objective);
        Ok(Arc::new(AppState {
            model: model.map(Arc::new),
            ranges: ParamRanges::default(),
            objective,
            store,
            jobs,
            window: cfg.window,
            image_dir,
        }))
    }
}

/// Loads the model (if configured) and serves until the process ends.
pub async fn serve(cfg: ServiceConfig) -> Result<()> {
    let model = match &cfg.model_path {
        Some(p) => Some(nonwoven::surrogates::load(p)?),
        None => None,
    };
    let state = AppState::new(model, &cfg, Arc::new(LaydownBackend::default()))?;
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    eprintln!("explorer listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
