//! Simulation campaigns: replicated runs over a design, persisted as CSV
//! with a JSON manifest, resumable after interruption.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogeneity::{deposit_profile, CvProfile, BASE_RESOLUTION_MM};
use crate::laydown::{deposit_sample, derive_seed, LaydownConfig};
use crate::params::{ProcessParams, SampleWindow};

use super::split::Split;

pub const CSV_HEADER: [&str; 16] = [
    "setting_id", "replicate", "sigma1_mm", "sigma2_mm", "A", "v", "n_per_m", "seed", "cv_0p5",
    "cv_1", "cv_2", "cv_5", "cv_10", "cv_20", "cv_50", "split",
];

const MANIFEST_VERSION: u32 = 1;

/// Anything that turns a setting into a CV profile. The laydown simulator
/// is the real implementation; tests substitute cheap stubs.
pub trait Simulator: Sync {
    fn profile(&self, params: &ProcessParams, window: &SampleWindow, seed: u64) -> Result<CvProfile>;

    /// Identifies the simulator and its configuration in campaign
    /// manifests, so a cache from a different model is never resumed.
    fn describe(&self) -> String;
}

/// The fiber laydown simulator followed by grid aggregation.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaydownSimulator {
    pub config: LaydownConfig,
}

impl Simulator for LaydownSimulator {
    fn profile(&self, params: &ProcessParams, window: &SampleWindow, seed: u64) -> Result<CvProfile> {
        let dep = deposit_sample(params, window, seed, &self.config, BASE_RESOLUTION_MM)?;
        deposit_profile(&dep)
    }

    fn describe(&self) -> String {
        format!(
            "laydown-ou/1 reference_length={} fiber_mass_per_length={} margin_sigmas={}",
            self.config.reference_length, self.config.fiber_mass_per_length, self.config.margin_sigmas
        )
    }
}

/// One simulated replicate. A failed simulation keeps its error message
/// instead of a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub setting_id: usize,
    pub replicate: usize,
    pub params: ProcessParams,
    pub seed: u64,
    pub outcome: std::result::Result<CvProfile, String>,
    pub split: Option<Split>,
}

impl CampaignRow {
    pub fn profile(&self) -> Option<&CvProfile> {
        self.outcome.as_ref().ok()
    }
}

/// Rows sorted by `(setting_id, replicate)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignDataset {
    pub rows: Vec<CampaignRow>,
}

/// What to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub points: Vec<ProcessParams>,
    pub window: SampleWindow,
    pub replicates: usize,
    pub seed: u64,
    /// Free-form description of how `points` were produced.
    pub design: String,
}

/// Seed of one replicate of one setting.
pub fn row_seed(campaign_seed: u64, setting_id: usize, replicate: usize) -> u64 {
    derive_seed(derive_seed(campaign_seed, setting_id as u64), replicate as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub code_version: String,
    pub simulator: String,
    pub design: String,
    pub window: SampleWindow,
    pub replicates: usize,
    pub seed: u64,
    pub settings: usize,
    /// Hex digest of the exact design points.
    pub points_digest: String,
}

impl Manifest {
    fn for_plan(plan: &CampaignPlan, sim: &dyn Simulator) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            simulator: sim.describe(),
            design: plan.design.clone(),
            window: plan.window,
            replicates: plan.replicates,
            seed: plan.seed,
            settings: plan.points.len(),
            points_digest: points_digest(&plan.points),
        }
    }

    fn same_campaign(&self, other: &Manifest) -> bool {
        self.format_version == other.format_version
            && self.simulator == other.simulator
            && self.window == other.window
            && self.replicates == other.replicates
            && self.seed == other.seed
            && self.points_digest == other.points_digest
    }
}

fn points_digest(points: &[ProcessParams]) -> String {
    // FNV-1a over the IEEE bits; collisions only matter for cache reuse.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in points {
        let mut x = p.to_array().to_vec();
        x.push(p.step_size.unwrap_or(-1.0));
        for v in x {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{:016x}-{}", h, points.len())
}

/// Paths of a campaign directory.
#[derive(Debug, Clone)]
pub struct CampaignStore {
    dir: PathBuf,
}

impl CampaignStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CampaignStore { dir: dir.into() }
    }

    pub fn csv_path(&self) -> PathBuf {
        self.dir.join("campaign.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

/// Options that do not affect results.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Settings simulated concurrently; 0 uses the rayon default.
    pub workers: usize,
    /// Settings per checkpoint when a store is given.
    pub checkpoint_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 0,
            checkpoint_every: 8,
        }
    }
}

/// Simulates every replicate of every setting. With a store, completed
/// settings already on disk are reused and progress is appended as it is
/// made; the final CSV is rewritten sorted, so its bytes depend only on the
/// plan.
pub fn run_campaign(
    sim: &dyn Simulator,
    plan: &CampaignPlan,
    store: Option<&CampaignStore>,
    options: RunOptions,
) -> Result<CampaignDataset> {
    if plan.points.is_empty() {
        return Err(Error::invalid("campaign needs at least one setting"));
    }
    if plan.replicates == 0 {
        return Err(Error::invalid("campaign needs at least one replicate"));
    }
    let manifest = Manifest::for_plan(plan, sim);
    let mut done: BTreeMap<usize, Vec<CampaignRow>> = BTreeMap::new();
    if let Some(store) = store {
        fs::create_dir_all(&store.dir)?;
        if let Some(prev) = read_manifest(&store.manifest_path())? {
            if prev.same_campaign(&manifest) && store.csv_path().exists() {
                for row in read_csv(&store.csv_path())?.rows {
                    done.entry(row.setting_id).or_default().push(row);
                }
                done.retain(|_, rows| is_complete(rows, plan));
            }
        }
        write_atomic(&store.manifest_path(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        let existing = CampaignDataset {
            rows: done.values().flatten().cloned().collect(),
        };
        write_atomic(&store.csv_path(), &existing.to_csv_bytes()?)?;
    }

    let todo: Vec<usize> = (0..plan.points.len()).filter(|i| !done.contains_key(i)).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(options.workers).build().map_err(|e| Error::invalid(e.to_string()))?;
    let chunk = options.checkpoint_every.max(1);
    for ids in todo.chunks(chunk) {
        let results: Vec<Vec<CampaignRow>> = pool.install(|| ids.par_iter().map(|&i| simulate_setting(sim, plan, i)).collect());
        if let Some(store) = store {
            let mut f = fs::OpenOptions::new().append(true).open(store.csv_path())?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for row in results.iter().flatten() {
                w.write_record(row_record(row))?;
            }
            f.write_all(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
            f.sync_data()?;
        }
        for rows in results {
            done.insert(rows[0].setting_id, rows);
        }
    }

    let dataset = CampaignDataset {
        rows: done.into_values().flatten().collect(),
    };
    if let Some(store) = store {
        write_atomic(&store.csv_path(), &dataset.to_csv_bytes()?)?;
    }
    Ok(dataset)
}

fn is_complete(rows: &[CampaignRow], plan: &CampaignPlan) -> bool {
    let Some(first) = rows.first() else { return false };
    let Some(p) = plan.points.get(first.setting_id) else { return false };
    let mut reps: Vec<usize> = rows.iter().map(|r| r.replicate).collect();
    reps.sort_unstable();
    reps == (0..plan.replicates).collect::<Vec<_>>()
        && rows.iter().all(|r| same_params(&r.params, p) && r.seed == row_seed(plan.seed, r.setting_id, r.replicate))
}

fn same_params(a: &ProcessParams, b: &ProcessParams) -> bool {
    a.to_array() == b.to_array()
}

fn simulate_setting(sim: &dyn Simulator, plan: &CampaignPlan, setting_id: usize) -> Vec<CampaignRow> {
    let params = plan.points[setting_id];
    (0..plan.replicates)
        .map(|replicate| {
            let seed = row_seed(plan.seed, setting_id, replicate);
            CampaignRow {
                setting_id,
                replicate,
                params,
                seed,
                outcome: sim.profile(&params, &plan.window, seed).map_err(|e| e.to_string()),
                split: None,
            }
        })
        .collect()
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Option<Manifest>> {
    match fs::read(path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(m)?.as_bytes())
}

fn fmt(x: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{x:?}")
}

fn row_record(r: &CampaignRow) -> Vec<String> {
    let p = &r.params;
    let mut rec = vec![
        r.setting_id.to_string(),
        r.replicate.to_string(),
        fmt(p.sigma1),
        fmt(p.sigma2),
        fmt(p.noise_amplitude),
        fmt(p.speed_ratio),
        fmt(p.spin_density),
        r.seed.to_string(),
    ];
    match &r.outcome {
        Ok(prof) => rec.extend(prof.cv.iter().map(|&c| fmt(c))),
        // Failed rows: empty CV fields are the error marker.
        Err(_) => rec.extend(std::iter::repeat(String::new()).take(7)),
    }
    rec.push(r.split.map(|s| s.as_str().to_string()).unwrap_or_default());
    rec
}

fn parse_f64(s: &str, line: usize, col: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::invalid(format!("line {line}: bad {col} value `{s}`")))
}

impl CampaignDataset {
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record(row_record(r))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv_bytes()?)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::invalid(format!("unexpected campaign header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != CSV_HEADER.len() {
                return Err(Error::invalid(format!("line {line}: expected 16 fields")));
            }
            let int = |j: usize| -> Result<u64> {
                rec[j].trim().parse().map_err(|_| Error::invalid(format!("line {line}: bad {}", CSV_HEADER[j])))
            };
            let f = |j: usize| parse_f64(&rec[j], line, CSV_HEADER[j]);
            let params = ProcessParams::unchecked(f(2)?, f(3)?, f(4)?, f(5)?, f(6)?);
            let outcome = if (8..15).all(|j| rec[j].trim().is_empty()) {
                Err("simulation failed".to_string())
            } else {
                let mut cv = [0.0; 7];
                for (k, c) in cv.iter_mut().enumerate() {
                    *c = f(8 + k)?;
                }
                Ok(CvProfile::new(cv))
            };
            let split = match rec[15].trim() {
                "" => None,
                s => Some(s.parse::<Split>()?),
            };
            rows.push(CampaignRow {
                setting_id: int(0)? as usize,
                replicate: int(1)? as usize,
                params,
                seed: int(7)?,
                outcome,
                split,
            });
        }
        rows.sort_by_key(|r| (r.setting_id, r.replicate));
        Ok(CampaignDataset { rows })
    }

    /// Rows with a profile.
    pub fn completed(&self) -> impl Iterator<Item = &CampaignRow> {
        self.rows.iter().filter(|r| r.outcome.is_ok())
    }

    /// Rows grouped by setting, in setting order.
    pub fn by_setting(&self) -> BTreeMap<usize, Vec<&CampaignRow>> {
        let mut m: BTreeMap<usize, Vec<&CampaignRow>> = BTreeMap::new();
        for r in &self.rows {
            m.entry(r.setting_id).or_default().push(r);
        }
        m
    }

    /// Completed rows carrying the given split label.
    pub fn split_rows(&self, split: Split) -> Vec<&CampaignRow> {
        self.completed().filter(|r| r.split == Some(split)).collect()
    }

    /// Checks the structural invariants: unique `(setting, replicate)`,
    /// shared parameters, seed and split within a setting, and the expected
    /// replicate count.
    pub fn check(&self, replicates: usize) -> Result<()> {
        for (id, rows) in self.by_setting() {
            if rows.len() != replicates {
                return Err(Error::invalid(format!("setting {id} has {} rows, expected {replicates}", rows.len())));
            }
            let mut reps: Vec<usize> = rows.iter().map(|r| r.replicate).collect();
            reps.sort_unstable();
            if reps != (0..replicates).collect::<Vec<_>>() {
                return Err(Error::invalid(format!("setting {id} has replicates {reps:?}")));
            }
            let p = rows[0].params;
            if rows.iter().any(|r| !same_params(&r.params, &p) || r.split != rows[0].split) {
                return Err(Error::invalid(format!("setting {id} mixes parameters or split labels")));
            }
        }
        Ok(())
    }
}

pub fn read_csv(path: &Path) -> Result<CampaignDataset> {
    CampaignDataset::from_csv_reader(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Stub;
    impl Simulator for Stub {
        fn profile(&self, p: &ProcessParams, _w: &SampleWindow, seed: u64) -> Result<CvProfile> {
            if p.sigma1 < 0.0 {
                return Err(Error::invalid("boom"));
            }
            let base = (seed % 1000) as f64 / 1000.0 + p.sigma1;
            Ok(CvProfile::new(std::array::from_fn(|i| base / (i + 1) as f64)))
        }
        fn describe(&self) -> String {
            "stub".into()
        }
    }

    fn plan(k: usize) -> CampaignPlan {
        CampaignPlan {
            points: (0..k).map(|i| ProcessParams::unchecked(1.0 + i as f64 / 3.0, 2.0, 3.0, 0.1, 500.0)).collect(),
            window: SampleWindow::desk(),
            replicates: 5,
            seed: 9,
            design: "test".into(),
        }
    }

    #[test]
    fn one_setting_gives_five_distinct_seeds() {
        let ds = run_campaign(&Stub, &plan(1), None, RunOptions::default()).unwrap();
        assert_eq!(ds.rows.len(), 5);
        let mut seeds: Vec<_> = ds.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 5);
        assert!(ds.rows.iter().all(|r| r.params == ds.rows[0].params));
        ds.check(5).unwrap();
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = run_campaign(&Stub, &plan(3), None, RunOptions::default()).unwrap();
        let bytes = ds.to_csv_bytes().unwrap();
        let back = CampaignDataset::from_csv_reader(&bytes[..]).unwrap();
        assert_eq!(back, ds);
        let header = String::from_utf8(bytes).unwrap();
        assert!(header.starts_with("setting_id,replicate,sigma1_mm,sigma2_mm,A,v,n_per_m,seed,cv_0p5,"));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut pl = plan(2);
        pl.points[1].sigma1 = -1.0;
        let ds = run_campaign(&Stub, &pl, None, RunOptions::default()).unwrap();
        assert_eq!(ds.rows.len(), 10);
        assert_eq!(ds.completed().count(), 5);
        let back = CampaignDataset::from_csv_reader(&ds.to_csv_bytes().unwrap()[..]).unwrap();
        assert_eq!(back.completed().count(), 5);
    }

    #[test]
    fn resume_reproduces_rows_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let store = CampaignStore::new(dir.path());
        let full = run_campaign(&Stub, &plan(6), None, RunOptions::default()).unwrap();
        // Simulate an interruption: a partial file holding 2.4 settings.
        let partial = CampaignDataset { rows: full.rows[..12].to_vec() };
        write_manifest(&store.manifest_path(), &Manifest::for_plan(&plan(6), &Stub)).unwrap();
        partial.write_csv(&store.csv_path()).unwrap();
        let resumed = run_campaign(&Stub, &plan(6), Some(&store), RunOptions::default()).unwrap();
        assert_eq!(resumed, full);
        assert_eq!(fs::read(store.csv_path()).unwrap(), full.to_csv_bytes().unwrap());
    }

    #[test]
    fn different_plan_is_not_resumed() {
        let dir = tempfile::tempdir().unwrap();
        let store = CampaignStore::new(dir.path());
        run_campaign(&Stub, &plan(2), Some(&store), RunOptions::default()).unwrap();
        let mut other = plan(2);
        other.seed = 10;
        let ds = run_campaign(&Stub, &other, Some(&store), RunOptions::default()).unwrap();
        assert_eq!(ds.rows[0].seed, row_seed(10, 0, 0));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let a = run_campaign(&Stub, &plan(5), None, RunOptions { workers: 1, checkpoint_every: 2 }).unwrap();
        let b = run_campaign(&Stub, &plan(5), None, RunOptions { workers: 3, checkpoint_every: 5 }).unwrap();
        assert_eq!(a.to_csv_bytes().unwrap(), b.to_csv_bytes().unwrap());
    }
}
