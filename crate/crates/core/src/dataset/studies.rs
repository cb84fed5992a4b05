//! Methodological studies on the simulator's statistical behaviour: how
//! replicate noise depends on window size, how much replicate averaging
//! buys, and whether the discretization step matters.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::campaign::{row_seed, CampaignDataset, Simulator};
use crate::error::{Error, Result};
use crate::homogeneity::CvProfile;
use crate::laydown::derive_seed;
use crate::params::{ProcessParams, SampleWindow};
use crate::stats;

/// Relative spread of repeated measurements: sample standard deviation
/// over the mean. Zero for identical values.
pub fn relative_spread(xs: &[f64]) -> Option<f64> {
    let m = stats::mean(xs)?;
    let v = stats::sample_variance(xs)?;
    if m == 0.0 {
        return None;
    }
    Some(v.sqrt() / m.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub setting: ProcessParams,
    pub runs: usize,
    pub windows: Vec<SampleWindow>,
    /// `cv_of_cv[w][r]`: spread of the resolution-`r` CV across runs on
    /// window `w`.
    pub cv_of_cv: Vec<[f64; 7]>,
}

/// Runs `runs` independent simulations of one setting on each window and
/// reports the per-resolution spread of the CV values.
pub fn uncertainty_report(
    sim: &dyn Simulator,
    setting: &ProcessParams,
    windows: &[SampleWindow],
    runs: usize,
    seed: u64,
) -> Result<UncertaintyReport> {
    if runs < 2 {
        return Err(Error::invalid("uncertainty needs runs >= 2"));
    }
    let mut cv_of_cv = Vec::with_capacity(windows.len());
    for (wi, w) in windows.iter().enumerate() {
        let wseed = derive_seed(seed, wi as u64);
        let profiles = (0..runs)
            .into_par_iter()
            .map(|r| sim.profile(setting, w, derive_seed(wseed, r as u64)))
            .collect::<Result<Vec<_>>>()?;
        cv_of_cv.push(per_resolution_spread(&profiles)?);
    }
    Ok(UncertaintyReport {
        setting: *setting,
        runs,
        windows: windows.to_vec(),
        cv_of_cv,
    })
}

fn per_resolution_spread(profiles: &[CvProfile]) -> Result<[f64; 7]> {
    let mut out = [0.0; 7];
    for (r, o) in out.iter_mut().enumerate() {
        let xs: Vec<f64> = profiles.iter().map(|p| p.cv[r]).collect();
        *o = relative_spread(&xs).ok_or_else(|| Error::DegenerateSample(format!("all CV values zero at resolution index {r}")))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingReport {
    pub settings: usize,
    pub group_size: usize,
    /// Pooled relative spread of single runs.
    pub single: [f64; 7],
    /// Pooled relative spread of `group_size`-run means.
    pub averaged: [f64; 7],
    /// `averaged / (single / sqrt(group_size))`; 1 under independent
    /// replicates.
    pub ratio: [f64; 7],
}

/// Compares the replicate spread of single runs with that of group means.
/// Each entry of `runs` holds repeated profiles of one setting; they are cut
/// into consecutive groups of `group_size` (leftovers are ignored). Relative
/// variances are pooled across settings before taking the square root.
pub fn replicate_averaging(runs: &[Vec<CvProfile>], group_size: usize) -> Result<AveragingReport> {
    if group_size < 2 {
        return Err(Error::invalid("group_size must be >= 2"));
    }
    let mut single = [0.0; 7];
    let mut averaged = [0.0; 7];
    let mut used = 0usize;
    for set in runs {
        let groups = set.len() / group_size;
        if groups < 2 {
            continue;
        }
        let set = &set[..groups * group_size];
        for r in 0..7 {
            let xs: Vec<f64> = set.iter().map(|p| p.cv[r]).collect();
            let m = stats::mean(&xs).unwrap_or(0.0);
            if m == 0.0 {
                return Err(Error::DegenerateSample(format!("zero mean CV at resolution index {r}")));
            }
            let means: Vec<f64> = xs.chunks(group_size).map(|c| stats::mean(c).unwrap_or(0.0)).collect();
            single[r] += stats::sample_variance(&xs).unwrap_or(0.0) / (m * m);
            averaged[r] += stats::sample_variance(&means).unwrap_or(0.0) / (m * m);
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("no setting has two full groups of runs"));
    }
    let g = group_size as f64;
    let single = single.map(|s| (s / used as f64).sqrt());
    let averaged = averaged.map(|s| (s / used as f64).sqrt());
    let ratio = std::array::from_fn(|r| if single[r] > 0.0 { averaged[r] * g.sqrt() / single[r] } else { f64::NAN });
    Ok(AveragingReport {
        settings: used,
        group_size,
        single,
        averaged,
        ratio,
    })
}

/// `|a - b| / a`, averaged over the resolutions.
pub fn profile_deviation(a: &CvProfile, b: &CvProfile) -> f64 {
    a.cv.iter().zip(&b.cv).map(|(x, y)| (x - y).abs() / x).sum::<f64>() / 7.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizeReport {
    pub ds_low_mm: f64,
    pub ds_high_mm: f64,
    /// Per setting: deviation between a fine-step and a coarse-step run.
    pub step_deviation: Vec<f64>,
    /// Per setting: deviation between two fine-step replicates.
    pub noise_deviation: Vec<f64>,
    pub threshold: f64,
    pub exceedance_fraction: f64,
}

/// Default noise quantile for the step-size threshold (percent).
pub const STEP_THRESHOLD_PERCENTILE: f64 = 99.75;

/// Fraction of settings whose step-size deviation exceeds the chosen
/// percentile of the replicate-noise deviations.
pub fn exceedance(step_dev: &[f64], noise_dev: &[f64], percentile: f64) -> Result<(f64, f64)> {
    let t = stats::percentile(noise_dev, percentile).ok_or_else(|| Error::invalid("need noise deviations and a percentile in [0, 100]"))?;
    if step_dev.is_empty() {
        return Err(Error::invalid("no step deviations"));
    }
    let n = step_dev.iter().filter(|&&d| d > t).count();
    Ok((t, n as f64 / step_dev.len() as f64))
}

/// Seed of the coarse-step run of a setting; independent of every
/// replicate seed.
pub fn coarse_step_seed(seed: u64, setting_id: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, setting_id as u64), u64::MAX), 0xd5)
}

/// For each setting, simulates replicates 0 and 1 at `ds_low` (with the
/// same seeds a campaign with this `seed` would use) and one independent run
/// at `ds_high`.
pub fn step_size_study(
    sim: &dyn Simulator,
    points: &[ProcessParams],
    window: &SampleWindow,
    ds_low: f64,
    ds_high: f64,
    percentile: f64,
    seed: u64,
) -> Result<StepSizeReport> {
    if points.is_empty() {
        return Err(Error::invalid("step-size study needs settings"));
    }
    if !(ds_low <= ds_high && ds_low > 0.0) {
        return Err(Error::invalid("need 0 < ds_low <= ds_high"));
    }
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<(f64, f64)> {
            let lo = p.with_step_size(ds_low);
            let a = sim.profile(&lo, window, row_seed(seed, i, 0))?;
            let b = sim.profile(&lo, window, row_seed(seed, i, 1))?;
            let c = sim.profile(&p.with_step_size(ds_high), window, coarse_step_seed(seed, i))?;
            Ok((profile_deviation(&a, &c), profile_deviation(&a, &b)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (step_deviation, noise_deviation): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let (threshold, exceedance_fraction) = if ds_low == ds_high {
        (0.0, 0.0)
    } else {
        exceedance(&step_deviation, &noise_deviation, percentile)?
    };
    Ok(StepSizeReport {
        ds_low_mm: ds_low,
        ds_high_mm: ds_high,
        step_deviation,
        noise_deviation,
        threshold,
        exceedance_fraction,
    })
}

type Key = ([u64; 6], [u64; 2], u64);

fn key(p: &ProcessParams, w: &SampleWindow, seed: u64) -> Key {
    let a = p.to_array();
    (
        [a[0].to_bits(), a[1].to_bits(), a[2].to_bits(), a[3].to_bits(), a[4].to_bits(), p.step_size_mm().to_bits()],
        [w.machine_extent.to_bits(), w.cross_extent.to_bits()],
        seed,
    )
}

#[derive(Serialize, Deserialize)]
struct MemoLine {
    params: ProcessParams,
    ds_mm: f64,
    window: SampleWindow,
    seed: u64,
    cv: [f64; 7],
}

/// Serves profiles already computed (by a campaign, or by earlier calls)
/// and delegates everything else. Lets studies reuse campaign runs without
/// changing their seeding. With a log file, every new profile is appended
/// as a JSON line and reloaded next time.
pub struct ReplayCache<'a> {
    inner: &'a dyn Simulator,
    known: Mutex<HashMap<Key, CvProfile>>,
    log: Option<Mutex<File>>,
}

impl<'a> ReplayCache<'a> {
    pub fn new(inner: &'a dyn Simulator) -> Self {
        ReplayCache {
            inner,
            known: Mutex::new(HashMap::new()),
            log: None,
        }
    }

    /// Loads `path` if present and appends new profiles to it. Lines that
    /// fail to parse (a torn final write) are skipped.
    pub fn with_log(inner: &'a dyn Simulator, path: &Path) -> Result<Self> {
        let mut known = HashMap::new();
        if let Ok(text) = std::fs::read_to_string(path) {
            for line in text.lines() {
                if let Ok(m) = serde_json::from_str::<MemoLine>(line) {
                    known.insert(key(&m.params.with_step_size(m.ds_mm), &m.window, m.seed), CvProfile::new(m.cv));
                }
            }
        }
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ReplayCache {
            inner,
            known: Mutex::new(known),
            log: Some(Mutex::new(file)),
        })
    }

    pub fn insert(&self, p: &ProcessParams, w: &SampleWindow, seed: u64, profile: CvProfile) {
        self.known.lock().unwrap().insert(key(p, w, seed), profile);
    }

    pub fn add_campaign(&self, ds: &CampaignDataset, window: &SampleWindow) {
        for r in ds.completed() {
            self.insert(&r.params, window, r.seed, *r.profile().unwrap());
        }
    }

    pub fn len(&self) -> usize {
        self.known.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Simulator for ReplayCache<'_> {
    fn profile(&self, p: &ProcessParams, w: &SampleWindow, seed: u64) -> Result<CvProfile> {
        if let Some(prof) = self.known.lock().unwrap().get(&key(p, w, seed)) {
            return Ok(*prof);
        }
        let prof = self.inner.profile(p, w, seed)?;
        self.insert(p, w, seed, prof);
        if let Some(log) = &self.log {
            let line = MemoLine {
                params: *p,
                ds_mm: p.step_size_mm(),
                window: *w,
                seed,
                cv: prof.cv,
            };
            let mut text = serde_json::to_string(&line)?;
            text.push('\n');
            log.lock().unwrap().write_all(text.as_bytes())?;
        }
        Ok(prof)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use rand_xoshiro::Xoshiro256PlusPlus;

    /// Profiles with multiplicative Gaussian noise of fixed relative size
    /// that ignores the step size and the window.
    struct Noisy(f64);
    impl Simulator for Noisy {
        fn profile(&self, p: &ProcessParams, _w: &SampleWindow, seed: u64) -> Result<CvProfile> {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let n = Normal::new(1.0, self.0).unwrap();
            Ok(CvProfile::new(std::array::from_fn(|r| p.sigma1 / (r + 1) as f64 * n.sample(&mut rng))))
        }
        fn describe(&self) -> String {
            "noisy".into()
        }
    }

    struct Constant;
    impl Simulator for Constant {
        fn profile(&self, _p: &ProcessParams, _w: &SampleWindow, _s: u64) -> Result<CvProfile> {
            Ok(CvProfile::new([0.3; 7]))
        }
        fn describe(&self) -> String {
            "constant".into()
        }
    }

    fn settings(k: usize) -> Vec<ProcessParams> {
        (0..k).map(|i| ProcessParams::unchecked(1.0 + i as f64, 5.0, 5.0, 0.1, 500.0)).collect()
    }

    #[test]
    fn zero_noise_simulator_reports_zero_uncertainty() {
        let rep = uncertainty_report(&Constant, &settings(1)[0], &[SampleWindow::desk()], 4, 1).unwrap();
        assert_eq!(rep.cv_of_cv, vec![[0.0; 7]]);
    }

    #[test]
    fn averaging_ratio_is_one_for_independent_runs() {
        let sim = Noisy(0.1);
        let runs: Vec<Vec<CvProfile>> = (0..400)
            .map(|s| (0..10).map(|r| sim.profile(&settings(1)[0], &SampleWindow::desk(), (s * 100 + r) as u64).unwrap()).collect())
            .collect();
        let rep = replicate_averaging(&runs, 5).unwrap();
        for r in 0..7 {
            assert!((rep.ratio[r] - 1.0).abs() < 0.1, "{:?}", rep.ratio);
            assert!((rep.single[r] - 0.1).abs() < 0.01);
        }
    }

    #[test]
    fn identical_steps_give_zero_exceedance() {
        let rep = step_size_study(&Noisy(0.1), &settings(10), &SampleWindow::desk(), 0.025, 0.025, 99.75, 3).unwrap();
        assert_eq!(rep.exceedance_fraction, 0.0);
    }

    #[test]
    fn step_blind_simulator_stays_near_nominal_rate() {
        // Threshold at the 90th percentile: a simulator that ignores the step
        // should exceed it for about 10% of settings.
        let rep = step_size_study(&Noisy(0.1), &settings(2000), &SampleWindow::desk(), 0.025, 0.05, 90.0, 5).unwrap();
        assert!((rep.exceedance_fraction - 0.10).abs() < 0.03, "{}", rep.exceedance_fraction);
    }

    #[test]
    fn deviation_is_mean_relative_difference() {
        let a = CvProfile::new([1.0, 2.0, 4.0, 1.0, 1.0, 1.0, 1.0]);
        let b = CvProfile::new([1.5, 2.0, 3.0, 1.0, 1.0, 1.0, 1.0]);
        assert!((profile_deviation(&a, &b) - (0.5 + 0.25) / 7.0).abs() < 1e-15);
    }

    #[test]
    fn replay_cache_serves_known_rows() {
        let c = ReplayCache::new(&Constant);
        let p = settings(1)[0];
        let w = SampleWindow::desk();
        c.insert(&p, &w, 7, CvProfile::new([9.0; 7]));
        assert_eq!(c.profile(&p, &w, 7).unwrap().cv, [9.0; 7]);
        // The default step and an explicit default step are the same run.
        assert_eq!(c.profile(&p.with_step_size(0.025), &w, 7).unwrap().cv, [9.0; 7]);
        assert_eq!(c.profile(&p, &w, 8).unwrap().cv, [0.3; 7]);
    }

    #[test]
    fn replay_log_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memo.jsonl");
        let p = settings(1)[0].with_step_size(0.05);
        let w = SampleWindow::desk();
        let first = {
            let c = ReplayCache::with_log(&Noisy(0.2), &path).unwrap();
            c.profile(&p, &w, 11).unwrap()
        };
        let c = ReplayCache::with_log(&Constant, &path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.profile(&p, &w, 11).unwrap(), first);
    }
}
