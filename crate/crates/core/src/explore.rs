//! Searching the parameter space through a surrogate, plus the candidate
//! lifecycle used when shortlisted settings are checked by simulation.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Param, ParamRanges, ProcessParams};
use crate::surrogates::TrainedSurrogate;

/// Anything that maps settings to seven CV values.
pub trait Surrogate: Sync {
    fn predict_many(&self, params: &[ProcessParams]) -> Result<Vec<[f64; 7]>>;
}

impl Surrogate for TrainedSurrogate {
    fn predict_many(&self, params: &[ProcessParams]) -> Result<Vec<[f64; 7]>> {
        let m = self.predict_batch(params)?;
        Ok(m.rows().into_iter().map(|r| std::array::from_fn(|j| r[j])).collect())
    }
}

/// Closure-backed surrogate, handy for stubs.
pub struct FnSurrogate<F>(pub F);

impl<F: Fn(&ProcessParams) -> [f64; 7] + Sync> Surrogate for FnSurrogate<F> {
    fn predict_many(&self, params: &[ProcessParams]) -> Result<Vec<[f64; 7]>> {
        Ok(params.iter().map(&self.0).collect())
    }
}

/// Weighted mean of the seven CV values; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub weights: [f64; 7],
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec { weights: [1.0; 7] }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("objective weights must be finite and >= 0"));
        }
        if self.weights.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("objective weights must not all be zero"));
        }
        Ok(())
    }

    pub fn value(&self, cv: &[f64; 7]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().zip(cv).map(|(w, c)| w * c).sum::<f64>() / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub params: ProcessParams,
    pub cv: [f64; 7],
    pub objective: f64,
}

/// Objective ascending, ties by parameter vector, so the order does not
/// depend on how the input was arranged.
fn rank(a: &Evaluated, b: &Evaluated) -> Ordering {
    a.objective.total_cmp(&b.objective).then_with(|| {
        a.params
            .to_array()
            .iter()
            .zip(b.params.to_array().iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

pub fn evaluate_all(model: &dyn Surrogate, points: &[ProcessParams], obj: &ObjectiveSpec) -> Result<Vec<Evaluated>> {
    let cvs = model.predict_many(points)?;
    Ok(points
        .iter()
        .zip(cvs)
        .map(|(p, cv)| Evaluated {
            params: *p,
            objective: obj.value(&cv),
            cv,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    /// Full factorial with the given number of evenly spaced levels per
    /// parameter (a single level sits at the midpoint).
    Grid { levels: [usize; 5] },
    Random { seed: u64 },
    /// Coordinate descent from `start`.
    Local { start: Option<ProcessParams> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRequest {
    #[serde(flatten)]
    pub strategy: Strategy,
    /// Maximum number of surrogate evaluations (random and local).
    pub budget: usize,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    /// Allow a local-search start outside the ranges.
    #[serde(default)]
    pub extrapolate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreResult {
    /// Sorted by objective, best first.
    pub results: Vec<Evaluated>,
    pub evaluations: usize,
    pub extrapolated: bool,
}

pub fn grid_search(
    model: &dyn Surrogate,
    ranges: &ParamRanges,
    levels: [usize; 5],
    obj: &ObjectiveSpec,
) -> Result<Vec<Evaluated>> {
    let lv = crate::dataset::uniform_levels(ranges, levels)?;
    let points = crate::dataset::expert_grid(&lv)?;
    let mut out = evaluate_all(model, &points, obj)?;
    out.sort_by(rank);
    Ok(out)
}

pub fn random_search(
    model: &dyn Surrogate,
    ranges: &ParamRanges,
    samples: usize,
    seed: u64,
    obj: &ObjectiveSpec,
) -> Result<Vec<Evaluated>> {
    if samples == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let points: Vec<ProcessParams> = (0..samples)
        .map(|_| ranges.denormalize(std::array::from_fn(|_| rng.gen::<f64>())))
        .collect();
    let mut out = evaluate_all(model, &points, obj)?;
    out.sort_by(rank);
    Ok(out)
}

pub const LOCAL_INITIAL_STEP: f64 = 0.25;
pub const LOCAL_STEP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearch {
    pub best: Evaluated,
    /// Every accepted point, starting with `start`.
    pub path: Vec<Evaluated>,
    pub evaluations: usize,
    /// True when the step fell below the tolerance before the budget ran out.
    pub converged: bool,
}

/// Coordinate descent in range-normalized coordinates: try +-step along
/// each axis (clamped to the box), move on improvement, halve the step after
/// a sweep without one. Stops at step < 1e-3 or when `budget` evaluations
/// are used.
pub fn local_search(
    model: &dyn Surrogate,
    ranges: &ParamRanges,
    start: &ProcessParams,
    budget: usize,
    obj: &ObjectiveSpec,
) -> Result<LocalSearch> {
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    let mut u = ranges.normalize(start);
    let mut evaluations = 1;
    let mut best = evaluate_all(model, &[*start], obj)?[0];
    let mut path = vec![best];
    let mut step = LOCAL_INITIAL_STEP;
    while step >= LOCAL_STEP_TOLERANCE && evaluations < budget {
        let mut improved = false;
        for d in 0..5 {
            let mut trial = Vec::with_capacity(2);
            for dir in [-1.0, 1.0] {
                let v = (u[d] + dir * step).clamp(0.0, 1.0);
                if v != u[d] && evaluations + trial.len() < budget {
                    let mut w = u;
                    w[d] = v;
                    trial.push(w);
                }
            }
            if trial.is_empty() {
                continue;
            }
            let pts: Vec<ProcessParams> = trial.iter().map(|w| ranges.denormalize(*w)).collect();
            let ev = evaluate_all(model, &pts, obj)?;
            evaluations += ev.len();
            if let Some((i, e)) = ev
                .iter()
                .enumerate()
                .filter(|(_, e)| e.objective < best.objective)
                .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
            {
                u = trial[i];
                best = *e;
                path.push(best);
                improved = true;
            }
            if evaluations >= budget {
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(LocalSearch {
        best,
        path,
        evaluations,
        converged: step < LOCAL_STEP_TOLERANCE,
    })
}

fn check_in_range(ranges: &ParamRanges, p: &ProcessParams) -> Result<()> {
    match ranges.violations(p).into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn explore(model: &dyn Surrogate, ranges: &ParamRanges, req: &ExploreRequest) -> Result<ExploreResult> {
    req.objective.validate()?;
    if req.budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    let obj = &req.objective;
    match &req.strategy {
        Strategy::Grid { levels } => {
            let total: usize = levels.iter().product();
            if total > req.budget {
                return Err(Error::invalid(format!("grid needs {total} evaluations, budget is {}", req.budget)));
            }
            let results = grid_search(model, ranges, *levels, obj)?;
            Ok(ExploreResult {
                evaluations: results.len(),
                results,
                extrapolated: false,
            })
        }
        Strategy::Random { seed } => {
            let results = random_search(model, ranges, req.budget, *seed, obj)?;
            Ok(ExploreResult {
                evaluations: results.len(),
                results,
                extrapolated: false,
            })
        }
        Strategy::Local { start } => {
            let start = start.ok_or_else(|| Error::invalid("local search requires a start point"))?;
            let outside = !ranges.contains(&start);
            if outside && !req.extrapolate {
                check_in_range(ranges, &start)?;
            }
            let ls = local_search(model, ranges, &start, req.budget, obj)?;
            let mut results = ls.path;
            results.sort_by(rank);
            Ok(ExploreResult {
                results,
                evaluations: ls.evaluations,
                extrapolated: outside,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub parameter: Param,
    pub values: Vec<f64>,
    pub objective: Vec<f64>,
    pub cv: Vec<[f64; 7]>,
}

/// One-at-a-time sweep of `param` over its range with the others fixed.
/// The first and last values are the range bounds exactly.
pub fn sensitivity(
    model: &dyn Surrogate,
    ranges: &ParamRanges,
    base: &ProcessParams,
    param_index: usize,
    samples: usize,
    obj: &ObjectiveSpec,
) -> Result<Sensitivity> {
    let parameter =
        Param::from_index(param_index).ok_or_else(|| Error::invalid(format!("parameter index {param_index} is not in 0..5")))?;
    if samples < 2 {
        return Err(Error::invalid("sensitivity needs samples >= 2"));
    }
    obj.validate()?;
    let iv = ranges.get(parameter);
    let values: Vec<f64> = (0..samples)
        .map(|i| match i {
            0 => iv.lo,
            i if i == samples - 1 => iv.hi,
            i => iv.denormalize(i as f64 / (samples - 1) as f64),
        })
        .collect();
    let points: Vec<ProcessParams> = values
        .iter()
        .map(|&v| {
            let mut p = *base;
            p.set(parameter, v);
            p
        })
        .collect();
    let ev = evaluate_all(model, &points, obj)?;
    Ok(Sensitivity {
        parameter,
        values,
        objective: ev.iter().map(|e| e.objective).collect(),
        cv: ev.iter().map(|e| e.cv).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    pub items: Vec<Evaluated>,
    /// Fewer distinct settings than requested.
    pub short: bool,
}

/// Best `n` distinct settings. A setting listed more than once keeps its
/// best objective; the result does not depend on input order.
pub fn shortlist(results: &[Evaluated], n: usize) -> Result<Shortlist> {
    if n == 0 {
        return Err(Error::invalid("shortlist size must be >= 1"));
    }
    let mut all = results.to_vec();
    all.sort_by(rank);
    let mut seen = std::collections::HashSet::new();
    all.retain(|e| seen.insert(e.params.to_array().map(f64::to_bits)));
    let short = all.len() < n;
    all.truncate(n);
    Ok(Shortlist { items: all, short })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Proposed,
    Simulating,
    Simulated,
    Accepted,
    Rejected,
}

impl Status {
    pub const ALL: [Status; 5] = [
        Status::Proposed,
        Status::Simulating,
        Status::Simulated,
        Status::Accepted,
        Status::Rejected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Proposed => "proposed",
            Status::Simulating => "simulating",
            Status::Simulated => "simulated",
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
        }
    }

    /// The lifecycle edges. `Simulating -> Proposed` is the rollback taken
    /// when a validation simulation fails.
    pub fn can_become(self, to: Status) -> bool {
        use Status::*;
        matches!(
            (self, to),
            (Proposed, Simulating) | (Simulating, Simulated) | (Simulating, Proposed) | (Simulated, Accepted) | (Simulated, Rejected)
        )
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: u64,
    pub params: ProcessParams,
    pub predicted: [f64; 7],
    pub objective: f64,
    pub status: Status,
    pub simulated: Option<[f64; 7]>,
    pub simulated_objective: Option<f64>,
    pub image_path: Option<String>,
}

impl Candidate {
    pub fn proposed(candidate_id: u64, e: &Evaluated) -> Self {
        Candidate {
            candidate_id,
            params: e.params,
            predicted: e.cv,
            objective: e.objective,
            status: Status::Proposed,
            simulated: None,
            simulated_objective: None,
            image_path: None,
        }
    }

    pub fn transition(&mut self, to: Status) -> Result<()> {
        if !self.status.can_become(to) {
            return Err(Error::IllegalTransition {
                from: self.status.to_string(),
                to: to.to_string(),
            });
        }
        self.status = to;
        Ok(())
    }

    /// |simulated - predicted| / simulated objective, once simulated.
    pub fn objective_gap(&self) -> Option<f64> {
        self.simulated_objective.map(|s| (s - self.objective).abs() / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn status(self) -> Status {
        match self {
            Verdict::Accept => Status::Accepted,
            Verdict::Reject => Status::Rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub candidate_id: u64,
    pub verdict: Verdict,
    pub reason: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> FnSurrogate<impl Fn(&ProcessParams) -> [f64; 7] + Sync> {
        let r = ParamRanges::default();
        FnSurrogate(move |p: &ProcessParams| {
            let u = r.normalize(p);
            [u.iter().map(|x| (x - 0.3) * (x - 0.3)).sum(); 7]
        })
    }

    fn constant() -> FnSurrogate<impl Fn(&ProcessParams) -> [f64; 7] + Sync> {
        FnSurrogate(|_: &ProcessParams| [0.4; 7])
    }

    fn mid() -> ProcessParams {
        ParamRanges::default().denormalize([0.5; 5])
    }

    #[test]
    fn weighted_mean_objective() {
        let mut o = ObjectiveSpec::default();
        assert_eq!(o.value(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), 4.0);
        o.weights = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        assert_eq!(o.value(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), 7.0);
        o.weights = [0.0; 7];
        assert!(o.validate().is_err());
        o.weights[2] = -1.0;
        assert!(o.validate().is_err());
    }

    #[test]
    fn local_search_finds_quadratic_minimum() {
        let r = ParamRanges::default();
        for start in [[0.9; 5], [0.0; 5], [0.1, 0.8, 0.5, 1.0, 0.2]] {
            let ls = local_search(&quadratic(), &r, &r.denormalize(start), 10_000, &ObjectiveSpec::default()).unwrap();
            assert!(ls.converged);
            for x in r.normalize(&ls.best.params) {
                assert!((x - 0.3).abs() < 1e-2, "{x}");
            }
        }
    }

    #[test]
    fn local_search_respects_budget() {
        let r = ParamRanges::default();
        let ls = local_search(&quadratic(), &r, &mid(), 7, &ObjectiveSpec::default()).unwrap();
        assert!(ls.evaluations <= 7);
        assert!(!ls.converged);
    }

    #[test]
    fn single_level_grid_is_one_evaluation() {
        let out = grid_search(&quadratic(), &ParamRanges::default(), [1; 5], &ObjectiveSpec::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn random_search_is_sorted() {
        let out = random_search(&quadratic(), &ParamRanges::default(), 200, 1, &ObjectiveSpec::default()).unwrap();
        assert!(out.windows(2).all(|w| w[0].objective <= w[1].objective));
    }

    #[test]
    fn local_needs_start_and_range() {
        let r = ParamRanges::default();
        let mut req = ExploreRequest {
            strategy: Strategy::Local { start: None },
            budget: 100,
            objective: ObjectiveSpec::default(),
            extrapolate: false,
        };
        assert!(explore(&quadratic(), &r, &req).is_err());
        let mut outside = mid();
        outside.sigma1 = 0.5;
        req.strategy = Strategy::Local { start: Some(outside) };
        let err = explore(&quadratic(), &r, &req).unwrap_err();
        assert!(err.to_string().contains("sigma1"), "{err}");
        req.extrapolate = true;
        assert!(explore(&quadratic(), &r, &req).unwrap().extrapolated);
    }

    #[test]
    fn sweep_endpoints_and_flatness() {
        let r = ParamRanges::default();
        for i in 0..5 {
            let s = sensitivity(&constant(), &r, &mid(), i, 9, &ObjectiveSpec::default()).unwrap();
            let iv = r.get(Param::from_index(i).unwrap());
            assert_eq!(s.values[0], iv.lo);
            assert_eq!(*s.values.last().unwrap(), iv.hi);
            assert!(s.objective.iter().all(|&o| o == s.objective[0]));
        }
        assert!(sensitivity(&constant(), &r, &mid(), 5, 9, &ObjectiveSpec::default()).is_err());
        assert!(sensitivity(&constant(), &r, &mid(), 0, 1, &ObjectiveSpec::default()).is_err());
    }

    #[test]
    fn monotone_stub_gives_monotone_sweep() {
        let r = ParamRanges::default();
        let stub = FnSurrogate(|p: &ProcessParams| [p.speed_ratio; 7]);
        let s = sensitivity(&stub, &r, &mid(), Param::SpeedRatio.index(), 25, &ObjectiveSpec::default()).unwrap();
        assert!(s.objective.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn shortlist_dedups_and_ranks() {
        let r = ParamRanges::default();
        let mut res = random_search(&quadratic(), &r, 50, 2, &ObjectiveSpec::default()).unwrap();
        let best = res[0];
        res.push(best);
        res.push(best);
        res.reverse();
        let s = shortlist(&res, 10).unwrap();
        assert_eq!(s.items[0], best);
        assert_ne!(s.items[1].params, best.params);
        assert!(s.items.windows(2).all(|w| w[0].objective <= w[1].objective));
        assert_eq!(shortlist(&res, 1).unwrap().items, vec![best]);
        let few = shortlist(&res[..3], 10).unwrap();
        assert!(few.short);
        assert_eq!(few.items.len(), 2);
    }

    #[test]
    fn state_machine_is_exactly_the_declared_edges() {
        use Status::*;
        let legal = [
            (Proposed, Simulating),
            (Simulating, Simulated),
            (Simulating, Proposed),
            (Simulated, Accepted),
            (Simulated, Rejected),
        ];
        for from in Status::ALL {
            for to in Status::ALL {
                let mut c = Candidate::proposed(1, &evaluate_all(&constant(), &[mid()], &ObjectiveSpec::default()).unwrap()[0]);
                c.status = from;
                let r = c.transition(to);
                assert_eq!(r.is_ok(), legal.contains(&(from, to)), "{from} -> {to}");
                if r.is_err() {
                    assert_eq!(c.status, from);
                }
            }
        }
    }
}
