//! Stochastic fiber laydown onto a moving belt.
//!
//! Each spin position emits one fiber. Along the fiber (parametrised by arc
//! length with step `ds`) the deposition offset from the spin position is a
//! stationary two-dimensional Ornstein-Uhlenbeck process with marginal
//! standard deviations `(sigma1, sigma2)`, sampled with its exact
//! discretization
//!
//! ```text
//! xi[k+1] = rho * xi[k] + sqrt(1 - rho^2) * (sigma1 * eta1, sigma2 * eta2)
//! rho     = exp(-A * ds / reference_length)
//! ```
//!
//! while the belt carries the deposition reference `v * ds` further in the
//! machine direction per step. `A -> 0` gives a straight deterministic line,
//! `A -> inf` independent Gaussian scatter.
//!
//! Every fiber draws from its own generator seeded from
//! `(sample seed, fiber index)`, so output does not depend on how fibers
//! are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogeneity::Deposit;
use crate::params::{ProcessParams, SampleWindow};

/// Constants the laydown law needs beyond the process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaydownConfig {
    /// Arc length (mm) that turns the noise amplitude into an OU rate.
    pub reference_length: f64,
    /// Mass per mm of fiber (arbitrary units).
    pub fiber_mass_per_length: f64,
    /// Truncation margin around the window, in standard deviations.
    pub margin_sigmas: f64,
}

impl Default for LaydownConfig {
    fn default() -> Self {
        LaydownConfig {
            reference_length: 1.0,
            fiber_mass_per_length: 1.0,
            margin_sigmas: 3.0,
        }
    }
}

impl LaydownConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reference_length > 0.0 && self.reference_length.is_finite()) {
            return Err(Error::invalid("reference_length must be > 0"));
        }
        if !(self.fiber_mass_per_length > 0.0 && self.fiber_mass_per_length.is_finite()) {
            return Err(Error::invalid("fiber_mass_per_length must be > 0"));
        }
        if !(self.margin_sigmas >= 0.0 && self.margin_sigmas.is_finite()) {
            return Err(Error::invalid("margin_sigmas must be >= 0"));
        }
        Ok(())
    }
}

/// Discretized deposition trace of one fiber, `(machine, cross)` in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberCurve {
    pub points: Vec<[f64; 2]>,
    pub point_mass: f64,
}

impl FiberCurve {
    pub fn mass(&self) -> f64 {
        self.points.len() as f64 * self.point_mass
    }
}

/// Fibers clipped to a sample window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualNonwoven {
    pub fibers: Vec<FiberCurve>,
    pub window: SampleWindow,
    pub params: ProcessParams,
    pub seed: u64,
}

impl VirtualNonwoven {
    pub fn total_mass(&self) -> f64 {
        self.fibers.iter().map(FiberCurve::mass).sum()
    }

    pub fn point_count(&self) -> usize {
        self.fibers.iter().map(|f| f.points.len()).sum()
    }
}

/// SplitMix64 finaliser.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a counter. Used for the
/// chain campaign -> setting -> replicate -> fiber.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(index.wrapping_add(0x6a09_e667_f3bc_c909))))
}

fn fiber_rng(sample_seed: u64, fiber_index: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(derive_seed(sample_seed, fiber_index))
}

/// Spin positions (cross direction, mm) whose fibers can reach the window.
pub fn plan_spin_positions(
    params: &ProcessParams,
    window: &SampleWindow,
    config: &LaydownConfig,
) -> Result<Vec<f64>> {
    params.validate_physical()?;
    config.validate()?;
    if !(window.cross_extent >= 0.0 && window.cross_extent.is_finite()) {
        return Err(Error::invalid("cross extent must be >= 0"));
    }
    let spacing = 1000.0 / params.spin_density;
    let lo = -config.margin_sigmas * params.sigma2;
    let span = window.cross_extent + 2.0 * config.margin_sigmas * params.sigma2;
    // relative slack so that an exact multiple is not lost to rounding
    let count = (span / spacing * (1.0 + 1e-12)).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * spacing).collect())
}

/// Block of standard normals drawn in a tight loop, which is markedly faster
/// than interleaving the ziggurat with the recurrence.
struct NormalStream<R> {
    rng: R,
    buf: [f64; 256],
    pos: usize,
}

impl<R: Rng> NormalStream<R> {
    fn new(rng: R) -> Self {
        NormalStream {
            rng,
            buf: [0.0; 256],
            pos: 256,
        }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        if self.pos == self.buf.len() {
            for b in self.buf.iter_mut() {
                *b = self.rng.sample(StandardNormal);
            }
            self.pos = 0;
        }
        let z = self.buf[self.pos];
        self.pos += 1;
        z
    }
}

/// Per-step OU constants of one parameter setting.
#[derive(Debug, Clone)]
struct OuKernel {
    rho: f64,
    ln_rho: f64,
    /// `rho^g` and `sqrt(1 - rho^(2g))` for small gaps `g`.
    decay: Vec<f64>,
    spread: Vec<f64>,
}

const GAP_TABLE_LEN: usize = 1 << 14;

impl OuKernel {
    fn new(params: &ProcessParams, config: &LaydownConfig, max_gap: u64) -> Self {
        let ln_rho = -params.noise_amplitude * params.step_size_mm() / config.reference_length;
        let len = (max_gap as usize + 1).min(GAP_TABLE_LEN);
        let decay = (0..len).map(|g| (g as f64 * ln_rho).exp()).collect();
        let spread = (0..len).map(|g| Self::spread_of(g as f64, ln_rho)).collect();
        OuKernel {
            rho: ln_rho.exp(),
            ln_rho,
            decay,
            spread,
        }
    }

    #[inline]
    fn spread_of(g: f64, ln_rho: f64) -> f64 {
        (-(2.0 * g * ln_rho).exp_m1()).max(0.0).sqrt()
    }

    /// Transition coefficients across `g` steps.
    #[inline]
    fn gap(&self, g: u64) -> (f64, f64) {
        match self.decay.get(g as usize) {
            Some(&a) => (a, self.spread[g as usize]),
            None => {
                let g = g as f64;
                ((g * self.ln_rho).exp(), Self::spread_of(g, self.ln_rho))
            }
        }
    }
}

/// Straight OU recurrence for one fiber, every point emitted. The
/// reference starts at machine offset `start` and stops once it has moved
/// `travel` mm.
fn trace_fiber<R: Rng>(
    params: &ProcessParams,
    spin_position: f64,
    start: f64,
    travel: f64,
    config: &LaydownConfig,
    rng: R,
    mut emit: impl FnMut(f64, f64),
) {
    let kernel = OuKernel::new(params, config, 1);
    let (_, kick) = kernel.gap(1);
    let (k1, k2) = (kick * params.sigma1, kick * params.sigma2);
    let drift = params.speed_ratio * params.step_size_mm();
    let steps = (travel / drift).ceil() as u64;
    let mut normals = NormalStream::new(rng);

    let mut x1 = params.sigma1 * normals.next();
    let mut x2 = params.sigma2 * normals.next();
    for k in 0..=steps {
        emit(start + k as f64 * drift + x1, spin_position + x2);
        if k < steps {
            x1 = kernel.rho * x1 + k1 * normals.next();
            x2 = kernel.rho * x2 + k2 * normals.next();
        }
    }
}

/// Same law as [`trace_fiber`], but only points inside the window are
/// produced. The two offset components are independent Markov chains, so
/// one "lead" component is stepped every step and the other is drawn with
/// the exact multi-step transition only when the lead coordinate falls
/// inside the window. The lead is whichever axis the fiber is less likely
/// to hit, which skips most of the work for fibers in the margins.
#[allow(clippy::too_many_arguments)]
fn trace_fiber_clipped<R: Rng>(
    params: &ProcessParams,
    kernel: &OuKernel,
    spin_position: f64,
    start: f64,
    travel: f64,
    window: &SampleWindow,
    rng: R,
    mut emit: impl FnMut(f64, f64),
) {
    let drift = params.speed_ratio * params.step_size_mm();
    let steps = (travel / drift).ceil() as u64;
    let (_, kick) = kernel.gap(1);
    let mut normals = NormalStream::new(rng);

    // rough hit rates; any choice yields the same distribution
    let cross_hit = overlap(spin_position - 2.0 * params.sigma2, spin_position + 2.0 * params.sigma2, window.cross_extent)
        / (4.0 * params.sigma2);
    let machine_hit = window.machine_extent / travel.max(window.machine_extent);
    let lead_is_cross = cross_hit <= machine_hit;

    let (lead_sigma, lag_sigma) = if lead_is_cross {
        (params.sigma2, params.sigma1)
    } else {
        (params.sigma1, params.sigma2)
    };
    let lead_kick = kick * lead_sigma;
    let mut lead = lead_sigma * normals.next();
    let mut lag = 0.0;
    let mut lag_step: Option<u64> = None;

    for k in 0..=steps {
        let reference = start + k as f64 * drift;
        let (lead_coord, lead_extent) = if lead_is_cross {
            (spin_position + lead, window.cross_extent)
        } else {
            (reference + lead, window.machine_extent)
        };
        if lead_coord >= 0.0 && lead_coord <= lead_extent {
            lag = match lag_step {
                None => lag_sigma * normals.next(),
                Some(k0) => {
                    let (a, b) = kernel.gap(k - k0);
                    a * lag + b * lag_sigma * normals.next()
                }
            };
            lag_step = Some(k);
            let (m, c) = if lead_is_cross {
                (reference + lag, lead_coord)
            } else {
                (lead_coord, spin_position + lag)
            };
            if window.contains(m, c) {
                emit(m, c);
            }
        }
        if k < steps {
            lead = kernel.rho * lead + lead_kick * normals.next();
        }
    }
}

fn overlap(lo: f64, hi: f64, extent: f64) -> f64 {
    (hi.min(extent) - lo.max(0.0)).max(0.0)
}

fn check_travel(belt_travel: f64) -> Result<()> {
    if !(belt_travel > 0.0 && belt_travel.is_finite()) {
        return Err(Error::invalid(format!("belt_travel must be > 0, got {belt_travel}")));
    }
    Ok(())
}

/// Simulates a single unclipped fiber whose reference moves from machine
/// offset 0 to `belt_travel`.
pub fn simulate_fiber(
    params: &ProcessParams,
    spin_position: f64,
    belt_travel: f64,
    seed: u64,
    config: &LaydownConfig,
) -> Result<FiberCurve> {
    check_travel(belt_travel)?;
    params.validate_physical()?;
    config.validate()?;
    let rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut points = Vec::new();
    trace_fiber(params, spin_position, 0.0, belt_travel, config, rng, |m, c| {
        points.push([m, c])
    });
    Ok(FiberCurve {
        points,
        point_mass: config.fiber_mass_per_length * params.step_size_mm(),
    })
}

/// Belt travel per fiber: the window plus a margin on both ends.
pub fn belt_travel(params: &ProcessParams, window: &SampleWindow, config: &LaydownConfig) -> f64 {
    window.machine_extent + 2.0 * config.margin_sigmas * params.sigma1
}

fn sample_kernel(params: &ProcessParams, config: &LaydownConfig, travel: f64) -> OuKernel {
    let steps = (travel / (params.speed_ratio * params.step_size_mm())).ceil() as u64;
    OuKernel::new(params, config, steps)
}

fn check_sample_inputs(params: &ProcessParams, window: &SampleWindow, config: &LaydownConfig) -> Result<()> {
    params.validate_physical()?;
    config.validate()?;
    SampleWindow::new(window.machine_extent, window.cross_extent)?;
    Ok(())
}

/// Simulates every fiber that can reach the window and keeps the points
/// that land inside it.
pub fn simulate_sample(
    params: &ProcessParams,
    window: &SampleWindow,
    seed: u64,
    config: &LaydownConfig,
) -> Result<VirtualNonwoven> {
    check_sample_inputs(params, window, config)?;
    let spins = plan_spin_positions(params, window, config)?;
    let travel = belt_travel(params, window, config);
    let start = -config.margin_sigmas * params.sigma1;
    let point_mass = config.fiber_mass_per_length * params.step_size_mm();
    let kernel = sample_kernel(params, config, travel);
    let fibers: Vec<FiberCurve> = spins
        .par_iter()
        .enumerate()
        .map(|(i, &spin)| {
            let rng = fiber_rng(seed, i as u64);
            let mut points = Vec::new();
            trace_fiber_clipped(params, &kernel, spin, start, travel, window, rng, |m, c| {
                points.push([m, c]);
            });
            FiberCurve { points, point_mass }
        })
        .filter(|f| !f.points.is_empty())
        .collect();
    Ok(VirtualNonwoven {
        fibers,
        window: *window,
        params: *params,
        seed,
    })
}

/// Same laydown as [`simulate_sample`], but accumulates point counts on a
/// fine grid instead of storing the points. Campaigns use this path; it
/// deposits exactly the points `simulate_sample` would retain.
pub fn deposit_sample(
    params: &ProcessParams,
    window: &SampleWindow,
    seed: u64,
    config: &LaydownConfig,
    base_resolution: f64,
) -> Result<Deposit> {
    check_sample_inputs(params, window, config)?;
    let spins = plan_spin_positions(params, window, config)?;
    let travel = belt_travel(params, window, config);
    let start = -config.margin_sigmas * params.sigma1;
    let point_mass = config.fiber_mass_per_length * params.step_size_mm();
    let empty = Deposit::empty(*window, base_resolution, point_mass)?;

    let kernel = sample_kernel(params, config, travel);
    let fold = |mut acc: Deposit, (i, &spin): (usize, &f64)| {
        let rng = fiber_rng(seed, i as u64);
        trace_fiber_clipped(params, &kernel, spin, start, travel, window, rng, |m, c| {
            acc.add_point(m, c);
        });
        acc
    };
    Ok(spins
        .par_iter()
        .enumerate()
        .fold(|| empty.clone(), fold)
        .reduce(|| empty.clone(), Deposit::merge))
}

/// Retained mass per unit window area (units per mm²).
pub fn basis_weight(nw: &VirtualNonwoven) -> Result<f64> {
    let area = nw.window.area();
    if !(area > 0.0) {
        return Err(Error::invalid("window area must be > 0"));
    }
    Ok(nw.total_mass() / area)
}
