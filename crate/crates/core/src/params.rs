//! Process parameters, their admissible ranges and the sample window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default discretization step along the fiber, in mm (2.5e-5 m).
pub const DEFAULT_STEP_SIZE_MM: f64 = 0.025;

/// The five process inputs, in the fixed order used by feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    Sigma1,
    Sigma2,
    NoiseAmplitude,
    SpeedRatio,
    SpinDensity,
}

impl Param {
    pub const ALL: [Param; 5] = [
        Param::Sigma1,
        Param::Sigma2,
        Param::NoiseAmplitude,
        Param::SpeedRatio,
        Param::SpinDensity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Param> {
        Param::ALL.get(i).copied()
    }

    /// Wire name, shared by the CSV header and the HTTP API.
    pub fn name(self) -> &'static str {
        match self {
            Param::Sigma1 => "sigma1_mm",
            Param::Sigma2 => "sigma2_mm",
            Param::NoiseAmplitude => "A",
            Param::SpeedRatio => "v",
            Param::SpinDensity => "n_per_m",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Param::Sigma1 | Param::Sigma2 => "mm",
            Param::NoiseAmplitude | Param::SpeedRatio => "1",
            Param::SpinDensity => "1/m",
        }
    }

    pub fn default_range(self) -> Interval {
        match self {
            Param::Sigma1 | Param::Sigma2 => Interval::new_unchecked(1.0, 50.0),
            Param::NoiseAmplitude => Interval::new_unchecked(1.0, 50.0),
            Param::SpeedRatio => Interval::new_unchecked(0.01, 0.25),
            Param::SpinDensity => Interval::new_unchecked(200.0, 10_000.0),
        }
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::invalid(format!("empty or non-finite interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    const fn new_unchecked(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Maps `[lo, hi]` onto `[0, 1]`. A point interval maps to 0.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.width() == 0.0 {
            0.0
        } else {
            (x - self.lo) / self.width()
        }
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

/// One point of the five-dimensional process space, plus the optional
/// discretization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    /// Machine-direction standard deviation of the laydown, mm.
    #[serde(rename = "sigma1_mm")]
    pub sigma1: f64,
    /// Cross-direction standard deviation of the laydown, mm.
    #[serde(rename = "sigma2_mm")]
    pub sigma2: f64,
    #[serde(rename = "A")]
    pub noise_amplitude: f64,
    #[serde(rename = "v")]
    pub speed_ratio: f64,
    /// Spin positions per metre of cross direction.
    #[serde(rename = "n_per_m")]
    pub spin_density: f64,
    /// Distance between discrete points along a fiber, mm.
    #[serde(rename = "ds_mm", default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

impl ProcessParams {
    /// Validated constructor; every input must lie in its default range.
    pub fn new(
        sigma1: f64,
        sigma2: f64,
        noise_amplitude: f64,
        speed_ratio: f64,
        spin_density: f64,
    ) -> Result<Self> {
        let p = Self::unchecked(sigma1, sigma2, noise_amplitude, speed_ratio, spin_density);
        p.validate()?;
        Ok(p)
    }

    /// Builds without range checks. The simulator still requires positive
    /// standard deviations, speed ratio and density.
    pub fn unchecked(
        sigma1: f64,
        sigma2: f64,
        noise_amplitude: f64,
        speed_ratio: f64,
        spin_density: f64,
    ) -> Self {
        ProcessParams {
            sigma1,
            sigma2,
            noise_amplitude,
            speed_ratio,
            spin_density,
            step_size: None,
        }
    }

    pub fn with_step_size(mut self, step_mm: f64) -> Self {
        self.step_size = Some(step_mm);
        self
    }

    pub fn step_size_mm(&self) -> f64 {
        self.step_size.unwrap_or(DEFAULT_STEP_SIZE_MM)
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Sigma1 => self.sigma1,
            Param::Sigma2 => self.sigma2,
            Param::NoiseAmplitude => self.noise_amplitude,
            Param::SpeedRatio => self.speed_ratio,
            Param::SpinDensity => self.spin_density,
        }
    }

    pub fn set(&mut self, p: Param, value: f64) {
        match p {
            Param::Sigma1 => self.sigma1 = value,
            Param::Sigma2 => self.sigma2 = value,
            Param::NoiseAmplitude => self.noise_amplitude = value,
            Param::SpeedRatio => self.speed_ratio = value,
            Param::SpinDensity => self.spin_density = value,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        Param::ALL.map(|p| self.get(p))
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self::unchecked(x[0], x[1], x[2], x[3], x[4])
    }

    /// Checks against the default ranges, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        match ParamRanges::default().violations(self).into_iter().next() {
            Some(v) => Err(v),
            None => self.validate_step(),
        }
    }

    fn validate_step(&self) -> Result<()> {
        match self.step_size {
            Some(ds) if !(ds > 0.0 && ds.is_finite()) => Err(Error::OutOfRange {
                name: "ds_mm",
                value: ds,
                min: 0.0,
                max: f64::INFINITY,
            }),
            _ => Ok(()),
        }
    }

    /// Minimal physical sanity required by the simulator, independent of
    /// the expert ranges.
    pub fn validate_physical(&self) -> Result<()> {
        let positive = [
            ("sigma1_mm", self.sigma1),
            ("sigma2_mm", self.sigma2),
            ("v", self.speed_ratio),
            ("n_per_m", self.spin_density),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::OutOfRange {
                    name,
                    value,
                    min: 0.0,
                    max: f64::INFINITY,
                });
            }
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::OutOfRange {
                name: "A",
                value: self.noise_amplitude,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        self.validate_step()
    }
}

/// Per-parameter closed intervals for the five inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub intervals: [Interval; 5],
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            intervals: Param::ALL.map(Param::default_range),
        }
    }
}

impl ParamRanges {
    pub fn new(intervals: [Interval; 5]) -> Result<Self> {
        for (p, iv) in Param::ALL.iter().zip(&intervals) {
            if !(iv.lo <= iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::invalid(format!("empty range for {p}: [{}, {}]", iv.lo, iv.hi)));
            }
        }
        Ok(ParamRanges { intervals })
    }

    pub fn get(&self, p: Param) -> Interval {
        self.intervals[p.index()]
    }

    pub fn with(mut self, p: Param, iv: Interval) -> Self {
        self.intervals[p.index()] = iv;
        self
    }

    /// Every out-of-range field, in parameter order.
    pub fn violations(&self, params: &ProcessParams) -> Vec<Error> {
        Param::ALL
            .iter()
            .filter_map(|&p| {
                let iv = self.get(p);
                let value = params.get(p);
                (!iv.contains(value)).then_some(Error::OutOfRange {
                    name: p.name(),
                    value,
                    min: iv.lo,
                    max: iv.hi,
                })
            })
            .collect()
    }

    pub fn contains(&self, params: &ProcessParams) -> bool {
        self.violations(params).is_empty()
    }

    pub fn normalize(&self, params: &ProcessParams) -> [f64; 5] {
        Param::ALL.map(|p| self.get(p).normalize(params.get(p)))
    }

    pub fn denormalize(&self, u: [f64; 5]) -> ProcessParams {
        ProcessParams::from_array(Param::ALL.map(|p| self.get(p).denormalize(u[p.index()])))
    }

    /// Clamps each coordinate into its interval.
    pub fn clamp(&self, params: &ProcessParams) -> ProcessParams {
        let mut out = *params;
        for p in Param::ALL {
            let iv = self.get(p);
            out.set(p, params.get(p).clamp(iv.lo, iv.hi));
        }
        out
    }
}

/// Rectangular sample region on the belt, in mm. Machine direction runs
/// along the belt, cross direction across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub machine_extent: f64,
    pub cross_extent: f64,
}

impl SampleWindow {
    pub fn new(machine_extent: f64, cross_extent: f64) -> Result<Self> {
        for (name, v) in [("machine_extent", machine_extent), ("cross_extent", cross_extent)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("window {name} must be > 0, got {v}")));
            }
        }
        Ok(SampleWindow {
            machine_extent,
            cross_extent,
        })
    }

    /// 5 x 5 cm desk-scale window.
    pub fn desk() -> Self {
        SampleWindow {
            machine_extent: 50.0,
            cross_extent: 50.0,
        }
    }

    /// 25 x 50 cm window: 500 mm along the belt, 250 mm across.
    pub fn full() -> Self {
        SampleWindow {
            machine_extent: 500.0,
            cross_extent: 250.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.machine_extent * self.cross_extent
    }

    pub fn contains(&self, machine: f64, cross: f64) -> bool {
        machine >= 0.0 && machine <= self.machine_extent && cross >= 0.0 && cross <= self.cross_extent
    }

    /// Parses `"<machine>x<cross>"` in mm, e.g. `50x50`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("window must look like 50x50 (mm), got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad window extent {t:?}")))
        };
        SampleWindow::new(parse(a)?, parse(b)?)
    }
}
