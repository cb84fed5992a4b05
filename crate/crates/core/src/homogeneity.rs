//! Mass rasterization and coefficient-of-variation homogeneity profiles.
//!
//! A profile holds one CV per grid resolution. Cell values are mass per
//! cell area, so truncated cells at the far window edges are compared on
//! equal footing with full cells; for uniform grids this is identical to
//! using raw cell masses.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laydown::VirtualNonwoven;
use crate::params::SampleWindow;
use crate::scalar::Scalar;
use crate::stats;

/// Grid sizes of a profile, in mm.
pub const RESOLUTIONS_MM: [f64; 7] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

/// Resolution of the count grid used by [`Deposit`]. Every entry of
/// [`RESOLUTIONS_MM`] is an integer multiple of it.
pub const BASE_RESOLUTION_MM: f64 = 0.5;

/// Grid size actually used for a nominal resolution on a given window.
///
/// A CV needs at least two cells along each axis, so the resolution is
/// capped at the largest multiple of [`BASE_RESOLUTION_MM`] that fits twice
/// into the shorter window side. On a 50 x 50 mm window the 50 mm level is
/// evaluated on 25 mm cells; larger windows are unaffected.
pub fn effective_resolution(resolution: f64, window: &SampleWindow) -> f64 {
    let half = window.machine_extent.min(window.cross_extent) / 2.0;
    let cap = ((half / BASE_RESOLUTION_MM).floor() * BASE_RESOLUTION_MM).max(BASE_RESOLUTION_MM);
    resolution.min(cap)
}

/// Fiber mass per cell on a regular grid covering the window. Rows run
/// along the machine direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassGrid<T = f64> {
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
    pub machine_extent: f64,
    pub cross_extent: f64,
    /// Row-major, `rows * cols` entries.
    pub cell_mass: Vec<T>,
}

fn bins(extent: f64, resolution: f64) -> usize {
    // tolerate extents that are a multiple of the resolution up to rounding
    let q = extent / resolution;
    let r = q.round();
    if (q - r).abs() < 1e-9 * q.max(1.0) {
        (r as usize).max(1)
    } else {
        (q.ceil() as usize).max(1)
    }
}

#[inline]
fn bin_index(x: f64, resolution: f64, n: usize) -> usize {
    ((x / resolution).floor().max(0.0) as usize).min(n - 1)
}

impl<T: Scalar> MassGrid<T> {
    pub fn zeros(window: &SampleWindow, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid(format!("resolution must be > 0, got {resolution}")));
        }
        if resolution > window.machine_extent.min(window.cross_extent) * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "resolution {resolution} mm exceeds the window ({} x {} mm)",
                window.machine_extent, window.cross_extent
            )));
        }
        let rows = bins(window.machine_extent, resolution);
        let cols = bins(window.cross_extent, resolution);
        Ok(MassGrid {
            resolution,
            rows,
            cols,
            machine_extent: window.machine_extent,
            cross_extent: window.cross_extent,
            cell_mass: vec![T::zero(); rows * cols],
        })
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.cell_mass[row * self.cols + col]
    }

    pub fn total_mass(&self) -> T {
        self.cell_mass.iter().copied().sum()
    }

    /// Area of a cell; the last row and column may be truncated.
    pub fn cell_area(&self, row: usize, col: usize) -> f64 {
        let h = (self.machine_extent - row as f64 * self.resolution).min(self.resolution);
        let w = (self.cross_extent - col as f64 * self.resolution).min(self.resolution);
        h * w
    }

    /// Mass divided by cell area, row-major.
    pub fn densities(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.cell_mass.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.get(r, c) / T::of(self.cell_area(r, c)));
            }
        }
        out
    }

    /// Multiplies every cell by `c`.
    pub fn scaled(&self, c: T) -> Self {
        MassGrid {
            cell_mass: self.cell_mass.iter().map(|&m| m * c).collect(),
            ..self.clone()
        }
    }
}

/// Point counts on a fine grid, all points sharing one mass. Produced by
/// [`crate::laydown::deposit_sample`]; integer counts make the sum
/// independent of accumulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Deposit {
    window: SampleWindow,
    resolution: f64,
    inv_resolution: f64,
    rows: usize,
    cols: usize,
    point_mass: f64,
    counts: Vec<u32>,
}

impl Deposit {
    pub fn empty(window: SampleWindow, resolution: f64, point_mass: f64) -> Result<Self> {
        let g = MassGrid::<f64>::zeros(&window, resolution)?;
        Ok(Deposit {
            window,
            resolution,
            inv_resolution: 1.0 / resolution,
            rows: g.rows,
            cols: g.cols,
            point_mass,
            counts: vec![0; g.rows * g.cols],
        })
    }

    #[inline]
    pub fn add_point(&mut self, machine: f64, cross: f64) {
        let r = ((machine * self.inv_resolution) as usize).min(self.rows - 1);
        let c = ((cross * self.inv_resolution) as usize).min(self.cols - 1);
        self.counts[r * self.cols + c] += 1;
    }

    pub fn merge(mut self, other: Deposit) -> Deposit {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }

    pub fn total_points(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn window(&self) -> SampleWindow {
        self.window
    }

    pub fn point_mass(&self) -> f64 {
        self.point_mass
    }

    /// Aggregates onto a coarser grid. `resolution` must be an integer
    /// multiple of the deposit resolution.
    pub fn grid(&self, resolution: f64) -> Result<MassGrid<f64>> {
        let k = resolution / self.resolution;
        let ki = k.round();
        if ki < 1.0 || (k - ki).abs() > 1e-9 * k {
            return Err(Error::invalid(format!(
                "resolution {resolution} is not a multiple of the deposit resolution {}",
                self.resolution
            )));
        }
        let ki = ki as usize;
        let mut g = MassGrid::<f64>::zeros(&self.window, resolution)?;
        let mut counts = vec![0u64; g.rows * g.cols];
        for r in 0..self.rows {
            let gr = (r / ki).min(g.rows - 1);
            for c in 0..self.cols {
                let gc = (c / ki).min(g.cols - 1);
                counts[gr * g.cols + gc] += self.counts[r * self.cols + c] as u64;
            }
        }
        g.cell_mass = counts.into_iter().map(|n| n as f64 * self.point_mass).collect();
        Ok(g)
    }
}

/// Seven CV values, one per entry of [`RESOLUTIONS_MM`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvProfile {
    pub resolutions_mm: [f64; 7],
    pub cv: [f64; 7],
}

impl CvProfile {
    pub fn new(cv: [f64; 7]) -> Self {
        CvProfile {
            resolutions_mm: RESOLUTIONS_MM,
            cv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions_mm.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("profile resolutions must be strictly increasing"));
        }
        if self.cv.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("profile values must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.cv.iter().sum::<f64>() / 7.0
    }
}

/// Bins every retained point into a grid of the given resolution. Cells
/// are half-open except at the far window edges.
pub fn rasterize(nw: &VirtualNonwoven, resolution: f64) -> Result<MassGrid<f64>> {
    let mut g = MassGrid::<f64>::zeros(&nw.window, resolution)?;
    for f in &nw.fibers {
        for p in &f.points {
            let r = bin_index(p[0], resolution, g.rows);
            let c = bin_index(p[1], resolution, g.cols);
            g.cell_mass[r * g.cols + c] += f.point_mass;
        }
    }
    Ok(g)
}

/// Coefficient of variation of the cell densities (population sigma over mu).
pub fn cv<T: Scalar>(grid: &MassGrid<T>) -> Result<T> {
    if grid.cell_mass.is_empty() {
        return Err(Error::DegenerateSample("grid has no cells".into()));
    }
    if grid.cell_mass.iter().any(|m| *m < T::zero() || !m.is_finite()) {
        return Err(Error::invalid("cell masses must be finite and >= 0"));
    }
    stats::coefficient_of_variation(&grid.densities())
        .ok_or_else(|| Error::DegenerateSample("mean cell mass is zero".into()))
}

/// CV at each of the seven resolutions.
pub fn cv_profile(nw: &VirtualNonwoven) -> Result<CvProfile> {
    let mut out = [0.0; 7];
    for (slot, &r) in out.iter_mut().zip(RESOLUTIONS_MM.iter()) {
        *slot = cv(&rasterize(nw, effective_resolution(r, &nw.window))?)?;
    }
    Ok(CvProfile::new(out))
}

/// [`cv_profile`] computed from a deposit.
pub fn deposit_profile(dep: &Deposit) -> Result<CvProfile> {
    let mut out = [0.0; 7];
    for (slot, &r) in out.iter_mut().zip(RESOLUTIONS_MM.iter()) {
        *slot = cv(&dep.grid(effective_resolution(r, &dep.window()))?)?;
    }
    Ok(CvProfile::new(out))
}

/// Binary PGM (P5, maxval 255): pixel = floor(255 * mass / max mass).
pub fn encode_pgm<T: Scalar>(grid: &MassGrid<T>) -> Result<Vec<u8>> {
    if grid.cell_mass.is_empty() {
        return Err(Error::invalid("cannot render an empty grid"));
    }
    let max = grid
        .cell_mass
        .iter()
        .copied()
        .fold(T::zero(), |a, b| if b > a { b } else { a })
        .to_f64_lossy();
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend(grid.cell_mass.iter().map(|m| {
        if max > 0.0 {
            (255.0 * m.to_f64_lossy() / max).floor().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn render_image<T: Scalar>(grid: &MassGrid<T>, path: &Path) -> Result<()> {
    let bytes = encode_pgm(grid)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
