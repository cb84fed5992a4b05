//! Per-feature z-scoring fitted on training rows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Standardizer<T: Scalar = f64> {
    pub mean: Vec<T>,
    /// Population standard deviation.
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    /// `names` label features in the constant-feature error; pass an empty
    /// slice to report indices.
    pub fn fit(x: ArrayView2<T>, names: &[&str]) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("cannot standardize zero rows"));
        }
        let nt = T::of(n as f64);
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let m = col.iter().copied().sum::<T>() / nt;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / nt;
            let s = var.sqrt();
            // Relative test: a column of one repeated value can still leave
            // rounding residue in the variance.
            if !(s > T::epsilon() * m.abs() * T::of(16.0)) || !s.is_finite() {
                let name = names.get(j).map(|s| s.to_string()).unwrap_or_else(|| format!("#{j}"));
                return Err(Error::ConstantFeature(name));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::invalid(format!("expected {} features, got {cols}", self.dim())));
        }
        Ok(())
    }

    pub fn transform(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check(x.ncols())?;
        let mut z = x.to_owned();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        Ok(z)
    }

    pub fn transform_row(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        self.check(x.len())?;
        Ok(Array1::from_iter(x.iter().enumerate().map(|(j, &v)| (v - self.mean[j]) / self.std[j])))
    }

    pub fn inverse_transform(&self, z: ArrayView2<T>) -> Result<Array2<T>> {
        self.check(z.ncols())?;
        let mut x = z.to_owned();
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        Ok(x)
    }
}
