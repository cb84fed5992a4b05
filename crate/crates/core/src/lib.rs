pub mod dataset;
pub mod error;
pub mod explore;
pub mod homogeneity;
pub mod laydown;
pub mod params;
pub mod scalar;
pub mod stats;
pub mod surrogates;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type Mlp32 = surrogates::Mlp<f32>;
pub type Mlp64 = surrogates::Mlp<f64>;
pub type Standardizer32 = dataset::Standardizer<f32>;
pub type Standardizer64 = dataset::Standardizer<f64>;
pub type MassGrid32 = homogeneity::MassGrid<f32>;
pub type MassGrid64 = homogeneity::MassGrid<f64>;
