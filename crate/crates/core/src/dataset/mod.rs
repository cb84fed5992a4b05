//! Designs, campaigns, studies and ML-ready datasets.

pub mod campaign;
pub mod design;
pub mod split;
pub mod standardize;
pub mod studies;

pub use campaign::{
    read_csv, row_seed, run_campaign, write_atomic, CampaignDataset, CampaignPlan, CampaignRow, CampaignStore, LaydownSimulator,
    RunOptions, Simulator,
};
pub use design::{expert_grid, latin_hypercube, uniform_levels};
pub use split::{grouped_split, Split};
pub use standardize::Standardizer;
pub use studies::{replicate_averaging, step_size_study, uncertainty_report};
