//! Shared, disk-cached simulation data for the acceptance criteria. All
//! caches live under cargo's per-target scratch directory and are resumed
//! when the plan matches.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use nonwoven::dataset::studies::ReplayCache;
use nonwoven::dataset::{
    grouped_split, latin_hypercube, run_campaign, CampaignDataset, CampaignPlan, CampaignStore, LaydownSimulator,
    RunOptions,
};
use nonwoven::params::{ParamRanges, SampleWindow};
use nonwoven::surrogates::{train, FamilySpec, MlpConfig, ModelSpec, Scaling, TrainedSurrogate};

pub const DESK_SETTINGS: usize = 500;
pub const DESK_DESIGN_SEED: u64 = 20_240;
pub const DESK_CAMPAIGN_SEED: u64 = 7;
pub const SPLIT_SEED: u64 = 11;

pub fn cache_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("cache dir");
    dir
}

pub fn simulator() -> &'static LaydownSimulator {
    static SIM: OnceLock<LaydownSimulator> = OnceLock::new();
    SIM.get_or_init(LaydownSimulator::default)
}

pub fn desk_plan() -> CampaignPlan {
    CampaignPlan {
        points: latin_hypercube(&ParamRanges::default(), DESK_SETTINGS, DESK_DESIGN_SEED).unwrap(),
        window: SampleWindow::desk(),
        replicates: 5,
        seed: DESK_CAMPAIGN_SEED,
        design: format!("latin hypercube, k={DESK_SETTINGS}, seed={DESK_DESIGN_SEED}, default ranges"),
    }
}

pub struct Desk {
    pub data: CampaignDataset,
    /// Wall time of this process's share of the campaign (zero when fully
    /// cached).
    pub seconds: f64,
}

/// The 500-setting desk campaign with its grouped split applied.
pub fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let t = Instant::now();
        let store = CampaignStore::new(cache_dir().join("desk"));
        let mut data = run_campaign(simulator(), &desk_plan(), Some(&store), RunOptions::default()).expect("desk campaign");
        grouped_split(&mut data, SPLIT_SEED).unwrap();
        Desk {
            data,
            seconds: t.elapsed().as_secs_f64(),
        }
    })
}

/// Memoized simulator for the studies, seeded with the desk campaign rows.
pub fn replay() -> &'static ReplayCache<'static> {
    static MEMO: OnceLock<ReplayCache<'static>> = OnceLock::new();
    MEMO.get_or_init(|| {
        let memo = ReplayCache::with_log(simulator(), &cache_dir().join("studies.jsonl")).unwrap();
        memo.add_campaign(&desk().data, &SampleWindow::desk());
        memo
    })
}

/// Input and target scaling of the desk-scale MLP.
pub const MLP_INPUT: Scaling = Scaling::LogStandard;
pub const MLP_TARGET: Scaling = Scaling::LogStandard;
pub const MLP_SEED: u64 = 1;

/// Default architecture; batch size and patience picked on the validation
/// split of a partial campaign.
pub fn mlp_spec() -> ModelSpec {
    let config = MlpConfig {
        batch_size: 64,
        patience: 50,
        ..MlpConfig::default()
    };
    let mut spec = ModelSpec::new(FamilySpec::Mlp(config), MLP_SEED);
    spec.input = MLP_INPUT;
    spec.target = MLP_TARGET;
    spec
}

/// The MLP trained on the desk campaign.
pub fn desk_mlp() -> &'static TrainedSurrogate {
    static MLP: OnceLock<TrainedSurrogate> = OnceLock::new();
    MLP.get_or_init(|| train(&mlp_spec(), &desk().data).expect("desk MLP"))
}
