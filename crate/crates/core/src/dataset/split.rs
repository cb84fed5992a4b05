//! Grouped train/validation/test partition: all replicates of a setting
//! share one label so identical inputs never straddle splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::campaign::CampaignDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// Number of settings per split: `test_fraction` of all groups go to
/// test, then `val_fraction` of the remainder to validation.
pub fn split_counts(groups: usize, test_fraction: f64, val_fraction: f64) -> (usize, usize, usize) {
    let test = (groups as f64 * test_fraction).round() as usize;
    let val = ((groups - test) as f64 * val_fraction).round() as usize;
    (groups - test - val, val, test)
}

/// Labels every row by shuffling setting ids. Fractions default to
/// 0.2/0.2 in [`grouped_split`].
pub fn grouped_split_with(ds: &mut CampaignDataset, test_fraction: f64, val_fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) || !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid("split fractions must lie in [0, 1)"));
    }
    let mut ids: Vec<usize> = ds.by_setting().into_keys().collect();
    if ids.len() < 5 {
        return Err(Error::invalid(format!("grouped split needs >= 5 settings, got {}", ids.len())));
    }
    ids.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    let (_, val, test) = split_counts(ids.len(), test_fraction, val_fraction);
    let mut label = std::collections::HashMap::new();
    for (k, id) in ids.into_iter().enumerate() {
        let s = if k < test {
            Split::Test
        } else if k < test + val {
            Split::Val
        } else {
            Split::Train
        };
        label.insert(id, s);
    }
    for r in &mut ds.rows {
        r.split = Some(label[&r.setting_id]);
    }
    Ok(())
}

pub fn grouped_split(ds: &mut CampaignDataset, seed: u64) -> Result<()> {
    grouped_split_with(ds, 0.2, 0.2, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::campaign::CampaignRow;
    use crate::homogeneity::CvProfile;
    use crate::params::ProcessParams;
    use std::collections::{BTreeMap, BTreeSet};

    fn dataset(settings: usize) -> CampaignDataset {
        let rows = (0..settings)
            .flat_map(|s| {
                (0..5).map(move |r| CampaignRow {
                    setting_id: s,
                    replicate: r,
                    params: ProcessParams::unchecked(s as f64 + 1.0, 1.0, 1.0, 0.1, 300.0),
                    seed: 0,
                    outcome: Ok(CvProfile::new([1.0; 7])),
                    split: None,
                })
            })
            .collect();
        CampaignDataset { rows }
    }

    #[test]
    fn hundred_settings_split_64_16_20() {
        let mut ds = dataset(100);
        grouped_split(&mut ds, 1).unwrap();
        let mut count: BTreeMap<Split, BTreeSet<usize>> = BTreeMap::new();
        for r in &ds.rows {
            count.entry(r.split.unwrap()).or_default().insert(r.setting_id);
        }
        assert_eq!(count[&Split::Train].len(), 64);
        assert_eq!(count[&Split::Val].len(), 16);
        assert_eq!(count[&Split::Test].len(), 20);
        ds.check(5).unwrap();
    }

    #[test]
    fn too_few_groups() {
        assert!(grouped_split(&mut dataset(4), 1).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for s in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(s.as_str().parse::<Split>().unwrap(), s);
        }
        assert!("other".parse::<Split>().is_err());
    }
}
