//! Support/test/validation splits and instance-subset selection.
//!
//! All randomness comes from one [`HarnessRng`] per split, consumed in a fixed
//! order: instances in declaration order, then sequences in manifest order.
//! The samples left after drawing the support set are shuffled per instance
//! and the first `ceil(0.8 * n)` go to test, the rest to validation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::{InstanceIdx, LabelSpace, LabelSpaceSpec, ObjectIdx};

use super::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Protocol {
    /// One support shot per (instance, sequence).
    #[serde(rename = "1sas")]
    OneShotAllSequences,
    /// One support shot per instance, from the first sequence only.
    #[serde(rename = "1s1s")]
    OneShotFirstSequence,
    /// `k` support shots per (instance, sequence).
    #[serde(rename = "kshot")]
    KShot { k: usize },
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::OneShotAllSequences => f.write_str("1sas"),
            Protocol::OneShotFirstSequence => f.write_str("1s1s"),
            Protocol::KShot { k } => write!(f, "kshot{k}"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1sas" => Ok(Protocol::OneShotAllSequences),
            "1s1s" => Ok(Protocol::OneShotFirstSequence),
            other => other
                .strip_prefix("kshot")
                .and_then(|k| k.parse().ok())
                .map(|k| Protocol::KShot { k })
                .ok_or_else(|| Error::InvalidConfig(format!("unknown protocol `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Test => "test",
            Split::Val => "val",
        })
    }
}

/// One evaluation episode. Sample ids are listed in manifest order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub protocol: Protocol,
    pub seed: u64,
    pub support: Vec<String>,
    pub test: Vec<String>,
    pub val: Vec<String>,
}

impl Episode {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Test => &self.test,
            Split::Val => &self.val,
        }
    }

    /// Resolves sample ids to dataset indices.
    pub fn resolve(&self, dataset: &Dataset, ids: &[String]) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = dataset
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect();
        ids.iter()
            .map(|id| {
                index.get(id.as_str()).copied().ok_or_else(|| {
                    Error::InvalidManifest(vec![format!("episode sample `{id}` not in dataset")])
                })
            })
            .collect()
    }
}

/// `ceil(0.8 * n)` without floating point.
pub fn test_count(n: usize) -> usize {
    (4 * n).div_ceil(5)
}

/// Sample indices grouped by instance, then sequence, in manifest order.
fn cells(dataset: &Dataset) -> Vec<Vec<Vec<usize>>> {
    let mut cells =
        vec![vec![Vec::new(); dataset.sequences().len()]; dataset.label_space().num_instances()];
    for i in 0..dataset.len() {
        let m = dataset.meta(i);
        cells[m.instance.0][m.sequence].push(i);
    }
    cells
}

pub fn split(dataset: &Dataset, protocol: Protocol, seed: u64) -> Result<Episode> {
    if let Protocol::KShot { k: 0 } = protocol {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if dataset.sequences().is_empty() {
        return Err(Error::InvalidConfig("dataset declares no sequences".into()));
    }
    let ls = dataset.label_space();
    let mut rng = seeded_rng(seed);
    let mut support = Vec::new();
    let mut test = Vec::new();
    let mut val = Vec::new();
    let coverage = |i: usize, s: usize| Error::IncompleteCoverage {
        instance: ls.instance_name(InstanceIdx(i)).to_string(),
        sequence: dataset.sequences()[s].clone(),
    };

    for (i, per_seq) in cells(dataset).into_iter().enumerate() {
        let mut chosen = Vec::new();
        match protocol {
            Protocol::OneShotAllSequences => {
                for (s, cell) in per_seq.iter().enumerate() {
                    if cell.is_empty() {
                        return Err(coverage(i, s));
                    }
                    chosen.push(cell[rng.random_range(0..cell.len())]);
                }
            }
            Protocol::OneShotFirstSequence => {
                let cell = &per_seq[0];
                if cell.is_empty() {
                    return Err(coverage(i, 0));
                }
                chosen.push(cell[rng.random_range(0..cell.len())]);
            }
            Protocol::KShot { k } => {
                for (s, cell) in per_seq.iter().enumerate() {
                    if cell.len() < k {
                        return Err(coverage(i, s));
                    }
                    let mut cell = cell.clone();
                    let (picked, _) = cell.partial_shuffle(&mut rng, k);
                    chosen.extend_from_slice(picked);
                }
            }
        }
        let mut rest: Vec<usize> = per_seq
            .iter()
            .flatten()
            .copied()
            .filter(|idx| !chosen.contains(idx))
            .collect();
        rest.sort_unstable();
        rest.shuffle(&mut rng);
        let n_test = test_count(rest.len());
        test.extend_from_slice(&rest[..n_test]);
        val.extend_from_slice(&rest[n_test..]);
        support.extend(chosen);
    }

    let ids = |mut v: Vec<usize>| {
        v.sort_unstable();
        v.into_iter()
            .map(|i| dataset.samples()[i].sample_id.clone())
            .collect()
    };
    Ok(Episode {
        protocol,
        seed,
        support: ids(support),
        test: ids(test),
        val: ids(val),
    })
}

pub fn split_1sas(dataset: &Dataset, seed: u64) -> Result<Episode> {
    split(dataset, Protocol::OneShotAllSequences, seed)
}

pub fn split_1s1s(dataset: &Dataset, seed: u64) -> Result<Episode> {
    split(dataset, Protocol::OneShotFirstSequence, seed)
}

pub fn split_kshot(dataset: &Dataset, k: usize, seed: u64) -> Result<Episode> {
    split(dataset, Protocol::KShot { k }, seed)
}

/// Keeps the first `p` declared instances of every object class.
pub fn select_instances(dataset: &Dataset, p: usize) -> Result<Dataset> {
    if p == 0 {
        return Err(Error::InvalidConfig("p must be at least 1".into()));
    }
    let ls = dataset.label_space();
    let mut keep = vec![false; ls.num_instances()];
    for o in 0..ls.num_objects() {
        let members: Vec<_> = ls.instances_of(ObjectIdx(o)).collect();
        if members.len() < p {
            return Err(Error::NotEnoughInstances {
                object: ls.object_name(ObjectIdx(o)).to_string(),
                available: members.len(),
                requested: p,
            });
        }
        for m in members.into_iter().take(p) {
            keep[m.0] = true;
        }
    }
    let full = ls.to_spec();
    let spec = LabelSpaceSpec {
        objects: full.objects,
        instances: full
            .instances
            .into_iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(d, _)| d)
            .collect(),
    };
    let sub = LabelSpace::new(spec)?;
    dataset.restrict(sub, |i| keep[dataset.meta(i).instance.0])
}

/// Uniformly down-samples every (instance, sequence) cell to the smallest
/// cell size in the dataset.
pub fn balance_dataset(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let cells = cells(dataset);
    let min = cells.iter().flatten().map(Vec::len).min().unwrap_or(0);
    let mut rng = seeded_rng(seed);
    let mut keep = vec![false; dataset.len()];
    for cell in cells.iter().flatten() {
        let mut cell = cell.clone();
        let (picked, _) = cell.partial_shuffle(&mut rng, min);
        for &i in picked.iter() {
            keep[i] = true;
        }
    }
    dataset.restrict(dataset.label_space().clone(), |i| keep[i])
}
