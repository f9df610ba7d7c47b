//! Instance-recognition metrics.
//!
//! `acc_i` is the unweighted mean of per-instance accuracies over instances
//! with at least one evaluated sample; `acc_o[o]` is the same mean restricted
//! to the instances of object `o`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{embed_sample, InstanceBag};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::{HeadConfig, InstanceIdx, LabelSpace, ObjectIdx, ReductionConfig};
use crate::reduction::Embedding;

use super::episode::{Episode, Protocol, Split};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `100 * (acc_2 - acc_1) / acc_1`.
pub fn relative_gain(acc_1: f64, acc_2: f64) -> Result<f64> {
    if acc_1 == 0.0 {
        return Err(Error::UndefinedGain);
    }
    Ok(100.0 * (acc_2 - acc_1) / acc_1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Row/column labels, in declaration order.
    pub labels: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub reduction: ReductionConfig,
    pub head: HeadConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub acc_i: f64,
    pub acc_o: BTreeMap<String, f64>,
    pub micro_acc: f64,
    pub per_instance_acc: BTreeMap<String, f64>,
    pub test_counts: BTreeMap<String, u64>,
    pub num_samples: u64,
    pub confusion: Confusion,
    pub config: ConfigEcho,
}

/// Aggregates `(truth, predicted)` pairs into a report.
pub fn metrics_from_predictions(
    label_space: &LabelSpace,
    pairs: &[(InstanceIdx, InstanceIdx)],
    config: ConfigEcho,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySplit);
    }
    let n = label_space.num_instances();
    let mut counts = vec![vec![0u64; n]; n];
    for &(t, p) in pairs {
        counts[t.0][p.0] += 1;
    }
    let mut per_instance = BTreeMap::new();
    let mut test_counts = BTreeMap::new();
    let mut per_idx: Vec<Option<f64>> = vec![None; n];
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            continue;
        }
        let acc = 100.0 * row[i] as f64 / total as f64;
        per_idx[i] = Some(acc);
        let name = label_space.instance_name(InstanceIdx(i)).to_string();
        per_instance.insert(name.clone(), acc);
        test_counts.insert(name, total);
    }
    let macro_mean = |accs: Vec<f64>| accs.iter().sum::<f64>() / accs.len() as f64;
    let acc_i = macro_mean(per_idx.iter().flatten().copied().collect());
    let mut acc_o = BTreeMap::new();
    for o in 0..label_space.num_objects() {
        let accs: Vec<f64> = label_space
            .instances_of(ObjectIdx(o))
            .filter_map(|i| per_idx[i.0])
            .collect();
        if !accs.is_empty() {
            acc_o.insert(
                label_space.object_name(ObjectIdx(o)).to_string(),
                macro_mean(accs),
            );
        }
    }
    let correct: u64 = (0..n).map(|i| counts[i][i]).sum();
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        acc_i,
        acc_o,
        micro_acc: 100.0 * correct as f64 / pairs.len() as f64,
        per_instance_acc: per_instance,
        test_counts,
        num_samples: pairs.len() as u64,
        confusion: Confusion {
            labels: label_space.instances().to_vec(),
            counts,
        },
        config,
    })
}

/// One already-reduced query.
#[derive(Clone, Debug)]
pub struct Query {
    pub embedding: Embedding,
    pub truth: InstanceIdx,
    pub predicted_object: ObjectIdx,
}

/// Classifies every query (in parallel) and aggregates in query order.
pub fn evaluate_queries(
    bag: &InstanceBag,
    queries: &[Query],
    config: ConfigEcho,
) -> Result<MetricsReport> {
    let pairs = queries
        .par_iter()
        .map(|q| {
            let c = bag.classify_idx(&q.embedding, Some(q.predicted_object))?;
            Ok((q.truth, c.predicted))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics_from_predictions(bag.label_space(), &pairs, config)
}

/// Reduces the given dataset samples under `config`, in parallel, in order.
pub fn embed_samples(
    dataset: &Dataset,
    indices: &[usize],
    config: &ReductionConfig,
) -> Result<Vec<Embedding>> {
    indices
        .par_iter()
        .map(|&i| {
            let features = dataset.features(i)?;
            let logits = dataset.logits(i)?;
            embed_sample(&dataset.samples()[i], &features, logits.as_deref(), config)
        })
        .collect()
}

/// Builds a bag from the episode's support samples.
pub fn build_episode_bag(
    dataset: &Dataset,
    episode: &Episode,
    reduction: ReductionConfig,
    head: HeadConfig,
) -> Result<InstanceBag> {
    let indices = episode.resolve(dataset, &episode.support)?;
    let embeddings = embed_samples(dataset, &indices, &reduction)?;
    let support = indices
        .iter()
        .zip(embeddings)
        .map(|(&i, e)| (dataset.meta(i).instance, e))
        .collect();
    InstanceBag::from_embeddings(dataset.label_space().clone(), reduction, head, support)
}

/// Classifies every sample of `split` with its stored predicted object.
pub fn evaluate(
    bag: &InstanceBag,
    episode: &Episode,
    dataset: &Dataset,
    split: Split,
) -> Result<MetricsReport> {
    let ids = episode.ids(split);
    if ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let indices = episode.resolve(dataset, ids)?;
    let embeddings = embed_samples(dataset, &indices, bag.reduction())?;
    let ls = bag.label_space();
    let queries = indices
        .iter()
        .zip(embeddings)
        .map(|(&i, embedding)| {
            let s = &dataset.samples()[i];
            Ok(Query {
                embedding,
                truth: ls.instance_idx(&s.instance)?,
                predicted_object: ls.object_idx(&s.predicted_object)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_queries(
        bag,
        &queries,
        ConfigEcho {
            reduction: *bag.reduction(),
            head: *bag.head(),
            protocol: Some(episode.protocol),
            seed: Some(episode.seed),
            split: Some(split),
        },
    )
}
