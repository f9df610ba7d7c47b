//! Experiment grids over protocols, instances per object, moment orders and
//! heads. Every cell of one `(protocol, p)` pair shares the same episode.

use serde::{Deserialize, Serialize};

use crate::bag::InstanceBag;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::{HeadConfig, ReductionConfig, ReductionMode};

use super::episode::{select_instances, split, Protocol, Split};
use super::metrics::{
    embed_samples, evaluate_queries, relative_gain, ConfigEcho, MetricsReport, Query,
};
use super::report::aligned_table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub protocols: Vec<Protocol>,
    pub instances_per_object: Vec<usize>,
    /// Moment orders; order 1 is plain average pooling.
    pub moment_orders: Vec<usize>,
    pub heads: Vec<HeadConfig>,
    /// Order whose cells serve as the baseline for relative gains.
    pub baseline_order: usize,
    pub standardize: bool,
    pub use_mask: bool,
    pub seed: u64,
}

impl SweepSpec {
    pub fn reduction(&self, order: usize) -> ReductionConfig {
        ReductionConfig {
            mode: if order == 1 {
                ReductionMode::Ee
            } else {
                ReductionMode::Aee
            },
            moment_order: order,
            standardize: self.standardize,
            use_mask: self.use_mask,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub protocol: Protocol,
    pub instances_per_object: usize,
    pub moment_order: usize,
    pub head: HeadConfig,
    pub acc_i: f64,
    /// Relative gain over the baseline-order cell with the same protocol,
    /// instance count and head.
    pub delta: Option<f64>,
    pub report: MetricsReport,
}

impl SweepCell {
    pub fn name(&self) -> String {
        format!(
            "{}_p{}_{}{}_R{}",
            self.protocol,
            self.instances_per_object,
            self.head.head,
            match self.head.head {
                crate::labels::Head::SimpleShot => format!("-{}", self.head.simpleshot_transform),
                crate::labels::Head::ProtoNet => String::new(),
            },
            self.moment_order
        )
    }
}

pub fn run_sweep(dataset: &Dataset, spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.protocols.is_empty()
        || spec.instances_per_object.is_empty()
        || spec.moment_orders.is_empty()
        || spec.heads.is_empty()
    {
        return Err(Error::InvalidConfig(
            "every sweep axis needs at least one value".into(),
        ));
    }
    let mut cells = Vec::new();
    for &protocol in &spec.protocols {
        for &p in &spec.instances_per_object {
            let sub = select_instances(dataset, p)?;
            let episode = split(&sub, protocol, spec.seed)?;
            let support_idx = episode.resolve(&sub, &episode.support)?;
            let test_idx = episode.resolve(&sub, &episode.test)?;
            for &order in &spec.moment_orders {
                let reduction = spec.reduction(order);
                reduction.validate()?;
                let support: Vec<_> = support_idx
                    .iter()
                    .map(|&i| sub.meta(i).instance)
                    .zip(embed_samples(&sub, &support_idx, &reduction)?)
                    .collect();
                let queries: Vec<Query> = test_idx
                    .iter()
                    .zip(embed_samples(&sub, &test_idx, &reduction)?)
                    .map(|(&i, embedding)| {
                        let s = &sub.samples()[i];
                        Ok(Query {
                            embedding,
                            truth: sub.meta(i).instance,
                            predicted_object: sub.label_space().object_idx(&s.predicted_object)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                for &head in &spec.heads {
                    let bag = InstanceBag::from_embeddings(
                        sub.label_space().clone(),
                        reduction,
                        head,
                        support.clone(),
                    )?;
                    let report = evaluate_queries(
                        &bag,
                        &queries,
                        ConfigEcho {
                            reduction,
                            head,
                            protocol: Some(protocol),
                            seed: Some(spec.seed),
                            split: Some(Split::Test),
                        },
                    )?;
                    cells.push(SweepCell {
                        protocol,
                        instances_per_object: p,
                        moment_order: order,
                        head,
                        acc_i: report.acc_i,
                        delta: None,
                        report,
                    });
                }
            }
        }
    }
    let baselines: Vec<(Protocol, usize, HeadConfig, f64)> = cells
        .iter()
        .filter(|c| c.moment_order == spec.baseline_order)
        .map(|c| (c.protocol, c.instances_per_object, c.head, c.acc_i))
        .collect();
    for c in &mut cells {
        c.delta = baselines
            .iter()
            .find(|(pr, p, h, _)| *pr == c.protocol && *p == c.instances_per_object && *h == c.head)
            .and_then(|(_, _, _, base)| relative_gain(*base, c.acc_i).ok());
    }
    Ok(cells)
}

/// One table per protocol: methods as rows, instances per object as columns,
/// with a relative-gain row under every non-baseline method.
pub fn sweep_table(cells: &[SweepCell], spec: &SweepSpec) -> String {
    let mut out = String::new();
    for &protocol in &spec.protocols {
        let mut header = vec![format!("{protocol}")];
        header.extend(spec.instances_per_object.iter().map(|p| p.to_string()));
        let mut rows = Vec::new();
        for head in &spec.heads {
            for &order in &spec.moment_orders {
                let find = |p: usize| {
                    cells.iter().find(|c| {
                        c.protocol == protocol
                            && c.instances_per_object == p
                            && c.head == *head
                            && c.moment_order == order
                    })
                };
                let label = match head.head {
                    crate::labels::Head::ProtoNet => format!("{} R={order}", head.head),
                    crate::labels::Head::SimpleShot => {
                        format!("{}/{} R={order}", head.head, head.simpleshot_transform)
                    }
                };
                let mut row = vec![label];
                row.extend(
                    spec.instances_per_object.iter().map(|&p| {
                        find(p).map_or_else(|| "-".into(), |c| format!("{:.2}", c.acc_i))
                    }),
                );
                rows.push(row);
                if order != spec.baseline_order {
                    let mut row = vec!["  delta".to_string()];
                    row.extend(spec.instances_per_object.iter().map(|&p| {
                        find(p)
                            .and_then(|c| c.delta)
                            .map_or_else(|| "-".into(), |d| format!("{d:+.1}"))
                    }));
                    rows.push(row);
                }
            }
        }
        out.push_str(&aligned_table(&header, &rows));
        out.push('\n');
    }
    out
}
