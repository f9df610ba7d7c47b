use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oboi_core::{HeadConfig, Protocol, ReductionConfig, ReductionMode, Split, Transform};

#[derive(Debug, Parser)]
#[command(
    name = "oboi",
    version,
    about = "Few-shot instance recognition on detector features"
)]
pub struct Cli {
    /// Worker threads for parallel reduction and classification.
    #[arg(long, global = true, env = "OBOI_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a JSON generator spec.
    GenSynthetic {
        spec_path: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split a dataset, build an instance bag from the support set and save
    /// it together with the episode.
    BuildBag {
        manifest: PathBuf,
        out_bag: PathBuf,
        #[command(flatten)]
        episode: EpisodeArgs,
        #[command(flatten)]
        reduction: ReductionArgs,
        #[command(flatten)]
        head: HeadArgs,
    },
    /// Evaluate a saved bag on its episode's test or validation split.
    Evaluate {
        bag_path: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Print a human-readable table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Run a grid over protocols, instance counts, moment orders and heads.
    Sweep(SweepArgs),
    /// Check a dataset manifest or a saved bag directory.
    Validate { path: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    #[value(name = "1sas")]
    OneShotAllSequences,
    #[value(name = "1s1s")]
    OneShotFirstSequence,
    Kshot,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long, value_enum, default_value_t = ProtocolArg::OneShotAllSequences)]
    pub protocol: ProtocolArg,
    /// Shots per (instance, sequence) for the kshot protocol.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Keep only the first `p` instances of every object.
    #[arg(long)]
    pub p: Option<usize>,
    /// Down-sample every (instance, sequence) cell to the smallest cell size.
    #[arg(long)]
    pub balance: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EpisodeArgs {
    pub fn protocol(&self) -> Protocol {
        match self.protocol {
            ProtocolArg::OneShotAllSequences => Protocol::OneShotAllSequences,
            ProtocolArg::OneShotFirstSequence => Protocol::OneShotFirstSequence,
            ProtocolArg::Kshot => Protocol::KShot { k: self.k },
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Logits,
    Ee,
    Aee,
}

#[derive(Debug, Args)]
pub struct ReductionArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Aee)]
    pub mode: ModeArg,
    /// Highest moment order for aee.
    #[arg(long = "R", default_value_t = oboi_core::labels::DEFAULT_MOMENT_ORDER)]
    pub moment_order: usize,
    /// Standardize embeddings with statistics fitted on the support set.
    #[arg(long)]
    pub standardize: bool,
    /// Pool over the whole feature map instead of the box.
    #[arg(long)]
    pub no_mask: bool,
}

impl ReductionArgs {
    pub fn config(&self) -> ReductionConfig {
        ReductionConfig {
            mode: match self.mode {
                ModeArg::Logits => ReductionMode::Logits,
                ModeArg::Ee => ReductionMode::Ee,
                ModeArg::Aee => ReductionMode::Aee,
            },
            moment_order: self.moment_order,
            standardize: self.standardize,
            use_mask: !self.no_mask,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    Protonet,
    Simpleshot,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransformArg {
    None,
    #[value(name = "L2N", alias = "l2n")]
    L2n,
    #[value(name = "CL2N", alias = "cl2n")]
    Cl2n,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::None => Transform::None,
            TransformArg::L2n => Transform::L2N,
            TransformArg::Cl2n => Transform::CL2N,
        }
    }
}

#[derive(Debug, Args)]
pub struct HeadArgs {
    #[arg(long, value_enum, default_value_t = HeadArg::Protonet)]
    pub head: HeadArg,
    /// SimpleShot feature transform.
    #[arg(long, value_enum, default_value_t = TransformArg::Cl2n)]
    pub transform: TransformArg,
    /// Search every instance instead of only the predicted object's.
    #[arg(long)]
    pub no_conditioning: bool,
    /// Search every instance when the predicted object has none in the bag.
    #[arg(long)]
    pub fallback: bool,
}

impl HeadArgs {
    pub fn config(&self) -> HeadConfig {
        let base = match self.head {
            HeadArg::Protonet => HeadConfig::protonet(),
            HeadArg::Simpleshot => HeadConfig::simpleshot(self.transform.into()),
        };
        HeadConfig {
            conditioned: !self.no_conditioning,
            fallback_unconditioned: self.fallback,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Test,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Test => Split::Test,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Protocols, e.g. `1sas,1s1s`.
    #[arg(long, value_delimiter = ',', default_value = "1sas", value_parser = parse_protocol)]
    pub protocols: Vec<Protocol>,
    /// Extra kshot protocols, one per shot count.
    #[arg(long, value_delimiter = ',')]
    pub shots: Vec<usize>,
    /// Instances per object.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub p: Vec<usize>,
    /// Moment orders; 1 is plain average pooling.
    #[arg(long = "R", value_delimiter = ',', default_value = "1,4")]
    pub moment_orders: Vec<usize>,
    /// Order used as the baseline for relative gains.
    #[arg(long = "baseline-R", default_value_t = 1)]
    pub baseline_order: usize,
    /// Heads: protonet, simpleshot-none, simpleshot-l2n, simpleshot-cl2n.
    #[arg(long, value_delimiter = ',', default_value = "protonet", value_parser = parse_head)]
    pub heads: Vec<HeadConfig>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub no_mask: bool,
    #[arg(long)]
    pub no_conditioning: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: oboi_core::Error| e.to_string())
}

fn parse_head(s: &str) -> Result<HeadConfig, String> {
    let lower = s.to_ascii_lowercase();
    let (head, transform) = lower.split_once('-').unwrap_or((&lower, "cl2n"));
    let transform = match transform {
        "none" => Transform::None,
        "l2n" => Transform::L2N,
        "cl2n" => Transform::CL2N,
        other => return Err(format!("unknown transform `{other}`")),
    };
    match head {
        "protonet" if lower == "protonet" => Ok(HeadConfig::protonet()),
        "simpleshot" => Ok(HeadConfig::simpleshot(transform)),
        _ => Err(format!("unknown head `{s}`")),
    }
}
