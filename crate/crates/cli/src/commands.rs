use std::fs;
use std::path::{Path, PathBuf};

use oboi_core::harness::episode::balance_dataset;
use oboi_core::harness::metrics::build_episode_bag;
use oboi_core::harness::report::{metrics_table, round_sig, to_canonical_json};
use oboi_core::harness::sweep::{run_sweep, sweep_table, SweepCell, SweepSpec};
use oboi_core::{
    evaluate, load_dataset, select_instances, split, validate_dataset, write_synthetic, Dataset,
    Episode, Error, InstanceBag, Protocol, Split, SyntheticSpec,
};
use serde::{Deserialize, Serialize};

use crate::args::{EpisodeArgs, HeadArgs, ReductionArgs, SweepArgs};
use crate::Failure;

pub const EPISODE_FILE: &str = "episode.json";
const EPISODE_FORMAT: &str = "oboi-episode";
const EPISODE_VERSION: u32 = 1;

/// Everything `evaluate` needs to rebuild the exact dataset view and split a
/// bag was built from.
#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeFile {
    pub format: String,
    pub version: u32,
    pub manifest: PathBuf,
    pub instances_per_object: Option<usize>,
    pub balanced: bool,
    pub episode: Episode,
}

impl EpisodeFile {
    fn read(bag_dir: &Path) -> Result<Self, Error> {
        let path = bag_dir.join(EPISODE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: EpisodeFile = serde_json::from_str(&text)?;
        if file.format != EPISODE_FORMAT || file.version != EPISODE_VERSION {
            return Err(Error::InvalidManifest(vec![format!(
                "expected {EPISODE_FORMAT} v{EPISODE_VERSION}, found {} v{}",
                file.format, file.version
            )]));
        }
        Ok(file)
    }

    fn dataset(&self) -> Result<Dataset, Error> {
        prepare(
            &self.manifest,
            self.instances_per_object,
            self.balanced,
            self.episode.seed,
        )
    }
}

fn prepare(manifest: &Path, p: Option<usize>, balance: bool, seed: u64) -> Result<Dataset, Error> {
    let mut ds = load_dataset(manifest)?;
    if let Some(p) = p {
        ds = select_instances(&ds, p)?;
    }
    if balance {
        ds = balance_dataset(&ds, seed)?;
    }
    Ok(ds)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn gen_synthetic(spec_path: &Path, out_dir: &Path, seed: u64) -> Result<(), Failure> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec = SyntheticSpec::from_json(&text)?;
    let manifest = write_synthetic(&spec, seed, out_dir)?;
    let ds = load_dataset(&manifest)?;
    let summary = serde_json::json!({
        "manifest": manifest,
        "objects": ds.label_space().num_objects(),
        "instances": ds.label_space().num_instances(),
        "sequences": ds.sequences().len(),
        "samples": ds.len(),
        "feature_dims": ds.meta(0).feature_dims,
    });
    print!("{}", to_canonical_json(&summary)?);
    Ok(())
}

pub fn build_bag(
    manifest: &Path,
    out_bag: &Path,
    episode_args: &EpisodeArgs,
    reduction: &ReductionArgs,
    head: &HeadArgs,
) -> Result<(), Failure> {
    let reduction = reduction.config();
    reduction.validate().map_err(Failure::usage)?;
    let head = head.config();
    let protocol = episode_args.protocol();
    if let Protocol::KShot { k: 0 } = protocol {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let ds = prepare(
        manifest,
        episode_args.p,
        episode_args.balance,
        episode_args.seed,
    )?;
    let episode = split(&ds, protocol, episode_args.seed)?;
    let bag = build_episode_bag(&ds, &episode, reduction, head)?;
    bag.save(out_bag)?;
    let manifest = fs::canonicalize(manifest).map_err(|e| Error::io(manifest, e))?;
    let file = EpisodeFile {
        format: EPISODE_FORMAT.into(),
        version: EPISODE_VERSION,
        manifest,
        instances_per_object: episode_args.p,
        balanced: episode_args.balance,
        episode,
    };
    write_file(&out_bag.join(EPISODE_FILE), &to_canonical_json(&file)?)?;
    let summary = serde_json::json!({
        "bag": out_bag,
        "instances": bag.len(),
        "dim": bag.dim(),
        "support": file.episode.support.len(),
        "test": file.episode.test.len(),
        "val": file.episode.val.len(),
    });
    print!("{}", to_canonical_json(&summary)?);
    Ok(())
}

pub fn evaluate_bag(bag_dir: &Path, split: Split, table: bool) -> Result<(), Failure> {
    let bag = InstanceBag::load(bag_dir)?;
    let file = EpisodeFile::read(bag_dir)?;
    let ds = file.dataset()?;
    let report = evaluate(&bag, &file.episode, &ds, split)?;
    if table {
        print!("{}", metrics_table(&report));
    } else {
        print!("{}", to_canonical_json(&report)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct CsvRow {
    cell: String,
    protocol: String,
    instances_per_object: usize,
    head: String,
    transform: String,
    moment_order: usize,
    acc_i: f64,
    micro_acc: f64,
    num_samples: u64,
    baseline_order: usize,
    delta: Option<f64>,
}

fn csv_row(cell: &SweepCell, baseline_order: usize) -> CsvRow {
    CsvRow {
        cell: cell.name(),
        protocol: cell.protocol.to_string(),
        instances_per_object: cell.instances_per_object,
        head: cell.head.head.to_string(),
        transform: cell.head.effective_transform().to_string(),
        moment_order: cell.moment_order,
        acc_i: round_sig(cell.acc_i),
        micro_acc: round_sig(cell.report.micro_acc),
        num_samples: cell.report.num_samples,
        baseline_order,
        delta: cell.delta.map(round_sig),
    }
}

pub fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let mut protocols = args.protocols.clone();
    protocols.extend(args.shots.iter().map(|&k| Protocol::KShot { k }));
    protocols.dedup();
    if !args.moment_orders.contains(&args.baseline_order) {
        return Err(Failure::usage(format!(
            "--baseline-R {} is not among --R {:?}",
            args.baseline_order, args.moment_orders
        )));
    }
    let spec = SweepSpec {
        protocols,
        instances_per_object: args.p.clone(),
        moment_orders: args.moment_orders.clone(),
        heads: args
            .heads
            .iter()
            .map(|h| oboi_core::HeadConfig {
                conditioned: !args.no_conditioning,
                ..*h
            })
            .collect(),
        baseline_order: args.baseline_order,
        standardize: args.standardize,
        use_mask: !args.no_mask,
        seed: args.seed,
    };
    for &order in &spec.moment_orders {
        spec.reduction(order).validate().map_err(Failure::usage)?;
    }
    let ds = load_dataset(&args.manifest)?;
    let cells = run_sweep(&ds, &spec)?;

    let out = &args.out_dir;
    write_file(&out.join("sweep.json"), &to_canonical_json(&spec)?)?;
    for cell in &cells {
        write_file(
            &out.join("cells").join(format!("{}.json", cell.name())),
            &to_canonical_json(&cell.report)?,
        )?;
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for cell in &cells {
        writer
            .serialize(csv_row(cell, spec.baseline_order))
            .map_err(|e| Failure::internal(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Failure::internal(e.to_string()))?;
    write_file(&out.join("results.csv"), &String::from_utf8_lossy(&bytes))?;
    let table = sweep_table(&cells, &spec);
    write_file(&out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct BagCheck {
    kind: &'static str,
    detail: String,
}

/// Validates a manifest file, or a bag directory when it holds `bag.json`.
pub fn validate(path: &Path) -> Result<(), Failure> {
    if path.join(oboi_core::bag::BAG_FILE).is_file() {
        return validate_bag(path);
    }
    let manifest = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let report = validate_dataset(&manifest);
    print!("{}", to_canonical_json(&report)?);
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::invalid(format!(
            "{} problem(s) in {}",
            report.problems.len(),
            manifest.display()
        )))
    }
}

fn validate_bag(dir: &Path) -> Result<(), Failure> {
    let mut problems = Vec::new();
    let mut push = |e: Error| {
        problems.push(BagCheck {
            kind: e.kind(),
            detail: e.to_string(),
        })
    };
    match InstanceBag::load(dir) {
        Ok(bag) if bag.is_empty() => push(Error::EmptySupport),
        Ok(_) => {}
        Err(e) => push(e),
    }
    if dir.join(EPISODE_FILE).exists() {
        match EpisodeFile::read(dir) {
            Ok(file) if !file.manifest.is_file() => push(Error::io(
                &file.manifest,
                std::io::Error::new(std::io::ErrorKind::NotFound, "episode manifest not found"),
            )),
            Ok(_) => {}
            Err(e) => push(e),
        }
    }
    let clean = problems.is_empty();
    print!(
        "{}",
        to_canonical_json(&serde_json::json!({ "problems": problems }))?
    );
    if clean {
        Ok(())
    } else {
        Err(Failure::invalid(format!(
            "{} problem(s) in bag {}",
            problems.len(),
            dir.display()
        )))
    }
}
