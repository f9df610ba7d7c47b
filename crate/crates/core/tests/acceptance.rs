//! Acceptance suite. Runs every exit criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::time::{Duration, Instant};

use oboi_core::bag::InstanceBag;
use oboi_core::harness::episode::{
    select_instances, split, split_1s1s, split_1sas, Episode, Protocol, Split,
};
use oboi_core::harness::metrics::{
    build_episode_bag, embed_samples, evaluate, evaluate_queries, ConfigEcho, MetricsReport, Query,
};
use oboi_core::harness::report::to_canonical_json;
use oboi_core::harness::seeded_rng;
use oboi_core::harness::synthetic::{Background, InstanceProfile, SyntheticSpec};
use oboi_core::{
    build_mask, central_moments, gen_synthetic, reduce, relative_gain, BoundingBox, Dataset,
    FeatureMap, HeadConfig, ImageSize, InstanceIdx, LabelSpace, LabelSpaceSpec, Mask, ObjectIdx,
    ReductionConfig, Sample,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// independent oracle: materialize the masked values per channel and sum
// deviation powers with powi

fn oracle_moments(fm: &FeatureMap, mask: &Mask, order: usize) -> Vec<f64> {
    let [h, w, d] = fm.dims();
    let mut out = vec![0.0; order * d];
    for ch in 0..d {
        let mut values = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if mask.get(r, c) {
                    values.push(fm.data()[(r * w + c) * d + ch] as f64);
                }
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        out[ch] = mean;
        for k in 2..=order {
            out[(k - 1) * d + ch] = values
                .iter()
                .map(|x| (x - mean).powi(k as i32))
                .sum::<f64>()
                / n;
        }
    }
    out
}

fn random_case(rng: &mut impl Rng, integer: bool) -> (FeatureMap, Mask, usize) {
    let h = rng.random_range(1..=8);
    let w = rng.random_range(1..=8);
    let d = rng.random_range(1..=16);
    let data: Vec<f32> = (0..h * w * d)
        .map(|_| {
            if integer {
                rng.random_range(-50i32..=50) as f32
            } else {
                rng.random_range(-3.0f32..3.0)
            }
        })
        .collect();
    let fm = FeatureMap::new([h, w, d], data).unwrap();
    let mut cells: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.5)).collect();
    let k = rng.random_range(0..h * w);
    cells[k] = true;
    let mask = Mask::from_cells(h, w, cells).unwrap();
    (fm, mask, rng.random_range(1..=6))
}

fn moment_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (fm, mask, order) = random_case(&mut rng, false);
        let got = reduce(&fm, &mask, &ReductionConfig::aee(order), None).unwrap();
        let want = oracle_moments(&fm, &mask, order);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("1000 cases, max |diff| = {worst:.3e}, {elapsed:.2?}"),
    )
}

fn moment_hand_cases() -> Outcome {
    let cases: [(&[f64], [f64; 4]); 2] = [
        (&[0.0, 2.0], [1.0, 1.0, 0.0, 1.0]),
        (&[1.0, 2.0, 3.0, 6.0], [3.0, 3.5, 4.5, 24.5]),
    ];
    let mut worst = 0.0f64;
    for (values, want) in cases {
        let got = central_moments(values, 4).unwrap();
        for (a, b) in got.iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |diff| = {worst:.3e}"))
}

fn scale_equivariance() -> Outcome {
    // integer-valued maps so that scaling by 0.5, 2 and 10 is exact in f32
    let mut rng = seeded_rng(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (fm, mask, order) = random_case(&mut rng, true);
        let base = reduce(&fm, &mask, &ReductionConfig::aee(order), None).unwrap();
        let scale_ref = oracle_abs_moments(&fm, &mask, order);
        for alpha in [0.5f64, 2.0, 10.0] {
            let scaled_data = fm.data().iter().map(|v| v * alpha as f32).collect();
            let scaled = FeatureMap::new(fm.dims(), scaled_data).unwrap();
            let got = reduce(&scaled, &mask, &ReductionConfig::aee(order), None).unwrap();
            let d = fm.channels();
            for (i, (g, b)) in got.iter().zip(base.iter()).enumerate() {
                let n = i / d + 1;
                let factor = alpha.powi(n as i32);
                let want = b * factor;
                // relative to the block's natural magnitude (mean |x - mu|^n),
                // which is nonzero whenever the moment is not identically zero
                let denom = want.abs().max(scale_ref[i] * factor);
                if denom > 0.0 {
                    worst = worst.max((g - want).abs() / denom);
                } else {
                    worst = worst.max(g.abs());
                }
            }
        }
    }
    outcome(worst <= 1e-9, format!("max relative error = {worst:.3e}"))
}

fn oracle_abs_moments(fm: &FeatureMap, mask: &Mask, order: usize) -> Vec<f64> {
    let [h, w, d] = fm.dims();
    let mut out = vec![0.0; order * d];
    for ch in 0..d {
        let values: Vec<f64> = (0..h * w)
            .filter(|&i| mask.get(i / w, i % w))
            .map(|i| fm.data()[i * d + ch] as f64)
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        out[ch] = mean.abs();
        for k in 2..=order {
            out[(k - 1) * d + ch] = values
                .iter()
                .map(|x| (x - mean).abs().powi(k as i32))
                .sum::<f64>()
                / n;
        }
    }
    out
}

fn mask_geometry() -> Outcome {
    let img = ImageSize {
        height: 64,
        width: 64,
    };
    let block = build_mask(&BoundingBox::new(16.0, 16.0, 48.0, 48.0), img, (4, 4)).unwrap();
    let tiny = build_mask(&BoundingBox::new(30.0, 30.0, 31.0, 31.0), img, (4, 4)).unwrap();
    let ok = block.true_cells() == vec![(1, 1), (1, 2), (2, 1), (2, 2)]
        && tiny.true_cells() == vec![(1, 1)];
    outcome(
        ok,
        format!(
            "block {:?}, tiny {:?}",
            block.true_cells(),
            tiny.true_cells()
        ),
    )
}

fn delta_reproduction() -> Outcome {
    let a = relative_gain(68.84, 76.34).unwrap();
    let b = relative_gain(68.84, 77.08).unwrap();
    let (a, b) = (format!("{a:+.1}"), format!("{b:+.1}"));
    outcome(a == "+10.9" && b == "+12.0", format!("{a}, {b}"))
}

// ---------------------------------------------------------------------------

fn constant_dataset(objects: usize, per_object: usize) -> Dataset {
    let names: Vec<String> = (0..objects).map(|o| format!("obj{o}")).collect();
    let instances: Vec<(String, String)> = names
        .iter()
        .flat_map(|o| (0..per_object).map(move |j| (format!("{o}_{j}"), o.clone())))
        .collect();
    let ls = LabelSpace::new(LabelSpaceSpec::new(names, instances.clone())).unwrap();
    let sequences = vec!["s0".to_string(), "s1".to_string()];
    let image = ImageSize {
        height: 32,
        width: 32,
    };
    let mut samples = Vec::new();
    let mut features = Vec::new();
    for (inst, obj) in &instances {
        for seq in &sequences {
            for k in 0..6 {
                let id = format!("{inst}-{seq}-{k}");
                samples.push(Sample {
                    sample_id: id.clone(),
                    instance: inst.clone(),
                    sequence: seq.clone(),
                    image_size: image,
                    bbox: BoundingBox::new(8.0, 8.0, 24.0, 24.0),
                    predicted_object: obj.clone(),
                    features: format!("tensors/{id}.bin"),
                    logits: None,
                });
                features.push(FeatureMap::new([4, 4, 3], vec![0.25; 48]).unwrap());
            }
        }
    }
    let n = samples.len();
    Dataset::from_memory(ls, sequences, samples, features, vec![None; n]).unwrap()
}

fn random_baseline_recovery() -> Outcome {
    let ds = constant_dataset(3, 5);
    let mut details = Vec::new();
    let mut pass = true;
    for p in 2..=5usize {
        let sub = select_instances(&ds, p).unwrap();
        let seeds = 100u64;
        let mut sum = 0.0;
        for seed in 0..seeds {
            let ep = split_1sas(&sub, seed).unwrap();
            let bag = build_episode_bag(&sub, &ep, ReductionConfig::aee(4), HeadConfig::protonet())
                .unwrap();
            sum += evaluate(&bag, &ep, &sub, Split::Test).unwrap().acc_i;
        }
        let mean = sum / seeds as f64;
        let target = 100.0 / p as f64;
        pass &= (mean - target).abs() <= 2.0;
        details.push(format!("p={p}: {mean:.2} (target {target:.2})"));
    }
    outcome(pass, details.join(", "))
}

fn variance_only_spec() -> SyntheticSpec {
    SyntheticSpec {
        objects: 9,
        instances_per_object: 2,
        sequences: 5,
        samples_per_cell: 126,
        feature_dims: [6, 6, 16],
        object_mean_offset: 3.0,
        instance_profiles: vec![
            InstanceProfile {
                mean_shift: 0.0,
                std: 1.0,
                asymmetry: 0.0,
            },
            InstanceProfile {
                mean_shift: 0.0,
                std: 2.0,
                asymmetry: 0.0,
            },
        ],
        ..SyntheticSpec::default()
    }
}

fn aee_separability() -> Outcome {
    let start = Instant::now();
    let ds = gen_synthetic(&variance_only_spec(), 5).unwrap();
    let ep = split_1sas(&ds, 0).unwrap();
    let per_instance = ep.test.len() / 18;
    let mut accs = Vec::new();
    for cfg in [
        ReductionConfig::ee(),
        ReductionConfig::aee(2),
        ReductionConfig::aee(4),
    ] {
        let bag = build_episode_bag(&ds, &ep, cfg, HeadConfig::protonet()).unwrap();
        accs.push(evaluate(&bag, &ep, &ds, Split::Test).unwrap().acc_i);
    }
    let elapsed = start.elapsed();
    outcome(
        per_instance == 500
            && accs[0] <= 60.0
            && accs[1] >= 90.0
            && accs[2] >= 90.0
            && elapsed < Duration::from_secs(60),
        format!(
            "{per_instance} test/instance; ee {:.2}, aee R=2 {:.2}, aee R=4 {:.2}; {elapsed:.2?}",
            accs[0], accs[1], accs[2]
        ),
    )
}

fn conditioning_soundness() -> Outcome {
    // objects share one distribution, so instance j of every object is
    // interchangeable across objects
    let spec = SyntheticSpec {
        objects: 4,
        instances_per_object: 2,
        sequences: 3,
        samples_per_cell: 20,
        feature_dims: [6, 6, 8],
        object_mean_offset: 0.0,
        instance_profiles: vec![
            InstanceProfile {
                mean_shift: 0.0,
                ..Default::default()
            },
            InstanceProfile {
                mean_shift: 1.5,
                ..Default::default()
            },
        ],
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec, 8).unwrap();
    let ep = split_1sas(&ds, 1).unwrap();
    let cond =
        build_episode_bag(&ds, &ep, ReductionConfig::aee(4), HeadConfig::protonet()).unwrap();
    let uncond = build_episode_bag(
        &ds,
        &ep,
        ReductionConfig::aee(4),
        HeadConfig {
            conditioned: false,
            ..HeadConfig::protonet()
        },
    )
    .unwrap();
    let acc_c = evaluate(&cond, &ep, &ds, Split::Test).unwrap().acc_i;
    let acc_u = evaluate(&uncond, &ep, &ds, Split::Test).unwrap().acc_i;

    let idx = ep.resolve(&ds, &ep.test).unwrap();
    let embeddings = embed_samples(&ds, &idx, &ReductionConfig::aee(4)).unwrap();
    let ls = ds.label_space();
    let mut violations = 0;
    for (&i, e) in idx.iter().zip(&embeddings) {
        let object = ls.object_idx(&ds.samples()[i].predicted_object).unwrap();
        let c = cond.classify_idx(e, Some(object)).unwrap();
        if ls.object_of(c.predicted) != object {
            violations += 1;
        }
    }
    outcome(
        acc_c >= acc_u && violations == 0,
        format!(
            "conditioned {acc_c:.2} vs unconditioned {acc_u:.2}; {violations} object violations"
        ),
    )
}

fn mask_ablation() -> Outcome {
    let spec = SyntheticSpec {
        objects: 3,
        instances_per_object: 2,
        sequences: 4,
        samples_per_cell: 40,
        feature_dims: [8, 8, 8],
        instance_profiles: vec![
            InstanceProfile {
                mean_shift: 0.0,
                std: 1.0,
                asymmetry: 0.0,
            },
            InstanceProfile {
                mean_shift: 0.5,
                std: 1.5,
                asymmetry: 0.5,
            },
        ],
        background: Background {
            mean_step: 1.5,
            std_base: 1.0,
            std_step: 0.75,
        },
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec, 21).unwrap();
    let ep = split_1s1s(&ds, 2).unwrap();
    let mut accs = Vec::new();
    for use_mask in [true, false] {
        let cfg = ReductionConfig {
            use_mask,
            ..ReductionConfig::aee(4)
        };
        let bag = build_episode_bag(&ds, &ep, cfg, HeadConfig::protonet()).unwrap();
        accs.push(evaluate(&bag, &ep, &ds, Split::Test).unwrap().acc_i);
    }
    outcome(
        accs[0] > accs[1],
        format!("masked {:.2} vs unmasked {:.2}", accs[0], accs[1]),
    )
}

fn incremental_equality() -> Outcome {
    let spec = SyntheticSpec {
        objects: 3,
        instances_per_object: 3,
        sequences: 2,
        samples_per_cell: 10,
        feature_dims: [6, 6, 8],
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec, 4).unwrap();
    let ep = split_1sas(&ds, 3).unwrap();
    let cfg = ReductionConfig::aee(4);
    let head = HeadConfig::protonet();
    let full = build_episode_bag(&ds, &ep, cfg, head).unwrap();

    let ls = ds.label_space();
    let support_idx = ep.resolve(&ds, &ep.support).unwrap();
    let embeddings = embed_samples(&ds, &support_idx, &cfg).unwrap();
    // S = first instance of every object, T = the rest, added one at a time
    let in_s = |i: InstanceIdx| ls.instances_of(ls.object_of(i)).next() == Some(i);
    let s_support: Vec<_> = support_idx
        .iter()
        .zip(&embeddings)
        .filter(|(&k, _)| in_s(ds.meta(k).instance))
        .map(|(&k, e)| (ds.meta(k).instance, e.clone()))
        .collect();
    let mut bag = InstanceBag::from_embeddings(ls.clone(), cfg, head, s_support).unwrap();
    for i in (0..ls.num_instances())
        .map(InstanceIdx)
        .filter(|&i| !in_s(i))
    {
        let t: Vec<_> = support_idx
            .iter()
            .zip(&embeddings)
            .filter(|(&k, _)| ds.meta(k).instance == i)
            .map(|(_, e)| e.clone())
            .collect();
        bag = bag.add_instance(ls.instance_name(i), &t, false).unwrap();
    }
    let bits = |b: &InstanceBag| -> Vec<(usize, usize, Vec<u64>)> {
        b.prototypes()
            .iter()
            .map(|(i, p)| {
                (
                    i.0,
                    p.support_count,
                    p.mean.iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    };
    let same_protos = bits(&full) == bits(&bag);
    let r_full = evaluate(&full, &ep, &ds, Split::Test).unwrap();
    let r_inc = evaluate(&bag, &ep, &ds, Split::Test).unwrap();
    let same_reports = to_canonical_json(&r_full).unwrap() == to_canonical_json(&r_inc).unwrap();
    outcome(
        same_protos && same_reports,
        format!("prototypes identical: {same_protos}, reports identical: {same_reports}"),
    )
}

fn run_pipeline(ds: &Dataset, seed: u64) -> (String, String) {
    let mut out = (String::new(), String::new());
    for protocol in [
        Protocol::OneShotAllSequences,
        Protocol::OneShotFirstSequence,
        Protocol::KShot { k: 2 },
    ] {
        let ep: Episode = split(ds, protocol, seed).unwrap();
        let bag =
            build_episode_bag(ds, &ep, ReductionConfig::aee(3), HeadConfig::protonet()).unwrap();
        let report: MetricsReport = evaluate(&bag, &ep, ds, Split::Test).unwrap();
        out.0.push_str(&to_canonical_json(&ep).unwrap());
        out.1.push_str(&to_canonical_json(&report).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let spec = SyntheticSpec {
        objects: 3,
        instances_per_object: 3,
        sequences: 3,
        samples_per_cell: 12,
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec, 99).unwrap();
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let a = pool(1).install(|| run_pipeline(&ds, 5));
    let b = pool(1).install(|| run_pipeline(&ds, 5));
    let c = pool(8).install(|| run_pipeline(&ds, 5));
    let same_seed = a == b;
    let threads = a == c;
    outcome(
        same_seed && threads,
        format!("repeat identical: {same_seed}, 1 vs 8 threads identical: {threads}"),
    )
}

fn performance() -> Outcome {
    let objects = 9;
    let per_object = 5;
    let dim = 256 * 4;
    let names: Vec<String> = (0..objects).map(|o| format!("o{o}")).collect();
    let instances: Vec<(String, String)> = names
        .iter()
        .flat_map(|o| (0..per_object).map(move |j| (format!("{o}_{j}"), o.clone())))
        .collect();
    let ls = LabelSpace::new(LabelSpaceSpec::new(names, instances)).unwrap();
    let mut rng = seeded_rng(3);
    let mut vector =
        || oboi_core::Embedding::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let support = (0..objects * per_object)
        .map(|i| (InstanceIdx(i), vector()))
        .collect();
    let bag =
        InstanceBag::from_embeddings(ls, ReductionConfig::aee(4), HeadConfig::protonet(), support)
            .unwrap();
    let queries: Vec<Query> = (0..10_000)
        .map(|k| {
            let truth = InstanceIdx(k % (objects * per_object));
            Query {
                embedding: vector(),
                truth,
                predicted_object: ObjectIdx(truth.0 / per_object),
            }
        })
        .collect();
    let echo = ConfigEcho {
        reduction: ReductionConfig::aee(4),
        head: HeadConfig::protonet(),
        protocol: None,
        seed: None,
        split: None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let report = pool
        .install(|| evaluate_queries(&bag, &queries, echo))
        .unwrap();
    let elapsed = start.elapsed();
    outcome(
        elapsed < Duration::from_secs(5) && report.num_samples == 10_000,
        format!("10000 queries x 45 instances x {dim} dims in {elapsed:.2?} (1 thread)"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("moment oracle equivalence", moment_oracle_equivalence),
        ("moment hand cases", moment_hand_cases),
        ("scale equivariance", scale_equivariance),
        ("mask geometry", mask_geometry),
        ("relative gain reproduction", delta_reproduction),
        ("random-baseline recovery", random_baseline_recovery),
        ("multi-order separability", aee_separability),
        (
            "conditioning soundness and ablation direction",
            conditioning_soundness,
        ),
        ("mask ablation direction", mask_ablation),
        ("incremental equality", incremental_equality),
        ("determinism", determinism),
        ("performance sanity", performance),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
