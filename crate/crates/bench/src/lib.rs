//! Fixtures shared by the criterion benches.

use oboi_core::{
    Embedding, FeatureMap, HeadConfig, InstanceBag, InstanceIdx, LabelSpace, LabelSpaceSpec,
    ObjectIdx, ReductionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_map(dims: [usize; 3], seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureMap::new(dims, data).expect("finite values")
}

/// `objects x per_object` instances with random prototypes of length `dim`,
/// plus `queries` random queries tagged with a predicted object.
pub fn random_bag(
    objects: usize,
    per_object: usize,
    dim: usize,
    queries: usize,
    head: HeadConfig,
    seed: u64,
) -> (InstanceBag, Vec<(Embedding, ObjectIdx)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..objects).map(|o| format!("o{o}")).collect();
    let instances: Vec<(String, String)> = names
        .iter()
        .flat_map(|o| (0..per_object).map(move |j| (format!("{o}_{j}"), o.clone())))
        .collect();
    let ls = LabelSpace::new(LabelSpaceSpec::new(names, instances)).expect("valid label space");
    let vec = |rng: &mut ChaCha8Rng| {
        Embedding::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let support = (0..objects * per_object)
        .map(|i| (InstanceIdx(i), vec(&mut rng)))
        .collect();
    let bag =
        InstanceBag::from_embeddings(ls, ReductionConfig::default(), head, support).expect("bag");
    let qs = (0..queries)
        .map(|_| (vec(&mut rng), ObjectIdx(rng.random_range(0..objects))))
        .collect();
    (bag, qs)
}
