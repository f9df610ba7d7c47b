use oboi_bench::{random_bag, random_map};
use oboi_core::{HeadConfig, Transform};

#[test]
fn fixtures_are_seeded() {
    assert_eq!(random_map([4, 4, 8], 1), random_map([4, 4, 8], 1));
    assert_ne!(random_map([4, 4, 8], 1), random_map([4, 4, 8], 2));
    let (a, qa) = random_bag(3, 2, 16, 10, HeadConfig::simpleshot(Transform::CL2N), 5);
    let (b, qb) = random_bag(3, 2, 16, 10, HeadConfig::simpleshot(Transform::CL2N), 5);
    assert_eq!(a, b);
    assert_eq!(
        qa.iter().map(|(e, o)| (e.to_vec(), *o)).collect::<Vec<_>>(),
        qb.iter().map(|(e, o)| (e.to_vec(), *o)).collect::<Vec<_>>()
    );
    assert_eq!(a.len(), 6);
    for (q, o) in &qa {
        let c = a.classify_idx(q, Some(*o)).unwrap();
        assert_eq!(a.label_space().object_of(c.predicted), *o);
    }
}
