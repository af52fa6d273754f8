use std::collections::BTreeSet;

use proptest::prelude::*;
use unitarget_core::assembly::{sample_balanced, AssemblyError, ConfigNames, SampleManifest};
use unitarget_core::ingest;
use unitarget_core::UnifiedInstance;

fn corpus(sizes: &[usize]) -> Vec<UnifiedInstance> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n).map(move |i| UnifiedInstance::new(format!("text {i}"), format!("t{t}"), "fx")))
        .collect()
}

proptest! {
    #[test]
    fn sample_is_balanced_distinct_and_deterministic(
        sizes in prop::collection::vec(1usize..30, 1..5),
        n in 1usize..10,
        seed in any::<u64>(),
    ) {
        let c = corpus(&sizes);
        let targets: Vec<String> = (0..sizes.len()).map(|t| format!("t{t}")).collect();
        match sample_balanced(&c, &targets, n, seed, false) {
            Ok(s) => {
                prop_assert!(sizes.iter().all(|&k| k >= n));
                prop_assert_eq!(s.instances.len(), n * targets.len());
                for (chunk, t) in s.instances.chunks(n).zip(&targets) {
                    prop_assert!(chunk.iter().all(|i| &i.target == t));
                }
                let ids: BTreeSet<_> = s.instance_ids().into_iter().collect();
                prop_assert_eq!(ids.len(), s.instances.len());
                prop_assert!(s.instances.iter().all(|i| c.contains(i)));
                let again = sample_balanced(&c, &targets, n, seed, false).unwrap();
                prop_assert_eq!(again.instance_ids(), s.instance_ids());
            }
            Err(AssemblyError::Insufficient { available, requested, .. }) => {
                prop_assert!(available < requested);
                prop_assert!(sizes.iter().any(|&k| k < n));
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn corpus_order_does_not_matter(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let c = corpus(&[12, 9]);
        let mut shuffled = c.clone();
        unitarget_core::rng::SplitMix64::new(shuffle_seed).partial_shuffle(&mut shuffled, c.len());
        let targets = vec!["t0".to_string(), "t1".to_string()];
        prop_assert_eq!(
            sample_balanced(&c, &targets, 5, seed, false).unwrap().instance_ids(),
            sample_balanced(&shuffled, &targets, 5, seed, false).unwrap().instance_ids()
        );
    }
}

#[test]
fn take_all_keeps_short_targets() {
    let c = corpus(&[3, 10]);
    let targets = vec!["t0".to_string(), "t1".to_string()];
    let err = sample_balanced(&c, &targets, 5, 1, false).unwrap_err();
    assert!(err.to_string().contains("t0"), "{err}");
    let s = sample_balanced(&c, &targets, 5, 1, true).unwrap();
    assert_eq!(s.instances.len(), 8);
}

#[test]
fn manifest_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(&[6, 6]);
    let targets = vec!["t0".to_string(), "t1".to_string()];
    let sample = sample_balanced(&c, &targets, 4, 42, false).unwrap();
    let instances_path = dir.path().join("sample.jsonl");
    ingest::write_jsonl(&sample.instances, std::fs::File::create(&instances_path).unwrap()).unwrap();
    let manifest = SampleManifest::new(&sample, false, ConfigNames::default(), "sample.jsonl".into());
    let manifest_path = dir.path().join("sample.manifest.json");
    manifest.save(&manifest_path).unwrap();

    let loaded = SampleManifest::load(&manifest_path).unwrap();
    assert_eq!(loaded, manifest);
    assert_eq!(loaded.load_instances(&manifest_path).unwrap(), sample.instances);

    ingest::write_jsonl(&sample.instances[1..], std::fs::File::create(&instances_path).unwrap()).unwrap();
    assert!(loaded.load_instances(&manifest_path).is_err());
}
