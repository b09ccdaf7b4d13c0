mod common;

use common::{coarse_features, fmp_oracle, random_features};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use sfmedit_core::memory::{DistanceMetric, FeatureTokenMap, MemoryBank};
use sfmedit_core::propagation::{
    propagate, propagate_bruteforce, PropagationConfig, PropagationResult, TokenSource,
};
use sfmedit_core::Execution;

struct Instance {
    current: FeatureTokenMap,
    bank: MemoryBank,
}

fn instance(seed: u64, coarse: bool) -> Instance {
    use rand::Rng;
    let mut rng: ChaCha8Rng = common::rng(seed);
    let n = rng.random_range(1..24);
    let dim = rng.random_range(1..8);
    let frames = rng.random_range(1..5);
    let make = |rng: &mut ChaCha8Rng, f: usize| {
        if coarse {
            coarse_features(rng, f, n, dim)
        } else {
            random_features(rng, f, n, dim, "l")
        }
    };
    let mut bank = MemoryBank::new(frames, DistanceMetric::FrameGap).unwrap();
    for f in 0..frames {
        let m = make(&mut rng, f);
        bank.insert(m).unwrap();
    }
    let current = make(&mut rng, frames);
    Instance { current, bank }
}

fn cfg(lambda: f64, execution: Execution) -> PropagationConfig {
    PropagationConfig::new(lambda).unwrap().with_execution(execution)
}

fn tags(r: &PropagationResult) -> Vec<Option<(usize, usize)>> {
    r.sources
        .iter()
        .map(|s| match s {
            TokenSource::Current => None,
            TokenSource::Memory(o) => Some((o.frame_index, o.token_index)),
        })
        .collect()
}

fn assert_copies(inst: &Instance, r: &PropagationResult) {
    let dim = inst.current.dim();
    for (i, s) in r.sources.iter().enumerate() {
        let out = r.tokens_out.row(i);
        let expected = match s {
            TokenSource::Current => inst.current.row(i),
            TokenSource::Memory(o) => {
                let e = inst
                    .bank
                    .entries()
                    .iter()
                    .find(|e| e.frame_index() == o.frame_index)
                    .expect("provenance names a stored frame");
                e.row(o.token_index)
            }
        };
        assert_eq!(out.len(), dim);
        assert!(out.iter().zip(expected).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn identical_frame_at_lambda_zero_replaces_everything() {
    let mut rng = common::rng(3);
    let f0 = random_features(&mut rng, 0, 16, 8, "l");
    let mut bank = MemoryBank::new(5, DistanceMetric::FrameGap).unwrap();
    bank.insert(f0.clone()).unwrap();
    let cur = f0.clone().with_frame_index(1);
    let r = propagate(&cur, &bank, &cfg(0.0, Execution::Sequential)).unwrap();
    assert_eq!(r.replacement_rate(), 1.0);
    for (i, s) in r.sources.iter().enumerate() {
        let TokenSource::Memory(o) = s else { panic!("token {i} kept") };
        assert_eq!(o.frame_index, 0);
    }
    assert_eq!(r.tokens_out.tokens(), f0.tokens());
}

#[test]
fn lambda_above_one_replaces_nothing() {
    let inst = instance(11, false);
    let r = propagate(&inst.current, &inst.bank, &cfg(1.1, Execution::Sequential)).unwrap();
    assert_eq!(r.replaced_count(), 0);
    assert_eq!(r.tokens_out.tokens(), inst.current.tokens());
}

#[test]
fn ties_prefer_oldest_frame() {
    let row = vec![1.0f32, 2.0];
    let m0 = FeatureTokenMap::new(0, "l", 1, 2, row.clone()).unwrap();
    let m1 = FeatureTokenMap::new(1, "l", 1, 2, row.clone()).unwrap();
    let mut bank = MemoryBank::new(5, DistanceMetric::FrameGap).unwrap();
    bank.insert(m0).unwrap();
    bank.insert(m1).unwrap();
    let cur = FeatureTokenMap::new(2, "l", 1, 2, vec![2.0, 4.0]).unwrap();
    let r = propagate(&cur, &bank, &cfg(0.5, Execution::Sequential)).unwrap();
    assert_eq!(tags(&r), vec![Some((0, 0))]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_exhaustive_oracle(seed in any::<u64>(), coarse in any::<bool>(), lambda in -1.0f64..1.1) {
        let inst = instance(seed, coarse);
        let r = propagate(&inst.current, &inst.bank, &cfg(lambda, Execution::Parallel)).unwrap();
        let oracle = fmp_oracle(&inst.current, inst.bank.entries(), lambda);
        prop_assert_eq!(tags(&r), oracle);
        assert_copies(&inst, &r);
    }

    #[test]
    fn hot_path_matches_bruteforce(seed in any::<u64>(), coarse in any::<bool>(), lambda in -1.0f64..1.1) {
        let inst = instance(seed, coarse);
        let fast = propagate(&inst.current, &inst.bank, &cfg(lambda, Execution::Parallel)).unwrap();
        let slow = propagate_bruteforce(&inst.current, &inst.bank, &cfg(lambda, Execution::Sequential)).unwrap();
        prop_assert_eq!(&fast.sources, &slow.sources);
        for (a, b) in fast.tokens_out.tokens().iter().zip(slow.tokens_out.tokens()) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn sequential_equals_parallel(seed in any::<u64>(), lambda in -1.0f64..1.0) {
        let inst = instance(seed, false);
        let a = propagate(&inst.current, &inst.bank, &cfg(lambda, Execution::Sequential)).unwrap();
        let b = propagate(&inst.current, &inst.bank, &cfg(lambda, Execution::Parallel)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn raising_lambda_only_removes_replacements(seed in any::<u64>(), coarse in any::<bool>(), l1 in -1.0f64..1.1, dl in 0.0f64..1.0) {
        let inst = instance(seed, coarse);
        let lo = propagate(&inst.current, &inst.bank, &cfg(l1, Execution::Parallel)).unwrap();
        let hi = propagate(&inst.current, &inst.bank, &cfg(l1 + dl, Execution::Parallel)).unwrap();
        for (a, b) in lo.sources.iter().zip(&hi.sources) {
            if let TokenSource::Memory(_) = b {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert!(hi.replaced_count() <= lo.replaced_count());
    }
}
