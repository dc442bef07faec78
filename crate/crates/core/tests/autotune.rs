use bitserial::autotune::{
    enumerate_space, grid_search, random_search, CachedEvaluator, ConfigStore, Evaluator,
    KernelEvaluator, Lookup, Workload,
};
use bitserial::{ConvParams, ConvStrategy, DotSpec, WordWidth};

fn small_matmul() -> Workload {
    Workload::Matmul {
        rows: 8,
        cols: 6,
        depth: 40,
        spec: DotSpec::new(2, 2).unwrap(),
        width: WordWidth::W32,
    }
}

#[test]
fn exhaustive_random_search_on_real_kernel() {
    let w = small_matmul();
    let space = enumerate_space(&w).unwrap();
    let eval = KernelEvaluator::new(&w, 1, 1).unwrap().with_repeats(1, 3);
    let mut eval = CachedEvaluator::new(eval);
    let r = random_search(&space, space.len() + 5, 42, &mut eval).unwrap();
    let mut visited = r.visited();
    visited.sort();
    assert_eq!(visited, (0..space.len()).collect::<Vec<_>>());
    assert!(r.failures().is_empty());
    assert!(r.ranked().all(|t| t.checksum == eval.expected_checksum()));

    let default = space.default_config();
    let default_ns = r.ranked().find(|t| t.config == default).unwrap().min_ns;
    assert!(r.best.min_ns <= default_ns);

    // same-run comparison: the grid reuses the cached measurements
    let g = grid_search(&space, 1, &mut eval).unwrap();
    assert!(g.best.min_ns <= r.best.min_ns);
    assert_eq!(eval.distinct_trials(), space.len());
}

#[test]
fn conv_workload_tunes_and_persists() {
    let w = Workload::Conv {
        batch: 1,
        params: ConvParams {
            height: 6,
            width: 6,
            in_channels: 16,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        spec: DotSpec::new(1, 2).unwrap(),
        width: WordWidth::W16,
        strategy: ConvStrategy::Direct,
    };
    let space = enumerate_space(&w).unwrap();
    let mut eval = KernelEvaluator::new(&w, 2, 2).unwrap().with_repeats(0, 1);
    let r = random_search(&space, 10, 7, &mut eval).unwrap();
    assert_eq!(r.trace.len(), 10);

    let dir = std::env::temp_dir().join(format!("bitserial-store-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tuned.txt");
    let mut store = ConfigStore::new();
    store.persist_best(&w, "test-machine", &r.best);
    store.save(&path).unwrap();
    let (back, warnings) = ConfigStore::load(&path).unwrap();
    assert!(warnings.is_empty());
    match back.lookup(&w, "test-machine") {
        Lookup::Found(e) => assert_eq!(e.config, r.best.config),
        other => panic!("{other:?}"),
    }
    std::fs::remove_dir_all(&dir).unwrap();
}
