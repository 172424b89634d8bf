//! End-to-end acceptance sweep.
//!
//! One test runs every release gate and prints a PASS/FAIL line per check;
//! it panics at the end if any check failed, listing the offenders. The
//! throughput and scaling checks measure wall-clock behaviour, so their
//! outcomes depend on the host: the parallel-scaling and crowded merge-ratio
//! checks need real hardware threads and will fail honestly on a single-core
//! machine (the line reports the measured ratio and the host parallelism).

use std::time::Instant;

use mergetree::cost::{log_log_slope, CostModel, CostParams};
use mergetree::engine::{
    run_parallel, run_reference, EngineConfig, IndexKind, MergeMode,
};
use mergetree::merge_tree::MergeTree;
use mergetree::oracle::NestedLoopJoin;
use mergetree::partitioned::UnsyncPartitionedTree;
use mergetree::types::TreeGeometry;
use mergetree::workload::{
    calibrate_diff, generate_keys, generate_stream, interleave, KeyDistribution, WorkloadSpec,
};
use mergetree::{BandPredicate, JoinMode, Stream, Tuple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const DOMAIN: i64 = 1 << 22;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome {
        name,
        passed,
        detail,
    }
}

fn uniform_arrivals(total: usize, seed: u64) -> Vec<Tuple> {
    let uniform = KeyDistribution::Uniform { lo: 0, hi: DOMAIN };
    let half = total / 2;
    let r = generate_stream(&WorkloadSpec::new(uniform.clone(), seed, half), Stream::R).unwrap();
    let s = generate_stream(
        &WorkloadSpec::new(uniform, seed ^ 0x9e37_79b9_7f4a_7c15, total - half),
        Stream::S,
    )
    .unwrap();
    interleave(&r, &s, 1, 1)
}

fn engine(kind: IndexKind, w: usize) -> EngineConfig {
    let mut cfg = EngineConfig::new(kind, w);
    cfg.predicate = BandPredicate::new(calibrate_diff(w, DOMAIN, 2.0).unwrap());
    cfg.merge_ratio = 0.25;
    cfg
}

fn best_parallel(cfg: &EngineConfig, arrivals: &[Tuple], reps: usize) -> f64 {
    (0..reps)
        .map(|_| run_parallel(cfg, arrivals).stats.measured_throughput_tps())
        .fold(0.0, f64::max)
}

fn best_reference(cfg: &EngineConfig, arrivals: &[Tuple], reps: usize) -> f64 {
    (0..reps)
        .map(|_| run_reference(cfg, arrivals).stats.measured_throughput_tps())
        .fold(0.0, f64::max)
}

/// Every index kind, thread count and merge mode must reproduce the
/// nested-loop join exactly, record for record, across 50 seeds.
fn oracle_equivalence_matrix() -> Outcome {
    const NAME: &str = "oracle-equivalence-matrix";
    let w = 1 << 10;
    let diff = calibrate_diff(w, DOMAIN, 2.0).unwrap();
    let thread_grid = [1usize, 4, 8, 16];
    let modes = [MergeMode::Blocking, MergeMode::NonBlocking];
    let mut runs = 0usize;
    for seed in 0..50u64 {
        let arrivals = uniform_arrivals(100_000, 0xacce_5500 + seed);
        let expected = NestedLoopJoin::run(
            JoinMode::TwoWay,
            BandPredicate::new(diff),
            w,
            w,
            &arrivals,
        );
        for kind in IndexKind::ALL {
            for &threads in &thread_grid {
                for &mode in &modes {
                    let mut cfg = engine(kind, w);
                    cfg.threads = threads;
                    cfg.merge_mode = mode;
                    let out = run_parallel(&cfg, &arrivals);
                    if out.results != expected {
                        return outcome(
                            NAME,
                            false,
                            format!(
                                "seed {seed}, {} x{threads} {}: {} records vs oracle {}",
                                kind.name(),
                                mode.name(),
                                out.results.len(),
                                expected.len()
                            ),
                        );
                    }
                    runs += 1;
                }
            }
        }
    }
    outcome(
        NAME,
        true,
        format!("{runs} runs x 100000 tuples over 50 seeds, all record-exact"),
    )
}

/// Single-threaded: the partitioned index at its best merge ratio and
/// routing depth must beat the plain B+-tree by at least 1.2x.
fn single_thread_partitioned_advantage(arrivals: &[Tuple], w: usize) -> Outcome {
    const NAME: &str = "single-thread-partitioned-advantage";
    let mut btree = engine(IndexKind::BTree, w);
    btree.warmup = 2 * w;
    let baseline = best_reference(&btree, arrivals, 3);

    let mut best = 0.0f64;
    let mut best_at = (0.0f64, 0usize);
    for m in [1.0 / 64.0, 1.0 / 16.0, 1.0 / 4.0, 1.0] {
        for depth in [1usize, 2, 3] {
            let mut cfg = engine(IndexKind::Partitioned, w);
            cfg.merge_ratio = m;
            cfg.insertion_depth = depth;
            cfg.warmup = 2 * w;
            let tps = best_reference(&cfg, arrivals, 1);
            if tps > best {
                best = tps;
                best_at = (m, depth);
            }
        }
    }
    let ratio = best / baseline;
    outcome(
        NAME,
        ratio >= 1.2,
        format!(
            "partitioned {:.0} tps (m={}, depth={}) vs btree {:.0} tps: {ratio:.2}x (need >= 1.2)",
            best, best_at.0, best_at.1, baseline
        ),
    )
}

/// Eight workers must outrun the one-worker engine by 3x or better.
fn parallel_scaling(arrivals: &[Tuple], w: usize) -> Outcome {
    const NAME: &str = "parallel-scaling";
    let mut cfg = engine(IndexKind::Partitioned, w);
    cfg.merge_mode = MergeMode::NonBlocking;
    cfg.warmup = 2 * w;
    cfg.threads = 1;
    let one = best_parallel(&cfg, arrivals, 3);
    cfg.threads = 8;
    let eight = best_parallel(&cfg, arrivals, 3);
    let ratio = eight / one;
    let host = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    outcome(
        NAME,
        ratio >= 3.0,
        format!(
            "8-thread {eight:.0} tps vs 1-thread {one:.0} tps: {ratio:.2}x (need >= 3.0; host exposes {host} hardware thread{})",
            if host == 1 { "" } else { "s" }
        ),
    )
}

/// The one-worker engine pays for its cross-thread machinery, but less than
/// 60% of the lock-free single-threaded loop's throughput.
fn concurrency_control_overhead(arrivals: &[Tuple], w: usize) -> Outcome {
    const NAME: &str = "concurrency-control-overhead";
    let mut cfg = engine(IndexKind::Partitioned, w);
    cfg.warmup = 2 * w;
    let bare = best_reference(&cfg, arrivals, 3);
    cfg.threads = 1;
    let locked = best_parallel(&cfg, arrivals, 3);
    let gap = 1.0 - locked / bare;
    outcome(
        NAME,
        locked < bare && gap < 0.6,
        format!(
            "locks-on {locked:.0} tps vs locks-off {bare:.0} tps: {:.1}% slower (need 0% < gap < 60%)",
            gap * 100.0
        ),
    )
}

/// Rebuilt chains beat mutable chains at L=2, and both flavors degrade as
/// the chain grows to L=8.
fn chained_index_trends() -> Outcome {
    const NAME: &str = "chained-index-trends";
    let w = 1 << 14;
    let arrivals = uniform_arrivals(10 * w, 0xc5a1);
    let configs = [
        (IndexKind::ChainMutable, 2),
        (IndexKind::ChainMutable, 8),
        (IndexKind::ChainRebuilt, 2),
        (IndexKind::ChainRebuilt, 8),
    ];
    // Round-robin the repetitions so a transient load spike on the host
    // cannot land entirely on one configuration's measurements.
    let mut best = [0.0f64; 4];
    for _ in 0..5 {
        for (slot, &(kind, chain)) in configs.iter().enumerate() {
            let mut cfg = engine(kind, w);
            cfg.chain_length = chain;
            cfg.warmup = 2 * w;
            let tps = run_reference(&cfg, &arrivals).stats.measured_throughput_tps();
            best[slot] = best[slot].max(tps);
        }
    }
    let [mutable2, mutable8, rebuilt2, rebuilt8] = best;
    let passed = rebuilt2 > mutable2 && mutable2 > mutable8 && rebuilt2 > rebuilt8;
    outcome(
        NAME,
        passed,
        format!(
            "L=2 rebuilt {rebuilt2:.0} vs mutable {mutable2:.0}; L=8 rebuilt {rebuilt8:.0}, mutable {mutable8:.0} tps"
        ),
    )
}

/// Single-threaded, both merging indexes prefer an interior merge ratio
/// (both grid endpoints lose to the maximum); on 16 workers the partitioned
/// index must be within 5% of its grid maximum at m=1.
fn merge_ratio_shape(arrivals: &[Tuple], w: usize) -> Outcome {
    const NAME: &str = "merge-ratio-shape";
    let grid = [
        1.0 / 64.0,
        1.0 / 32.0,
        1.0 / 16.0,
        1.0 / 8.0,
        1.0 / 4.0,
        1.0 / 2.0,
        1.0,
    ];
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    for kind in [IndexKind::MergeTree, IndexKind::Partitioned] {
        let tps: Vec<f64> = grid
            .iter()
            .map(|&m| {
                let mut cfg = engine(kind, w);
                cfg.merge_ratio = m;
                cfg.warmup = 2 * w;
                best_reference(&cfg, arrivals, 2)
            })
            .collect();
        let best = tps.iter().cloned().fold(0.0, f64::max);
        let argmax = tps.iter().position(|&t| t == best).unwrap();
        if argmax == 0 || argmax == grid.len() - 1 {
            failures.push(format!("{} best at endpoint m={}", kind.name(), grid[argmax]));
        }
        if !(tps[0] < best && tps[grid.len() - 1] < best) {
            failures.push(format!("{} endpoints not below the maximum", kind.name()));
        }
        notes.push(format!(
            "{} best m={} ({:.0} tps)",
            kind.name(),
            grid[argmax],
            best
        ));
    }

    let crowded: Vec<f64> = grid
        .iter()
        .map(|&m| {
            let mut cfg = engine(IndexKind::Partitioned, w);
            cfg.merge_ratio = m;
            cfg.threads = 16;
            cfg.warmup = 2 * w;
            best_parallel(&cfg, arrivals, 2)
        })
        .collect();
    let best = crowded.iter().cloned().fold(0.0, f64::max);
    let at_one = *crowded.last().unwrap();
    let shortfall = 1.0 - at_one / best;
    notes.push(format!(
        "16-thread m=1 {:.1}% below grid max (need <= 5%)",
        shortfall * 100.0
    ));
    if shortfall > 0.05 {
        let host = std::thread::available_parallelism().map_or(0, |n| n.get());
        failures.push(format!(
            "16-thread m=1 misses the 5% window (host exposes {host} hardware thread{})",
            if host == 1 { "" } else { "s" }
        ));
    }

    let passed = failures.is_empty();
    let detail = if passed {
        notes.join("; ")
    } else {
        format!("{}; {}", failures.join("; "), notes.join("; "))
    };
    outcome(NAME, passed, detail)
}

/// Merge time must grow linearly with the merged element count: log-log
/// slope 1.0 +/- 0.15 across 2^12..2^18 elements.
fn merge_cost_linearity() -> Outcome {
    const NAME: &str = "merge-cost-linearity";
    let mut points = Vec::new();
    for exp in 12..=18u32 {
        let n = 1usize << exp;
        let mut best = f64::INFINITY;
        for rep in 0..5u64 {
            let keys = generate_keys(&WorkloadSpec::new(
                KeyDistribution::Uniform { lo: 0, hi: DOMAIN },
                0x11ea_4000 + rep,
                n,
            ))
            .unwrap();
            let mut tree = MergeTree::new(n, TreeGeometry::default());
            let half = n / 2;
            for (i, &key) in keys[..half].iter().enumerate() {
                tree.insert(key, i as u64);
            }
            tree.merge(0);
            for (i, &key) in keys[half..].iter().enumerate() {
                tree.insert(key, (half + i) as u64);
            }
            let start = Instant::now();
            tree.merge(0);
            best = best.min(start.elapsed().as_secs_f64());
        }
        points.push((n as f64, best));
    }
    let slope = log_log_slope(&points);
    outcome(
        NAME,
        (slope - 1.0).abs() <= 0.15,
        format!("log-log slope {slope:.3} over 2^12..2^18 elements (need 1.0 +/- 0.15)"),
    )
}

struct DriftStats {
    top_share: f64,
    worst_max_mean: f64,
}

/// Feed an 18w self-join insert stream through the partitioned index and
/// attribute every middle-phase insert to the subindex that received it.
fn drift_run(w: usize, shift: f64) -> DriftStats {
    let phases = [4 * w, 10 * w, 4 * w];
    let keys = generate_keys(&WorkloadSpec::new(
        // Start low so most of the r=1 drift path stays inside the unit
        // domain: once the mean crosses 1.0 every draw clamps to the top
        // key, the archive degenerates into one giant duplicate run, and
        // routing decays to the seq tie-break instead of the key.
        KeyDistribution::ShiftingGaussian {
            mean: 0.25,
            std_dev: 0.005,
            shift,
            phases,
        },
        0xd81f,
        18 * w,
    ))
    .unwrap();

    let mut tree = UnsyncPartitionedTree::new(w, 2, TreeGeometry::default());
    let phase2 = 4 * w..14 * w;
    let mut tally = vec![0u64; tree.subindex_count()];
    let mut generation_start = 0usize;
    let mut top_hits = 0u64;
    let mut phase2_total = 0u64;
    let mut worst_max_mean = 0.0f64;

    for (i, &key) in keys.iter().enumerate() {
        let ordinal = tree.route_of(key);
        if phase2.contains(&i) {
            phase2_total += 1;
            if ordinal == tree.subindex_count() - 1 {
                top_hits += 1;
            }
        }
        tally[ordinal] += 1;
        if tree.insert(key, i as u64) {
            if generation_start >= phase2.start && i < phase2.end {
                let total: u64 = tally.iter().sum();
                let max = tally.iter().copied().max().unwrap_or(0);
                if total > 0 {
                    let ratio = max as f64 * tally.len() as f64 / total as f64;
                    worst_max_mean = worst_max_mean.max(ratio);
                }
            }
            let floor = (i as u64 + 1).saturating_sub(w as u64);
            tree.merge(floor);
            tally = vec![0; tree.subindex_count()];
            generation_start = i + 1;
        }
    }

    DriftStats {
        top_share: top_hits as f64 / phase2_total.max(1) as f64,
        worst_max_mean,
    }
}

/// A drifting key distribution must funnel most middle-phase inserts into
/// the top subindex, while a stationary one keeps every generation's
/// subindex loads balanced.
fn insert_skew_instrumentation() -> Outcome {
    const NAME: &str = "insert-skew-instrumentation";
    let w = 1 << 16;
    let drifting = drift_run(w, 1.0);
    let stationary = drift_run(w, 0.0);
    let passed = drifting.top_share > 0.5 && stationary.worst_max_mean < 2.0;
    outcome(
        NAME,
        passed,
        format!(
            "drifting top-subindex share {:.1}% (need > 50%); stationary max/mean {:.2} (need < 2)",
            drifting.top_share * 100.0,
            stationary.worst_max_mean
        ),
    )
}

/// Frozen cost-model evaluations, plus the single-partition equivalence.
fn cost_model_goldens() -> Outcome {
    const NAME: &str = "cost-model-goldens";
    let mut failures = Vec::new();

    let any = CostParams::unit();
    let direct = CostModel::Direct {
        probe: 5.0,
        expire: 3.0,
        insert: 2.0,
    }
    .evaluate(&any);
    if direct.total() != 10.0 {
        failures.push(format!("direct total {} != 10", direct.total()));
    }

    let mut flat = CostParams::unit();
    flat.sigma = 2.0;
    flat.tau_copy = 1.0;
    let btree = CostModel::BTreeJoin { height: 3.0 }.evaluate(&flat);
    if (btree.probe, btree.expire, btree.insert) != (5.0, 3.0, 3.0) || btree.total() != 11.0 {
        failures.push(format!(
            "btree breakdown ({}, {}, {}) != (5, 3, 3)",
            btree.probe, btree.expire, btree.insert
        ));
    }

    let chained = CostModel::ChainedJoin {
        chain_length: 2.0,
        height: 2.0,
    }
    .evaluate(&flat);
    if (chained.probe, chained.expire, chained.insert) != (7.0, 0.0, 2.0) || chained.total() != 9.0
    {
        failures.push(format!(
            "chained breakdown ({}, {}, {}) != (7, 0, 2)",
            chained.probe, chained.expire, chained.insert
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for draw in 0..100 {
        let params = CostParams {
            sigma: rng.gen_range(0.1..8.0),
            tau_copy: rng.gen_range(0.1..4.0),
            lambda_search: rng.gen_range(0.1..4.0),
            lambda_delete: rng.gen_range(0.1..4.0),
            lambda_insert: rng.gen_range(0.1..4.0),
            lambda_archive: rng.gen_range(0.1..4.0),
            merge_work: rng.gen_range(1.0..1000.0),
            merge_ratio: rng.gen_range(0.05..1.0),
            window: rng.gen_range(100.0..1_000_000.0),
        };
        let fan_out = rng.gen_range(4.0..64.0);
        let single = CostModel::round_robin(&params, fan_out, 1.0)
            .evaluate(&params)
            .total();
        let btree = CostModel::btree(&params, fan_out).evaluate(&params).total();
        if (single - btree).abs() > 1e-9 * btree.max(1.0) {
            failures.push(format!("draw {draw}: round-robin(P=1) {single} != btree {btree}"));
            break;
        }
    }

    let passed = failures.is_empty();
    let detail = if passed {
        "three frozen breakdowns exact; round-robin(P=1) == btree on 100 draws".to_string()
    } else {
        failures.join("; ")
    };
    outcome(NAME, passed, detail)
}

#[test]
fn acceptance_report() {
    let mut results = Vec::new();

    results.push(oracle_equivalence_matrix());

    let big_w = 1 << 18;
    let big = uniform_arrivals(10 * big_w, 0xb16);
    results.push(single_thread_partitioned_advantage(&big, big_w));
    results.push(parallel_scaling(&big, big_w));
    drop(big);

    let mid_w = 1 << 16;
    let mid = uniform_arrivals(10 * mid_w, 0x71d);
    results.push(concurrency_control_overhead(&mid, mid_w));
    results.push(chained_index_trends());
    results.push(merge_ratio_shape(&mid, mid_w));
    drop(mid);

    results.push(merge_cost_linearity());
    results.push(insert_skew_instrumentation());
    results.push(cost_model_goldens());

    let mut failed = Vec::new();
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<40} {}", r.name, r.detail);
        if !r.passed {
            failed.push(r.name);
        }
    }
    assert!(
        failed.is_empty(),
        "acceptance checks failed: {}",
        failed.join(", ")
    );
}
