//! Plain-text run descriptions.
//!
//! A run is described by a `key=value` file (or an in-memory map of the same
//! shape). [`resolve`] turns the map into a [`BenchConfig`]: a fully
//! validated engine configuration plus the workload that feeds it. The same
//! map format configures both named experiments and ad-hoc files, so a sweep
//! is just the base map with one key rewritten per point.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use mergetree::engine::{run_parallel, run_reference, EngineConfig, IndexKind, RunOutput};
use mergetree::workload::{
    calibrate_diff, calibrate_diff_empirical, generate_stream, interleave, KeyDistribution,
    WorkloadSpec,
};
use mergetree::{BandPredicate, JoinMode, Stream, Tuple};

pub type KeyMap = BTreeMap<String, String>;

/// Keys accepted in a run description.
const KNOWN_KEYS: &[&str] = &[
    "window_size",
    "window_size_s",
    "merge_ratio",
    "insertion_depth",
    "task_size",
    "threads",
    "index",
    "chain_length",
    "partitions",
    "distribution",
    "diff",
    "target_match_rate",
    "seed",
    "tuples",
    "warmup",
    "join_mode",
    "merge_mode",
    "rate_r",
    "rate_s",
    "domain_width",
    "pending_cap",
];

/// Keys that steer the experiment runner rather than a single run; they are
/// ignored by [`resolve`] so a sweep file can share one map.
const RUNNER_KEYS: &[&str] = &[
    "name",
    "sweep_param",
    "sweep_values",
    "repetitions",
    "executor",
];

const SEED_STRIDE: u64 = 0x9e37_79b9_7f4a_7c15;

/// Parse `key=value` text: one pair per line, `#` comments, blank lines
/// ignored.
pub fn parse_key_map(text: &str) -> Result<KeyMap> {
    let mut map = KeyMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got {:?}", lineno + 1, line))?;
        let key = key.trim().to_ascii_lowercase();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("line {}: duplicate key {:?}", lineno + 1, key);
        }
    }
    Ok(map)
}

/// A resolved run: engine configuration plus workload recipe.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub engine: EngineConfig,
    pub distribution: KeyDistribution,
    pub domain_width: i64,
    pub seed: u64,
    /// Arrivals measured after warmup; the stream is `warmup + tuples` long.
    pub tuples: usize,
    pub rate_r: usize,
    pub rate_s: usize,
    /// Set when the band width came from a match-rate target rather than an
    /// explicit `diff`; twins recalibrate from it.
    pub target_match_rate: Option<f64>,
}

fn get_parsed<T: std::str::FromStr>(map: &KeyMap, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<T>()
            .map_err(|e| anyhow!("{key}={v}: {e}")),
    }
}

/// Parse a distribution description. Numeric arguments are in unit space
/// (the continuous draw before scaling onto the key domain):
/// `uniform[:lo:hi]`, `gaussian:mean:std`, `gamma:shape:scale`,
/// `shifting-gaussian:mean:std:shift:p1:p2:p3`.
pub fn parse_distribution(value: &str, domain_width: i64) -> Result<KeyDistribution> {
    let mut parts = value.split(':');
    let head = parts.next().unwrap_or("");
    let args: Vec<&str> = parts.collect();
    let float = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| anyhow!("distribution argument {s:?} is not a number"))
    };
    let count = |n: usize| -> Result<()> {
        if args.len() != n {
            bail!("distribution {head:?} takes {n} arguments, got {}", args.len());
        }
        Ok(())
    };
    match head {
        "uniform" => {
            if args.is_empty() {
                return Ok(KeyDistribution::Uniform {
                    lo: 0,
                    hi: domain_width,
                });
            }
            count(2)?;
            let scale = |x: f64| (x * domain_width as f64).round() as i64;
            Ok(KeyDistribution::Uniform {
                lo: scale(float(args[0])?),
                hi: scale(float(args[1])?),
            })
        }
        "gaussian" => {
            count(2)?;
            Ok(KeyDistribution::Gaussian {
                mean: float(args[0])?,
                std_dev: float(args[1])?,
            })
        }
        "gamma" => {
            count(2)?;
            Ok(KeyDistribution::Gamma {
                shape: float(args[0])?,
                scale: float(args[1])?,
            })
        }
        "shifting-gaussian" => {
            count(6)?;
            let phase = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| anyhow!("phase length {s:?} is not an integer"))
            };
            Ok(KeyDistribution::ShiftingGaussian {
                mean: float(args[0])?,
                std_dev: float(args[1])?,
                shift: float(args[2])?,
                phases: [phase(args[3])?, phase(args[4])?, phase(args[5])?],
            })
        }
        other => bail!(
            "unknown distribution {other:?} (uniform, gaussian, gamma, shifting-gaussian)"
        ),
    }
}

fn distribution_is_uniform_full(d: &KeyDistribution, domain_width: i64) -> bool {
    matches!(d, KeyDistribution::Uniform { lo: 0, hi } if *hi == domain_width)
}

/// Band width hitting `sigma` expected matches per probe into a window of
/// `w` tuples drawn from `distribution`.
fn calibrate(
    distribution: &KeyDistribution,
    domain_width: i64,
    w: usize,
    sigma: f64,
    seed: u64,
) -> Result<i64> {
    if distribution_is_uniform_full(distribution, domain_width) {
        return Ok(calibrate_diff(w, domain_width, sigma)?);
    }
    let mut spec = WorkloadSpec::new(distribution.clone(), seed ^ 0x5ca1_ab1e, 8192);
    spec.domain_width = domain_width;
    let sample = mergetree::workload::generate_keys(&spec)?;
    Ok(calibrate_diff_empirical(&sample, w, sigma)?)
}

/// Resolve a key map into a runnable configuration. Unknown keys are
/// rejected; runner-level keys (`sweep_param`, ...) are skipped. The
/// `BENCH_THREADS` environment variable, when set, caps the thread count.
pub fn resolve(map: &KeyMap) -> Result<BenchConfig> {
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) && !RUNNER_KEYS.contains(&key.as_str()) {
            bail!("unknown key {key:?}");
        }
    }

    let window_r: usize = get_parsed(map, "window_size", 1024)?;
    let window_s: usize = get_parsed(map, "window_size_s", window_r)?;
    let index: IndexKind = map
        .get("index")
        .map(|v| v.parse())
        .transpose()?
        .unwrap_or(IndexKind::BTree);
    let join_mode = match map.get("join_mode").map(String::as_str) {
        None | Some("two-way") => JoinMode::TwoWay,
        Some("self") | Some("self-join") => JoinMode::SelfJoin,
        Some(other) => bail!("join_mode={other}: expected two-way or self-join"),
    };

    let mut engine = EngineConfig::new(index, window_r);
    engine.window_s = window_s;
    engine.join_mode = join_mode;
    if let Some(mode) = map.get("merge_mode") {
        engine.merge_mode = mode.parse()?;
    }
    engine.threads = get_parsed(map, "threads", 1)?;
    if let Ok(cap) = std::env::var("BENCH_THREADS") {
        let cap: usize = cap
            .parse()
            .context("BENCH_THREADS must be a thread count")?;
        engine.threads = engine.threads.min(cap.max(1));
    }
    engine.task_size = get_parsed(map, "task_size", engine.task_size)?;
    engine.merge_ratio = get_parsed(map, "merge_ratio", engine.merge_ratio)?;
    engine.insertion_depth = get_parsed(map, "insertion_depth", engine.insertion_depth)?;
    engine.chain_length = get_parsed(map, "chain_length", engine.chain_length)?;
    engine.partitions = get_parsed(map, "partitions", engine.partitions)?;
    if let Some(cap) = map.get("pending_cap") {
        engine.pending_cap = Some(cap.parse::<usize>().map_err(|e| anyhow!("pending_cap: {e}"))?);
    }

    let domain_width: i64 = get_parsed(map, "domain_width", 1 << 22)?;
    let distribution = match map.get("distribution") {
        None => KeyDistribution::Uniform {
            lo: 0,
            hi: domain_width,
        },
        Some(v) => parse_distribution(v, domain_width)?,
    };

    let seed: u64 = get_parsed(map, "seed", 42)?;
    let tuples: usize = get_parsed(map, "tuples", 8 * window_r)?;
    engine.warmup = get_parsed(map, "warmup", (2 * window_r).min(tuples / 2))?;

    let rate_r: usize = get_parsed(map, "rate_r", 1)?;
    let rate_s: usize = get_parsed(map, "rate_s", 1)?;
    if rate_r == 0 || rate_s == 0 {
        bail!("stream rates must be >= 1");
    }

    let mut target_match_rate = None;
    engine.predicate = match (map.get("diff"), map.get("target_match_rate")) {
        (Some(_), Some(_)) => bail!("give either diff or target_match_rate, not both"),
        (Some(d), None) => BandPredicate::new(d.parse().map_err(|e| anyhow!("diff: {e}"))?),
        (None, rate) => {
            let sigma: f64 = match rate {
                Some(r) => r.parse().map_err(|e| anyhow!("target_match_rate: {e}"))?,
                None => 2.0,
            };
            target_match_rate = Some(sigma);
            BandPredicate::new(calibrate(&distribution, domain_width, window_r, sigma, seed)?)
        }
    };

    let config = BenchConfig {
        engine,
        distribution,
        domain_width,
        seed,
        tuples,
        rate_r,
        rate_s,
        target_match_rate,
    };
    config.engine.validate()?;
    Ok(config)
}

impl BenchConfig {
    /// Total arrivals fed to the engine, warmup included.
    pub fn total_arrivals(&self) -> usize {
        self.engine.warmup + self.tuples
    }

    fn stream_spec(&self, seed: u64, len: usize) -> WorkloadSpec {
        let mut spec = WorkloadSpec::new(self.distribution.clone(), seed, len);
        spec.domain_width = self.domain_width;
        spec
    }

    /// Build the arrival sequence for repetition `rep`. Each repetition
    /// derives fresh stream seeds from the base seed.
    pub fn arrivals(&self, rep: usize) -> Result<Vec<Tuple>> {
        let seed = self.seed.wrapping_add(SEED_STRIDE.wrapping_mul(rep as u64));
        let total = self.total_arrivals();
        if self.engine.join_mode == JoinMode::SelfJoin {
            let spec = self.stream_spec(seed, total);
            return Ok(generate_stream(&spec, Stream::R)?);
        }
        let per_round = self.rate_r + self.rate_s;
        let rounds = total / per_round;
        let n_r = rounds * self.rate_r + (total % per_round).min(self.rate_r);
        let n_s = total - n_r;
        let r = generate_stream(&self.stream_spec(seed, n_r), Stream::R)?;
        let s = generate_stream(&self.stream_spec(seed ^ SEED_STRIDE, n_s), Stream::S)?;
        Ok(interleave(&r, &s, self.rate_r, self.rate_s))
    }

    /// Shrink to the verification scale. Windows above 2^10 are scaled down
    /// to that size (stream S keeps its relative size), the arrival count is
    /// clamped, and a targeted match rate is recalibrated for the smaller
    /// window.
    pub fn twin(&self) -> Result<BenchConfig> {
        const TWIN_WINDOW: usize = 1 << 10;
        let mut twin = self.clone();
        let w_r = self.engine.window_r;
        if w_r > TWIN_WINDOW {
            twin.engine.window_r = TWIN_WINDOW;
            twin.engine.window_s =
                ((self.engine.window_s * TWIN_WINDOW) / w_r).max(TWIN_WINDOW / 4);
        }
        twin.tuples = self
            .tuples
            .min(8 * twin.engine.window_r.max(twin.engine.window_s))
            .min(100_000);
        twin.engine.warmup = 0;
        if let Some(sigma) = self.target_match_rate {
            twin.engine.predicate = BandPredicate::new(calibrate(
                &twin.distribution,
                twin.domain_width,
                twin.engine.window_r,
                sigma,
                twin.seed,
            )?);
        }
        twin.engine.validate()?;
        Ok(twin)
    }
}

/// Which executor produces the measured rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Executor {
    /// The shared-state engine under test.
    Parallel,
    /// The single-threaded loop with no cross-thread machinery; its timings
    /// are the no-concurrency-overhead baseline.
    Reference,
}

impl Executor {
    pub fn run(self, config: &EngineConfig, arrivals: &[Tuple]) -> RunOutput {
        match self {
            Executor::Parallel => run_parallel(config, arrivals),
            Executor::Reference => run_reference(config, arrivals),
        }
    }
}

impl std::str::FromStr for Executor {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Executor::Parallel),
            "reference" => Ok(Executor::Reference),
            other => bail!("executor={other}: expected parallel or reference"),
        }
    }
}

/// FNV-1a over the arrival sequence; identifies a workload independent of
/// any engine setting.
pub fn workload_hash(arrivals: &[Tuple]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for t in arrivals {
        eat(match t.stream {
            Stream::R => 0,
            Stream::S => 1,
        });
        for b in t.seq.to_le_bytes() {
            eat(b);
        }
        for b in t.key.to_le_bytes() {
            eat(b);
        }
    }
    h
}

/// Run `executor` on `arrivals` and compare the output record-for-record
/// with the nested-loop oracle. Returns the engine output on success; on any
/// divergence the error pinpoints the first differing record.
pub fn check_against_oracle(
    config: &BenchConfig,
    executor: Executor,
    arrivals: &[Tuple],
) -> Result<RunOutput> {
    let expected = mergetree::oracle::NestedLoopJoin::run(
        config.engine.join_mode,
        config.engine.predicate,
        config.engine.window_r,
        config.engine.window_s,
        arrivals,
    );
    let output = executor.run(&config.engine, arrivals);
    match divergence_report(&output.results, &expected) {
        None => Ok(output),
        Some(report) => bail!(report),
    }
}

/// `None` when the sequences agree; otherwise a report naming the first
/// differing record.
pub fn divergence_report(
    got: &[mergetree::ResultRecord],
    expected: &[mergetree::ResultRecord],
) -> Option<String> {
    if got == expected {
        return None;
    }
    let mut report = String::new();
    let _ = writeln!(
        report,
        "oracle mismatch: engine produced {} records, oracle {}",
        got.len(),
        expected.len()
    );
    let first = got
        .iter()
        .zip(expected)
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| got.len().min(expected.len()));
    let _ = writeln!(report, "first divergence at record {first}:");
    let _ = writeln!(report, "  oracle: {:?}", expected.get(first));
    let _ = writeln!(report, "  engine: {:?}", got.get(first));
    Some(report.trim_end().to_string())
}
