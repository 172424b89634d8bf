//! Named experiments and the sweep runner.
//!
//! An experiment is a base run description plus one swept key. Before any
//! timed repetition of a sweep point, the runner checks a same-shape twin
//! (window clamped to 2^10) against the nested-loop oracle and aborts on the
//! first divergence, so every row in the CSV comes from a configuration
//! whose output was verified in the same session.

use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mergetree::engine::{EngineStats, IndexKind};
use mergetree::merge_tree::MergeTree;
use mergetree::types::TreeGeometry;
use mergetree::workload::{generate_stream, KeyDistribution, WorkloadSpec};
use mergetree::Stream;

use crate::config::{
    check_against_oracle, parse_key_map, resolve, workload_hash, Executor, KeyMap,
};

pub const CSV_HEADER: &str = "experiment,sweep_param,sweep_value,rep,seed_hash,throughput_tps,p50_latency_s,p99_latency_s,merge_count,notes";

/// One value of the swept key.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    /// Printed in the `sweep_value` column.
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

/// A variant runs every sweep point under extra overrides, tagged in the
/// `notes` column; experiments that compare two index kinds across one sweep
/// use one variant per kind.
#[derive(Clone, Debug)]
pub struct Variant {
    pub note: String,
    pub overrides: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Special {
    /// Feed arrivals through an executor (the normal case).
    Engine,
    /// Time one archive merge directly; the sweep value is the element
    /// count and `throughput_tps` reports merged elements per second.
    MergeTiming,
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub name: String,
    pub summary: String,
    pub base: KeyMap,
    pub sweep_param: String,
    pub points: Vec<SweepPoint>,
    pub variants: Vec<Variant>,
    pub repetitions: usize,
    pub executor: Executor,
    pub special: Special,
}

fn keymap(pairs: &[(&str, &str)]) -> KeyMap {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn sweep(param: &str, values: &[&str]) -> Vec<SweepPoint> {
    values
        .iter()
        .map(|v| SweepPoint {
            label: v.to_string(),
            overrides: vec![(param.to_string(), v.to_string())],
        })
        .collect()
}

fn plain(note: &str, pairs: &[(&str, &str)]) -> Variant {
    Variant {
        note: note.to_string(),
        overrides: pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    }
}

impl ExperimentSpec {
    fn new(
        name: &str,
        summary: &str,
        base: KeyMap,
        sweep_param: &str,
        points: Vec<SweepPoint>,
    ) -> Self {
        ExperimentSpec {
            name: name.to_string(),
            summary: summary.to_string(),
            base,
            sweep_param: sweep_param.to_string(),
            points,
            variants: vec![plain("", &[])],
            repetitions: 3,
            executor: Executor::Parallel,
            special: Special::Engine,
        }
    }

    fn reference(mut self) -> Self {
        self.executor = Executor::Reference;
        self
    }

    fn variants(mut self, variants: Vec<Variant>) -> Self {
        self.variants = variants;
        self
    }
}

/// Every built-in experiment. Sizes are desk scale: minutes, not hours.
pub fn registry() -> Vec<ExperimentSpec> {
    let w14 = keymap(&[("window_size", "16384")]);
    let mut list = Vec::new();

    list.push(
        ExperimentSpec::new(
            "index-compare",
            "single-thread throughput of every index discipline",
            keymap(&[("window_size", "16384"), ("merge_ratio", "0.5")]),
            "index",
            sweep(
                "index",
                &IndexKind::ALL.map(|k| k.name()),
            ),
        )
        .reference(),
    );

    list.push(ExperimentSpec::new(
        "scalability",
        "partitioned-index throughput versus worker count",
        keymap(&[
            ("window_size", "65536"),
            ("index", "partitioned"),
            ("merge_mode", "non-blocking"),
            ("merge_ratio", "1.0"),
        ]),
        "threads",
        sweep("threads", &["1", "2", "4", "8", "16"]),
    ));

    let ratios = ["0.015625", "0.03125", "0.0625", "0.125", "0.25", "0.5", "1.0"];
    list.push(
        ExperimentSpec::new(
            "merge-ratio",
            "staged-fraction sweep for both merging indexes, single thread",
            keymap(&[("window_size", "65536")]),
            "merge_ratio",
            sweep("merge_ratio", &ratios),
        )
        .reference()
        .variants(vec![
            plain("merge-tree", &[("index", "merge-tree")]),
            plain("partitioned", &[("index", "partitioned")]),
        ]),
    );

    list.push(ExperimentSpec::new(
        "merge-ratio-parallel",
        "staged-fraction sweep for the partitioned index on 16 workers",
        keymap(&[
            ("window_size", "65536"),
            ("index", "partitioned"),
            ("merge_mode", "non-blocking"),
            ("threads", "16"),
        ]),
        "merge_ratio",
        sweep("merge_ratio", &ratios),
    ));

    list.push(
        ExperimentSpec::new(
            "insertion-depth",
            "partitioned-index routing depth sweep",
            keymap(&[("window_size", "65536"), ("index", "partitioned")]),
            "insertion_depth",
            sweep("insertion_depth", &["0", "1", "2", "3"]),
        )
        .reference(),
    );

    list.push(
        ExperimentSpec::new(
            "chain-length",
            "subtree count sweep for both chained-index flavors",
            w14.clone(),
            "chain_length",
            sweep("chain_length", &["2", "3", "4", "6", "8"]),
        )
        .reference()
        .variants(vec![
            plain("chain-mutable", &[("index", "chain-mutable")]),
            plain("chain-rebuilt", &[("index", "chain-rebuilt")]),
        ]),
    );

    list.push(ExperimentSpec::new(
        "task-size",
        "queue batch size versus throughput and latency on 8 workers",
        keymap(&[
            ("window_size", "16384"),
            ("index", "partitioned"),
            ("merge_mode", "non-blocking"),
            ("threads", "8"),
        ]),
        "task_size",
        sweep("task_size", &["1", "2", "4", "8", "16", "32", "64"]),
    ));

    list.push(
        ExperimentSpec::new(
            "match-rate",
            "band width swept by expected matches per probe",
            w14.clone(),
            "target_match_rate",
            sweep("target_match_rate", &["1", "2", "4", "8", "16"]),
        )
        .reference()
        .variants(vec![
            plain("btree", &[("index", "btree")]),
            plain("partitioned", &[("index", "partitioned")]),
        ]),
    );

    list.push(ExperimentSpec::new(
        "asym-rate",
        "unequal stream rates, R tuples per S tuple",
        keymap(&[
            ("window_size", "8192"),
            ("index", "partitioned"),
            ("merge_mode", "non-blocking"),
            ("threads", "4"),
        ]),
        "rate_r",
        sweep("rate_r", &["1", "2", "4", "8"]),
    ));

    list.push(ExperimentSpec::new(
        "asym-window",
        "unequal window sizes with a fixed R window",
        keymap(&[
            ("window_size", "4096"),
            ("tuples", "131072"),
            ("index", "partitioned"),
            ("merge_mode", "non-blocking"),
            ("threads", "4"),
        ]),
        "window_size_s",
        sweep("window_size_s", &["1024", "4096", "16384"]),
    ));

    let shift_points = ["0.0", "0.35", "0.7"]
        .iter()
        .map(|shift| SweepPoint {
            label: shift.to_string(),
            overrides: vec![(
                "distribution".to_string(),
                format!("shifting-gaussian:0.3:0.05:{shift}:65536:163840:65536"),
            )],
        })
        .collect();
    list.push(ExperimentSpec::new(
        "skew-shift",
        "drifting key hotspot; notes carry subindex insert-share statistics",
        keymap(&[
            ("window_size", "16384"),
            ("tuples", "294912"),
            ("warmup", "0"),
            ("index", "partitioned"),
            ("merge_mode", "non-blocking"),
            ("threads", "4"),
            ("join_mode", "self-join"),
        ]),
        "shift",
        shift_points,
    ));

    let mut linearity = ExperimentSpec::new(
        "merge-linearity",
        "archive merge time versus merged element count",
        KeyMap::new(),
        "elements",
        sweep(
            "elements",
            &["4096", "8192", "16384", "32768", "65536", "131072", "262144"],
        ),
    );
    linearity.special = Special::MergeTiming;
    list.push(linearity);

    list.push(
        ExperimentSpec::new(
            "distributions",
            "key distribution shapes at a fixed match-rate target",
            keymap(&[("window_size", "16384"), ("index", "partitioned")]),
            "distribution",
            vec![
                SweepPoint {
                    label: "uniform".into(),
                    overrides: vec![("distribution".into(), "uniform".into())],
                },
                SweepPoint {
                    label: "gaussian".into(),
                    overrides: vec![("distribution".into(), "gaussian:0.5:0.15".into())],
                },
                SweepPoint {
                    label: "gamma".into(),
                    overrides: vec![("distribution".into(), "gamma:2:0.08".into())],
                },
            ],
        )
        .reference(),
    );

    list
}

/// Look up a built-in experiment, or parse `arg` as a run-description file
/// with optional `sweep_param`/`sweep_values`/`repetitions`/`executor` keys.
pub fn load(arg: &str) -> Result<ExperimentSpec> {
    if let Some(spec) = registry().into_iter().find(|s| s.name == arg) {
        return Ok(spec);
    }
    let path = std::path::Path::new(arg);
    if !path.exists() {
        let names: Vec<String> = registry().into_iter().map(|s| s.name).collect();
        bail!(
            "{arg:?} is neither a file nor a known experiment (try: {})",
            names.join(", ")
        );
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let map = parse_key_map(&text)?;
    from_file_map(path, map)
}

fn from_file_map(path: &std::path::Path, mut map: KeyMap) -> Result<ExperimentSpec> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "custom".to_string());
    let name = map.remove("name").unwrap_or(stem);
    let repetitions = match map.remove("repetitions") {
        Some(v) => v.parse().context("repetitions")?,
        None => 3,
    };
    let executor = match map.remove("executor") {
        Some(v) => v.parse()?,
        None => Executor::Parallel,
    };
    let points = match (map.remove("sweep_param"), map.remove("sweep_values")) {
        (Some(param), Some(values)) => {
            let values: Vec<&str> = values.split(',').map(str::trim).collect();
            let mut spec = ExperimentSpec::new(&name, "", map.clone(), &param, sweep(&param, &values));
            spec.repetitions = repetitions;
            spec.executor = executor;
            return Ok(spec);
        }
        (None, None) => vec![SweepPoint {
            label: "-".to_string(),
            overrides: Vec::new(),
        }],
        _ => bail!("sweep_param and sweep_values must be given together"),
    };
    let mut spec = ExperimentSpec::new(&name, "", map, "-", points);
    spec.repetitions = repetitions;
    spec.executor = executor;
    Ok(spec)
}

fn merged_map(spec: &ExperimentSpec, point: &SweepPoint, variant: &Variant) -> KeyMap {
    let mut map = spec.base.clone();
    for (k, v) in point.overrides.iter().chain(&variant.overrides) {
        map.insert(k.clone(), v.clone());
    }
    map
}

/// Subindex load statistics for the notes column, when the run used the
/// partitioned index: the share of all inserts taken by the top (last) key
/// range, summed over generations, and max/mean within the final generation.
fn histogram_notes(stats: &EngineStats) -> Option<String> {
    let last_gen = stats.insert_histograms.iter().flatten().next()?;
    let mut total = 0u64;
    let mut top = 0u64;
    for gen_hist in stats
        .retired_histograms
        .iter()
        .chain(stats.insert_histograms.iter().flatten())
    {
        total += gen_hist.iter().sum::<u64>();
        top += gen_hist.last().copied().unwrap_or(0);
    }
    if total == 0 {
        return None;
    }
    let sum: u64 = last_gen.iter().sum();
    let max_mean = if sum == 0 || last_gen.is_empty() {
        0.0
    } else {
        *last_gen.iter().max().unwrap() as f64 * last_gen.len() as f64 / sum as f64
    };
    Some(format!(
        "top_share={:.3} max_mean={:.2}",
        top as f64 / total as f64,
        max_mean
    ))
}

struct Row<'a> {
    experiment: &'a str,
    sweep_param: &'a str,
    sweep_value: &'a str,
    rep: usize,
    seed_hash: u64,
    throughput_tps: f64,
    p50_latency_s: f64,
    p99_latency_s: f64,
    merge_count: u64,
    notes: String,
}

fn write_row(out: &mut dyn Write, row: &Row) -> Result<()> {
    let notes = if row.notes.is_empty() { "-" } else { &row.notes };
    writeln!(
        out,
        "{},{},{},{},{:016x},{:.1},{:.9},{:.9},{},{}",
        row.experiment,
        row.sweep_param,
        row.sweep_value,
        row.rep,
        row.seed_hash,
        row.throughput_tps,
        row.p50_latency_s,
        row.p99_latency_s,
        row.merge_count,
        notes
    )?;
    Ok(())
}

/// Run every point of `spec` and stream CSV rows to `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &mut dyn Write) -> Result<()> {
    if spec.repetitions < 3 {
        bail!("experiments need at least 3 repetitions, got {}", spec.repetitions);
    }
    writeln!(out, "{CSV_HEADER}")?;
    for point in &spec.points {
        for variant in &spec.variants {
            if spec.special == Special::MergeTiming {
                run_merge_timing(spec, point, out)?;
                continue;
            }
            let map = merged_map(spec, point, variant);
            let cfg = resolve(&map).with_context(|| {
                format!("experiment {} at {}={}", spec.name, spec.sweep_param, point.label)
            })?;
            let w = cfg.engine.window_r.max(cfg.engine.window_s);
            if cfg.tuples < 4 * w {
                bail!(
                    "experiment {}: {} measured tuples cover under four windows of {w}",
                    spec.name,
                    cfg.tuples
                );
            }

            let twin = cfg.twin()?;
            let twin_arrivals = twin.arrivals(0)?;
            eprintln!(
                "[{}] {}={} {} verify w={} n={}",
                spec.name,
                spec.sweep_param,
                point.label,
                variant.note,
                twin.engine.window_r,
                twin_arrivals.len()
            );
            check_against_oracle(&twin, spec.executor, &twin_arrivals).with_context(|| {
                format!(
                    "verification failed for {} at {}={}",
                    spec.name, spec.sweep_param, point.label
                )
            })?;

            for rep in 0..spec.repetitions {
                let arrivals = cfg.arrivals(rep)?;
                let seed_hash = workload_hash(&arrivals);
                let output = spec.executor.run(&cfg.engine, &arrivals);
                let stats = &output.stats;
                let mut notes: Vec<String> = Vec::new();
                if !variant.note.is_empty() {
                    notes.push(variant.note.clone());
                }
                if spec.executor == Executor::Reference {
                    notes.push("reference".to_string());
                }
                if let Some(h) = histogram_notes(stats) {
                    notes.push(h);
                }
                if stats.blocking_fallbacks > 0 {
                    notes.push(format!("fallbacks={}", stats.blocking_fallbacks));
                }
                write_row(
                    out,
                    &Row {
                        experiment: &spec.name,
                        sweep_param: &spec.sweep_param,
                        sweep_value: &point.label,
                        rep,
                        seed_hash,
                        throughput_tps: stats.measured_throughput_tps(),
                        p50_latency_s: stats.latency_ns(0.5).unwrap_or(0) as f64 / 1e9,
                        p99_latency_s: stats.latency_ns(0.99).unwrap_or(0) as f64 / 1e9,
                        merge_count: stats.merge_count,
                        notes: notes.join(" "),
                    },
                )?;
                eprintln!(
                    "[{}] {}={} rep {} -> {:.0} tuples/s",
                    spec.name,
                    spec.sweep_param,
                    point.label,
                    rep,
                    stats.measured_throughput_tps()
                );
            }
        }
    }
    Ok(())
}

/// Time one archive merge over `elements` entries: half live in the archive,
/// half are staged, and the measured step folds both into a fresh archive.
fn run_merge_timing(spec: &ExperimentSpec, point: &SweepPoint, out: &mut dyn Write) -> Result<()> {
    let elements: usize = point
        .label
        .parse()
        .with_context(|| format!("merge-timing sweep value {:?}", point.label))?;
    if elements < 2 {
        bail!("merge timing needs at least 2 elements");
    }
    for rep in 0..spec.repetitions {
        let workload = WorkloadSpec::new(
            KeyDistribution::Uniform { lo: 0, hi: 1 << 22 },
            41 + rep as u64,
            elements,
        );
        let tuples = generate_stream(&workload, Stream::R)?;
        let seed_hash = workload_hash(&tuples);
        let mut tree = MergeTree::new(elements, TreeGeometry::default());
        let half = elements / 2;
        for t in &tuples[..half] {
            tree.insert(t.key, t.seq);
        }
        tree.merge(0);
        for t in &tuples[half..] {
            tree.insert(t.key, t.seq);
        }
        let start = Instant::now();
        tree.merge(0);
        let merge_ns = start.elapsed().as_nanos() as u64;
        write_row(
            out,
            &Row {
                experiment: &spec.name,
                sweep_param: &spec.sweep_param,
                sweep_value: &point.label,
                rep,
                seed_hash,
                throughput_tps: elements as f64 / (merge_ns.max(1) as f64 / 1e9),
                p50_latency_s: 0.0,
                p99_latency_s: 0.0,
                merge_count: 1,
                notes: format!("merge_ns={merge_ns}"),
            },
        )?;
        eprintln!("[{}] elements={elements} rep {rep} -> {merge_ns} ns", spec.name);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique_and_resolvable() {
        let specs = registry();
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        for spec in &specs {
            assert!(spec.repetitions >= 3);
            for point in &spec.points {
                for variant in &spec.variants {
                    if spec.special == Special::MergeTiming {
                        point.label.parse::<usize>().unwrap();
                        continue;
                    }
                    let map = merged_map(spec, point, variant);
                    let cfg = resolve(&map).unwrap_or_else(|e| {
                        panic!("{} at {}: {e}", spec.name, point.label)
                    });
                    let w = cfg.engine.window_r.max(cfg.engine.window_s);
                    assert!(
                        cfg.tuples >= 4 * w,
                        "{} at {} measures too little",
                        spec.name,
                        point.label
                    );
                }
            }
        }
    }

    #[test]
    fn tiny_experiment_produces_schema_rows() {
        let mut spec = ExperimentSpec::new(
            "smoke",
            "",
            keymap(&[("window_size", "128"), ("tuples", "1024"), ("threads", "2")]),
            "index",
            sweep("index", &["btree", "partitioned"]),
        );
        spec.repetitions = 3;
        let mut buf = Vec::new();
        run_experiment(&spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 2 * 3);
        for row in rows {
            assert_eq!(row.split(',').count(), 10, "{row}");
        }
    }

    #[test]
    fn merge_timing_reports_element_throughput() {
        let mut spec = ExperimentSpec::new(
            "merge-smoke",
            "",
            KeyMap::new(),
            "elements",
            sweep("elements", &["4096"]),
        );
        spec.special = Special::MergeTiming;
        let mut buf = Vec::new();
        run_experiment(&spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[2], "4096");
        assert!(fields[9].starts_with("merge_ns="), "{row}");
        assert!(fields[5].parse::<f64>().unwrap() > 0.0);
    }

    #[test]
    fn skewed_runs_report_subindex_shares() {
        let spec = registry()
            .into_iter()
            .find(|s| s.name == "skew-shift")
            .unwrap();
        let map = merged_map(&spec, &spec.points[2], &spec.variants[0]);
        let cfg = resolve(&map).unwrap();
        let twin = cfg.twin().unwrap();
        let arrivals = twin.arrivals(0).unwrap();
        let out = Executor::Parallel.run(&twin.engine, &arrivals);
        let notes = histogram_notes(&out.stats).unwrap();
        assert!(notes.contains("top_share="), "{notes}");
    }
}
