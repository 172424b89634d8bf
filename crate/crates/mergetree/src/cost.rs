//! Per-tuple analytical cost model for the index organizations.
//!
//! Processing one arrival costs `C_T = C_probe + C_expire + C_insert`: search
//! the opposite index and copy out matches, remove what expired, insert the
//! new tuple. Each index organization fills in the three terms from a few
//! shared unit costs — per-level search/delete/insert work in a mutable tree
//! (`lambda_*`), per-level search work in an array tree (`lambda_archive`,
//! cheaper because levels are contiguous), the expected matches per probe
//! (`sigma`) and the per-result copy cost (`tau_copy`).
//!
//! Tree heights enter as real numbers so the model stays smooth across
//! parameter sweeps; [`CostModel`] constructors derive them from the window
//! size and node geometry, and tests pin the handbook examples.

/// Shared unit costs and workload constants.
#[derive(Clone, Copy, Debug)]
pub struct CostParams {
    /// Expected matches per probe.
    pub sigma: f64,
    /// Cost of copying one match into the result buffer.
    pub tau_copy: f64,
    /// Per-level search cost in a mutable B+-tree.
    pub lambda_search: f64,
    /// Per-level cost of a search-and-delete in a mutable B+-tree.
    pub lambda_delete: f64,
    /// Per-level insert cost in a mutable B+-tree.
    pub lambda_insert: f64,
    /// Per-level search cost in a read-only array tree.
    pub lambda_archive: f64,
    /// Total work of one merge rebuild.
    pub merge_work: f64,
    /// Merge ratio `m`: inserts between merges as a fraction of the window.
    pub merge_ratio: f64,
    /// Window size `w`.
    pub window: f64,
}

impl CostParams {
    /// Unit costs of 1, the handbook workload constants: `sigma = 2`,
    /// `tau_copy = 1`, `m = 0.5`, `w = 100`, `M = 100`.
    pub fn unit() -> Self {
        CostParams {
            sigma: 2.0,
            tau_copy: 1.0,
            lambda_search: 1.0,
            lambda_delete: 1.0,
            lambda_insert: 1.0,
            lambda_archive: 1.0,
            merge_work: 100.0,
            merge_ratio: 0.5,
            window: 100.0,
        }
    }
}

/// Height of a tree with `n` entries and the given fan-out, as a real
/// number, never below one level.
pub fn tree_height(n: f64, fan_out: f64) -> f64 {
    debug_assert!(fan_out > 1.0);
    n.max(2.0).log(fan_out).max(1.0)
}

/// One index organization's cost structure.
#[derive(Clone, Copy, Debug)]
pub enum CostModel {
    /// Raw step costs, for decomposing measurements.
    Direct { probe: f64, expire: f64, insert: f64 },
    /// Single mutable B+-tree: every step walks the full height.
    BTreeJoin { height: f64 },
    /// `L` chained runs: probes search all of them, expiry drops whole runs
    /// for free, inserts touch the small active run. The oldest run is on
    /// average half expired, inflating copied matches by `1/(2(L-1))`.
    ChainedJoin { chain_length: f64, height: f64 },
    /// `P` round-robin partitions: probes search all, expiry and insert
    /// touch exactly one smaller tree.
    RoundRobinJoin { partitions: f64, height: f64 },
    /// Two-stage merge tree: probe both stages, expiry is the merge work
    /// amortized over `m·w` inserts, inserts touch the staged tree. Expired
    /// entries linger in the archive until the merge, inflating copied
    /// matches by `m/2`.
    MergeTreeJoin { archive_height: f64, staged_height: f64 },
    /// Partitioned merge tree: like the merge tree, plus `routing_depth`
    /// archive levels to reach the right subindex on both probe and insert;
    /// the staged trees are a subindex-count smaller.
    PartitionedJoin {
        archive_height: f64,
        staged_height: f64,
        routing_depth: f64,
    },
}

impl CostModel {
    pub fn btree(params: &CostParams, fan_out: f64) -> Self {
        CostModel::BTreeJoin {
            height: tree_height(params.window, fan_out),
        }
    }

    pub fn chained(params: &CostParams, fan_out: f64, chain_length: f64) -> Self {
        debug_assert!(chain_length >= 2.0);
        let full = tree_height(params.window, fan_out);
        CostModel::ChainedJoin {
            chain_length,
            height: (full - chain_length.log(fan_out)).max(1.0),
        }
    }

    pub fn round_robin(params: &CostParams, fan_out: f64, partitions: f64) -> Self {
        debug_assert!(partitions >= 1.0);
        let full = tree_height(params.window, fan_out);
        CostModel::RoundRobinJoin {
            partitions,
            height: (full - partitions.log(fan_out)).max(1.0),
        }
    }

    pub fn merge_tree(params: &CostParams, fan_out: f64, archive_fan_out: f64) -> Self {
        CostModel::MergeTreeJoin {
            archive_height: tree_height(params.window, archive_fan_out),
            staged_height: tree_height(params.merge_ratio * params.window / 2.0, fan_out),
        }
    }

    pub fn partitioned(
        params: &CostParams,
        fan_out: f64,
        archive_fan_out: f64,
        routing_depth: f64,
    ) -> Self {
        let subindexes = archive_fan_out.powf(routing_depth);
        CostModel::PartitionedJoin {
            archive_height: tree_height(params.window, archive_fan_out),
            staged_height: tree_height(
                params.merge_ratio * params.window / (2.0 * subindexes),
                fan_out,
            ),
            routing_depth,
        }
    }

    pub fn evaluate(&self, p: &CostParams) -> CostBreakdown {
        match *self {
            CostModel::Direct {
                probe,
                expire,
                insert,
            } => CostBreakdown {
                probe,
                expire,
                insert,
            },
            CostModel::BTreeJoin { height } => CostBreakdown {
                probe: height * p.lambda_search + p.sigma * p.tau_copy,
                expire: height * p.lambda_delete,
                insert: height * p.lambda_insert,
            },
            CostModel::ChainedJoin {
                chain_length,
                height,
            } => CostBreakdown {
                probe: chain_length * height * p.lambda_search
                    + p.sigma * p.tau_copy * (1.0 + 1.0 / (2.0 * (chain_length - 1.0))),
                expire: 0.0,
                insert: height * p.lambda_insert,
            },
            CostModel::RoundRobinJoin { partitions, height } => CostBreakdown {
                probe: partitions * height * p.lambda_search + p.sigma * p.tau_copy,
                expire: height * p.lambda_delete,
                insert: height * p.lambda_insert,
            },
            CostModel::MergeTreeJoin {
                archive_height,
                staged_height,
            } => CostBreakdown {
                probe: archive_height * p.lambda_archive
                    + staged_height * p.lambda_search
                    + p.sigma * p.tau_copy * (1.0 + p.merge_ratio / 2.0),
                expire: p.merge_work / (p.merge_ratio * p.window),
                insert: staged_height * p.lambda_insert,
            },
            CostModel::PartitionedJoin {
                archive_height,
                staged_height,
                routing_depth,
            } => CostBreakdown {
                probe: archive_height * p.lambda_archive
                    + routing_depth * p.lambda_archive
                    + staged_height * p.lambda_search
                    + p.sigma * p.tau_copy * (1.0 + p.merge_ratio / 2.0),
                expire: p.merge_work / (p.merge_ratio * p.window),
                insert: routing_depth * p.lambda_archive + staged_height * p.lambda_insert,
            },
        }
    }
}

/// Cost of the three per-tuple steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub probe: f64,
    pub expire: f64,
    pub insert: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.probe + self.expire + self.insert
    }
}

/// Back out a per-level unit cost from a measured step cost and the height
/// that step walks.
pub fn calibrate_lambda(measured_step_cost: f64, height: f64) -> f64 {
    debug_assert!(height > 0.0);
    measured_step_cost / height
}

/// First `x` in the sampled grid where `f − g` changes sign, linearly
/// interpolated between grid points. `None` when one curve dominates.
pub fn first_crossover(
    xs: &[f64],
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for &x in xs {
        let d = f(x) - g(x);
        if let Some((px, pd)) = prev {
            if pd == 0.0 {
                return Some(px);
            }
            if (pd < 0.0) != (d < 0.0) {
                let t = pd / (pd - d);
                return Some(px + t * (x - px));
            }
        }
        prev = Some((x, d));
    }
    if let Some((px, pd)) = prev {
        if pd == 0.0 {
            return Some(px);
        }
    }
    None
}

/// Least-squares slope of `ln y` against `ln x`: the growth exponent of a
/// power law through the points.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2);
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        assert!(x > 0.0 && y > 0.0);
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
