//! Deterministic workload generation and band-width calibration.
//!
//! Keys live in the integer domain `[0, domain_width]`. Continuous
//! distributions draw in their natural units and are quantized by scaling
//! `unit_span` onto the domain and rounding; draws outside the domain clamp
//! to its bounds. Clamping matters for drifting workloads: once a shifting
//! mean wanders past the domain edge, the overflow mass piles up on the
//! boundary key exactly like a saturating sensor would.
//!
//! Everything is seeded: the same [`WorkloadSpec`] always yields the same
//! key sequence, byte for byte, which the benchmark harness relies on to
//! fingerprint runs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};

use crate::types::{Stream, Tuple};

/// Default integer key domain width (keys in `[0, 1 << 22]`).
pub const DEFAULT_DOMAIN_WIDTH: i64 = 1 << 22;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),
    #[error("target match rate {sigma} exceeds window size {w}")]
    UnreachableMatchRate { sigma: f64, w: usize },
}

/// Key distribution of one stream.
#[derive(Clone, Debug, PartialEq)]
pub enum KeyDistribution {
    /// Integers drawn uniformly from `[lo, hi]`, no quantization.
    Uniform { lo: i64, hi: i64 },
    Gaussian { mean: f64, std_dev: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Gaussian whose mean shifts linearly by `shift` during the middle
    /// phase: `phases` are the lengths of the stationary, shifting and
    /// settled segments. Draw `i` in the middle phase uses mean
    /// `mean + shift * (i - phases[0] + 1) / phases[1]`.
    ShiftingGaussian {
        mean: f64,
        std_dev: f64,
        shift: f64,
        phases: [usize; 3],
    },
}

impl KeyDistribution {
    fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |msg: &str| Err(WorkloadError::InvalidParameter(msg.to_string()));
        match *self {
            KeyDistribution::Uniform { lo, hi } => {
                if lo > hi {
                    return bad("uniform bounds inverted");
                }
            }
            KeyDistribution::Gaussian { std_dev, .. } => {
                if !(std_dev > 0.0) {
                    return bad("gaussian std_dev must be > 0");
                }
            }
            KeyDistribution::Gamma { shape, scale } => {
                if !(shape > 0.0) || !(scale > 0.0) {
                    return bad("gamma shape and scale must be > 0");
                }
            }
            KeyDistribution::ShiftingGaussian { std_dev, phases, .. } => {
                if !(std_dev > 0.0) {
                    return bad("gaussian std_dev must be > 0");
                }
                if phases.iter().any(|&p| p == 0) {
                    return bad("all three phase lengths must be > 0");
                }
            }
        }
        Ok(())
    }

    /// Natural span of the continuous draw mapped onto the key domain.
    fn default_unit_span(&self) -> f64 {
        match *self {
            KeyDistribution::Uniform { .. } | KeyDistribution::Gaussian { .. } => 1.0,
            // mean + 4 sigma covers all but ~3e-5 of the mass
            KeyDistribution::Gamma { shape, scale } => {
                shape * scale + 4.0 * scale * shape.sqrt()
            }
            KeyDistribution::ShiftingGaussian { .. } => 1.0,
        }
    }
}

/// A reproducible key stream.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub distribution: KeyDistribution,
    /// Keys land in `[0, domain_width]`.
    pub domain_width: i64,
    /// Continuous span scaled onto the domain; `None` picks a distribution
    /// default (1.0 for (shifting) Gaussians, mean + 4 sigma for Gamma).
    pub unit_span: Option<f64>,
    pub seed: u64,
    pub len: usize,
}

impl WorkloadSpec {
    pub fn new(distribution: KeyDistribution, seed: u64, len: usize) -> Self {
        WorkloadSpec {
            distribution,
            domain_width: DEFAULT_DOMAIN_WIDTH,
            unit_span: None,
            seed,
            len,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.distribution.validate()?;
        if self.domain_width < 1 {
            return Err(WorkloadError::InvalidParameter(
                "domain width must be >= 1".into(),
            ));
        }
        if let Some(span) = self.unit_span {
            if !(span > 0.0) {
                return Err(WorkloadError::InvalidParameter(
                    "unit span must be > 0".into(),
                ));
            }
        }
        Ok(())
    }

    fn quantize(&self, x: f64) -> i64 {
        let span = self
            .unit_span
            .unwrap_or_else(|| self.distribution.default_unit_span());
        let scaled = (x / span * self.domain_width as f64).round();
        (scaled as i64).clamp(0, self.domain_width)
    }
}

/// Generate the key sequence for `spec`.
pub fn generate_keys(spec: &WorkloadSpec) -> Result<Vec<i64>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut keys = Vec::with_capacity(spec.len);
    match spec.distribution {
        KeyDistribution::Uniform { lo, hi } => {
            let d = Uniform::new_inclusive(lo, hi);
            keys.extend((0..spec.len).map(|_| d.sample(&mut rng)));
        }
        KeyDistribution::Gaussian { mean, std_dev } => {
            let d = Normal::new(mean, std_dev).expect("validated");
            keys.extend((0..spec.len).map(|_| spec.quantize(d.sample(&mut rng))));
        }
        KeyDistribution::Gamma { shape, scale } => {
            let d = Gamma::new(shape, scale).expect("validated");
            keys.extend((0..spec.len).map(|_| spec.quantize(d.sample(&mut rng))));
        }
        KeyDistribution::ShiftingGaussian {
            mean,
            std_dev,
            shift,
            phases,
        } => {
            let unit = Normal::new(0.0, std_dev).expect("validated");
            for i in 0..spec.len {
                let m = if i < phases[0] {
                    mean
                } else if i < phases[0] + phases[1] {
                    mean + shift * (i - phases[0] + 1) as f64 / phases[1] as f64
                } else {
                    mean + shift
                };
                keys.push(spec.quantize(m + unit.sample(&mut rng)));
            }
        }
    }
    Ok(keys)
}

/// Generate `spec.len` tuples of `stream` with sequence numbers `0..len`.
pub fn generate_stream(spec: &WorkloadSpec, stream: Stream) -> Result<Vec<Tuple>, WorkloadError> {
    let keys = generate_keys(spec)?;
    Ok(keys
        .into_iter()
        .enumerate()
        .map(|(i, key)| Tuple {
            stream,
            seq: i as u64,
            key,
        })
        .collect())
}

/// Merge two streams into one arrival order, `r_rate : s_rate` tuples at a
/// time, draining whichever stream remains.
pub fn interleave(r: &[Tuple], s: &[Tuple], r_rate: usize, s_rate: usize) -> Vec<Tuple> {
    assert!(r_rate >= 1 && s_rate >= 1, "rates must be positive");
    let mut out = Vec::with_capacity(r.len() + s.len());
    let (mut i, mut j) = (0, 0);
    while i < r.len() || j < s.len() {
        for _ in 0..r_rate {
            if i < r.len() {
                out.push(r[i]);
                i += 1;
            }
        }
        for _ in 0..s_rate {
            if j < s.len() {
                out.push(s[j]);
                j += 1;
            }
        }
    }
    out
}

/// Smallest band half-width such that a probe against a `w`-tuple window of
/// uniform keys over `[0, domain_width]` expects at least `sigma` matches:
/// the least `diff >= 0` with `w * (2*diff + 1) / (domain_width + 1) >= sigma`.
pub fn calibrate_diff(w: usize, domain_width: i64, sigma: f64) -> Result<i64, WorkloadError> {
    if !(sigma > 0.0) {
        return Err(WorkloadError::InvalidParameter(
            "target match rate must be > 0".into(),
        ));
    }
    if sigma > w as f64 {
        return Err(WorkloadError::UnreachableMatchRate { sigma, w });
    }
    let values = (domain_width + 1) as f64;
    let needed = sigma * values / w as f64; // required 2*diff + 1
    let diff = ((needed - 1.0) / 2.0).ceil() as i64;
    Ok(diff.max(0))
}

/// Empirical counterpart of [`calibrate_diff`] for skewed distributions:
/// estimates the pairwise match probability from a sample of the key stream
/// and binary-searches the smallest `diff` with `w * P(|a-b| <= diff) >= sigma`.
pub fn calibrate_diff_empirical(
    sample: &[i64],
    w: usize,
    sigma: f64,
) -> Result<i64, WorkloadError> {
    if !(sigma > 0.0) {
        return Err(WorkloadError::InvalidParameter(
            "target match rate must be > 0".into(),
        ));
    }
    if sigma > w as f64 {
        return Err(WorkloadError::UnreachableMatchRate { sigma, w });
    }
    assert!(sample.len() >= 2, "need a sample to calibrate against");
    let mut sorted = sample.to_vec();
    sorted.sort_unstable();

    // expected matches of a random probe against w draws, for a given diff
    let expected = |diff: i64| -> f64 {
        let mut within: u64 = 0;
        let mut lo = 0usize;
        let mut hi = 0usize;
        for (i, &k) in sorted.iter().enumerate() {
            while lo < sorted.len() && sorted[lo] < k.saturating_sub(diff) {
                lo += 1;
            }
            while hi < sorted.len() && sorted[hi] <= k.saturating_add(diff) {
                hi += 1;
            }
            within += (hi - lo - 1) as u64; // exclude the probe itself
            let _ = i;
        }
        let n = sorted.len() as f64;
        w as f64 * within as f64 / (n * (n - 1.0))
    };

    let (mut lo, mut hi) = (0i64, 1i64);
    while expected(hi) < sigma {
        hi = hi.saturating_mul(2);
        if hi >= i64::MAX / 2 {
            return Err(WorkloadError::UnreachableMatchRate { sigma, w });
        }
    }
    if expected(0) >= sigma {
        return Ok(0);
    }
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if expected(mid) >= sigma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
