//! Compression operators and the difference-compression channel.
//!
//! An operator `Q` maps a vector to a cheaper-to-send surrogate and is
//! characterized by a constant `C` with `E‖Q(x) − x‖² ≤ C‖x‖²`, and by a
//! scaling `r` and contraction `δ` with `E‖Q(x)/r − x‖² ≤ (1 − δ)‖x‖²`.
//!
//! [`CompressState`] implements the innovation channel: each agent compresses
//! the gap between its value and a slowly updated memory `H`, and neighbors
//! maintain the weighted memory `Hʷ = W·H` without ever seeing `H` itself.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::rng::{substream, Stream};

/// Operator selection and its structural parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CompressionScheme {
    /// Exact transmission at 64 bits per entry.
    Identity,
    /// Dithered ∞-norm quantization with `bits` bits per entry.
    Quantize { bits: u32 },
    /// Keep each coordinate independently with probability `k/p`.
    RandomK { k: usize },
    /// Keep the `k` largest magnitudes, lowest index first on ties.
    TopK { k: usize },
    /// `‖x‖_∞ · sign(x)`.
    NormSign,
}

impl CompressionScheme {
    pub fn name(&self) -> &'static str {
        match self {
            CompressionScheme::Identity => "identity",
            CompressionScheme::Quantize { .. } => "qnbbq",
            CompressionScheme::RandomK { .. } => "randomk",
            CompressionScheme::TopK { .. } => "topk",
            CompressionScheme::NormSign => "qnormsigned",
        }
    }

    /// Wire cost of one compressed `p`-vector.
    pub fn bits_per_vector(&self, p: usize) -> u64 {
        let p64 = p as u64;
        let index_bits = ceil_log2(p) as u64;
        match *self {
            CompressionScheme::Identity => 64 * p64,
            CompressionScheme::Quantize { bits } => (1 + bits as u64) * p64,
            CompressionScheme::RandomK { k } => (32 + index_bits) * k as u64,
            CompressionScheme::TopK { k } => (64 + index_bits) * k as u64,
            CompressionScheme::NormSign => p64 + 32,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            CompressionScheme::Quantize { bits } if bits == 0 || bits > 52 => Err(Error::invalid(
                format!("quantizer bit depth must be in 1..=52, got {bits}"),
            )),
            CompressionScheme::RandomK { k } | CompressionScheme::TopK { k } if k == 0 || k > p => {
                Err(Error::invalid(format!(
                    "{} needs 1 <= k <= p, got k = {k}, p = {p}",
                    self.name()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Closed-form constants where they are known without measurement.
    pub fn analytic_constants(&self, p: usize) -> Option<SchemeConstants> {
        match *self {
            CompressionScheme::Identity => Some(SchemeConstants {
                c: 0.0,
                r: 1.0,
                delta: 1.0,
                measured: false,
            }),
            CompressionScheme::RandomK { k } | CompressionScheme::TopK { k } => {
                let keep = k as f64 / p as f64;
                Some(SchemeConstants {
                    c: 1.0 - keep,
                    r: 1.0,
                    delta: keep,
                    measured: false,
                })
            }
            CompressionScheme::Quantize { .. } | CompressionScheme::NormSign => None,
        }
    }

    /// Whether the operator draws from the random stream.
    pub fn is_randomized(&self) -> bool {
        matches!(
            self,
            CompressionScheme::Quantize { .. } | CompressionScheme::RandomK { .. }
        )
    }
}

fn ceil_log2(p: usize) -> u32 {
    if p <= 1 {
        0
    } else {
        usize::BITS - (p - 1).leading_zeros()
    }
}

/// Constants of the operator contract: `C`, scaling `r`, contraction `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConstants {
    pub c: f64,
    pub r: f64,
    pub delta: f64,
    /// True when the values come from Monte-Carlo measurement.
    pub measured: bool,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Applies the operator to `x`, writing into `out`. Returns the bit cost.
pub fn compress_into(
    scheme: &CompressionScheme,
    x: &[f64],
    out: &mut [f64],
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "cannot compress non-finite entry at index {i}"
        )));
    }
    let p = x.len();
    scheme.validate(p)?;
    match *scheme {
        CompressionScheme::Identity => out.copy_from_slice(x),
        CompressionScheme::Quantize { bits } => {
            let norm = inf_norm(x);
            let levels = 2f64.powi(bits as i32 - 1);
            for (o, &v) in out.iter_mut().zip(x) {
                let u: f64 = rng.random();
                *o = if norm == 0.0 {
                    0.0
                } else {
                    norm / levels * sign(v) * (levels * v.abs() / norm + u).floor()
                };
            }
        }
        CompressionScheme::RandomK { k } => {
            let keep = k as f64 / p as f64;
            for (o, &v) in out.iter_mut().zip(x) {
                let u: f64 = rng.random();
                *o = if u < keep { v } else { 0.0 };
            }
        }
        CompressionScheme::TopK { k } => {
            let mut order: Vec<usize> = (0..p).collect();
            // stable sort keeps the lower index first among equal magnitudes
            order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
            out.fill(0.0);
            for &i in &order[..k] {
                out[i] = x[i];
            }
        }
        CompressionScheme::NormSign => {
            let norm = inf_norm(x);
            for (o, &v) in out.iter_mut().zip(x) {
                *o = norm * sign(v);
            }
        }
    }
    Ok(scheme.bits_per_vector(p))
}

/// Applies the operator to `x`. Returns the compressed vector and its bit cost.
pub fn compress_vector(
    scheme: &CompressionScheme,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, u64)> {
    let mut out = vec![0.0; x.len()];
    let bits = compress_into(scheme, x, &mut out, rng)?;
    Ok((out, bits))
}

/// First and second moments of `Q(x)` against `x`, estimated over `draws`.
#[derive(Debug, Clone, Copy)]
struct Moments {
    /// `‖x‖²`
    norm_sq: f64,
    /// `E⟨Q(x), x⟩`
    inner: f64,
    /// `E‖Q(x)‖²`
    second: f64,
}

impl Moments {
    /// `E‖Q(x)/r − x‖² / ‖x‖²`
    fn scaled_ratio(&self, r: f64) -> f64 {
        (self.second / (r * r) - 2.0 * self.inner / r + self.norm_sq) / self.norm_sq
    }
}

fn estimate_moments(
    scheme: &CompressionScheme,
    x: &[f64],
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Moments> {
    let draws = if scheme.is_randomized() { draws.max(1) } else { 1 };
    let mut q = vec![0.0; x.len()];
    let (mut inner, mut second) = (0.0, 0.0);
    for _ in 0..draws {
        compress_into(scheme, x, &mut q, rng)?;
        inner += q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        second += q.iter().map(|a| a * a).sum::<f64>();
    }
    Ok(Moments {
        norm_sq: x.iter().map(|v| v * v).sum(),
        inner: inner / draws as f64,
        second: second / draws as f64,
    })
}

fn sample_moments(
    scheme: &CompressionScheme,
    samples: &[Vec<f64>],
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Moments>> {
    samples
        .iter()
        .map(|x| {
            if x.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid("contract samples must be nonzero"));
            }
            estimate_moments(scheme, x, draws, rng)
        })
        .collect()
}

/// Largest empirical `E‖Q(x) − x‖² / ‖x‖²` over the samples.
pub fn verify_contract(
    scheme: &CompressionScheme,
    samples: &[Vec<f64>],
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    Ok(sample_moments(scheme, samples, draws, rng)?
        .iter()
        .map(|m| m.scaled_ratio(1.0))
        .fold(0.0, f64::max))
}

/// Largest empirical `E‖Q(x)/r − x‖² / ‖x‖²`, i.e. the measured `1 − δ`.
pub fn verify_scaled_contract(
    scheme: &CompressionScheme,
    r: f64,
    samples: &[Vec<f64>],
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    Ok(sample_moments(scheme, samples, draws, rng)?
        .iter()
        .map(|m| m.scaled_ratio(r))
        .fold(0.0, f64::max))
}

/// Smallest admissible contraction factor.
pub const DELTA_FLOOR: f64 = 0.01;

/// Measures `C`, picks the scaling `r` minimizing the worst-case scaled error
/// over the samples, and reports `δ = 1 − (that error)` floored at
/// [`DELTA_FLOOR`].
pub fn calibrate_constants(
    scheme: &CompressionScheme,
    samples: &[Vec<f64>],
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SchemeConstants> {
    let moments = sample_moments(scheme, samples, draws, rng)?;
    let worst = |r: f64| {
        moments
            .iter()
            .map(|m| m.scaled_ratio(r))
            .fold(0.0, f64::max)
    };
    let c = worst(1.0);
    // max of quadratics in s = 1/r is convex, so ternary search on s is exact
    let (mut lo, mut hi) = (1e-3_f64, 2.0_f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if worst(1.0 / m1) <= worst(1.0 / m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let r = 2.0 / (lo + hi);
    let delta = (1.0 - worst(r)).clamp(DELTA_FLOOR, 1.0);
    Ok(SchemeConstants {
        c,
        r,
        delta,
        measured: true,
    })
}

/// Probe vectors for contract measurement: the all-ones vector (the worst
/// case for magnitude-based sparsifiers) followed by standard Gaussian draws.
pub fn contract_samples(p: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = substream(seed, Stream::Aux(6), 0);
    let mut out = vec![vec![1.0; p]];
    out.extend((1..count).map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect()));
    out
}

/// Closed-form constants when known, otherwise measured on
/// [`contract_samples`].
pub fn scheme_constants(
    scheme: &CompressionScheme,
    p: usize,
    samples: usize,
    draws: usize,
    seed: u64,
) -> Result<SchemeConstants> {
    scheme.validate(p)?;
    if let Some(c) = scheme.analytic_constants(p) {
        return Ok(c);
    }
    let probes = contract_samples(p, samples.max(1), seed);
    calibrate_constants(scheme, &probes, draws, &mut substream(seed, Stream::Aux(7), 0))
}

/// Memory of one compressed channel across all agents.
#[derive(Debug, Clone)]
pub struct CompressState {
    h: DMatrix<f64>,
    hw: DMatrix<f64>,
    alpha: f64,
}

/// Outputs of one pass through the channel.
#[derive(Debug, Clone)]
pub struct CompressedRound {
    /// Local estimate `Ẑ = Q + H`.
    pub estimate: DMatrix<f64>,
    /// Neighbor-weighted estimate `Ẑʷ = Hʷ + W·Q`.
    pub weighted: DMatrix<f64>,
    /// Transmitted innovation `Q = C(Z − H)`.
    pub innovation: DMatrix<f64>,
    pub bits: u64,
}

impl CompressState {
    /// Starts the channel from memory `h0`, with `Hʷ = W·h0`.
    pub fn new(h0: DMatrix<f64>, network: &Network, alpha: f64) -> Result<Self> {
        if h0.nrows() != network.n() {
            return Err(Error::DimensionMismatch {
                context: "compression memory rows",
                expected: network.n().to_string(),
                actual: h0.nrows().to_string(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "memory step alpha must be positive, got {alpha}"
            )));
        }
        let hw = network.mix(&h0);
        Ok(CompressState { h: h0, hw, alpha })
    }

    pub fn memory(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn weighted_memory(&self) -> &DMatrix<f64> {
        &self.hw
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Runs one encode / communicate / memory-update pass on `z`.
    ///
    /// `rngs` holds one stream per agent; row `i` of the innovation is drawn
    /// from `rngs[i]` only.
    pub fn compress_round(
        &mut self,
        z: &DMatrix<f64>,
        scheme: &CompressionScheme,
        network: &Network,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<CompressedRound> {
        let (n, p) = self.h.shape();
        if z.shape() != (n, p) {
            return Err(Error::DimensionMismatch {
                context: "compress_round input",
                expected: format!("{n}x{p}"),
                actual: format!("{}x{}", z.nrows(), z.ncols()),
            });
        }
        if rngs.len() != n {
            return Err(Error::DimensionMismatch {
                context: "compress_round streams",
                expected: n.to_string(),
                actual: rngs.len().to_string(),
            });
        }
        let diff = z - &self.h;
        if !diff.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                t: 0,
                quantity: "compression innovation",
            });
        }
        let mut q = DMatrix::<f64>::zeros(n, p);
        let mut row = vec![0.0; p];
        let mut out = vec![0.0; p];
        let mut bits = 0;
        for (i, rng) in rngs.iter_mut().enumerate() {
            for j in 0..p {
                row[j] = diff[(i, j)];
            }
            bits += compress_into(scheme, &row, &mut out, rng)?;
            for j in 0..p {
                q[(i, j)] = out[j];
            }
        }
        let estimate = &q + &self.h;
        let weighted = &self.hw + network.mix(&q);
        let a = self.alpha;
        self.h = &self.h * (1.0 - a) + &estimate * a;
        self.hw = &self.hw * (1.0 - a) + &weighted * a;
        Ok(CompressedRound {
            estimate,
            weighted,
            innovation: q,
            bits,
        })
    }
}
