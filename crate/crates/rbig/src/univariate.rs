//! Per-dimension building blocks: empirical CDFs, marginal Gaussianization
//! maps, histogram entropy, and marginal negentropy.
//!
//! The marginal map is the workhorse of every flow layer: a rank-based
//! piecewise-linear CDF composed with the standard-normal quantile. It is
//! strictly monotone on its padded support, exactly invertible there, and
//! carries a piecewise-constant density (the CDF segment slopes) so the
//! log-derivative is consistent with the transform itself.

use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};

/// Default CDF clamp: empirical CDF values live in [eps, 1 - eps].
pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-6;
/// Support padding per side, as a fraction of the sample range.
pub const TAIL_PADDING_FRACTION: f64 = 0.1;
/// Hard cap on quantile knots per fitted marginal.
pub const MAX_KNOTS: usize = 1000;
/// Histogram bin cap for the default bin policy.
pub const MAX_BINS: usize = 1000;

/// Default quantile-knot budget: `ceil(sqrt(N))` clamped to `[16, 1000]`.
///
/// Matching the histogram-bin growth law keeps two error sources balanced:
/// segments stay narrower than a histogram bin (so repeated Gaussianization
/// does not accumulate visible interpolation distortion), while the count of
/// segments stays small enough that the in-sample log-slope bias, which
/// grows as `knots / (2N)` per marginal stage, stays below the per-layer
/// noise floor.
pub fn default_n_knots(n_samples: usize) -> usize {
    n_samples.min(((n_samples as f64).sqrt().ceil() as usize).clamp(16, MAX_KNOTS))
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Log of the standard normal density.
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// Standard normal quantile, polished with one Newton step so that
/// cdf(quantile(p)) recovers p to near machine precision.
pub fn std_normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    let z = SQRT_2 * erf::erf_inv(2.0 * p - 1.0);
    let pdf = std_normal_pdf(z);
    if pdf > 0.0 {
        z - (std_normal_cdf(z) - p) / pdf
    } else {
        z
    }
}

/// Rank-based piecewise-linear CDF on a padded support.
///
/// Knots are strictly increasing in both coordinates; values are clamped to
/// `[eps, 1 - eps]` and the support is extended by `tail_extension` per side
/// so out-of-sample points still map to finite quantile levels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted_support: Vec<f64>,
    cdf_values: Vec<f64>,
    tail_extension: f64,
}

impl EmpiricalCdf {
    pub fn support(&self) -> (f64, f64) {
        (
            self.sorted_support[0],
            *self.sorted_support.last().unwrap(),
        )
    }

    pub fn tail_extension(&self) -> f64 {
        self.tail_extension
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.sorted_support, &self.cdf_values)
    }

    pub(crate) fn from_knots(
        sorted_support: Vec<f64>,
        cdf_values: Vec<f64>,
        tail_extension: f64,
    ) -> Result<Self> {
        let k = sorted_support.len();
        let ok = k >= 2
            && cdf_values.len() == k
            && tail_extension > 0.0
            && sorted_support.windows(2).all(|w| w[0] < w[1])
            && cdf_values.windows(2).all(|w| w[0] < w[1])
            && cdf_values[0] > 0.0
            && cdf_values[k - 1] < 1.0;
        if !ok {
            return Err(Error::CorruptModel("invalid CDF knots".into()));
        }
        Ok(Self {
            sorted_support,
            cdf_values,
            tail_extension,
        })
    }

    /// Index of the segment [i, i+1] bracketing `v` (clamped to valid range).
    fn segment(&self, v: f64) -> usize {
        let k = self.sorted_support.len();
        let upper = self.sorted_support.partition_point(|&s| s <= v);
        upper.clamp(1, k - 1) - 1
    }

    /// Piecewise-linear CDF value, clamped outside the padded support.
    pub fn evaluate(&self, v: f64) -> f64 {
        let k = self.sorted_support.len();
        if v <= self.sorted_support[0] {
            return self.cdf_values[0];
        }
        if v >= self.sorted_support[k - 1] {
            return self.cdf_values[k - 1];
        }
        let i = self.segment(v);
        let (x0, x1) = (self.sorted_support[i], self.sorted_support[i + 1]);
        let (y0, y1) = (self.cdf_values[i], self.cdf_values[i + 1]);
        y0 + (v - x0) / (x1 - x0) * (y1 - y0)
    }

    /// Inverse of [`EmpiricalCdf::evaluate`]; levels outside the clamp range
    /// map to the padded support endpoints.
    pub fn quantile(&self, p: f64) -> f64 {
        let k = self.cdf_values.len();
        if p <= self.cdf_values[0] {
            return self.sorted_support[0];
        }
        if p >= self.cdf_values[k - 1] {
            return self.sorted_support[k - 1];
        }
        let upper = self.cdf_values.partition_point(|&c| c <= p);
        let i = upper.clamp(1, k - 1) - 1;
        let (x0, x1) = (self.sorted_support[i], self.sorted_support[i + 1]);
        let (y0, y1) = (self.cdf_values[i], self.cdf_values[i + 1]);
        x0 + (p - y0) / (y1 - y0) * (x1 - x0)
    }

    /// Slope of the local CDF segment; beyond the padded support the nearest
    /// boundary segment's slope is used so the value stays finite and positive.
    pub fn slope(&self, v: f64) -> f64 {
        let i = self.segment(v);
        let dx = self.sorted_support[i + 1] - self.sorted_support[i];
        let dy = self.cdf_values[i + 1] - self.cdf_values[i];
        dy / dx
    }
}

/// Fit a rank-based piecewise-linear CDF.
///
/// Knot levels are equally spaced in the Gaussian-quantile domain (a uniform
/// grid on `Phi^-1(p)` between the extreme mid-rank levels) and knot support
/// values are the matching sample quantiles; two extra knots pad the support
/// by 10% of the range per side at levels `eps` and `1 - eps`.
///
/// Spacing knots uniformly in z rather than in p keeps every segment's image
/// narrow even in the tails, which is what lets repeated Gaussianization
/// layers stay on the estimator noise floor instead of accumulating
/// interpolation distortion.
pub fn fit_empirical_cdf(
    samples: &[f64],
    n_knots: usize,
    clamp_epsilon: f64,
) -> Result<EmpiricalCdf> {
    assert!(n_knots >= 8, "need at least 8 knots, got {n_knots}");
    assert!(
        clamp_epsilon > 0.0 && clamp_epsilon < 0.01,
        "clamp epsilon must be in (0, 0.01)"
    );
    let n = samples.len();
    assert!(n >= 2, "need at least 2 samples");

    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if lo == hi {
        return Err(Error::DegenerateDimension {
            column: 0,
            layer: None,
        });
    }

    // Sample quantile at level p, interpolating mid-rank plotting positions
    // (order statistic i carries level (i + 0.5) / n).
    let quantile = |p: f64| -> f64 {
        let h = p * n as f64 - 0.5;
        if h <= 0.0 {
            return sorted[0];
        }
        if h >= (n - 1) as f64 {
            return sorted[n - 1];
        }
        let i = h.floor() as usize;
        sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
    };

    let eps = clamp_epsilon;
    let p_lo = (0.5 / n as f64).max(eps);
    let p_hi = (1.0 - 0.5 / n as f64).min(1.0 - eps);
    let z_lo = std_normal_quantile(p_lo);
    let z_hi = std_normal_quantile(p_hi);

    let m = n_knots.min(n.max(8));
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(m + 2);
    for j in 0..m {
        let z = z_lo + (z_hi - z_lo) * j as f64 / (m - 1) as f64;
        let p = std_normal_cdf(z).clamp(p_lo, p_hi);
        let v = quantile(p);
        match knots.last_mut() {
            // merge ties: a repeated quantile keeps the mean of its levels
            Some(last) if last.0 == v => last.1 = 0.5 * (last.1 + p),
            _ => knots.push((v, p)),
        }
    }

    let tail_extension = TAIL_PADDING_FRACTION * (hi - lo);
    let mut support = Vec::with_capacity(knots.len() + 2);
    let mut levels = Vec::with_capacity(knots.len() + 2);
    support.push(lo - tail_extension);
    levels.push(eps);
    for (value, level) in knots {
        if level > *levels.last().unwrap() && level < 1.0 - eps && value > *support.last().unwrap()
        {
            support.push(value);
            levels.push(level);
        }
    }
    support.push(hi + tail_extension);
    levels.push(1.0 - eps);

    EmpiricalCdf::from_knots(support, levels, tail_extension)
        .map_err(|_| Error::DegenerateDimension { column: 0, layer: None })
}

/// Target of a marginal map: the standard-normal quantile (Gaussianization)
/// or the identity on CDF levels (uniformization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginalTarget {
    GaussianQuantile,
    Identity,
}

/// A strictly monotone per-dimension map with exact inverse and
/// log-derivative: `Phi^-1(F(x))` for Gaussianization, `F(x)` for
/// uniformization.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMap {
    cdf: EmpiricalCdf,
    target: MarginalTarget,
    clamp_epsilon: f64,
}

impl MarginalMap {
    pub fn cdf(&self) -> &EmpiricalCdf {
        &self.cdf
    }

    pub fn target(&self) -> MarginalTarget {
        self.target
    }

    pub fn clamp_epsilon(&self) -> f64 {
        self.clamp_epsilon
    }

    pub(crate) fn from_parts(
        cdf: EmpiricalCdf,
        target: MarginalTarget,
        clamp_epsilon: f64,
    ) -> Self {
        Self {
            cdf,
            target,
            clamp_epsilon,
        }
    }

    /// Forward map.
    pub fn apply(&self, v: f64) -> f64 {
        let p = self.cdf.evaluate(v);
        match self.target {
            MarginalTarget::GaussianQuantile => std_normal_quantile(p),
            MarginalTarget::Identity => p,
        }
    }

    /// Exact inverse of [`MarginalMap::apply`]. Any finite input is accepted;
    /// levels beyond the clamp range land on the padded support endpoints.
    pub fn invert(&self, value: f64) -> f64 {
        let p = match self.target {
            MarginalTarget::GaussianQuantile => std_normal_cdf(value),
            MarginalTarget::Identity => value,
        };
        self.cdf.quantile(p)
    }

    /// `log |d apply / dv|`, finite everywhere (boundary segment slopes
    /// extend beyond the padded support).
    pub fn log_abs_derivative(&self, v: f64) -> f64 {
        self.apply_with_log_derivative(v).1
    }

    /// Forward value and log-derivative in one evaluation (shared CDF lookup).
    pub fn apply_with_log_derivative(&self, v: f64) -> (f64, f64) {
        let p = self.cdf.evaluate(v);
        let log_slope = self.cdf.slope(v).ln();
        match self.target {
            MarginalTarget::GaussianQuantile => {
                let z = std_normal_quantile(p);
                (z, log_slope - std_normal_log_pdf(z))
            }
            MarginalTarget::Identity => (p, log_slope),
        }
    }
}

/// Fit a marginal map on one dimension's samples.
pub fn fit_marginal(
    samples: &[f64],
    n_knots: usize,
    clamp_epsilon: f64,
    target: MarginalTarget,
) -> Result<MarginalMap> {
    let cdf = fit_empirical_cdf(samples, n_knots, clamp_epsilon)?;
    Ok(MarginalMap {
        cdf,
        target,
        clamp_epsilon,
    })
}

/// Small-sample bias correction for the histogram entropy estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasCorrection {
    None,
    MillerMadow,
}

/// Differential entropy estimate in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub n_samples: usize,
    pub n_bins: usize,
    pub correction: BiasCorrection,
}

/// Default bin count: `ceil(sqrt(N))` capped at [`MAX_BINS`].
pub fn default_n_bins(n_samples: usize) -> usize {
    ((n_samples as f64).sqrt().ceil() as usize).min(MAX_BINS)
}

/// Histogram estimate of differential entropy in nats:
/// `sum(-p ln p) + ln(bin_width)`, plus `(m - 1) / (2N)` under Miller-Madow
/// where `m` counts occupied bins.
pub fn entropy_hist(
    samples: &[f64],
    n_bins: usize,
    correction: BiasCorrection,
) -> Result<EntropyEstimate> {
    let n = samples.len();
    assert!(n >= 32, "need at least 32 samples, got {n}");
    assert!(n_bins >= 4, "need at least 4 bins, got {n_bins}");

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in samples {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::DegenerateDimension {
            column: 0,
            layer: None,
        });
    }

    let mut counts = vec![0usize; n_bins];
    let scale = n_bins as f64 / range;
    for &v in samples {
        let k = (((v - lo) * scale) as usize).min(n_bins - 1);
        counts[k] += 1;
    }

    let n_f = n as f64;
    let mut discrete = 0.0;
    let mut occupied = 0usize;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n_f;
            discrete -= p * p.ln();
            occupied += 1;
        }
    }
    let mut value = discrete + (range / n_bins as f64).ln();
    if correction == BiasCorrection::MillerMadow {
        value += (occupied.saturating_sub(1)) as f64 / (2.0 * n_f);
    }
    Ok(EntropyEstimate {
        value,
        n_samples: n,
        n_bins,
        correction,
    })
}

/// Marginal negentropy against the moment-matched Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegentropyEstimate {
    /// Reported value, clamped at zero.
    pub value: f64,
    /// Raw estimate; may dip slightly negative from estimator noise.
    pub raw: f64,
}

/// `J_m = 0.5 ln(2 pi e sigma^2) - H(samples)`: the KLD of the marginal to
/// the Gaussian with matching moments. Zero iff the marginal is Gaussian.
pub fn marginal_negentropy(samples: &[f64], n_bins: usize) -> Result<NegentropyEstimate> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::DegenerateDimension {
            column: 0,
            layer: None,
        });
    }
    let h = entropy_hist(samples, n_bins, BiasCorrection::MillerMadow)?.value;
    let raw = 0.5 * (LN_2PI + 1.0 + var.ln()) - h;
    Ok(NegentropyEstimate {
        value: raw.max(0.0),
        raw,
    })
}

/// KLD of the empirical marginal to the standard normal N(0,1):
/// `0.5 ln(2 pi) + 0.5 E[x^2] - H(samples)`.
///
/// Unlike [`marginal_negentropy`] this also charges first/second-moment
/// mismatch, which is exactly the quantity a Gaussianization layer removes.
pub fn standard_normal_kld(samples: &[f64], n_bins: usize) -> Result<f64> {
    let n = samples.len() as f64;
    let second_moment = samples.iter().map(|&v| v * v).sum::<f64>() / n;
    let h = entropy_hist(samples, n_bins, BiasCorrection::MillerMadow)?.value;
    Ok(0.5 * LN_2PI + 0.5 * second_moment - h)
}
