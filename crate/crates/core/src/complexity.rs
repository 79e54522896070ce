//! Overlap-based disaggregation complexity.
//!
//! Every aggregated power value is modelled as a normal density of width
//! `sigma`, truncated to `[0, P_M]`. The complexity of a value is the summed
//! overlapping coefficient between its density and the densities of all M
//! aggregated values (itself included), so an unambiguous interior value
//! scores 1, a value shared by two combinations scores 2 and the boundary
//! values 0 W and P_M score 0.5.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AggregatedValueSet, ComplexitySpectrum, Power, SpectrumEntry, Summary};

/// Default density width in watts when none is given.
pub const DEFAULT_SIGMA: f64 = 5.0;

/// Pairs further apart than this many sigmas are skipped. The overlap at
/// 15 sigma is below 1e-13.
pub const PRUNE_SIGMAS: f64 = 15.0;

/// Both means must sit this many sigmas inside the domain for the
/// untruncated erfc expression to be used.
pub const INTERIOR_SIGMAS: f64 = 6.0;

// Samples in a histogram mode below this count are treated as noise.
const MIN_MODE_SAMPLES: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ComplexityError {
    #[error("sigma must be finite and > 0, got {0}")]
    InvalidSigma(f64),
    #[error("domain maximum must be finite and > 0, got {0}")]
    InvalidDomain(f64),
    #[error("integration step must be finite and > 0, got {0}")]
    InvalidStep(f64),
    #[error("numeric mode needs step <= sigma/10 ({max}), got {step}")]
    StepTooCoarse { step: f64, max: f64 },
    #[error("kernel domain {kernel} W does not match the value set's P_M {p_max} W")]
    DomainMismatch { kernel: f64, p_max: f64 },
    #[error("aggregated value set is empty")]
    EmptyValues,
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("histogram bin width must be > 0, got {0}")]
    InvalidBin(f64),
    #[error("no histogram mode above the {0} W floor")]
    EmptyHistogram(f64),
}

/// How the overlapping coefficient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Closed form: erfc for interior pairs, normal-CDF differences where the
    /// truncation at 0 or P_M matters.
    Analytic,
    /// Trapezoidal integration of `min(f1, f2)` on the truncated domain.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapKernel {
    sigma: f64,
    domain_max: f64,
    step: f64,
    mode: OverlapMode,
}

impl OverlapKernel {
    /// Analytic kernel on `[0, domain_max]`; the grid step defaults to sigma/100.
    pub fn new(sigma: f64, domain_max: f64) -> Result<Self, ComplexityError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ComplexityError::InvalidSigma(sigma));
        }
        if !(domain_max.is_finite() && domain_max > 0.0) {
            return Err(ComplexityError::InvalidDomain(domain_max));
        }
        Ok(OverlapKernel {
            sigma,
            domain_max,
            step: sigma / 100.0,
            mode: OverlapMode::Analytic,
        })
    }

    /// Kernel whose domain is the value set's P_M.
    pub fn for_values(sigma: f64, values: &AggregatedValueSet) -> Result<Self, ComplexityError> {
        Self::new(sigma, values.p_max().watts())
    }

    pub fn with_mode(mut self, mode: OverlapMode) -> Result<Self, ComplexityError> {
        self.mode = mode;
        self.check_step()?;
        Ok(self)
    }

    pub fn with_step(mut self, step: f64) -> Result<Self, ComplexityError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(ComplexityError::InvalidStep(step));
        }
        self.step = step;
        self.check_step()?;
        Ok(self)
    }

    fn check_step(&self) -> Result<(), ComplexityError> {
        let max = self.sigma / 10.0;
        if self.mode == OverlapMode::Numeric && self.step > max * (1.0 + 1e-12) {
            return Err(ComplexityError::StepTooCoarse {
                step: self.step,
                max,
            });
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn domain_max(&self) -> f64 {
        self.domain_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn mode(&self) -> OverlapMode {
        self.mode
    }

    fn is_interior(&self, mu: f64) -> bool {
        let margin = INTERIOR_SIGMAS * self.sigma;
        mu >= margin && mu <= self.domain_max - margin
    }

    /// Whether the erfc expression applies to this pair.
    pub fn analytic_eligible(&self, mu1: f64, mu2: f64) -> bool {
        self.is_interior(mu1) && self.is_interior(mu2)
    }
}

/// Standard normal probability mass between `a` and `b` (in sigma units).
fn normal_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Evaluate in the tail that keeps the subtraction well conditioned.
    if a >= 0.0 {
        0.5 * (libm::erfc(a / SQRT_2) - libm::erfc(b / SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / SQRT_2) - libm::erfc(-a / SQRT_2))
    } else {
        1.0 - 0.5 * (libm::erfc(-a / SQRT_2) + libm::erfc(b / SQRT_2))
    }
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Overlapping coefficient of `N(mu1, sigma)` and `N(mu2, sigma)` on `[0, P_M]`.
///
/// Symmetric by construction: the pair is put in ascending order first.
pub fn ovl(mu1: f64, mu2: f64, kernel: &OverlapKernel) -> f64 {
    let (lo, hi) = if mu1 <= mu2 { (mu1, mu2) } else { (mu2, mu1) };
    let value = match kernel.mode {
        OverlapMode::Analytic => {
            if kernel.analytic_eligible(lo, hi) {
                libm::erfc((hi - lo) / (2.0 * SQRT_2 * kernel.sigma))
            } else {
                truncated_closed_form(lo, hi, kernel)
            }
        }
        OverlapMode::Numeric => trapezoid(lo, hi, kernel),
    };
    value.clamp(0.0, 1.0)
}

/// Equal-width densities cross at the midpoint; left of it the upper density
/// is the smaller one, right of it the lower one.
fn truncated_closed_form(lo: f64, hi: f64, kernel: &OverlapKernel) -> f64 {
    let s = kernel.sigma;
    let mid = (0.5 * (lo + hi)).clamp(0.0, kernel.domain_max);
    let left = normal_mass((0.0 - hi) / s, (mid - hi) / s);
    let right = normal_mass((mid - lo) / s, (kernel.domain_max - lo) / s);
    left + right
}

fn trapezoid(lo: f64, hi: f64, kernel: &OverlapKernel) -> f64 {
    let s = kernel.sigma;
    let reach = 12.0 * s;
    let a = (lo - reach).max(0.0);
    let b = (hi + reach).min(kernel.domain_max);
    if a >= b {
        return 0.0;
    }
    let mid = (0.5 * (lo + hi)).clamp(a, b);
    let f = |x: f64| normal_pdf(x, lo, s).min(normal_pdf(x, hi, s));
    // Integrate each side of the kink separately.
    integrate(&f, a, mid, kernel.step) + integrate(&f, mid, b, kernel.step)
}

fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, step: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = ((b - a) / step).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let interior: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + interior)
}

/// Range of value groups whose power lies within the pruning window of `mu`.
fn window(values: &AggregatedValueSet, mu: f64, sigma: f64) -> std::ops::Range<usize> {
    let groups = values.groups();
    let reach = PRUNE_SIGMAS * sigma;
    let lo = groups.partition_point(|g| g.power.watts() < mu - reach);
    let hi = groups.partition_point(|g| g.power.watts() <= mu + reach);
    lo..hi.max(lo)
}

fn check_domain(values: &AggregatedValueSet, kernel: &OverlapKernel) -> Result<(), ComplexityError> {
    if values.values().is_empty() {
        return Err(ComplexityError::EmptyValues);
    }
    let p_max = values.p_max().watts();
    if (kernel.domain_max - p_max).abs() > 1e-9 * p_max.max(1.0) {
        return Err(ComplexityError::DomainMismatch {
            kernel: kernel.domain_max,
            p_max,
        });
    }
    Ok(())
}

// Sum over groups in ascending power order; duplicate values contribute once
// per occurrence.
fn summed_overlap(mu: f64, values: &AggregatedValueSet, kernel: &OverlapKernel) -> f64 {
    let groups = values.groups();
    window(values, mu, kernel.sigma)
        .map(|j| groups[j].multiplicity as f64 * ovl(mu, groups[j].power.watts(), kernel))
        .sum()
}

/// Complexity `C_k` of the power value `p_k` within the value set.
pub fn complexity_of_value(
    p_k: Power,
    values: &AggregatedValueSet,
    kernel: &OverlapKernel,
) -> Result<f64, ComplexityError> {
    check_domain(values, kernel)?;
    Ok(summed_overlap(p_k.watts(), values, kernel))
}

/// Same as [`complexity_of_value`] but without pruning; every one of the M
/// terms is evaluated. Kept for checking the pruned path.
pub fn complexity_of_value_exhaustive(
    p_k: Power,
    values: &AggregatedValueSet,
    kernel: &OverlapKernel,
) -> Result<f64, ComplexityError> {
    check_domain(values, kernel)?;
    let mu = p_k.watts();
    Ok(values
        .values()
        .iter()
        .map(|v| ovl(mu, v.power.watts(), kernel))
        .sum())
}

/// Complexity spectrum over all M aggregated values.
pub fn spectrum(
    values: &AggregatedValueSet,
    kernel: &OverlapKernel,
) -> Result<ComplexitySpectrum, ComplexityError> {
    check_domain(values, kernel)?;
    let per_group: Vec<f64> = values
        .groups()
        .par_iter()
        .map(|g| summed_overlap(g.power.watts(), values, kernel))
        .collect();
    let entries = values
        .values()
        .iter()
        .map(|v| SpectrumEntry {
            power_w: v.power.watts(),
            complexity: per_group[v.group as usize],
        })
        .collect();
    Ok(ComplexitySpectrum::new(entries, kernel.sigma))
}

/// Per-sample complexities of a trace and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesComplexity {
    pub per_sample: Vec<f64>,
    pub c_total: f64,
    pub max: f64,
    pub sigma: f64,
}

impl TimeSeriesComplexity {
    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.c_total,
            max: self.max,
        }
    }
}

/// Time-series complexity: each sample's summed overlap against all M
/// aggregated values, averaged over the T samples.
pub fn timeseries_complexity(
    samples: &[f64],
    values: &AggregatedValueSet,
    kernel: &OverlapKernel,
) -> Result<TimeSeriesComplexity, ComplexityError> {
    if samples.is_empty() {
        return Err(ComplexityError::EmptyTrace);
    }
    check_domain(values, kernel)?;
    let per_sample: Vec<f64> = samples
        .par_iter()
        .map(|&x| summed_overlap(x, values, kernel))
        .collect();
    let summary = Summary::of(per_sample.iter().copied());
    Ok(TimeSeriesComplexity {
        per_sample,
        c_total: summary.mean,
        max: summary.max,
        sigma: kernel.sigma,
    })
}

/// Infers aggregated states from the modes of a sample histogram, for traces
/// without appliance metadata.
///
/// Bins are centred on multiples of `bin_width`. Samples below
/// `floor_threshold` are discarded, a mode is a bin that beats its left
/// neighbour and is not beaten by its right one, and each mode is reported at
/// the mean of its samples. The off state is always included. The returned
/// set is flagged as metadata-free.
pub fn histogram_states(
    samples: &[f64],
    bin_width: f64,
    floor_threshold: f64,
) -> Result<AggregatedValueSet, ComplexityError> {
    if samples.is_empty() {
        return Err(ComplexityError::EmptyTrace);
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(ComplexityError::InvalidBin(bin_width));
    }
    let kept: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|&x| x >= floor_threshold && x > 0.0)
        .collect();
    let modes = histogram_modes(&kept, bin_width);
    if modes.is_empty() {
        log::warn!("no histogram mode above the {floor_threshold} W floor; complexity is undefined");
        return Err(ComplexityError::EmptyHistogram(floor_threshold));
    }
    let levels: Vec<Power> = modes
        .iter()
        .filter_map(|&w| Power::round_from_watts(w).ok())
        .collect();
    Ok(AggregatedValueSet::from_levels(&levels))
}

fn histogram_modes(samples: &[f64], bin_width: f64) -> Vec<f64> {
    use std::collections::BTreeMap;
    let mut bins: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for &x in samples {
        let e = bins.entry((x / bin_width).round() as i64).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += x;
    }
    let count = |k: i64| bins.get(&k).map_or(0, |e| e.0);
    bins.iter()
        .filter(|(&k, &(c, _))| c >= MIN_MODE_SAMPLES && c > count(k - 1) && c >= count(k + 1))
        .map(|(_, &(c, sum))| sum / c as f64)
        .collect()
}
