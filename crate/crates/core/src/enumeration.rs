//! Enumeration of every aggregated power value of an appliance set.
//!
//! An appliance set with `N_Z` appliances of `Z` states produces
//! `M = Π Z^{N_Z}` state combinations. Values are generated by mixed-radix
//! counting over the per-appliance state indices, so memory is one entry per
//! combination and index ranges can be generated independently.

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{AggregatedValue, AggregatedValueSet, ApplianceSet, Power, ValueSource};

/// Default cap on M: 2^24 combinations.
pub const DEFAULT_MAX_COMBINATIONS: u64 = 1 << 24;

// Chunk size for parallel generation; below this the serial path is used.
const PARALLEL_CHUNK: u64 = 1 << 14;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnumerationError {
    #[error("combination count overflows u64")]
    Overflow,
    #[error("appliance set has {m} combinations, above the cap of {cap} (use force to override)")]
    BudgetExceeded { m: u64, cap: u64 },
    #[error("combination count {0} does not fit in memory on this platform")]
    TooLarge(u64),
    #[error("aggregated power overflows")]
    PowerOverflow,
}

/// Guard against the exponential growth of M.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_combinations: u64,
    pub force: bool,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_combinations: DEFAULT_MAX_COMBINATIONS,
            force: false,
        }
    }
}

impl EnumerationBudget {
    pub fn new(max_combinations: u64) -> Self {
        EnumerationBudget {
            max_combinations: max_combinations.max(1),
            force: false,
        }
    }

    pub fn forced() -> Self {
        EnumerationBudget {
            max_combinations: DEFAULT_MAX_COMBINATIONS,
            force: true,
        }
    }
}

/// Number of aggregated values, `Π_Z Z^{N_Z}`.
pub fn count_combinations(set: &ApplianceSet) -> Result<u64, EnumerationError> {
    set.appliances.iter().try_fold(1u64, |acc, a| {
        acc.checked_mul(a.state_count() as u64)
            .ok_or(EnumerationError::Overflow)
    })
}

/// Enumerates all M aggregated values, sorted ascending by power with ties
/// broken by combination index.
pub fn enumerate_values(
    set: &ApplianceSet,
    budget: EnumerationBudget,
) -> Result<AggregatedValueSet, EnumerationError> {
    let m = count_combinations(set)?;
    if m > budget.max_combinations && !budget.force {
        return Err(EnumerationError::BudgetExceeded {
            m,
            cap: budget.max_combinations,
        });
    }
    let len = usize::try_from(m).map_err(|_| EnumerationError::TooLarge(m))?;
    // The all-on sum bounds every partial sum, so checking it once suffices.
    set.appliances
        .iter()
        .try_fold(Power::ZERO, |acc, a| acc.checked_add(a.max_power()))
        .ok_or(EnumerationError::PowerOverflow)?;

    let levels: Vec<&[Power]> = set
        .appliances
        .iter()
        .map(|a| a.state_powers.as_slice())
        .collect();
    let radices: Vec<usize> = levels.iter().map(|l| l.len()).collect();

    let mut values: Vec<AggregatedValue> = if m <= PARALLEL_CHUNK {
        generate_range(&levels, 0, m)
    } else {
        let chunks: Vec<u64> = (0..m).step_by(PARALLEL_CHUNK as usize).collect();
        let parts: Vec<Vec<AggregatedValue>> = chunks
            .par_iter()
            .map(|&start| generate_range(&levels, start, (start + PARALLEL_CHUNK).min(m)))
            .collect();
        let mut out = Vec::with_capacity(len);
        for part in parts {
            out.extend(part);
        }
        out
    };
    debug_assert_eq!(values.len(), len);

    values.par_sort_unstable_by_key(|v| (v.power, v.combination));
    Ok(AggregatedValueSet::from_sorted(
        values,
        radices,
        ValueSource::Enumerated,
    ))
}

/// Generates combinations `start..end` by mixed-radix counting.
fn generate_range(levels: &[&[Power]], start: u64, end: u64) -> Vec<AggregatedValue> {
    let mut digits: Vec<usize> = Vec::with_capacity(levels.len());
    let mut rest = start;
    for l in levels {
        digits.push((rest % l.len() as u64) as usize);
        rest /= l.len() as u64;
    }
    let mut sum: i64 = digits
        .iter()
        .zip(levels)
        .map(|(&d, l)| l[d].centiwatts())
        .sum();

    let mut out = Vec::with_capacity((end - start) as usize);
    for index in start..end {
        out.push(AggregatedValue {
            power: Power::from_centiwatts(sum),
            combination: index,
            group: 0,
        });
        // Increment the counter, keeping the running sum in step.
        for (d, l) in digits.iter_mut().zip(levels) {
            sum -= l[*d].centiwatts();
            *d += 1;
            if *d < l.len() {
                sum += l[*d].centiwatts();
                break;
            }
            *d = 0;
            sum += l[0].centiwatts();
        }
    }
    out
}
