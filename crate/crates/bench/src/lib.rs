//! Fixtures shared by the benches.

use nilm_complexity::ingestion::{synthesize, ActivityProfile, Schedule, SyntheticHouse};
use nilm_complexity::{ApplianceModel, ApplianceSet};

/// `n` appliances with `states` levels each, spread so few values coincide.
pub fn spread_set(n: usize, states: usize) -> ApplianceSet {
    ApplianceSet::new(
        (0..n)
            .map(|i| {
                let watts: Vec<f64> = (0..states)
                    .map(|s| (s * (37 + 23 * i)) as f64 + if s > 0 { 0.5 * i as f64 } else { 0.0 })
                    .collect();
                ApplianceModel::from_watts(format!("a{i}"), &watts).unwrap()
            })
            .collect(),
    )
    .unwrap()
}

/// A seeded synthetic day for the set.
pub fn house(set: &ApplianceSet, samples: usize, seed: u64) -> SyntheticHouse {
    let profile = ActivityProfile {
        on: 120..1800,
        off: 600..7200,
    };
    let schedule = Schedule::random(set, samples, &profile, seed);
    synthesize(set, &schedule, 5.0, 1.0, seed).unwrap()
}
