//! Shared domain types and their validation.
//!
//! Power levels are stored as [`Power`], a fixed-decimal count of centiwatts,
//! so that sums of state powers compare exactly and duplicate aggregated
//! values group deterministically.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Errors raised while validating or parsing domain data.
#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("appliance set is empty")]
    EmptySet,
    #[error("appliance `{0}`: missing off state (first state must be 0 W)")]
    MissingOffState(String),
    #[error("appliance `{0}`: needs at least two states, got {1}")]
    TooFewStates(String, usize),
    #[error("appliance `{name}`: negative power {watts} W")]
    NegativePower { name: String, watts: f64 },
    #[error("power value {0} is not finite")]
    NonFinitePower(f64),
    #[error("power value {0} W has more than two decimal places")]
    TooPrecise(f64),
    #[error("power value {0} W is out of range")]
    PowerOutOfRange(f64),
    #[error("duplicate appliance name `{0}`")]
    DuplicateName(String),
    #[error("appliance name must not be empty")]
    EmptyName,
    #[error("sigma must be finite and > 0, got {0}")]
    InvalidSigma(f64),
    #[error("domain maximum must be finite and > 0, got {0}")]
    InvalidDomainMax(f64),
    #[error("sample period must be finite and > 0, got {0}")]
    InvalidSamplePeriod(f64),
    #[error("trace has no channels")]
    NoChannels,
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("channel `{name}` has {len} samples, expected {expected}")]
    ChannelLength {
        name: String,
        len: usize,
        expected: usize,
    },
    #[error("channel `{name}` sample {index} is not finite")]
    NonFiniteSample { name: String, index: usize },
    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),
    #[error("malformed appliance JSON: {0}")]
    Json(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// A power level at 0.01 W resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Power(i64);

impl Power {
    pub const ZERO: Power = Power(0);

    // Values above this cannot be summed over any realistic appliance set
    // without approaching i64 limits.
    const MAX_CENTIWATTS: i64 = 1 << 52;

    pub const fn from_centiwatts(cw: i64) -> Self {
        Power(cw)
    }

    /// Converts watts to the fixed-decimal representation.
    ///
    /// Rejects non-finite values and values with more than two decimals.
    pub fn from_watts(watts: f64) -> Result<Self, DomainError> {
        if !watts.is_finite() {
            return Err(DomainError::NonFinitePower(watts));
        }
        let scaled = watts * 100.0;
        let rounded = scaled.round();
        if rounded.abs() > Self::MAX_CENTIWATTS as f64 {
            return Err(DomainError::PowerOutOfRange(watts));
        }
        if (scaled - rounded).abs() > 1e-6 * scaled.abs().max(1.0) {
            return Err(DomainError::TooPrecise(watts));
        }
        Ok(Power(rounded as i64))
    }

    /// Rounds to the nearest centiwatt. Used for measured (not declared) levels.
    pub fn round_from_watts(watts: f64) -> Result<Self, DomainError> {
        if !watts.is_finite() {
            return Err(DomainError::NonFinitePower(watts));
        }
        let rounded = (watts * 100.0).round();
        if rounded.abs() > Self::MAX_CENTIWATTS as f64 {
            return Err(DomainError::PowerOutOfRange(watts));
        }
        Ok(Power(rounded as i64))
    }

    pub const fn centiwatts(self) -> i64 {
        self.0
    }

    pub fn watts(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn checked_add(self, other: Power) -> Option<Power> {
        self.0.checked_add(other.0).map(Power)
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let (whole, frac) = (abs / 100, abs % 100);
        if frac == 0 {
            write!(f, "{sign}{whole}")
        } else if frac % 10 == 0 {
            write!(f, "{sign}{whole}.{}", frac / 10)
        } else {
            write!(f, "{sign}{whole}.{frac:02}")
        }
    }
}

impl Serialize for Power {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0 % 100 == 0 {
            serializer.serialize_i64(self.0 / 100)
        } else {
            serializer.serialize_f64(self.watts())
        }
    }
}

impl<'de> Deserialize<'de> for Power {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let watts = f64::deserialize(deserializer)?;
        Power::from_watts(watts).map_err(de::Error::custom)
    }
}

/// An appliance described by its steady-state power levels; state 0 is off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplianceModel {
    pub name: String,
    #[serde(rename = "states_w")]
    pub state_powers: Vec<Power>,
}

impl ApplianceModel {
    pub fn new(name: impl Into<String>, state_powers: Vec<Power>) -> Result<Self, DomainError> {
        let model = ApplianceModel {
            name: name.into(),
            state_powers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Convenience constructor from watt values, e.g. `[0.0, 150.0]`.
    pub fn from_watts(name: impl Into<String>, watts: &[f64]) -> Result<Self, DomainError> {
        let powers = watts
            .iter()
            .map(|&w| Power::from_watts(w))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, powers)
    }

    /// Number of states Z, including the off state.
    pub fn state_count(&self) -> usize {
        self.state_powers.len()
    }

    pub fn max_power(&self) -> Power {
        self.state_powers.iter().copied().max().unwrap_or(Power::ZERO)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.name.trim().is_empty() {
            return Err(DomainError::EmptyName);
        }
        if let Some(p) = self.state_powers.iter().find(|p| p.0 < 0) {
            return Err(DomainError::NegativePower {
                name: self.name.clone(),
                watts: p.watts(),
            });
        }
        match self.state_powers.first() {
            Some(p) if *p == Power::ZERO => {}
            _ => return Err(DomainError::MissingOffState(self.name.clone())),
        }
        if self.state_powers.len() < 2 {
            return Err(DomainError::TooFewStates(
                self.name.clone(),
                self.state_powers.len(),
            ));
        }
        Ok(())
    }
}

/// The N appliances of a household.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplianceSet {
    pub appliances: Vec<ApplianceModel>,
}

impl ApplianceSet {
    pub fn new(appliances: Vec<ApplianceModel>) -> Result<Self, DomainError> {
        validate_appliance_set(ApplianceSet { appliances })
    }

    pub fn len(&self) -> usize {
        self.appliances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.appliances.is_empty()
    }

    /// Power of the all-on combination.
    pub fn all_on_power(&self) -> Power {
        Power(self.appliances.iter().map(|a| a.max_power().0).sum())
    }

    pub fn from_json_str(s: &str) -> Result<Self, DomainError> {
        let set: ApplianceSet =
            serde_json::from_str(s).map_err(|e| DomainError::Json(e.to_string()))?;
        validate_appliance_set(set)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| DomainError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("appliance set serializes")
    }
}

/// Checks every appliance-set invariant and hands the set back on success.
pub fn validate_appliance_set(set: ApplianceSet) -> Result<ApplianceSet, DomainError> {
    if set.appliances.is_empty() {
        return Err(DomainError::EmptySet);
    }
    let mut names = HashSet::new();
    for appliance in &set.appliances {
        appliance.validate()?;
        if !names.insert(appliance.name.as_str()) {
            return Err(DomainError::DuplicateName(appliance.name.clone()));
        }
    }
    Ok(set)
}

/// Normal distribution width assigned to every power value, plus the
/// truncation domain `[0, domain_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma: f64,
    pub domain_max: f64,
}

impl GaussianSpec {
    pub fn new(sigma: f64, domain_max: f64) -> Result<Self, DomainError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DomainError::InvalidSigma(sigma));
        }
        if !(domain_max.is_finite() && domain_max > 0.0) {
            return Err(DomainError::InvalidDomainMax(domain_max));
        }
        Ok(GaussianSpec { sigma, domain_max })
    }
}

/// How an [`AggregatedValueSet`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// Exhaustive enumeration of an appliance set's state combinations.
    Enumerated,
    /// Modes of a power histogram; no appliance metadata was available.
    Histogram,
}

/// One of the M aggregated power values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregatedValue {
    pub power: Power,
    /// Mixed-radix index of the state combination that produced this value
    /// (first appliance is the least significant digit). Zero for
    /// histogram-derived values.
    pub combination: u64,
    /// Index of the equal-power group this value belongs to.
    pub group: u32,
}

/// A run of equal aggregated powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowerGroup {
    pub power: Power,
    pub multiplicity: u64,
}

/// All aggregated power values of an appliance set, sorted by power.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedValueSet {
    pub(crate) values: Vec<AggregatedValue>,
    pub(crate) groups: Vec<PowerGroup>,
    pub(crate) radices: Vec<usize>,
    pub(crate) source: ValueSource,
}

impl AggregatedValueSet {
    /// Builds a set from already sorted values; groups are derived here.
    pub(crate) fn from_sorted(
        mut values: Vec<AggregatedValue>,
        radices: Vec<usize>,
        source: ValueSource,
    ) -> Self {
        let mut groups: Vec<PowerGroup> = Vec::new();
        for v in values.iter_mut() {
            match groups.last_mut() {
                Some(g) if g.power == v.power => g.multiplicity += 1,
                _ => groups.push(PowerGroup {
                    power: v.power,
                    multiplicity: 1,
                }),
            }
            v.group = (groups.len() - 1) as u32;
        }
        AggregatedValueSet {
            values,
            groups,
            radices,
            source,
        }
    }

    /// Number of values M, duplicates included.
    pub fn m_total(&self) -> u64 {
        self.values.len() as u64
    }

    /// The all-on power P_M.
    pub fn p_max(&self) -> Power {
        self.groups.last().map(|g| g.power).unwrap_or(Power::ZERO)
    }

    pub fn values(&self) -> &[AggregatedValue] {
        &self.values
    }

    pub fn groups(&self) -> &[PowerGroup] {
        &self.groups
    }

    pub fn source(&self) -> ValueSource {
        self.source
    }

    pub fn is_metadata_free(&self) -> bool {
        self.source == ValueSource::Histogram
    }

    /// Decodes the per-appliance state indices of a value's combination.
    pub fn combination_states(&self, value: &AggregatedValue) -> Vec<usize> {
        let mut rest = value.combination;
        self.radices
            .iter()
            .map(|&r| {
                let digit = (rest % r as u64) as usize;
                rest /= r as u64;
                digit
            })
            .collect()
    }

    /// Builds a metadata-free set from bare levels; 0 W is always included.
    pub fn from_levels(levels: &[Power]) -> Self {
        let mut powers: Vec<Power> = levels.iter().copied().filter(|p| p.0 > 0).collect();
        powers.push(Power::ZERO);
        powers.sort_unstable();
        powers.dedup();
        let values = powers
            .into_iter()
            .map(|power| AggregatedValue {
                power,
                combination: 0,
                group: 0,
            })
            .collect();
        Self::from_sorted(values, Vec::new(), ValueSource::Histogram)
    }
}

/// Complexity of one aggregated value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub power_w: f64,
    pub complexity: f64,
}

/// Mean and maximum over a spectrum or a per-sample series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            n += 1;
            sum += v;
            max = max.max(v);
        }
        if n == 0 {
            return Summary {
                mean: 0.0,
                max: 0.0,
            };
        }
        Summary {
            mean: sum / n as f64,
            max,
        }
    }
}

/// Per-value complexities over all M aggregated values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySpectrum {
    pub entries: Vec<SpectrumEntry>,
    pub summary: Summary,
    pub sigma: f64,
}

impl ComplexitySpectrum {
    pub fn new(entries: Vec<SpectrumEntry>, sigma: f64) -> Self {
        let summary = Summary::of(entries.iter().map(|e| e.complexity));
        ComplexitySpectrum {
            entries,
            summary,
            sigma,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Collapses equal powers into `(power_w, complexity, multiplicity)` rows.
    pub fn grouped(&self) -> Vec<(f64, f64, u64)> {
        let mut rows: Vec<(f64, f64, u64)> = Vec::new();
        for e in &self.entries {
            match rows.last_mut() {
                Some(row) if row.0 == e.power_w => row.2 += 1,
                _ => rows.push((e.power_w, e.complexity, 1)),
            }
        }
        rows
    }
}

/// One named channel of samples in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub samples: Vec<f64>,
}

/// Uniformly sampled power readings over one or more channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    sample_period: f64,
    start_time: f64,
    channels: Vec<Channel>,
}

impl PowerTrace {
    pub fn new(
        sample_period: f64,
        start_time: f64,
        channels: Vec<Channel>,
    ) -> Result<Self, DomainError> {
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(DomainError::InvalidSamplePeriod(sample_period));
        }
        let first = channels.first().ok_or(DomainError::NoChannels)?;
        let expected = first.samples.len();
        if expected == 0 {
            return Err(DomainError::EmptyTrace);
        }
        let mut names = HashSet::new();
        for ch in &channels {
            if !names.insert(ch.name.as_str()) {
                return Err(DomainError::DuplicateChannel(ch.name.clone()));
            }
            if ch.samples.len() != expected {
                return Err(DomainError::ChannelLength {
                    name: ch.name.clone(),
                    len: ch.samples.len(),
                    expected,
                });
            }
            if let Some(index) = ch.samples.iter().position(|s| !s.is_finite()) {
                return Err(DomainError::NonFiniteSample {
                    name: ch.name.clone(),
                    index,
                });
            }
        }
        Ok(PowerTrace {
            sample_period,
            start_time,
            channels,
        })
    }

    /// Single-channel trace.
    pub fn single(
        name: impl Into<String>,
        sample_period: f64,
        start_time: f64,
        samples: Vec<f64>,
    ) -> Result<Self, DomainError> {
        Self::new(
            sample_period,
            start_time,
            vec![Channel {
                name: name.into(),
                samples,
            }],
        )
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    /// Number of samples T.
    pub fn len(&self) -> usize {
        self.channels[0].samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.sample_period
    }

    /// Energy of a channel in kWh, treating each sample as held for one period.
    pub fn channel_energy_kwh(&self, channel: &Channel) -> f64 {
        channel.samples.iter().sum::<f64>() * self.sample_period / 3.6e6
    }
}

/// A detected power level and how many edge pairs voted for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedState {
    pub power_w: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedChannel {
    pub name: String,
    pub states: Vec<DetectedState>,
}

/// Detected power levels per channel, ascending by power.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectedStateSet {
    pub channels: Vec<DetectedChannel>,
}

impl DetectedStateSet {
    pub fn is_empty(&self) -> bool {
        self.channels.iter().all(|c| c.states.is_empty())
    }
}

/// Per-appliance outcome of a disaggregation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceEstimate {
    pub name: String,
    /// Decided state index for every sample.
    pub states: Vec<usize>,
    pub estimated_kwh: f64,
    /// Filled in by scoring against ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_kwh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisaggregationResult {
    pub sample_period: f64,
    pub appliances: Vec<ApplianceEstimate>,
    pub total_estimated_kwh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_real_kwh: Option<f64>,
    /// Steps where every particle weight underflowed and weights were reset.
    #[serde(default)]
    pub degenerate_steps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn app(name: &str, w: &[f64]) -> ApplianceModel {
        ApplianceModel {
            name: name.to_string(),
            state_powers: w.iter().map(|&x| Power::from_watts(x).unwrap()).collect(),
        }
    }

    #[test]
    fn minimal_on_off_appliance_is_valid() {
        let set = ApplianceSet::new(vec![app("a", &[0.0, 100.0])]).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn missing_off_state_is_rejected() {
        let err = ApplianceSet::new(vec![app("a", &[50.0, 100.0])]).unwrap_err();
        assert_eq!(err, DomainError::MissingOffState("a".into()));
        assert!(err.to_string().contains("missing off state"));
    }

    #[test]
    fn three_device_example_set_is_valid() {
        let set = ApplianceSet::new(vec![
            app("d1", &[0.0, 10.0]),
            app("d2", &[0.0, 20.0]),
            app("d3", &[0.0, 35.0]),
        ])
        .unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.all_on_power(), Power::from_centiwatts(6500));
    }

    #[test]
    fn rejects_empty_negative_duplicate_and_single_state() {
        assert_eq!(ApplianceSet::new(vec![]).unwrap_err(), DomainError::EmptySet);
        assert!(matches!(
            ApplianceSet::new(vec![app("a", &[0.0, -5.0])]).unwrap_err(),
            DomainError::NegativePower { .. }
        ));
        assert_eq!(
            ApplianceSet::new(vec![app("a", &[0.0, 5.0]), app("a", &[0.0, 6.0])]).unwrap_err(),
            DomainError::DuplicateName("a".into())
        );
        assert_eq!(
            ApplianceSet::new(vec![app("a", &[0.0])]).unwrap_err(),
            DomainError::TooFewStates("a".into(), 1)
        );
    }

    #[test]
    fn power_parsing_accepts_two_decimals_only() {
        assert_eq!(Power::from_watts(12.34).unwrap().centiwatts(), 1234);
        assert_eq!(Power::from_watts(0.1).unwrap().centiwatts(), 10);
        assert!(matches!(
            Power::from_watts(1.234),
            Err(DomainError::TooPrecise(_))
        ));
        assert!(Power::from_watts(f64::NAN).is_err());
        assert_eq!(Power::from_centiwatts(1230).to_string(), "12.3");
        assert_eq!(Power::from_centiwatts(1205).to_string(), "12.05");
        assert_eq!(Power::from_centiwatts(1200).to_string(), "12");
    }

    #[test]
    fn json_schema_parses() {
        let set = ApplianceSet::from_json_str(
            r#"{"appliances": [{"name": "fridge", "states_w": [0, 150.5]},
                               {"name": "kettle", "states_w": [0, 1800]}]}"#,
        )
        .unwrap();
        assert_eq!(set.appliances[0].state_powers[1].centiwatts(), 15050);
        let bad = ApplianceSet::from_json_str(r#"{"appliances": []}"#).unwrap_err();
        assert_eq!(bad, DomainError::EmptySet);
        assert!(ApplianceSet::from_json_str("{").is_err());
    }

    #[test]
    fn trace_validation() {
        assert!(PowerTrace::single("a", 1.0, 0.0, vec![]).is_err());
        assert!(PowerTrace::single("a", 0.0, 0.0, vec![1.0]).is_err());
        assert!(PowerTrace::single("a", 1.0, 0.0, vec![f64::NAN]).is_err());
        let err = PowerTrace::new(
            1.0,
            0.0,
            vec![
                Channel {
                    name: "a".into(),
                    samples: vec![1.0, 2.0],
                },
                Channel {
                    name: "b".into(),
                    samples: vec![1.0],
                },
            ],
        )
        .unwrap_err();
        assert!(matches!(err, DomainError::ChannelLength { .. }));
    }

    #[test]
    fn summary_of_spectrum() {
        let s = Summary::of([0.5, 1.0, 0.5]);
        assert!((s.mean - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.max, 1.0);
    }

    #[test]
    fn histogram_levels_always_include_zero() {
        let set = AggregatedValueSet::from_levels(&[
            Power::from_centiwatts(30000),
            Power::from_centiwatts(10000),
        ]);
        let powers: Vec<i64> = set.values().iter().map(|v| v.power.centiwatts()).collect();
        assert_eq!(powers, vec![0, 10000, 30000]);
        assert!(set.is_metadata_free());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn appliance_strategy() -> impl Strategy<Value = Vec<Vec<i64>>> {
            prop::collection::vec(prop::collection::vec(1i64..500_000, 1..4), 1..5)
        }

        proptest! {
            #[test]
            fn json_round_trip(levels in appliance_strategy()) {
                let appliances = levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let mut states = vec![Power::ZERO];
                        states.extend(l.iter().map(|&c| Power::from_centiwatts(c)));
                        ApplianceModel::new(format!("app{i}"), states).unwrap()
                    })
                    .collect();
                let set = ApplianceSet::new(appliances).unwrap();
                let back = ApplianceSet::from_json_str(&set.to_json_string()).unwrap();
                prop_assert_eq!(set, back);
            }

            #[test]
            fn validation_is_total(raw in prop::collection::vec(
                prop::collection::vec(prop_oneof![Just(f64::NAN), -1e3f64..1e7, Just(0.0)], 0..4), 0..4)) {
                let json = serde_json::json!({
                    "appliances": raw.iter().enumerate().map(|(i, s)| serde_json::json!({
                        "name": format!("a{i}"),
                        "states_w": s.iter().map(|v| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null }).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>()
                });
                // Either outcome is fine; it just must not panic.
                let _ = ApplianceSet::from_json_str(&json.to_string());
            }
        }
    }
}
