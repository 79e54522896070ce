//! Automatic identification of appliance power states from a power trace.
//!
//! The pipeline is: median filter, edge detection with ramp coalescing,
//! greedy pairing of rising and falling edges, and a histogram vote over the
//! pair magnitudes that keeps only the common levels.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ApplianceModel, ApplianceSet, Channel, DetectedChannel, DetectedState, DetectedStateSet,
    DomainError, Power, PowerTrace,
};
use crate::ingestion;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error("channel `{name}` has {len} samples, shorter than the median window {window}")]
    TraceTooShort {
        name: String,
        len: usize,
        window: usize,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Parameters of the detection pipeline. Every field has a default so a
/// config file only needs the values it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Odd sample count of the median filter.
    pub median_window: usize,
    /// Minimum absolute step, in watts, for a valid edge.
    pub edge_threshold: f64,
    /// Allowed relative mismatch between a falling edge and its rising edge.
    pub pair_magnitude_tolerance: f64,
    /// Histogram bin width in watts.
    pub histogram_bin: f64,
    /// A bin survives if its count reaches this fraction of the largest bin.
    pub commonness_fraction: f64,
    /// Longest activation, in seconds, that still pairs.
    pub max_pair_gap_secs: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            median_window: 9,
            edge_threshold: 25.0,
            pair_magnitude_tolerance: 0.15,
            histogram_bin: 10.0,
            commonness_fraction: 0.15,
            max_pair_gap_secs: 4.0 * 3600.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |msg: &str| Err(DetectionError::InvalidConfig(msg.to_string()));
        if self.median_window == 0 || self.median_window.is_multiple_of(2) {
            return bad("median_window must be odd and positive");
        }
        let positive = [
            ("edge_threshold", self.edge_threshold),
            ("pair_magnitude_tolerance", self.pair_magnitude_tolerance),
            ("histogram_bin", self.histogram_bin),
            ("max_pair_gap_secs", self.max_pair_gap_secs),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DetectionError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(self.commonness_fraction > 0.0 && self.commonness_fraction <= 1.0) {
            return bad("commonness_fraction must be in (0, 1]");
        }
        Ok(())
    }

    pub fn max_gap_samples(&self, sample_period: f64) -> usize {
        (self.max_pair_gap_secs / sample_period).floor().max(1.0) as usize
    }

    pub fn from_toml_str(s: &str) -> Result<Self, DetectionError> {
        let cfg: DetectionConfig =
            toml::from_str(s).map_err(|e| DetectionError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A step in the filtered signal: positive rises, negative falls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub index: usize,
    pub magnitude: f64,
}

/// A rising edge and the falling edge that ends the same activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePair {
    pub rise: EdgeEvent,
    pub fall: EdgeEvent,
}

impl EdgePair {
    pub fn magnitude(&self) -> f64 {
        0.5 * (self.rise.magnitude - self.fall.magnitude)
    }
}

/// Sliding median with replicated end samples; output has the input length.
pub fn denoise(samples: &[f64], window: usize) -> Result<Vec<f64>, DetectionError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(DetectionError::InvalidConfig(
            "median_window must be odd and positive".into(),
        ));
    }
    if samples.len() < window {
        return Err(DetectionError::TraceTooShort {
            name: String::new(),
            len: samples.len(),
            window,
        });
    }
    let half = window / 2;
    let last = samples.len() - 1;
    let mut buf = vec![0.0; window];
    Ok((0..samples.len())
        .map(|i| {
            for (k, slot) in buf.iter_mut().enumerate() {
                let j = (i + k).saturating_sub(half).min(last);
                *slot = samples[j];
            }
            let (_, median, _) = buf.select_nth_unstable_by(half, f64::total_cmp);
            *median
        })
        .collect())
}

/// Finds steps of at least `threshold` watts.
///
/// Consecutive differences of the same sign are merged first, so a ramp
/// spread over several samples becomes one edge carrying the whole rise.
pub fn detect_edges(samples: &[f64], threshold: f64) -> Vec<EdgeEvent> {
    let mut events = Vec::new();
    let mut run: Option<EdgeEvent> = None;
    let mut flush = |run: &mut Option<EdgeEvent>| {
        if let Some(e) = run.take() {
            if e.magnitude.abs() >= threshold {
                events.push(e);
            }
        }
    };
    for i in 1..samples.len() {
        let d = samples[i] - samples[i - 1];
        match run.as_mut() {
            Some(e) if d != 0.0 && d.signum() == e.magnitude.signum() => e.magnitude += d,
            _ => {
                flush(&mut run);
                if d != 0.0 {
                    run = Some(EdgeEvent {
                        index: i,
                        magnitude: d,
                    });
                }
            }
        }
    }
    flush(&mut run);
    events
}

/// Greedy pairing: in time order, each rising edge takes the earliest later
/// unpaired falling edge whose size is within `tolerance` of the rise and
/// that occurs at most `max_gap` samples after it. Unpaired edges are dropped.
pub fn pair_edges(events: &[EdgeEvent], tolerance: f64, max_gap: usize) -> Vec<EdgePair> {
    let falls: Vec<&EdgeEvent> = events.iter().filter(|e| e.magnitude < 0.0).collect();
    let mut taken = vec![false; falls.len()];
    let mut pairs = Vec::new();
    for rise in events.iter().filter(|e| e.magnitude > 0.0) {
        let start = falls.partition_point(|f| f.index <= rise.index);
        for (k, fall) in falls.iter().enumerate().skip(start) {
            if fall.index - rise.index > max_gap {
                break;
            }
            if taken[k] {
                continue;
            }
            if (-fall.magnitude - rise.magnitude).abs() <= tolerance * rise.magnitude {
                taken[k] = true;
                pairs.push(EdgePair {
                    rise: *rise,
                    fall: **fall,
                });
                break;
            }
        }
    }
    pairs
}

/// Histogram vote over pair magnitudes.
///
/// Bins are centred on multiples of `bin`; bins holding at least `fraction`
/// of the fullest bin's count survive, and neighbouring survivors are merged.
/// Each state is reported at the mean magnitude of its pairs.
pub fn vote_states(pairs: &[EdgePair], bin: f64, fraction: f64) -> Vec<DetectedState> {
    let mut bins: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for p in pairs {
        let m = p.magnitude();
        let e = bins.entry((m / bin).round() as i64).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += m;
    }
    let Some(max_count) = bins.values().map(|b| b.0).max() else {
        return Vec::new();
    };
    let cutoff = fraction * max_count as f64;

    let mut states: Vec<DetectedState> = Vec::new();
    let mut last_key: Option<i64> = None;
    let mut sum = 0.0;
    for (&key, &(count, total)) in bins.iter().filter(|(_, b)| b.0 as f64 >= cutoff) {
        match (last_key, states.last_mut()) {
            (Some(prev), Some(state)) if key == prev + 1 => {
                state.count += count;
                sum += total;
                state.power_w = sum / state.count as f64;
            }
            _ => {
                sum = total;
                states.push(DetectedState {
                    power_w: total / count as f64,
                    count,
                });
            }
        }
        last_key = Some(key);
    }
    states
}

/// Runs the whole pipeline on one channel.
pub fn detect_channel(
    channel: &Channel,
    sample_period: f64,
    config: &DetectionConfig,
) -> Result<DetectedChannel, DetectionError> {
    config.validate()?;
    let filtered = denoise(&channel.samples, config.median_window).map_err(|e| match e {
        DetectionError::TraceTooShort { len, window, .. } => DetectionError::TraceTooShort {
            name: channel.name.clone(),
            len,
            window,
        },
        other => other,
    })?;
    let edges = detect_edges(&filtered, config.edge_threshold);
    let pairs = pair_edges(
        &edges,
        config.pair_magnitude_tolerance,
        config.max_gap_samples(sample_period),
    );
    let states = vote_states(&pairs, config.histogram_bin, config.commonness_fraction);
    log::debug!(
        "channel {}: {} edges, {} pairs, {} states",
        channel.name,
        edges.len(),
        pairs.len(),
        states.len()
    );
    Ok(DetectedChannel {
        name: channel.name.clone(),
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// One channel per appliance; yields one multi-state appliance per channel.
    Submetered,
    /// A single household total; yields unattributed power levels.
    Aggregated,
}

/// Name of the channel treated as the household total.
pub const AGGREGATE_CHANNEL: &str = "aggregate";

#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    Submetered {
        states: DetectedStateSet,
        appliances: Vec<ApplianceModel>,
    },
    Aggregated {
        states: DetectedStateSet,
    },
}

impl Detection {
    pub fn states(&self) -> &DetectedStateSet {
        match self {
            Detection::Submetered { states, .. } | Detection::Aggregated { states } => states,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.states().is_empty()
    }

    /// Appliance set for the complexity computations. Aggregated detections
    /// carry no attribution, so each level becomes its own on/off appliance.
    pub fn to_appliance_set(&self) -> Result<ApplianceSet, DomainError> {
        match self {
            Detection::Submetered { appliances, .. } => ApplianceSet::new(appliances.clone()),
            Detection::Aggregated { states } => {
                let mut appliances = Vec::new();
                for s in states.channels.iter().flat_map(|c| &c.states) {
                    let p = Power::round_from_watts(s.power_w)?;
                    appliances.push(ApplianceModel::new(
                        format!("state_{p}W"),
                        vec![Power::ZERO, p],
                    )?);
                }
                ApplianceSet::new(appliances)
            }
        }
    }
}

/// Detects power states in a trace.
///
/// In submetered mode every channel except `aggregate` is analysed on its
/// own; channels without any surviving state are left out of the appliance
/// list. In aggregated mode the `aggregate` channel is used if present, the
/// only channel if there is one, and the per-sample sum otherwise.
pub fn detect(
    trace: &PowerTrace,
    config: &DetectionConfig,
    mode: DetectionMode,
) -> Result<Detection, DetectionError> {
    config.validate()?;
    let period = trace.sample_period();
    match mode {
        DetectionMode::Submetered => {
            let channels: Vec<&Channel> = trace
                .channels()
                .iter()
                .filter(|c| c.name != AGGREGATE_CHANNEL)
                .collect();
            let detected = channels
                .par_iter()
                .map(|c| detect_channel(c, period, config))
                .collect::<Result<Vec<_>, _>>()?;
            let mut appliances = Vec::new();
            for ch in &detected {
                let mut levels = vec![Power::ZERO];
                for s in &ch.states {
                    levels.push(Power::round_from_watts(s.power_w)?);
                }
                levels.dedup();
                if levels.len() < 2 {
                    log::warn!("channel {}: no power state detected", ch.name);
                    continue;
                }
                appliances.push(ApplianceModel::new(ch.name.clone(), levels)?);
            }
            Ok(Detection::Submetered {
                states: DetectedStateSet { channels: detected },
                appliances,
            })
        }
        DetectionMode::Aggregated => {
            let summed;
            let channel = match trace.channel(AGGREGATE_CHANNEL) {
                Some(c) => c,
                None if trace.channels().len() == 1 => &trace.channels()[0],
                None => {
                    summed = ingestion::aggregate(trace)?;
                    &summed.channels()[0]
                }
            };
            let detected = detect_channel(channel, period, config)?;
            Ok(Detection::Aggregated {
                states: DetectedStateSet {
                    channels: vec![detected],
                },
            })
        }
    }
}
