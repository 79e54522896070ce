//! Loading, resampling, aggregating and synthesizing power traces.
//!
//! CSV files carry a header row with a time column (epoch seconds or
//! ISO-8601) and one column per channel. Readings are resampled to a uniform
//! grid by forward fill, since appliance power is held between readings.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ApplianceSet, Channel, DomainError, PowerTrace};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file has no data rows")]
    Empty,
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {time} is earlier than the previous row")]
    NonMonotone { line: u64, time: f64 },
    #[error("line {line}: column `{column}` has invalid power {value}")]
    InvalidPower {
        line: u64,
        column: String,
        value: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("target period must be > 0, got {0}")]
    InvalidPeriod(f64),
    #[error("channel `{name}` has {len} samples, expected {expected}")]
    LengthMismatch {
        name: String,
        len: usize,
        expected: usize,
    },
    #[error("appliance `{appliance}` has no state {state} (sample {sample})")]
    InvalidStateIndex {
        appliance: String,
        sample: usize,
        state: usize,
    },
    #[error("schedule has {got} appliance rows, appliance set has {expected}")]
    ScheduleShape { got: usize, expected: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PowerUnit {
    #[default]
    #[serde(rename = "W")]
    Watt,
    #[serde(rename = "kW")]
    Kilowatt,
}

impl PowerUnit {
    fn to_watts(self, v: f64) -> f64 {
        match self {
            PowerUnit::Watt => v,
            PowerUnit::Kilowatt => v * 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMapping {
    pub column: String,
    /// Channel name in the trace; defaults to the column name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub unit: PowerUnit,
}

/// Column layout of one dataset flavour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub time_column: String,
    /// Channels to load; empty means every non-time column, in watts.
    pub channels: Vec<ChannelMapping>,
    /// Readings further apart than this are treated as missing data and the
    /// gap is filled with 0 W.
    pub max_gap_secs: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time_column: "timestamp".into(),
            channels: Vec::new(),
            max_gap_secs: 300.0,
        }
    }
}

impl CsvSchema {
    pub fn from_toml_str(s: &str) -> Result<Self, IngestError> {
        toml::from_str(s).map_err(|e| IngestError::Schema(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, IngestError> {
        serde_json::from_str(s).map_err(|e| IngestError::Schema(e.to_string()))
    }
}

/// A resampled trace plus what had to be patched to get it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrace {
    pub trace: PowerTrace,
    /// Number of reading gaps longer than the schema limit.
    pub gap_count: usize,
    /// Number of output samples set to 0 W because they fell in such a gap.
    pub zero_filled_samples: usize,
}

fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    None
}

pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    target_period: f64,
) -> Result<LoadedTrace, IngestError> {
    let file = std::fs::File::open(path.as_ref())?;
    load_csv_reader(file, schema, target_period)
}

/// Reads a CSV from any reader and resamples it to `target_period` seconds.
pub fn load_csv_reader(
    reader: impl Read,
    schema: &CsvSchema,
    target_period: f64,
) -> Result<LoadedTrace, IngestError> {
    if !(target_period.is_finite() && target_period > 0.0) {
        return Err(IngestError::InvalidPeriod(target_period));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let time_idx = find(&schema.time_column)?;
    let mappings: Vec<ChannelMapping> = if schema.channels.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_idx)
            .map(|(_, h)| ChannelMapping {
                column: h.to_string(),
                name: None,
                unit: PowerUnit::Watt,
            })
            .collect()
    } else {
        schema.channels.clone()
    };
    if mappings.is_empty() {
        return Err(IngestError::Schema("no channel columns".into()));
    }
    let columns = mappings
        .iter()
        .map(|m| find(&m.column))
        .collect::<Result<Vec<_>, _>>()?;

    let mut times: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_time = record.get(time_idx).unwrap_or("");
        let t = parse_timestamp(raw_time).ok_or_else(|| IngestError::Parse {
            line,
            message: format!("unparseable timestamp `{raw_time}`"),
        })?;
        if let Some(&prev) = times.last() {
            if t < prev {
                return Err(IngestError::NonMonotone { line, time: t });
            }
        }
        let mut values = Vec::with_capacity(columns.len());
        for (m, &c) in mappings.iter().zip(&columns) {
            let raw = record.get(c).unwrap_or("");
            let v = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| IngestError::InvalidPower {
                    line,
                    column: m.column.clone(),
                    value: raw.to_string(),
                })?;
            values.push(m.unit.to_watts(v));
        }
        // Rows sharing a timestamp: the later one wins.
        if times.last() == Some(&t) {
            *rows.last_mut().unwrap() = values;
        } else {
            times.push(t);
            rows.push(values);
        }
    }
    if rows.is_empty() {
        return Err(IngestError::Empty);
    }

    let (resampled, gap_count, zero_filled) =
        forward_fill(&times, &rows, target_period, schema.max_gap_secs);
    if gap_count > 0 {
        log::warn!(
            "{gap_count} gap(s) longer than {} s, {zero_filled} sample(s) set to 0 W",
            schema.max_gap_secs
        );
    }
    let channels = mappings
        .iter()
        .enumerate()
        .map(|(i, m)| Channel {
            name: m.name.clone().unwrap_or_else(|| m.column.clone()),
            samples: resampled.iter().map(|r| r[i]).collect(),
        })
        .collect();
    Ok(LoadedTrace {
        trace: PowerTrace::new(target_period, times[0], channels)?,
        gap_count,
        zero_filled_samples: zero_filled,
    })
}

fn forward_fill(
    times: &[f64],
    rows: &[Vec<f64>],
    period: f64,
    max_gap: f64,
) -> (Vec<Vec<f64>>, usize, usize) {
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let eps = 1e-6 * period;
    let n = ((span + eps) / period).floor() as usize + 1;
    let width = rows[0].len();
    let gap_count = times.windows(2).filter(|w| w[1] - w[0] > max_gap).count();

    let mut out = Vec::with_capacity(n);
    let mut zero_filled = 0;
    let mut r = 0;
    for k in 0..n {
        let t = t0 + k as f64 * period;
        while r + 1 < times.len() && times[r + 1] <= t + eps {
            r += 1;
        }
        let in_gap = r + 1 < times.len() && times[r + 1] - times[r] > max_gap && t > times[r] + eps;
        if in_gap {
            zero_filled += 1;
            out.push(vec![0.0; width]);
        } else {
            out.push(rows[r].clone());
        }
    }
    (out, gap_count, zero_filled)
}

/// Writes a trace in the same CSV shape the loader reads.
pub fn write_csv(trace: &PowerTrace, writer: impl Write) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(trace.channels().iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..trace.len() {
        let mut row = vec![format!("{}", trace.timestamp(i))];
        row.extend(trace.channels().iter().map(|c| format!("{}", c.samples[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(trace: &PowerTrace, path: impl AsRef<Path>) -> Result<(), IngestError> {
    write_csv(trace, std::fs::File::create(path)?)
}

/// Sums equal-length channels sample by sample.
pub fn aggregate_channels(channels: &[Channel]) -> Result<Vec<f64>, IngestError> {
    let first = channels
        .first()
        .ok_or(IngestError::Domain(DomainError::NoChannels))?;
    let len = first.samples.len();
    if let Some(bad) = channels.iter().find(|c| c.samples.len() != len) {
        return Err(IngestError::LengthMismatch {
            name: bad.name.clone(),
            len: bad.samples.len(),
            expected: len,
        });
    }
    Ok((0..len)
        .map(|i| channels.iter().map(|c| c.samples[i]).sum())
        .collect())
}

/// Superimposes all channels of a trace into one `aggregate` channel.
pub fn aggregate(trace: &PowerTrace) -> Result<PowerTrace, DomainError> {
    let summed = aggregate_channels(trace.channels()).map_err(|e| match e {
        IngestError::Domain(d) => d,
        // Channel lengths are already checked by PowerTrace.
        other => unreachable!("{other}"),
    })?;
    PowerTrace::single(
        crate::detection::AGGREGATE_CHANNEL,
        trace.sample_period(),
        trace.start_time(),
        summed,
    )
}

/// Per-appliance state index for every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub states: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn all_off(appliances: usize, len: usize) -> Self {
        Schedule {
            states: vec![vec![0; len]; appliances],
        }
    }

    pub fn len(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Puts `appliance` into `state` for the sample range.
    pub fn set(&mut self, appliance: usize, range: std::ops::Range<usize>, state: usize) {
        let row = &mut self.states[appliance];
        let end = range.end.min(row.len());
        for s in &mut row[range.start.min(end)..end] {
            *s = state;
        }
    }

    /// Random on/off activity: each appliance alternates off periods and
    /// on periods (in a uniformly chosen non-off state) with durations drawn
    /// uniformly from the given sample ranges.
    pub fn random(
        set: &ApplianceSet,
        len: usize,
        activity: &ActivityProfile,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut schedule = Schedule::all_off(set.len(), len);
        for (a, appliance) in set.appliances.iter().enumerate() {
            let mut t = rng.random_range(0..activity.off.end.max(1));
            while t < len {
                let on = rng.random_range(activity.on.clone());
                let state = rng.random_range(1..appliance.state_count());
                schedule.set(a, t..t + on, state);
                t += on + rng.random_range(activity.off.clone());
            }
        }
        schedule
    }
}

/// Duration ranges, in samples, for [`Schedule::random`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityProfile {
    pub on: std::ops::Range<usize>,
    pub off: std::ops::Range<usize>,
}

/// Ground-truth channels plus the noisy household total.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHouse {
    pub submetered: PowerTrace,
    pub aggregate: PowerTrace,
}

impl SyntheticHouse {
    /// One trace holding `aggregate` followed by every appliance channel.
    pub fn combined(&self) -> PowerTrace {
        let mut channels = self.aggregate.channels().to_vec();
        channels.extend(self.submetered.channels().iter().cloned());
        PowerTrace::new(
            self.aggregate.sample_period(),
            self.aggregate.start_time(),
            channels,
        )
        .expect("channels share length and period")
    }
}

/// Renders a schedule into per-appliance channels and a household total with
/// additive Gaussian noise. The noisy total is clipped at 0 W.
pub fn synthesize(
    set: &ApplianceSet,
    schedule: &Schedule,
    noise_sigma: f64,
    period: f64,
    seed: u64,
) -> Result<SyntheticHouse, IngestError> {
    if schedule.states.len() != set.len() {
        return Err(IngestError::ScheduleShape {
            got: schedule.states.len(),
            expected: set.len(),
        });
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(IngestError::Schema(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let len = schedule.len();
    let mut channels = Vec::with_capacity(set.len());
    for (appliance, states) in set.appliances.iter().zip(&schedule.states) {
        if states.len() != len {
            return Err(IngestError::LengthMismatch {
                name: appliance.name.clone(),
                len: states.len(),
                expected: len,
            });
        }
        let samples = states
            .iter()
            .enumerate()
            .map(|(sample, &state)| {
                appliance
                    .state_powers
                    .get(state)
                    .map(|p| p.watts())
                    .ok_or_else(|| IngestError::InvalidStateIndex {
                        appliance: appliance.name.clone(),
                        sample,
                        state,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        channels.push(Channel {
            name: appliance.name.clone(),
            samples,
        });
    }
    let mut total = aggregate_channels(&channels)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_sigma).expect("sigma checked above");
        for x in &mut total {
            *x = (*x + noise.sample(&mut rng)).max(0.0);
        }
    }
    Ok(SyntheticHouse {
        submetered: PowerTrace::new(period, 0.0, channels)?,
        aggregate: PowerTrace::single(crate::detection::AGGREGATE_CHANNEL, period, 0.0, total)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ApplianceModel;

    fn load(text: &str, period: f64) -> Result<LoadedTrace, IngestError> {
        load_csv_reader(text.as_bytes(), &CsvSchema::default(), period)
    }

    fn three_device_set() -> ApplianceSet {
        ApplianceSet::new(vec![
            ApplianceModel::from_watts("d1", &[0.0, 10.0]).unwrap(),
            ApplianceModel::from_watts("d2", &[0.0, 20.0]).unwrap(),
            ApplianceModel::from_watts("d3", &[0.0, 35.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn one_hertz_identity_load() {
        let t = load("timestamp,a,b\n0,1,2\n1,3,4\n2,5,6\n", 1.0).unwrap();
        assert_eq!(t.trace.len(), 3);
        assert_eq!(t.trace.channel("a").unwrap().samples, vec![1.0, 3.0, 5.0]);
        assert_eq!(t.trace.channel("b").unwrap().samples, vec![2.0, 4.0, 6.0]);
        assert_eq!(t.gap_count, 0);
    }

    #[test]
    fn forward_fill_repeats_values() {
        let t = load("timestamp,a\n0,1\n3,2\n6,3\n", 1.0).unwrap();
        assert_eq!(
            t.trace.channels()[0].samples,
            vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0]
        );
    }

    #[test]
    fn long_gap_is_zero_filled() {
        let mut text = String::from("timestamp,a\n");
        for t in 0..60 {
            text.push_str(&format!("{},100\n", t * 10));
        }
        // Ten-minute hole, then readings resume.
        for t in 0..6 {
            text.push_str(&format!("{},100\n", 1190 + t * 10));
        }
        let t = load(&text, 10.0).unwrap();
        assert_eq!(t.gap_count, 1);
        let s = &t.trace.channels()[0].samples;
        assert_eq!(s[59], 100.0);
        assert_eq!(s[60], 0.0);
        assert_eq!(s[118], 0.0);
        assert_eq!(s[119], 100.0);
        assert_eq!(t.zero_filled_samples, 59);
    }

    #[test]
    fn iso_timestamps_and_units() {
        let schema = CsvSchema::from_toml_str(
            r#"
            time_column = "time"
            [[channels]]
            column = "mains"
            name = "aggregate"
            unit = "kW"
            "#,
        )
        .unwrap();
        let text = "time,mains,other\n2014-01-01T00:00:00Z,1.5,9\n2014-01-01 00:00:02,0.25,9\n";
        let t = load_csv_reader(text.as_bytes(), &schema, 1.0).unwrap();
        assert_eq!(t.trace.start_time(), 1388534400.0);
        assert_eq!(
            t.trace.channel("aggregate").unwrap().samples,
            vec![1500.0, 1500.0, 250.0]
        );
    }

    #[test]
    fn row_level_errors() {
        assert!(matches!(
            load("timestamp,a\n0,1\n1,-5\n", 1.0),
            Err(IngestError::InvalidPower { line: 3, .. })
        ));
        assert!(matches!(
            load("timestamp,a\n0,1\n1,NaN\n", 1.0),
            Err(IngestError::InvalidPower { line: 3, .. })
        ));
        assert!(matches!(
            load("timestamp,a\n0,1\nyesterday,2\n", 1.0),
            Err(IngestError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            load("timestamp,a\n5,1\n4,2\n", 1.0),
            Err(IngestError::NonMonotone { line: 3, .. })
        ));
        assert!(matches!(load("timestamp,a\n", 1.0), Err(IngestError::Empty)));
        assert!(matches!(
            load("time,a\n0,1\n", 1.0),
            Err(IngestError::MissingColumn(_))
        ));
    }

    #[test]
    fn aggregate_sums_channels() {
        let trace = PowerTrace::new(
            1.0,
            0.0,
            vec![
                Channel {
                    name: "a".into(),
                    samples: vec![100.0, 100.0],
                },
                Channel {
                    name: "b".into(),
                    samples: vec![0.0, 50.0],
                },
            ],
        )
        .unwrap();
        assert_eq!(aggregate(&trace).unwrap().channels()[0].samples, vec![100.0, 150.0]);
        let single = PowerTrace::single("a", 1.0, 0.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(aggregate(&single).unwrap().channels()[0].samples, vec![1.0, 2.0]);
        let bad = [
            Channel {
                name: "a".into(),
                samples: vec![1.0],
            },
            Channel {
                name: "b".into(),
                samples: vec![1.0, 2.0],
            },
        ];
        assert!(matches!(
            aggregate_channels(&bad),
            Err(IngestError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn six_channel_aggregate_matches_resum() {
        let levels: Vec<Vec<f64>> = (0..6).map(|i| vec![0.0, 40.0 + 130.0 * i as f64, 25.5 * (i + 1) as f64]).collect();
        let set = ApplianceSet::new(
            levels
                .iter()
                .enumerate()
                .map(|(i, l)| ApplianceModel::from_watts(format!("a{i}"), l).unwrap())
                .collect(),
        )
        .unwrap();
        let activity = ActivityProfile { on: 5..30, off: 10..60 };
        let schedule = Schedule::random(&set, 2000, &activity, 3);
        let house = synthesize(&set, &schedule, 0.0, 1.0, 3).unwrap();
        let agg = aggregate(&house.submetered).unwrap();
        for t in 0..2000 {
            let mut brute = 0.0;
            for ch in house.submetered.channels() {
                brute += ch.samples[t];
            }
            assert_eq!(agg.channels()[0].samples[t], brute);
            assert_eq!(house.aggregate.channels()[0].samples[t], brute);
        }
    }

    #[test]
    fn synthesize_cases() {
        let set = ApplianceSet::new(vec![ApplianceModel::from_watts("a", &[0.0, 60.0]).unwrap()])
            .unwrap();
        let schedule = Schedule {
            states: vec![vec![1; 10]],
        };
        let h = synthesize(&set, &schedule, 0.0, 1.0, 0).unwrap();
        assert_eq!(h.submetered.channels()[0].samples, vec![60.0; 10]);

        let set3 = three_device_set();
        let mut s3 = Schedule::all_off(3, 10);
        s3.set(0, 2..8, 1);
        s3.set(1, 2..8, 1);
        let h3 = synthesize(&set3, &s3, 0.0, 1.0, 0).unwrap();
        assert_eq!(h3.aggregate.channels()[0].samples[4], 30.0);

        let a = synthesize(&set3, &s3, 2.0, 1.0, 9).unwrap();
        let b = synthesize(&set3, &s3, 2.0, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.aggregate, h3.aggregate);

        let bad = Schedule {
            states: vec![vec![2; 3]],
        };
        assert!(matches!(
            synthesize(&set, &bad, 0.0, 1.0, 0),
            Err(IngestError::InvalidStateIndex { state: 2, .. })
        ));
    }

    #[test]
    fn write_then_load_is_lossless() {
        let trace = PowerTrace::new(
            2.0,
            1_400_000_000.0,
            vec![
                Channel {
                    name: "a".into(),
                    samples: vec![0.1, 123.456, 7.0, 0.0],
                },
                Channel {
                    name: "b".into(),
                    samples: vec![1e-3, 2.5, 1800.0, 3.0],
                },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&trace, &mut buf).unwrap();
        let back = load_csv_reader(buf.as_slice(), &CsvSchema::default(), 2.0).unwrap();
        assert_eq!(back.trace, trace);
    }
}
