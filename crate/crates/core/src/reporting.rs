//! Plot-ready evaluation artifacts: spectrum summaries, per-sample
//! complexity grids and real-vs-estimated energy tables.
//!
//! Every report is a pure function of its inputs and carries a provenance
//! block (sigma, seed, config hashes) so numbers can be traced to the
//! parameters that produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::complexity::TimeSeriesComplexity;
use crate::domain::{ComplexitySpectrum, DisaggregationResult, SpectrumEntry, Summary};

/// Written in place of cells whose value does not exist (for example a power
/// value that a given appliance set cannot produce).
pub const ABSENT_SENTINEL: &str = "-1";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error("no {kind} summary for `{label}`")]
    MissingComplexity { label: String, kind: &'static str },
    #[error("label `{0}` has a complexity summary but no disaggregation result")]
    UnknownLabel(String),
    #[error("result `{0}` has not been scored against ground truth")]
    Unscored(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

/// Parameters a report was produced with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub config_hashes: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub params: BTreeMap<String, String>,
}

impl Provenance {
    pub fn with_sigma(sigma: f64) -> Self {
        Provenance {
            sigma: Some(sigma),
            ..Default::default()
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn hash_of(mut self, key: &str, config: &impl Serialize) -> Self {
        self.config_hashes.insert(key.to_string(), config_hash(config));
        self
    }

    /// `# key: value` lines for the top of a CSV file.
    pub fn csv_header(&self) -> String {
        let mut out = String::new();
        if let Some(s) = self.sigma {
            writeln!(out, "# sigma: {s}").unwrap();
        }
        if let Some(s) = self.seed {
            writeln!(out, "# seed: {s}").unwrap();
        }
        for (k, v) in &self.config_hashes {
            writeln!(out, "# config_hash.{k}: {v}").unwrap();
        }
        for (k, v) in &self.params {
            writeln!(out, "# {k}: {v}").unwrap();
        }
        out
    }
}

/// Short SHA-256 of a config's JSON form.
pub fn config_hash(config: &impl Serialize) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..8])
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn with_provenance<T: Serialize>(provenance: &Provenance, body: &T) -> String {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        body: &'a T,
    }
    let mut s = serde_json::to_string_pretty(&Doc { provenance, body }).expect("report serializes");
    s.push('\n');
    s
}

/// One line per aggregated power: `power_w,complexity,multiplicity`.
pub fn spectrum_csv(spectrum: &ComplexitySpectrum, provenance: &Provenance) -> String {
    let mut out = provenance.csv_header();
    out.push_str("power_w,complexity,multiplicity\n");
    for (p, c, m) in spectrum.grouped() {
        writeln!(out, "{p},{c:.9},{m}").unwrap();
    }
    out
}

/// Reads [`spectrum_csv`] output back, expanding multiplicities.
pub fn parse_spectrum_csv(text: &str, sigma: f64) -> Result<ComplexitySpectrum, ReportError> {
    let mut entries = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let bad = |message: &str| ReportError::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad("expected power_w,complexity,multiplicity"));
        }
        let power_w: f64 = fields[0].parse().map_err(|_| bad("bad power"))?;
        let complexity: f64 = fields[1].parse().map_err(|_| bad("bad complexity"))?;
        let m: u64 = fields[2].parse().map_err(|_| bad("bad multiplicity"))?;
        entries.extend((0..m).map(|_| SpectrumEntry {
            power_w,
            complexity,
        }));
    }
    if entries.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(ComplexitySpectrum::new(entries, sigma))
}

/// Per-sample complexity: `t,power_w,c_t`.
pub fn timeseries_csv(
    timestamps: impl IntoIterator<Item = f64>,
    samples: &[f64],
    ts: &TimeSeriesComplexity,
    provenance: &Provenance,
) -> String {
    let mut out = provenance.csv_header();
    out.push_str("t,power_w,c_t\n");
    for ((t, p), c) in timestamps.into_iter().zip(samples).zip(&ts.per_sample) {
        writeln!(out, "{t},{p},{c:.9}").unwrap();
    }
    out
}

/// Reads the `c_t` column of [`timeseries_csv`] output.
pub fn parse_timeseries_csv(text: &str) -> Result<Vec<(f64, f64)>, ReportError> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (fields.len() == 3)
            .then(|| Some((fields[0].parse().ok()?, fields[2].parse().ok()?)))
            .flatten();
        out.push(parsed.ok_or(ReportError::Parse {
            line: i + 1,
            message: "expected t,power_w,c_t".into(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub label: String,
    pub max: f64,
    pub mean: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub rows: Vec<SpectrumRow>,
}

/// Max and mean complexity per labelled spectrum.
pub fn spectrum_report(spectra: &[(String, ComplexitySpectrum)]) -> Result<SpectrumTable, ReportError> {
    if spectra.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(SpectrumTable {
        rows: spectra
            .iter()
            .map(|(label, s)| SpectrumRow {
                label: label.clone(),
                max: s.summary.max,
                mean: s.summary.mean,
                m: s.len(),
            })
            .collect(),
    })
}

impl SpectrumTable {
    pub fn render(&self, format: ReportFormat, provenance: &Provenance) -> String {
        match format {
            ReportFormat::Json => with_provenance(provenance, self),
            ReportFormat::Csv => {
                let mut out = provenance.csv_header();
                out.push_str("label,max,mean,m\n");
                for r in &self.rows {
                    writeln!(out, "{},{},{},{}", r.label, fmt_f(r.max), fmt_f(r.mean), r.m).unwrap();
                }
                out
            }
        }
    }
}

/// Complexities normalized to the largest value in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColormapGrid {
    pub raw_max: f64,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`; `None` where no value exists.
    pub cells: Vec<Vec<Option<f64>>>,
}

/// Normalizes a grid by its global maximum.
pub fn colormap_grid(
    rows: Vec<String>,
    columns: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
) -> Result<ColormapGrid, ReportError> {
    let raw_max = values
        .iter()
        .flatten()
        .flatten()
        .copied()
        .fold(None::<f64>, |m, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(ReportError::Empty)?;
    let cells = values
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|c| c.map(|v| if raw_max > 0.0 { v / raw_max } else { 1.0 }))
                .collect()
        })
        .collect();
    Ok(ColormapGrid {
        raw_max,
        rows,
        columns,
        cells,
    })
}

/// Spectra side by side over the union of their power values; powers a set
/// cannot produce are left absent.
pub fn spectrum_grid(spectra: &[(String, ComplexitySpectrum)]) -> Result<ColormapGrid, ReportError> {
    let mut powers: Vec<f64> = spectra
        .iter()
        .flat_map(|(_, s)| s.entries.iter().map(|e| e.power_w))
        .collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    let values = spectra
        .iter()
        .map(|(_, s)| {
            let by_power: BTreeMap<u64, f64> = s
                .entries
                .iter()
                .map(|e| (e.power_w.to_bits(), e.complexity))
                .collect();
            powers
                .iter()
                .map(|p| by_power.get(&p.to_bits()).copied())
                .collect()
        })
        .collect();
    colormap_grid(
        spectra.iter().map(|(l, _)| l.clone()).collect(),
        powers.iter().map(|p| p.to_string()).collect(),
        values,
    )
}

/// A single-row grid of per-sample complexities, one column per sample.
pub fn timeseries_grid(label: &str, ts: &TimeSeriesComplexity) -> Result<ColormapGrid, ReportError> {
    colormap_grid(
        vec![label.to_string()],
        (0..ts.per_sample.len()).map(|i| i.to_string()).collect(),
        vec![ts.per_sample.iter().map(|&c| Some(c)).collect()],
    )
}

impl ColormapGrid {
    /// Position of the largest normalized cell.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (r, row) in self.cells.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some(((r, c), v));
                    }
                }
            }
        }
        best.map(|(pos, _)| pos)
    }

    pub fn render(&self, format: ReportFormat, provenance: &Provenance) -> String {
        match format {
            ReportFormat::Json => with_provenance(provenance, self),
            ReportFormat::Csv => {
                let mut out = provenance.csv_header();
                writeln!(out, "# raw_max: {}", self.raw_max).unwrap();
                writeln!(out, "# absent: {ABSENT_SENTINEL}").unwrap();
                out.push_str("row,column,value\n");
                for (r, row) in self.rows.iter().zip(&self.cells) {
                    for (c, v) in self.columns.iter().zip(row) {
                        match v {
                            Some(v) => writeln!(out, "{r},{c},{}", fmt_f(*v)).unwrap(),
                            None => writeln!(out, "{r},{c},{ABSENT_SENTINEL}").unwrap(),
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub label: String,
    /// Appliance name, or `total`.
    pub appliance: String,
    pub real_kwh: f64,
    pub estimated_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityColumns {
    pub ac: Summary,
    pub tc: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub rows: Vec<EnergyRow>,
    /// Appliance-set (AC) and time-series (TC) complexity per label.
    pub complexity: BTreeMap<String, ComplexityColumns>,
}

fn energy_rows(label: &str, result: &DisaggregationResult) -> Result<Vec<EnergyRow>, ReportError> {
    let unscored = || ReportError::Unscored(label.to_string());
    let mut rows = Vec::with_capacity(result.appliances.len() + 1);
    for a in &result.appliances {
        rows.push(EnergyRow {
            label: label.to_string(),
            appliance: a.name.clone(),
            real_kwh: a.real_kwh.ok_or_else(unscored)?,
            estimated_kwh: a.estimated_kwh,
        });
    }
    rows.push(EnergyRow {
        label: label.to_string(),
        appliance: "total".into(),
        real_kwh: result.total_real_kwh.ok_or_else(unscored)?,
        estimated_kwh: result.total_estimated_kwh,
    });
    Ok(rows)
}

/// Real and estimated energy for one scored run, without complexity columns.
pub fn score_table(label: &str, result: &DisaggregationResult) -> Result<EnergyTable, ReportError> {
    Ok(EnergyTable {
        rows: energy_rows(label, result)?,
        complexity: BTreeMap::new(),
    })
}

/// Real vs estimated energy per appliance next to the appliance-set and
/// time-series complexity of each labelled run.
pub fn energy_table(
    results: &[(String, DisaggregationResult)],
    ac: &BTreeMap<String, Summary>,
    tc: &BTreeMap<String, Summary>,
) -> Result<EnergyTable, ReportError> {
    if results.is_empty() {
        return Err(ReportError::Empty);
    }
    for label in ac.keys().chain(tc.keys()) {
        if !results.iter().any(|(l, _)| l == label) {
            return Err(ReportError::UnknownLabel(label.clone()));
        }
    }
    let mut rows = Vec::new();
    let mut complexity = BTreeMap::new();
    for (label, result) in results {
        let missing = |kind| ReportError::MissingComplexity {
            label: label.clone(),
            kind,
        };
        let columns = ComplexityColumns {
            ac: *ac.get(label).ok_or_else(|| missing("appliance-set complexity"))?,
            tc: *tc.get(label).ok_or_else(|| missing("time-series complexity"))?,
        };
        rows.extend(energy_rows(label, result)?);
        complexity.insert(label.clone(), columns);
    }
    Ok(EnergyTable { rows, complexity })
}

impl EnergyTable {
    pub fn render(&self, format: ReportFormat, provenance: &Provenance) -> String {
        match format {
            ReportFormat::Json => with_provenance(provenance, self),
            ReportFormat::Csv => {
                let mut out = provenance.csv_header();
                out.push_str("label,appliance,real_kwh,estimated_kwh,ac_mean,ac_max,tc_mean,tc_max\n");
                for r in &self.rows {
                    let cx = match self.complexity.get(&r.label) {
                        Some(c) => format!(
                            "{},{},{},{}",
                            fmt_f(c.ac.mean),
                            fmt_f(c.ac.max),
                            fmt_f(c.tc.mean),
                            fmt_f(c.tc.max)
                        ),
                        None => ",,,".to_string(),
                    };
                    writeln!(
                        out,
                        "{},{},{},{},{cx}",
                        r.label,
                        r.appliance,
                        fmt_f(r.real_kwh),
                        fmt_f(r.estimated_kwh)
                    )
                    .unwrap();
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ApplianceEstimate;

    fn spec_of(values: &[(f64, f64)]) -> ComplexitySpectrum {
        ComplexitySpectrum::new(
            values
                .iter()
                .map(|&(power_w, complexity)| SpectrumEntry { power_w, complexity })
                .collect(),
            5.0,
        )
    }

    fn scored(name: &str, real: f64, est: f64) -> DisaggregationResult {
        DisaggregationResult {
            sample_period: 1.0,
            appliances: vec![ApplianceEstimate {
                name: name.into(),
                states: vec![],
                estimated_kwh: est,
                real_kwh: Some(real),
            }],
            total_estimated_kwh: est,
            total_real_kwh: Some(real),
            degenerate_steps: 0,
        }
    }

    #[test]
    fn spectrum_summary_arithmetic() {
        let t = spectrum_report(&[("h".into(), spec_of(&[(0.0, 0.5), (10.0, 1.0), (20.0, 0.5)]))]).unwrap();
        assert!((t.rows[0].mean - 0.6667).abs() < 1e-4);
        assert_eq!(t.rows[0].max, 1.0);
        let eight: Vec<(f64, f64)> = (0..8)
            .map(|i| (i as f64, if i == 0 || i == 7 { 0.5 } else { 1.0 }))
            .collect();
        let t8 = spectrum_report(&[("eight".into(), spec_of(&eight))]).unwrap();
        assert_eq!(t8.rows[0].mean, 0.875);
        assert_eq!(spectrum_report(&[]), Err(ReportError::Empty));
        let csv = t.render(ReportFormat::Csv, &Provenance::with_sigma(5.0));
        assert!(csv.starts_with("# sigma: 5\nlabel,max,mean,m\nh,1.000000,0.666667,3\n"));
    }

    #[test]
    fn colormap_normalization() {
        let g = colormap_grid(
            vec!["r".into()],
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![Some(1.0), Some(2.0), Some(4.0)]],
        )
        .unwrap();
        assert_eq!(g.cells[0], vec![Some(0.25), Some(0.5), Some(1.0)]);
        assert_eq!(g.raw_max, 4.0);
        let eq = colormap_grid(vec!["r".into()], vec!["a".into(), "b".into()], vec![vec![Some(3.0), Some(3.0)]]).unwrap();
        assert_eq!(eq.cells[0], vec![Some(1.0), Some(1.0)]);
        assert_eq!(colormap_grid(vec![], vec![], vec![vec![None]]), Err(ReportError::Empty));
    }

    #[test]
    fn spectrum_grid_marks_impossible_values() {
        let a = spec_of(&[(0.0, 0.5), (100.0, 0.5)]);
        let b = spec_of(&[(0.0, 0.5), (50.0, 1.0), (100.0, 0.5)]);
        let g = spectrum_grid(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert_eq!(g.columns, vec!["0", "50", "100"]);
        assert_eq!(g.cells[0][1], None);
        assert_eq!(g.cells[1][1], Some(1.0));
        let csv = g.render(ReportFormat::Csv, &Provenance::default());
        assert!(csv.contains("a,50,-1\n"));
    }

    #[test]
    fn energy_table_cases() {
        let results = vec![("h1".to_string(), scored("fridge", 1.5, 1.5))];
        let s = Summary { mean: 1.2, max: 2.0 };
        let ac: BTreeMap<_, _> = [("h1".to_string(), s)].into();
        let tc: BTreeMap<_, _> = [("h1".to_string(), s)].into();
        let t = energy_table(&results, &ac, &tc).unwrap();
        assert!(t.rows.iter().all(|r| r.real_kwh == r.estimated_kwh));
        assert_eq!(t.rows.last().unwrap().appliance, "total");
        let csv = t.render(ReportFormat::Csv, &Provenance::default());
        assert!(csv.contains("h1,fridge,1.500000,1.500000,1.200000,2.000000,1.200000,2.000000"));

        assert!(matches!(
            energy_table(&results, &ac, &BTreeMap::new()),
            Err(ReportError::MissingComplexity { .. })
        ));
        let stray: BTreeMap<_, _> = [("h2".to_string(), s)].into();
        assert_eq!(
            energy_table(&results, &stray, &tc),
            Err(ReportError::UnknownLabel("h2".into()))
        );
        let mut unscored = scored("fridge", 0.0, 0.0);
        unscored.total_real_kwh = None;
        assert!(matches!(score_table("x", &unscored), Err(ReportError::Unscored(_))));
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = spec_of(&[(0.0, 0.5), (100.0, 2.0), (100.0, 2.0), (200.0, 0.5)]);
        let text = spectrum_csv(&s, &Provenance::with_sigma(5.0));
        assert!(text.contains("100,2.000000000,2\n"));
        let back = parse_spectrum_csv(&text, 5.0).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn provenance_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"x": 1}));
        assert_eq!(a, config_hash(&serde_json::json!({"x": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"x": 2})));
        assert_eq!(a.len(), 16);
    }
}
