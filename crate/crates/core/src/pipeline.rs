//! Seeded end-to-end run on a synthetic house: synthesize, detect states,
//! compute both complexities, disaggregate, score and report.
//!
//! Outputs are a deterministic function of [`PipelineConfig`], so two runs
//! with the same config produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{self, ComplexityError, OverlapKernel, DEFAULT_SIGMA};
use crate::detection::{self, DetectionConfig, DetectionError, DetectionMode};
use crate::disaggregator::{self, DisaggError, PfConfig};
use crate::domain::{ApplianceModel, ApplianceSet, DomainError};
use crate::enumeration::{self, EnumerationBudget, EnumerationError};
use crate::ingestion::{self, ActivityProfile, IngestError, Schedule};
use crate::reporting::{self, Provenance, ReportError, ReportFormat};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Enumeration(#[from] EnumerationError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Disagg(#[from] DisaggError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("no appliance detected")]
    NothingDetected,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub samples: usize,
    pub sample_period: f64,
    pub noise_sigma: f64,
    pub sigma: f64,
    pub particles: usize,
    pub detection: DetectionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            samples: 7200,
            sample_period: 1.0,
            noise_sigma: 5.0,
            sigma: DEFAULT_SIGMA,
            particles: 1000,
            detection: DetectionConfig::default(),
        }
    }
}

/// The six appliances of the synthetic demo house.
pub fn demo_house() -> ApplianceSet {
    let a = |name: &str, w: &[f64]| ApplianceModel::from_watts(name, w).expect("valid demo appliance");
    ApplianceSet::new(vec![
        a("fridge", &[0.0, 150.0]),
        a("kettle", &[0.0, 1800.0]),
        a("microwave", &[0.0, 800.0, 1250.0]),
        a("washer", &[0.0, 200.0, 2100.0]),
        a("tv", &[0.0, 110.0]),
        a("lamp", &[0.0, 60.0]),
    ])
    .expect("valid demo house")
}

/// Named output files, in a stable order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineOutputs {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl PipelineOutputs {
    fn put(&mut self, name: &str, text: String) {
        self.files.insert(name.to_string(), text.into_bytes());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| PipelineError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(())
    }
}

pub fn run(config: &PipelineConfig) -> Result<PipelineOutputs, PipelineError> {
    let house = demo_house();
    let profile = ActivityProfile {
        on: 60..600,
        off: 300..3000,
    };
    let schedule = Schedule::random(&house, config.samples, &profile, config.seed);
    let synth = ingestion::synthesize(
        &house,
        &schedule,
        config.noise_sigma,
        config.sample_period,
        config.seed.wrapping_add(1),
    )?;
    let combined = synth.combined();
    let provenance = Provenance::with_sigma(config.sigma)
        .hash_of("pipeline", config)
        .param("samples", config.samples)
        .param("sample_period", config.sample_period);
    let provenance = Provenance {
        seed: Some(config.seed),
        ..provenance
    };

    let mut out = PipelineOutputs::default();
    let mut trace_csv = Vec::new();
    ingestion::write_csv(&combined, &mut trace_csv)?;
    out.files.insert("trace.csv".into(), trace_csv);

    let detected = detection::detect(&synth.submetered, &config.detection, DetectionMode::Submetered)?;
    let set = detected.to_appliance_set()?;
    if set.is_empty() {
        return Err(PipelineError::NothingDetected);
    }
    out.put("appliances.json", set.to_json_string());

    let values = enumeration::enumerate_values(&set, EnumerationBudget::default())?;
    let kernel = OverlapKernel::for_values(config.sigma, &values)?;
    let spectrum = complexity::spectrum(&values, &kernel)?;
    out.put("spectrum.csv", reporting::spectrum_csv(&spectrum, &provenance));

    let aggregate = &synth.aggregate.channels()[0].samples;
    let ts = complexity::timeseries_complexity(aggregate, &values, &kernel)?;
    out.put(
        "ct.csv",
        reporting::timeseries_csv(
            (0..aggregate.len()).map(|i| synth.aggregate.timestamp(i)),
            aggregate,
            &ts,
            &provenance,
        ),
    );

    let pf = PfConfig {
        particle_count: config.particles,
        sigma_obs: config.noise_sigma.max(1.0),
        seed: config.seed,
        ..PfConfig::default()
    };
    let hmms = disaggregator::build_fhmm(&set, &pf)?;
    let result = disaggregator::disaggregate(aggregate, config.sample_period, &hmms, &pf)?;
    let scored = disaggregator::score(&result, &synth.submetered)?;

    let label = "demo".to_string();
    let spectra = [(label.clone(), spectrum.clone())];
    out.put(
        "spectrum_table.csv",
        reporting::spectrum_report(&spectra)?.render(ReportFormat::Csv, &provenance),
    );
    let ac = BTreeMap::from([(label.clone(), spectrum.summary)]);
    let tc = BTreeMap::from([(label.clone(), ts.summary())]);
    let table = reporting::energy_table(&[(label, scored.clone())], &ac, &tc)?;
    out.put("energy_table.csv", table.render(ReportFormat::Csv, &provenance));
    out.put("energy_table.json", table.render(ReportFormat::Json, &provenance));

    #[derive(Serialize)]
    struct Summary<'a> {
        provenance: &'a Provenance,
        m: u64,
        ac_mean: f64,
        ac_max: f64,
        c_total: f64,
        tc_max: f64,
        degenerate_steps: usize,
        mean_relative_energy_error: Option<f64>,
    }
    let summary = Summary {
        provenance: &provenance,
        m: values.m_total(),
        ac_mean: spectrum.summary.mean,
        ac_max: spectrum.summary.max,
        c_total: ts.c_total,
        tc_max: ts.max,
        degenerate_steps: scored.degenerate_steps,
        mean_relative_energy_error: disaggregator::mean_relative_energy_error(&scored),
    };
    out.put(
        "summary.json",
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    );
    Ok(out)
}
