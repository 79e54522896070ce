//! Measures how hard a load-disaggregation problem is, independently of any
//! disaggregation algorithm.
//!
//! The crate enumerates the aggregated power values an appliance set can
//! produce, scores how confusable each value is (appliance-set complexity)
//! and how confusable an observed trace is on average (time-series
//! complexity). Power states can be detected from raw traces, and a bootstrap
//! particle filter over a factorial HMM serves as a reference disaggregator
//! to check that complexity tracks actual difficulty.

pub mod complexity;
pub mod detection;
pub mod disaggregator;
pub mod domain;
pub mod enumeration;
pub mod ingestion;
pub mod pipeline;
pub mod reporting;

pub use complexity::{
    complexity_of_value, histogram_states, ovl, spectrum, timeseries_complexity, ComplexityError,
    OverlapKernel, OverlapMode, TimeSeriesComplexity,
};
pub use domain::{
    validate_appliance_set, AggregatedValue, AggregatedValueSet, ApplianceModel, ApplianceSet,
    Channel, ComplexitySpectrum, DetectedStateSet, DisaggregationResult, DomainError,
    GaussianSpec, Power, PowerTrace, SpectrumEntry, Summary,
};
pub use enumeration::{count_combinations, enumerate_values, EnumerationBudget, EnumerationError};
pub use detection::{detect, DetectionConfig, DetectionError, DetectionMode};
pub use disaggregator::{build_fhmm, disaggregate, score, DisaggError, PfConfig};
pub use ingestion::{aggregate, load_csv, synthesize, CsvSchema, IngestError, Schedule};
pub use pipeline::{PipelineConfig, PipelineError, PipelineOutputs};
pub use reporting::{
    colormap_grid, energy_table, spectrum_report, ColormapGrid, EnergyTable, Provenance,
    ReportError, ReportFormat, SpectrumTable,
};
