use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nilm_complexity::complexity::{self, DEFAULT_SIGMA};
use nilm_complexity::detection::{self, AGGREGATE_CHANNEL};
use nilm_complexity::disaggregator::{self, mean_relative_energy_error};
use nilm_complexity::domain::ApplianceSet;
use nilm_complexity::enumeration::{self, EnumerationBudget, DEFAULT_MAX_COMBINATIONS};
use nilm_complexity::ingestion::{self, ActivityProfile, CsvSchema, Schedule};
use nilm_complexity::pipeline::{self, PipelineConfig};
use nilm_complexity::reporting::{self, Provenance, ReportFormat};
use nilm_complexity::{
    AggregatedValueSet, DetectionConfig, DetectionMode, DisaggregationResult, OverlapKernel,
    OverlapMode, PfConfig, PowerTrace, Summary,
};

#[derive(Parser)]
#[command(name = "nilmcx", version, about = "Disaggregation complexity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count and list the aggregated power values of an appliance set
    Enumerate(EnumerateArgs),
    /// Complexity of every aggregated value of an appliance set
    SetComplexity(SetComplexityArgs),
    /// Per-sample complexity of a power trace
    TsComplexity(TsComplexityArgs),
    /// Detect appliance power states from a trace
    Detect(DetectArgs),
    /// Run the particle-filter disaggregator on an aggregate trace
    Disaggregate(DisaggregateArgs),
    /// Compare a disaggregation result with submetered ground truth
    Score(ScoreArgs),
    /// Build report tables
    #[command(subcommand)]
    Report(ReportCommand),
    /// Generate a synthetic house trace from an appliance set
    Synth(SynthArgs),
    /// Seeded end-to-end run on a built-in synthetic house
    Demo(DemoArgs),
}

#[derive(Args)]
struct BudgetArgs {
    /// Refuse sets with more combinations than this
    #[arg(long, default_value_t = DEFAULT_MAX_COMBINATIONS)]
    max_combinations: u64,
    /// Enumerate even past the combination limit
    #[arg(long)]
    force: bool,
}

impl BudgetArgs {
    fn budget(&self) -> EnumerationBudget {
        EnumerationBudget {
            max_combinations: self.max_combinations,
            force: self.force,
        }
    }
}

#[derive(Args)]
struct TraceArgs {
    /// CSV trace
    #[arg(long)]
    trace: PathBuf,
    /// Column mapping (TOML or JSON)
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Resampling period in seconds
    #[arg(long, default_value_t = 1.0)]
    period: f64,
}

impl TraceArgs {
    fn load(&self) -> Result<PowerTrace> {
        let schema = match &self.schema {
            None => CsvSchema::default(),
            Some(p) => {
                let text = read(p)?;
                if p.extension().is_some_and(|e| e == "json") {
                    CsvSchema::from_json_str(&text)?
                } else {
                    CsvSchema::from_toml_str(&text)?
                }
            }
        };
        let loaded = ingestion::load_csv(&self.trace, &schema, self.period)
            .with_context(|| format!("loading {}", self.trace.display()))?;
        if loaded.gap_count > 0 {
            log::warn!(
                "{} gaps, {} samples zero-filled",
                loaded.gap_count,
                loaded.zero_filled_samples
            );
        }
        Ok(loaded.trace)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Numeric,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long)]
    appliances: PathBuf,
    /// Write power_w,multiplicity rows here
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct SetComplexityArgs {
    #[arg(long)]
    appliances: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "analytic")]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write the summary JSON here
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct TsComplexityArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Channel to score; defaults to `aggregate`, the only channel, or the sum
    #[arg(long)]
    channel: Option<String>,
    /// Appliance set; without it states come from the trace histogram
    #[arg(long)]
    appliances: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Histogram bin width in watts
    #[arg(long, default_value_t = 10.0)]
    bin: f64,
    /// Histogram samples below this are ignored
    #[arg(long, default_value_t = 10.0)]
    floor: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectModeArg {
    Submetered,
    Aggregated,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_enum, default_value = "submetered")]
    mode: DetectModeArg,
    /// Detection parameters (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DisaggregateArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    appliances: PathBuf,
    #[arg(long, default_value_t = 1000)]
    particles: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Observation noise in watts
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma_obs: f64,
    #[arg(long, default_value_t = 0.95)]
    p_stay: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Result JSON from `disaggregate`
    #[arg(long)]
    result: PathBuf,
    #[command(flatten)]
    truth: TraceArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long, default_value = "run")]
    label: String,
    /// Also write the result with real energies filled in, for `report energy`
    #[arg(long)]
    scored: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Max and mean complexity per spectrum
    Spectrum {
        /// label=spectrum.csv, repeatable
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalized complexity grid from spectra or a per-sample file
    Colormap {
        /// label=spectrum.csv, repeatable
        #[arg(long = "spectrum")]
        spectra: Vec<String>,
        /// label=ct.csv
        #[arg(long, conflicts_with = "spectra")]
        ct: Option<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Real vs estimated energy next to both complexities
    Energy {
        /// label=result.json (scored), repeatable
        #[arg(long = "result", required = true)]
        results: Vec<String>,
        /// label=spectrum.csv
        #[arg(long = "ac")]
        ac: Vec<String>,
        /// label=ct.csv
        #[arg(long = "tc")]
        tc: Vec<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    appliances: PathBuf,
    #[arg(long, default_value_t = 86_400)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    period: f64,
    /// Noise added to the aggregate, in watts
    #[arg(long, default_value_t = 5.0)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// On durations, in samples, as min..max
    #[arg(long, default_value = "60..600")]
    on: String,
    /// Off durations, in samples, as min..max
    #[arg(long, default_value = "300..3000")]
    off: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config (TOML); flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<String> {
    let s = serde_json::to_string_pretty(value)? + "\n";
    print!("{s}");
    Ok(s)
}

fn load_set(path: &Path) -> Result<ApplianceSet> {
    ApplianceSet::from_json_file(path).with_context(|| format!("loading {}", path.display()))
}

fn labelled(arg: &str) -> Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok((l.to_string(), PathBuf::from(p))),
        _ => bail!("expected label=path, got `{arg}`"),
    }
}

fn pick_channel(trace: &PowerTrace, name: Option<&str>) -> Result<Vec<f64>> {
    if let Some(name) = name {
        return match trace.channel(name) {
            Some(c) => Ok(c.samples.clone()),
            None => bail!("no channel `{name}` in trace"),
        };
    }
    if let Some(c) = trace.channel(AGGREGATE_CHANNEL) {
        return Ok(c.samples.clone());
    }
    if trace.channels().len() == 1 {
        return Ok(trace.channels()[0].samples.clone());
    }
    Ok(ingestion::aggregate_channels(trace.channels())?)
}

fn kernel(sigma: f64, values: &AggregatedValueSet, mode: ModeArg) -> Result<OverlapKernel> {
    if sigma == DEFAULT_SIGMA {
        log::info!("sigma = {sigma} W");
    }
    let k = OverlapKernel::for_values(sigma, values)?;
    Ok(match mode {
        ModeArg::Analytic => k,
        ModeArg::Numeric => k.with_mode(OverlapMode::Numeric)?,
    })
}

fn enumerate_cmd(a: EnumerateArgs) -> Result<()> {
    let set = load_set(&a.appliances)?;
    let m = enumeration::count_combinations(&set)?;
    println!("{m}");
    if let Some(out) = &a.out {
        let values = enumeration::enumerate_values(&set, a.budget.budget())?;
        let mut csv = String::from("power_w,multiplicity\n");
        for g in values.groups() {
            csv.push_str(&format!("{},{}\n", g.power, g.multiplicity));
        }
        write(out, &csv)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SetSummary {
    mean: f64,
    max: f64,
    m: u64,
    sigma: f64,
}

fn set_complexity_cmd(a: SetComplexityArgs) -> Result<()> {
    let set = load_set(&a.appliances)?;
    let values = enumeration::enumerate_values(&set, a.budget.budget())?;
    let k = kernel(a.sigma, &values, a.mode)?;
    let spectrum = complexity::spectrum(&values, &k)?;
    let provenance = Provenance::with_sigma(a.sigma).hash_of("appliances", &set);
    write(&a.out, &reporting::spectrum_csv(&spectrum, &provenance))?;
    let json = print_json(&SetSummary {
        mean: spectrum.summary.mean,
        max: spectrum.summary.max,
        m: values.m_total(),
        sigma: a.sigma,
    })?;
    if let Some(p) = &a.summary {
        write(p, &json)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TsSummary {
    c_total: f64,
    max: f64,
    samples: usize,
    sigma: f64,
    metadata_free: bool,
}

fn ts_complexity_cmd(a: TsComplexityArgs) -> Result<()> {
    let trace = a.trace.load()?;
    let samples = pick_channel(&trace, a.channel.as_deref())?;
    let values = match &a.appliances {
        Some(p) => enumeration::enumerate_values(&load_set(p)?, a.budget.budget())?,
        None => {
            log::warn!("no appliance set given, using histogram states");
            complexity::histogram_states(&samples, a.bin, a.floor)?
        }
    };
    let k = kernel(a.sigma, &values, ModeArg::Analytic)?;
    let ts = complexity::timeseries_complexity(&samples, &values, &k)?;
    let mut provenance = Provenance::with_sigma(a.sigma);
    if values.is_metadata_free() {
        provenance = provenance.param("states", "histogram");
    }
    write(
        &a.out,
        &reporting::timeseries_csv((0..samples.len()).map(|i| trace.timestamp(i)), &samples, &ts, &provenance),
    )?;
    let json = print_json(&TsSummary {
        c_total: ts.c_total,
        max: ts.max,
        samples: samples.len(),
        sigma: a.sigma,
        metadata_free: values.is_metadata_free(),
    })?;
    if let Some(p) = &a.summary {
        write(p, &json)?;
    }
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let trace = a.trace.load()?;
    let config = match &a.config {
        Some(p) => DetectionConfig::from_toml_str(&read(p)?)?,
        None => DetectionConfig::default(),
    };
    let mode = match a.mode {
        DetectModeArg::Submetered => DetectionMode::Submetered,
        DetectModeArg::Aggregated => DetectionMode::Aggregated,
    };
    let detected = detection::detect(&trace, &config, mode)?;
    if detected.is_empty() {
        log::warn!("no power state detected");
    }
    let set = detected.to_appliance_set()?;
    #[derive(Serialize)]
    struct Out<'a> {
        appliances: &'a [nilm_complexity::ApplianceModel],
        detected: &'a nilm_complexity::DetectedStateSet,
        config: &'a DetectionConfig,
        provenance: Provenance,
    }
    let provenance = Provenance::default()
        .hash_of("detection", &config)
        .param("trace", a.trace.trace.display())
        .param("mode", format!("{mode:?}").to_lowercase());
    let json = serde_json::to_string_pretty(&Out {
        appliances: &set.appliances,
        detected: detected.states(),
        config: &config,
        provenance,
    })? + "\n";
    write(&a.out, &json)?;
    println!("{} appliances", set.len());
    Ok(())
}

fn disaggregate_cmd(a: DisaggregateArgs) -> Result<()> {
    let trace = a.trace.load()?;
    let samples = pick_channel(&trace, a.channel.as_deref())?;
    let set = load_set(&a.appliances)?;
    let config = PfConfig {
        particle_count: a.particles,
        sigma_obs: a.sigma_obs,
        p_stay: a.p_stay,
        seed: a.seed,
        ..PfConfig::default()
    };
    let hmms = disaggregator::build_fhmm(&set, &config)?;
    let result = disaggregator::disaggregate(&samples, trace.sample_period(), &hmms, &config)?;
    if result.degenerate_steps > 0 {
        log::warn!("{} degenerate filter steps", result.degenerate_steps);
    }
    write(&a.out, &(serde_json::to_string(&result)? + "\n"))?;
    for ap in &result.appliances {
        println!("{}\t{:.6} kWh", ap.name, ap.estimated_kwh);
    }
    Ok(())
}

fn load_result(path: &Path) -> Result<DisaggregationResult> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let result = load_result(&a.result)?;
    let truth = a.truth.load()?;
    let scored = disaggregator::score(&result, &truth)?;
    if let Some(p) = &a.scored {
        write(p, &(serde_json::to_string(&scored)? + "\n"))?;
    }
    let table = reporting::score_table(&a.label, &scored)?;
    write(&a.out, &table.render(a.format.into(), &Provenance::default()))?;
    if let Some(e) = mean_relative_energy_error(&scored) {
        println!("mean relative energy error {e:.4}");
    }
    Ok(())
}

fn spectrum_summary(path: &Path) -> Result<Summary> {
    Ok(reporting::parse_spectrum_csv(&read(path)?, f64::NAN)?.summary)
}

fn ct_summary(path: &Path) -> Result<Summary> {
    let rows = reporting::parse_timeseries_csv(&read(path)?)?;
    Ok(Summary::of(rows.into_iter().map(|(_, c)| c)))
}

fn report_cmd(cmd: ReportCommand) -> Result<()> {
    let provenance = Provenance::default();
    match cmd {
        ReportCommand::Spectrum { inputs, format, out } => {
            let spectra = inputs
                .iter()
                .map(|s| {
                    let (l, p) = labelled(s)?;
                    Ok((l, reporting::parse_spectrum_csv(&read(&p)?, f64::NAN)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = reporting::spectrum_report(&spectra)?;
            emit(out.as_deref(), &table.render(format.into(), &provenance))
        }
        ReportCommand::Colormap {
            spectra,
            ct,
            format,
            out,
        } => {
            let grid = match ct {
                Some(arg) => {
                    let (label, p) = labelled(&arg)?;
                    let rows = reporting::parse_timeseries_csv(&read(&p)?)?;
                    reporting::colormap_grid(
                        vec![label],
                        rows.iter().map(|(t, _)| t.to_string()).collect(),
                        vec![rows.iter().map(|&(_, c)| Some(c)).collect()],
                    )?
                }
                None if spectra.is_empty() => bail!("give --spectrum or --ct"),
                None => {
                    let loaded = spectra
                        .iter()
                        .map(|s| {
                            let (l, p) = labelled(s)?;
                            Ok((l, reporting::parse_spectrum_csv(&read(&p)?, f64::NAN)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    reporting::spectrum_grid(&loaded)?
                }
            };
            emit(out.as_deref(), &grid.render(format.into(), &provenance))
        }
        ReportCommand::Energy {
            results,
            ac,
            tc,
            format,
            out,
        } => {
            let results = results
                .iter()
                .map(|s| {
                    let (l, p) = labelled(s)?;
                    Ok((l, load_result(&p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let summaries = |specs: &[String], f: fn(&Path) -> Result<Summary>| {
                specs
                    .iter()
                    .map(|s| {
                        let (l, p) = labelled(s)?;
                        Ok((l, f(&p)?))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            };
            let table = reporting::energy_table(
                &results,
                &summaries(&ac, spectrum_summary)?,
                &summaries(&tc, ct_summary)?,
            )?;
            emit(out.as_deref(), &table.render(format.into(), &provenance))
        }
    }
}

fn parse_range(s: &str) -> Result<std::ops::Range<usize>> {
    let (a, b) = s
        .split_once("..")
        .with_context(|| format!("expected min..max, got `{s}`"))?;
    let r = a.trim().parse()?..b.trim().parse()?;
    if r.is_empty() || r.start == 0 {
        bail!("range `{s}` must be non-empty and start above 0");
    }
    Ok(r)
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let set = load_set(&a.appliances)?;
    let profile = ActivityProfile {
        on: parse_range(&a.on)?,
        off: parse_range(&a.off)?,
    };
    let schedule = Schedule::random(&set, a.samples, &profile, a.seed);
    let house = ingestion::synthesize(&set, &schedule, a.noise, a.period, a.seed.wrapping_add(1))?;
    ingestion::write_csv_file(&house.combined(), &a.out)?;
    Ok(())
}

fn demo_cmd(a: DemoArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.samples {
        config.samples = n;
    }
    if let Some(n) = a.particles {
        config.particles = n;
    }
    let outputs = pipeline::run(&config)?;
    outputs.write_to(&a.out)?;
    if let Some(s) = outputs.get("summary.json") {
        print!("{s}");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Enumerate(a) => enumerate_cmd(a),
        Command::SetComplexity(a) => set_complexity_cmd(a),
        Command::TsComplexity(a) => ts_complexity_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Disaggregate(a) => disaggregate_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Report(c) => report_cmd(c),
        Command::Synth(a) => synth_cmd(a),
        Command::Demo(a) => demo_cmd(a),
    }
}
