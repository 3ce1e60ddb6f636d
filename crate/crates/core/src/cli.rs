//! Command-line workflows.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Failures print a one-line JSON error report on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::benchgen::{self, GroundTruth, SynthSpec, DEFAULT_NOISE_REL};
use crate::catalog::{FeatureCatalog, Variant};
use crate::dataset::{self, Dataset, MeasurementRow, Preset, StreamKey};
use crate::error::{Error, ErrorClass, Result};
use crate::evaluation::{self, CvOptions, EvaluationReport, Grouping, PlotOptions, ReportFormat, DEFAULT_FOLDS, DEFAULT_SEED};
use crate::fitting::{self, BoundsPolicy, FitOptions};
use crate::measurement::{self, MeasurementSet, PowerTrace, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::models::{FittedModel, ModelKind};

#[derive(Debug, Parser)]
#[command(name = "hevc-energy", version, about = "Feature-based energy estimation for HEVC software encoding")]
pub struct Cli {
    /// TOML file with default option values; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the feature catalog as JSON.
    Catalog(OutArg),
    /// Join a feature table and a measurement table into a dataset file.
    Ingest(IngestArgs),
    /// Train one model.
    Fit(FitArgs),
    /// Cross-validate one or more model kinds and write an evaluation report.
    Crossval(CrossvalArgs),
    /// Predict per-stream energies with a trained model.
    Predict(PredictArgs),
    /// Render an evaluation report as a table, delimited export or plot data.
    Report(ReportArgs),
    /// Generate a synthetic dataset with known feature energies.
    Synth(SynthArgs),
    /// Reduce power traces to encoding energies and check the stopping rule.
    MeasureReduce(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output file [default: stdout]
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Feature-count table (sequence_name,preset,crf,<slot columns...>)
    #[arg(long)]
    pub features: PathBuf,
    /// Measurement table (sequence_name,preset,crf,energy_j,enc_time_s,uf_time_s,qp_equiv)
    #[arg(long)]
    pub measurements: PathBuf,
    /// Sequence table (sequence_name,class,width,height,frame_rate,frame_count)
    /// [default: built-in 22-sequence reference list]
    #[arg(long)]
    pub sequences: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Canonical dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model kind: qp, t, uf, em, sm [default: sm]
    #[arg(long)]
    pub kind: Option<String>,
    /// Preset to train on, or "all" [default: all]
    #[arg(long)]
    pub scope: Option<String>,
    /// Drop the non-negativity bound on feature energies [default: bounded]
    #[arg(long)]
    pub unbounded: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    /// Canonical dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated model kinds [default: sm]
    #[arg(long)]
    pub kind: Option<String>,
    /// per-preset, all-presets or both [default: both]
    #[arg(long)]
    pub grouping: Option<String>,
    /// Number of folds [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
    /// Fold RNG seed [default: 20221107]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the non-negativity bound on feature energies [default: bounded]
    #[arg(long)]
    pub unbounded: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Canonical dataset file
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file written by `fit`
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report written by `crossval`
    #[arg(long)]
    pub input: PathBuf,
    /// text, delimited or plot-data [default: text]
    #[arg(long)]
    pub format: Option<String>,
    /// Sequence for plot data [default: Cactus]
    #[arg(long)]
    pub sequence: Option<String>,
    /// Restrict plot data to one CRF [default: mean over CRFs]
    #[arg(long)]
    pub crf: Option<u32>,
    /// Model kind for plot data [default: sm if present]
    #[arg(long)]
    pub plot_kind: Option<String>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Feature-model variant generating the energies: sm or em [default: sm]
    #[arg(long)]
    pub variant: Option<String>,
    /// Multiplicative noise bound [default: 0.02]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Generator seed [default: 20221107]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the ground-truth coefficients to this file
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// CSV manifest: sequence_name,preset,crf,total,idle (one row per repeat;
    /// trace paths relative to the manifest)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Confidence level of the stopping rule [default: 0.99]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Maximum relative energy deviation [default: 0.02]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Write the stopping-rule verdicts to this CSV file [default: stderr]
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

/// Option values read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub kind: Option<String>,
    pub variant: Option<String>,
    pub scope: Option<String>,
    pub grouping: Option<String>,
    pub unbounded: Option<bool>,
    pub noise: Option<f64>,
    pub format: Option<String>,
}

/// Fully resolved options shared by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub kinds: Vec<ModelKind>,
    pub variant: Variant,
    pub scope: Option<Preset>,
    pub grouping: Grouping,
    pub k: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub bounds: BoundsPolicy,
    pub noise: f64,
    pub format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kinds: vec![ModelKind::Sm],
            variant: Variant::Sm,
            scope: None,
            grouping: Grouping::Both,
            k: DEFAULT_FOLDS,
            seed: DEFAULT_SEED,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            bounds: BoundsPolicy::NonNegative,
            noise: DEFAULT_NOISE_REL,
            format: ReportFormat::Text,
        }
    }
}

impl Serialize for ReportFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            ReportFormat::Text => "text",
            ReportFormat::Delimited => "delimited",
            ReportFormat::PlotData => "plot-data",
        })
    }
}

fn parse_kinds(s: &str) -> Result<Vec<ModelKind>> {
    let kinds = s.split(',').map(|k| k.trim().parse()).collect::<Result<Vec<ModelKind>>>()?;
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no model kind given".into()));
    }
    Ok(kinds)
}

fn parse_scope(s: &str) -> Result<Option<Preset>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::InvalidArgument(format!("unknown scope '{s}' (expected a preset or all)")))
    }
}

/// Flag values that may override the config file.
#[derive(Debug, Default)]
struct Overrides<'a> {
    kind: Option<&'a str>,
    variant: Option<&'a str>,
    scope: Option<&'a str>,
    grouping: Option<&'a str>,
    k: Option<usize>,
    seed: Option<u64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    unbounded: bool,
    noise: Option<f64>,
    format: Option<&'a str>,
}

impl RunConfig {
    fn resolve(file: &ConfigFile, o: &Overrides<'_>) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(k) = o.kind.or(file.kind.as_deref()) {
            c.kinds = parse_kinds(k)?;
        }
        if let Some(v) = o.variant.or(file.variant.as_deref()) {
            c.variant = v.parse()?;
        }
        if let Some(s) = o.scope.or(file.scope.as_deref()) {
            c.scope = parse_scope(s)?;
        }
        if let Some(g) = o.grouping.or(file.grouping.as_deref()) {
            c.grouping = g.parse()?;
        }
        c.k = o.k.or(file.k).unwrap_or(c.k);
        c.seed = o.seed.or(file.seed).unwrap_or(c.seed);
        c.alpha = o.alpha.or(file.alpha).unwrap_or(c.alpha);
        c.beta = o.beta.or(file.beta).unwrap_or(c.beta);
        c.noise = o.noise.or(file.noise).unwrap_or(c.noise);
        if o.unbounded || file.unbounded == Some(true) {
            c.bounds = BoundsPolicy::Unbounded;
        }
        if let Some(f) = o.format.or(file.format.as_deref()) {
            c.format = f.parse()?;
        }
        if c.k < 2 {
            return Err(Error::InvalidArgument(format!("k must be >= 2, found {}", c.k)));
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), found {}", c.alpha)));
        }
        if !(c.beta >= 0.0 && c.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, found {}", c.beta)));
        }
        if !(c.noise >= 0.0 && c.noise < 1.0) {
            return Err(Error::InvalidArgument(format!("noise must lie in [0, 1), found {}", c.noise)));
        }
        Ok(c)
    }
}

/// Bundle of evaluation reports written by `crossval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub dataset_hash: String,
    pub reports: Vec<EvaluationReport>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))
}

fn emit(out: &OutArg, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match &out.out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::from(e).context(format!("writing {}", p.display()))),
        None => stdout.write_all(bytes).map_err(Error::from),
    }
}

fn load_dataset_file(path: &Path, catalog: &FeatureCatalog) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    dataset::load_dataset(&bytes, catalog).map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Runs the CLI with explicit argument list and output streams; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    return 0;
                }
                _ => 1,
            };
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            let report = serde_json::json!({
                "error": {
                    "class": match class { ErrorClass::Usage => "usage", ErrorClass::Data => "data", ErrorClass::Numerical => "numerical" },
                    "tag": e.tag(),
                    "message": e.to_string(),
                }
            });
            let _ = writeln!(stderr, "{report}");
            match class {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            }
        }
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => toml::from_str::<ConfigFile>(&read(p)?)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?,
        None => ConfigFile::default(),
    };
    let catalog = FeatureCatalog::canonical();
    match &cli.command {
        Command::Catalog(out) => {
            let mut s = serde_json::to_string_pretty(&catalog.export())?;
            s.push('\n');
            emit(out, s.as_bytes(), stdout)
        }
        Command::Ingest(a) => cmd_ingest(a, catalog, stdout, stderr),
        Command::Fit(a) => {
            let cfg = RunConfig::resolve(
                &file,
                &Overrides { kind: a.kind.as_deref(), scope: a.scope.as_deref(), unbounded: a.unbounded, ..Default::default() },
            )?;
            let [kind] = cfg.kinds[..] else {
                return Err(Error::InvalidArgument("fit takes exactly one model kind".into()));
            };
            let ds = load_dataset_file(&a.dataset, catalog)?;
            let opts = FitOptions { bounds: cfg.bounds, ..Default::default() };
            let (model, diag) = fitting::fit_with_diagnostics(&ds, kind, cfg.scope, opts, catalog)?;
            if diag.rank_deficient {
                writeln!(stderr, "warning: rank-deficient design (rank {}), minimum-norm solution", diag.rank)?;
            }
            if !diag.excluded_columns.is_empty() {
                writeln!(stderr, "warning: {} unidentifiable coefficient(s)", diag.excluded_columns.len())?;
            }
            emit(&a.out, model.to_json(catalog).as_bytes(), stdout)
        }
        Command::Crossval(a) => {
            let cfg = RunConfig::resolve(
                &file,
                &Overrides {
                    kind: a.kind.as_deref(),
                    grouping: a.grouping.as_deref(),
                    k: a.k,
                    seed: a.seed,
                    unbounded: a.unbounded,
                    ..Default::default()
                },
            )?;
            let ds = load_dataset_file(&a.dataset, catalog)?;
            let opts = CvOptions { grouping: cfg.grouping, k: cfg.k, seed: cfg.seed, bounds: cfg.bounds };
            let reports = cfg
                .kinds
                .iter()
                .map(|&kind| evaluation::cross_validate(&ds, kind, opts, catalog))
                .collect::<Result<Vec<_>>>()?;
            let bundle = ReportBundle { dataset_hash: ds.content_hash(), reports };
            let mut s = serde_json::to_string_pretty(&bundle)?;
            s.push('\n');
            emit(&a.out, s.as_bytes(), stdout)
        }
        Command::Predict(a) => {
            let ds = load_dataset_file(&a.dataset, catalog)?;
            let model = FittedModel::from_json(&read(&a.model)?, catalog)?;
            let mut s = String::from("sequence_name,preset,crf,estimated_j,measured_j\n");
            for r in &ds.records {
                let e = model.model.predict_record(r, catalog)?;
                s.push_str(&format!("{},{},{},{e},{}\n", r.meta.sequence_name, r.meta.preset, r.meta.crf, r.energy_joules));
            }
            emit(&a.out, s.as_bytes(), stdout)
        }
        Command::Report(a) => {
            let cfg = RunConfig::resolve(&file, &Overrides { format: a.format.as_deref(), ..Default::default() })?;
            let bundle: ReportBundle = serde_json::from_str(&read(&a.input)?)?;
            let plot = PlotOptions {
                sequence: Some(a.sequence.clone().unwrap_or_else(|| "Cactus".into())),
                crf: a.crf,
                kind: a.plot_kind.as_deref().map(str::parse).transpose()?,
            };
            let s = evaluation::render_report(&bundle.reports, cfg.format, &plot)?;
            emit(&a.out, s.as_bytes(), stdout)
        }
        Command::Synth(a) => {
            let cfg = RunConfig::resolve(
                &file,
                &Overrides { variant: a.variant.as_deref(), noise: a.noise, seed: a.seed, ..Default::default() },
            )?;
            let spec = SynthSpec::reference(cfg.variant, cfg.seed, catalog).with_noise(cfg.noise);
            let ds = benchgen::generate(&spec, catalog)?;
            if let Some(p) = &a.truth {
                let mut s = serde_json::to_string_pretty(&GroundTruth::from_spec(&spec, catalog))?;
                s.push('\n');
                fs::write(p, s).map_err(|e| Error::from(e).context(format!("writing {}", p.display())))?;
            }
            emit(&a.out, &dataset::save_dataset(&ds), stdout)?;
            writeln!(stderr, "{} records", ds.len())?;
            Ok(())
        }
        Command::MeasureReduce(a) => {
            let cfg = RunConfig::resolve(&file, &Overrides { alpha: a.alpha, beta: a.beta, ..Default::default() })?;
            cmd_measure_reduce(a, &cfg, stdout, stderr)
        }
    }
}

fn cmd_ingest(a: &IngestArgs, catalog: &FeatureCatalog, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let features = dataset::parse_feature_table(&read(&a.features)?, catalog)?;
    let measurements = dataset::parse_measurement_table(&read(&a.measurements)?)?;
    let sequences = match &a.sequences {
        Some(p) => dataset::parse_sequence_table(&read(p)?)?,
        None => dataset::reference_sequences(),
    };
    let (ds, report) = dataset::join(&features.rows, &measurements, &sequences, catalog)?;
    emit(&a.out, &dataset::save_dataset(&ds), stdout)?;
    if !features.missing_columns.is_empty() {
        writeln!(stderr, "warning: {} feature column(s) missing, filled with defaults", features.missing_columns.len())?;
    }
    for k in &report.feature_orphans {
        writeln!(stderr, "orphan: {k} has features but no measurement")?;
    }
    for k in &report.measurement_orphans {
        writeln!(stderr, "orphan: {k} has a measurement but no features")?;
    }
    for k in &report.nonstandard_crf {
        writeln!(stderr, "warning: {k} uses a CRF outside 18/23/28/33")?;
    }
    writeln!(stderr, "{} records", ds.len())?;
    Ok(())
}

fn cmd_measure_reduce(a: &MeasureArgs, cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    const WHAT: &str = "measurement manifest";
    let text = read(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(WHAT, 1, e.to_string()))?.clone();
    if header.iter().ne(["sequence_name", "preset", "crf", "total", "idle"]) {
        return Err(Error::parse(WHAT, 1, "header must be sequence_name,preset,crf,total,idle"));
    }
    // key -> (energies, durations), in manifest order
    let mut groups: Vec<(StreamKey, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(WHAT, line, e.to_string()))?;
        let key = StreamKey::new(
            &rec[0],
            rec[1].parse().map_err(|e: Error| Error::parse(WHAT, line, e.to_string()))?,
            rec[2].parse().map_err(|_| Error::parse(WHAT, line, "malformed crf"))?,
        );
        let total = PowerTrace::parse(&read(&base.join(&rec[3]))?).map_err(|e| e.context(format!("{WHAT} line {line}")))?;
        let idle = PowerTrace::parse(&read(&base.join(&rec[4]))?).map_err(|e| e.context(format!("{WHAT} line {line}")))?;
        let e = measurement::encoding_energy(&total, &idle).map_err(|e| e.context(format!("{WHAT} line {line}")))?;
        if e.negative {
            writeln!(stderr, "warning: {key} repeat at line {line} has negative encoding energy {} J", e.joules)?;
        }
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => {
                g.1.push(e.joules);
                g.2.push(e.duration_s);
            }
            None => groups.push((key, vec![e.joules], vec![e.duration_s])),
        }
    }
    if groups.is_empty() {
        return Err(Error::data("measurement manifest lists no traces"));
    }
    let mut rows = Vec::new();
    let mut verdicts = String::from("sequence_name,preset,crf,repeats,mean_j,lhs,rhs,satisfied\n");
    for (key, energies, durations) in groups {
        let set = MeasurementSet::with_bounds(energies.clone(), cfg.alpha, cfg.beta);
        let mean = set.mean();
        let (lhs, rhs, ok) = if energies.len() >= 2 {
            let v = measurement::confidence_check(&set)?;
            (v.lhs.to_string(), v.rhs.to_string(), v.satisfied)
        } else {
            (String::new(), String::new(), false)
        };
        verdicts.push_str(&format!(
            "{},{},{},{},{mean},{lhs},{rhs},{ok}\n",
            key.sequence_name,
            key.preset,
            key.crf,
            energies.len()
        ));
        if mean < 0.0 {
            return Err(Error::data(format!("{key}: mean encoding energy is negative ({mean} J)")));
        }
        rows.push(MeasurementRow {
            key,
            energy_joules: mean,
            enc_time_s: Some(durations.iter().sum::<f64>() / durations.len() as f64),
            uf_time_s: None,
            qp_equiv: None,
        });
    }
    emit(&a.out, dataset::write_measurement_table(&rows).as_bytes(), stdout)?;
    match &a.verdicts {
        Some(p) => fs::write(p, verdicts).map_err(|e| Error::from(e).context(format!("writing {}", p.display())))?,
        None => stderr.write_all(verdicts.as_bytes())?,
    }
    Ok(())
}
