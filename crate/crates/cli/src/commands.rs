//! Subcommands: `fit`, `resume`, `report`, `simulate` and `export`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rwsgd::engine::PluginPoint;
use rwsgd::inference::histogram_export;
use rwsgd::simulate::{
    default_schedule, parse_scenarios, reference_grid, render_coverage_table, render_se_table, run_scenario,
    run_scenario_sequential, synthetic_stream, true_theta,
};
use rwsgd::{EnsembleState, InferenceMethod, InferenceReport, LearningRateSchedule, ModelKind, WeightDistribution};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::ingest::{
    discover_categories, ingest_csv, CategoricalSpec, ColumnRef, CategoryRule, IngestStats, IngestionSpec,
};
use crate::manifest::{check_file, RunCheckpoint, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "rwsgd", version, about = "Averaged SGD with random-weighting inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream a CSV file through the ensemble and write reports and a checkpoint.
    Fit(FitArgs),
    /// Continue a checkpointed run with more data.
    Resume(ResumeArgs),
    /// Re-emit reports from a checkpoint without reading data.
    Report(ReportArgs),
    /// Run coverage studies from a scenario file.
    Simulate(SimulateArgs),
    /// Write a synthetic CSV with known coefficients.
    Export(ExportArgs),
}

/// Options shared by the command line and `--config` files (same key names,
/// with underscores). Command-line values win.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Input CSV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// ls | logistic | lad | quantile
    #[arg(long)]
    pub model: Option<String>,
    /// Quantile level for `--model quantile`.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Response column (header name or 1-based index).
    #[arg(long)]
    pub response: Option<String>,
    /// Numeric covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// One-hot column: `col`, `col:a|b|c` or `col@hoursN`. Repeatable.
    #[arg(long)]
    pub categorical: Vec<String>,
    /// Prepend a constant 1 covariate.
    #[arg(long)]
    pub intercept: bool,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Tokens treated as missing (default: empty, ?, NA, NaN, nan, null).
    #[arg(long, value_delimiter = ',')]
    pub missing: Vec<String>,
    /// Logistic label mapping, e.g. `banana=1,wine=-1`.
    #[arg(long)]
    pub labels: Option<String>,
    /// CSV of `column,shift,scale` affine transforms.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
    /// Pre-scan the file for categories that were not declared.
    #[arg(long)]
    pub discover: bool,
    /// Number of random-weighting replicates B.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Learning-rate scale (rate = gamma * n^-alpha).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// exp1 | poisson1 | one
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub level: Option<f64>,
    /// rw | percentile
    #[arg(long)]
    pub method: Option<String>,
    /// pre | post | off
    #[arg(long)]
    pub plugin: Option<String>,
    /// Write per-coordinate histograms of the replicate averages.
    #[arg(long)]
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Key-value config file (TOML) with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: FitOptions,
    /// Update replicates on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Additional data in the same layout as the original input.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (defaults to the checkpointed one).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected number of replicates; must match the checkpoint.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Replace the covariate columns; the resulting dimension must match.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long)]
    pub categorical: Vec<String>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub level: Option<f64>,
    /// rw | percentile
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file with `[defaults]` and `[[scenario]]` tables.
    #[arg(long, required_unless_present = "reference_grid")]
    pub scenarios: Option<PathBuf>,
    /// Run the full 18-cell grid at 1000 repetitions (hours).
    #[arg(long)]
    pub reference_grid: bool,
    /// Override the repetition count of every scenario.
    #[arg(long)]
    pub repetitions: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Run repetitions on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Destination CSV (`y,x1,...,xp`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ls")]
    pub model: String,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub n: u64,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 6)]
    pub q: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the true coefficients (`coordinate,theta`).
    #[arg(long)]
    pub theta_out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Resume(a) => cmd_resume(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

pub fn parse_model(name: &str, tau: Option<f64>) -> Result<ModelKind, CliError> {
    let kind = ModelKind::from_name(name, tau)
        .ok_or_else(|| CliError::Config(format!("unknown model `{name}` (expected ls, logistic, lad or quantile)")))?;
    kind.validate()?;
    Ok(kind)
}

fn parse_method(name: &str) -> Result<InferenceMethod, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "rw" => Ok(InferenceMethod::ReplicateRw),
        "percentile" => Ok(InferenceMethod::ReplicatePercentile),
        _ => Err(CliError::Config(format!("unknown method `{name}` (expected rw or percentile)"))),
    }
}

fn parse_plugin(name: &str) -> Result<Option<PluginPoint>, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "pre" => Ok(Some(PluginPoint::PreUpdate)),
        "post" => Ok(Some(PluginPoint::PostUpdate)),
        "off" | "none" => Ok(None),
        _ => Err(CliError::Config(format!("unknown plug-in point `{name}` (expected pre, post or off)"))),
    }
}

fn load_options(args: &FitArgs) -> Result<FitOptions, CliError> {
    let Some(path) = &args.config else {
        return Ok(args.options.clone());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut file: FitOptions =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut file.input, &mut file.out, &mut file.transforms].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    let cli = args.options.clone();
    macro_rules! prefer {
        ($($f:ident),*) => { $( if cli.$f.is_some() { file.$f = cli.$f; } )* };
    }
    prefer!(input, out, model, tau, response, labels, transforms, replicates, burn_in, gamma, alpha, weights, seed, level, method, plugin, histogram_bins);
    macro_rules! prefer_list {
        ($($f:ident),*) => { $( if !cli.$f.is_empty() { file.$f = cli.$f; } )* };
    }
    prefer_list!(covariates, categorical, missing);
    file.intercept |= cli.intercept;
    file.no_header |= cli.no_header;
    file.discover |= cli.discover;
    Ok(file)
}

/// Resolves options into a validated manifest. Categories that were not
/// declared are filled in by a discovery pass when `discover` is set.
pub fn build_manifest(opts: &FitOptions) -> Result<RunManifest, CliError> {
    let need = |what: &str| CliError::Config(format!("missing required option `{what}`"));
    let input = opts.input.clone().ok_or_else(|| need("input"))?;
    let out_dir = opts.out.clone().ok_or_else(|| need("out"))?;
    let model = parse_model(opts.model.as_deref().ok_or_else(|| need("model"))?, opts.tau)?;
    let response = ColumnRef::parse(opts.response.as_deref().ok_or_else(|| need("response"))?);
    check_file(&input)?;

    let mut spec = IngestionSpec::new(response);
    spec.covariates = opts.covariates.iter().map(|c| ColumnRef::parse(c)).collect();
    spec.categorical = opts.categorical.iter().map(|c| CategoricalSpec::parse(c)).collect::<Result<_, _>>()?;
    spec.intercept = opts.intercept;
    spec.has_header = !opts.no_header;
    if !opts.missing.is_empty() {
        spec.missing_tokens = opts.missing.clone();
    }
    if let Some(l) = &opts.labels {
        spec.label_mapping = Some(IngestionSpec::parse_label_mapping(l)?);
    }
    if let Some(t) = &opts.transforms {
        check_file(t)?;
        spec.transforms = IngestionSpec::load_transforms(t)?;
    }
    if opts.discover {
        for i in 0..spec.categorical.len() {
            let cat = &spec.categorical[i];
            if cat.categories.is_empty() && cat.rule == CategoryRule::Exact {
                let found = discover_categories(&input, &spec, cat)?;
                spec.categorical[i].categories = found;
            }
        }
    }

    let defaults = default_schedule(&model);
    let schedule = LearningRateSchedule::new(opts.gamma.unwrap_or(defaults.gamma()), opts.alpha.unwrap_or(defaults.alpha()))?;
    let weights = match &opts.weights {
        Some(w) => WeightDistribution::parse(w)
            .ok_or_else(|| CliError::Config(format!("unknown weight distribution `{w}` (expected exp1, poisson1 or one)")))?,
        None => WeightDistribution::Exponential1,
    };
    let plugin = match &opts.plugin {
        Some(p) => parse_plugin(p)?,
        None if model.has_hessian() => Some(PluginPoint::PreUpdate),
        None => None,
    };
    let manifest = RunManifest {
        model,
        schedule,
        replicates: opts.replicates.unwrap_or(200),
        burn_in: opts.burn_in.unwrap_or(2000),
        weights,
        seed: opts.seed.unwrap_or(1),
        level: opts.level.unwrap_or(0.95),
        method: opts.method.as_deref().map(parse_method).transpose()?.unwrap_or(InferenceMethod::ReplicateRw),
        plugin,
        histogram_bins: opts.histogram_bins,
        inputs: vec![input],
        out_dir,
        ingestion: spec,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Result of a `fit` or `resume`: the final ensemble and its bookkeeping.
pub struct FitOutcome {
    pub state: EnsembleState,
    pub manifest: RunManifest,
    pub names: Vec<String>,
    pub stats: IngestStats,
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitOutcome, CliError> {
    let manifest = build_manifest(&load_options(args)?)?;
    let outcome = fit_manifest(manifest, !args.sequential)?;
    write_outputs(&outcome, true)?;
    print_run(&outcome);
    Ok(outcome)
}

/// Runs a validated manifest over its single input without writing anything.
pub fn fit_manifest(manifest: RunManifest, parallel: bool) -> Result<FitOutcome, CliError> {
    let input = manifest.inputs[0].clone();
    let mut reader = ingest_csv(&input, &manifest.ingestion, &manifest.model)?;
    let names = reader.names().to_vec();
    let mut state = EnsembleState::new(manifest.engine_config(), names.len())?;
    state.set_parallel(parallel);
    state.process_stream(reader.by_ref())?;
    if state.n() == 0 {
        return Err(CliError::Data(format!("{}: no usable rows", input.display())));
    }
    Ok(FitOutcome {
        state,
        manifest,
        names,
        stats: reader.stats(),
    })
}

pub fn cmd_resume(args: &ResumeArgs) -> Result<FitOutcome, CliError> {
    let ck = RunCheckpoint::load(&args.checkpoint)?;
    check_file(&args.input)?;
    if let Some(b) = args.replicates {
        if b != ck.ensemble.replicates {
            return Err(CliError::Config(format!(
                "checkpoint has B = {} replicates but {b} were requested; the ensemble shape is fixed",
                ck.ensemble.replicates
            )));
        }
    }
    let mut manifest = ck.manifest.clone();
    if !args.covariates.is_empty() || !args.categorical.is_empty() {
        manifest.ingestion.covariates = args.covariates.iter().map(|c| ColumnRef::parse(c)).collect();
        manifest.ingestion.categorical =
            args.categorical.iter().map(|c| CategoricalSpec::parse(c)).collect::<Result<_, _>>()?;
    }
    if let Some(out) = &args.out {
        manifest.out_dir = out.clone();
    }
    let mut reader = ingest_csv(&args.input, &manifest.ingestion, &manifest.model)?;
    if reader.dim() != ck.ensemble.dim {
        return Err(CliError::Config(format!(
            "dimension mismatch: checkpoint has p = {} but the input yields p = {}",
            ck.ensemble.dim,
            reader.dim()
        )));
    }
    let mut state = ck.ensemble.restore_expecting(Some(reader.dim()), args.replicates)?;
    state.set_parallel(!args.sequential);
    state.process_stream(reader.by_ref())?;
    manifest.inputs.push(args.input.clone());
    let mut stats = ck.stats;
    stats.add(&reader.stats());
    let outcome = FitOutcome {
        state,
        manifest,
        names: reader.names().to_vec(),
        stats,
    };
    write_outputs(&outcome, true)?;
    print_run(&outcome);
    Ok(outcome)
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let ck = RunCheckpoint::load(&args.checkpoint)?;
    let mut manifest = ck.manifest;
    if let Some(out) = &args.out {
        manifest.out_dir = out.clone();
    }
    if let Some(level) = args.level {
        manifest.level = level;
    }
    if let Some(m) = &args.method {
        manifest.method = parse_method(m)?;
    }
    if args.histogram_bins.is_some() {
        manifest.histogram_bins = args.histogram_bins;
    }
    if !(manifest.level > 0.0 && manifest.level < 1.0) || manifest.histogram_bins == Some(0) {
        return Err(CliError::Config("level must be in (0, 1) and histogram bins positive".into()));
    }
    let state = ck.ensemble.restore()?;
    let outcome = FitOutcome {
        state,
        manifest,
        names: ck.names,
        stats: ck.stats,
    };
    write_outputs(&outcome, false)?;
    print_run(&outcome);
    Ok(())
}

/// Summary written next to the reports.
#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    manifest: &'a RunManifest,
    names: &'a [String],
    n_total: u64,
    n_used: u64,
    rows_read: u64,
    rows_emitted: u64,
    rows_skipped: u64,
    skipped: &'a IngestStats,
    plugin: String,
}

fn csv_matrix(names: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = format!("name,{}\n", names.join(","));
    for (name, row) in names.iter().zip(rows) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{name},{}", cells.join(","));
    }
    out
}

/// Writes report tables, covariance, optional plug-in and histogram files,
/// the run summary and (when asked) the checkpoint into `manifest.out_dir`.
pub fn write_outputs(outcome: &FitOutcome, with_checkpoint: bool) -> Result<(), CliError> {
    let FitOutcome { state, manifest, names, stats } = outcome;
    let out = &manifest.out_dir;
    fs::create_dir_all(out)?;

    let report = InferenceReport::from_ensemble(state, manifest.level, manifest.method)?;
    fs::write(out.join("report.csv"), report.to_table(Some(names)))?;
    fs::write(out.join("summary.txt"), report.to_summary(Some(names), 3))?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(out.join("covariance.csv"), csv_matrix(names, &report.covariance))?;

    let plugin_status = match InferenceReport::from_ensemble(state, manifest.level, InferenceMethod::PlugIn) {
        Ok(plug) => {
            fs::write(out.join("plugin_report.csv"), plug.to_table(Some(names)))?;
            fs::write(out.join("plugin_summary.txt"), plug.to_summary(Some(names), 3))?;
            fs::write(out.join("plugin_covariance.csv"), csv_matrix(names, &plug.covariance))?;
            "written".to_string()
        }
        Err(e @ (rwsgd::Error::PlugInUnavailable(_) | rwsgd::Error::PlugInDisabled)) => e.to_string(),
        Err(e) => return Err(e.into()),
    };

    if let Some(bins) = manifest.histogram_bins {
        let dir = out.join("histograms");
        fs::create_dir_all(&dir)?;
        let averages = state.replicate_averages();
        for j in 0..state.dim() {
            let values: Vec<f64> = averages.iter().map(|a| a[j]).collect();
            let h = histogram_export(&values, bins)?;
            fs::write(dir.join(format!("coord_{}.csv", j + 1)), h.to_table())?;
        }
    }

    let summary = RunSummary {
        manifest,
        names,
        n_total: state.n(),
        n_used: state.main_accumulator().count_used(),
        rows_read: stats.rows_read,
        rows_emitted: stats.rows_emitted,
        rows_skipped: stats.rows_skipped(),
        skipped: stats,
        plugin: plugin_status,
    };
    fs::write(out.join("run_summary.json"), serde_json::to_string_pretty(&summary)?)?;

    if with_checkpoint {
        RunCheckpoint::new(manifest, names, *stats, state).save(&out.join("checkpoint.json"))?;
    }
    Ok(())
}

fn print_run(outcome: &FitOutcome) {
    let s = &outcome.stats;
    println!(
        "rows read {}, used {}, skipped {}; n = {}, B = {}",
        s.rows_read,
        s.rows_emitted,
        s.rows_skipped(),
        outcome.state.n(),
        outcome.manifest.replicates
    );
    if let Ok(text) = fs::read_to_string(outcome.manifest.out_dir.join("summary.txt")) {
        print!("{text}");
    }
    println!("outputs in {}", outcome.manifest.out_dir.display());
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut scenarios = if args.reference_grid {
        reference_grid()
    } else {
        let path = args.scenarios.as_ref().ok_or_else(|| CliError::Config("--scenarios is required".into()))?;
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read scenarios {}: {e}", path.display())))?;
        parse_scenarios(&text)?
    };
    if let Some(r) = args.repetitions {
        if r == 0 {
            return Err(CliError::Config("repetitions must be positive".into()));
        }
        for s in &mut scenarios {
            s.repetitions = r;
        }
    }
    fs::create_dir_all(&args.out)?;
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for s in &scenarios {
        eprintln!("running {} {} ({} repetitions)", s.model.name(), s.cell_label(), s.repetitions);
        let report = if args.sequential { run_scenario_sequential(s)? } else { run_scenario(s)? };
        tables.push(report.table()?);
        reports.push(report);
    }
    let coverage = render_coverage_table(&tables);
    let se = render_se_table(&tables);
    fs::write(args.out.join("coverage.tsv"), &coverage)?;
    fs::write(args.out.join("se.tsv"), &se)?;
    fs::write(args.out.join("coverage.json"), serde_json::to_string_pretty(&reports)?)?;
    print!("{coverage}\n{se}");
    Ok(())
}

pub fn cmd_export(args: &ExportArgs) -> Result<(), CliError> {
    let model = parse_model(&args.model, args.tau)?;
    let theta0 = true_theta(args.p, args.q, args.mu)?;
    let mut w = csv::Writer::from_path(&args.out)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", args.out.display())))?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=args.p).map(|j| format!("x{j}")));
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for z in synthetic_stream(model, theta0.clone(), args.seed).take(args.n as usize) {
        let mut row = vec![z.y.to_string()];
        row.extend(z.x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    if let Some(path) = &args.theta_out {
        let mut text = String::from("coordinate,theta\n");
        for (j, t) in theta0.iter().enumerate() {
            let _ = writeln!(text, "{},{t}", j + 1);
        }
        fs::write(path, text)?;
    }
    Ok(())
}
