//! `contagion`: fit, simulate and check marked Hawkes models of event
//! catalogs from the command line.
//!
//! Every subcommand writes its products into `--out` together with a
//! `manifest.json` replay record. Errors exit with status 2.

mod io;
mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use contagion_core::baseline::{compare, TowersModel};
use contagion_core::catalog::{ingest, summarize, CatalogSummary};
use contagion_core::diagnostics::{
    calibration, choose_b, monthly_expected, residual_histogram, superthin, uniformity_tests,
    Label, RateMode,
};
use contagion_core::intensity::{intensity_at_events, OPEN_EDGE};
use contagion_core::simulate::simulate_hawkes;
use contagion_core::{
    fit, FitConfig, HawkesModel, HistogramFunction, MarkBins, MarkDistribution, SchemaMapping,
    SimConfig,
};

use io::{load_catalog, parse_list, prepare_out, read_bytes, read_json, write_json, write_text};
use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(
    name = "contagion",
    version,
    about = "Marked Hawkes process toolkit for event catalogs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a source CSV into the `date,victims` catalog schema.
    Ingest(IngestArgs),
    /// Fit the model by stochastic declustering.
    Fit(FitArgs),
    /// Super-thinning residual diagnostics for a fitted model.
    Superthin(SuperthinArgs),
    /// Simulate a catalog from a model.
    Simulate(SimulateArgs),
    /// Exponential contagion baseline, optionally against a Hawkes model.
    Baseline(BaselineArgs),
    /// Observed against model-expected counts.
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Schema mapping JSON.
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Catalog CSV (normalized or exact-time).
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated lag bin edges in days, starting at 0.
    #[arg(long)]
    time_edges: Option<String>,
    /// Comma-separated mark bin lower edges; the last bin is open-ended.
    #[arg(long, conflicts_with = "mark_quantiles")]
    mark_edges: Option<String>,
    /// Number of empirical quantile bins for marks.
    #[arg(long)]
    mark_quantiles: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Seed for the optional same-day jitter.
    #[arg(long)]
    jitter_seed: Option<u64>,
    /// Lag window for the within-window offspring figure.
    #[arg(long, default_value_t = 13.0)]
    window_days: f64,
    /// Also write the sparse branching matrix.
    #[arg(long)]
    dump_p: bool,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SuperthinArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// `median` or `fixed:<rate>`.
    #[arg(long, default_value = "median")]
    b: String,
    #[arg(long)]
    seed: u64,
    /// Number of seeds (`seed`, `seed + 1`, ...) for a calibration batch.
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    /// In batch mode, simulate a fresh catalog from the model per seed.
    #[arg(long)]
    resimulate: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Window length in days.
    #[arg(long = "T")]
    length: f64,
    /// Mark law JSON, e.g. `{"3": 0.6, "4": 0.4}`.
    #[arg(long)]
    marks: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Calendar date of t = 0.
    #[arg(long, default_value = "2000-01-01")]
    epoch: NaiveDate,
    #[arg(long)]
    allow_supercritical: bool,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Baseline parameters JSON: `t_excite`, `n_secondary`, `n0`.
    #[arg(long)]
    config: PathBuf,
    /// Hawkes model JSON to compare against.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 13.0)]
    window_days: f64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Write monthly observed against expected counts.
    #[arg(long)]
    monthly: bool,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Superthin(a) => cmd_superthin(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_model(path: &Path, run: &mut ManifestBuilder) -> Result<HawkesModel> {
    let bytes = read_bytes(path)?;
    run.input(path, &bytes);
    read_json(path, &bytes)
}

fn load_input(path: &Path, run: &mut ManifestBuilder) -> Result<contagion_core::EventCatalog> {
    let loaded = load_catalog(path)?;
    for (p, b) in &loaded.sources {
        run.input(p, b);
    }
    Ok(loaded.catalog)
}

#[derive(Serialize)]
struct IngestSummary {
    #[serde(flatten)]
    summary: CatalogSummary,
    dropped_outside_window: usize,
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let mut run = ManifestBuilder::new("ingest", a, None)?;
    let mapping_bytes = read_bytes(&a.mapping)?;
    run.input(&a.mapping, &mapping_bytes);
    let mapping: SchemaMapping = read_json(&a.mapping, &mapping_bytes)?;
    let bytes = read_bytes(&a.input)?;
    run.input(&a.input, &bytes);
    let ingested =
        ingest(&bytes, &mapping).with_context(|| format!("ingesting {}", a.input.display()))?;

    prepare_out(&a.out)?;
    io::write_catalog(&a.out, "catalog", &ingested.catalog)?;
    write_json(
        &a.out,
        "summary.json",
        &IngestSummary {
            summary: summarize(&ingested.catalog, mapping.mark_threshold),
            dropped_outside_window: ingested.dropped_outside_window,
        },
    )?;
    run.write(&a.out)
}

fn fit_config(a: &FitArgs) -> Result<FitConfig> {
    let mark_bins = match (&a.mark_edges, a.mark_quantiles) {
        (Some(text), _) => {
            let mut edges = parse_list(text)?;
            match edges.last_mut() {
                Some(last) if last.is_infinite() => *last = OPEN_EDGE,
                Some(_) => edges.push(OPEN_EDGE),
                None => bail!("--mark-edges is empty"),
            }
            MarkBins::Edges(edges)
        }
        (None, Some(q)) => MarkBins::Quantiles(q),
        (None, None) => FitConfig::default().mark_bins,
    };
    Ok(FitConfig {
        time_edges: a.time_edges.as_deref().map(parse_list).transpose()?,
        mark_bins,
        epsilon: a.epsilon,
        max_iter: a.max_iter,
        jitter_seed: a.jitter_seed,
    })
}

/// `lo,hi,value,se,lower,upper` rows with `±2·SE` bands floored at zero.
fn plot_csv(f: &HistogramFunction, se: &[f64]) -> String {
    let mut out = String::from("lo,hi,value,se,lower,upper\n");
    let edges = f.edges();
    for (l, (&v, &s)) in f.values().iter().zip(se).enumerate() {
        let hi = if edges[l + 1] == OPEN_EDGE {
            "inf".to_string()
        } else {
            edges[l + 1].to_string()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            edges[l],
            hi,
            v,
            s,
            (v - 2.0 * s).max(0.0),
            v + 2.0 * s
        );
    }
    out
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mut run = ManifestBuilder::new("fit", a, a.jitter_seed)?;
    let catalog = load_input(&a.input, &mut run)?;
    let config = fit_config(a)?;
    let fitted = fit(&catalog, &config).context("fitting")?;
    if !fitted.converged {
        eprintln!(
            "warning: not converged after {} iterations (max |dP| = {:e})",
            fitted.iterations, fitted.final_delta
        );
    }
    if fitted.degenerate {
        eprintln!("warning: no triggering mass; g and k are zero");
    }

    prepare_out(&a.out)?;
    write_json(&a.out, "model.json", &fitted)?;
    write_json(
        &a.out,
        "offspring.json",
        &fitted.offspring_stats(a.window_days),
    )?;
    write_text(
        &a.out,
        "g_plot.csv",
        &plot_csv(fitted.model.g(), &fitted.se_g),
    )?;
    write_text(
        &a.out,
        "k_plot.csv",
        &plot_csv(fitted.model.k(), &fitted.se_k),
    )?;
    if a.dump_p {
        let mut out = String::from("i,j,p\n");
        for (i, j, p) in fitted.probabilities.triplets(1e-12) {
            writeln!(out, "{},{},{}", i + 1, j + 1, p)?;
        }
        write_text(&a.out, "p_matrix.csv", &out)?;
    }
    run.write(&a.out)
}

/// Seed for re-simulated catalogs, kept apart from the thinning seed.
fn simulation_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
}

#[derive(Serialize)]
struct UniformityJson {
    ks: Option<f64>,
    p: Option<f64>,
    n: usize,
    b: f64,
    retained: usize,
    thinned: usize,
    simulated: usize,
}

fn cmd_superthin(a: &SuperthinArgs) -> Result<()> {
    let mut run = ManifestBuilder::new("superthin", a, Some(a.seed))?;
    let model = load_model(&a.model, &mut run)?;
    let catalog = load_input(&a.input, &mut run)?;
    let mode: RateMode = a.b.parse()?;
    prepare_out(&a.out)?;

    if a.replicates > 1 || a.resimulate {
        let seeds = a.seed..a.seed.saturating_add(a.replicates);
        let summary = if a.resimulate {
            let mark_distribution = MarkDistribution::from_catalog(&catalog)?;
            let template = SimConfig {
                model: model.clone(),
                length: catalog.length(),
                mark_distribution,
                seed: 0,
                epoch: catalog.window_start(),
                allow_supercritical: false,
            };
            let mut failure = None;
            let summary = calibration(&model, mode, seeds, a.alpha, |seed| {
                let cfg = SimConfig {
                    seed: simulation_seed(seed),
                    ..template.clone()
                };
                match simulate_hawkes(&cfg) {
                    Ok(sim) => sim.catalog,
                    Err(e) => {
                        failure.get_or_insert(e);
                        catalog.clone()
                    }
                }
            })?;
            if let Some(e) = failure {
                return Err(e).context("re-simulating catalogs");
            }
            summary
        } else {
            calibration(&model, mode, seeds, a.alpha, |_| catalog.clone())?
        };
        write_json(&a.out, "calibration.json", &summary)?;
        return run.write(&a.out);
    }

    let b = choose_b(&model, &catalog, mode)?;
    let residual = superthin(&model, &catalog, b, a.seed)?;
    let (ks, p, n) = match uniformity_tests(&residual) {
        Ok(r) => (Some(r.ks.statistic), Some(r.ks.p_value), r.ks.n),
        Err(e) => {
            eprintln!("warning: {e}; no uniformity test");
            (None, None, 0)
        }
    };
    write_text(&a.out, "residual.csv", &residual.to_csv())?;
    write_json(
        &a.out,
        "uniformity.json",
        &UniformityJson {
            ks,
            p,
            n,
            b,
            retained: residual.count(Label::Retained),
            thinned: residual.count(Label::Thinned),
            simulated: residual.count(Label::Simulated),
        },
    )?;
    let mut hist = String::from("month,count\n");
    for m in residual_histogram(&residual) {
        writeln!(hist, "{},{}", m.month, m.count)?;
    }
    write_text(&a.out, "residual_histogram.csv", &hist)?;
    run.write(&a.out)
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    n: usize,
    background: usize,
    offspring_fraction: f64,
    branching_ratio: f64,
    config: &'a SimConfig,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut run = ManifestBuilder::new("simulate", a, Some(a.seed))?;
    let model = load_model(&a.model, &mut run)?;
    let marks_bytes = read_bytes(&a.marks)?;
    run.input(&a.marks, &marks_bytes);
    let mark_distribution: MarkDistribution = read_json(&a.marks, &marks_bytes)?;
    let config = SimConfig {
        model,
        length: a.length,
        mark_distribution,
        seed: a.seed,
        epoch: a.epoch,
        allow_supercritical: a.allow_supercritical,
    };
    let sim = simulate_hawkes(&config).context("simulating")?;

    prepare_out(&a.out)?;
    io::write_catalog(&a.out, "catalog", &sim.catalog)?;
    io::write_exact_catalog(&a.out, "events", &sim.catalog, &sim.parents)?;
    write_json(
        &a.out,
        "simulation.json",
        &SimulationSummary {
            n: sim.catalog.len(),
            background: sim.parents.iter().filter(|p| p.is_none()).count(),
            offspring_fraction: sim.offspring_fraction(),
            branching_ratio: sim.branching_ratio,
            config: &config,
        },
    )?;
    run.write(&a.out)
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let mut run = ManifestBuilder::new("baseline", a, None)?;
    let catalog = load_input(&a.input, &mut run)?;
    let config_bytes = read_bytes(&a.config)?;
    run.input(&a.config, &config_bytes);
    let towers: TowersModel = read_json(&a.config, &config_bytes)?;
    towers.validate()?;
    let hawkes = a
        .model
        .as_deref()
        .map(|p| load_model(p, &mut run))
        .transpose()?;
    let report = compare(hawkes.as_ref(), &towers, &catalog, a.window_days)?;

    prepare_out(&a.out)?;
    let mut daily = String::from("day,date,observed,towers,hawkes\n");
    for d in &report.daily {
        let h = d.hawkes.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            daily,
            "{},{},{},{},{}",
            d.day, d.date, d.observed, d.towers, h
        )?;
    }
    write_text(&a.out, "daily.csv", &daily)?;
    write_json(&a.out, "comparison.json", &report)?;
    run.write(&a.out)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut run = ManifestBuilder::new("report", a, None)?;
    let model = load_model(&a.model, &mut run)?;
    let catalog = load_input(&a.input, &mut run)?;

    prepare_out(&a.out)?;
    let mut intensity = String::from("t,victims,lambda\n");
    for (e, lam) in catalog
        .events()
        .iter()
        .zip(intensity_at_events(&model, &catalog))
    {
        writeln!(intensity, "{},{},{}", e.t, e.mark, lam)?;
    }
    write_text(&a.out, "intensity.csv", &intensity)?;
    if a.monthly {
        let mut out = String::from("month,observed,expected\n");
        for m in monthly_expected(&model, &catalog) {
            writeln!(out, "{},{},{}", m.month, m.observed, m.expected)?;
        }
        write_text(&a.out, "monthly.csv", &out)?;
    }
    run.write(&a.out)
}
