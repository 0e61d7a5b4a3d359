//! Model-independent stochastic declustering: an EM fit of the histogram
//! Hawkes model.
//!
//! The branching structure is a lower-triangular matrix `P` where `p_ii` is
//! the probability event `i` is a background event and `p_ij` (`j < i`) the
//! probability it was triggered by event `j`. Starting from `p_ij = 1/i`,
//! each iteration
//!
//! 1. sets `μ = Σ_i p_ii / T`,
//! 2. re-estimates the `g` and `k` histograms from the off-diagonal mass,
//! 3. recomputes `P` from the updated `(μ, g, k)`,
//!
//! stopping once the largest entry change drops below `ε`.
//!
//! Pairs whose lag reaches past the last time edge still count towards the
//! triggered total `η_t` but fall in no `g` bin. The next E-step gives them
//! zero probability, so their mass drains back to the diagonal. There is no
//! correction for parents close to the end of the window, whose offspring
//! are censored; this biases `k` down slightly for short windows.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::catalog::EventCatalog;
use crate::intensity::{HawkesModel, HistogramFunction, ModelError, OPEN_EDGE};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("cannot fit an empty catalog")]
    EmptyCatalog,
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("mark bin {bin} [{lo}, {hi}) contains no events")]
    EmptyMarkBin { bin: usize, lo: f64, hi: f64 },
    #[error("event {event} has mark {mark}, below the first mark edge {first_edge}")]
    MarkBelowBins {
        event: usize,
        mark: u32,
        first_edge: f64,
    },
    #[error("no triggered mass (η_t = 0); the model is pure background")]
    DegenerateTriggering,
    #[error("conditional intensity is zero at event {event}; cannot normalize its row")]
    ZeroIntensity { event: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Row {
    /// Column of `values[0]`; entries left of it are zero.
    start: usize,
    /// `p_{i,start} ..= p_{i,i}`, the diagonal last.
    values: Vec<f64>,
}

/// Lower-triangular branching probabilities, stored as one contiguous band
/// per row. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilityMatrix {
    rows: Vec<Row>,
}

impl ProbabilityMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            return 0.0;
        }
        let row = &self.rows[i];
        if j < row.start {
            0.0
        } else {
            row.values[j - row.start]
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        *self.rows[i].values.last().expect("row holds its diagonal")
    }

    /// `(start, values)` for row `i`: `values[k] = p_{i, start + k}`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let r = &self.rows[i];
        (r.start, &r.values)
    }

    /// Off-diagonal entries of row `i` as `(j, p_ij)`.
    pub fn parents(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = &self.rows[i];
        let k = r.values.len() - 1;
        r.values[..k]
            .iter()
            .enumerate()
            .map(move |(o, &p)| (r.start + o, p))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].values.iter().sum()
    }

    /// `Σ_i p_ii`, the expected number of background events.
    pub fn diagonal_sum(&self) -> f64 {
        (0..self.n()).map(|i| self.diagonal(i)).sum()
    }

    /// `η_t = Σ_{i>j} p_ij`, the expected number of triggered events.
    pub fn triggered_sum(&self) -> f64 {
        (0..self.n())
            .map(|i| self.parents(i).map(|(_, p)| p).sum::<f64>())
            .sum()
    }

    pub fn total(&self) -> f64 {
        (0..self.n()).map(|i| self.row_sum(i)).sum()
    }

    /// Expected offspring of each event: column sums excluding the diagonal.
    pub fn offspring_per_event(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for i in 0..self.n() {
            for (j, p) in self.parents(i) {
                out[j] += p;
            }
        }
        out
    }

    /// `max_ij |p_ij − q_ij|`.
    pub fn max_abs_diff(&self, other: &ProbabilityMatrix) -> f64 {
        assert_eq!(self.n(), other.n(), "matrices of different size");
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            let lo = self.rows[i].start.min(other.rows[i].start);
            for j in lo..=i {
                worst = worst.max((self.get(i, j) - other.get(i, j)).abs());
            }
        }
        worst
    }

    /// Sparse `(i, j, p)` entries with `p > threshold`, row-major.
    pub fn triplets(&self, threshold: f64) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(i, r)| {
            r.values
                .iter()
                .enumerate()
                .map(move |(o, &p)| (i, r.start + o, p))
                .filter(move |&(_, _, p)| p > threshold)
        })
    }
}

/// Uniform starting point: row `i` (1-based) holds `1/i` in every column.
pub fn init_probabilities(n: usize) -> ProbabilityMatrix {
    ProbabilityMatrix {
        rows: (0..n)
            .map(|i| Row {
                start: 0,
                values: vec![1.0 / (i + 1) as f64; i + 1],
            })
            .collect(),
    }
}

/// Background rate from the expected number of background events.
pub fn m_step_background(p: &ProbabilityMatrix, length: f64) -> f64 {
    p.diagonal_sum() / length
}

/// Off-diagonal probability mass grouped by lag bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMass {
    /// Mass per time bin.
    pub bins: Vec<f64>,
    /// Mass of pairs with lag at or past the last edge.
    pub truncated: f64,
    /// All off-diagonal mass, `η_t`.
    pub eta: f64,
}

pub fn lag_mass(
    p: &ProbabilityMatrix,
    catalog: &EventCatalog,
    time_edges: &HistogramFunction,
) -> LagMass {
    let events = catalog.events();
    let mut bins = vec![0.0; time_edges.bins()];
    let mut truncated = 0.0;
    let mut eta = 0.0;
    for i in 0..p.n() {
        for (j, pij) in p.parents(i) {
            eta += pij;
            match time_edges.bin_index(events[i].t - events[j].t) {
                Some(l) => bins[l] += pij,
                None => truncated += pij,
            }
        }
    }
    LagMass {
        bins,
        truncated,
        eta,
    }
}

fn edges_only(edges: &[f64]) -> Result<HistogramFunction, ModelError> {
    HistogramFunction::zeros(edges.to_vec())
}

/// `g_l = (mass in bin l) / (Δt_l · η_t)`.
pub fn m_step_g(
    p: &ProbabilityMatrix,
    catalog: &EventCatalog,
    time_edges: &[f64],
) -> Result<HistogramFunction, FitError> {
    let shape = edges_only(time_edges)?;
    let mass = lag_mass(p, catalog, &shape);
    g_from_mass(&shape, &mass)
}

fn g_from_mass(shape: &HistogramFunction, mass: &LagMass) -> Result<HistogramFunction, FitError> {
    if mass.eta <= 0.0 {
        return Err(FitError::DegenerateTriggering);
    }
    let values = (0..shape.bins())
        .map(|l| mass.bins[l] / (shape.width(l) * mass.eta))
        .collect();
    Ok(HistogramFunction::new(shape.edges().to_vec(), values)?)
}

/// Parent mass and event counts per mark bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkMass {
    /// `Σ_{j ∈ bin} Σ_{i>j} p_ij`.
    pub parent_mass: Vec<f64>,
    /// `n_l^mark`.
    pub counts: Vec<usize>,
}

/// Assigns each event to its mark bin (the last bin is open-ended).
pub fn mark_bins(
    catalog: &EventCatalog,
    mark_edges: &HistogramFunction,
) -> Result<Vec<usize>, FitError> {
    catalog
        .events()
        .iter()
        .enumerate()
        .map(|(event, e)| {
            mark_edges
                .bin_index_open(e.mark as f64)
                .ok_or(FitError::MarkBelowBins {
                    event,
                    mark: e.mark,
                    first_edge: mark_edges.first_edge(),
                })
        })
        .collect()
}

fn check_mark_bins(counts: &[usize], edges: &HistogramFunction) -> Result<(), FitError> {
    match counts.iter().position(|&c| c == 0) {
        Some(bin) => Err(FitError::EmptyMarkBin {
            bin,
            lo: edges.edges()[bin],
            hi: edges.edges()[bin + 1],
        }),
        None => Ok(()),
    }
}

pub fn mark_mass(
    p: &ProbabilityMatrix,
    catalog: &EventCatalog,
    mark_edges: &HistogramFunction,
) -> Result<MarkMass, FitError> {
    let assignment = mark_bins(catalog, mark_edges)?;
    let offspring = p.offspring_per_event();
    let mut parent_mass = vec![0.0; mark_edges.bins()];
    let mut counts = vec![0; mark_edges.bins()];
    for (j, &l) in assignment.iter().enumerate() {
        parent_mass[l] += offspring[j];
        counts[l] += 1;
    }
    Ok(MarkMass {
        parent_mass,
        counts,
    })
}

/// `k_l = (parent mass in bin l) / n_l^mark`: expected offspring per parent.
pub fn m_step_k(
    p: &ProbabilityMatrix,
    catalog: &EventCatalog,
    mark_edges: &[f64],
) -> Result<HistogramFunction, FitError> {
    let shape = edges_only(mark_edges)?;
    let mass = mark_mass(p, catalog, &shape)?;
    k_from_mass(&shape, &mass)
}

fn k_from_mass(shape: &HistogramFunction, mass: &MarkMass) -> Result<HistogramFunction, FitError> {
    check_mark_bins(&mass.counts, shape)?;
    let values = mass
        .parent_mass
        .iter()
        .zip(&mass.counts)
        .map(|(m, &c)| m / c as f64)
        .collect();
    Ok(HistogramFunction::new(shape.edges().to_vec(), values)?)
}

fn e_step_row(model: &HawkesModel, catalog: &EventCatalog, i: usize) -> Result<Row, FitError> {
    let events = catalog.events();
    let ti = events[i].t;
    let reach = model.reach();
    let start = events[..i].partition_point(|e| ti - e.t >= reach);
    let mut values: Vec<f64> = events[start..i]
        .iter()
        .map(|e| model.g_at(ti - e.t) * model.k_at(e.mark))
        .collect();
    let excitation: f64 = values.iter().sum();
    let lambda = model.mu() + excitation;
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(FitError::ZeroIntensity { event: i });
    }
    for v in &mut values {
        *v /= lambda;
    }
    values.push(model.mu() / lambda);
    Ok(Row { start, values })
}

const PARALLEL_ROWS: usize = 512;

/// Recomputes `P` from `(μ, g, k)`. Rows are independent, so large catalogs
/// are split across threads; each row is reduced in column order, so the
/// result does not depend on the thread count.
pub fn e_step(model: &HawkesModel, catalog: &EventCatalog) -> Result<ProbabilityMatrix, FitError> {
    let n = catalog.len();
    let rows = if n >= PARALLEL_ROWS {
        (0..n)
            .into_par_iter()
            .map(|i| e_step_row(model, catalog, i))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        (0..n)
            .map(|i| e_step_row(model, catalog, i))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(ProbabilityMatrix { rows })
}

/// How mark bins are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkBins {
    /// Explicit edges. Marks at or above the last edge fall in the last bin.
    Edges(Vec<f64>),
    /// Split into this many empirical quantile bins.
    Quantiles(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Lag bin edges in days, starting at 0. `None` selects
    /// [`default_time_edges`] for the catalog's window.
    pub time_edges: Option<Vec<f64>>,
    pub mark_bins: MarkBins,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Spread same-day events with a seeded jitter in `[0, 1)` before fitting.
    pub jitter_seed: Option<u64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            time_edges: None,
            mark_bins: MarkBins::Quantiles(4),
            epsilon: 1e-5,
            max_iter: 500,
            jitter_seed: None,
        }
    }
}

/// Two weeks, three months, six months, one year, then the rest of the window.
pub fn default_time_edges(length: f64) -> Vec<f64> {
    let mut edges: Vec<f64> = [0.0, 14.0, 91.0, 182.0, 365.0]
        .into_iter()
        .filter(|&e| e < length)
        .collect();
    edges.push(length);
    edges
}

/// Quantile bins over the observed marks. Each interior edge is the order
/// statistic at `⌊n·l/q⌋` (0-based), so every edge is an observed mark and
/// every bin holds at least the events equal to its lower edge. Repeated
/// edges are merged; the final edge is open.
pub fn quantile_mark_edges(marks: &[u32], q: usize) -> Vec<f64> {
    let mut sorted = marks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut edges: Vec<f64> = (0..q.max(1))
        .map(|l| sorted[(n * l / q.max(1)).min(n - 1)] as f64)
        .collect();
    edges.dedup();
    edges.push(OPEN_EDGE);
    edges
}

/// Result of an M-step: the model plus the sufficient statistics it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub model: HawkesModel,
    pub lag: LagMass,
    pub marks: MarkMass,
    /// `η_t = 0`; `g` and `k` are zero.
    pub degenerate: bool,
}

fn m_step(
    p: &ProbabilityMatrix,
    catalog: &EventCatalog,
    time_shape: &HistogramFunction,
    mark_shape: &HistogramFunction,
) -> Result<MStep, FitError> {
    let mu = m_step_background(p, catalog.length());
    let lag = lag_mass(p, catalog, time_shape);
    let marks = mark_mass(p, catalog, mark_shape)?;
    let (g, degenerate) = match g_from_mass(time_shape, &lag) {
        Ok(g) => (g, false),
        Err(FitError::DegenerateTriggering) => (time_shape.clone(), true),
        Err(e) => return Err(e),
    };
    let k = k_from_mass(mark_shape, &marks)?;
    Ok(MStep {
        model: HawkesModel::new(mu, g, k)?,
        lag,
        marks,
        degenerate,
    })
}

/// Iteration driver. Owns the working catalog and the current `P`.
#[derive(Debug, Clone)]
pub struct Fitter {
    catalog: EventCatalog,
    time_shape: HistogramFunction,
    mark_shape: HistogramFunction,
    p: ProbabilityMatrix,
    last_m_step: Option<MStep>,
    iterations: usize,
    last_delta: f64,
}

impl Fitter {
    pub fn new(catalog: &EventCatalog, config: &FitConfig) -> Result<Self, FitError> {
        if catalog.is_empty() {
            return Err(FitError::EmptyCatalog);
        }
        if config.epsilon.is_nan() || config.epsilon <= 0.0 {
            return Err(FitError::Config(format!(
                "epsilon must be positive, got {}",
                config.epsilon
            )));
        }
        if config.max_iter == 0 {
            return Err(FitError::Config("max_iter must be at least 1".into()));
        }
        let catalog = match config.jitter_seed {
            Some(seed) => catalog.jittered(seed),
            None => catalog.clone(),
        };
        let time_edges = config
            .time_edges
            .clone()
            .unwrap_or_else(|| default_time_edges(catalog.length()));
        if time_edges.first() != Some(&0.0) {
            return Err(FitError::Config("time edges must start at 0".into()));
        }
        let time_shape = edges_only(&time_edges)?;
        if time_shape.last_edge() == OPEN_EDGE {
            return Err(FitError::Config(
                "time edges need a finite last edge".into(),
            ));
        }
        let mark_edges = match &config.mark_bins {
            MarkBins::Edges(e) => e.clone(),
            MarkBins::Quantiles(0) => {
                return Err(FitError::Config(
                    "mark quantile count must be at least 1".into(),
                ))
            }
            MarkBins::Quantiles(q) => quantile_mark_edges(&catalog.marks(), *q),
        };
        let mark_shape = edges_only(&mark_edges)?;
        let assignment = mark_bins(&catalog, &mark_shape)?;
        let mut counts = vec![0; mark_shape.bins()];
        for l in assignment {
            counts[l] += 1;
        }
        check_mark_bins(&counts, &mark_shape)?;

        let p = init_probabilities(catalog.len());
        Ok(Self {
            catalog,
            time_shape,
            mark_shape,
            p,
            last_m_step: None,
            iterations: 0,
            last_delta: f64::INFINITY,
        })
    }

    /// One M-step followed by one E-step. Returns `max |ΔP|`.
    pub fn step(&mut self) -> Result<f64, FitError> {
        let m = m_step(&self.p, &self.catalog, &self.time_shape, &self.mark_shape)?;
        let next = e_step(&m.model, &self.catalog)?;
        self.last_delta = next.max_abs_diff(&self.p);
        self.p = next;
        self.last_m_step = Some(m);
        self.iterations += 1;
        Ok(self.last_delta)
    }

    pub fn probabilities(&self) -> &ProbabilityMatrix {
        &self.p
    }

    /// The M-step that produced the current `P`, if any step has run.
    pub fn last_m_step(&self) -> Option<&MStep> {
        self.last_m_step.as_ref()
    }

    pub fn catalog(&self) -> &EventCatalog {
        &self.catalog
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Re-estimates the model from the current `P`, so that the returned
    /// `(model, P)` pair satisfies the M-step relations exactly.
    pub fn finish(self, converged: bool) -> Result<FittedModel, FitError> {
        let m = m_step(&self.p, &self.catalog, &self.time_shape, &self.mark_shape)?;
        let se = errors_from_mass(&m.model, &m.lag, &m.marks);
        Ok(FittedModel {
            eta_t: m.lag.eta,
            model: m.model,
            se_g: se.se_g,
            se_k: se.se_k,
            iterations: self.iterations,
            converged,
            degenerate: m.degenerate,
            final_delta: self.last_delta,
            probabilities: self.p,
            catalog: self.catalog,
        })
    }
}

/// Fitted model with its branching matrix. Serializes to the model JSON
/// extended with standard errors and convergence metadata.
#[derive(Debug, Clone, Serialize)]
pub struct FittedModel {
    #[serde(flatten)]
    pub model: HawkesModel,
    pub se_g: Vec<f64>,
    pub se_k: Vec<f64>,
    pub eta_t: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
    pub final_delta: f64,
    #[serde(skip)]
    pub probabilities: ProbabilityMatrix,
    /// The catalog the fit ran on (after jitter, if any).
    #[serde(skip)]
    pub catalog: EventCatalog,
}

/// Runs the EM loop until `max |ΔP| < ε` or `max_iter` iterations.
/// Hitting the iteration cap is not an error: `converged` is false.
pub fn fit(catalog: &EventCatalog, config: &FitConfig) -> Result<FittedModel, FitError> {
    let mut fitter = Fitter::new(catalog, config)?;
    let mut converged = false;
    while fitter.iterations() < config.max_iter {
        if fitter.step()? < config.epsilon {
            converged = true;
            break;
        }
    }
    fitter.finish(converged)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardErrors {
    pub se_g: Vec<f64>,
    pub se_k: Vec<f64>,
    /// `η_t = 0`: all errors reported as 0.
    pub degenerate: bool,
}

/// Binomial standard errors of the histogram values:
/// `Var(g_l) = θ_l(1−θ_l) / (η_t Δt_l²)` and
/// `Var(k_l) = η_t θ_l(1−θ_l) / (n_l^mark)²`.
pub fn standard_errors(fitted: &FittedModel) -> Result<StandardErrors, FitError> {
    let lag = lag_mass(&fitted.probabilities, &fitted.catalog, fitted.model.g());
    let marks = mark_mass(&fitted.probabilities, &fitted.catalog, fitted.model.k())?;
    Ok(errors_from_mass(&fitted.model, &lag, &marks))
}

fn errors_from_mass(model: &HawkesModel, lag: &LagMass, marks: &MarkMass) -> StandardErrors {
    let eta = lag.eta;
    if eta <= 0.0 {
        return StandardErrors {
            se_g: vec![0.0; model.g().bins()],
            se_k: vec![0.0; model.k().bins()],
            degenerate: true,
        };
    }
    let binom = |theta: f64| (theta * (1.0 - theta)).max(0.0);
    let se_g = (0..model.g().bins())
        .map(|l| {
            let dt = model.g().width(l);
            (binom(lag.bins[l] / eta) / (eta * dt * dt)).sqrt()
        })
        .collect();
    let se_k = marks
        .parent_mass
        .iter()
        .zip(&marks.counts)
        .map(|(&mass, &count)| {
            let n = count as f64;
            (eta * binom(mass / eta) / (n * n)).sqrt()
        })
        .collect();
    StandardErrors {
        se_g,
        se_k,
        degenerate: false,
    }
}

/// Per-event summaries of the branching structure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffspringStats {
    pub n: usize,
    /// `η_t / n`.
    pub mean_offspring: f64,
    /// Off-diagonal mass with lag ≤ `window_days`, per event.
    pub mean_offspring_within_window: f64,
    pub window_days: f64,
    /// `Σ p_ii / n`.
    pub diagonal_mass_fraction: f64,
    /// `Σ p_ii / T`.
    pub background_rate: f64,
}

pub fn offspring_stats(
    p: &ProbabilityMatrix,
    catalog: &EventCatalog,
    window_days: f64,
) -> OffspringStats {
    let n = p.n();
    let events = catalog.events();
    let diag = p.diagonal_sum();
    let mut total = 0.0;
    let mut within = 0.0;
    for i in 0..n {
        for (j, pij) in p.parents(i) {
            total += pij;
            if events[i].t - events[j].t <= window_days {
                within += pij;
            }
        }
    }
    let per = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    OffspringStats {
        n,
        mean_offspring: per(total),
        mean_offspring_within_window: per(within),
        window_days,
        diagonal_mass_fraction: per(diag),
        background_rate: diag / catalog.length(),
    }
}

impl FittedModel {
    pub fn offspring_stats(&self, window_days: f64) -> OffspringStats {
        offspring_stats(&self.probabilities, &self.catalog, window_days)
    }
}
