//! Super-thinning residuals and fit reports.
//!
//! Given a fitted intensity `λ̂` and a rate `b`, each observed event is kept
//! with probability `min(b / λ̂(t_i), 1)`, and points from a Poisson process
//! with rate `max(b − λ̂(t), 0)` are added. If `λ̂` is the true intensity the
//! result is a homogeneous Poisson process with rate `b`, so its times
//! should look uniform on `[0, T]`.
//!
//! Randomness is coupled across values of `b`. Thinning consumes one uniform
//! per observed event, in catalog order. Superposed points come from a
//! unit-rate Poisson process on `[0, T] × [0, ∞)` generated in unit-height
//! layers; a point `(u, y)` is kept when `y < b − λ̂(u)`. Raising `b` can
//! therefore only retain more events and add more points.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::catalog::{monthly_counts, EventCatalog, Month, MonthCount};
use crate::intensity::{conditional_intensity, intensity_at_events, HawkesModel};
use crate::simulate::homogeneous_times;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("cannot take the median intensity of an empty catalog")]
    EmptyCatalog,
    #[error("residual process is empty; the KS test needs at least one point")]
    EmptyResidual,
    #[error("thinning rate b must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("cannot parse `{0}`: expected `median` or `fixed:<rate>`")]
    BadMode(String),
}

/// How the super-thinning rate is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateMode {
    /// Median of `λ̂` over the observed events.
    Median,
    Fixed(f64),
}

impl FromStr for RateMode {
    type Err = DiagnosticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "median" {
            return Ok(Self::Median);
        }
        s.strip_prefix("fixed:")
            .and_then(|x| x.parse().ok())
            .map(Self::Fixed)
            .ok_or_else(|| DiagnosticsError::BadMode(s.to_string()))
    }
}

impl fmt::Display for RateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Median => write!(f, "median"),
            Self::Fixed(x) => write!(f, "fixed:{x}"),
        }
    }
}

/// Median; the mean of the central pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn choose_b(
    model: &HawkesModel,
    catalog: &EventCatalog,
    mode: RateMode,
) -> Result<f64, DiagnosticsError> {
    match mode {
        RateMode::Fixed(x) => Ok(x),
        RateMode::Median => {
            median(&intensity_at_events(model, catalog)).ok_or(DiagnosticsError::EmptyCatalog)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Retained,
    Thinned,
    Simulated,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Retained => "retained",
            Self::Thinned => "thinned",
            Self::Simulated => "simulated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub label: Label,
}

/// Observed points split into retained/thinned, plus superposed points.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProcess {
    /// Sorted by time.
    pub points: Vec<ResidualPoint>,
    pub b: f64,
    pub length: f64,
    pub window_start: NaiveDate,
}

impl ResidualProcess {
    pub fn count(&self, label: Label) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }

    /// Times of the residual process: retained and simulated points.
    pub fn residual_times(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.label != Label::Thinned)
            .map(|p| p.t)
            .collect()
    }

    /// `t,label` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,label\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.t, p.label.as_str()));
        }
        out
    }
}

const LAYER_HEIGHT: f64 = 1.0;

/// Super-thins `catalog` under `model` at rate `b`.
pub fn superthin(
    model: &HawkesModel,
    catalog: &EventCatalog,
    b: f64,
    seed: u64,
) -> Result<ResidualProcess, DiagnosticsError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(DiagnosticsError::BadRate(b));
    }
    let length = catalog.length();
    let lambda = intensity_at_events(model, catalog);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<ResidualPoint> = catalog
        .events()
        .iter()
        .zip(&lambda)
        .map(|(e, &lam)| {
            let u: f64 = rng.random();
            // keep with probability min(b/λ, 1)
            let label = if u * lam < b {
                Label::Retained
            } else {
                Label::Thinned
            };
            ResidualPoint { t: e.t, label }
        })
        .collect();

    let layers = (b / LAYER_HEIGHT).ceil() as u64;
    for layer in 0..layers {
        let mut layer_rng = ChaCha8Rng::seed_from_u64(seed);
        layer_rng.set_stream(layer + 1);
        let floor = layer as f64 * LAYER_HEIGHT;
        for u in homogeneous_times(LAYER_HEIGHT, length, &mut layer_rng) {
            let y = floor + layer_rng.random::<f64>() * LAYER_HEIGHT;
            if y >= b {
                continue;
            }
            if y < b - conditional_intensity(model, u, catalog) {
                points.push(ResidualPoint {
                    t: u,
                    label: Label::Simulated,
                });
            }
        }
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));

    Ok(ResidualProcess {
        points,
        b,
        length,
        window_start: catalog.window_start(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    #[serde(rename = "ks")]
    pub statistic: f64,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub n: usize,
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // P(K ≤ x) = √(2π)/x Σ_{j≥1} exp(−(2j−1)²π²/(8x²))
        let w = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let cdf: f64 = (1..=6)
            .map(|j| {
                let m = (2 * j - 1) as f64;
                (-m * m * w).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / x;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        // 2 Σ_{j≥1} (−1)^{j−1} exp(−2j²x²)
        let s: f64 = (1..=6)
            .map(|j| {
                let j = j as f64;
                let sign = if j as u32 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * j * j * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS test of `times` against Uniform[0, T]. The p-value uses
/// the asymptotic Kolmogorov law at `(√n + 0.12 + 0.11/√n)·D`.
pub fn ks_uniform(times: &[f64], length: f64) -> Result<KsResult, DiagnosticsError> {
    if times.is_empty() {
        return Err(DiagnosticsError::EmptyResidual);
    }
    let mut x = times.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &xi) in x.iter().enumerate() {
        let f = (xi / length).clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let p = kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
        n: x.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    #[serde(flatten)]
    pub ks: KsResult,
    pub histogram: Vec<MonthCount>,
}

fn calendar(residual: &ResidualProcess) -> EventCatalog {
    EventCatalog::new(Vec::new(), residual.window_start, residual.length, "")
        .expect("residual window is valid")
}

/// Monthly counts of the residual process over the catalog's months.
pub fn residual_histogram(residual: &ResidualProcess) -> Vec<MonthCount> {
    monthly_counts(&calendar(residual), residual.residual_times())
}

pub fn uniformity_tests(residual: &ResidualProcess) -> Result<UniformityReport, DiagnosticsError> {
    let ks = ks_uniform(&residual.residual_times(), residual.length)?;
    Ok(UniformityReport {
        ks,
        histogram: residual_histogram(residual),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthlyExpected {
    pub month: String,
    pub observed: usize,
    pub expected: f64,
}

/// Observed monthly counts against `median λ̂ × days in month`. Months
/// without events use `μ̂` in place of the median.
pub fn monthly_expected(model: &HawkesModel, catalog: &EventCatalog) -> Vec<MonthlyExpected> {
    let lambda = intensity_at_events(model, catalog);
    let months = catalog.months();
    let mut per_month: Vec<Vec<f64>> = vec![Vec::new(); months.len()];
    for (e, &lam) in catalog.events().iter().zip(&lambda) {
        let m = Month::of(catalog.date_of(e.t));
        if let Ok(idx) = months.binary_search(&m) {
            per_month[idx].push(lam);
        }
    }
    months
        .iter()
        .zip(per_month)
        .map(|(m, lams)| MonthlyExpected {
            month: m.to_string(),
            observed: lams.len(),
            expected: median(&lams).unwrap_or(model.mu()) * m.days() as f64,
        })
        .collect()
}

/// Rejection summary over repeated super-thinning runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub replicates: usize,
    pub alpha: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Runs whose residual was empty (not counted as rejections).
    pub empty: usize,
    /// Runs where retained + thinned did not equal the catalog size.
    pub partition_violations: usize,
}

/// Runs super-thinning for each replicate and counts KS rejections at
/// `alpha`. `catalog_for(seed)` supplies the catalog for each replicate, so
/// callers can re-simulate data from the model or reuse one catalog.
pub fn calibration<F>(
    model: &HawkesModel,
    mode: RateMode,
    seeds: impl IntoIterator<Item = u64>,
    alpha: f64,
    mut catalog_for: F,
) -> Result<CalibrationSummary, DiagnosticsError>
where
    F: FnMut(u64) -> EventCatalog,
{
    let mut replicates = 0;
    let mut rejections = 0;
    let mut empty = 0;
    let mut partition_violations = 0;
    for seed in seeds {
        replicates += 1;
        let catalog = catalog_for(seed);
        let b = match mode {
            RateMode::Median if catalog.is_empty() => model.mu(),
            _ => choose_b(model, &catalog, mode)?,
        };
        let residual = superthin(model, &catalog, b, seed)?;
        if residual.count(Label::Retained) + residual.count(Label::Thinned) != catalog.len() {
            partition_violations += 1;
        }
        match ks_uniform(&residual.residual_times(), residual.length) {
            Ok(ks) if ks.p_value < alpha => rejections += 1,
            Ok(_) => {}
            Err(_) => empty += 1,
        }
    }
    Ok(CalibrationSummary {
        replicates,
        alpha,
        rejections,
        rejection_rate: if replicates == 0 {
            0.0
        } else {
            rejections as f64 / replicates as f64
        },
        empty,
        partition_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;
    use crate::intensity::{HistogramFunction, OPEN_EDGE};
    use crate::simulate::simulate_homogeneous;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2005, 1, 1).unwrap()
    }

    fn catalog_from_times(times: &[f64], length: f64) -> EventCatalog {
        let ev = times
            .iter()
            .enumerate()
            .map(|(i, &t)| Event {
                t,
                mark: 3,
                source_row: i as u64,
            })
            .collect();
        EventCatalog::new(ev, start(), length, "").unwrap()
    }

    fn excited() -> HawkesModel {
        HawkesModel::new(
            0.05,
            HistogramFunction::new(vec![0.0, 10.0, 30.0], vec![0.06, 0.02]).unwrap(),
            HistogramFunction::new(vec![1.0, OPEN_EDGE], vec![0.8]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn median_convention() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(median(&[10.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn choose_b_modes() {
        let cat = catalog_from_times(&[1.0, 5.0, 9.0], 20.0);
        let quiet = HawkesModel::poisson(0.3).unwrap();
        assert_eq!(choose_b(&quiet, &cat, RateMode::Median), Ok(0.3));
        assert_eq!(choose_b(&quiet, &cat, RateMode::Fixed(2.0)), Ok(2.0));
        let empty = catalog_from_times(&[], 20.0);
        assert_eq!(
            choose_b(&quiet, &empty, RateMode::Median),
            Err(DiagnosticsError::EmptyCatalog)
        );
    }

    #[test]
    fn rate_mode_parsing() {
        assert_eq!("median".parse(), Ok(RateMode::Median));
        assert_eq!("fixed:0.25".parse(), Ok(RateMode::Fixed(0.25)));
        assert!("fixed:x".parse::<RateMode>().is_err());
        assert_eq!(RateMode::Fixed(0.25).to_string(), "fixed:0.25");
    }

    #[test]
    fn intensity_equal_to_b_keeps_catalog() {
        let times = simulate_homogeneous(0.2, 500.0, 3).unwrap();
        let cat = catalog_from_times(&times, 500.0);
        let model = HawkesModel::poisson(0.2).unwrap();
        let r = superthin(&model, &cat, 0.2, 17).unwrap();
        assert_eq!(r.count(Label::Thinned), 0);
        assert_eq!(r.count(Label::Simulated), 0);
        assert_eq!(r.residual_times(), cat.times());
    }

    #[test]
    fn thinning_at_half_rate() {
        let times = simulate_homogeneous(0.4, 500.0, 5).unwrap();
        let cat = catalog_from_times(&times, 500.0);
        let model = HawkesModel::poisson(0.4).unwrap();
        let n = cat.len() as f64;
        let fractions: Vec<f64> = (0..500)
            .map(|s| {
                superthin(&model, &cat, 0.2, s)
                    .unwrap()
                    .count(Label::Retained) as f64
                    / n
            })
            .collect();
        let mean = fractions.iter().sum::<f64>() / 500.0;
        let se = (0.25 / (n * 500.0)).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn empty_catalog_superposes_poisson() {
        let cat = catalog_from_times(&[], 400.0);
        let model = HawkesModel::poisson(0.0).unwrap();
        let b = 0.3;
        let counts: Vec<f64> = (0..500)
            .map(|s| {
                superthin(&model, &cat, b, s)
                    .unwrap()
                    .count(Label::Simulated) as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / 500.0;
        let se = (b * 400.0 / 500.0_f64).sqrt();
        assert!((mean - 120.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn partition_and_coupling_in_b() {
        let times = simulate_homogeneous(0.15, 1000.0, 8).unwrap();
        let cat = catalog_from_times(&times, 1000.0);
        let model = excited();
        let mut prev: Option<ResidualProcess> = None;
        for b in [0.02, 0.05, 0.08, 0.1, 0.5, 1.3, 2.7] {
            let r = superthin(&model, &cat, b, 99).unwrap();
            assert_eq!(
                r.count(Label::Retained) + r.count(Label::Thinned),
                cat.len()
            );
            assert!(r.points.iter().all(|p| (0.0..=1000.0).contains(&p.t)));
            if let Some(p) = &prev {
                let kept = |r: &ResidualProcess| -> Vec<f64> {
                    r.points
                        .iter()
                        .filter(|x| x.label == Label::Retained)
                        .map(|x| x.t)
                        .collect()
                };
                let before = kept(p);
                let after = kept(&r);
                assert!(before.iter().all(|t| after.contains(t)));
                assert!(r.count(Label::Simulated) >= p.count(Label::Simulated));
            }
            prev = Some(r);
        }
    }

    #[test]
    fn superthin_rejects_bad_rate() {
        let cat = catalog_from_times(&[], 10.0);
        let m = HawkesModel::poisson(0.1).unwrap();
        assert_eq!(
            superthin(&m, &cat, 0.0, 1),
            Err(DiagnosticsError::BadRate(0.0))
        );
    }

    #[test]
    fn ks_evenly_spaced_bound() {
        let n = 99;
        let times: Vec<f64> = (1..=n).map(|i| i as f64 * 100.0 / (n + 1) as f64).collect();
        let ks = ks_uniform(&times, 100.0).unwrap();
        assert!(ks.statistic <= 0.01 + 1e-12, "D = {}", ks.statistic);
        assert!(ks.p_value > 0.99);
    }

    #[test]
    fn ks_degenerate_cases() {
        let ks = ks_uniform(&[0.0; 10], 50.0).unwrap();
        assert_eq!(ks.statistic, 1.0);
        assert!(ks.p_value < 1e-6);
        assert_eq!(ks_uniform(&[], 50.0), Err(DiagnosticsError::EmptyResidual));
    }

    #[test]
    fn kolmogorov_tail_values() {
        // reference values of the Kolmogorov survival function
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.2238) - 0.10).abs() < 1e-4);
        assert!((kolmogorov_survival(0.8276) - 0.50).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        // the two series agree where they switch
        assert!((kolmogorov_survival(1.18 - 1e-12) - kolmogorov_survival(1.18)).abs() < 1e-10);
    }

    #[test]
    fn ks_rejection_rate_on_uniform_draws() {
        let rejections = (0..1000)
            .filter(|&s| {
                let t = simulate_homogeneous(0.1, 1000.0, s).unwrap();
                ks_uniform(&t, 1000.0).unwrap().p_value < 0.05
            })
            .count() as f64
            / 1000.0;
        assert!((0.03..=0.08).contains(&rejections), "rate {rejections}");
    }

    #[test]
    fn empty_residual_reports_zero_histogram() {
        let cat = catalog_from_times(&[], 59.0);
        let model = HawkesModel::poisson(5.0).unwrap();
        // b tiny relative to λ: superposition rate is 0 and there is nothing to thin
        let r = superthin(&model, &cat, 0.01, 1).unwrap();
        assert!(uniformity_tests(&r).is_err());
        let h = residual_histogram(&r);
        assert_eq!(h.len(), 2);
        assert!(h.iter().all(|m| m.count == 0));
    }

    #[test]
    fn monthly_expected_rules() {
        // events on Jan 11 and Jan 21; nothing in February
        let cat = catalog_from_times(&[10.0, 20.0], 59.0);
        let quiet = HawkesModel::poisson(0.1).unwrap();
        let rows = monthly_expected(&quiet, &cat);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].observed, rows[1].observed), (2, 0));
        assert!((rows[0].expected - 3.1).abs() < 1e-12);
        assert!((rows[1].expected - 2.8).abs() < 1e-12);

        let one = catalog_from_times(&[200.0], 300.0);
        let rows = monthly_expected(&HawkesModel::poisson(0.1).unwrap(), &one);
        let july = rows.iter().find(|r| r.observed == 1).unwrap();
        assert_eq!(july.month, "2005-07");
        assert!((july.expected - 3.1).abs() < 1e-12);
        let sept = rows.iter().find(|r| r.month == "2005-09").unwrap();
        assert!((sept.expected - 3.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_counts_partition() {
        let model = HawkesModel::poisson(0.1).unwrap();
        let s = calibration(&model, RateMode::Median, 0..50, 0.05, |seed| {
            catalog_from_times(
                &simulate_homogeneous(0.1, 500.0, seed + 1000).unwrap(),
                500.0,
            )
        })
        .unwrap();
        assert_eq!(s.replicates, 50);
        assert_eq!(s.partition_violations, 0);
    }
}
