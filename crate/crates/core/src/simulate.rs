//! Synthetic catalogs.
//!
//! A Hawkes catalog is generated as a branching process. Background events
//! arrive as a homogeneous Poisson process; every event with mark `m` then
//! has `Poisson(k(m) · ∫g)` children, at lags drawn from `g / ∫g`. Children
//! past `T` are discarded together with their descendants.
//!
//! Child marks are drawn independently of the parent from the configured
//! mark law.
//!
//! Each event draws its children from its own ChaCha stream (stream number =
//! generation index + 1), so output depends only on the seed.

use std::collections::{BTreeMap, VecDeque};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, Event, EventCatalog};
use crate::intensity::{branching_ratio, HawkesModel, HistogramFunction};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("mark probabilities sum to {0}, expected 1")]
    MarkLawNotNormalized(f64),
    #[error("mark law is empty or has a bad entry: {0}")]
    BadMarkLaw(String),
    #[error("branching ratio {0:.4} ≥ 1: the process is supercritical (set the override to simulate anyway)")]
    Supercritical(f64),
    #[error("time density g has mass {0}; expected a value in (0, 1]")]
    BadTimeDensity(f64),
    #[error("rate and window must be finite, rate ≥ 0 and T > 0 (rate {rate}, T {length})")]
    BadRate { rate: f64, length: f64 },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// Distribution of victim counts, `mark → probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u32, f64>", into = "BTreeMap<u32, f64>")]
pub struct MarkDistribution {
    marks: Vec<u32>,
    cumulative: Vec<f64>,
    probabilities: BTreeMap<u32, f64>,
}

impl TryFrom<BTreeMap<u32, f64>> for MarkDistribution {
    type Error = SimError;

    fn try_from(p: BTreeMap<u32, f64>) -> Result<Self, SimError> {
        Self::new(p)
    }
}

impl From<MarkDistribution> for BTreeMap<u32, f64> {
    fn from(d: MarkDistribution) -> Self {
        d.probabilities
    }
}

impl MarkDistribution {
    pub fn new(probabilities: BTreeMap<u32, f64>) -> Result<Self, SimError> {
        if probabilities.is_empty() {
            return Err(SimError::BadMarkLaw("no marks".into()));
        }
        for (&m, &p) in &probabilities {
            if m == 0 || !(p.is_finite() && p >= 0.0) {
                return Err(SimError::BadMarkLaw(format!("{m} → {p}")));
            }
        }
        let total: f64 = probabilities.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SimError::MarkLawNotNormalized(total));
        }
        let mut acc = 0.0;
        let cumulative = probabilities
            .values()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            marks: probabilities.keys().copied().collect(),
            cumulative,
            probabilities,
        })
    }

    /// Empirical law of the catalog's marks.
    pub fn from_catalog(catalog: &EventCatalog) -> Result<Self, SimError> {
        let mut counts = BTreeMap::new();
        for e in catalog.events() {
            *counts.entry(e.mark).or_insert(0usize) += 1;
        }
        let n = catalog.len() as f64;
        Self::new(counts.into_iter().map(|(m, c)| (m, c as f64 / n)).collect())
    }

    pub fn probabilities(&self) -> &BTreeMap<u32, f64> {
        &self.probabilities
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let u = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.marks[idx.min(self.marks.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: HawkesModel,
    #[serde(rename = "T")]
    pub length: f64,
    pub mark_distribution: MarkDistribution,
    pub seed: u64,
    /// Date assigned to `t = 0`.
    pub epoch: NaiveDate,
    #[serde(default)]
    pub allow_supercritical: bool,
}

impl SimConfig {
    pub fn branching_ratio(&self) -> f64 {
        branching_ratio(&self.model, self.mark_distribution.probabilities())
    }
}

/// A simulated catalog and its true branching structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCatalog {
    pub catalog: EventCatalog,
    /// Parent of each catalog event (by catalog index), `None` for background.
    pub parents: Vec<Option<usize>>,
    pub branching_ratio: f64,
}

impl SimulatedCatalog {
    /// Share of events that are offspring.
    pub fn offspring_fraction(&self) -> f64 {
        if self.parents.is_empty() {
            return 0.0;
        }
        self.parents.iter().filter(|p| p.is_some()).count() as f64 / self.parents.len() as f64
    }

    /// `child − parent` lags of every offspring event.
    pub fn lags(&self) -> Vec<f64> {
        let ev = self.catalog.events();
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|j| ev[i].t - ev[j].t))
            .collect()
    }
}

fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng) as u64
}

/// Sorted times of a homogeneous Poisson process on `[0, T]`.
pub fn homogeneous_times<R: Rng>(rate: f64, length: f64, rng: &mut R) -> Vec<f64> {
    let count = poisson_count(rate * length, rng);
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * length).collect();
    times.sort_by(f64::total_cmp);
    times
}

pub fn simulate_homogeneous(rate: f64, length: f64, seed: u64) -> Result<Vec<f64>, SimError> {
    if !(rate.is_finite() && rate >= 0.0 && length.is_finite() && length > 0.0) {
        return Err(SimError::BadRate { rate, length });
    }
    Ok(homogeneous_times(
        rate,
        length,
        &mut ChaCha8Rng::seed_from_u64(seed),
    ))
}

/// Inverse-CDF sampler for a step density: pick a bin by its mass, then a
/// uniform point inside it.
#[derive(Debug, Clone)]
pub struct StepSampler {
    edges: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepSampler {
    pub fn new(f: &HistogramFunction) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..f.bins())
            .map(|l| {
                acc += f.values()[l] * f.width(l);
                acc
            })
            .collect();
        Self {
            edges: f.edges().to_vec(),
            cumulative,
        }
    }

    pub fn mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * self.mass();
        let mut bin = self.cumulative.partition_point(|&c| c <= u);
        bin = bin.min(self.cumulative.len() - 1);
        // skip zero-mass bins that a boundary draw could land on
        while bin > 0 && self.cumulative[bin] == self.cumulative[bin - 1] {
            bin -= 1;
        }
        let lo = self.edges[bin];
        let hi = self.edges[bin + 1];
        let x = lo + rng.random::<f64>() * (hi - lo);
        x.min(hi.next_down().max(lo))
    }
}

fn child_rng(seed: u64, generation_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(generation_index as u64 + 1);
    rng
}

pub fn simulate_hawkes(config: &SimConfig) -> Result<SimulatedCatalog, SimError> {
    let length = config.length;
    let model = &config.model;
    if !(length.is_finite() && length > 0.0) {
        return Err(SimError::BadRate {
            rate: model.mu(),
            length,
        });
    }
    let rho = config.branching_ratio();
    if rho >= 1.0 && !config.allow_supercritical {
        return Err(SimError::Supercritical(rho));
    }
    let sampler = StepSampler::new(model.g());
    let g_mass = sampler.mass();
    let total_k: f64 = model.k().values().iter().sum();
    if total_k > 0.0 && !(g_mass > 0.0 && g_mass <= 1.0 + 1e-8) {
        return Err(SimError::BadTimeDensity(g_mass));
    }

    struct Raw {
        t: f64,
        mark: u32,
        parent: Option<usize>,
    }

    let mut main = ChaCha8Rng::seed_from_u64(config.seed);
    let mut raw: Vec<Raw> = homogeneous_times(model.mu(), length, &mut main)
        .into_iter()
        .map(|t| Raw {
            t,
            mark: config.mark_distribution.sample(&mut main),
            parent: None,
        })
        .collect();

    let mut queue: VecDeque<usize> = (0..raw.len()).collect();
    while let Some(idx) = queue.pop_front() {
        let mut rng = child_rng(config.seed, idx);
        let (t, mark) = (raw[idx].t, raw[idx].mark);
        let children = poisson_count(model.k_at(mark) * g_mass, &mut rng);
        for _ in 0..children {
            let child_t = t + sampler.sample(&mut rng);
            let child_mark = config.mark_distribution.sample(&mut rng);
            if child_t > length {
                continue;
            }
            raw.push(Raw {
                t: child_t,
                mark: child_mark,
                parent: Some(idx),
            });
            queue.push_back(raw.len() - 1);
        }
    }

    let events: Vec<Event> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| Event {
            t: r.t,
            mark: r.mark,
            source_row: i as u64,
        })
        .collect();
    let catalog = EventCatalog::new(events, config.epoch, length, "simulated")?;
    let mut position = vec![0; raw.len()];
    for (pos, e) in catalog.events().iter().enumerate() {
        position[e.source_row as usize] = pos;
    }
    let parents = catalog
        .events()
        .iter()
        .map(|e| raw[e.source_row as usize].parent.map(|p| position[p]))
        .collect();
    Ok(SimulatedCatalog {
        catalog,
        parents,
        branching_ratio: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::OPEN_EDGE;

    fn h(edges: &[f64], values: &[f64]) -> HistogramFunction {
        HistogramFunction::new(edges.to_vec(), values.to_vec()).unwrap()
    }

    fn epoch() -> NaiveDate {
        NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
    }

    fn config(mu: f64, k: f64, length: f64, seed: u64) -> SimConfig {
        SimConfig {
            model: HawkesModel::new(
                mu,
                h(&[0.0, 10.0, 40.0], &[0.05, 0.5 / 30.0]),
                h(&[3.0, OPEN_EDGE], &[k]),
            )
            .unwrap(),
            length,
            mark_distribution: MarkDistribution::new([(3, 0.5), (7, 0.5)].into()).unwrap(),
            seed,
            epoch: epoch(),
            allow_supercritical: false,
        }
    }

    /// Mean and standard error of the mean over replicates.
    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn zero_rate_is_empty() {
        assert!(simulate_homogeneous(0.0, 100.0, 1).unwrap().is_empty());
        assert!(simulate_homogeneous(-1.0, 100.0, 1).is_err());
    }

    #[test]
    fn homogeneous_sorted_in_window() {
        for seed in 0..20 {
            let t = simulate_homogeneous(0.3, 50.0, seed).unwrap();
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            assert!(t.iter().all(|&x| (0.0..=50.0).contains(&x)));
        }
    }

    #[test]
    fn homogeneous_mean_count() {
        let counts: Vec<f64> = (0..200)
            .map(|s| simulate_homogeneous(2.0, 1000.0, s).unwrap().len() as f64)
            .collect();
        let (mean, se) = mean_se(&counts);
        assert!((mean - 2000.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn mark_law_validation_and_sampling() {
        assert!(matches!(
            MarkDistribution::new([(3, 0.5), (4, 0.4)].into()),
            Err(SimError::MarkLawNotNormalized(_))
        ));
        assert!(MarkDistribution::new([(0, 1.0)].into()).is_err());
        let law = MarkDistribution::new([(3, 0.25), (4, 0.75)].into()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fours = (0..20_000).filter(|_| law.sample(&mut rng) == 4).count() as f64 / 20_000.0;
        assert!((fours - 0.75).abs() < 0.015);
        let json = serde_json::to_string(&law).unwrap();
        assert_eq!(json, r#"{"3":0.25,"4":0.75}"#);
        assert_eq!(
            serde_json::from_str::<MarkDistribution>(&json).unwrap(),
            law
        );
    }

    #[test]
    fn same_seed_same_catalog() {
        let a = simulate_hawkes(&config(0.1, 0.6, 2000.0, 9)).unwrap();
        let b = simulate_hawkes(&config(0.1, 0.6, 2000.0, 9)).unwrap();
        let c = simulate_hawkes(&config(0.1, 0.6, 2000.0, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.catalog, c.catalog);
    }

    #[test]
    fn refuses_supercritical() {
        let cfg = config(0.1, 1.2, 100.0, 1);
        match simulate_hawkes(&cfg) {
            Err(SimError::Supercritical(rho)) => assert!((rho - 1.2).abs() < 1e-12),
            other => panic!("expected refusal, got {other:?}"),
        }
        let forced = SimConfig {
            allow_supercritical: true,
            ..config(0.01, 1.2, 100.0, 1)
        };
        assert!(simulate_hawkes(&forced).is_ok());
    }

    #[test]
    fn lags_stay_in_support_and_parents_precede() {
        let sim = simulate_hawkes(&config(0.2, 0.7, 3000.0, 4)).unwrap();
        assert!(!sim.lags().is_empty());
        assert!(sim.lags().iter().all(|&l| (0.0..40.0).contains(&l)));
        for (i, p) in sim.parents.iter().enumerate() {
            if let Some(j) = *p {
                assert!(sim.catalog.events()[j].t <= sim.catalog.events()[i].t);
            }
        }
    }

    #[test]
    fn no_triggering_is_poisson() {
        let counts: Vec<f64> = (0..200)
            .map(|s| {
                simulate_hawkes(&config(0.2, 0.0, 1000.0, s))
                    .unwrap()
                    .catalog
                    .len() as f64
            })
            .collect();
        let (mean, se) = mean_se(&counts);
        assert!((mean - 200.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn step_sampler_skips_empty_bins() {
        let s = StepSampler::new(&h(&[0.0, 1.0, 2.0, 3.0], &[0.5, 0.0, 0.5]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = s.sample(&mut rng);
            assert!(!(1.0..2.0).contains(&x) && (0.0..3.0).contains(&x));
        }
    }
}
