//! Fixtures shared by the benchmarks.

use chrono::NaiveDate;
use contagion_core::intensity::OPEN_EDGE;
use contagion_core::simulate::{simulate_hawkes, MarkDistribution, SimConfig};
use contagion_core::{EventCatalog, FitConfig, HawkesModel, HistogramFunction, MarkBins};

/// Model with two weeks / three months / six months of triggering and two
/// mark bins, branching ratio 0.5 under [`mark_law`].
pub fn reference_model(mu: f64) -> HawkesModel {
    let g = HistogramFunction::new(
        vec![0.0, 14.0, 91.0, 182.0],
        vec![0.5 / 14.0, 0.3 / 77.0, 0.2 / 91.0],
    )
    .expect("valid g");
    let k = HistogramFunction::new(vec![3.0, 5.0, OPEN_EDGE], vec![0.3, 0.7]).expect("valid k");
    HawkesModel::new(mu, g, k).expect("valid model")
}

pub fn mark_law() -> MarkDistribution {
    MarkDistribution::new([(3, 0.3), (4, 0.2), (5, 0.25), (7, 0.15), (12, 0.1)].into())
        .expect("normalized")
}

pub fn synthetic_catalog(mu: f64, length: f64, seed: u64) -> EventCatalog {
    let config = SimConfig {
        model: reference_model(mu),
        length,
        mark_distribution: mark_law(),
        seed,
        epoch: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
        allow_supercritical: false,
    };
    simulate_hawkes(&config).expect("subcritical").catalog
}

pub fn reference_fit_config() -> FitConfig {
    FitConfig {
        time_edges: Some(vec![0.0, 14.0, 91.0, 182.0]),
        mark_bins: MarkBins::Edges(vec![3.0, 5.0, OPEN_EDGE]),
        ..FitConfig::default()
    }
}
