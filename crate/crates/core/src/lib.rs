//! Nonparametric marked Hawkes process toolkit.
//!
//! Fits `λ(t) = μ + Σ g(t − t_i) k(m_i)` with histogram `g` and `k` by
//! stochastic declustering ([`misd`]), simulates catalogs from a model
//! ([`simulate`]), checks fits with super-thinned residuals
//! ([`diagnostics`]) and compares against an exponential contagion baseline
//! ([`baseline`]).

pub mod baseline;
pub mod catalog;
pub mod diagnostics;
pub mod intensity;
pub mod misd;
pub mod simulate;

pub use catalog::{Event, EventCatalog, SchemaMapping};
pub use intensity::{HawkesModel, HistogramFunction};
pub use misd::{fit, FitConfig, FittedModel, MarkBins, ProbabilityMatrix};
pub use simulate::{MarkDistribution, SimConfig};
