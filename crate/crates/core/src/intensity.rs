//! Histogram step functions and the marked-temporal conditional intensity
//!
//! ```text
//! λ(t) = μ + Σ_{i : t_i < t} g(t − t_i) · k(m_i)
//! ```
//!
//! `g` is a step density over elapsed days, zero past its last edge. `k` is
//! a step productivity over victim counts, with its final bin open-ended.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::EventCatalog;

/// Stand-in for an unbounded final edge. Serializes as a finite JSON number.
pub const OPEN_EDGE: f64 = f64::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("histogram needs at least two edges, got {0}")]
    TooFewEdges(usize),
    #[error("histogram has {edges} edges and {values} values; it needs one more edge than values")]
    LengthMismatch { edges: usize, values: usize },
    #[error("histogram edges must be finite and strictly increasing (edge {0})")]
    EdgesNotIncreasing(usize),
    #[error("histogram value {index} is {value}; values must be finite and non-negative")]
    BadValue { index: usize, value: f64 },
    #[error("background rate must be finite and non-negative, got {0}")]
    BadBackground(f64),
    #[error("time histogram must start at 0, starts at {0}")]
    TimeEdgeStart(f64),
    #[error("time histogram cannot have an open final edge")]
    OpenTimeEdge,
    #[error("time histogram integrates to {0}, expected 1")]
    NotDensity(f64),
}

/// Piecewise-constant function on right-open bins `[e_{l-1}, e_l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHistogram")]
pub struct HistogramFunction {
    edges: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawHistogram {
    edges: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawHistogram> for HistogramFunction {
    type Error = ModelError;

    fn try_from(raw: RawHistogram) -> Result<Self, Self::Error> {
        Self::new(raw.edges, raw.values)
    }
}

impl HistogramFunction {
    pub fn new(edges: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        if edges.len() < 2 {
            return Err(ModelError::TooFewEdges(edges.len()));
        }
        if values.len() + 1 != edges.len() {
            return Err(ModelError::LengthMismatch {
                edges: edges.len(),
                values: values.len(),
            });
        }
        for (i, w) in edges.windows(2).enumerate() {
            if !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]) {
                return Err(ModelError::EdgesNotIncreasing(i + 1));
            }
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(ModelError::BadValue { index, value });
        }
        Ok(Self { edges, values })
    }

    /// Zero function over the given edges.
    pub fn zeros(edges: Vec<f64>) -> Result<Self, ModelError> {
        let n = edges.len().saturating_sub(1);
        Self::new(edges, vec![0.0; n])
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn first_edge(&self) -> f64 {
        self.edges[0]
    }

    pub fn last_edge(&self) -> f64 {
        *self.edges.last().expect("at least two edges")
    }

    pub fn width(&self, bin: usize) -> f64 {
        self.edges[bin + 1] - self.edges[bin]
    }

    /// Index of the bin containing `x`, if `x ∈ [e_0, e_L)`.
    pub fn bin_index(&self, x: f64) -> Option<usize> {
        if !(x >= self.first_edge() && x < self.last_edge()) {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= x) - 1)
    }

    /// Like [`bin_index`](Self::bin_index) but values at or past the last edge
    /// map to the final bin.
    pub fn bin_index_open(&self, x: f64) -> Option<usize> {
        if x >= self.last_edge() {
            Some(self.bins() - 1)
        } else {
            self.bin_index(x)
        }
    }

    /// `∫ f`, i.e. `Σ_l v_l (e_l − e_{l−1})`.
    pub fn mass(&self) -> f64 {
        (0..self.bins())
            .map(|l| self.values[l] * self.width(l))
            .sum()
    }

    /// `∫_{e_0}^{x} f`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for l in 0..self.bins() {
            let lo = self.edges[l];
            if x <= lo {
                break;
            }
            let hi = self.edges[l + 1].min(x);
            acc += self.values[l] * (hi - lo);
        }
        acc
    }
}

/// Value of the bin containing `x`, zero outside `[e_0, e_L)`.
pub fn eval_step(f: &HistogramFunction, x: f64) -> f64 {
    f.bin_index(x).map_or(0.0, |l| f.values[l])
}

/// Constant background plus separable time/mark triggering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct HawkesModel {
    mu: f64,
    g: HistogramFunction,
    k: HistogramFunction,
}

#[derive(Deserialize)]
struct RawModel {
    mu: f64,
    g: HistogramFunction,
    k: HistogramFunction,
}

impl TryFrom<RawModel> for HawkesModel {
    type Error = ModelError;

    fn try_from(raw: RawModel) -> Result<Self, Self::Error> {
        Self::new(raw.mu, raw.g, raw.k)
    }
}

impl HawkesModel {
    /// Checks structural invariants. `g` may carry less than unit mass (a
    /// fitted model whose long-lag pairs were truncated, or a pure
    /// background fit); use [`validate_density`](Self::validate_density) to
    /// require a proper density.
    pub fn new(mu: f64, g: HistogramFunction, k: HistogramFunction) -> Result<Self, ModelError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ModelError::BadBackground(mu));
        }
        if g.first_edge() != 0.0 {
            return Err(ModelError::TimeEdgeStart(g.first_edge()));
        }
        if g.last_edge() == OPEN_EDGE {
            return Err(ModelError::OpenTimeEdge);
        }
        Ok(Self { mu, g, k })
    }

    /// Pure background model: `k ≡ 0`.
    pub fn poisson(mu: f64) -> Result<Self, ModelError> {
        Self::new(
            mu,
            HistogramFunction::new(vec![0.0, 1.0], vec![1.0])?,
            HistogramFunction::new(vec![1.0, OPEN_EDGE], vec![0.0])?,
        )
    }

    pub fn validate_density(&self) -> Result<(), ModelError> {
        let mass = self.g.mass();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(ModelError::NotDensity(mass));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn g(&self) -> &HistogramFunction {
        &self.g
    }

    pub fn k(&self) -> &HistogramFunction {
        &self.k
    }

    pub fn g_at(&self, lag: f64) -> f64 {
        eval_step(&self.g, lag)
    }

    /// Productivity of a parent with `mark` victims. Marks at or past the
    /// last edge take the final bin's value; marks below the first edge get 0.
    pub fn k_at(&self, mark: u32) -> f64 {
        self.k
            .bin_index_open(mark as f64)
            .map_or(0.0, |l| self.k.values()[l])
    }

    /// Support of `g`: lags at or beyond this contribute nothing.
    pub fn reach(&self) -> f64 {
        self.g.last_edge()
    }
}

/// `λ(t)` given a sorted history; events with `t_i ≥ t` are ignored.
pub fn conditional_intensity(model: &HawkesModel, t: f64, history: &EventCatalog) -> f64 {
    let events = history.events();
    let end = events.partition_point(|e| e.t < t);
    let start = events[..end].partition_point(|e| t - e.t >= model.reach());
    let excitation: f64 = events[start..end]
        .iter()
        .map(|e| model.g_at(t - e.t) * model.k_at(e.mark))
        .sum();
    model.mu() + excitation
}

/// Excitation at each event from events earlier in catalog order. Same-time
/// events earlier in the order count, with lag 0.
pub fn excitation_at_events(model: &HawkesModel, catalog: &EventCatalog) -> Vec<f64> {
    let events = catalog.events();
    let reach = model.reach();
    let mut start = 0;
    let mut out = Vec::with_capacity(events.len());
    for (i, ev) in events.iter().enumerate() {
        while start < i && ev.t - events[start].t >= reach {
            start += 1;
        }
        let excitation: f64 = events[start..i]
            .iter()
            .map(|e| model.g_at(ev.t - e.t) * model.k_at(e.mark))
            .sum();
        out.push(excitation);
    }
    out
}

/// `λ(t_i)` for each event, using events `j < i` in catalog order.
pub fn intensity_at_events(model: &HawkesModel, catalog: &EventCatalog) -> Vec<f64> {
    excitation_at_events(model, catalog)
        .into_iter()
        .map(|x| model.mu() + x)
        .collect()
}

/// Branching ratio under a mark law: `∫g · Σ_m P(m) k(m)`.
pub fn branching_ratio<'a>(
    model: &HawkesModel,
    mark_law: impl IntoIterator<Item = (&'a u32, &'a f64)>,
) -> f64 {
    let mean_k: f64 = mark_law.into_iter().map(|(&m, &p)| p * model.k_at(m)).sum();
    model.g().mass() * mean_k
}
