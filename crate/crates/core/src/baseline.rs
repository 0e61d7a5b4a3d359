//! Exponential self-excitation baseline.
//!
//! Each event raises the expected count on day `t_j` by `N_secondary` times
//! the probability that an exponential delay of mean `T_excite` lands in
//! that 24-hour day:
//!
//! ```text
//! P(Δ) = ∫_{Δ−1}^{Δ} e^{−x/T_excite} / T_excite dx = e^{−(Δ−1)/T_excite} − e^{−Δ/T_excite}
//! N_exp(t_n) = N_0(t_n) + N_secondary Σ_{i : t_i < t_n} P(⌈t_n − t_i⌉)
//! ```
//!
//! The parameters are taken as given, not estimated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::EventCatalog;
use crate::intensity::HawkesModel;
use crate::misd::{e_step, offspring_stats, FitError};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("day gap must be at least 1, got {0}")]
    GapTooSmall(u64),
    #[error("T_excite must be positive, got {0}")]
    BadExcite(f64),
    #[error("N_secondary must be non-negative, got {0}")]
    BadSecondary(f64),
    #[error("baseline daily count table is empty or negative")]
    BadBaseline,
}

/// `N_0(t)`: a constant or a per-day table (the last entry repeats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaselineCount {
    Constant(f64),
    Daily(Vec<f64>),
}

impl BaselineCount {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Daily(table) => {
                let day = (t.max(0.0).floor() as usize).min(table.len() - 1);
                table[day]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowersModel {
    pub t_excite: f64,
    pub n_secondary: f64,
    pub n0: BaselineCount,
}

impl TowersModel {
    pub fn new(t_excite: f64, n_secondary: f64, n0: BaselineCount) -> Result<Self, BaselineError> {
        let m = Self {
            t_excite,
            n_secondary,
            n0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.t_excite > 0.0 && self.t_excite.is_finite()) {
            return Err(BaselineError::BadExcite(self.t_excite));
        }
        if !(self.n_secondary >= 0.0 && self.n_secondary.is_finite()) {
            return Err(BaselineError::BadSecondary(self.n_secondary));
        }
        match &self.n0 {
            BaselineCount::Constant(c) if *c >= 0.0 => Ok(()),
            BaselineCount::Daily(t) if !t.is_empty() && t.iter().all(|&x| x >= 0.0) => Ok(()),
            _ => Err(BaselineError::BadBaseline),
        }
    }

    /// Expected secondary events within `days` of their trigger.
    pub fn secondary_within(&self, days: f64) -> f64 {
        self.n_secondary * -(-days / self.t_excite).exp_m1()
    }
}

/// Probability that the delay falls on day `delta_days` after the trigger.
pub fn towers_probability(delta_days: u64, t_excite: f64) -> Result<f64, BaselineError> {
    if delta_days < 1 {
        return Err(BaselineError::GapTooSmall(delta_days));
    }
    if !(t_excite > 0.0 && t_excite.is_finite()) {
        return Err(BaselineError::BadExcite(t_excite));
    }
    let one_day = -(-1.0 / t_excite).exp_m1();
    Ok((-((delta_days - 1) as f64) / t_excite).exp() * one_day)
}

/// Whole-day gap between an earlier event and `t_n`, at least 1.
fn day_gap(t_n: f64, t_i: f64) -> u64 {
    ((t_n - t_i).ceil() as u64).max(1)
}

/// `N_exp(t_n)`, the expected count on the day at `t_n`.
pub fn towers_expected(t_n: f64, catalog: &EventCatalog, model: &TowersModel) -> f64 {
    let events = catalog.events();
    let end = events.partition_point(|e| e.t < t_n);
    let excitation: f64 = events[..end]
        .iter()
        .map(|e| towers_probability(day_gap(t_n, e.t), model.t_excite).expect("validated model"))
        .sum();
    model.n0.at(t_n) + model.n_secondary * excitation
}

/// Expected count on `[day, day + 1)` under a Hawkes model:
/// `μ + Σ_i k(m_i) ∫_day g(t − t_i) dt`.
pub fn hawkes_expected_on_day(model: &HawkesModel, catalog: &EventCatalog, day: f64) -> f64 {
    let g = model.g();
    let end = day + 1.0;
    let events = catalog.events();
    let upto = events.partition_point(|e| e.t < end);
    let from = events[..upto].partition_point(|e| day - e.t >= model.reach());
    let excitation: f64 = events[from..upto]
        .iter()
        .map(|e| {
            let lo = (day - e.t).max(0.0);
            let hi = end - e.t;
            model.k_at(e.mark) * (g.cumulative(hi) - g.cumulative(lo))
        })
        .sum();
    model.mu() + excitation
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailyExpected {
    pub day: u64,
    pub date: String,
    pub observed: usize,
    pub towers: f64,
    pub hawkes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub window_days: f64,
    /// Hawkes offspring per event within `window_days`.
    pub hawkes_offspring_within_window: Option<f64>,
    pub hawkes_mean_offspring: Option<f64>,
    pub towers_n_secondary: f64,
    /// Towers secondary events per trigger within `window_days`.
    pub towers_secondary_within_window: f64,
    pub towers_t_excite: f64,
    pub daily: Vec<DailyExpected>,
}

/// Both models' contagion summaries and per-day expected counts over the
/// catalog window. The Hawkes offspring figures come from one E-step of
/// `hawkes` on `catalog`. Without a Hawkes model only the baseline side is
/// filled.
pub fn compare(
    hawkes: Option<&HawkesModel>,
    model: &TowersModel,
    catalog: &EventCatalog,
    window_days: f64,
) -> Result<ComparisonReport, FitError> {
    let days = catalog.length().ceil() as u64;
    let mut observed = vec![0usize; days as usize];
    for e in catalog.events() {
        let d = (e.t.floor() as usize).min(observed.len().saturating_sub(1));
        if !observed.is_empty() {
            observed[d] += 1;
        }
    }
    let daily = (0..days)
        .map(|d| {
            let t = d as f64;
            DailyExpected {
                day: d,
                date: catalog.date_of(t).to_string(),
                observed: observed[d as usize],
                towers: towers_expected(t, catalog, model),
                hawkes: hawkes.map(|h| hawkes_expected_on_day(h, catalog, t)),
            }
        })
        .collect();
    let stats = match hawkes {
        Some(h) if !catalog.is_empty() => {
            Some(offspring_stats(&e_step(h, catalog)?, catalog, window_days))
        }
        _ => None,
    };
    Ok(ComparisonReport {
        window_days,
        hawkes_offspring_within_window: stats.as_ref().map(|s| s.mean_offspring_within_window),
        hawkes_mean_offspring: stats.as_ref().map(|s| s.mean_offspring),
        towers_n_secondary: model.n_secondary,
        towers_secondary_within_window: model.secondary_within(window_days),
        towers_t_excite: model.t_excite,
        daily,
    })
}
