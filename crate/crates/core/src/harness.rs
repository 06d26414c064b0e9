//! Replicated trials and their operating characteristics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate_all, select_optimal, DtrEstimate};
use crate::rng::stream;
use crate::sim::{simulate_trial, true_dtr_value, true_optimal, Association, PreferenceModel, ScenarioConfig};
use crate::trial::{CapacityFraction, Dataset, DesignKind, Dtr, Trajectory};

/// Largest fraction of replicates that may fail before a run is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Welfare of one non-responder: the probability of the preferred arm under
/// the stored randomization probability, and whether it was received.
pub fn participant_utility(t: &Trajectory) -> Result<(f64, u8)> {
    let (Some(lambda), Some(p_plus)) = (t.lambda, t.p2_plus()) else {
        return Err(Error::Domain(format!(
            "participant {} is a responder; utility is defined for non-responders",
            t.id
        )));
    };
    let u = if lambda == 1 { p_plus } else { 1.0 - p_plus };
    let k = u8::from((t.a2 == 1) == (lambda == 1));
    Ok((u, k))
}

/// Summary of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub estimates: Vec<DtrEstimate>,
    pub selected: Dtr,
    /// Mean utility over non-responders.
    pub u_bar: f64,
    /// Mean realized preference match over non-responders.
    pub k_bar: f64,
    /// Mean outcome over non-responders.
    pub y_bar: f64,
    pub counts: [usize; 4],
    pub fallback: bool,
}

/// Estimates and welfare metrics of a single trial.
pub fn summarize(data: &Dataset, fallback: bool) -> Result<ReplicateResult> {
    let estimates = estimate_all(data)?;
    let selected = select_optimal(&estimates);
    let mut u = 0.0;
    let mut k = 0.0;
    let mut y = 0.0;
    let mut n_nr = 0usize;
    for t in data.rows.iter().filter(|t| !t.r) {
        let (ui, ki) = participant_utility(t)?;
        u += ui;
        k += f64::from(ki);
        y += t.y;
        n_nr += 1;
    }
    if n_nr == 0 {
        return Err(Error::Domain("trial has no non-responders".into()));
    }
    let n = n_nr as f64;
    let mut counts = [0; 4];
    for d in Dtr::ALL {
        counts[d.index()] = data.count_consistent(d);
    }
    Ok(ReplicateResult {
        estimates,
        selected,
        u_bar: u / n,
        k_bar: k / n,
        y_bar: y / n,
        counts,
        fallback,
    })
}

/// Runs replicate `index` of `config`.
pub fn run_replicate(config: &ScenarioConfig, index: u64) -> Result<ReplicateResult> {
    let mut rng = stream(config.seed, index);
    let trial = simulate_trial(config, &mut rng)?;
    summarize(&trial.data, trial.fallback)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub value: f64,
    pub mc_se: f64,
}

impl Scalar {
    /// Mean and `sd / sqrt(n)` summed in slice order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let mc_se = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        };
        Self { value: mean, mc_se }
    }
}

/// Sample standard deviation (divisor n - 1).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Per-regime summaries in [`Dtr::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtrMetrics {
    pub dtr: Dtr,
    pub true_value: f64,
    pub selection_prob: Scalar,
    pub mean_count: Scalar,
    pub mean_estimate: Scalar,
    pub bias: Scalar,
    /// Standard deviation of the estimates across replicates.
    pub empirical_se: f64,
    /// Mean of the plug-in standard errors.
    pub mean_estimated_se: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub reps_used: usize,
    pub reps_failed: usize,
    pub fallbacks: usize,
    pub true_optimal: Dtr,
    pub mean_value_of_selected: Scalar,
    pub prob_correct_selection: Scalar,
    pub mean_utility: Scalar,
    pub mean_preference_match: Scalar,
    pub mean_outcome_nonresp: Scalar,
    pub per_dtr: Vec<DtrMetrics>,
}

/// Aggregates replicate summaries against the true regime values.
pub fn aggregate(
    results: &[ReplicateResult],
    true_values: &[f64; 4],
    optimal: Dtr,
    reps_failed: usize,
) -> MetricSet {
    let col = |f: &dyn Fn(&ReplicateResult) -> f64| -> Vec<f64> { results.iter().map(f).collect() };
    let per_dtr = Dtr::ALL
        .iter()
        .map(|&d| {
            let j = d.index();
            let est = col(&|r| r.estimates[j].mean);
            DtrMetrics {
                dtr: d,
                true_value: true_values[j],
                selection_prob: Scalar::from_samples(&col(&|r| f64::from(u8::from(r.selected == d)))),
                mean_count: Scalar::from_samples(&col(&|r| r.counts[j] as f64)),
                mean_estimate: Scalar::from_samples(&est),
                bias: Scalar::from_samples(&col(&|r| r.estimates[j].mean - true_values[j])),
                empirical_se: sample_sd(&est),
                mean_estimated_se: Scalar::from_samples(&col(&|r| r.estimates[j].se())),
            }
        })
        .collect();
    MetricSet {
        reps_used: results.len(),
        reps_failed,
        fallbacks: results.iter().filter(|r| r.fallback).count(),
        true_optimal: optimal,
        mean_value_of_selected: Scalar::from_samples(&col(&|r| true_values[r.selected.index()])),
        prob_correct_selection: Scalar::from_samples(&col(&|r| f64::from(u8::from(r.selected == optimal)))),
        mean_utility: Scalar::from_samples(&col(&|r| r.u_bar)),
        mean_preference_match: Scalar::from_samples(&col(&|r| r.k_bar)),
        mean_outcome_nonresp: Scalar::from_samples(&col(&|r| r.y_bar)),
        per_dtr,
    }
}

/// All replicate summaries, in replicate order, with failures removed.
///
/// Fails when more than [`MAX_FAILURE_FRACTION`] of the replicates fail.
pub fn run_replicate_results(config: &ScenarioConfig) -> Result<(Vec<ReplicateResult>, usize)> {
    config.validate()?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect();
    let total = outcomes.len();
    let limit = (total as f64 * MAX_FAILURE_FRACTION).floor() as usize;
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => ok.push(r),
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| format!("replicate {i}: {e}"));
            }
        }
    }
    if failed > limit {
        return Err(Error::TooManyFailures {
            failed,
            total,
            limit,
            first: first.unwrap_or_default(),
        });
    }
    Ok((ok, failed))
}

/// Operating characteristics of `config` over `config.reps` replicates.
///
/// Results do not depend on the number of threads.
pub fn run_replicates(config: &ScenarioConfig) -> Result<MetricSet> {
    let (results, failed) = run_replicate_results(config)?;
    let mut truth = [0.0; 4];
    for d in Dtr::ALL {
        truth[d.index()] = true_dtr_value(&config.model, d)?;
    }
    let optimal = true_optimal(&config.model)?;
    Ok(aggregate(&results, &truth, optimal, failed))
}

/// Axes of a scenario grid; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub n_pilot: Vec<usize>,
    #[serde(default)]
    pub capacity: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub association: Vec<Association>,
    #[serde(default)]
    pub kind: Vec<DesignKind>,
}

/// Identity of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub kind: DesignKind,
    pub n: usize,
    pub n_pilot: usize,
    pub capacity: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub association: Association,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "kind={} n={} n_pilot={} capacity={} epsilon={} eta={} association={}",
            self.kind, self.n, self.n_pilot, self.capacity, self.epsilon, self.eta, self.association
        )
    }
}

impl CellKey {
    pub fn of(config: &ScenarioConfig) -> Self {
        Self {
            kind: config.design.kind,
            n: config.n,
            n_pilot: config.n_pilot,
            capacity: config.design.capacity_fraction.a1_plus,
            epsilon: config.design.epsilon,
            eta: config.design.eta,
            association: config.association(),
        }
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Cartesian product of `axes` applied to `base`.
pub fn expand_grid(base: &ScenarioConfig, axes: &GridAxes) -> Result<Vec<ScenarioConfig>> {
    let d = &base.design;
    let mut out = Vec::new();
    for kind in axis(&axes.kind, d.kind) {
        for n in axis(&axes.n, base.n) {
            for n_pilot in axis(&axes.n_pilot, base.n_pilot) {
                for c in axis(&axes.capacity, d.capacity_fraction.a1_plus) {
                    for eps in axis(&axes.epsilon, d.epsilon) {
                        for eta in axis(&axes.eta, d.eta) {
                            for assoc in axis(&axes.association, base.association()) {
                                let mut cfg = base.clone();
                                cfg.n = n;
                                cfg.n_pilot = n_pilot;
                                cfg.design.kind = kind;
                                cfg.design.capacity_fraction = CapacityFraction::uniform(c);
                                cfg.design.epsilon = if kind == DesignKind::Smart { 0.0 } else { eps };
                                cfg.design.eta = eta;
                                if assoc != cfg.association() {
                                    cfg.model.preference = match assoc {
                                        Association::Negative => PreferenceModel::negative(),
                                        Association::Positive => PreferenceModel::positive(),
                                        Association::CovariateBased => {
                                            return Err(Error::Config(
                                                "a covariate-based association must come from the model".into(),
                                            ))
                                        }
                                    };
                                }
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs every cell of the grid; the first failure is reported with its cell.
pub fn scenario_grid(base: &ScenarioConfig, axes: &GridAxes) -> Result<Vec<(CellKey, MetricSet)>> {
    expand_grid(base, axes)?
        .into_iter()
        .map(|cfg| {
            let key = CellKey::of(&cfg);
            run_replicates(&cfg)
                .map(|m| (key.clone(), m))
                .map_err(|e| Error::Cell {
                    cell: key.to_string(),
                    source: Box::new(e),
                })
        })
        .collect()
}

/// One line of the long-format metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub kind: DesignKind,
    pub n: usize,
    pub n_pilot: usize,
    pub capacity: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub association: Association,
    pub metric: String,
    /// Empty for design-level metrics.
    pub dtr: String,
    pub value: f64,
    /// Empty when the metric has no Monte Carlo standard error.
    pub mc_se: Option<f64>,
}

/// Flattens metrics into one row per (cell, metric, regime).
pub fn long_rows(cells: &[(CellKey, MetricSet)]) -> Vec<LongRow> {
    let mut rows = Vec::new();
    for (k, m) in cells {
        let mut push = |metric: &str, dtr: String, value: f64, mc_se: Option<f64>| {
            rows.push(LongRow {
                kind: k.kind,
                n: k.n,
                n_pilot: k.n_pilot,
                capacity: k.capacity,
                epsilon: k.epsilon,
                eta: k.eta,
                association: k.association,
                metric: metric.into(),
                dtr,
                value,
                mc_se,
            })
        };
        let scalar = |s: Scalar| (s.value, Some(s.mc_se));
        for (name, s) in [
            ("prob_correct_selection", m.prob_correct_selection),
            ("mean_value_of_selected", m.mean_value_of_selected),
            ("mean_utility", m.mean_utility),
            ("mean_preference_match", m.mean_preference_match),
            ("mean_outcome_nonresp", m.mean_outcome_nonresp),
        ] {
            let (v, se) = scalar(s);
            push(name, String::new(), v, se);
        }
        push("reps_used", String::new(), m.reps_used as f64, None);
        push("reps_failed", String::new(), m.reps_failed as f64, None);
        for d in &m.per_dtr {
            let tag = d.dtr.to_string();
            push("true_value", tag.clone(), d.true_value, None);
            for (name, s) in [
                ("selection_prob", d.selection_prob),
                ("mean_count", d.mean_count),
                ("mean_estimate", d.mean_estimate),
                ("bias", d.bias),
                ("mean_estimated_se", d.mean_estimated_se),
            ] {
                let (v, se) = scalar(s);
                push(name, tag.clone(), v, se);
            }
            push("empirical_se", tag, d.empirical_se, None);
        }
    }
    rows
}
