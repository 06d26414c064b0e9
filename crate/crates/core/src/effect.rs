//! Individualized treatment effects from linear Q-learning, plus the
//! normalization and equal-frequency binning applied before allocation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::{least_squares, Matrix};
use crate::trial::{Dataset, Trajectory};

/// Name of the constant column.
pub const INTERCEPT: &str = "intercept";
/// Name of the stage-1 treatment column (stage-2 models only).
pub const A1: &str = "a1";

/// Main-effect and treatment-interaction columns of one stage's Q-function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub main_columns: Vec<String>,
    pub interaction_columns: Vec<String>,
}

impl FeatureSpec {
    pub fn new<S: AsRef<str>>(main: &[S], interaction: &[S]) -> Self {
        Self {
            main_columns: main.iter().map(|s| s.as_ref().to_string()).collect(),
            interaction_columns: interaction.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    fn n_params(&self) -> usize {
        self.main_columns.len() + self.interaction_columns.len()
    }

    fn design_names(&self, treatment: &str) -> Vec<String> {
        self.main_columns
            .iter()
            .cloned()
            .chain(
                self.interaction_columns
                    .iter()
                    .map(|c| format!("{c}:{treatment}")),
            )
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Intercept,
    A1,
    O1(usize),
    O2(usize),
}

impl Column {
    fn value(self, t: &Trajectory) -> f64 {
        match self {
            Column::Intercept => 1.0,
            Column::A1 => f64::from(t.a1),
            Column::O1(j) => t.o1[j],
            Column::O2(j) => t.o2[j],
        }
    }
}

fn resolve(name: &str, stage: Stage, o1: &[String], o2: &[String]) -> Result<Column> {
    if name == INTERCEPT {
        return Ok(Column::Intercept);
    }
    if let Some(j) = o1.iter().position(|c| c == name) {
        return Ok(Column::O1(j));
    }
    if stage == Stage::Two {
        if name == A1 {
            return Ok(Column::A1);
        }
        if let Some(j) = o2.iter().position(|c| c == name) {
            return Ok(Column::O2(j));
        }
    }
    Err(Error::Schema(format!(
        "feature column '{name}' is not available to the stage-{} model",
        if stage == Stage::One { 1 } else { 2 }
    )))
}

fn resolve_all(names: &[String], stage: Stage, o1: &[String], o2: &[String]) -> Result<Vec<Column>> {
    if names.is_empty() {
        return Err(Error::Schema("feature column lists must be non-empty".into()));
    }
    names.iter().map(|n| resolve(n, stage, o1, o2)).collect()
}

/// Fitted `Q(H, A) = gamma' H0 + alpha' H1 A` for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFit {
    pub stage: Stage,
    pub feature_spec: FeatureSpec,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub n_fit: usize,
}

/// A fit whose columns are resolved against a dataset schema.
#[derive(Debug, Clone)]
pub struct BoundFit<'a> {
    fit: &'a QFit,
    main: Vec<Column>,
    interaction: Vec<Column>,
}

impl QFit {
    pub fn bind(&self, o1_names: &[String], o2_names: &[String]) -> Result<BoundFit<'_>> {
        Ok(BoundFit {
            fit: self,
            main: resolve_all(&self.feature_spec.main_columns, self.stage, o1_names, o2_names)?,
            interaction: resolve_all(
                &self.feature_spec.interaction_columns,
                self.stage,
                o1_names,
                o2_names,
            )?,
        })
    }
}

impl BoundFit<'_> {
    pub fn main_value(&self, t: &Trajectory) -> f64 {
        dot(&self.fit.gamma, &self.main, t)
    }

    pub fn interaction_value(&self, t: &Trajectory) -> f64 {
        dot(&self.fit.alpha, &self.interaction, t)
    }

    pub fn q_value(&self, t: &Trajectory, a: i8) -> f64 {
        self.main_value(t) + self.interaction_value(t) * f64::from(a)
    }

    /// Predicted effect of `a_e` over the other arm: `+-2 alpha' H1`.
    pub fn effect(&self, t: &Trajectory, a_e: i8) -> f64 {
        let v = 2.0 * self.interaction_value(t);
        if a_e == 1 {
            v
        } else {
            -v
        }
    }
}

fn dot(coef: &[f64], cols: &[Column], t: &Trajectory) -> f64 {
    coef.iter().zip(cols).map(|(c, col)| c * col.value(t)).sum()
}

fn fit_stage(
    rows: &[&Trajectory],
    response: &[f64],
    spec: &FeatureSpec,
    stage: Stage,
    o1: &[String],
    o2: &[String],
) -> Result<QFit> {
    let main = resolve_all(&spec.main_columns, stage, o1, o2)?;
    let inter = resolve_all(&spec.interaction_columns, stage, o1, o2)?;
    let p = spec.n_params();
    if rows.len() < p {
        return Err(Error::TooFewRows {
            rows: rows.len(),
            params: p,
        });
    }
    let mut x = Matrix::zeros(rows.len(), p);
    for (i, t) in rows.iter().enumerate() {
        let a = f64::from(match stage {
            Stage::One => t.a1,
            Stage::Two => t.a2,
        });
        for (j, c) in main.iter().enumerate() {
            x.set(i, j, c.value(t));
        }
        for (j, c) in inter.iter().enumerate() {
            x.set(i, main.len() + j, c.value(t) * a);
        }
    }
    let treatment = match stage {
        Stage::One => "a1",
        Stage::Two => "a2",
    };
    let theta = least_squares(&x, response, &spec.design_names(treatment))?;
    let (gamma, alpha) = theta.split_at(main.len());
    Ok(QFit {
        stage,
        feature_spec: spec.clone(),
        gamma: gamma.to_vec(),
        alpha: alpha.to_vec(),
        n_fit: rows.len(),
    })
}

/// Ordinary least squares fit of the stage-2 Q-function on the non-responders.
pub fn fit_q2(data: &Dataset, spec: &FeatureSpec) -> Result<QFit> {
    let rows: Vec<&Trajectory> = data.rows.iter().filter(|t| !t.r).collect();
    let y: Vec<f64> = rows.iter().map(|t| t.y).collect();
    fit_stage(&rows, &y, spec, Stage::Two, &data.o1_names, &data.o2_names)
}

/// Predicted stage-2 effect of `a2e` for a row given by name lookup.
pub fn predict_effect<F>(fit: &QFit, lookup: F, a2e: i8) -> Result<f64>
where
    F: Fn(&str) -> Option<f64>,
{
    let mut s = 0.0;
    for (name, a) in fit.feature_spec.interaction_columns.iter().zip(&fit.alpha) {
        let v = if name == INTERCEPT {
            1.0
        } else {
            lookup(name).ok_or_else(|| Error::Schema(format!("missing column '{name}'")))?
        };
        s += a * v;
    }
    Ok(if a2e == 1 { 2.0 * s } else { -2.0 * s })
}

/// Backward-induction outcome: the best fitted stage-2 value for
/// non-responders, the observed outcome for responders.
pub fn pseudo_outcome(fit: &QFit, data: &Dataset) -> Result<Vec<f64>> {
    let bound = fit.bind(&data.o1_names, &data.o2_names)?;
    Ok(data
        .rows
        .iter()
        .map(|t| {
            if t.r {
                t.y
            } else {
                bound.main_value(t) + bound.interaction_value(t).abs()
            }
        })
        .collect())
}

/// Stage-1 Q-function fit on all rows against the pseudo-outcomes.
pub fn fit_q1(data: &Dataset, pseudo: &[f64], spec: &FeatureSpec) -> Result<QFit> {
    if pseudo.len() != data.len() {
        return Err(Error::Domain(format!(
            "{} pseudo-outcomes for {} rows",
            pseudo.len(),
            data.len()
        )));
    }
    let rows: Vec<&Trajectory> = data.rows.iter().collect();
    fit_stage(&rows, pseudo, spec, Stage::One, &data.o1_names, &data.o2_names)
}

/// Predicted stage-1 effect of `a1e`: `+-2 alpha1' H11`.
pub fn predict_stage1_effect<F>(fit: &QFit, lookup: F, a1e: i8) -> Result<f64>
where
    F: Fn(&str) -> Option<f64>,
{
    predict_effect(fit, lookup, a1e)
}

/// Centers and scales to sample mean 0 and sample sd 1 (divisor n - 1).
/// A constant or single-element input maps to zeros.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let ss: f64 = raw.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; n];
    }
    raw.iter().map(|x| (x - mean) / sd).collect()
}

/// Equal-frequency binning result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binned {
    /// Each input replaced by its bin mean, in input order.
    pub values: Vec<f64>,
    /// Largest member of every non-empty bin except the last.
    pub edges: Vec<f64>,
    /// Mean of every non-empty bin, ascending.
    pub means: Vec<f64>,
}

/// Splits the sorted values into `bins` contiguous groups whose sizes differ by
/// at most one (larger groups first). A run of tied values stays in the bin of
/// its first element.
pub fn bin(values: &[f64], bins: usize) -> Binned {
    assert!(bins >= 1, "at least one bin");
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let base = n / bins;
    let extra = n % bins;
    // bin owning sorted position `pos`
    let by_position = |pos: usize| {
        let big = extra * (base + 1);
        if pos < big {
            pos / (base + 1)
        } else {
            extra + (pos - big) / base.max(1)
        }
    };
    let mut label = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        label[pos] = if pos > 0 && values[order[pos - 1]] == values[i] {
            label[pos - 1]
        } else {
            by_position(pos)
        };
    }

    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let mut maxima = vec![f64::NEG_INFINITY; bins];
    let mut minima = vec![f64::INFINITY; bins];
    for (pos, &i) in order.iter().enumerate() {
        let b = label[pos];
        sums[b] += values[i];
        counts[b] += 1;
        maxima[b] = maxima[b].max(values[i]);
        minima[b] = minima[b].min(values[i]);
    }
    let bin_mean = |b: usize| {
        // a single tied run reproduces its value exactly
        if maxima[b] == minima[b] {
            maxima[b]
        } else {
            sums[b] / counts[b] as f64
        }
    };
    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = bin_mean(label[pos]);
    }
    let nonempty: Vec<usize> = (0..bins).filter(|&b| counts[b] > 0).collect();
    let means = nonempty.iter().map(|&b| bin_mean(b)).collect();
    let edges = nonempty
        .iter()
        .take(nonempty.len().saturating_sub(1))
        .map(|&b| maxima[b])
        .collect();
    Binned {
        values: out,
        edges,
        means,
    }
}

/// Raw, normalized and binned effects for one set of participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub binned: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub bin_means: Vec<f64>,
    pub bins_b: usize,
}

impl EffectEstimates {
    pub fn from_raw(raw: Vec<f64>, bins_b: usize) -> Self {
        let normalized = normalize(&raw);
        let b = bin(&normalized, bins_b);
        Self {
            raw,
            normalized,
            binned: b.values,
            bin_edges: b.edges,
            bin_means: b.means,
            bins_b,
        }
    }
}

pub const EFFECT_MODEL_SCHEMA: u32 = 1;

/// Serialized effect model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectModel {
    pub schema_version: u32,
    pub stage2: QFit,
    #[serde(default)]
    pub stage1: Option<QFit>,
    pub bins_b: usize,
    /// Binning of the fitting sample's own predicted effects of arm +1.
    #[serde(default)]
    pub reference_bins: Option<Binned>,
}

impl EffectModel {
    /// Fits both stages on a pilot dataset.
    pub fn fit(
        pilot: &Dataset,
        stage2: &FeatureSpec,
        stage1: Option<&FeatureSpec>,
        bins_b: usize,
    ) -> Result<Self> {
        let q2 = fit_q2(pilot, stage2)?;
        let q1 = match stage1 {
            Some(spec) => {
                let pseudo = pseudo_outcome(&q2, pilot)?;
                Some(fit_q1(pilot, &pseudo, spec)?)
            }
            None => None,
        };
        let bound = q2.bind(&pilot.o1_names, &pilot.o2_names)?;
        let raw: Vec<f64> = pilot
            .rows
            .iter()
            .filter(|t| !t.r)
            .map(|t| bound.effect(t, 1))
            .collect();
        let reference_bins = Some(bin(&normalize(&raw), bins_b));
        Ok(Self {
            schema_version: EFFECT_MODEL_SCHEMA,
            stage2: q2,
            stage1: q1,
            bins_b,
            reference_bins,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.schema_version != EFFECT_MODEL_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported effect model schema version {}",
                m.schema_version
            )));
        }
        let check = |f: &QFit| {
            f.gamma.len() == f.feature_spec.main_columns.len()
                && f.alpha.len() == f.feature_spec.interaction_columns.len()
        };
        if !check(&m.stage2) || !m.stage1.as_ref().map_or(true, check) {
            return Err(Error::Schema(
                "coefficient lengths do not match the feature columns".into(),
            ));
        }
        Ok(m)
    }
}
