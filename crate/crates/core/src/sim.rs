//! Synthetic trial generation.
//!
//! A [`SyntheticModel`] describes covariates, response rates, linear outcome
//! models and how stage-2 preferences arise. [`gen_trial`] runs one trial
//! under a design; [`run_ar_exam`] runs the variant whose effect model is fit
//! on a balanced burn-in cohort.

use rand::Rng as _;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::allocate::allocate_arm;
use crate::effect::{EffectModel, FeatureSpec};
use crate::error::{Error, Result};
use crate::market::draw_assignment;
use crate::rng::Rng;
use crate::trial::{Dataset, DesignKind, DesignSpec, Dtr, Trajectory};

/// Marginal distribution of one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl Distribution {
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, .. } => mean,
            Distribution::Bernoulli { p } => p,
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Distribution::Normal { mean, sd } => {
                Normal::new(mean, sd).expect("validated sd").sample(rng)
            }
            Distribution::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Distribution::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Distribution::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distribution for '{name}'")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariate {
    pub name: String,
    pub dist: Distribution,
}

/// Coefficient on a named covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub column: String,
    pub coef: f64,
}

/// `Y = intercept + sum terms + a1 A1 + A2 (a2 + a1_a2 A1 + sum a2_terms) + N(0, sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub a1: f64,
    #[serde(default)]
    pub a2: f64,
    #[serde(default)]
    pub a1_a2: f64,
    #[serde(default)]
    pub a2_terms: Vec<Term>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRates {
    pub a1_plus: f64,
    pub a1_minus: f64,
}

impl ResponseRates {
    pub fn for_arm(&self, a1: i8) -> f64 {
        if a1 == 1 {
            self.a1_plus
        } else {
            self.a1_minus
        }
    }
}

/// How the stage-2 preference `Lambda` is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PreferenceModel {
    /// `P(Lambda = 1) = logistic(slope * zeta + intercept)` with `zeta` the true
    /// effect of arm +1.
    Logistic { slope: f64, intercept: f64 },
    /// Probability keyed on a binary covariate.
    Covariate {
        column: String,
        p_if_zero: f64,
        p_if_one: f64,
    },
    Constant { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Association {
    Negative,
    Positive,
    CovariateBased,
}

impl std::fmt::Display for Association {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Association::Negative => "negative",
            Association::Positive => "positive",
            Association::CovariateBased => "covariate-based",
        })
    }
}

impl PreferenceModel {
    pub fn negative() -> Self {
        PreferenceModel::Logistic {
            slope: -0.2,
            intercept: 1.0,
        }
    }

    pub fn positive() -> Self {
        PreferenceModel::Logistic {
            slope: 0.2,
            intercept: 0.5,
        }
    }

    pub fn association(&self) -> Association {
        match self {
            PreferenceModel::Logistic { slope, .. } if *slope < 0.0 => Association::Negative,
            PreferenceModel::Logistic { .. } => Association::Positive,
            PreferenceModel::Covariate { .. } | PreferenceModel::Constant { .. } => {
                Association::CovariateBased
            }
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Data-generating model of a two-stage trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModel {
    #[serde(default)]
    pub baseline: Vec<Covariate>,
    pub response_rate: ResponseRates,
    #[serde(default)]
    pub tailoring: Vec<Covariate>,
    pub outcome_nonresp: OutcomeModel,
    pub outcome_resp: OutcomeModel,
    pub preference: PreferenceModel,
}

/// Column position in the (o1, o2) covariate vectors.
#[derive(Debug, Clone, Copy)]
enum Slot {
    O1(usize),
    O2(usize),
}

#[derive(Debug, Clone)]
struct BoundOutcome {
    intercept: f64,
    terms: Vec<(Slot, f64)>,
    a1: f64,
    a2: f64,
    a1_a2: f64,
    a2_terms: Vec<(Slot, f64)>,
    noise: Normal<f64>,
}

fn value(slot: Slot, o1: &[f64], o2: &[f64]) -> f64 {
    match slot {
        Slot::O1(j) => o1[j],
        Slot::O2(j) => o2[j],
    }
}

impl BoundOutcome {
    fn mean(&self, a1: i8, a2: i8, o1: &[f64], o2: &[f64]) -> f64 {
        let a1f = f64::from(a1);
        let main: f64 = self.terms.iter().map(|&(s, c)| c * value(s, o1, o2)).sum();
        self.intercept + main + self.a1 * a1f + f64::from(a2) * self.a2_coef(a1, o1, o2)
    }

    fn a2_coef(&self, a1: i8, o1: &[f64], o2: &[f64]) -> f64 {
        let mods: f64 = self.a2_terms.iter().map(|&(s, c)| c * value(s, o1, o2)).sum();
        self.a2 + self.a1_a2 * f64::from(a1) + mods
    }
}

/// A model with every column reference resolved.
#[derive(Debug, Clone)]
struct Bound {
    nonresp: BoundOutcome,
    resp: BoundOutcome,
    preference_slot: Option<Slot>,
}

impl SyntheticModel {
    pub fn o1_names(&self) -> Vec<String> {
        self.baseline.iter().map(|c| c.name.clone()).collect()
    }

    pub fn o2_names(&self) -> Vec<String> {
        self.tailoring.iter().map(|c| c.name.clone()).collect()
    }

    fn slot(&self, column: &str) -> Result<Slot> {
        if let Some(j) = self.baseline.iter().position(|c| c.name == column) {
            return Ok(Slot::O1(j));
        }
        if let Some(j) = self.tailoring.iter().position(|c| c.name == column) {
            return Ok(Slot::O2(j));
        }
        Err(Error::Config(format!("unknown covariate column '{column}'")))
    }

    fn bind_outcome(&self, m: &OutcomeModel, responders: bool) -> Result<BoundOutcome> {
        let terms = |ts: &[Term]| -> Result<Vec<(Slot, f64)>> {
            ts.iter()
                .map(|t| {
                    let s = self.slot(&t.column)?;
                    if responders && matches!(s, Slot::O2(_)) {
                        return Err(Error::Config(format!(
                            "responder outcome cannot use intermediate covariate '{}'",
                            t.column
                        )));
                    }
                    Ok((s, t.coef))
                })
                .collect()
        };
        if !(m.noise_sd > 0.0 && m.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise sd {} must be positive", m.noise_sd)));
        }
        if responders && (m.a2 != 0.0 || m.a1_a2 != 0.0 || !m.a2_terms.is_empty()) {
            return Err(Error::Config("responder outcome cannot depend on a2".into()));
        }
        Ok(BoundOutcome {
            intercept: m.intercept,
            terms: terms(&m.terms)?,
            a1: m.a1,
            a2: m.a2,
            a1_a2: m.a1_a2,
            a2_terms: terms(&m.a2_terms)?,
            noise: Normal::new(0.0, m.noise_sd).expect("checked sd"),
        })
    }

    fn bind(&self) -> Result<Bound> {
        let preference_slot = match &self.preference {
            PreferenceModel::Covariate { column, .. } => Some(self.slot(column)?),
            _ => None,
        };
        Ok(Bound {
            nonresp: self.bind_outcome(&self.outcome_nonresp, false)?,
            resp: self.bind_outcome(&self.outcome_resp, true)?,
            preference_slot,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (c, prefix) in self
            .baseline
            .iter()
            .map(|c| (c, "o1_"))
            .chain(self.tailoring.iter().map(|c| (c, "o2_")))
        {
            if !c.name.starts_with(prefix) {
                return Err(Error::Config(format!(
                    "covariate '{}' must start with '{prefix}'",
                    c.name
                )));
            }
            c.dist.validate(&c.name)?;
        }
        let mut names = self.o1_names();
        names.extend(self.o2_names());
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate covariate names".into()));
        }
        for p in [self.response_rate.a1_plus, self.response_rate.a1_minus] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("response rate {p} must lie in (0,1)")));
            }
        }
        match &self.preference {
            PreferenceModel::Covariate {
                p_if_zero, p_if_one, ..
            } => {
                for p in [p_if_zero, p_if_one] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::Config(format!("preference probability {p}")));
                    }
                }
            }
            PreferenceModel::Constant { p } if !(0.0..=1.0).contains(p) => {
                return Err(Error::Config(format!("preference probability {p}")));
            }
            _ => {}
        }
        self.bind().map(|_| ())
    }

    /// Mean of a covariate column.
    fn column_mean(&self, slot: Slot) -> f64 {
        match slot {
            Slot::O1(j) => self.baseline[j].dist.mean(),
            Slot::O2(j) => self.tailoring[j].dist.mean(),
        }
    }
}

/// True effect of arm +1 over arm -1 for a non-responder.
pub fn true_zeta(model: &SyntheticModel, a1: i8, o1: &[f64], o2: &[f64]) -> Result<f64> {
    let b = model.bind()?;
    Ok(2.0 * b.nonresp.a2_coef(a1, o1, o2))
}

/// Probability that a non-responder prefers arm +1.
pub fn preference_probability(
    model: &SyntheticModel,
    zeta_true: f64,
    covariate: Option<f64>,
) -> f64 {
    match &model.preference {
        PreferenceModel::Logistic { slope, intercept } => logistic(slope * zeta_true + intercept),
        PreferenceModel::Covariate {
            p_if_zero, p_if_one, ..
        } => {
            if covariate.unwrap_or(0.0) != 0.0 {
                *p_if_one
            } else {
                *p_if_zero
            }
        }
        PreferenceModel::Constant { p } => *p,
    }
}

/// Draws `Lambda` given the true effect or the keyed covariate value.
pub fn gen_preference(
    model: &SyntheticModel,
    zeta_true: f64,
    covariate: Option<f64>,
    rng: &mut Rng,
) -> u8 {
    u8::from(rng.random::<f64>() < preference_probability(model, zeta_true, covariate))
}

/// Everything needed to run replicated trials of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: SyntheticModel,
    pub design: DesignSpec,
    pub n: usize,
    /// Size of the external pilot SMART; 0 means none.
    #[serde(default)]
    pub n_pilot: usize,
    /// Columns of the fitted effect model.
    pub features: FeatureSpec,
    pub reps: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn association(&self) -> Association {
        self.model.preference.association()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        self.model.validate()?;
        self.design.validate()?;
        if self.design.kind == DesignKind::SmartExam && self.n_pilot == 0 {
            return Err(Error::Config("SMART-EXAM needs a pilot (n_pilot > 0)".into()));
        }
        Ok(())
    }
}

/// Stage-1 data of a participant before stage-2 allocation.
struct Enrolled {
    o1: Vec<f64>,
    a1: i8,
    r: bool,
    o2: Vec<f64>,
    lambda: Option<u8>,
    y: f64,
}

fn enroll(model: &SyntheticModel, b: &Bound, rng: &mut Rng) -> Enrolled {
    let o1: Vec<f64> = model.baseline.iter().map(|c| c.dist.sample(rng)).collect();
    let a1: i8 = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
    let r = rng.random::<f64>() < model.response_rate.for_arm(a1);
    let o2: Vec<f64> = model.tailoring.iter().map(|c| c.dist.sample(rng)).collect();
    let (lambda, y) = if r {
        let y = b.resp.mean(a1, 0, &o1, &o2) + b.resp.noise.sample(rng);
        (None, y)
    } else {
        let zeta = 2.0 * b.nonresp.a2_coef(a1, &o1, &o2);
        let cov = b.preference_slot.map(|s| value(s, &o1, &o2));
        (Some(gen_preference(model, zeta, cov, rng)), f64::NAN)
    };
    Enrolled {
        o1,
        a1,
        r,
        o2,
        lambda,
        y,
    }
}

/// How stage-2 probabilities are set for one cohort.
#[derive(Clone, Copy)]
enum Stage2<'a> {
    Balanced,
    Market(&'a EffectModel),
}

fn generate(
    model: &SyntheticModel,
    spec: &DesignSpec,
    n: usize,
    first_id: u64,
    stage2: Stage2<'_>,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    let b = model.bind()?;
    let people: Vec<Enrolled> = (0..n).map(|_| enroll(model, &b, rng)).collect();

    // probability of arm +1, probability of the arm a2e, a2e and group
    let mut stage2_probs: Vec<Option<(f64, i8, Option<u32>)>> = vec![None; n];
    for a1 in [1i8, -1] {
        let idx: Vec<usize> = (0..n).filter(|&i| !people[i].r && people[i].a1 == a1).collect();
        if idx.is_empty() {
            continue;
        }
        match stage2 {
            Stage2::Balanced => {
                let c = spec.capacity_fraction.for_arm(a1);
                for &i in &idx {
                    stage2_probs[i] = Some((c, 1, None));
                }
            }
            Stage2::Market(effects) => {
                let names_o1 = model.o1_names();
                let names_o2 = model.o2_names();
                let bound = effects.stage2.bind(&names_o1, &names_o2)?;
                let lambdas: Vec<u8> = idx.iter().map(|&i| people[i].lambda.unwrap_or(0)).collect();
                let zeta_plus: Vec<f64> = idx
                    .iter()
                    .map(|&i| {
                        let p = &people[i];
                        let probe = Trajectory {
                            id: 0,
                            o1: p.o1.clone(),
                            a1,
                            r: false,
                            o2: p.o2.clone(),
                            lambda: p.lambda,
                            a2: 0,
                            y: 0.0,
                            p1: 0.5,
                            p2: None,
                            g: None,
                        };
                        bound.effect(&probe, 1)
                    })
                    .collect();
                let alloc = allocate_arm(spec, a1, &lambdas, &zeta_plus)?;
                for (k, &i) in idx.iter().enumerate() {
                    stage2_probs[i] =
                        Some((alloc.state.p_final[k], alloc.state.a2e, Some(alloc.groups[k])));
                }
            }
        }
    }

    let mut rows = Vec::with_capacity(n);
    for (i, p) in people.into_iter().enumerate() {
        let id = first_id + i as u64;
        let t = match stage2_probs[i] {
            None => Trajectory {
                id,
                o1: p.o1,
                a1: p.a1,
                r: true,
                o2: p.o2,
                lambda: None,
                a2: 0,
                y: p.y,
                p1: 0.5,
                p2: None,
                g: None,
            },
            Some((p_e, a2e, g)) => {
                let a2 = draw_assignment(p_e, rng.random::<f64>(), a2e);
                let p2 = if a2 == a2e { p_e } else { 1.0 - p_e };
                let y = b.nonresp.mean(p.a1, a2, &p.o1, &p.o2) + b.nonresp.noise.sample(rng);
                Trajectory {
                    id,
                    o1: p.o1,
                    a1: p.a1,
                    r: false,
                    o2: p.o2,
                    lambda: p.lambda,
                    a2,
                    y,
                    p1: 0.5,
                    p2: Some(p2),
                    g,
                }
            }
        };
        rows.push(t);
    }
    Ok(rows)
}

fn dataset(model: &SyntheticModel, rows: Vec<Trajectory>) -> Dataset {
    Dataset {
        o1_names: model.o1_names(),
        o2_names: model.o2_names(),
        rows,
    }
}

/// One trial of `config.n` participants under a SMART or SMART-EXAM design.
///
/// SMART-EXAM requires an effect model. For SMART-AR-EXAM use [`run_ar_exam`].
pub fn gen_trial(
    config: &ScenarioConfig,
    effects: Option<&EffectModel>,
    rng: &mut Rng,
) -> Result<Dataset> {
    let stage2 = match config.design.kind {
        DesignKind::Smart => Stage2::Balanced,
        DesignKind::SmartExam => Stage2::Market(effects.ok_or_else(|| {
            Error::Config("SMART-EXAM trial requires a fitted effect model".into())
        })?),
        DesignKind::SmartArExam => {
            return Err(Error::Config(
                "SMART-AR-EXAM trials are generated by run_ar_exam".into(),
            ))
        }
    };
    let rows = generate(&config.model, &config.design, config.n, 0, stage2, rng)?;
    Ok(dataset(&config.model, rows))
}

/// Balanced pilot SMART with equal capacities.
pub fn gen_pilot(model: &SyntheticModel, n_pilot: usize, rng: &mut Rng) -> Result<Dataset> {
    let rows = generate(model, &DesignSpec::smart(0.5), n_pilot, 0, Stage2::Balanced, rng)?;
    Ok(dataset(model, rows))
}

/// A trial with its allocation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub data: Dataset,
    /// The burn-in effect fit failed and the remainder was randomized
    /// with balanced probabilities.
    pub fallback: bool,
}

/// SMART-AR-EXAM: the first `n_min` participants are randomized with
/// balanced probabilities, an effect model is fit on them and the remaining
/// non-responders of each arm are cleared as one batch.
pub fn run_ar_exam(config: &ScenarioConfig, rng: &mut Rng) -> Result<Trial> {
    let model = &config.model;
    let spec = &config.design;
    let n_burn = spec.n_min.min(config.n);
    let smart = DesignSpec::smart(0.5);
    let mut rows = generate(model, &smart, n_burn, 0, Stage2::Balanced, rng)?;
    let rest = config.n - n_burn;
    let mut fallback = false;
    if rest > 0 {
        let burn = dataset(model, rows.clone());
        let fit = EffectModel::fit(&burn, &config.features, None, spec.bins_b);
        let more = match fit {
            Ok(effects) => generate(model, spec, rest, n_burn as u64, Stage2::Market(&effects), rng)?,
            Err(Error::RankDeficient { .. }) | Err(Error::TooFewRows { .. }) => {
                fallback = true;
                generate(model, &smart, rest, n_burn as u64, Stage2::Balanced, rng)?
            }
            Err(e) => return Err(e),
        };
        rows.extend(more);
    }
    Ok(Trial {
        data: dataset(model, rows),
        fallback,
    })
}

/// Runs one trial of any design kind, fitting the pilot effect model when
/// the design needs one.
pub fn simulate_trial(config: &ScenarioConfig, rng: &mut Rng) -> Result<Trial> {
    match config.design.kind {
        DesignKind::Smart => Ok(Trial {
            data: gen_trial(config, None, rng)?,
            fallback: false,
        }),
        DesignKind::SmartExam => {
            let pilot = gen_pilot(&config.model, config.n_pilot, rng)?;
            let effects = EffectModel::fit(&pilot, &config.features, None, config.design.bins_b)?;
            Ok(Trial {
                data: gen_trial(config, Some(&effects), rng)?,
                fallback: false,
            })
        }
        DesignKind::SmartArExam => run_ar_exam(config, rng),
    }
}

/// Population mean of regime `dtr` from the linear outcome models with
/// covariate means plugged in.
pub fn true_dtr_value(model: &SyntheticModel, dtr: Dtr) -> Result<f64> {
    let b = model.bind()?;
    let m = |o: &BoundOutcome, a2: i8| -> f64 {
        let a1 = f64::from(dtr.d1);
        let main: f64 = o.terms.iter().map(|&(s, c)| c * model.column_mean(s)).sum();
        let mods: f64 = o.a2_terms.iter().map(|&(s, c)| c * model.column_mean(s)).sum();
        o.intercept + main + o.a1 * a1 + f64::from(a2) * (o.a2 + o.a1_a2 * a1 + mods)
    };
    let pi = model.response_rate.for_arm(dtr.d1);
    Ok(pi * m(&b.resp, 0) + (1.0 - pi) * m(&b.nonresp, dtr.d2))
}

/// Monte Carlo version of [`true_dtr_value`] with `draws` simulated participants
/// all following `dtr`.
pub fn true_dtr_value_mc(
    model: &SyntheticModel,
    dtr: Dtr,
    draws: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let b = model.bind()?;
    let pi = model.response_rate.for_arm(dtr.d1);
    let mut sum = 0.0;
    for _ in 0..draws {
        let o1: Vec<f64> = model.baseline.iter().map(|c| c.dist.sample(rng)).collect();
        let o2: Vec<f64> = model.tailoring.iter().map(|c| c.dist.sample(rng)).collect();
        sum += if rng.random::<f64>() < pi {
            b.resp.mean(dtr.d1, 0, &o1, &o2)
        } else {
            b.nonresp.mean(dtr.d1, dtr.d2, &o1, &o2)
        };
    }
    Ok(sum / draws as f64)
}

/// The regime with the largest true value; ties go to the smallest `(d1, d2)`.
pub fn true_optimal(model: &SyntheticModel) -> Result<Dtr> {
    let mut best = Dtr::ALL[0];
    let mut best_v = true_dtr_value(model, best)?;
    for d in &Dtr::ALL[1..] {
        let v = true_dtr_value(model, *d)?;
        if v > best_v {
            best = *d;
            best_v = v;
        }
    }
    Ok(best)
}

fn term(column: &str, coef: f64) -> Term {
    Term {
        column: column.into(),
        coef,
    }
}

fn covariate(name: &str, dist: Distribution) -> Covariate {
    Covariate {
        name: name.into(),
        dist,
    }
}

/// The two-covariate simulation model with the given preference mechanism.
pub fn table1_model(association: Association) -> SyntheticModel {
    let std_normal = Distribution::Normal { mean: 0.0, sd: 1.0 };
    SyntheticModel {
        baseline: vec![],
        response_rate: ResponseRates {
            a1_plus: 0.5,
            a1_minus: 0.5,
        },
        tailoring: vec![covariate("o2_21", std_normal), covariate("o2_22", std_normal)],
        outcome_nonresp: OutcomeModel {
            intercept: 2.0,
            terms: vec![],
            a1: -1.0,
            a2: 1.0,
            a1_a2: 0.5,
            a2_terms: vec![term("o2_21", -0.5), term("o2_22", 0.5)],
            noise_sd: 3.0,
        },
        outcome_resp: OutcomeModel {
            intercept: 3.0,
            terms: vec![],
            a1: 1.0,
            a2: 0.0,
            a1_a2: 0.0,
            a2_terms: vec![],
            noise_sd: 3.0,
        },
        preference: match association {
            Association::Positive => PreferenceModel::positive(),
            _ => PreferenceModel::negative(),
        },
    }
}

/// Effect-model columns for [`table1_model`].
pub fn table1_features() -> FeatureSpec {
    let cols = ["intercept", "a1", "o2_21", "o2_22"];
    FeatureSpec::new(&cols, &cols)
}

/// Rate of the adherence indicator among those later assigned arm +1.
pub const ADHD_O22_RATE_PLUS: f64 = 0.42;
/// Rate of the adherence indicator among those later assigned arm -1.
pub const ADHD_O22_RATE_MINUS: f64 = 0.53;

/// Preference scenario of the ADHD application model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdhdScenario {
    S1,
    S2,
    S3,
}

impl AdhdScenario {
    /// `(P(Lambda = 1 | O22 = 0), P(Lambda = 1 | O22 = 1))`.
    pub fn probabilities(self) -> (f64, f64) {
        match self {
            AdhdScenario::S1 => (0.8, 0.4),
            AdhdScenario::S2 => (0.4, 0.3),
            AdhdScenario::S3 => (0.8, 0.6),
        }
    }
}

impl std::fmt::Display for AdhdScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The ADHD application model.
///
/// The adherence indicator `o2_22` is listed with rates conditional on the
/// stage-2 arm, yet preferences depend on it before the arm exists. It is
/// drawn once per participant at the equal-capacity mixture of the two rates
/// and used for the preference, the effect prediction and the outcome.
pub fn adhd_model(scenario: AdhdScenario) -> SyntheticModel {
    let (p0, p1) = scenario.probabilities();
    let o22_rate = 0.5 * ADHD_O22_RATE_PLUS + 0.5 * ADHD_O22_RATE_MINUS;
    SyntheticModel {
        baseline: vec![
            covariate("o1_11", Distribution::Bernoulli { p: 0.35 }),
            covariate("o1_12", Distribution::Normal { mean: -0.12, sd: 1.0 }),
            covariate("o1_13", Distribution::Bernoulli { p: 0.31 }),
            covariate("o1_14", Distribution::Bernoulli { p: 0.81 }),
        ],
        response_rate: ResponseRates {
            a1_plus: 0.31,
            a1_minus: 0.37,
        },
        tailoring: vec![covariate("o2_22", Distribution::Bernoulli { p: o22_rate })],
        outcome_nonresp: OutcomeModel {
            intercept: 2.69,
            terms: vec![
                term("o1_11", -0.25),
                term("o1_12", -0.30),
                term("o1_13", 0.04),
                term("o1_14", 0.49),
                term("o2_22", -0.09),
            ],
            a1: 0.08,
            a2: 0.86,
            a1_a2: 0.19,
            a2_terms: vec![term("o2_22", -1.18)],
            noise_sd: 1.0,
        },
        outcome_resp: OutcomeModel {
            intercept: 3.00,
            terms: vec![
                term("o1_11", -0.62),
                term("o1_12", -0.41),
                term("o1_13", -0.10),
                term("o1_14", 0.38),
            ],
            a1: 0.10,
            a2: 0.0,
            a1_a2: 0.0,
            a2_terms: vec![],
            noise_sd: 1.0,
        },
        preference: PreferenceModel::Covariate {
            column: "o2_22".into(),
            p_if_zero: p0,
            p_if_one: p1,
        },
    }
}

/// Effect-model columns for [`adhd_model`].
pub fn adhd_features() -> FeatureSpec {
    FeatureSpec::new(
        &["intercept", "o1_11", "o1_12", "o1_13", "o1_14", "a1", "o2_22"],
        &["intercept", "a1", "o2_22"],
    )
}
