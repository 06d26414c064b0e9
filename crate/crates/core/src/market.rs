//! Experiment-as-market allocation of stage-2 randomization probabilities.
//!
//! For the non-responders of one stage-1 arm, each participant is given a
//! budget `m` and buys probability of the excess-demand arm at an
//! individualized price `eta * zeta + beta`. The common intercept `beta` is
//! adjusted until the expected arm sizes match the capacities. Raw demands are
//! pulled toward the balanced probability just enough to stay inside
//! `[epsilon, 1 - epsilon]`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{Capacities, DesignSpec};

/// Amount added to the clearing tolerance each time a round of `M` updates fails.
pub const KAPPA_RELAXATION: f64 = 0.002;

/// Inputs for clearing one stage-1 arm.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInputs {
    pub lambdas: Vec<u8>,
    /// Binned normalized effects of the excess-demand arm over the other arm.
    pub zetas: Vec<f64>,
    pub capacities: Capacities,
    pub epsilon: f64,
    pub eta: f64,
    pub budget_m: f64,
    pub kappa0: f64,
    pub max_iter_m: usize,
    /// Defaults to the number of participants.
    pub step_l: Option<f64>,
    pub max_total_iter: usize,
}

impl MarketInputs {
    /// Market inputs using the controls of `spec`.
    pub fn from_design(
        spec: &DesignSpec,
        lambdas: Vec<u8>,
        zetas: Vec<f64>,
        capacities: Capacities,
    ) -> Self {
        Self {
            lambdas,
            zetas,
            capacities,
            epsilon: spec.epsilon,
            eta: spec.eta,
            budget_m: spec.budget_m,
            kappa0: spec.kappa0,
            max_iter_m: spec.max_iter_m,
            step_l: spec.step_l,
            max_total_iter: spec.max_total_iter,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.lambdas.len();
        if n == 0 {
            return Err(Error::Domain("market needs at least one participant".into()));
        }
        if self.zetas.len() != n {
            return Err(Error::Domain(format!(
                "{} preferences but {} effects",
                n,
                self.zetas.len()
            )));
        }
        if self.capacities.total() != n {
            return Err(Error::Domain(format!(
                "capacities sum to {} but the arm has {n} participants",
                self.capacities.total()
            )));
        }
        if self.lambdas.iter().any(|&l| l > 1) {
            return Err(Error::Domain("preferences must be 0 or 1".into()));
        }
        if self.zetas.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain("effects must be finite".into()));
        }
        if !(self.budget_m > 0.0) {
            return Err(Error::InvalidDesign("budget must be positive".into()));
        }
        if let Some(l) = self.step_l {
            if !(l > 0.0) {
                return Err(Error::InvalidDesign("step l must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Excess demand of the two stage-2 arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessDemand {
    pub excess_arm: f64,
    pub other_arm: f64,
}

/// Outcome of clearing one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub a2e: i8,
    pub a2o: i8,
    pub beta: f64,
    pub prices: Vec<f64>,
    pub p_raw: Vec<f64>,
    pub q: f64,
    /// Final probability of arm `a2e` per participant.
    pub p_final: Vec<f64>,
    pub excess: ExcessDemand,
    pub error: f64,
    pub iterations: usize,
    pub kappa_used: f64,
}

impl MarketState {
    /// Final probability of stage-2 arm +1 for participant `i`.
    pub fn p_plus(&self, i: usize) -> f64 {
        if self.a2e == 1 {
            self.p_final[i]
        } else {
            1.0 - self.p_final[i]
        }
    }
}

/// Treatment demand per arm and the resulting (excess, oversupplied) pair.
///
/// The +1 arm is the excess arm whenever its demand reaches its capacity.
pub fn determine_excess_arm(lambdas: &[u8], capacities: Capacities) -> (i8, i8) {
    let demand_plus = lambdas.iter().filter(|&&l| l == 1).count();
    if demand_plus >= capacities.plus {
        (1, -1)
    } else {
        (-1, 1)
    }
}

pub fn init_beta(zetas: &[f64]) -> f64 {
    -zetas.iter().fold(0.0_f64, |m, z| m.max(z.abs()))
}

pub fn prices(eta: f64, beta: f64, zetas: &[f64]) -> Vec<f64> {
    zetas.iter().map(|z| eta * z + beta).collect()
}

/// Closed-form solution of `max u` subject to `p * price <= m`, `p in [0,1]`.
pub fn individual_demand(price: f64, prefers_excess_arm: bool, budget_m: f64) -> f64 {
    if !prefers_excess_arm {
        0.0
    } else if price <= 0.0 {
        1.0
    } else {
        (budget_m / price).min(1.0)
    }
}

/// Smallest common weight `q` pulling every raw demand toward `p0` into
/// `[epsilon, 1 - epsilon]`, and the mixed probabilities.
pub fn epsilon_mix(p_raw: &[f64], p0: f64, epsilon: f64) -> Result<(f64, Vec<f64>)> {
    let mut out = Vec::with_capacity(p_raw.len());
    let q = epsilon_mix_into(p_raw, p0, epsilon, &mut out)?;
    Ok((q, out))
}

fn epsilon_mix_into(p_raw: &[f64], p0: f64, epsilon: f64, out: &mut Vec<f64>) -> Result<f64> {
    let lo = epsilon;
    let hi = 1.0 - epsilon;
    if p0 < lo - 1e-12 || p0 > hi + 1e-12 {
        return Err(Error::InvalidDesign(format!(
            "epsilon = {epsilon} exceeds epsilon-bar: balanced probability {p0} lies outside [{lo}, {hi}]"
        )));
    }
    let mut q = 0.0_f64;
    for &p in p_raw {
        let qi = if p < lo {
            (lo - p) / (p0 - p)
        } else if p > hi {
            (p - hi) / (p - p0)
        } else {
            0.0
        };
        q = q.max(qi);
    }
    let q = q.min(1.0);
    out.clear();
    out.extend(
        p_raw
            .iter()
            .map(|&p| ((1.0 - q) * p + q * p0).clamp(lo, hi)),
    );
    Ok(q)
}

pub fn excess_demand(p_final: &[f64], capacities: Capacities, a2e: i8) -> ExcessDemand {
    let total: f64 = p_final.iter().sum();
    let n = p_final.len() as f64;
    ExcessDemand {
        excess_arm: total - capacities.get(a2e) as f64,
        other_arm: (n - total) - capacities.get(-a2e) as f64,
    }
}

pub fn clear_error(d: ExcessDemand, capacities: Capacities) -> f64 {
    (d.excess_arm * d.excess_arm + d.other_arm * d.other_arm) / capacities.total() as f64
}

pub fn update_beta(beta: f64, d_excess: f64, step_l: f64) -> f64 {
    beta + d_excess / step_l
}

/// Stage-2 arm drawn for a participant with probability `p_final` of `a2e`.
pub fn draw_assignment(p_final: f64, uniform: f64, a2e: i8) -> i8 {
    if uniform < p_final {
        a2e
    } else {
        -a2e
    }
}

/// 1-based group labels: participants with identical `(lambda, zeta)` share a
/// label, labels ascend with `(lambda, zeta)`.
pub fn group_index(lambdas: &[u8], zetas: &[f64]) -> Vec<u32> {
    let mut keys: Vec<(u8, f64)> = lambdas.iter().copied().zip(zetas.iter().copied()).collect();
    keys.sort_by(|a, b| cmp_key(*a, *b));
    keys.dedup_by(|a, b| cmp_key(*a, *b) == Ordering::Equal);
    lambdas
        .iter()
        .zip(zetas)
        .map(|(&l, &z)| {
            let pos = keys
                .binary_search_by(|k| cmp_key(*k, (l, z)))
                .expect("key present");
            pos as u32 + 1
        })
        .collect()
}

fn cmp_key(a: (u8, f64), b: (u8, f64)) -> Ordering {
    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Reusable buffers for one evaluation of the market at a given `beta`.
struct Evaluation {
    prices: Vec<f64>,
    p_raw: Vec<f64>,
    p_final: Vec<f64>,
    q: f64,
    excess: ExcessDemand,
    error: f64,
}

struct Market<'a> {
    inputs: &'a MarketInputs,
    prefers: Vec<bool>,
    a2e: i8,
    p0: f64,
}

impl Market<'_> {
    fn evaluate(&self, beta: f64, ev: &mut Evaluation) -> Result<()> {
        let inp = self.inputs;
        ev.prices.clear();
        ev.prices
            .extend(inp.zetas.iter().map(|z| inp.eta * z + beta));
        ev.p_raw.clear();
        ev.p_raw.extend(
            ev.prices
                .iter()
                .zip(&self.prefers)
                .map(|(&psi, &pref)| individual_demand(psi, pref, inp.budget_m)),
        );
        ev.q = epsilon_mix_into(&ev.p_raw, self.p0, inp.epsilon, &mut ev.p_final)?;
        ev.excess = excess_demand(&ev.p_final, inp.capacities, self.a2e);
        ev.error = clear_error(ev.excess, inp.capacities);
        Ok(())
    }
}

/// Runs the price-adjustment loop for one stage-1 arm.
///
/// Each round allows `M` updates of `beta`; a failed round restarts from the
/// initial `beta` with the tolerance relaxed by [`KAPPA_RELAXATION`]. When all
/// participants share the same `(lambda, zeta)` the equilibrium is the
/// balanced probability and is returned in closed form.
pub fn clear_market(inputs: &MarketInputs) -> Result<MarketState> {
    inputs.validate()?;
    let n = inputs.lambdas.len();
    let caps = inputs.capacities;
    let (a2e, a2o) = determine_excess_arm(&inputs.lambdas, caps);
    let p0 = caps.get(a2e) as f64 / n as f64;
    let eps = inputs.epsilon;
    if eps > p0.min(1.0 - p0) + 1e-12 {
        return Err(Error::InvalidDesign(format!(
            "epsilon = {eps} exceeds epsilon-bar = {} for capacities {}/{}",
            p0.min(1.0 - p0),
            caps.plus,
            caps.minus
        )));
    }
    let prefers: Vec<bool> = inputs
        .lambdas
        .iter()
        .map(|&l| (l == 1) == (a2e == 1))
        .collect();

    let homogeneous = inputs.lambdas.iter().all(|&l| l == inputs.lambdas[0])
        && inputs
            .zetas
            .iter()
            .all(|z| z.to_bits() == inputs.zetas[0].to_bits());
    if homogeneous {
        // Every participant prefers a2e unless its capacity is zero; otherwise
        // demand m / price equals p0 at this beta.
        let zeta = inputs.zetas[0];
        let beta = if p0 > 0.0 {
            inputs.budget_m / p0 - inputs.eta * zeta
        } else {
            init_beta(&inputs.zetas)
        };
        let price = inputs.eta * zeta + beta;
        let p_final = vec![p0; n];
        let excess = excess_demand(&p_final, caps, a2e);
        return Ok(MarketState {
            a2e,
            a2o,
            beta,
            prices: vec![price; n],
            p_raw: vec![p0; n],
            q: 0.0,
            error: clear_error(excess, caps),
            p_final,
            excess,
            iterations: 0,
            kappa_used: inputs.kappa0,
        });
    }

    let market = Market {
        inputs,
        prefers,
        a2e,
        p0,
    };
    let step_l = inputs.step_l.unwrap_or(n as f64);
    let beta0 = init_beta(&inputs.zetas);
    let mut ev = Evaluation {
        prices: Vec::with_capacity(n),
        p_raw: Vec::with_capacity(n),
        p_final: Vec::with_capacity(n),
        q: 0.0,
        excess: ExcessDemand {
            excess_arm: 0.0,
            other_arm: 0.0,
        },
        error: f64::INFINITY,
    };

    let mut kappa = inputs.kappa0;
    let mut beta = beta0;
    let mut round = 1usize;
    let mut total = 0usize;
    market.evaluate(beta, &mut ev)?;
    let snapshot = |beta: f64, ev: &Evaluation, total: usize, kappa: f64| MarketState {
        a2e,
        a2o,
        beta,
        prices: ev.prices.clone(),
        p_raw: ev.p_raw.clone(),
        q: ev.q,
        p_final: ev.p_final.clone(),
        excess: ev.excess,
        error: ev.error,
        iterations: total,
        kappa_used: kappa,
    };
    let mut best = (ev.error, beta);

    loop {
        if ev.error <= kappa {
            return Ok(snapshot(beta, &ev, total, kappa));
        }
        if total >= inputs.max_total_iter {
            market.evaluate(best.1, &mut ev)?;
            return Err(Error::NonConvergence {
                iterations: total,
                best_error: best.0,
                best: Box::new(snapshot(best.1, &ev, total, kappa)),
            });
        }
        if round > inputs.max_iter_m {
            round = 1;
            kappa += KAPPA_RELAXATION;
            beta = beta0;
        } else {
            round += 1;
            total += 1;
            beta = update_beta(beta, ev.excess.excess_arm, step_l);
        }
        market.evaluate(beta, &mut ev)?;
        if ev.error < best.0 {
            best = (ev.error, beta);
        }
    }
}
