//! Inverse probability weighted estimates of embedded regime means.
//!
//! Weights use the probabilities stored on each trajectory, i.e. the ones
//! actually used at randomization, so the same estimator serves balanced and
//! individualized designs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{consistent_with, Dataset, Dtr, Trajectory};

/// Normal quantile used for reported confidence intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtrEstimate {
    pub dtr: Dtr,
    pub mean: f64,
    pub variance: f64,
    pub weight_sum: f64,
    pub n_consistent: usize,
}

impl DtrEstimate {
    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn ci(&self) -> (f64, f64) {
        (self.mean - Z_95 * self.se(), self.mean + Z_95 * self.se())
    }
}

/// `I(A1 = d1)/p1 * {R + (1 - R) I(A2 = d2)/p2}`.
pub fn weight(t: &Trajectory, dtr: Dtr) -> f64 {
    if !consistent_with(t, dtr) {
        return 0.0;
    }
    let stage1 = 1.0 / t.p1;
    if t.r {
        stage1
    } else {
        // consistent non-responders always carry p2
        stage1 / t.p2.unwrap_or(f64::NAN)
    }
}

pub fn ipw_mean(data: &Dataset, dtr: Dtr) -> Result<f64> {
    let (wy, w) = data.rows.iter().fold((0.0, 0.0), |(wy, w), t| {
        let wi = weight(t, dtr);
        (wy + wi * t.y, w + wi)
    });
    if !(w > 0.0) {
        return Err(Error::NoSupport {
            d1: dtr.d1,
            d2: dtr.d2,
        });
    }
    Ok(wy / w)
}

/// `sum (W_i (Y_i - mean))^2 / N^2`.
pub fn ipw_variance(data: &Dataset, dtr: Dtr, mean: f64) -> Result<f64> {
    let n = data.len() as f64;
    let mut w_total = 0.0;
    let mut ss = 0.0;
    for t in &data.rows {
        let w = weight(t, dtr);
        w_total += w;
        ss += (w * (t.y - mean)).powi(2);
    }
    if !(w_total > 0.0) {
        return Err(Error::NoSupport {
            d1: dtr.d1,
            d2: dtr.d2,
        });
    }
    Ok(ss / (n * n))
}

pub fn estimate(data: &Dataset, dtr: Dtr) -> Result<DtrEstimate> {
    let mean = ipw_mean(data, dtr)?;
    let variance = ipw_variance(data, dtr, mean)?;
    Ok(DtrEstimate {
        dtr,
        mean,
        variance,
        weight_sum: data.rows.iter().map(|t| weight(t, dtr)).sum(),
        n_consistent: data.count_consistent(dtr),
    })
}

/// Estimates for the four embedded regimes in [`Dtr::ALL`] order.
pub fn estimate_all(data: &Dataset) -> Result<Vec<DtrEstimate>> {
    Dtr::ALL.iter().map(|&d| estimate(data, d)).collect()
}

/// Regime with the largest estimated mean; exact ties go to the
/// lexicographically smallest `(d1, d2)`.
pub fn select_optimal(estimates: &[DtrEstimate]) -> Dtr {
    let mut sorted: Vec<&DtrEstimate> = estimates.iter().collect();
    sorted.sort_by_key(|e| e.dtr);
    let mut best = sorted[0];
    for e in &sorted[1..] {
        if e.mean > best.mean {
            best = e;
        }
    }
    best.dtr
}

/// Population quantities entering the large-sample variance of one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalMoments {
    pub dtr: Dtr,
    /// Stage-1 probability of `d1`.
    pub p1: f64,
    /// Response rate under `d1`.
    pub pi_resp: f64,
    /// `P(G = g | A1 = d1, R = 0)` per group.
    pub group_probs: Vec<f64>,
    /// Probability of `d2` in each group.
    pub p2_by_group: Vec<f64>,
    pub mu_resp: f64,
    pub sigma2_resp: f64,
    /// Mean outcome of non-responders following `d2`, per group.
    pub mu_by_group: Vec<f64>,
    pub sigma2_by_group: Vec<f64>,
}

impl TheoreticalMoments {
    fn validate(&self) -> Result<()> {
        let k = self.group_probs.len();
        if k == 0
            || self.p2_by_group.len() != k
            || self.mu_by_group.len() != k
            || self.sigma2_by_group.len() != k
        {
            return Err(Error::Domain("group vectors must be non-empty and equal length".into()));
        }
        let unit = |p: f64| p > 0.0 && p <= 1.0;
        if !unit(self.p1) {
            return Err(Error::Positivity(format!("stage-1 probability {}", self.p1)));
        }
        if !(0.0..=1.0).contains(&self.pi_resp) {
            return Err(Error::Domain(format!("response rate {}", self.pi_resp)));
        }
        if self.pi_resp < 1.0 {
            for (g, &p) in self.p2_by_group.iter().enumerate() {
                if !unit(p) && self.group_probs[g] > 0.0 {
                    return Err(Error::Positivity(format!("group {} has p2 = {p}", g + 1)));
                }
            }
            let total: f64 = self.group_probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("group probabilities sum to {total}")));
            }
        }
        Ok(())
    }

    /// Regime mean implied by the moments.
    pub fn mean(&self) -> f64 {
        let nonresp: f64 = self
            .group_probs
            .iter()
            .zip(&self.mu_by_group)
            .map(|(p, m)| p * m)
            .sum();
        self.pi_resp * self.mu_resp + (1.0 - self.pi_resp) * nonresp
    }
}

/// Asymptotic variance of `sqrt(N) (mu_hat - mu)`.
pub fn asymptotic_variance(m: &TheoreticalMoments, mu_dtr: f64) -> Result<f64> {
    m.validate()?;
    let mut s = m.pi_resp / m.p1 * (m.sigma2_resp + (mu_dtr - m.mu_resp).powi(2));
    if m.pi_resp < 1.0 {
        for g in 0..m.group_probs.len() {
            if m.group_probs[g] == 0.0 {
                continue;
            }
            let w = (1.0 - m.pi_resp) * m.group_probs[g] / (m.p1 * m.p2_by_group[g]);
            s += w * (m.sigma2_by_group[g] + (mu_dtr - m.mu_by_group[g]).powi(2));
        }
    }
    Ok(s)
}

/// Asymptotic covariance of `sqrt(N)` times the mean estimates of two regimes
/// sharing their first-stage treatment. Divide by N for the estimators.
pub fn dtr_covariance(
    a: &TheoreticalMoments,
    b: &TheoreticalMoments,
    mu_a: f64,
    mu_b: f64,
) -> Result<f64> {
    if a.dtr.d1 != b.dtr.d1 {
        return Err(Error::Domain(format!(
            "covariance requires a shared first-stage treatment, got {} and {}",
            a.dtr, b.dtr
        )));
    }
    a.validate()?;
    b.validate()?;
    Ok(a.pi_resp / a.p1 * (a.sigma2_resp + (a.mu_resp - mu_a) * (a.mu_resp - mu_b)))
}
