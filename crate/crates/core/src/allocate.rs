//! Batch allocation of one stage-1 arm's non-responders.

use serde::{Deserialize, Serialize};

use crate::effect::EffectEstimates;
use crate::error::Result;
use crate::market::{clear_market, determine_excess_arm, group_index, MarketInputs, MarketState};
use crate::trial::{realize_arm_capacities, Capacities, DesignSpec};

/// Market outcome for the non-responders of one stage-1 arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmAllocation {
    pub a1: i8,
    pub capacities: Capacities,
    /// Effects of the excess arm, normalized and binned.
    pub effects: EffectEstimates,
    pub state: MarketState,
    pub groups: Vec<u32>,
}

impl ArmAllocation {
    /// Probability of stage-2 arm +1 for participant `i`.
    pub fn p_plus(&self, i: usize) -> f64 {
        self.state.p_plus(i)
    }
}

/// Clears the market for one arm.
///
/// `effect_plus` holds predicted effects of arm +1 over arm -1; they are
/// oriented toward the excess-demand arm before normalization and binning.
pub fn allocate_arm(
    spec: &DesignSpec,
    a1: i8,
    lambdas: &[u8],
    effect_plus: &[f64],
) -> Result<ArmAllocation> {
    let capacities = realize_arm_capacities(spec, a1, lambdas.len())?;
    let (a2e, _) = determine_excess_arm(lambdas, capacities);
    let oriented: Vec<f64> = effect_plus.iter().map(|z| z * f64::from(a2e)).collect();
    let effects = EffectEstimates::from_raw(oriented, spec.bins_b);
    let inputs = MarketInputs::from_design(spec, lambdas.to_vec(), effects.binned.clone(), capacities);
    let state = clear_market(&inputs)?;
    let groups = group_index(lambdas, &effects.binned);
    Ok(ArmAllocation {
        a1,
        capacities,
        effects,
        state,
        groups,
    })
}
