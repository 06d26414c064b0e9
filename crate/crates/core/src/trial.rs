//! Domain types shared across the engine: regimes, participant trajectories,
//! datasets and design specifications.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A two-stage embedded regime: start with `d1`, switch non-responders to `d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dtr {
    pub d1: i8,
    pub d2: i8,
}

impl Dtr {
    /// The four embedded regimes in ascending lexicographic order.
    pub const ALL: [Dtr; 4] = [
        Dtr { d1: -1, d2: -1 },
        Dtr { d1: -1, d2: 1 },
        Dtr { d1: 1, d2: -1 },
        Dtr { d1: 1, d2: 1 },
    ];

    pub fn new(d1: i8, d2: i8) -> Result<Self> {
        if !is_code(d1) || !is_code(d2) {
            return Err(Error::Domain(format!(
                "treatment codes must be -1 or +1, got ({d1},{d2})"
            )));
        }
        Ok(Self { d1, d2 })
    }

    /// Position in [`Dtr::ALL`].
    pub fn index(self) -> usize {
        (usize::from(self.d1 == 1) << 1) | usize::from(self.d2 == 1)
    }
}

impl std::fmt::Display for Dtr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.d1, self.d2)
    }
}

fn is_code(a: i8) -> bool {
    a == 1 || a == -1
}

/// One participant's observed record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub o1: Vec<f64>,
    pub a1: i8,
    /// Intermediate response: true for responders.
    pub r: bool,
    pub o2: Vec<f64>,
    /// Stage-2 preference, 1 = prefers +1. Present iff non-responder.
    pub lambda: Option<u8>,
    /// Stage-2 treatment; 0 for responders.
    pub a2: i8,
    pub y: f64,
    /// Probability of the stage-1 arm actually received.
    pub p1: f64,
    /// Probability of the stage-2 arm actually received. Present iff non-responder.
    /// Equals 1 only when epsilon = 0 lets the market assign deterministically.
    pub p2: Option<f64>,
    /// Allocation group for individualized designs.
    pub g: Option<u32>,
}

impl Trajectory {
    /// Probability that this non-responder was assigned to stage-2 arm +1.
    pub fn p2_plus(&self) -> Option<f64> {
        self.p2.map(|p| if self.a2 == 1 { p } else { 1.0 - p })
    }

    pub fn validate(&self, epsilon: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(format!("participant {}: {msg}", self.id)));
        if !is_code(self.a1) {
            return bad(format!("a1 = {} is not -1/+1", self.a1));
        }
        if !(self.p1 > 0.0 && self.p1 <= 1.0) {
            return bad(format!("p1 = {} outside (0,1]", self.p1));
        }
        if self.r {
            if self.a2 != 0 {
                return bad("responder with a2 != 0".into());
            }
            if self.p2.is_some() || self.lambda.is_some() || self.g.is_some() {
                return bad("responder carries stage-2 fields".into());
            }
        } else {
            if !is_code(self.a2) {
                return bad(format!("non-responder with a2 = {}", self.a2));
            }
            match self.lambda {
                Some(0) | Some(1) => {}
                _ => return bad("non-responder without a 0/1 preference".into()),
            }
            match self.p2 {
                Some(p) if p > 0.0 && p <= 1.0 => {
                    let tol = 1e-12;
                    if p < epsilon - tol || p > 1.0 - epsilon + tol {
                        return bad(format!("p2 = {p} outside [{epsilon}, {}]", 1.0 - epsilon));
                    }
                }
                _ => return bad("non-responder without p2 in (0,1]".into()),
            }
        }
        Ok(())
    }
}

/// 1 iff the trajectory follows `dtr`. Responders follow both regimes sharing their `a1`.
pub fn consistent_with(traj: &Trajectory, dtr: Dtr) -> bool {
    traj.a1 == dtr.d1 && (traj.r || traj.a2 == dtr.d2)
}

/// A set of trajectories together with the covariate column names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    /// Baseline covariate names, each starting with `o1_`.
    pub o1_names: Vec<String>,
    /// Intermediate covariate names, each starting with `o2_`.
    pub o2_names: Vec<String>,
    pub rows: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(o1_names: Vec<String>, o2_names: Vec<String>) -> Self {
        Self {
            o1_names,
            o2_names,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_responders(&self) -> usize {
        self.rows.iter().filter(|t| t.r).count()
    }

    pub fn count_consistent(&self, dtr: Dtr) -> usize {
        self.rows.iter().filter(|t| consistent_with(t, dtr)).count()
    }

    pub fn validate(&self, epsilon: f64) -> Result<()> {
        for t in &self.rows {
            if t.o1.len() != self.o1_names.len() || t.o2.len() != self.o2_names.len() {
                return Err(Error::Schema(format!(
                    "participant {} covariate lengths do not match the schema",
                    t.id
                )));
            }
            t.validate(epsilon)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Smart,
    SmartExam,
    SmartArExam,
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DesignKind::Smart => "SMART",
            DesignKind::SmartExam => "SMART-EXAM",
            DesignKind::SmartArExam => "SMART-AR-EXAM",
        })
    }
}

/// Fraction of each stage-1 arm's non-responders committed to stage-2 arm +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityFraction {
    pub a1_plus: f64,
    pub a1_minus: f64,
}

impl CapacityFraction {
    pub fn uniform(c: f64) -> Self {
        Self {
            a1_plus: c,
            a1_minus: c,
        }
    }

    pub fn for_arm(&self, a1: i8) -> f64 {
        if a1 == 1 {
            self.a1_plus
        } else {
            self.a1_minus
        }
    }
}

fn default_budget() -> f64 {
    1.0
}
fn default_kappa0() -> f64 {
    0.002
}
fn default_max_iter() -> usize {
    200
}
fn default_bins() -> usize {
    5
}
fn default_n_min() -> usize {
    100
}
fn default_ceiling() -> usize {
    1_000_000
}

/// All experimental parameters of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub capacity_fraction: CapacityFraction,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_budget")]
    pub budget_m: f64,
    #[serde(default = "default_kappa0")]
    pub kappa0: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter_m: usize,
    /// Price step divisor; `None` uses the arm's non-responder count.
    #[serde(default)]
    pub step_l: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins_b: usize,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    /// Hard ceiling on total price updates across relaxations.
    #[serde(default = "default_ceiling")]
    pub max_total_iter: usize,
}

fn default_eta() -> f64 {
    -1.0
}

impl DesignSpec {
    pub fn smart(c: f64) -> Self {
        Self {
            kind: DesignKind::Smart,
            capacity_fraction: CapacityFraction::uniform(c),
            epsilon: 0.0,
            eta: default_eta(),
            budget_m: default_budget(),
            kappa0: default_kappa0(),
            max_iter_m: default_max_iter(),
            step_l: None,
            bins_b: default_bins(),
            n_min: default_n_min(),
            max_total_iter: default_ceiling(),
        }
    }

    pub fn exam(c: f64, epsilon: f64, eta: f64) -> Self {
        Self {
            kind: DesignKind::SmartExam,
            epsilon,
            eta,
            ..Self::smart(c)
        }
    }

    pub fn ar_exam(c: f64, epsilon: f64, eta: f64, n_min: usize) -> Self {
        Self {
            kind: DesignKind::SmartArExam,
            n_min,
            ..Self::exam(c, epsilon, eta)
        }
    }

    /// Checks the constraints that do not depend on realized counts.
    ///
    /// `eta` must lie in [-1, 0); the open lower end is relaxed to admit the
    /// eta = -1 setting used throughout the reference simulations.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidDesign(m));
        for c in [self.capacity_fraction.a1_plus, self.capacity_fraction.a1_minus] {
            if !(c > 0.0 && c < 1.0) {
                return err(format!("capacity fraction {c} must lie in (0,1)"));
            }
        }
        if !(self.eta >= -1.0 && self.eta < 0.0) {
            return err(format!("eta = {} must lie in [-1, 0)", self.eta));
        }
        if !(self.budget_m > 0.0) {
            return err(format!("budget m = {} must be positive", self.budget_m));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 0.5) {
            return err(format!("epsilon = {} must lie in [0, 0.5)", self.epsilon));
        }
        let min_frac = self
            .capacity_fraction
            .a1_plus
            .min(1.0 - self.capacity_fraction.a1_plus)
            .min(self.capacity_fraction.a1_minus)
            .min(1.0 - self.capacity_fraction.a1_minus);
        if self.epsilon > min_frac + 1e-12 {
            return err(format!(
                "epsilon = {} exceeds epsilon-bar = {min_frac} (smallest arm capacity fraction)",
                self.epsilon
            ));
        }
        if !(self.kappa0 > 0.0) {
            return err("kappa0 must be positive".into());
        }
        if self.max_iter_m == 0 || self.max_total_iter == 0 {
            return err("iteration limits must be positive".into());
        }
        if let Some(l) = self.step_l {
            if !(l > 0.0) {
                return err(format!("step l = {l} must be positive"));
            }
        }
        if self.bins_b == 0 {
            return err("bins_b must be at least 1".into());
        }
        if self.n_min == 0 {
            return err("n_min must be at least 1".into());
        }
        Ok(())
    }
}

/// Realized integer capacities for one stage-1 arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capacities {
    pub plus: usize,
    pub minus: usize,
}

impl Capacities {
    pub fn total(&self) -> usize {
        self.plus + self.minus
    }

    pub fn get(&self, a2: i8) -> usize {
        if a2 == 1 {
            self.plus
        } else {
            self.minus
        }
    }

    /// Largest admissible epsilon: the smaller balanced arm probability.
    pub fn epsilon_bar(&self) -> f64 {
        let n = self.total() as f64;
        (self.plus.min(self.minus)) as f64 / n
    }
}

/// Round-half-up realization of the capacity fraction on `n_nonresp` participants.
pub fn realize_capacities(fraction: f64, n_nonresp: usize) -> Result<Capacities> {
    if n_nonresp == 0 {
        return Err(Error::EmptyArm { a1: 0 });
    }
    let plus = ((fraction * n_nonresp as f64) + 0.5).floor() as usize;
    let plus = plus.min(n_nonresp);
    Ok(Capacities {
        plus,
        minus: n_nonresp - plus,
    })
}

/// Capacities for stage-1 arm `a1` of `spec`.
pub fn realize_arm_capacities(spec: &DesignSpec, a1: i8, n_nonresp: usize) -> Result<Capacities> {
    realize_capacities(spec.capacity_fraction.for_arm(a1), n_nonresp).map_err(|e| match e {
        Error::EmptyArm { .. } => Error::EmptyArm { a1 },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(a1: i8, r: bool, a2: i8) -> Trajectory {
        Trajectory {
            id: 0,
            o1: vec![],
            a1,
            r,
            o2: vec![],
            lambda: if r { None } else { Some(1) },
            a2,
            y: 0.0,
            p1: 0.5,
            p2: if r { None } else { Some(0.5) },
            g: None,
        }
    }

    #[test]
    fn capacities_round_half_up() {
        assert_eq!(realize_capacities(0.5, 99).unwrap(), Capacities { plus: 50, minus: 49 });
        assert_eq!(realize_capacities(0.7, 100).unwrap(), Capacities { plus: 70, minus: 30 });
        assert_eq!(realize_capacities(0.6, 100).unwrap(), Capacities { plus: 60, minus: 40 });
        let one = realize_capacities(0.5, 1).unwrap();
        assert_eq!(one, Capacities { plus: 1, minus: 0 });
        assert_eq!(one.epsilon_bar(), 0.0);
    }

    #[test]
    fn empty_arm_is_signalled() {
        let spec = DesignSpec::smart(0.5);
        assert!(matches!(
            realize_arm_capacities(&spec, -1, 0),
            Err(Error::EmptyArm { a1: -1 })
        ));
    }

    #[test]
    fn consistency_indicator() {
        let dtr = Dtr::new(1, -1).unwrap();
        assert!(consistent_with(&traj(1, true, 0), dtr));
        assert!(!consistent_with(&traj(1, false, 1), dtr));
        assert!(consistent_with(&traj(1, false, -1), dtr));
        assert!(!consistent_with(&traj(-1, true, 0), dtr));
    }

    #[test]
    fn dtr_codes_validated() {
        assert!(Dtr::new(0, 1).is_err());
        assert!(Dtr::new(1, 2).is_err());
        for (i, d) in Dtr::ALL.iter().enumerate() {
            assert_eq!(d.index(), i);
        }
        let mut sorted = Dtr::ALL;
        sorted.sort();
        assert_eq!(sorted, Dtr::ALL);
    }

    #[test]
    fn trajectory_invariants() {
        assert!(traj(1, true, 0).validate(0.1).is_ok());
        assert!(traj(1, false, 1).validate(0.1).is_ok());
        assert!(traj(1, true, 1).validate(0.1).is_err());
        let mut t = traj(1, false, 1);
        t.p2 = Some(0.05);
        assert!(t.validate(0.1).is_err());
        t.p2 = None;
        assert!(t.validate(0.0).is_err());
        let mut t = traj(1, false, 0);
        t.p2 = Some(0.5);
        assert!(t.validate(0.0).is_err());
    }

    #[test]
    fn design_validation() {
        assert!(DesignSpec::exam(0.5, 0.1, -1.0).validate().is_ok());
        assert!(DesignSpec::exam(0.7, 0.31, -1.0).validate().is_err());
        assert!(DesignSpec::exam(0.5, 0.1, 0.0).validate().is_err());
        let mut s = DesignSpec::exam(0.5, 0.1, -0.5);
        s.bins_b = 0;
        assert!(s.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn capacities_sum_to_arm_size(c in 0.01f64..0.99, n in 1usize..5000) {
            let cap = realize_capacities(c, n).unwrap();
            proptest::prop_assert_eq!(cap.total(), n);
        }
    }
}
