//! Monte Carlo simulation of ancillary-test ordering for Spitz tumors.
//!
//! Every case starts with an H&E examination. The ALK, ROS1 and NTRK IHC
//! stains are then run either together or one at a time, stopping at the
//! first positive stain; when none is positive, molecular diagnostics follow.
//! An AI recommender can send a case straight to molecular testing when it
//! predicts an "other" driver with probability above the threshold, and can
//! reorder sequential stains by predicted probability.
//!
//! [`run_simulation`] evaluates all strategies on the same sampled cases and
//! the same stain draws (common random numbers). [`analytic_expectation`]
//! gives the exact per-case expectation for cross-checking.

mod analytic;
mod engine;
mod recommender;

pub use analytic::{analytic_expectation, Expectation};
pub use engine::{
    run_simulation, simulate_case, simulate_case_with_results, stain_positive, stain_result,
    CaseOutcome, IterationAggregate, MetricSummary, SimulationSummary, StainResult,
    StrategySummary,
};
pub use recommender::{make_recommender, Recommender, RecommenderSet, RecommenderSpec};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{AberrationClass, LesionCase, Lineage};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid workflow config: {0}")]
    InvalidConfig(String),
    #[error("invalid strategy {0}: predicted-probability ordering needs a recommender")]
    InvalidStrategy(String),
    #[error("invalid recommender: {0}")]
    InvalidRecommender(String),
    #[error("case {0} is not a Spitz tumor")]
    NotSpitz(String),
    #[error("empty case population")]
    EmptyPopulation,
}

/// The three IHC stains, each targeting one fusion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stain {
    Alk,
    Ros1,
    Ntrk,
}

impl Stain {
    pub const ALL: [Stain; 3] = [Stain::Alk, Stain::Ros1, Stain::Ntrk];
    /// High-to-low prevalence of the targeted fusions in the source cohort.
    pub const PREVALENCE_ORDER: [Stain; 3] = [Stain::Ntrk, Stain::Ros1, Stain::Alk];

    pub fn target(self) -> AberrationClass {
        match self {
            Stain::Alk => AberrationClass::Alk,
            Stain::Ros1 => AberrationClass::Ros1,
            Stain::Ntrk => AberrationClass::Ntrk,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn for_class(class: AberrationClass) -> Option<Stain> {
        Stain::ALL.into_iter().find(|s| s.target() == class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub stain_cost: f64,
    pub molecular_cost: f64,
    pub stain_days: f64,
    pub molecular_days: f64,
    /// Probability that a stain on a truly positive case reads false negative
    /// or too ambiguous to call.
    pub fn_prob: BTreeMap<Stain, f64>,
    pub threshold: f64,
    pub cases_per_iteration: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            stain_cost: 100.0,
            molecular_cost: 1000.0,
            stain_days: 1.0,
            molecular_days: 10.0,
            fn_prob: BTreeMap::from([
                (Stain::Alk, 0.055),
                (Stain::Ros1, 0.448),
                (Stain::Ntrk, 0.255),
            ]),
            threshold: 0.5,
            cases_per_iteration: 100,
            iterations: 10_000,
            seed: 0,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        for (name, v) in [
            ("stain_cost", self.stain_cost),
            ("molecular_cost", self.molecular_cost),
            ("stain_days", self.stain_days),
            ("molecular_days", self.molecular_days),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite nonnegative number"));
            }
        }
        for s in Stain::ALL {
            match self.fn_prob.get(&s) {
                Some(p) if (0.0..=1.0).contains(p) => {}
                Some(p) => return bad(format!("fn_prob.{s} = {p} outside [0, 1]")),
                None => return bad(format!("fn_prob.{s} missing")),
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)".into());
        }
        if self.cases_per_iteration == 0 || self.iterations == 0 {
            return bad("cases_per_iteration and iterations must be positive".into());
        }
        Ok(())
    }

    pub fn fn_prob(&self, stain: Stain) -> f64 {
        self.fn_prob[&stain]
    }
}

impl fmt::Display for Stain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.target().as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IhcMode {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StainOrdering {
    Prevalence,
    PredictedProb,
}

/// Which recommender (if any) a strategy consults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecommenderSlot {
    None,
    Ai,
    PerfectAi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub ihc_mode: IhcMode,
    pub ordering: StainOrdering,
    pub recommender: RecommenderSlot,
}

impl Strategy {
    pub const fn new(
        ihc_mode: IhcMode,
        ordering: StainOrdering,
        recommender: RecommenderSlot,
    ) -> Self {
        Strategy {
            ihc_mode,
            ordering,
            recommender,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.ordering == StainOrdering::PredictedProb
            && self.recommender == RecommenderSlot::None
        {
            return Err(SimError::InvalidStrategy(self.name()));
        }
        Ok(())
    }

    /// The eight workflow variants: baseline, AI and perfect AI for parallel
    /// and prevalence-ordered stains, plus AI and perfect AI with stains
    /// ordered by predicted probability.
    pub fn all_variants() -> Vec<Strategy> {
        use IhcMode::*;
        use RecommenderSlot::*;
        use StainOrdering::*;
        vec![
            Strategy::new(Parallel, Prevalence, None),
            Strategy::new(Parallel, Prevalence, Ai),
            Strategy::new(Parallel, Prevalence, PerfectAi),
            Strategy::new(Sequential, Prevalence, None),
            Strategy::new(Sequential, Prevalence, Ai),
            Strategy::new(Sequential, Prevalence, PerfectAi),
            Strategy::new(Sequential, PredictedProb, Ai),
            Strategy::new(Sequential, PredictedProb, PerfectAi),
        ]
    }

    pub fn name(&self) -> String {
        let rec = match self.recommender {
            RecommenderSlot::None => "baseline",
            RecommenderSlot::Ai => "ai",
            RecommenderSlot::PerfectAi => "perfect_ai",
        };
        let mode = match (self.ihc_mode, self.ordering) {
            (IhcMode::Parallel, _) => "parallel",
            (IhcMode::Sequential, StainOrdering::Prevalence) => "sequential_prevalence",
            (IhcMode::Sequential, StainOrdering::PredictedProb) => "sequential_predicted",
        };
        format!("{rec}/{mode}")
    }

    fn uses_skip_rule(&self) -> bool {
        self.recommender != RecommenderSlot::None
    }
}

/// A Spitz case as seen by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCase {
    pub case_id: String,
    pub class: AberrationClass,
}

impl SimCase {
    pub fn from_lesion(case: &LesionCase) -> Result<Self, SimError> {
        match (case.lineage, case.aberration) {
            (Lineage::Spitz, Some(class)) => Ok(SimCase {
                case_id: case.case_id.clone(),
                class,
            }),
            _ => Err(SimError::NotSpitz(case.case_id.clone())),
        }
    }
}

/// Where simulated cases come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    /// Infinite population with the given class probabilities (ALK, ROS1,
    /// NTRK, OTHER).
    Distribution([f64; 4]),
    /// A finite test set, sampled uniformly with replacement.
    Cases(Vec<SimCase>),
}

impl Population {
    /// Class probabilities after grouping the published cohort.
    pub fn table1() -> Self {
        Population::Distribution([0.150, 0.273, 0.282, 0.295])
    }

    pub fn from_lesions(cases: &[LesionCase]) -> Result<Self, SimError> {
        let cases = cases
            .iter()
            .map(SimCase::from_lesion)
            .collect::<Result<Vec<_>, _>>()?;
        if cases.is_empty() {
            return Err(SimError::EmptyPopulation);
        }
        Ok(Population::Cases(cases))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            Population::Distribution(p) => {
                let sum: f64 = p.iter().sum();
                if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(SimError::InvalidConfig(format!(
                        "class distribution {p:?} is not a probability vector"
                    )));
                }
                Ok(())
            }
            Population::Cases(c) if c.is_empty() => Err(SimError::EmptyPopulation),
            Population::Cases(_) => Ok(()),
        }
    }

    /// Weighted list of representative cases: one per class for a
    /// distribution, one per case (equal weight) for a test set.
    pub(crate) fn weighted_cases(&self) -> Vec<(f64, SimCase)> {
        match self {
            Population::Distribution(p) => AberrationClass::ALL
                .iter()
                .zip(p)
                .filter(|(_, w)| **w > 0.0)
                .map(|(c, w)| {
                    (
                        *w,
                        SimCase {
                            case_id: c.as_str().to_string(),
                            class: *c,
                        },
                    )
                })
                .collect(),
            Population::Cases(cases) => {
                let w = 1.0 / cases.len() as f64;
                cases.iter().map(|c| (w, c.clone())).collect()
            }
        }
    }
}
