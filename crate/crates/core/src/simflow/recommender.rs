use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Population, RecommenderSlot, SimCase, SimError};
use crate::cohort::AberrationClass;
use crate::rng::categorical;

/// Serializable description of a recommender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecommenderSpec {
    Perfect,
    Uniform,
    ConfusionTable {
        /// Row = true class, column = predicted class (ALK, ROS1, NTRK, OTHER).
        matrix: [[f64; 4]; 4],
        /// Probability placed on the predicted class; the rest is spread evenly.
        winner_confidence: f64,
    },
    ModelBacked {
        /// Per-case class probabilities, e.g. from a trained ensemble.
        probs: BTreeMap<String, [f64; 4]>,
    },
}

/// Produces a probability vector over (ALK, ROS1, NTRK, OTHER) for a case.
#[derive(Debug, Clone, PartialEq)]
pub enum Recommender {
    Perfect,
    Uniform,
    ConfusionTable {
        matrix: [[f64; 4]; 4],
        winner_confidence: f64,
    },
    ModelBacked {
        probs: BTreeMap<String, [f64; 4]>,
    },
}

fn is_simplex(row: &[f64]) -> bool {
    row.iter().all(|p| (0.0..=1.0).contains(p)) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

pub fn make_recommender(spec: RecommenderSpec) -> Result<Recommender, SimError> {
    match spec {
        RecommenderSpec::Perfect => Ok(Recommender::Perfect),
        RecommenderSpec::Uniform => Ok(Recommender::Uniform),
        RecommenderSpec::ConfusionTable {
            matrix,
            winner_confidence,
        } => {
            if let Some((i, _)) = matrix.iter().enumerate().find(|(_, r)| !is_simplex(&r[..])) {
                return Err(SimError::InvalidRecommender(format!(
                    "confusion row {i} is not stochastic"
                )));
            }
            if !(winner_confidence > 0.25 && winner_confidence <= 1.0) {
                return Err(SimError::InvalidRecommender(format!(
                    "winner_confidence {winner_confidence} outside (0.25, 1]"
                )));
            }
            Ok(Recommender::ConfusionTable {
                matrix,
                winner_confidence,
            })
        }
        RecommenderSpec::ModelBacked { probs } => {
            if let Some((id, _)) = probs.iter().find(|(_, p)| !is_simplex(&p[..])) {
                return Err(SimError::InvalidRecommender(format!(
                    "probabilities for {id} are not a simplex"
                )));
            }
            Ok(Recommender::ModelBacked { probs })
        }
    }
}

impl Recommender {
    /// Confusion table with `accuracy` on the diagonal and the remaining mass
    /// spread evenly over the other classes.
    pub fn symmetric_confusion(accuracy: f64, winner_confidence: f64) -> Result<Self, SimError> {
        let off = (1.0 - accuracy) / 3.0;
        let mut matrix = [[off; 4]; 4];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = accuracy;
        }
        make_recommender(RecommenderSpec::ConfusionTable {
            matrix,
            winner_confidence,
        })
    }

    /// Checks that every case the population can produce has an output.
    pub fn check_population(&self, population: &Population) -> Result<(), SimError> {
        if let Recommender::ModelBacked { probs } = self {
            match population {
                Population::Distribution(_) => {
                    return Err(SimError::InvalidRecommender(
                        "model-backed recommender needs a case population".into(),
                    ))
                }
                Population::Cases(cases) => {
                    if let Some(c) = cases.iter().find(|c| !probs.contains_key(&c.case_id)) {
                        return Err(SimError::InvalidRecommender(format!(
                            "no prediction for case {}",
                            c.case_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Output for `case` given one uniform draw `u` (used only by the
    /// confusion-table recommender).
    pub fn recommend(&self, case: &SimCase, u: f64) -> [f64; 4] {
        match self {
            Recommender::Perfect => one_hot(case.class),
            Recommender::Uniform => [0.25; 4],
            Recommender::ConfusionTable {
                matrix,
                winner_confidence,
            } => {
                let predicted = categorical(&matrix[case.class.index()], u);
                spread(predicted, *winner_confidence)
            }
            Recommender::ModelBacked { probs } => probs[&case.case_id],
        }
    }

    /// Every possible output for `case` with its probability.
    pub fn branches(&self, case: &SimCase) -> Vec<(f64, [f64; 4])> {
        match self {
            Recommender::ConfusionTable {
                matrix,
                winner_confidence,
            } => matrix[case.class.index()]
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(j, p)| (*p, spread(j, *winner_confidence)))
                .collect(),
            _ => vec![(1.0, self.recommend(case, 0.0))],
        }
    }
}

fn one_hot(class: AberrationClass) -> [f64; 4] {
    let mut out = [0.0; 4];
    out[class.index()] = 1.0;
    out
}

fn spread(winner: usize, confidence: f64) -> [f64; 4] {
    let mut out = [(1.0 - confidence) / 3.0; 4];
    out[winner] = confidence;
    out
}

/// The recommenders behind the AI and perfect-AI strategy slots.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommenderSet {
    pub ai: Recommender,
    pub perfect: Recommender,
}

impl RecommenderSet {
    pub fn new(ai: Recommender) -> Self {
        RecommenderSet {
            ai,
            perfect: Recommender::Perfect,
        }
    }

    pub fn get(&self, slot: RecommenderSlot) -> Option<&Recommender> {
        match slot {
            RecommenderSlot::None => None,
            RecommenderSlot::Ai => Some(&self.ai),
            RecommenderSlot::PerfectAi => Some(&self.perfect),
        }
    }
}
