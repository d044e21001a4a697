//! Closed-form per-case expectations, by the law of total expectation over
//! (true class, recommender output, outcome of the targeted stain).
//!
//! Kept separate from the step-by-step engine: only the targeted stain can
//! read positive, so each branch reduces to "which position does the targeted
//! stain occupy, and did it read positive".

use serde::{Deserialize, Serialize};

use super::{
    IhcMode, Population, RecommenderSet, SimError, Stain, StainOrdering, Strategy, WorkflowConfig,
};
use crate::cohort::AberrationClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub cost: f64,
    pub tat: f64,
    pub examinations: f64,
}

impl Expectation {
    const ZERO: Expectation = Expectation {
        cost: 0.0,
        tat: 0.0,
        examinations: 0.0,
    };

    fn add_weighted(&mut self, w: f64, cost: f64, tat: f64, examinations: f64) {
        self.cost += w * cost;
        self.tat += w * tat;
        self.examinations += w * examinations;
    }
}

/// Prevalence rank of a stain (0 = first).
fn prevalence_rank(stain: Stain) -> usize {
    match stain {
        Stain::Ntrk => 0,
        Stain::Ros1 => 1,
        Stain::Alk => 2,
    }
}

/// 1-based position of `target` in the sequential order.
fn position(target: Stain, ordering: StainOrdering, rec: Option<&[f64; 4]>) -> usize {
    match ordering {
        StainOrdering::Prevalence => prevalence_rank(target) + 1,
        StainOrdering::PredictedProb => {
            let rec = rec.expect("predicted ordering has a recommender");
            let p = |s: Stain| rec[s.target().index()];
            1 + Stain::ALL
                .iter()
                .filter(|&&s| s != target)
                .filter(|&&s| {
                    p(s) > p(target)
                        || (p(s) == p(target) && prevalence_rank(s) < prevalence_rank(target))
                })
                .count()
        }
    }
}

/// Expected (cost, turnaround, examinations) of one case under `strategy`,
/// averaged over the population.
pub fn analytic_expectation(
    population: &Population,
    strategy: &Strategy,
    recommenders: &RecommenderSet,
    config: &WorkflowConfig,
) -> Result<Expectation, SimError> {
    config.validate()?;
    population.validate()?;
    strategy.validate()?;
    let recommender = recommenders.get(strategy.recommender);
    if let Some(r) = recommender {
        r.check_population(population)?;
    }

    let (sc, sd) = (config.stain_cost, config.stain_days);
    let (mc, md) = (config.molecular_cost, config.molecular_days);
    let mut total = Expectation::ZERO;
    for (w_case, case) in population.weighted_cases() {
        let branches = match recommender {
            Some(r) => r
                .branches(&case)
                .into_iter()
                .map(|(p, v)| (p, Some(v)))
                .collect(),
            None => vec![(1.0, None)],
        };
        for (w_rec, rec) in branches {
            let w = w_case * w_rec;
            if let Some(r) = &rec {
                if r[AberrationClass::Other.index()] > config.threshold {
                    total.add_weighted(w, mc, md, 2.0);
                    continue;
                }
            }
            let target = Stain::for_class(case.class);
            let q = target.map_or(0.0, |s| 1.0 - config.fn_prob(s));
            match strategy.ihc_mode {
                IhcMode::Parallel => {
                    total.add_weighted(
                        w,
                        3.0 * sc + (1.0 - q) * mc,
                        sd + (1.0 - q) * md,
                        2.0 + (1.0 - q),
                    );
                }
                IhcMode::Sequential => {
                    if let Some(s) = target {
                        let j = position(s, strategy.ordering, rec.as_ref()) as f64;
                        total.add_weighted(w * q, j * sc, j * sd, 1.0 + j);
                    }
                    total.add_weighted(w * (1.0 - q), 3.0 * sc + mc, 3.0 * sd + md, 5.0);
                }
            }
        }
    }
    Ok(total)
}
