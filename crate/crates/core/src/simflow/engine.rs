use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    IhcMode, Population, RecommenderSet, RecommenderSlot, SimCase, SimError, Stain, StainOrdering,
    Strategy, WorkflowConfig,
};
use crate::cohort::AberrationClass;
use crate::metrics::quantile_sorted;
use crate::rng::{self, categorical};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StainResult {
    Positive,
    NegativeOrAmbiguous,
}

/// Whether `stain` reads positive on a case of `class` given a uniform draw.
///
/// Only the targeted fusion can stain positive, and it does so with
/// probability `1 - fn_prob[stain]`.
pub fn stain_positive(
    class: AberrationClass,
    stain: Stain,
    u: f64,
    config: &WorkflowConfig,
) -> bool {
    class == stain.target() && u < 1.0 - config.fn_prob(stain)
}

pub fn stain_result<R: Rng + ?Sized>(
    case: &SimCase,
    stain: Stain,
    config: &WorkflowConfig,
    rng: &mut R,
) -> StainResult {
    if stain_positive(case.class, stain, rng.random(), config) {
        StainResult::Positive
    } else {
        StainResult::NegativeOrAmbiguous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub cost: f64,
    pub tat: f64,
    pub examinations: u32,
    pub stains_performed: u32,
    pub molecular: bool,
}

impl CaseOutcome {
    fn start() -> Self {
        // The initial H&E review.
        CaseOutcome {
            cost: 0.0,
            tat: 0.0,
            examinations: 1,
            stains_performed: 0,
            molecular: false,
        }
    }

    fn molecular(&mut self, config: &WorkflowConfig) {
        self.cost += config.molecular_cost;
        self.tat += config.molecular_days;
        self.examinations += 1;
        self.molecular = true;
    }
}

/// Stain order for a sequential workflow: prevalence order, or descending
/// recommender probability with ties kept in prevalence order.
fn stain_order(strategy: &Strategy, rec: Option<&[f64; 4]>) -> [Stain; 3] {
    let mut order = Stain::PREVALENCE_ORDER;
    if strategy.ordering == StainOrdering::PredictedProb {
        let rec = rec.expect("validated strategy has a recommender");
        order.sort_by(|a, b| rec[b.target().index()].total_cmp(&rec[a.target().index()]));
    }
    order
}

/// Plays one case through a workflow with the stain outcomes fixed by
/// `positive`.
pub fn simulate_case_with_results(
    strategy: &Strategy,
    rec: Option<&[f64; 4]>,
    positive: impl Fn(Stain) -> bool,
    config: &WorkflowConfig,
) -> CaseOutcome {
    let mut out = CaseOutcome::start();
    if strategy.uses_skip_rule() {
        let rec = rec.expect("recommender output required");
        if rec[AberrationClass::Other.index()] > config.threshold {
            out.molecular(config);
            return out;
        }
    }
    match strategy.ihc_mode {
        IhcMode::Parallel => {
            out.cost += 3.0 * config.stain_cost;
            out.tat += config.stain_days;
            out.examinations += 1;
            out.stains_performed = 3;
            if !Stain::ALL.into_iter().any(&positive) {
                out.molecular(config);
            }
        }
        IhcMode::Sequential => {
            for stain in stain_order(strategy, rec) {
                out.cost += config.stain_cost;
                out.tat += config.stain_days;
                out.examinations += 1;
                out.stains_performed += 1;
                if positive(stain) {
                    return out;
                }
            }
            out.molecular(config);
        }
    }
    out
}

/// Plays one case, drawing one uniform per stain from `rng`.
pub fn simulate_case<R: Rng + ?Sized>(
    case: &SimCase,
    strategy: &Strategy,
    rec: Option<&[f64; 4]>,
    config: &WorkflowConfig,
    rng: &mut R,
) -> CaseOutcome {
    let draws: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    simulate_case_with_results(
        strategy,
        rec,
        |s| stain_positive(case.class, s, draws[s.index()], config),
        config,
    )
}

/// Per-iteration aggregates of one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationAggregate {
    /// Total cost over the iteration's cases.
    pub cost: f64,
    /// Mean turnaround per case.
    pub tat: f64,
    /// Mean examinations per case.
    pub examinations: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub sd: f64,
    /// Standard error of `mean`.
    pub se: f64,
}

impl MetricSummary {
    fn from_values(mut values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        values.sort_by(f64::total_cmp);
        MetricSummary {
            mean,
            lo: quantile_sorted(&values, 0.025),
            hi: quantile_sorted(&values, 0.975),
            sd: var.sqrt(),
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub name: String,
    pub cost: MetricSummary,
    pub tat: MetricSummary,
    pub examinations: MetricSummary,
    #[serde(skip)]
    pub iterations: Vec<IterationAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub strategies: Vec<StrategySummary>,
    pub iterations: usize,
    pub cases_per_iteration: usize,
    pub seed: u64,
}

impl SimulationSummary {
    pub fn get(&self, strategy: &Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == *strategy)
    }

    /// `(strategy, metric, mean, lo, hi)` rows.
    pub fn rows(&self) -> Vec<(String, &'static str, f64, f64, f64)> {
        let mut rows = Vec::new();
        for s in &self.strategies {
            for (metric, m) in [
                ("cost", &s.cost),
                ("tat", &s.tat),
                ("examinations", &s.examinations),
            ] {
                rows.push((s.name.clone(), metric, m.mean, m.lo, m.hi));
            }
        }
        rows
    }
}

fn draw_case<'a>(population: &'a Population, u: f64, scratch: &'a mut SimCase) -> &'a SimCase {
    match population {
        Population::Distribution(p) => {
            let class = AberrationClass::ALL[categorical(p, u)];
            scratch.class = class;
            scratch.case_id.clear();
            scratch.case_id.push_str(class.as_str());
            scratch
        }
        Population::Cases(cases) => {
            let i = ((u * cases.len() as f64) as usize).min(cases.len() - 1);
            &cases[i]
        }
    }
}

fn run_iteration(
    iteration: usize,
    population: &Population,
    strategies: &[Strategy],
    config: &WorkflowConfig,
    recommenders: &RecommenderSet,
) -> Vec<IterationAggregate> {
    let mut rng = rng::substream(config.seed, iteration as u64);
    let mut totals = vec![(0.0, 0.0, 0.0); strategies.len()];
    let mut scratch = SimCase {
        case_id: String::new(),
        class: AberrationClass::Other,
    };
    for _ in 0..config.cases_per_iteration {
        // Fixed number of draws per case slot, whatever the strategies need.
        let u_case: f64 = rng.random();
        let u_stain: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let u_ai: f64 = rng.random();
        let u_perfect: f64 = rng.random();
        let case = draw_case(population, u_case, &mut scratch);
        let ai = recommenders.ai.recommend(case, u_ai);
        let perfect = recommenders.perfect.recommend(case, u_perfect);
        for (strategy, total) in strategies.iter().zip(totals.iter_mut()) {
            let rec = match strategy.recommender {
                RecommenderSlot::None => None,
                RecommenderSlot::Ai => Some(&ai),
                RecommenderSlot::PerfectAi => Some(&perfect),
            };
            let out = simulate_case_with_results(
                strategy,
                rec,
                |s| stain_positive(case.class, s, u_stain[s.index()], config),
                config,
            );
            total.0 += out.cost;
            total.1 += out.tat;
            total.2 += out.examinations as f64;
        }
    }
    let n = config.cases_per_iteration as f64;
    totals
        .into_iter()
        .map(|(cost, tat, ex)| IterationAggregate {
            cost,
            tat: tat / n,
            examinations: ex / n,
        })
        .collect()
}

/// Runs every strategy on the same sampled cases and stain draws.
///
/// Iteration `i` draws from substream `(config.seed, i)`; the result is the
/// same whether iterations run in parallel or not, and does not depend on the
/// order of `strategies`.
pub fn run_simulation(
    population: &Population,
    strategies: &[Strategy],
    config: &WorkflowConfig,
    recommenders: &RecommenderSet,
) -> Result<SimulationSummary, SimError> {
    config.validate()?;
    population.validate()?;
    for s in strategies {
        s.validate()?;
    }
    recommenders.ai.check_population(population)?;
    recommenders.perfect.check_population(population)?;

    let per_iteration: Vec<Vec<IterationAggregate>> = (0..config.iterations)
        .into_par_iter()
        .map(|i| run_iteration(i, population, strategies, config, recommenders))
        .collect();

    let strategies = strategies
        .iter()
        .enumerate()
        .map(|(k, strategy)| {
            let iterations: Vec<IterationAggregate> =
                per_iteration.iter().map(|it| it[k]).collect();
            StrategySummary {
                strategy: *strategy,
                name: strategy.name(),
                cost: MetricSummary::from_values(iterations.iter().map(|a| a.cost).collect()),
                tat: MetricSummary::from_values(iterations.iter().map(|a| a.tat).collect()),
                examinations: MetricSummary::from_values(
                    iterations.iter().map(|a| a.examinations).collect(),
                ),
                iterations,
            }
        })
        .collect();
    Ok(SimulationSummary {
        strategies,
        iterations: config.iterations,
        cases_per_iteration: config.cases_per_iteration,
        seed: config.seed,
    })
}
