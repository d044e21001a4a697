use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use spitzkit::cohort::{AberrationClass, LesionCase};
use spitzkit::simflow::{
    make_recommender, run_simulation, IhcMode, Population, Recommender, RecommenderSet,
    RecommenderSlot, RecommenderSpec, StainOrdering, Strategy, WorkflowConfig,
};

use crate::config;
use crate::data::{load_cohort, load_split, predictions_path, Task, SIMULATION, SIMULATION_TRACE};
use crate::error::CliError;
use crate::io::{csv_bytes, read_artifact, Run};
use crate::Profile;

pub const SIMULATION_HEADER: [&str; 5] = ["strategy", "metric", "mean", "lo", "hi"];
pub const TRACE_HEADER: [&str; 5] = ["iteration", "strategy", "cost", "tat", "examinations"];

/// A strategy given either by name (`"ai/sequential_predicted"`) or field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyRef {
    Name(String),
    Full(Strategy),
}

impl StrategyRef {
    pub fn resolve(&self) -> Result<Strategy, CliError> {
        match self {
            StrategyRef::Full(s) => Ok(*s),
            StrategyRef::Name(n) => parse_strategy(n),
        }
    }
}

pub fn parse_strategy(name: &str) -> Result<Strategy, CliError> {
    let bad = || {
        CliError::config(format!(
            "unknown strategy {name:?}; expected <baseline|ai|perfect_ai>/<parallel|sequential_prevalence|sequential_predicted>"
        ))
    };
    let (rec, mode) = name.split_once('/').ok_or_else(bad)?;
    let recommender = match rec {
        "baseline" => RecommenderSlot::None,
        "ai" => RecommenderSlot::Ai,
        "perfect_ai" => RecommenderSlot::PerfectAi,
        _ => return Err(bad()),
    };
    let (ihc_mode, ordering) = match mode {
        "parallel" => (IhcMode::Parallel, StainOrdering::Prevalence),
        "sequential_prevalence" => (IhcMode::Sequential, StainOrdering::Prevalence),
        "sequential_predicted" => (IhcMode::Sequential, StainOrdering::PredictedProb),
        _ => return Err(bad()),
    };
    Ok(Strategy::new(ihc_mode, ordering, recommender))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum PopulationSource {
    /// Class frequencies of the published cohort.
    Table1,
    /// Explicit (ALK, ROS1, NTRK, OTHER) probabilities.
    Distribution { probs: [f64; 4] },
    /// Spitz tumors of the run's cohort, sampled with replacement.
    Cohort {
        #[serde(default = "test_part")]
        part: CohortPart,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortPart {
    Test,
    All,
}

fn test_part() -> CohortPart {
    CohortPart::Test
}

/// Where the AI recommender comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum RecommenderSource {
    Perfect,
    Uniform,
    ConfusionTable {
        matrix: [[f64; 4]; 4],
        winner_confidence: f64,
    },
    ModelBacked {
        probs: BTreeMap<String, [f64; 4]>,
    },
    /// Confusion table with `accuracy` on the diagonal.
    Symmetric {
        accuracy: f64,
        winner_confidence: f64,
    },
    /// Per-case probabilities from an aberration predictions file.
    Predictions {
        #[serde(default = "default_predictions")]
        path: String,
        #[serde(default = "default_model")]
        model: String,
        #[serde(default = "default_slide_kind")]
        slide_kind: String,
    },
}

fn default_predictions() -> String {
    predictions_path(Task::Aberration)
}

fn default_model() -> String {
    "mil".into()
}

fn default_slide_kind() -> String {
    "INTERNAL".into()
}

impl Default for RecommenderSource {
    /// Roughly the accuracy reached on aberration prediction, with a confident
    /// enough winner for the skip rule to fire at the default threshold.
    fn default() -> Self {
        RecommenderSource::Symmetric {
            accuracy: 0.55,
            winner_confidence: 0.6,
        }
    }
}

impl RecommenderSource {
    fn build(&self, run: &Run) -> Result<Recommender, CliError> {
        let spec = match self.clone() {
            RecommenderSource::Perfect => RecommenderSpec::Perfect,
            RecommenderSource::Uniform => RecommenderSpec::Uniform,
            RecommenderSource::ConfusionTable {
                matrix,
                winner_confidence,
            } => RecommenderSpec::ConfusionTable {
                matrix,
                winner_confidence,
            },
            RecommenderSource::ModelBacked { probs } => RecommenderSpec::ModelBacked { probs },
            RecommenderSource::Symmetric {
                accuracy,
                winner_confidence,
            } => {
                return Ok(Recommender::symmetric_confusion(
                    accuracy,
                    winner_confidence,
                )?);
            }
            RecommenderSource::Predictions {
                path,
                model,
                slide_kind,
            } => RecommenderSpec::ModelBacked {
                probs: read_predictions(run, &path, &model, &slide_kind)?,
            },
        };
        Ok(make_recommender(spec)?)
    }
}

/// Aberration probabilities per case from an evaluate predictions file.
fn read_predictions(
    run: &Run,
    path: &str,
    model: &str,
    slide_kind: &str,
) -> Result<BTreeMap<String, [f64; 4]>, CliError> {
    let bytes = read_artifact(&run.input_path(path), "aberration predictions")?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::config(format!("{path}: no column {name}")))
    };
    let (m, k, id) = (col("model")?, col("slide_kind")?, col("case_id")?);
    let p: Vec<usize> = AberrationClass::ALL
        .iter()
        .map(|a| col(&format!("p_{a}")))
        .collect::<Result<_, _>>()?;
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        if &rec[m] != model || &rec[k] != slide_kind {
            continue;
        }
        let mut probs = [0.0; 4];
        for (slot, &c) in probs.iter_mut().zip(&p) {
            *slot = rec[c]
                .parse()
                .map_err(|_| CliError::config(format!("{path}: bad probability {:?}", &rec[c])))?;
        }
        out.insert(rec[id].to_string(), probs);
    }
    if out.is_empty() {
        return Err(CliError::config(format!(
            "{path}: no rows for model {model} on {slide_kind} slides"
        )));
    }
    Ok(out)
}

fn build_population(run: &Run, source: &PopulationSource) -> Result<Population, CliError> {
    match source {
        PopulationSource::Table1 => Ok(Population::table1()),
        PopulationSource::Distribution { probs } => Ok(Population::Distribution(*probs)),
        PopulationSource::Cohort { part } => {
            let cases = load_cohort(run)?;
            let keep: Vec<LesionCase> = match part {
                CohortPart::All => cases
                    .iter()
                    .filter(|c| c.aberration.is_some())
                    .cloned()
                    .collect(),
                CohortPart::Test => {
                    let split = load_split(run, &cases)?;
                    cases
                        .iter()
                        .filter(|c| c.aberration.is_some() && split.test.contains(&c.case_id))
                        .cloned()
                        .collect()
                }
            };
            Ok(Population::from_lesions(&keep)?)
        }
    }
}

#[derive(Debug, Serialize)]
struct Effective<'a> {
    workflow: &'a WorkflowConfig,
    strategies: Vec<String>,
    population: &'a PopulationSource,
    recommender: &'a RecommenderSource,
    trace: bool,
}

pub fn run(mut run: Run, cfg: &Value, seed_flag: Option<u64>) -> Result<(), CliError> {
    config::check_keys(
        cfg,
        &[
            "workflow",
            "strategies",
            "population",
            "recommender",
            "trace",
        ],
    )?;
    let mut preset = WorkflowConfig::default();
    if run.profile == Profile::Desk {
        preset.iterations = 1_000;
    }
    let mut workflow = config::overlay(preset, cfg, "workflow")?;
    if let Some(s) = seed_flag {
        workflow.seed = s;
    }
    run.seed = workflow.seed;
    let strategies: Vec<Strategy> = match config::section::<Vec<StrategyRef>>(cfg, "strategies")? {
        Some(refs) => refs
            .iter()
            .map(StrategyRef::resolve)
            .collect::<Result<_, _>>()?,
        None => Strategy::all_variants(),
    };
    let population_src = config::section(cfg, "population")?.unwrap_or(PopulationSource::Table1);
    let recommender_src: RecommenderSource =
        config::section(cfg, "recommender")?.unwrap_or_default();
    let trace = config::section::<bool>(cfg, "trace")?.unwrap_or(false);

    let population = build_population(&run, &population_src)?;
    let recommenders = RecommenderSet::new(recommender_src.build(&run)?);
    let summary = run_simulation(&population, &strategies, &workflow, &recommenders)?;

    run.write(SIMULATION, &csv_bytes(&summary.rows(), &SIMULATION_HEADER)?)?;
    if trace {
        let mut rows = Vec::new();
        for s in &summary.strategies {
            for (i, it) in s.iterations.iter().enumerate() {
                rows.push((i, s.name.as_str(), it.cost, it.tat, it.examinations));
            }
        }
        rows.sort_by_key(|r| r.0);
        run.write(SIMULATION_TRACE, &csv_bytes(&rows, &TRACE_HEADER)?)?;
    }
    let effective = Effective {
        workflow: &workflow,
        strategies: strategies.iter().map(Strategy::name).collect(),
        population: &population_src,
        recommender: &recommender_src,
        trace,
    };
    run.finish("simulate", &effective)
}
