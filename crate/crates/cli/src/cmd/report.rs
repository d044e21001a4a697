use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use spitzkit::metrics::{binomial_test, bonferroni, discordant_counts, mcnemar_exact, ReportRow};

use crate::config;
use crate::data::{metrics_path, predictions_path, Task, SIMULATION};
use crate::error::CliError;
use crate::io::{csv_bytes, read_artifact, Run};

use super::evaluate::ANY_SLIDE;

pub const TESTS: &str = "report/tests.csv";
pub const SUMMARY: &str = "report/summary.md";
pub const TESTS_HEADER: [&str; 10] = [
    "task",
    "slide_kind",
    "test",
    "model_a",
    "model_b",
    "n",
    "accuracy_a",
    "accuracy_b",
    "p_value",
    "p_adjusted",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRow {
    pub task: String,
    pub slide_kind: String,
    pub test: &'static str,
    pub model_a: String,
    pub model_b: String,
    pub n: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct PredictionRow {
    model: String,
    slide_kind: String,
    case_id: String,
    label: usize,
    predicted: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct SimRow {
    strategy: String,
    metric: String,
    mean: f64,
    lo: f64,
    hi: f64,
}

/// Optional input: `None` when absent.
fn read_optional(run: &Run, rel: &str) -> Result<Option<Vec<u8>>, CliError> {
    match read_artifact(&run.input_path(rel), rel) {
        Ok(b) => Ok(Some(b)),
        Err(CliError::MissingArtifact { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn parse_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<Vec<T>, CliError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::config(format!("{what}: {e}")))
}

/// (case_id -> (label, predicted)) per (model, slide kind).
type Decisions = BTreeMap<(String, String), BTreeMap<String, (usize, usize)>>;

fn accuracy(d: &BTreeMap<String, (usize, usize)>) -> f64 {
    d.values().filter(|(l, p)| l == p).count() as f64 / d.len() as f64
}

/// Binomial test of each model against chance, and exact McNemar tests of the
/// image model against the clinical and fusion models on shared cases with a
/// Bonferroni correction over those comparisons.
pub fn significance_tests(task: Task, decisions: &Decisions) -> Result<Vec<TestRow>, CliError> {
    let k = task.n_classes();
    let mut rows = Vec::new();
    for ((model, kind), d) in decisions {
        let n = d.len();
        let hits = d.values().filter(|(l, p)| l == p).count();
        let p = binomial_test(hits as u64, n as u64, 1.0 / k as f64)?;
        rows.push(TestRow {
            task: task.name().into(),
            slide_kind: kind.clone(),
            test: "binomial",
            model_a: model.clone(),
            model_b: "chance".into(),
            n,
            accuracy_a: hits as f64 / n as f64,
            accuracy_b: 1.0 / k as f64,
            p_value: p,
            p_adjusted: p,
        });
    }
    let kinds: Vec<String> = decisions
        .keys()
        .filter(|(m, _)| m == "mil")
        .map(|(_, k)| k.clone())
        .collect();
    for kind in kinds {
        let mil = &decisions[&("mil".to_string(), kind.clone())];
        let others: Vec<(&str, &BTreeMap<String, (usize, usize)>)> =
            [("clinical", ANY_SLIDE), ("fusion", kind.as_str())]
                .iter()
                .filter_map(|(m, k)| {
                    decisions
                        .get(&(m.to_string(), k.to_string()))
                        .map(|d| (*m, d))
                })
                .collect();
        for (other, d) in &others {
            let shared: Vec<&String> = mil.keys().filter(|id| d.contains_key(*id)).collect();
            if shared.is_empty() {
                continue;
            }
            let truth: Vec<usize> = shared.iter().map(|id| mil[*id].0).collect();
            let a: Vec<usize> = shared.iter().map(|id| mil[*id].1).collect();
            let b: Vec<usize> = shared.iter().map(|id| d[*id].1).collect();
            let (b_count, c_count) = discordant_counts(&truth, &a, &b)?;
            let p = mcnemar_exact(b_count, c_count);
            let pick = |m: &BTreeMap<String, (usize, usize)>| {
                let sub: BTreeMap<String, (usize, usize)> =
                    shared.iter().map(|id| ((*id).clone(), m[*id])).collect();
                accuracy(&sub)
            };
            rows.push(TestRow {
                task: task.name().into(),
                slide_kind: kind.clone(),
                test: "mcnemar",
                model_a: "mil".into(),
                model_b: other.to_string(),
                n: shared.len(),
                accuracy_a: pick(mil),
                accuracy_b: pick(d),
                p_value: p,
                p_adjusted: bonferroni(p, others.len())?,
            });
        }
    }
    Ok(rows)
}

fn markdown(
    metrics: &[(Task, Vec<ReportRow>)],
    tests: &[TestRow],
    simulation: Option<&[SimRow]>,
) -> String {
    let mut s = String::from("# Evaluation summary\n");
    for (task, rows) in metrics {
        let _ = write!(s, "\n## Task: {}\n\n| model | slides | metric | class | estimate | 95% CI |\n|---|---|---|---|---|---|\n", task.name());
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.3} | {:.3}-{:.3} |",
                r.model, r.slide_kind, r.metric, r.class, r.point, r.lo, r.hi
            );
        }
        let task_tests: Vec<&TestRow> = tests.iter().filter(|t| t.task == task.name()).collect();
        if !task_tests.is_empty() {
            s.push_str("\n| test | slides | comparison | n | accuracy | P | P adjusted |\n|---|---|---|---|---|---|---|\n");
            for t in task_tests {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} vs {} | {} | {:.3} vs {:.3} | {:.3e} | {:.3e} |",
                    t.test,
                    t.slide_kind,
                    t.model_a,
                    t.model_b,
                    t.n,
                    t.accuracy_a,
                    t.accuracy_b,
                    t.p_value,
                    t.p_adjusted
                );
            }
        }
    }
    if let Some(rows) = simulation {
        s.push_str("\n## Workflow simulation\n\n| strategy | metric | mean | 95% CI |\n|---|---|---|---|\n");
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2}-{:.2} |",
                r.strategy, r.metric, r.mean, r.lo, r.hi
            );
        }
    }
    s
}

pub fn run(mut run: Run, cfg: &Value) -> Result<(), CliError> {
    config::check_keys(cfg, &[])?;
    let mut metrics = Vec::new();
    let mut tests = Vec::new();
    for task in Task::ALL {
        let Some(m) = read_optional(&run, &metrics_path(task))? else {
            continue;
        };
        let rows: Vec<ReportRow> = parse_csv(&m, &metrics_path(task))?;
        let p = run.read(&predictions_path(task), "predictions")?;
        let mut decisions = Decisions::new();
        for r in parse_csv::<PredictionRow>(&p, &predictions_path(task))? {
            decisions
                .entry((r.model, r.slide_kind))
                .or_default()
                .insert(r.case_id, (r.label, r.predicted));
        }
        tests.extend(significance_tests(task, &decisions)?);
        metrics.push((task, rows));
    }
    let simulation: Option<Vec<SimRow>> = match read_optional(&run, SIMULATION)? {
        Some(b) => Some(parse_csv(&b, SIMULATION)?),
        None => None,
    };
    if metrics.is_empty() && simulation.is_none() {
        return Err(CliError::MissingArtifact {
            what: "metrics or simulation results".into(),
            path: run.input.display().to_string(),
            bag_id: None,
        });
    }
    run.write(TESTS, &csv_bytes(&tests, &TESTS_HEADER)?)?;
    run.write(
        SUMMARY,
        markdown(&metrics, &tests, simulation.as_deref()).as_bytes(),
    )?;
    run.finish("report", &serde_json::json!({}))
}
