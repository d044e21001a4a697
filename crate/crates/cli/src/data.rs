//! Artifact layout of a run directory and loaders for the shared inputs.

use std::collections::{BTreeMap, BTreeSet};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use spitzkit::bags::{decode_tiles, pool_bags, BagManifest, FeatureBag};
use spitzkit::cohort::{from_jsonl, AberrationClass, DatasetSplit, LesionCase, Lineage, SlideKind};

use crate::error::CliError;
use crate::io::Run;

pub const COHORT: &str = "cohort.jsonl";
pub const BAG_MANIFEST: &str = "bags/manifest.json";
pub const SPLIT: &str = "split.json";
pub const SIMULATION: &str = "simulation.csv";
pub const SIMULATION_TRACE: &str = "simulation_trace.csv";

pub fn bag_path(bag_id: &str) -> String {
    format!("bags/{bag_id}.spzb")
}

pub fn checkpoint_path(task: Task, fold: usize) -> String {
    format!("checkpoints/{}/fold{fold}.spzm", task.name())
}

pub fn log_path(task: Task, fold: usize) -> String {
    format!("logs/{}/fold{fold}.csv", task.name())
}

pub fn threshold_path(task: Task) -> String {
    format!("thresholds/{}.json", task.name())
}

pub fn metrics_path(task: Task) -> String {
    format!("metrics/{}.csv", task.name())
}

pub fn predictions_path(task: Task) -> String {
    format!("predictions/{}.csv", task.name())
}

/// The three classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Spitz tumor vs conventional melanoma, over all cases.
    Lineage,
    /// ALK / ROS1 / NTRK / other, over Spitz tumors.
    Aberration,
    /// Benign / intermediate / malignant, over Spitz tumors.
    Category,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Lineage, Task::Aberration, Task::Category];

    pub fn name(self) -> &'static str {
        match self {
            Task::Lineage => "lineage",
            Task::Aberration => "aberration",
            Task::Category => "category",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: Vec<&str> = match self {
            Task::Lineage => vec!["SPITZ", "CONVENTIONAL_MELANOMA"],
            Task::Aberration => AberrationClass::ALL.iter().map(|a| a.as_str()).collect(),
            Task::Category => vec!["BENIGN", "INTERMEDIATE", "MALIGNANT"],
        };
        names.into_iter().map(String::from).collect()
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    /// Class index of `case`, or `None` when the case is outside the task.
    pub fn label(self, case: &LesionCase) -> Option<usize> {
        match self {
            Task::Lineage => Some(match case.lineage {
                Lineage::Spitz => 0,
                Lineage::ConventionalMelanoma => 1,
            }),
            Task::Aberration => case.aberration.map(|a| a.index()),
            Task::Category => match case.lineage {
                Lineage::Spitz => Some(case.category.index()),
                Lineage::ConventionalMelanoma => None,
            },
        }
    }
}

pub fn load_cohort(run: &Run) -> Result<Vec<LesionCase>, CliError> {
    Ok(from_jsonl(&run.read_string(COHORT, "cohort")?)?)
}

/// Loads the split and checks that it refers only to known cases.
pub fn load_split(run: &Run, cases: &[LesionCase]) -> Result<DatasetSplit, CliError> {
    let split: DatasetSplit = serde_json::from_slice(&run.read(SPLIT, "split")?)
        .map_err(|e| CliError::config(format!("{SPLIT}: {e}")))?;
    let known: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    if let Some(id) = split
        .folds
        .iter()
        .flatten()
        .chain(&split.test)
        .find(|id| !known.contains(id.as_str()))
    {
        return Err(CliError::config(format!(
            "split refers to unknown case {id}"
        )));
    }
    Ok(split)
}

/// `(case, label)` for the listed cases that belong to `task`, in id order.
pub fn labeled<'a>(
    cases: &'a [LesionCase],
    ids: &BTreeSet<String>,
    task: Task,
) -> Vec<(&'a LesionCase, usize)> {
    let mut out: Vec<_> = cases
        .iter()
        .filter(|c| ids.contains(&c.case_id))
        .filter_map(|c| task.label(c).map(|l| (c, l)))
        .collect();
    out.sort_by(|a, b| a.0.case_id.cmp(&b.0.case_id));
    out
}

/// Feature bags on disk, addressed by bag id.
pub struct BagStore<'r> {
    run: &'r Run,
    manifest: BagManifest,
}

impl<'r> BagStore<'r> {
    pub fn open(run: &'r Run) -> Result<Self, CliError> {
        let manifest: BagManifest =
            serde_json::from_slice(&run.read(BAG_MANIFEST, "bag manifest")?)
                .map_err(|e| CliError::config(format!("{BAG_MANIFEST}: {e}")))?;
        Ok(BagStore { run, manifest })
    }

    /// Tile dimension shared by every bag.
    pub fn dim(&self) -> Result<usize, CliError> {
        let dims: BTreeSet<usize> = self.manifest.values().map(|e| e.dim).collect();
        match dims.len() {
            1 => Ok(*dims.iter().next().expect("one")),
            0 => Err(CliError::config("bag manifest is empty")),
            _ => Err(CliError::config(format!(
                "bags have mixed dimensions {dims:?}"
            ))),
        }
    }

    pub fn bag(&self, bag_id: &str) -> Result<FeatureBag, CliError> {
        let entry = self
            .manifest
            .get(bag_id)
            .ok_or_else(|| CliError::missing_bag(bag_id, BAG_MANIFEST))?;
        let path = self.run.input_path(&entry.path);
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                CliError::missing_bag(bag_id, path.display().to_string())
            }
            _ => CliError::Io(format!("reading {}: {e}", path.display())),
        })?;
        let vectors =
            decode_tiles(&bytes).map_err(|e| CliError::config(format!("bag {bag_id}: {e}")))?;
        if vectors.ncols() != entry.dim {
            return Err(CliError::config(format!(
                "bag {bag_id}: dimension {} but manifest says {}",
                vectors.ncols(),
                entry.dim
            )));
        }
        Ok(FeatureBag::new(
            bag_id,
            entry.case_id.clone(),
            entry.slide_kind,
            vectors,
        )?)
    }

    /// Bags of `case`, restricted to one slide kind when given.
    pub fn case_bags(
        &self,
        case: &LesionCase,
        kind: Option<SlideKind>,
    ) -> Result<Vec<FeatureBag>, CliError> {
        case.bag_refs
            .iter()
            .filter(|(k, _)| kind.is_none_or(|want| **k == want))
            .map(|(_, id)| self.bag(id))
            .collect()
    }

    /// All tiles of `case` in one bag.
    pub fn pooled(&self, case: &LesionCase) -> Result<FeatureBag, CliError> {
        let bags = self.case_bags(case, None)?;
        Ok(pool_bags(&bags.iter().collect::<Vec<_>>())?)
    }
}

/// Index of cases by id.
pub fn by_id(cases: &[LesionCase]) -> BTreeMap<&str, &LesionCase> {
    cases.iter().map(|c| (c.case_id.as_str(), c)).collect()
}
