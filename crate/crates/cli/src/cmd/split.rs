use serde_json::Value;

use spitzkit::cohort::{split_dataset, SplitOptions};

use crate::config;
use crate::data::{load_cohort, SPLIT};
use crate::error::CliError;
use crate::io::Run;

/// 75% development in five folds, 25% test restricted to patients with both
/// slide kinds.
pub fn default_options(seed: u64) -> SplitOptions {
    SplitOptions {
        dev_fraction: 0.75,
        n_folds: 5,
        seed,
        test_requires_both_slide_kinds: true,
    }
}

pub fn run(mut run: Run, cfg: &Value) -> Result<(), CliError> {
    config::check_keys(cfg, &["split"])?;
    let mut options = config::overlay(default_options(run.seed), cfg, "split")?;
    options.seed = run.seed;
    let cases = load_cohort(&run)?;
    let split = split_dataset(&cases, &options)?;
    run.write(
        SPLIT,
        &serde_json::to_vec_pretty(&split).expect("split serializes"),
    )?;
    run.finish("split", &options)
}
