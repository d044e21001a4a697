use serde::{Deserialize, Serialize};
use serde_json::Value;

use spitzkit::bags::{synth_bag, BagManifest, BagSynthSpec, ManifestEntry};
use spitzkit::cohort::{
    sample_cohort, to_jsonl, AberrationClass, CohortSpec, LesionCase, SlideKind,
};
use spitzkit::rng::{derive_seed, substream};

use crate::config;
use crate::data::{bag_path, BAG_MANIFEST, COHORT};
use crate::error::CliError;
use crate::io::Run;
use crate::Profile;

const BAG_STREAM: u64 = 0xBA6;

/// Synthetic tile features: one orthogonal centroid per fine class (the four
/// aberration groups of Spitz tumors plus conventional melanoma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagsConfig {
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub signal_fraction: f64,
    pub min_tiles: usize,
    pub max_tiles: usize,
    /// Offset added to every coordinate of consultation slides, mimicking a
    /// stain shift between centers.
    pub consultation_shift: f32,
}

impl BagsConfig {
    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Desk => BagsConfig {
                dim: 64,
                separation: 8.0,
                sigma: 1.0,
                signal_fraction: 0.25,
                min_tiles: 20,
                max_tiles: 120,
                consultation_shift: 0.25,
            },
            Profile::Paper => BagsConfig {
                dim: 384,
                min_tiles: 200,
                max_tiles: 2_000,
                ..Self::preset(Profile::Desk)
            },
        }
    }

    pub fn spec(&self, seed: u64) -> Result<BagSynthSpec, CliError> {
        let mut spec = BagSynthSpec::orthogonal(
            FINE_CLASSES,
            self.dim,
            self.separation,
            self.sigma,
            self.signal_fraction,
            (self.min_tiles, self.max_tiles),
            seed,
        )?;
        if self.consultation_shift != 0.0 {
            spec.consultation_shift = Some(vec![self.consultation_shift; self.dim]);
        }
        spec.validate()?;
        Ok(spec)
    }
}

const FINE_CLASSES: usize = 5;

/// Centroid index of a case: aberration group, or 4 for conventional melanoma.
pub fn fine_class(case: &LesionCase) -> usize {
    case.aberration
        .map_or(AberrationClass::ALL.len(), |a| a.index())
}

#[derive(Debug, Serialize)]
struct Effective<'a> {
    cohort: &'a CohortSpec,
    bags: &'a BagsConfig,
}

pub fn run(mut run: Run, cfg: &Value, seed_flag: Option<u64>) -> Result<(), CliError> {
    config::check_keys(cfg, &["cohort", "bags"])?;
    let n_default = match run.profile {
        Profile::Desk => 200,
        Profile::Paper => 772,
    };
    let mut cohort = config::section::<CohortSpec>(cfg, "cohort")?
        .unwrap_or_else(|| CohortSpec::table1(n_default, 0));
    if let Some(s) = seed_flag {
        cohort.seed = s;
    }
    run.seed = cohort.seed;
    let bags_cfg = config::overlay(BagsConfig::preset(run.profile), cfg, "bags")?;
    let bag_seed = derive_seed(cohort.seed, BAG_STREAM);
    let spec = bags_cfg.spec(bag_seed)?;

    let cases = sample_cohort(&cohort)?;
    let mut manifest = BagManifest::new();
    for (i, case) in cases.iter().enumerate() {
        for (kind, bag_id) in &case.bag_refs {
            let k = SlideKind::ALL
                .iter()
                .position(|s| s == kind)
                .expect("listed kind") as u64;
            let mut rng = substream(bag_seed, 2 * i as u64 + k);
            let sb = synth_bag(
                &spec,
                fine_class(case),
                bag_id,
                &case.case_id,
                *kind,
                &mut rng,
            )?;
            let path = bag_path(bag_id);
            run.write(&path, &sb.bag.to_bytes())?;
            manifest.insert(
                bag_id.clone(),
                ManifestEntry {
                    path,
                    case_id: case.case_id.clone(),
                    slide_kind: *kind,
                    dim: sb.bag.dim(),
                    n_tiles: sb.bag.n_tiles(),
                },
            );
        }
    }
    run.write(COHORT, to_jsonl(&cases).as_bytes())?;
    run.write(
        BAG_MANIFEST,
        &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    run.finish(
        "synth",
        &Effective {
            cohort: &cohort,
            bags: &bags_cfg,
        },
    )
}
