//! Lesion-level data model, label grouping, a synthetic cohort generator and
//! the patient-level development/test splitter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Triangular};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, categorical};

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("unknown aberration label {label:?}; accepted labels: {accepted}")]
    UnknownAberration { label: String, accepted: String },
    #[error("unknown diagnostic category {label:?}; accepted labels: {accepted}")]
    UnknownCategory { label: String, accepted: String },
    #[error("cannot split {patients} distinct patient(s) into {folds} folds plus a test set")]
    TooFewPatients { patients: usize, folds: usize },
}

fn invalid(field: &str, reason: impl Into<String>) -> CohortError {
    CohortError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Lineage {
    Spitz,
    ConventionalMelanoma,
}

/// Grouped genetic driver class of a Spitz tumor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AberrationClass {
    Alk,
    Ros1,
    Ntrk,
    Other,
}

impl AberrationClass {
    pub const ALL: [AberrationClass; 4] = [Self::Alk, Self::Ros1, Self::Ntrk, Self::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alk => "ALK",
            Self::Ros1 => "ROS1",
            Self::Ntrk => "NTRK",
            Self::Other => "OTHER",
        }
    }
}

impl fmt::Display for AberrationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticCategory {
    Benign,
    Intermediate,
    Malignant,
}

impl DiagnosticCategory {
    pub const ALL: [DiagnosticCategory; 3] = [Self::Benign, Self::Intermediate, Self::Malignant];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Location {
    HeadNeck,
    Trunk,
    UpperExtremities,
    LowerExtremities,
    HandsFeet,
    Unknown,
}

impl Location {
    pub const ALL: [Location; 6] = [
        Self::HeadNeck,
        Self::Trunk,
        Self::UpperExtremities,
        Self::LowerExtremities,
        Self::HandsFeet,
        Self::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which set of slides a bag was computed from: slides cut and stained in
/// house, or the referring center's slides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlideKind {
    Internal,
    Consultation,
}

impl SlideKind {
    pub const ALL: [SlideKind; 2] = [Self::Internal, Self::Consultation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Internal => "INTERNAL",
            Self::Consultation => "CONSULTATION",
        }
    }
}

pub const MIN_AGE: u32 = 1;
pub const MAX_AGE: u32 = 85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalFeatures {
    pub age: u32,
    pub sex: Sex,
    pub location: Location,
}

impl ClinicalFeatures {
    pub fn validate(&self) -> Result<(), CohortError> {
        if !(MIN_AGE..=MAX_AGE).contains(&self.age) {
            return Err(invalid(
                "age",
                format!("{} outside [{MIN_AGE}, {MAX_AGE}]", self.age),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionCase {
    pub case_id: String,
    pub patient_id: String,
    pub lineage: Lineage,
    pub aberration: Option<AberrationClass>,
    pub category: DiagnosticCategory,
    pub clinical: ClinicalFeatures,
    pub bag_refs: BTreeMap<SlideKind, String>,
}

impl LesionCase {
    pub fn validate(&self) -> Result<(), CohortError> {
        match (self.lineage, self.aberration) {
            (Lineage::Spitz, None) => {
                return Err(invalid("aberration", "missing for a Spitz case"))
            }
            (Lineage::ConventionalMelanoma, Some(_)) => {
                return Err(invalid("aberration", "present for a conventional melanoma"))
            }
            _ => {}
        }
        if self.lineage == Lineage::ConventionalMelanoma
            && self.category != DiagnosticCategory::Malignant
        {
            return Err(invalid(
                "category",
                "conventional melanoma must be MALIGNANT",
            ));
        }
        if self.bag_refs.is_empty() {
            return Err(invalid("bag_refs", "case has no feature bag"));
        }
        self.clinical.validate()
    }

    /// Stratification key: lineage plus grouped aberration.
    pub fn class_key(&self) -> String {
        match self.aberration {
            Some(a) => format!("SPITZ/{a}"),
            None => "CONVENTIONAL_MELANOMA".to_string(),
        }
    }

    pub fn has_both_slide_kinds(&self) -> bool {
        SlideKind::ALL.iter().all(|k| self.bag_refs.contains_key(k))
    }
}

// ---------------------------------------------------------------------------
// Label grouping
// ---------------------------------------------------------------------------

/// Raw driver labels of the Spitz tumors in the source cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawAberration {
    HrasMutation,
    Ros1Mutation,
    Ros1Fusion,
    Ntrk1Fusion,
    Ntrk2Fusion,
    Ntrk3Fusion,
    NtrkUnknownFusion,
    AlkFusion,
    Map3k8Fusion,
    BrafFusion,
    RetFusion,
    MetFusion,
    Rasgrf1Fusion,
}

const RAW_ABERRATION_LABELS: [(&str, RawAberration); 13] = [
    ("HRAS mutation", RawAberration::HrasMutation),
    ("ROS1 mutation", RawAberration::Ros1Mutation),
    ("ROS1 fusion", RawAberration::Ros1Fusion),
    ("NTRK1 fusion", RawAberration::Ntrk1Fusion),
    ("NTRK2 fusion", RawAberration::Ntrk2Fusion),
    ("NTRK3 fusion", RawAberration::Ntrk3Fusion),
    ("NTRK unknown fusion", RawAberration::NtrkUnknownFusion),
    ("ALK fusion", RawAberration::AlkFusion),
    ("MAP3K8 fusion", RawAberration::Map3k8Fusion),
    ("BRAF fusion", RawAberration::BrafFusion),
    ("RET fusion", RawAberration::RetFusion),
    ("MET fusion", RawAberration::MetFusion),
    ("RASGRF1 fusion", RawAberration::Rasgrf1Fusion),
];

// Spellings seen in source tables.
const RAW_ABERRATION_ALIASES: [(&str, RawAberration); 3] = [
    ("NTRK fusion", RawAberration::NtrkUnknownFusion),
    ("NTRK (unknown) fusion", RawAberration::NtrkUnknownFusion),
    ("RASGFR1 fusion", RawAberration::Rasgrf1Fusion),
];

fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace(" / ", "/")
        .to_ascii_lowercase()
}

impl RawAberration {
    pub fn all_labels() -> impl Iterator<Item = &'static str> {
        RAW_ABERRATION_LABELS.iter().map(|(l, _)| *l)
    }

    pub fn grouped(self) -> AberrationClass {
        use RawAberration::*;
        match self {
            AlkFusion => AberrationClass::Alk,
            Ros1Fusion => AberrationClass::Ros1,
            Ntrk1Fusion | Ntrk2Fusion | Ntrk3Fusion | NtrkUnknownFusion => AberrationClass::Ntrk,
            HrasMutation | Ros1Mutation | Map3k8Fusion | BrafFusion | RetFusion | MetFusion
            | Rasgrf1Fusion => AberrationClass::Other,
        }
    }
}

impl FromStr for RawAberration {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_label(s);
        RAW_ABERRATION_LABELS
            .iter()
            .chain(RAW_ABERRATION_ALIASES.iter())
            .find(|(l, _)| normalize_label(l) == key)
            .map(|(_, r)| *r)
            .ok_or_else(|| CohortError::UnknownAberration {
                label: s.to_string(),
                accepted: RawAberration::all_labels().collect::<Vec<_>>().join(", "),
            })
    }
}

/// Maps a raw Spitz driver label onto the four classification groups.
///
/// Melanoma-only drivers (BRAF or NRAS mutations) are rejected.
pub fn group_aberration(raw: &str) -> Result<AberrationClass, CohortError> {
    raw.parse::<RawAberration>().map(RawAberration::grouped)
}

const RAW_CATEGORY_LABELS: [(&str, DiagnosticCategory); 5] = [
    ("Benign", DiagnosticCategory::Benign),
    ("Benign/Intermediate", DiagnosticCategory::Intermediate),
    ("Intermediate", DiagnosticCategory::Intermediate),
    ("Intermediate/Malignant", DiagnosticCategory::Malignant),
    ("Malignant", DiagnosticCategory::Malignant),
];

/// Collapses the five-level diagnostic category; differential diagnoses go
/// to the more severe side.
pub fn group_category(raw: &str) -> Result<DiagnosticCategory, CohortError> {
    let key = normalize_label(raw);
    RAW_CATEGORY_LABELS
        .iter()
        .find(|(l, _)| normalize_label(l) == key)
        .map(|(_, c)| *c)
        .ok_or_else(|| CohortError::UnknownCategory {
            label: raw.to_string(),
            accepted: RAW_CATEGORY_LABELS
                .iter()
                .map(|(l, _)| *l)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

// ---------------------------------------------------------------------------
// Cohort specification
// ---------------------------------------------------------------------------

/// Age distribution summary; sampled as a triangular law on `[min, max]` whose
/// mode is chosen so the median matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeProfile {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl AgeProfile {
    /// Mode of the triangular distribution on `[min, max]` with this median.
    pub fn triangular_mode(&self) -> f64 {
        let (a, m, b) = (self.min, self.median, self.max);
        let mid = 0.5 * (a + b);
        let mode = if m >= mid {
            a + 2.0 * (m - a).powi(2) / (b - a)
        } else {
            b - 2.0 * (b - m).powi(2) / (b - a)
        };
        mode.clamp(a, b)
    }

    fn validate(&self, field: &str) -> Result<(), CohortError> {
        let ok = self.min >= MIN_AGE as f64
            && self.max <= MAX_AGE as f64
            && self.min < self.max
            && (self.min..=self.max).contains(&self.median);
        if !ok {
            return Err(invalid(
                field,
                "need 1 <= min <= median <= max <= 85 with min < max",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideAvailability {
    pub both: f64,
    pub internal_only: f64,
    pub consultation_only: f64,
}

/// Per-lineage empirical tables for the clinical covariates and slide
/// availability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageProfile {
    pub age: AgeProfile,
    pub male_prob: f64,
    pub location_probs: BTreeMap<Location, f64>,
    pub slide_availability: SlideAvailability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_cases: usize,
    /// Probability that a case is a Spitz tumor.
    pub lineage_ratio: f64,
    pub aberration_probs: BTreeMap<AberrationClass, f64>,
    pub category_probs_by_aberration: BTreeMap<AberrationClass, BTreeMap<DiagnosticCategory, f64>>,
    pub spitz_profile: LineageProfile,
    pub melanoma_profile: LineageProfile,
    /// Lesions per patient; 1 means `patient_id == case_id`.
    #[serde(default = "one")]
    pub lesions_per_patient: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn ratios<K: Ord + Copy>(counts: &[(K, u32)]) -> BTreeMap<K, f64> {
    let total: u32 = counts.iter().map(|(_, c)| c).sum();
    counts
        .iter()
        .map(|(k, c)| (*k, *c as f64 / total as f64))
        .collect()
}

impl CohortSpec {
    /// Generator parameters taken from the published cohort characteristics
    /// (393 Spitz tumors, 379 conventional melanomas).
    pub fn table1(n_cases: usize, seed: u64) -> Self {
        use AberrationClass::*;
        use DiagnosticCategory::*;
        use Location::*;
        let aberration_probs =
            BTreeMap::from([(Alk, 0.150), (Ros1, 0.273), (Ntrk, 0.282), (Other, 0.295)]);
        // 209 benign, 37 + 95 intermediate, 17 + 35 malignant after grouping.
        let category = ratios(&[(Benign, 209), (Intermediate, 132), (Malignant, 52)]);
        let category_probs_by_aberration = AberrationClass::ALL
            .iter()
            .map(|a| (*a, category.clone()))
            .collect();
        let spitz_profile = LineageProfile {
            age: AgeProfile {
                min: 1.0,
                median: 27.0,
                max: 73.0,
            },
            male_prob: 118.0 / 393.0,
            location_probs: ratios(&[
                (HeadNeck, 32),
                (Trunk, 73),
                (UpperExtremities, 66),
                (LowerExtremities, 197),
                (HandsFeet, 23),
                (Unknown, 2),
            ]),
            slide_availability: SlideAvailability {
                both: 264.0 / 393.0,
                internal_only: 102.0 / 393.0,
                consultation_only: 27.0 / 393.0,
            },
        };
        let melanoma_profile = LineageProfile {
            age: AgeProfile {
                min: 3.0,
                median: 48.0,
                max: 85.0,
            },
            male_prob: 158.0 / 379.0,
            location_probs: ratios(&[
                (HeadNeck, 56),
                (Trunk, 154),
                (UpperExtremities, 55),
                (LowerExtremities, 94),
                (HandsFeet, 13),
                (Unknown, 7),
            ]),
            slide_availability: SlideAvailability {
                both: 220.0 / 379.0,
                internal_only: 117.0 / 379.0,
                consultation_only: 42.0 / 379.0,
            },
        };
        CohortSpec {
            n_cases,
            lineage_ratio: 393.0 / 772.0,
            aberration_probs,
            category_probs_by_aberration,
            spitz_profile,
            melanoma_profile,
            lesions_per_patient: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        if self.n_cases < 1 {
            return Err(invalid("n_cases", "must be at least 1"));
        }
        if self.lesions_per_patient < 1 {
            return Err(invalid("lesions_per_patient", "must be at least 1"));
        }
        check_prob("lineage_ratio", self.lineage_ratio)?;
        check_simplex(
            "aberration_probs",
            &AberrationClass::ALL,
            &self.aberration_probs,
        )?;
        for a in AberrationClass::ALL {
            let row = self.category_probs_by_aberration.get(&a).ok_or_else(|| {
                invalid(
                    "category_probs_by_aberration",
                    format!("missing row for {a}"),
                )
            })?;
            check_simplex(
                &format!("category_probs_by_aberration.{a}"),
                &DiagnosticCategory::ALL,
                row,
            )?;
        }
        for (name, p) in [
            ("spitz_profile", &self.spitz_profile),
            ("melanoma_profile", &self.melanoma_profile),
        ] {
            p.age.validate(&format!("{name}.age"))?;
            check_prob(&format!("{name}.male_prob"), p.male_prob)?;
            check_simplex(
                &format!("{name}.location_probs"),
                &Location::ALL,
                &p.location_probs,
            )?;
            let s = p.slide_availability;
            let field = format!("{name}.slide_availability");
            for v in [s.both, s.internal_only, s.consultation_only] {
                check_prob(&field, v)?;
            }
            check_sum(&field, s.both + s.internal_only + s.consultation_only)?;
        }
        Ok(())
    }
}

fn check_prob(field: &str, p: f64) -> Result<(), CohortError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(field, format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_sum(field: &str, sum: f64) -> Result<(), CohortError> {
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(invalid(
            field,
            format!("probabilities sum to {sum}, expected 1"),
        ));
    }
    Ok(())
}

fn check_simplex<K: Ord + fmt::Debug>(
    field: &str,
    keys: &[K],
    probs: &BTreeMap<K, f64>,
) -> Result<(), CohortError> {
    for k in keys {
        let p = probs
            .get(k)
            .ok_or_else(|| invalid(field, format!("missing entry {k:?}")))?;
        check_prob(field, *p)?;
    }
    if probs.len() != keys.len() {
        return Err(invalid(field, "unexpected extra entries"));
    }
    check_sum(field, probs.values().sum())
}

fn weights<K: Ord + Copy>(keys: &[K], probs: &BTreeMap<K, f64>) -> Vec<f64> {
    keys.iter().map(|k| probs[k]).collect()
}

/// Draws a synthetic cohort. Deterministic for a fixed `spec.seed`.
pub fn sample_cohort(spec: &CohortSpec) -> Result<Vec<LesionCase>, CohortError> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed);
    let aberration_w = weights(&AberrationClass::ALL, &spec.aberration_probs);
    let width = spec.n_cases.to_string().len().max(5);
    let mut cases = Vec::with_capacity(spec.n_cases);
    for i in 0..spec.n_cases {
        let case_id = format!("C{:0width$}", i + 1);
        let patient_id = if spec.lesions_per_patient == 1 {
            case_id.clone()
        } else {
            format!("P{:0width$}", i / spec.lesions_per_patient + 1)
        };
        let spitz = rng.random::<f64>() < spec.lineage_ratio;
        let (lineage, aberration, category, profile) = if spitz {
            let a = AberrationClass::ALL[categorical(&aberration_w, rng.random())];
            let cw = weights(
                &DiagnosticCategory::ALL,
                &spec.category_probs_by_aberration[&a],
            );
            let c = DiagnosticCategory::ALL[categorical(&cw, rng.random())];
            (Lineage::Spitz, Some(a), c, &spec.spitz_profile)
        } else {
            (
                Lineage::ConventionalMelanoma,
                None,
                DiagnosticCategory::Malignant,
                &spec.melanoma_profile,
            )
        };
        let clinical = sample_clinical(profile, &mut rng);
        let s = profile.slide_availability;
        let kinds: &[SlideKind] = match categorical(
            &[s.both, s.internal_only, s.consultation_only],
            rng.random(),
        ) {
            0 => &SlideKind::ALL,
            1 => &[SlideKind::Internal],
            _ => &[SlideKind::Consultation],
        };
        let bag_refs = kinds
            .iter()
            .map(|k| (*k, bag_id_for(&case_id, *k)))
            .collect();
        cases.push(LesionCase {
            case_id,
            patient_id,
            lineage,
            aberration,
            category,
            clinical,
            bag_refs,
        });
    }
    Ok(cases)
}

/// Conventional bag identifier for a case's slides of one kind.
pub fn bag_id_for(case_id: &str, kind: SlideKind) -> String {
    match kind {
        SlideKind::Internal => format!("{case_id}-INT"),
        SlideKind::Consultation => format!("{case_id}-CON"),
    }
}

fn sample_clinical<R: Rng>(profile: &LineageProfile, rng: &mut R) -> ClinicalFeatures {
    let age = &profile.age;
    let tri =
        Triangular::new(age.min, age.max, age.triangular_mode()).expect("validated age profile");
    let age = (tri.sample(rng).round() as u32).clamp(age.min as u32, age.max as u32);
    let sex = if rng.random::<f64>() < profile.male_prob {
        Sex::Male
    } else {
        Sex::Female
    };
    let lw = weights(&Location::ALL, &profile.location_probs);
    let location = Location::ALL[categorical(&lw, rng.random())];
    ClinicalFeatures { age, sex, location }
}

/// Serializes cases as JSON lines, one case per line.
pub fn to_jsonl(cases: &[LesionCase]) -> String {
    let mut out = String::new();
    for c in cases {
        out.push_str(&serde_json::to_string(c).expect("cases serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<LesionCase>, CohortError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let case: LesionCase = serde_json::from_str(l)
                .map_err(|e| invalid(&format!("line {}", i + 1), e.to_string()))?;
            case.validate()?;
            Ok(case)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub dev_fraction: f64,
    pub n_folds: usize,
    pub seed: u64,
    /// Only patients whose lesions all have both internal and consultation
    /// slides are eligible for the test set.
    #[serde(default)]
    pub test_requires_both_slide_kinds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub folds: Vec<BTreeSet<String>>,
    pub test: BTreeSet<String>,
}

impl DatasetSplit {
    /// Case ids of every fold except `fold`.
    pub fn training_ids(&self, fold: usize) -> BTreeSet<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Patient-level, class-stratified split into `n_folds` development folds and
/// a held-out test set.
pub fn split_dataset(
    cases: &[LesionCase],
    options: &SplitOptions,
) -> Result<DatasetSplit, CohortError> {
    let SplitOptions {
        dev_fraction,
        n_folds,
        seed,
        test_requires_both_slide_kinds,
    } = *options;
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(invalid("dev_fraction", "must lie in (0, 1)"));
    }
    if n_folds < 2 {
        return Err(invalid("n_folds", "need at least 2 folds"));
    }

    let mut patients: BTreeMap<&str, Vec<&LesionCase>> = BTreeMap::new();
    for c in cases {
        patients.entry(c.patient_id.as_str()).or_default().push(c);
    }
    let n_patients = patients.len();
    if n_patients < n_folds + 1 {
        return Err(CohortError::TooFewPatients {
            patients: n_patients,
            folds: n_folds,
        });
    }

    let mut strata: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for (pid, pcases) in &patients {
        let first = pcases
            .iter()
            .min_by(|a, b| a.case_id.cmp(&b.case_id))
            .expect("nonempty");
        strata.entry(first.class_key()).or_default().push(pid);
    }

    let test_total = (((1.0 - dev_fraction) * n_patients as f64).round() as usize)
        .clamp(1, n_patients - n_folds);
    let quotas = largest_remainder(
        &strata.values().map(|v| v.len()).collect::<Vec<_>>(),
        test_total,
    );

    let mut rng = rng::stream(seed);
    let mut folds = vec![BTreeSet::new(); n_folds];
    let mut test = BTreeSet::new();
    let mut next_fold = 0usize;
    for ((_, members), quota) in strata.iter_mut().zip(quotas) {
        members.shuffle(&mut rng);
        let eligible = |pid: &&str| {
            !test_requires_both_slide_kinds
                || patients[*pid].iter().all(|c| c.has_both_slide_kinds())
        };
        // Stable: eligible patients first, shuffled order preserved within.
        members.sort_by_key(|p| !eligible(p));
        let take = quota.min(members.iter().filter(|p| eligible(p)).count());
        for (i, pid) in members.iter().enumerate() {
            let ids = patients[*pid].iter().map(|c| c.case_id.clone());
            if i < take {
                test.extend(ids);
            } else {
                folds[next_fold % n_folds].extend(ids);
                next_fold += 1;
            }
        }
    }
    if test.is_empty() {
        return Err(invalid("test", "no patient is eligible for the test set"));
    }
    if folds.iter().any(|f| f.is_empty()) {
        return Err(CohortError::TooFewPatients {
            patients: n_patients,
            folds: n_folds,
        });
    }
    Ok(DatasetSplit { folds, test })
}

/// Apportions `total` across groups proportionally to `sizes` (Hamilton
/// method); ties in remainders go to the earlier group.
fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes
        .iter()
        .map(|s| *s as f64 * total as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|a, b| {
        let ra = exact[*a] - exact[*a].floor();
        let rb = exact[*b] - exact[*b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(b))
    });
    let mut left = total - quotas.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}
