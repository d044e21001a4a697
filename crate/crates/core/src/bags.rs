//! Tile feature bags: data model, the `.spzb` binary format, subsampling, and a
//! class-conditional synthetic generator that stands in for encoder output.
//!
//! File layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPZB"
//! 4       4     u32 version (= 1)
//! 8       4     u32 dim
//! 12      8     u64 n_tiles
//! 20      4*n*d f32 payload, row-major (tile by tile)
//! ```

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::SlideKind;

pub const MAGIC: [u8; 4] = *b"SPZB";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum BagError {
    #[error("bad magic {0:?}, expected \"SPZB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("bag has no tiles")]
    Empty,
    #[error("non-finite feature value at tile {tile}, column {col}")]
    NonFinite { tile: usize, col: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub bag_id: String,
    pub case_id: String,
    pub slide_kind: SlideKind,
    /// `n_tiles x dim`.
    pub vectors: Array2<f32>,
}

impl FeatureBag {
    pub fn new(
        bag_id: impl Into<String>,
        case_id: impl Into<String>,
        slide_kind: SlideKind,
        vectors: Array2<f32>,
    ) -> Result<Self, BagError> {
        validate_tiles(&vectors)?;
        Ok(FeatureBag {
            bag_id: bag_id.into(),
            case_id: case_id.into(),
            slide_kind,
            vectors,
        })
    }

    pub fn n_tiles(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_tiles(&self.vectors)
    }
}

fn validate_tiles(vectors: &Array2<f32>) -> Result<(), BagError> {
    if vectors.nrows() == 0 || vectors.ncols() == 0 {
        return Err(BagError::Empty);
    }
    for ((tile, col), v) in vectors.indexed_iter() {
        if !v.is_finite() {
            return Err(BagError::NonFinite { tile, col });
        }
    }
    Ok(())
}

/// Serializes a tile matrix in the `.spzb` layout.
pub fn encode_tiles(vectors: &Array2<f32>) -> Vec<u8> {
    let (n, d) = vectors.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in vectors.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a `.spzb` payload.
pub fn decode_tiles(bytes: &[u8]) -> Result<Array2<f32>, BagError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(BagError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(BagError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(BagError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(BagError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if n == 0 || dim == 0 {
        return Err(BagError::Empty);
    }
    let expected =
        n.checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or(BagError::TruncatedPayload {
                expected: usize::MAX,
                found: bytes.len() - HEADER_LEN,
            })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(BagError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(BagError::TrailingBytes(payload.len() - expected));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let vectors = Array2::from_shape_vec((n, dim), values).expect("length checked");
    validate_tiles(&vectors)?;
    Ok(vectors)
}

/// Parses a payload that must have a known feature dimension.
pub fn decode_tiles_with_dim(bytes: &[u8], expected_dim: usize) -> Result<Array2<f32>, BagError> {
    let vectors = decode_tiles(bytes)?;
    if vectors.ncols() != expected_dim {
        return Err(BagError::DimMismatch {
            expected: expected_dim,
            found: vectors.ncols(),
        });
    }
    Ok(vectors)
}

/// One entry of a bag manifest (bag_id -> file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub case_id: String,
    pub slide_kind: SlideKind,
    pub dim: usize,
    pub n_tiles: usize,
}

pub type BagManifest = BTreeMap<String, ManifestEntry>;

/// Keeps at most `cap` tiles, chosen uniformly without replacement. Selected
/// rows keep their original relative order.
pub fn subsample_bag<R: Rng + ?Sized>(bag: &FeatureBag, cap: usize, rng: &mut R) -> FeatureBag {
    assert!(cap >= 1, "cap must be at least 1");
    if bag.n_tiles() <= cap {
        return bag.clone();
    }
    let mut rows = index::sample(rng, bag.n_tiles(), cap).into_vec();
    rows.sort_unstable();
    FeatureBag {
        bag_id: bag.bag_id.clone(),
        case_id: bag.case_id.clone(),
        slide_kind: bag.slide_kind,
        vectors: bag.vectors.select(Axis(0), &rows),
    }
}

/// Concatenates the tiles of several bags of one case into a single bag.
pub fn pool_bags(bags: &[&FeatureBag]) -> Result<FeatureBag, BagError> {
    let first = bags.first().ok_or(BagError::Empty)?;
    let dim = first.dim();
    for b in bags {
        if b.dim() != dim {
            return Err(BagError::DimMismatch {
                expected: dim,
                found: b.dim(),
            });
        }
    }
    if bags.len() == 1 {
        return Ok((*first).clone());
    }
    let views: Vec<_> = bags.iter().map(|b| b.vectors.view()).collect();
    let vectors = ndarray::concatenate(Axis(0), &views).expect("dims checked");
    Ok(FeatureBag {
        bag_id: bags
            .iter()
            .map(|b| b.bag_id.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        case_id: first.case_id.clone(),
        slide_kind: first.slide_kind,
        vectors,
    })
}

// ---------------------------------------------------------------------------
// Synthetic bags
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagSynthSpec {
    pub dim: usize,
    /// `K x dim` class signal centroids.
    pub centroids: Vec<Vec<f32>>,
    pub signal_fraction: f64,
    pub background: Vec<f32>,
    pub sigma: f64,
    pub min_tiles: usize,
    pub max_tiles: usize,
    /// Added to every tile of consultation slides; zero vector when absent.
    #[serde(default)]
    pub consultation_shift: Option<Vec<f32>>,
    pub seed: u64,
}

impl BagSynthSpec {
    /// Class centroids on scaled coordinate axes so that every pair is exactly
    /// `separation` apart; zero background.
    pub fn orthogonal(
        n_classes: usize,
        dim: usize,
        separation: f64,
        sigma: f64,
        signal_fraction: f64,
        tiles: (usize, usize),
        seed: u64,
    ) -> Result<Self, BagError> {
        if n_classes > dim {
            return Err(BagError::InvalidSpec(format!(
                "{n_classes} orthogonal centroids need dim >= {n_classes}, got {dim}"
            )));
        }
        let scale = (separation / std::f64::consts::SQRT_2) as f32;
        let centroids = (0..n_classes)
            .map(|k| {
                let mut c = vec![0.0f32; dim];
                c[k] = scale;
                c
            })
            .collect();
        let spec = BagSynthSpec {
            dim,
            centroids,
            signal_fraction,
            background: vec![0.0; dim],
            sigma,
            min_tiles: tiles.0,
            max_tiles: tiles.1,
            consultation_shift: None,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn validate(&self) -> Result<(), BagError> {
        let bad = |m: String| Err(BagError::InvalidSpec(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.centroids.is_empty() {
            return bad("need at least one centroid".into());
        }
        if let Some(c) = self.centroids.iter().find(|c| c.len() != self.dim) {
            return bad(format!(
                "centroid of length {} for dim {}",
                c.len(),
                self.dim
            ));
        }
        if self.background.len() != self.dim {
            return bad("background length differs from dim".into());
        }
        if let Some(s) = &self.consultation_shift {
            if s.len() != self.dim {
                return bad("consultation_shift length differs from dim".into());
            }
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad("signal_fraction must lie in (0, 1]".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be a finite nonnegative number".into());
        }
        if self.min_tiles < 1 || self.min_tiles > self.max_tiles {
            return bad("need 1 <= min_tiles <= max_tiles".into());
        }
        Ok(())
    }
}

/// A generated bag plus which tiles carry the class signal.
#[derive(Debug, Clone)]
pub struct SynthBag {
    pub bag: FeatureBag,
    pub signal_mask: Vec<bool>,
}

/// Draws one bag: `round(signal_fraction * n)` tiles around the class centroid,
/// the rest around the background, isotropic Gaussian noise, shuffled order.
pub fn synth_bag<R: Rng + ?Sized>(
    spec: &BagSynthSpec,
    class_index: usize,
    bag_id: &str,
    case_id: &str,
    slide_kind: SlideKind,
    rng: &mut R,
) -> Result<SynthBag, BagError> {
    spec.validate()?;
    if class_index >= spec.n_classes() {
        return Err(BagError::InvalidSpec(format!(
            "class index {class_index} out of range for {} classes",
            spec.n_classes()
        )));
    }
    let n = rng.random_range(spec.min_tiles..=spec.max_tiles);
    let n_signal = ((spec.signal_fraction * n as f64).round() as usize).clamp(0, n);
    let mut mask: Vec<bool> = (0..n).map(|i| i < n_signal).collect();
    mask.shuffle(rng);

    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let shift = match (slide_kind, &spec.consultation_shift) {
        (SlideKind::Consultation, Some(s)) => Some(s.as_slice()),
        _ => None,
    };
    let centroid = &spec.centroids[class_index];
    let mut vectors = Array2::<f32>::zeros((n, spec.dim));
    for (mut row, &signal) in vectors.rows_mut().into_iter().zip(&mask) {
        let base = if signal { centroid } else { &spec.background };
        for (j, v) in row.iter_mut().enumerate() {
            let mut x = base[j] as f64;
            if spec.sigma > 0.0 {
                x += noise.sample(rng);
            }
            if let Some(s) = shift {
                x += s[j] as f64;
            }
            *v = x as f32;
        }
    }
    Ok(SynthBag {
        bag: FeatureBag::new(bag_id, case_id, slide_kind, vectors)?,
        signal_mask: mask,
    })
}
