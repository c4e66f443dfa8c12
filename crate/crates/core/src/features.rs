//! Precomputed image representations and a deterministic fixture generator.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Seeded;
use crate::tensor::Tensor;

/// Tolerance on unit norm for vectors stored at 32-bit precision.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVariant {
    /// One L2-normalized penultimate-layer vector (nominally 4096 wide).
    Global,
    /// 7×7 convolutional grid flattened to 49 vectors (nominally 512 wide).
    Grid,
    /// 36 L2-normalized region vectors (nominally 2048 wide).
    Regions,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 3] = [FeatureVariant::Global, FeatureVariant::Grid, FeatureVariant::Regions];

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Global => "global",
            FeatureVariant::Grid => "grid",
            FeatureVariant::Regions => "regions",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" | "GLOBAL_4096" => Some(FeatureVariant::Global),
            "grid" | "GRID_49x512" => Some(FeatureVariant::Grid),
            "regions" | "REGIONS_36x2048" => Some(FeatureVariant::Regions),
            _ => None,
        }
    }

    /// Number of vectors per image; `None` for the single global vector.
    pub fn count(self) -> Option<usize> {
        match self {
            FeatureVariant::Global => None,
            FeatureVariant::Grid => Some(49),
            FeatureVariant::Regions => Some(36),
        }
    }

    pub fn nominal_width(self) -> usize {
        match self {
            FeatureVariant::Global => 4096,
            FeatureVariant::Grid => 512,
            FeatureVariant::Regions => 2048,
        }
    }

    pub fn unit_norm(self) -> bool {
        !matches!(self, FeatureVariant::Grid)
    }

    pub fn shape(self, width: usize) -> Vec<usize> {
        match self.count() {
            None => alloc::vec![width],
            Some(n) => alloc::vec![n, width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeature {
    pub image_id: String,
    pub variant: FeatureVariant,
    pub data: Tensor,
}

impl ImageFeature {
    pub fn new(image_id: impl Into<String>, variant: FeatureVariant, data: Tensor) -> Result<Self> {
        let f = ImageFeature {
            image_id: image_id.into(),
            variant,
            data,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }

    /// Checks vector count and, for normalized variants, unit row norms.
    pub fn validate(&self) -> Result<()> {
        let shape = self.data.shape();
        let ok_shape = match self.variant.count() {
            None => shape.len() == 1,
            Some(n) => shape.len() == 2 && shape[0] == n,
        };
        if !ok_shape {
            return Err(Error::Invalid(alloc::format!(
                "{}: {} feature must have shape {:?}, got {:?}",
                self.image_id,
                self.variant.name(),
                self.variant.shape(self.data.cols()),
                shape
            )));
        }
        if !self.data.is_finite() {
            return Err(Error::NonFinite(self.image_id.clone()));
        }
        if self.variant.unit_norm() {
            for r in 0..self.data.rows() {
                let n = libm::sqrt(crate::tensor::dot(self.data.row(r), self.data.row(r)));
                if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::Invalid(alloc::format!(
                        "{}: row {r} has norm {n}, expected unit norm",
                        self.image_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn expect_variant(&self, variant: FeatureVariant) -> Result<()> {
        if self.variant != variant {
            return Err(Error::Variant {
                expected: variant.name(),
                found: self.variant.name(),
            });
        }
        Ok(())
    }

    /// Vector `i` (rows for grid/regions, the whole vector for global).
    pub fn vector(&self, i: usize) -> &[f64] {
        match self.variant.count() {
            None => self.data.data(),
            Some(_) => self.data.row(i),
        }
    }
}

/// Read access to image features by id.
pub trait ImageLookup {
    fn feature(&self, image_id: &str) -> Option<&ImageFeature>;
}

impl ImageLookup for BTreeMap<String, ImageFeature> {
    fn feature(&self, image_id: &str) -> Option<&ImageFeature> {
        self.get(image_id)
    }
}

/// A lookup with no images, for blind models.
pub struct NoImages;

impl ImageLookup for NoImages {
    fn feature(&self, _: &str) -> Option<&ImageFeature> {
        None
    }
}

/// Deterministic pseudo-random features, rounded to 32-bit precision.
pub fn synth_features<S: AsRef<str>>(
    seed: u64,
    ids: &[S],
    variant: FeatureVariant,
    width: usize,
) -> Result<BTreeMap<String, ImageFeature>> {
    if width == 0 {
        return Err(Error::Invalid("feature width must be positive".into()));
    }
    let mut out = BTreeMap::new();
    for id in ids {
        let id = id.as_ref();
        let mut rng = Seeded::derived(seed, id);
        let rows = variant.count().unwrap_or(1);
        let mut data = Vec::with_capacity(rows * width);
        for _ in 0..rows {
            let mut row: Vec<f64> = (0..width).map(|_| rng.uniform(-1.0, 1.0)).collect();
            if variant.unit_norm() {
                let n = libm::sqrt(crate::tensor::dot(&row, &row));
                for x in &mut row {
                    *x /= n;
                }
            }
            data.extend(row.into_iter().map(|x| x as f32 as f64));
        }
        let t = Tensor::new(variant.shape(width), data)?;
        out.insert(String::from(id), ImageFeature::new(id, variant, t)?);
    }
    Ok(out)
}
