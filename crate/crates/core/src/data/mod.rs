//! Synthetic labeled point clouds, the `.duc` text format and augmentation.

mod augment;
mod duc;
mod shapes;

pub use augment::{augment, AugmentSpec, Rotation};
pub use duc::{read_cloud, read_dataset, write_cloud, write_dataset};
pub use shapes::{PRIMITIVES, SPHERE_RADIUS};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion_lab::two_region_cloud;
use crate::error::{Error, Result};
use crate::geometry::{knn_excluding_self, PointCloud};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Five primitive surfaces, one class each.
    ClsPrimitives,
    /// Two-part composite shapes with per-point part labels.
    SegComposites,
    /// Two labeled regions with a scalar feature jump, for diffusion runs.
    TwoRegion,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::ClsPrimitives => "cls-primitives",
            Family::SegComposites => "seg-composites",
            Family::TwoRegion => "two-region",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls-primitives" => Ok(Family::ClsPrimitives),
            "seg-composites" => Ok(Family::SegComposites),
            "two-region" => Ok(Family::TwoRegion),
            other => Err(Error::Argument(format!(
                "unknown family `{other}` (expected cls-primitives, seg-composites or two-region)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub family: Family,
    pub points: usize,
    /// Clouds per class (classification) or total clouds (other families).
    pub per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub const MIN_POINTS: usize = 64;

    pub fn validate(&self) -> Result<()> {
        if self.points < Self::MIN_POINTS {
            return Err(Error::Argument(format!(
                "clouds need at least {} points, got {}",
                Self::MIN_POINTS,
                self.points
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Argument(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.per_class == 0 {
            return Err(Error::Argument("need at least one cloud per class".into()));
        }
        Ok(())
    }

    pub fn cloud_count(&self) -> usize {
        match self.family {
            Family::ClsPrimitives => PRIMITIVES.len() * self.per_class,
            _ => self.per_class,
        }
    }
}

/// A generated cloud with its analytic part-boundary mask, when it has one.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub boundary: Option<Vec<bool>>,
}

/// Boundary band half-width relative to the bounding-box diagonal.
pub const BOUNDARY_BAND: f64 = 0.05;

/// Generates the dataset; cloud `i` draws from its own stream of `seed`.
pub fn generate_samples(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    par::map(spec.cloud_count(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        match spec.family {
            Family::ClsPrimitives => {
                let class = i / spec.per_class;
                let name = format!("{}-{:04}", PRIMITIVES[class], i % spec.per_class);
                let pts = shapes::primitive(class, spec.points, spec.noise, &mut rng);
                let cloud = PointCloud::from_positions(name, pts)?.with_labels(vec![class; spec.points])?;
                Ok(Sample { cloud, boundary: None })
            }
            Family::SegComposites => {
                let c = shapes::composite(spec.points, spec.noise, &mut rng);
                let cloud = PointCloud::from_positions(format!("composite-{i:04}"), c.positions)?
                    .with_labels(c.labels)?;
                let band = BOUNDARY_BAND * cloud.bbox_diagonal();
                let boundary = c.interface_distance.iter().map(|d| *d <= band).collect();
                Ok(Sample {
                    cloud,
                    boundary: Some(boundary),
                })
            }
            Family::TwoRegion => {
                let mut cloud = two_region_cloud(spec.points, 1.0, rand::Rng::random(&mut rng))?;
                cloud.name = format!("two-region-{i:04}");
                Ok(Sample { cloud, boundary: None })
            }
        }
    })
    .into_iter()
    .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<PointCloud>> {
    Ok(generate_samples(spec)?.into_iter().map(|s| s.cloud).collect())
}

/// Points with at least one differently labeled neighbor among their `k`
/// nearest. A stand-in boundary when no analytic one is known.
pub fn label_boundary_mask(cloud: &PointCloud, k: usize) -> Result<Vec<bool>> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::Argument("label boundary needs a labeled cloud".into()))?;
    let nbrs = knn_excluding_self(&cloud.positions, k)?;
    Ok((0..cloud.len())
        .map(|s| nbrs.neighbors(s).iter().any(|&n| labels[n] != labels[s]))
        .collect())
}

/// Order-sensitive FNV-1a digest of every value in the clouds.
pub fn checksum(clouds: &[PointCloud]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for c in clouds {
        c.positions.iter().flatten().for_each(|v| eat(v.to_bits()));
        c.features.iter().for_each(|v| eat(v.to_bits()));
        c.labels.iter().flatten().for_each(|&l| eat(l as u64));
    }
    h
}
