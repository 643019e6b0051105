use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    None,
    /// Uniform angle about the z axis.
    Z,
    /// Uniform over SO(3).
    Full,
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rotation::None => "none",
            Rotation::Z => "z",
            Rotation::Full => "full",
        })
    }
}

impl FromStr for Rotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rotation::None),
            "z" | "z-axis" => Ok(Rotation::Z),
            "full" => Ok(Rotation::Full),
            other => Err(Error::Argument(format!("unknown rotation mode `{other}`"))),
        }
    }
}

/// Random rigid/scaling perturbation applied to a cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub rotation: Rotation,
    pub scale: (f64, f64),
    /// Draw one scale factor per axis instead of a shared one.
    pub anisotropic: bool,
    /// Per-axis translation drawn from `[-t, t]`.
    pub translation: f64,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub jitter: f64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec {
            rotation: Rotation::None,
            scale: (1.0, 1.0),
            anisotropic: false,
            translation: 0.0,
            jitter: 0.0,
        }
    }

    /// Random z rotation, isotropic scaling and translation.
    pub fn classification() -> Self {
        AugmentSpec {
            rotation: Rotation::Z,
            scale: (0.8, 1.2),
            anisotropic: false,
            translation: 0.1,
            jitter: 0.005,
        }
    }

    /// Random anisotropic scaling and translation.
    pub fn segmentation() -> Self {
        AugmentSpec {
            rotation: Rotation::None,
            scale: (0.8, 1.2),
            anisotropic: true,
            translation: 0.1,
            jitter: 0.0,
        }
    }

    /// The scaling part of `self` alone.
    pub fn scales_only(&self) -> Self {
        AugmentSpec {
            scale: self.scale,
            anisotropic: self.anisotropic,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Argument(format!("scale range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        if !(self.translation >= 0.0 && self.translation.is_finite()) {
            return Err(Error::Argument(format!("translation must be >= 0, got {}", self.translation)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Argument(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

type Mat3 = [[f64; 3]; 3];

fn apply(m: &Mat3, p: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2])
}

fn rotation_matrix(mode: Rotation, rng: &mut ChaCha8Rng) -> Option<Mat3> {
    match mode {
        Rotation::None => None,
        Rotation::Z => {
            let (s, c) = rng.random_range(0.0..TAU).sin_cos();
            Some([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        }
        Rotation::Full => {
            // normalized Gaussian quaternion is uniform on SO(3)
            let mut q: [f64; 4] = [0.0; 4];
            let mut n = 0.0;
            while n < 1e-12 {
                q = [0; 4].map(|_| StandardNormal.sample(rng));
                n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            let [w, x, y, z] = q.map(|v| v / n);
            Some([
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
                [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
                [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
            ])
        }
    }
}

/// Rotation, then scaling, translation and jitter. Labels and point count
/// are untouched; features that mirror the coordinates follow them.
pub fn augment(cloud: &PointCloud, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    spec.validate()?;
    let mirrors = cloud.feature_dim == 3
        && cloud.features.iter().zip(cloud.positions.iter().flatten()).all(|(a, b)| a == b);
    let rot = rotation_matrix(spec.rotation, rng);
    let (lo, hi) = spec.scale;
    let mut draw_scale = || if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let scale = if spec.anisotropic {
        [draw_scale(), draw_scale(), draw_scale()]
    } else {
        [draw_scale(); 3]
    };
    let t = spec.translation;
    let shift = [0; 3].map(|_| if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 });
    let mut out = cloud.clone();
    for p in out.positions.iter_mut() {
        let mut q = rot.as_ref().map_or(*p, |m| apply(m, p));
        for a in 0..3 {
            q[a] = q[a] * scale[a] + shift[a];
            if spec.jitter > 0.0 {
                let g: f64 = StandardNormal.sample(rng);
                q[a] += spec.jitter * g;
            }
        }
        *p = q;
    }
    if mirrors {
        out.features = out.positions.iter().flatten().copied().collect();
    }
    Ok(out)
}
