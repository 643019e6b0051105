//! Classical, non-learned diffusion on point clouds.
//!
//! The stepper here is the explicit Euler scheme for Fick's law with a
//! handcrafted diffusivity `g`. It serves as a reference for the learned
//! diffusion unit and hosts the edge experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use crate::layers::{edge_response, EdgeResponse};

/// Scalar diffusivity as a function of the difference magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiffusivityFn {
    /// `g(s) = w` everywhere. `w = 1` gives the heat equation.
    Constant(f64),
    /// `g(s) = 1 / (1 + s^2 / lambda^2)`.
    PeronaMalik { lambda: f64 },
}

impl DiffusivityFn {
    pub fn perona_malik(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Argument(format!("contrast parameter must be positive, got {lambda}")));
        }
        Ok(DiffusivityFn::PeronaMalik { lambda })
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            DiffusivityFn::Constant(w) => w,
            DiffusivityFn::PeronaMalik { lambda } => 1.0 / (1.0 + (s * s) / (lambda * lambda)),
        }
    }

    /// Upper bound of `g` over all magnitudes.
    pub fn max_value(&self) -> f64 {
        match *self {
            DiffusivityFn::Constant(w) => w,
            DiffusivityFn::PeronaMalik { .. } => 1.0,
        }
    }
}

/// One explicit step:
/// `u_s + tau * (1/|N_s|) * sum_n g(|u_n - u_s|) * (u_n - u_s)`.
///
/// Neighborhood `s` of `nbrs` belongs to point `s`; features are read from
/// `cloud.features`.
pub fn classic_diffusion_step(
    cloud: &PointCloud,
    nbrs: &NeighborIndex,
    g: DiffusivityFn,
    tau: f64,
) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Argument(format!("step size must be positive, got {tau}")));
    }
    if let DiffusivityFn::PeronaMalik { lambda } = g {
        if lambda <= 0.0 {
            return Err(Error::Argument(format!("contrast parameter must be positive, got {lambda}")));
        }
    }
    let product = tau * g.max_value();
    if product > 1.0 {
        return Err(Error::Stability { product });
    }
    if nbrs.len() != cloud.len() {
        return Err(Error::dim("diffusion step", &[cloud.len()], &[nbrs.len()]));
    }
    nbrs.validate(cloud.len())?;
    Ok(step_features(&cloud.features, cloud.feature_dim, nbrs, g, tau))
}

fn step_features(u: &[f64], d: usize, nbrs: &NeighborIndex, g: DiffusivityFn, tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len());
    let mut acc = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for s in 0..nbrs.len() {
        let us = &u[s * d..(s + 1) * d];
        acc.iter_mut().for_each(|a| *a = 0.0);
        let list = nbrs.neighbors(s);
        for &n in list {
            let un = &u[n * d..(n + 1) * d];
            for c in 0..d {
                diff[c] = un[c] - us[c];
            }
            let w = g.eval(diff.iter().map(|x| x * x).sum::<f64>().sqrt());
            for c in 0..d {
                acc[c] += w * diff[c];
            }
        }
        let count = list.len() as f64;
        for c in 0..d {
            out.push(us[c] + tau * (acc[c] / count));
        }
    }
    out
}

/// Result of repeated stepping.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionRun {
    pub steps: usize,
    pub tau: f64,
    /// Feature snapshots at steps `0..=steps`, if requested.
    pub snapshots: Option<Vec<Vec<f64>>>,
    /// `|mean(region 0) - mean(region 1)|` per step, for two-region clouds.
    pub region_gap: Option<Vec<f64>>,
    pub features: Vec<f64>,
}

impl DiffusionRun {
    pub fn simulate(
        cloud: &PointCloud,
        nbrs: &NeighborIndex,
        g: DiffusivityFn,
        tau: f64,
        steps: usize,
        keep_snapshots: bool,
    ) -> Result<Self> {
        let mut current = cloud.clone();
        let regions = cloud.labels.as_deref().map(two_regions).transpose()?;
        let gap = |f: &[f64]| regions.as_ref().map(|r| region_gap(f, cloud.feature_dim, r));
        let mut snapshots = keep_snapshots.then(|| vec![cloud.features.clone()]);
        let mut gaps = gap(&cloud.features).map(|g0| vec![g0]);
        for _ in 0..steps {
            current.features = classic_diffusion_step(&current, nbrs, g, tau)?;
            if let Some(s) = snapshots.as_mut() {
                s.push(current.features.clone());
            }
            if let (Some(series), Some(v)) = (gaps.as_mut(), gap(&current.features)) {
                series.push(v);
            }
        }
        Ok(DiffusionRun {
            steps,
            tau,
            snapshots,
            region_gap: gaps,
            features: current.features,
        })
    }
}

fn two_regions(labels: &[usize]) -> Result<[Vec<usize>; 2]> {
    let mut r = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        match l {
            0 | 1 => r[l].push(i),
            _ => return Err(Error::Argument(format!("two-region labels must be 0 or 1, got {l}"))),
        }
    }
    if r[0].is_empty() || r[1].is_empty() {
        return Err(Error::Argument("both regions need at least one point".into()));
    }
    Ok(r)
}

fn region_gap(features: &[f64], d: usize, regions: &[Vec<usize>; 2]) -> f64 {
    let mean = |idx: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for &i in idx {
            for c in 0..d {
                m[c] += features[i * d + c];
            }
        }
        m.iter().map(|v| v / idx.len() as f64).collect()
    };
    let (a, b) = (mean(&regions[0]), mean(&regions[1]));
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `(step, gap_t / gap_0)` for a run over a labeled two-region cloud.
pub fn contrast_ratio(run: &DiffusionRun) -> Result<Vec<(usize, f64)>> {
    let gaps = run
        .region_gap
        .as_ref()
        .ok_or_else(|| Error::Argument("contrast ratio needs a labeled two-region cloud".into()))?;
    let g0 = gaps[0];
    if g0 == 0.0 {
        return Err(Error::Argument("regions start with identical means".into()));
    }
    Ok(gaps.iter().enumerate().map(|(t, g)| (t, g / g0)).collect())
}

/// `n` samples of `tanh(a x)` on `x in [-1, 1]`, laid out along the x axis.
pub fn step_edge_profile(n: usize, sharpness: f64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::Argument(format!("step edge needs at least 8 samples, got {n}")));
    }
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let positions = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
    let features = xs.iter().map(|&x| (sharpness * x).tanh()).collect();
    PointCloud::new("step-edge", positions, features, 1, None)
}

/// One linear diffusion step on a step edge for each weight.
pub fn edge_sign_experiment(n: usize, sharpness: f64, weights: &[f64]) -> Result<Vec<EdgeResponse>> {
    let profile = step_edge_profile(n, sharpness)?;
    weights.iter().map(|&w| edge_response(&profile, w)).collect()
}

/// Uniform points in `[-1,1] x [-0.5,0.5]^2`. Points with `x >= 0` form
/// region 1 with feature `contrast`; the rest form region 0 with feature 0.
pub fn two_region_cloud(n: usize, contrast: f64, seed: u64) -> Result<PointCloud> {
    if n < 2 {
        return Err(Error::Argument(format!("two-region cloud needs at least 2 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // alternate sides so both regions are always populated
        let side = i % 2;
        let x: f64 = rng.random_range(0.0..1.0);
        let x = if side == 1 { x } else { -x - f64::EPSILON };
        positions.push([x, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
        labels.push(side);
    }
    let features = labels.iter().map(|&l| l as f64 * contrast).collect();
    PointCloud::new("two-region", positions, features, 1, Some(labels))
}
