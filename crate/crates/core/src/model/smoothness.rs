use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use crate::params::{Ctx, Phase};
use crate::tensor::{Graph, Tensor};

use super::{Batch, Model};

/// `|| sum_{n in N(s)} (f_n - f_s) ||_2` for every point `s`.
pub fn smoothness(features: &Tensor, nbrs: &NeighborIndex) -> Result<Vec<f64>> {
    let (rows, d) = features.expect_2d("smoothness")?;
    if nbrs.len() != rows {
        return Err(Error::dim("smoothness", &[rows], &[nbrs.len()]));
    }
    nbrs.validate(rows)?;
    let f = features.data();
    let mut acc = vec![0.0; d];
    Ok((0..rows)
        .map(|s| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let fs = &f[s * d..(s + 1) * d];
            for &n in nbrs.neighbors(s) {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += f[n * d + c] - fs[c];
                }
            }
            acc.iter().map(|a| a * a).sum::<f64>().sqrt()
        })
        .collect())
}

/// Per-point smoothness of the features entering and leaving one diffusion unit.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessReport {
    pub path: String,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    /// Point labels, available when the unit runs at input resolution.
    pub labels: Option<Vec<usize>>,
    pub boundary: Option<Vec<bool>>,
}

impl SmoothnessReport {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_boundary(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::dim("boundary mask", &[self.len()], &[mask.len()]));
        }
        self.boundary = Some(mask);
        Ok(self)
    }

    /// Mean over boundary points divided by mean over interior points.
    pub fn boundary_ratio(&self, values: &[f64]) -> Result<f64> {
        let mask = self
            .boundary
            .as_ref()
            .ok_or_else(|| Error::Argument("smoothness ratio needs a boundary mask".into()))?;
        let mean = |want: bool| {
            let v: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m == want).map(|(v, _)| *v).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        match (mean(true), mean(false)) {
            (Some(b), Some(i)) if i > 0.0 => Ok(b / i),
            _ => Err(Error::Argument(
                "smoothness ratio needs boundary and interior points with non-zero interior mean".into(),
            )),
        }
    }

    /// `(ratio before, ratio after)`.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        Ok((self.boundary_ratio(&self.before)?, self.boundary_ratio(&self.after)?))
    }
}

/// Runs `cloud` through `model` in eval mode and measures smoothness around
/// the diffusion unit at `path`, using that unit's own neighborhoods.
pub fn smoothness_probe(model: &Model, cloud: &PointCloud, path: &str) -> Result<SmoothnessReport> {
    let level = model.du_level(path).ok_or_else(|| Error::Lookup {
        path: path.to_string(),
        valid: model.du_paths(),
    })?;
    let batch = Batch::new(&[cloud], &model.config)?;
    let graph = Graph::new();
    let ctx = Ctx::new(&graph, &model.store, Phase::Eval).with_taps();
    model.forward(&ctx, &batch)?;
    let mut taps = ctx.take_taps();
    let tap = taps
        .remove(path)
        .ok_or_else(|| Error::Contract(format!("diffusion unit `{path}` did not run")))?;
    Ok(SmoothnessReport {
        path: path.to_string(),
        before: smoothness(&tap.input, &tap.neighbors)?,
        after: smoothness(&tap.output, &tap.neighbors)?,
        positions: batch.clouds[0].levels[level].clone(),
        labels: if level == 0 { cloud.labels.clone() } else { None },
        boundary: None,
    })
}
