use crate::error::{Error, Result};
use crate::geometry::{
    farthest_point_sample, interpolation_weights, knn, knn_excluding_self, NeighborIndex, PointCloud,
};
use crate::layers::relative_offsets;
use crate::par;
use crate::tensor::Tensor;

use super::config::{ModelConfig, Task, STAGES};

/// Number of points kept when downsampling `n` points by `ratio`.
pub fn sample_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).round() as usize).clamp(1, n)
}

/// Neighborhoods of one cloud at every resolution level.
///
/// Level 0 is the input; level `i + 1` holds the points kept by stage `i`.
#[derive(Clone, Debug)]
pub struct CloudGeometry {
    pub levels: Vec<Vec<[f64; 3]>>,
    /// Stage `i`: level `i + 1` centers over level `i` sources.
    pub conv: Vec<NeighborIndex>,
    pub conv_offsets: Vec<Vec<[f64; 3]>>,
    /// Per level, each point's neighbors within that level.
    pub du: Vec<Option<NeighborIndex>>,
    /// Entry `i`: level `i` queries interpolated from level `i + 1`.
    pub interp: Vec<(NeighborIndex, Vec<f64>)>,
}

impl CloudGeometry {
    pub fn build(positions: &[[f64; 3]], cfg: &ModelConfig) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Argument("cannot run a model on an empty cloud".into()));
        }
        let seg = cfg.task == Task::Segmentation;
        let mut levels = vec![positions.to_vec()];
        let mut conv = Vec::with_capacity(STAGES);
        let mut conv_offsets = Vec::with_capacity(STAGES);
        let mut du = vec![if seg {
            Some(knn_excluding_self(positions, cfg.k)?)
        } else {
            None
        }];
        let mut interp = Vec::new();
        for stage in 0..STAGES {
            let src = &levels[stage];
            let keep = farthest_point_sample(src, sample_count(src.len(), cfg.ratios[stage]))?;
            let centers: Vec<[f64; 3]> = keep.iter().map(|&i| src[i]).collect();
            let nbrs = knn(&centers, src, cfg.k.min(src.len()))?;
            conv_offsets.push(relative_offsets(src, &centers, &nbrs)?);
            conv.push(nbrs);
            du.push(Some(knn_excluding_self(&centers, cfg.k)?));
            if seg {
                interp.push(interpolation_weights(src, &centers, 3.min(centers.len()))?);
            }
            levels.push(centers);
        }
        Ok(CloudGeometry {
            levels,
            conv,
            conv_offsets,
            du,
            interp,
        })
    }
}

/// Several clouds stacked row-wise with batch-level neighbor indices.
#[derive(Clone, Debug)]
pub struct Batch {
    pub clouds: Vec<CloudGeometry>,
    /// Stacked input features `[sum N, input_dim]`.
    pub features: Tensor,
    /// Per level, cumulative point counts (`clouds + 1` entries).
    pub level_offsets: Vec<Vec<usize>>,
    pub conv: Vec<NeighborIndex>,
    pub conv_offsets: Vec<Vec<[f64; 3]>>,
    pub du: Vec<Option<NeighborIndex>>,
    pub interp: Vec<(NeighborIndex, Vec<f64>)>,
}

impl Batch {
    pub fn new(clouds: &[&PointCloud], cfg: &ModelConfig) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        for c in clouds {
            if c.feature_dim != cfg.input_dim {
                return Err(Error::dim("model input", &[c.len(), c.feature_dim], &[c.len(), cfg.input_dim]));
            }
        }
        let geoms = par::map(clouds.len(), |i| CloudGeometry::build(&clouds[i].positions, cfg))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut features = Vec::new();
        for c in clouds {
            features.extend_from_slice(&c.features);
        }
        let rows = features.len() / cfg.input_dim;
        let features = Tensor::new(vec![rows, cfg.input_dim], features)?;
        Ok(Self::stack(geoms, features))
    }

    fn stack(clouds: Vec<CloudGeometry>, features: Tensor) -> Self {
        let n_levels = STAGES + 1;
        let level_offsets: Vec<Vec<usize>> = (0..n_levels)
            .map(|l| {
                let mut o = vec![0];
                for c in &clouds {
                    o.push(o.last().copied().unwrap_or(0) + c.levels[l].len());
                }
                o
            })
            .collect();
        let conv = (0..STAGES)
            .map(|s| {
                let parts: Vec<NeighborIndex> = clouds
                    .iter()
                    .enumerate()
                    .map(|(b, c)| c.conv[s].shifted(level_offsets[s][b], level_offsets[s + 1][b]))
                    .collect();
                NeighborIndex::concat(&parts)
            })
            .collect();
        let conv_offsets = (0..STAGES)
            .map(|s| clouds.iter().flat_map(|c| c.conv_offsets[s].iter().copied()).collect())
            .collect();
        let du = (0..n_levels)
            .map(|l| {
                let parts: Option<Vec<NeighborIndex>> = clouds
                    .iter()
                    .enumerate()
                    .map(|(b, c)| {
                        c.du[l]
                            .as_ref()
                            .map(|n| n.shifted(level_offsets[l][b], level_offsets[l][b]))
                    })
                    .collect();
                parts.map(|p| NeighborIndex::concat(&p))
            })
            .collect();
        let has_interp = clouds.iter().all(|c| c.interp.len() == STAGES);
        let interp = if has_interp {
            (0..STAGES)
                .map(|s| {
                    let mut parts = Vec::with_capacity(clouds.len());
                    let mut weights = Vec::new();
                    for (b, c) in clouds.iter().enumerate() {
                        let (n, w) = &c.interp[s];
                        parts.push(n.shifted(level_offsets[s + 1][b], level_offsets[s][b]));
                        weights.extend_from_slice(w);
                    }
                    (NeighborIndex::concat(&parts), weights)
                })
                .collect()
        } else {
            Vec::new()
        };
        Batch {
            clouds,
            features,
            level_offsets,
            conv,
            conv_offsets,
            du,
            interp,
        }
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Cumulative input point counts.
    pub fn point_offsets(&self) -> &[usize] {
        &self.level_offsets[0]
    }
}
