//! Point clouds and deterministic spatial queries.
//!
//! Every query orders candidates by `(distance, index)`, so results are a
//! pure function of the coordinates and never depend on thread scheduling.

mod kdtree;
pub mod reference;

pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Default neighborhood size of a diffusion unit.
pub const DEFAULT_K: usize = 16;
/// Maximum neighbors kept by a radius query feeding a kernel-point convolution.
pub const RADIUS_CAP: usize = 32;
/// Regularizer in the inverse-square interpolation weights.
pub const INTERP_EPS: f64 = 1e-10;

/// Positions with per-point feature rows and optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub name: String,
    pub positions: Vec<[f64; 3]>,
    /// Row-major `len() x feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(
        name: impl Into<String>,
        positions: Vec<[f64; 3]>,
        features: Vec<f64>,
        feature_dim: usize,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("point positions must be finite".into()));
        }
        if features.len() != positions.len() * feature_dim {
            return Err(Error::dim(
                "point cloud features",
                &[positions.len(), feature_dim],
                &[features.len()],
            ));
        }
        if let Some(l) = &labels {
            if l.len() != positions.len() {
                return Err(Error::dim("point cloud labels", &[positions.len()], &[l.len()]));
            }
        }
        Ok(PointCloud {
            name: name.into(),
            positions,
            features,
            feature_dim,
            labels,
        })
    }

    /// Cloud whose features are its own coordinates.
    pub fn from_positions(name: impl Into<String>, positions: Vec<[f64; 3]>) -> Result<Self> {
        let features = positions.iter().flatten().copied().collect();
        Self::new(name, positions, features, 3, None)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::dim("point cloud labels", &[self.len()], &[labels.len()]));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn features_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.feature_dim], self.features.clone())
            .expect("validated at construction")
    }

    /// Replaces the features with the current coordinates.
    pub fn coordinates_as_features(mut self) -> Self {
        self.features = self.positions.iter().flatten().copied().collect();
        self.feature_dim = 3;
        self
    }

    /// Reorders points so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.feature_dim;
        PointCloud {
            name: self.name.clone(),
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            features: perm
                .iter()
                .flat_map(|&i| self.features[i * d..(i + 1) * d].iter().copied())
                .collect(),
            feature_dim: d,
            labels: self
                .labels
                .as_ref()
                .map(|l| perm.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.positions)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
    }
}

pub fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.map(|v| v / n)
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    kdtree::dist2(a, b).sqrt()
}

/// Compressed per-center neighbor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    /// `len() + 1` monotone offsets into `indices`.
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    /// Euclidean distance of each entry of `indices` to its center.
    pub distances: Vec<f64>,
    /// Source-cloud id of each center (or query ordinal for free queries).
    pub centers: Vec<usize>,
}

impl NeighborIndex {
    /// Builds from per-query lists of `(squared distance, index)`.
    pub fn from_sorted_lists(lists: Vec<Vec<(f64, usize)>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total: usize = lists.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(total);
        let mut distances = Vec::with_capacity(total);
        for l in &lists {
            for &(d2, i) in l {
                indices.push(i);
                distances.push(d2.sqrt());
            }
            offsets.push(indices.len());
        }
        NeighborIndex {
            offsets,
            indices,
            distances,
            centers: (0..lists.len()).collect(),
        }
    }

    /// Builds from plain neighbor lists (distances set to zero).
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for l in lists {
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        let distances = vec![0.0; indices.len()];
        NeighborIndex {
            offsets,
            indices,
            distances,
            centers: (0..lists.len()).collect(),
        }
    }

    pub fn with_centers(mut self, centers: Vec<usize>) -> Result<Self> {
        if centers.len() != self.len() {
            return Err(Error::dim("neighbor centers", &[self.len()], &[centers.len()]));
        }
        self.centers = centers;
        Ok(self)
    }

    /// Number of centers.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.indices[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn neighbors_with_distances(&self, s: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[s]..self.offsets[s + 1];
        (&self.indices[r.clone()], &self.distances[r])
    }

    /// For every flat entry, the center slot it belongs to.
    pub fn center_slots(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for s in 0..self.len() {
            out.extend(std::iter::repeat_n(s, self.offsets[s + 1] - self.offsets[s]));
        }
        out
    }

    /// Checks the structural invariants against a source of `source_len` points.
    pub fn validate(&self, source_len: usize) -> Result<()> {
        if self.offsets.first() != Some(&0) || self.offsets.last() != Some(&self.indices.len()) {
            return Err(Error::Contract("neighbor offsets must span all indices".into()));
        }
        for (s, w) in self.offsets.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::DegenerateNeighborhood { segment: s });
            }
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= source_len) {
            return Err(Error::Index {
                op: "neighbor index",
                index: bad,
                len: source_len,
            });
        }
        Ok(())
    }

    /// Keeps `n` in the list of `s` only if `s` is also in the list of `n`.
    /// Requires the index to be built over a cloud against itself.
    pub fn mutual(&self) -> Result<Self> {
        let lists: Vec<Vec<usize>> = (0..self.len())
            .map(|s| {
                self.neighbors(s)
                    .iter()
                    .copied()
                    .filter(|&n| n != s && self.neighbors(n).contains(&s))
                    .collect()
            })
            .collect();
        let out = Self::from_lists(&lists);
        out.validate(self.len())?;
        Ok(out)
    }

    /// Shifts every index and center by `offset` (used to batch clouds).
    pub fn shifted(&self, index_offset: usize, center_offset: usize) -> Self {
        NeighborIndex {
            offsets: self.offsets.clone(),
            indices: self.indices.iter().map(|i| i + index_offset).collect(),
            distances: self.distances.clone(),
            centers: self.centers.iter().map(|c| c + center_offset).collect(),
        }
    }

    /// Concatenates several indices into one batch-level index.
    pub fn concat(parts: &[NeighborIndex]) -> Self {
        let mut out = NeighborIndex {
            offsets: vec![0],
            indices: Vec::new(),
            distances: Vec::new(),
            centers: Vec::new(),
        };
        for p in parts {
            let base = out.indices.len();
            out.offsets.extend(p.offsets[1..].iter().map(|o| o + base));
            out.indices.extend_from_slice(&p.indices);
            out.distances.extend_from_slice(&p.distances);
            out.centers.extend_from_slice(&p.centers);
        }
        out
    }
}

/// Greedy max-min subset of `k` points.
///
/// The seed is the point farthest from the centroid; each further pick
/// maximizes the distance to the already selected set. Ties go to the lowest
/// index. Indices are returned in selection order.
pub fn farthest_point_sample(points: &[[f64; 3]], k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cannot sample {k} of {n} points")));
    }
    let c = centroid(points);
    let mut seed = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = kdtree::dist2(p, &c);
        if d > best {
            best = d;
            seed = i;
        }
    }
    let mut selected = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(k);
    let mut cur = seed;
    loop {
        out.push(cur);
        selected[cur] = true;
        if out.len() == k {
            break;
        }
        let pc = points[cur];
        let mut next = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = kdtree::dist2(&points[i], &pc);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > far {
                far = min_d[i];
                next = i;
            }
        }
        cur = next;
    }
    Ok(out)
}

/// The `k` nearest sources of each query, sorted by distance then index.
pub fn knn(query: &[[f64; 3]], source: &[[f64; 3]], k: usize) -> Result<NeighborIndex> {
    if k == 0 || k > source.len() {
        return Err(Error::Argument(format!(
            "knn needs 1 <= k <= {} source points, got k = {k}",
            source.len()
        )));
    }
    let tree = KdTree::new(source);
    let lists = par::map(query.len(), |q| tree.nearest(&query[q], k));
    Ok(NeighborIndex::from_sorted_lists(lists))
}

/// Neighborhoods of every point of `points` among the others.
///
/// Each point gets `min(k, N - 1)` neighbors; the point itself is excluded,
/// except in a single-point cloud, where it is its own only neighbor.
pub fn knn_excluding_self(points: &[[f64; 3]], k: usize) -> Result<NeighborIndex> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Err(Error::Argument("self-neighborhoods need points and k >= 1".into()));
    }
    if n == 1 {
        return Ok(NeighborIndex::from_sorted_lists(vec![vec![(0.0, 0)]]));
    }
    let k = k.min(n - 1);
    let tree = KdTree::new(points);
    let lists = par::map(n, |s| {
        let mut l = tree.nearest(&points[s], k + 1);
        match l.iter().position(|&(_, i)| i == s) {
            Some(pos) => {
                l.remove(pos);
            }
            None => {
                l.pop();
            }
        }
        l
    });
    Ok(NeighborIndex::from_sorted_lists(lists))
}

/// All sources within `r` of each query, nearest `cap` kept. A query with no
/// source inside `r` still receives its single nearest source.
pub fn radius_neighbors(
    query: &[[f64; 3]],
    source: &[[f64; 3]],
    r: f64,
    cap: usize,
) -> Result<NeighborIndex> {
    if r <= 0.0 || !r.is_finite() {
        return Err(Error::Argument(format!("radius must be positive, got {r}")));
    }
    if source.is_empty() || cap == 0 {
        return Err(Error::Argument("radius search needs sources and cap >= 1".into()));
    }
    let tree = KdTree::new(source);
    let k = cap.min(source.len());
    let lists = par::map(query.len(), |q| {
        let mut l = tree.nearest(&query[q], k);
        let keep = l.iter().take_while(|(d2, _)| d2.sqrt() <= r).count().max(1);
        l.truncate(keep);
        l
    });
    Ok(NeighborIndex::from_sorted_lists(lists))
}

/// Inverse-square-distance weights over the `k` nearest sources:
/// `w_i = (1 / (d_i^2 + eps)) / sum_j (1 / (d_j^2 + eps))`.
pub fn interpolation_weights(
    query: &[[f64; 3]],
    source: &[[f64; 3]],
    k: usize,
) -> Result<(NeighborIndex, Vec<f64>)> {
    if source.len() < k {
        return Err(Error::Argument(format!(
            "interpolation needs at least {k} source points, got {}",
            source.len()
        )));
    }
    let nbrs = knn(query, source, k)?;
    let mut weights = Vec::with_capacity(nbrs.total());
    for s in 0..nbrs.len() {
        let (_, dist) = nbrs.neighbors_with_distances(s);
        let inv: Vec<f64> = dist.iter().map(|d| 1.0 / (d * d + INTERP_EPS)).collect();
        let total: f64 = inv.iter().sum();
        weights.extend(inv.iter().map(|w| w / total));
    }
    Ok((nbrs, weights))
}
