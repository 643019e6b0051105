use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::NeighborIndex;
use crate::params::{Ctx, ParamStore};
use crate::tensor::{concat_cols, Tensor, Var};

/// Fixed kernel points in the local frame of a convolution center.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDisposition {
    pub points: Vec<[f64; 3]>,
    /// Neighborhood radius; every kernel point lies inside it.
    pub radius: f64,
    /// Support of the hat correlation around each kernel point.
    pub extent: f64,
}

impl KernelDisposition {
    pub const DEFAULT_COUNT: usize = 15;
    /// Shell radius of the non-central kernel points, relative to `radius`.
    pub const SHELL: f64 = 0.66;
    /// Correlation support relative to `radius`.
    pub const EXTENT: f64 = 0.5;

    /// Origin plus `count - 1` points on a spherical Fibonacci lattice of
    /// radius `0.66 * radius`.
    pub fn fibonacci(count: usize, radius: f64) -> Result<Self> {
        if count == 0 || radius <= 0.0 {
            return Err(Error::Spec(format!(
                "kernel disposition needs count >= 1 and radius > 0 (got {count}, {radius})"
            )));
        }
        let shell = count - 1;
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut points = vec![[0.0; 3]];
        for i in 0..shell {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / shell as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden * i as f64;
            let s = Self::SHELL * radius;
            points.push([s * r * theta.cos(), s * r * theta.sin(), s * z]);
        }
        Ok(KernelDisposition {
            points,
            radius,
            extent: Self::EXTENT * radius,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Hat correlation `max(0, 1 - |offset - x_k| / extent)` for each kernel point.
    pub fn correlations(&self, offset: &[f64; 3]) -> impl Iterator<Item = f64> + '_ {
        let o = *offset;
        self.points.iter().map(move |k| {
            let d = crate::geometry::distance(&o, k);
            (1.0 - d / self.extent).max(0.0)
        })
    }
}

/// Shape of a depthwise kernel-point convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct KPConvLSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub disposition: KernelDisposition,
}

impl KPConvLSpec {
    pub fn new(d_in: usize, d_out: usize, radius: f64) -> Result<Self> {
        let spec = KPConvLSpec {
            d_in,
            d_out,
            disposition: KernelDisposition::fibonacci(KernelDisposition::DEFAULT_COUNT, radius)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || !self.d_out.is_multiple_of(self.d_in) {
            return Err(Error::Spec(format!(
                "depthwise convolution needs d_out divisible by d_in, got {} -> {}",
                self.d_in, self.d_out
            )));
        }
        Ok(())
    }

    /// Output channels produced from each input channel.
    pub fn multiplier(&self) -> usize {
        self.d_out / self.d_in
    }

    /// Number of depthwise kernel weights, `l * d_out`.
    pub fn depthwise_weight_count(&self) -> usize {
        self.disposition.len() * self.d_out
    }
}

/// `relu(W [u_n, p_n - p_s] + b)`, mapping back to `d_in` channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelativePositionalEncoding {
    pub path: String,
    pub d_in: usize,
}

impl RelativePositionalEncoding {
    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        store.register_linear(&self.path, self.d_in + 3, self.d_in, true, rng)
    }

    pub fn apply<'g>(&self, ctx: &Ctx<'g, '_>, u_n: Var<'g>, offsets: Var<'g>) -> Result<Var<'g>> {
        let (us, os) = (u_n.shape(), offsets.shape());
        if us.len() != 2 || os.len() != 2 || us[0] != os[0] || us[1] != self.d_in || os[1] != 3 {
            return Err(Error::dim("relative positional encoding", &us, &os));
        }
        let w = ctx.param(&format!("{}/weight", self.path))?;
        let b = ctx.param(&format!("{}/bias", self.path))?;
        Ok(concat_cols(&[u_n, offsets])?.linear(w, Some(b))?.relu())
    }
}

/// `p_n - p_s` for every entry of `nbrs`, with `p_s = centers[slot]`.
pub fn relative_offsets(
    source: &[[f64; 3]],
    centers: &[[f64; 3]],
    nbrs: &NeighborIndex,
) -> Result<Vec<[f64; 3]>> {
    if centers.len() != nbrs.len() {
        return Err(Error::dim("relative offsets", &[centers.len()], &[nbrs.len()]));
    }
    nbrs.validate(source.len())?;
    let mut out = Vec::with_capacity(nbrs.total());
    for (s, c) in centers.iter().enumerate() {
        for &n in nbrs.neighbors(s) {
            let p = source[n];
            out.push([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        }
    }
    Ok(out)
}

/// Depthwise kernel-point convolution with relative positional encoding.
///
/// For center `s` and output channel `j` fed by input channel
/// `c = j / multiplier`:
///
/// `out_j(s) = 1/|N(s)| * sum_n sum_k h_k(p_n - p_s) * W[k, j] * rpe(u_n, p_n - p_s)[c]`
///
/// The kernel `W` holds exactly `l * d_out` weights.
#[derive(Clone, Debug, PartialEq)]
pub struct KPConvL {
    pub spec: KPConvLSpec,
    pub path: String,
}

impl KPConvL {
    pub fn new(path: impl Into<String>, spec: KPConvLSpec) -> Result<Self> {
        spec.validate()?;
        Ok(KPConvL {
            spec,
            path: path.into(),
        })
    }

    pub fn rpe(&self) -> RelativePositionalEncoding {
        RelativePositionalEncoding {
            path: format!("{}/rpe", self.path),
            d_in: self.spec.d_in,
        }
    }

    pub fn kernel_path(&self) -> String {
        format!("{}/kernel", self.path)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let l = self.spec.disposition.len();
        let bound = (3.0 / l as f64).sqrt();
        let w: Vec<f64> = (0..l * self.spec.d_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        store.register(self.kernel_path(), Tensor::new(vec![l, self.spec.d_out], w)?, true)?;
        self.rpe().register(store, rng)
    }

    /// `u` holds source features `[N_src, d_in]`; `offsets` holds `p_n - p_s`
    /// for every entry of `nbrs` (see [`relative_offsets`]). Returns `[S, d_out]`.
    pub fn forward<'g>(
        &self,
        ctx: &Ctx<'g, '_>,
        u: Var<'g>,
        offsets: &[[f64; 3]],
        nbrs: &NeighborIndex,
    ) -> Result<Var<'g>> {
        let shape = u.shape();
        if shape.len() != 2 || shape[1] != self.spec.d_in {
            return Err(Error::dim("kpconv", &shape, &[0, self.spec.d_in]));
        }
        if offsets.len() != nbrs.total() {
            return Err(Error::dim("kpconv offsets", &[nbrs.total()], &[offsets.len()]));
        }
        nbrs.validate(shape[0])?;
        let graph = ctx.graph;
        let m = offsets.len();
        let l = self.spec.disposition.len();

        let rel = graph.constant(Tensor::new(vec![m, 3], offsets.iter().flatten().copied().collect())?);
        let u_n = u.gather_rows(nbrs.indices.clone())?;
        let encoded = self.rpe().apply(ctx, u_n, rel)?;

        let mut h = Vec::with_capacity(m * l);
        for o in offsets {
            h.extend(self.spec.disposition.correlations(o));
        }
        let h = graph.constant(Tensor::new(vec![m, l], h)?);
        let kernel = ctx.param(&self.kernel_path())?;
        let weights = h.matmul(kernel)?;

        let mult = self.spec.multiplier();
        let route: Vec<usize> = (0..self.spec.d_out).map(|j| j / mult).collect();
        let spread = encoded.gather_cols(route)?;
        weights.mul(spread)?.segment_mean(nbrs.offsets.clone())
    }
}
