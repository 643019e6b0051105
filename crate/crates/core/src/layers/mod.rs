//! Learned building blocks.
//!
//! Layers are thin descriptions (path + shape) whose parameters live in a
//! [`ParamStore`]; `forward` methods pull them through a [`Ctx`] so the same
//! layer can run in training or evaluation mode on any graph.

mod diffusion_unit;
mod kpconv;

pub use diffusion_unit::{edge_response, DiffusionUnit, DiffusionUnitSpec, EdgeResponse};
pub use kpconv::{relative_offsets, KPConvL, KPConvLSpec, KernelDisposition, RelativePositionalEncoding};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Tensor, Var};

/// Square channel-mixing map applied row by row (a kernel-size-1 conv).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhiFilter {
    pub path: String,
    pub channels: usize,
    pub bias: bool,
}

impl PhiFilter {
    pub fn new(path: impl Into<String>, channels: usize) -> Self {
        PhiFilter {
            path: path.into(),
            channels,
            bias: false,
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        store.register_linear(&self.path, self.channels, self.channels, self.bias, rng)
    }

    /// Registers an explicit `[d, d]` weight.
    pub fn register_weight(&self, store: &mut ParamStore, weight: Tensor) -> Result<()> {
        if weight.shape() != [self.channels, self.channels] {
            return Err(Error::dim("phi weight", &[self.channels, self.channels], weight.shape()));
        }
        store.register(format!("{}/weight", self.path), weight, true)?;
        if self.bias {
            store.register(format!("{}/bias", self.path), Tensor::zeros(&[self.channels]), true)?;
        }
        Ok(())
    }

    /// `x * W^T (+ b)`.
    pub fn apply<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        let cols = x.value().cols();
        if cols != self.channels {
            return Err(Error::dim("phi", &[self.channels], &[cols]));
        }
        let w = ctx.param(&format!("{}/weight", self.path))?;
        let b = ctx.try_param(&format!("{}/bias", self.path))?;
        x.linear(w, b)
    }
}

/// Batch normalization followed by ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Varphi {
    pub path: String,
    pub channels: usize,
}

impl Varphi {
    pub fn new(path: impl Into<String>, channels: usize) -> Self {
        Varphi {
            path: path.into(),
            channels,
        }
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        store.register_batch_norm(&self.path, self.channels)
    }

    pub fn apply<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(ctx.batch_norm(x, &self.path)?.relu())
    }
}

/// Pointwise linear map, optionally followed by BN + ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pointwise {
    pub path: String,
    pub cin: usize,
    pub cout: usize,
    pub norm_act: bool,
}

impl Pointwise {
    pub fn new(path: impl Into<String>, cin: usize, cout: usize, norm_act: bool) -> Self {
        Pointwise {
            path: path.into(),
            cin,
            cout,
            norm_act,
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        // BN makes a bias redundant
        store.register_linear(&self.path, self.cin, self.cout, !self.norm_act, rng)?;
        if self.norm_act {
            store.register_batch_norm(&format!("{}/bn", self.path), self.cout)?;
        }
        Ok(())
    }

    pub fn apply<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        let w = ctx.param(&format!("{}/weight", self.path))?;
        let b = ctx.try_param(&format!("{}/bias", self.path))?;
        let y = x.linear(w, b)?;
        if self.norm_act {
            Ok(ctx.batch_norm(y, &format!("{}/bn", self.path))?.relu())
        } else {
            Ok(y)
        }
    }
}

/// Per-channel maximum over all rows of `[N, d]`, shaped `[d]`.
pub fn global_max_pool<'g>(u: Var<'g>) -> Result<Var<'g>> {
    let shape = u.shape();
    let (rows, d) = match shape.as_slice() {
        &[r, d] => (r, d),
        other => return Err(Error::dim("global_max_pool", other, &[0, 0])),
    };
    if rows == 0 {
        return Err(Error::Argument("global max pool over an empty cloud".into()));
    }
    u.segment_max(vec![0, rows])?.reshape(vec![d])
}

/// Per-cloud maximum for a batch laid out as contiguous row ranges.
pub fn batched_max_pool<'g>(u: Var<'g>, offsets: &[usize]) -> Result<Var<'g>> {
    u.segment_max(offsets.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Phase;
    use crate::tensor::Graph;

    fn phi_with(weight: Tensor) -> (PhiFilter, ParamStore) {
        let d = weight.shape()[0];
        let f = PhiFilter::new("phi", d);
        let mut store = ParamStore::new();
        f.register_weight(&mut store, weight).unwrap();
        (f, store)
    }

    fn apply_phi(weight: Tensor, x: Tensor) -> Tensor {
        let (f, store) = phi_with(weight);
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Phase::Eval);
        let y = f.apply(&ctx, g.constant(x)).unwrap();
        (*y.value()).clone()
    }

    #[test]
    fn phi_identity_scale_and_swap() {
        let eye = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[[3.0, 7.0], [-1.0, 2.0]]).unwrap();
        assert_eq!(apply_phi(eye, x.clone()), x);

        let half = Tensor::from_rows(&[[-0.5]]).unwrap();
        let y = apply_phi(half, Tensor::from_rows(&[[2.0]]).unwrap());
        assert_eq!(y.data(), &[-1.0]);

        let swap = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let y = apply_phi(swap, Tensor::from_rows(&[[3.0, 7.0]]).unwrap());
        assert_eq!(y.data(), &[7.0, 3.0]);
    }

    #[test]
    fn phi_rejects_wrong_width() {
        let (f, store) = phi_with(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Phase::Eval);
        let x = g.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        assert!(matches!(f.apply(&ctx, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn bias_free_phi_maps_zero_to_zero() {
        let (f, store) = phi_with(Tensor::from_rows(&[[0.3, -2.0], [1.5, 0.7]]).unwrap());
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Phase::Eval);
        let y = f.apply(&ctx, g.constant(Tensor::zeros(&[4, 2]))).unwrap();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn max_pool_values_and_routing() {
        let g = Graph::new();
        let x = g.param(Tensor::from_rows(&[[1.0, 5.0], [3.0, 2.0]]).unwrap());
        let p = global_max_pool(x).unwrap();
        assert_eq!(p.value().data(), &[3.0, 5.0]);
        assert_eq!(p.shape(), vec![2]);
        g.backward(p.sum()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);

        let g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[4.0, -1.0]]).unwrap());
        assert_eq!(global_max_pool(x).unwrap().value().data(), &[4.0, -1.0]);

        let g = Graph::new();
        let x = g.param(Tensor::from_rows(&[[2.0], [2.0]]).unwrap());
        g.backward(global_max_pool(x).unwrap().sum()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0]);

        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[0, 2]));
        assert!(global_max_pool(x).is_err());
    }
}
