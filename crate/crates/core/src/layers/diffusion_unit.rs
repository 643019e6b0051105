use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::{PhiFilter, Varphi};
use crate::error::{Error, Result};
use crate::geometry::{knn_excluding_self, NeighborIndex, PointCloud};
use crate::params::{Ctx, ParamStore, Phase, Tap};
use crate::tensor::{Graph, Tensor, Var};

/// Shape and ablation switches of a diffusion unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiffusionUnitSpec {
    pub channels: usize,
    /// Neighborhood size used when the caller builds the kNN index.
    pub k: usize,
    pub enable_phi: bool,
    pub enable_varphi: bool,
    /// Number of explicit steps; all steps share one parameter set.
    pub repeat: usize,
}

impl DiffusionUnitSpec {
    pub fn new(channels: usize) -> Self {
        DiffusionUnitSpec {
            channels,
            k: crate::geometry::DEFAULT_K,
            enable_phi: true,
            enable_varphi: true,
            repeat: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 || self.k == 0 || self.channels == 0 {
            return Err(Error::Spec(format!(
                "diffusion unit needs channels, k and repeat >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Residual explicit diffusion step with a learned flux:
///
/// `u_s <- u_s + varphi( mean_{n in N(s)} phi(u_n - u_s) )`
///
/// `phi` is a bias-free [`PhiFilter`], `varphi` is BN followed by ReLU.
/// Either can be switched off, in which case it is the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffusionUnit {
    pub spec: DiffusionUnitSpec,
    pub path: String,
}

impl DiffusionUnit {
    pub fn new(path: impl Into<String>, spec: DiffusionUnitSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DiffusionUnit {
            spec,
            path: path.into(),
        })
    }

    pub fn phi(&self) -> PhiFilter {
        PhiFilter::new(format!("{}/phi", self.path), self.spec.channels)
    }

    pub fn varphi(&self) -> Varphi {
        Varphi::new(format!("{}/varphi", self.path), self.spec.channels)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.spec.enable_phi {
            self.phi().register(store, rng)?;
        }
        if self.spec.enable_varphi {
            self.varphi().register(store)?;
        }
        Ok(())
    }

    /// Runs `repeat` steps over `u` (`[N, d]`). `nbrs` must have exactly one
    /// nonempty neighborhood per row, with center `s` at slot `s`.
    pub fn forward<'g>(
        &self,
        ctx: &Ctx<'g, '_>,
        u: Var<'g>,
        nbrs: &NeighborIndex,
    ) -> Result<Var<'g>> {
        let shape = u.shape();
        let (n, d) = match shape.as_slice() {
            &[n, d] => (n, d),
            other => return Err(Error::dim("diffusion unit", other, &[0, self.spec.channels])),
        };
        if d != self.spec.channels {
            return Err(Error::dim("diffusion unit", &shape, &[n, self.spec.channels]));
        }
        if nbrs.len() != n || nbrs.centers.iter().enumerate().any(|(s, &c)| s != c) {
            return Err(Error::Contract(format!(
                "diffusion unit needs one neighborhood per point in order ({} rows, {} centers)",
                n,
                nbrs.len()
            )));
        }
        nbrs.validate(n)?;

        let index: Rc<[usize]> = nbrs.indices.clone().into();
        let slots: Rc<[usize]> = nbrs.center_slots().into();
        let offsets: Rc<[usize]> = nbrs.offsets.clone().into();
        let input = u;
        let mut u = u;
        for _ in 0..self.spec.repeat {
            let diff = u
                .gather_rows(Rc::clone(&index))?
                .sub(u.gather_rows(Rc::clone(&slots))?)?;
            let flux = if self.spec.enable_phi {
                self.phi().apply(ctx, diff)?
            } else {
                diff
            };
            let mut update = flux.segment_mean(Rc::clone(&offsets))?;
            if self.spec.enable_varphi {
                update = self.varphi().apply(ctx, update)?;
            }
            u = u.add(update)?;
        }
        ctx.record_tap(
            &self.path,
            Tap {
                input: (*input.value()).clone(),
                output: (*u.value()).clone(),
                neighbors: nbrs.clone(),
            },
        );
        Ok(u)
    }
}

/// Outcome of one linear diffusion step on a sampled step edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeResponse {
    pub weight: f64,
    /// Change of `|du/dx|` at the steepest sample pair.
    pub delta_grad: f64,
    pub sign: i8,
}

/// Applies one diffusion step with `phi = weight * I` and no `varphi` to a
/// single-channel profile sampled along the x axis, using the two nearest
/// samples of each point as its neighborhood, and reports how the steepest
/// gradient changed.
pub fn edge_response(profile: &PointCloud, weight: f64) -> Result<EdgeResponse> {
    if profile.feature_dim != 1 || profile.len() < 3 {
        return Err(Error::Contract(
            "edge response needs a single-channel profile with at least 3 samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..profile.len()).collect();
    order.sort_by(|&a, &b| profile.positions[a][0].total_cmp(&profile.positions[b][0]));
    let u: Vec<f64> = order.iter().map(|&i| profile.features[i]).collect();
    let increasing = u.windows(2).all(|w| w[1] >= w[0]);
    let decreasing = u.windows(2).all(|w| w[1] <= w[0]);
    if !(increasing || decreasing) {
        return Err(Error::Contract("edge profile must be monotone".into()));
    }

    let spec = DiffusionUnitSpec {
        channels: 1,
        k: 2,
        enable_phi: true,
        enable_varphi: false,
        repeat: 1,
    };
    let du = DiffusionUnit::new("edge/du", spec)?;
    let mut store = ParamStore::new();
    du.phi()
        .register_weight(&mut store, Tensor::new(vec![1, 1], vec![weight])?)?;
    let nbrs = knn_excluding_self(&profile.positions, spec.k)?;
    let g = Graph::new();
    let ctx = Ctx::new(&g, &store, Phase::Eval);
    let out = du.forward(&ctx, g.constant(profile.features_tensor()), &nbrs)?;
    let after: Vec<f64> = order.iter().map(|&i| out.value().data()[i]).collect();
    let xs: Vec<f64> = order.iter().map(|&i| profile.positions[i][0]).collect();

    let slope = |v: &[f64], i: usize| ((v[i + 1] - v[i]) / (xs[i + 1] - xs[i])).abs();
    let steepest = (0..u.len() - 1)
        .max_by(|&a, &b| slope(&u, a).total_cmp(&slope(&u, b)).then(b.cmp(&a)))
        .expect("at least two samples");
    let delta_grad = slope(&after, steepest) - slope(&u, steepest);
    let sign = if delta_grad > 0.0 {
        1
    } else if delta_grad < 0.0 {
        -1
    } else {
        0
    };
    Ok(EdgeResponse {
        weight,
        delta_grad,
        sign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn line_cloud(values: &[f64]) -> PointCloud {
        let pos = (0..values.len()).map(|i| [i as f64, 0.0, 0.0]).collect();
        PointCloud::new("line", pos, values.to_vec(), 1, None).unwrap()
    }

    fn run(spec: DiffusionUnitSpec, weight: Option<f64>, u: Tensor, nbrs: &NeighborIndex) -> Tensor {
        let du = DiffusionUnit::new("du", spec).unwrap();
        let mut store = ParamStore::new();
        if let Some(w) = weight {
            let d = spec.channels;
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                m[i * d + i] = w;
            }
            du.phi().register_weight(&mut store, Tensor::new(vec![d, d], m).unwrap()).unwrap();
        }
        if spec.enable_varphi {
            du.varphi().register(&mut store).unwrap();
        }
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Phase::Eval);
        let y = du.forward(&ctx, g.constant(u), nbrs).unwrap();
        (*y.value()).clone()
    }

    fn plain(channels: usize) -> DiffusionUnitSpec {
        DiffusionUnitSpec {
            channels,
            k: 2,
            enable_phi: false,
            enable_varphi: false,
            repeat: 1,
        }
    }

    #[test]
    fn plain_step_is_neighbor_mean() {
        // point 0 at value 0 with neighbors valued 1 and 3
        let nbrs = NeighborIndex::from_lists(&[vec![1, 2], vec![0], vec![0]]);
        let u = Tensor::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let y = run(plain(1), None, u, &nbrs);
        assert_eq!(y.data()[0], 2.0);
    }

    #[test]
    fn linear_phi_by_hand() {
        let nbrs = NeighborIndex::from_lists(&[vec![1], vec![0]]);
        let u = Tensor::from_rows(&[[0.0], [2.0]]).unwrap();
        let spec = DiffusionUnitSpec {
            enable_phi: true,
            ..plain(1)
        };
        let y = run(spec, Some(-0.5), u, &nbrs);
        assert_eq!(y.data()[0], -1.0);
    }

    #[test]
    fn constant_field_is_fixed_point_with_varphi() {
        let nbrs = NeighborIndex::from_lists(&[vec![1, 2], vec![0, 2], vec![0, 1]]);
        let u = Tensor::from_rows(&[[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]]).unwrap();
        let spec = DiffusionUnitSpec {
            channels: 2,
            k: 2,
            enable_phi: true,
            enable_varphi: true,
            repeat: 3,
        };
        let y = run(spec, Some(0.7), u.clone(), &nbrs);
        assert_eq!(y, u);
    }

    #[test]
    fn repeat_applies_fresh_differences() {
        let nbrs = NeighborIndex::from_lists(&[vec![1], vec![0]]);
        let u = Tensor::from_rows(&[[0.0], [4.0]]).unwrap();
        let spec = DiffusionUnitSpec {
            enable_phi: true,
            repeat: 2,
            ..plain(1)
        };
        // step 1: [1, 3]; step 2: [1.5, 2.5]
        let y = run(spec, Some(0.25), u, &nbrs);
        assert_eq!(y.data(), &[1.5, 2.5]);
    }

    #[test]
    fn empty_neighborhood_is_rejected() {
        let du = DiffusionUnit::new("du", plain(1)).unwrap();
        let store = ParamStore::new();
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Phase::Eval);
        let nbrs = NeighborIndex::from_lists(&[vec![1], vec![]]);
        let u = g.constant(Tensor::from_rows(&[[0.0], [1.0]]).unwrap());
        assert!(matches!(
            du.forward(&ctx, u, &nbrs),
            Err(Error::DegenerateNeighborhood { segment: 1 })
        ));
    }

    #[test]
    fn zero_repeat_is_a_spec_error() {
        let spec = DiffusionUnitSpec {
            repeat: 0,
            ..plain(1)
        };
        assert!(DiffusionUnit::new("du", spec).is_err());
    }

    #[test]
    fn registered_params_follow_toggles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        DiffusionUnit::new("a", DiffusionUnitSpec::new(4))
            .unwrap()
            .register(&mut store, &mut rng)
            .unwrap();
        DiffusionUnit::new("b", plain(4)).unwrap().register(&mut store, &mut rng).unwrap();
        let paths: Vec<&str> = store.paths().collect();
        assert!(paths.contains(&"a/phi/weight"));
        assert!(paths.contains(&"a/varphi/gamma"));
        assert!(!paths.iter().any(|p| p.starts_with("b/")));
    }

    #[test]
    fn edge_response_rejects_non_monotone() {
        let cloud = line_cloud(&[0.0, 1.0, 0.5, 2.0]);
        assert!(matches!(edge_response(&cloud, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn edge_response_zero_weight_is_exactly_zero() {
        let cloud = line_cloud(&[-1.0, -0.9, 0.0, 0.9, 1.0]);
        let r = edge_response(&cloud, 0.0).unwrap();
        assert_eq!(r.delta_grad, 0.0);
        assert_eq!(r.sign, 0);
    }
}
