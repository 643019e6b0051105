//! Named parameter registry and the per-forward-pass context that binds
//! registry entries to graph leaves.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BnState, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Buffers (BN running statistics) are saved but never optimized.
    pub trainable: bool,
}

/// Parameters and buffers keyed by slash-separated layer paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, path: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::Spec(format!("duplicate parameter path `{path}`")));
        }
        let grad = vec![0.0; value.len()];
        self.entries.insert(
            path,
            Param {
                value,
                grad,
                trainable,
            },
        );
        Ok(())
    }

    /// Uniform fan-in initialisation of a `[out, in]` weight matrix.
    pub fn register_linear(
        &mut self,
        path: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = (6.0 / cin as f64).sqrt();
        let w: Vec<f64> = (0..cin * cout).map(|_| rng.random_range(-bound..bound)).collect();
        self.register(format!("{path}/weight"), Tensor::new(vec![cout, cin], w)?, true)?;
        if bias {
            self.register(format!("{path}/bias"), Tensor::zeros(&[cout]), true)?;
        }
        Ok(())
    }

    /// `gamma = 1`, `beta = 0`, running mean 0, running variance 1.
    pub fn register_batch_norm(&mut self, path: &str, channels: usize) -> Result<()> {
        self.register(format!("{path}/gamma"), Tensor::full(&[channels], 1.0), true)?;
        self.register(format!("{path}/beta"), Tensor::zeros(&[channels]), true)?;
        self.register(format!("{path}/running_mean"), Tensor::zeros(&[channels]), false)?;
        self.register(format!("{path}/running_var"), Tensor::full(&[channels], 1.0), false)?;
        Ok(())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn get(&self, path: &str) -> Result<&Param> {
        self.entries.get(path).ok_or_else(|| Error::Lookup {
            path: path.to_string(),
            valid: self.paths().map(str::to_string).collect(),
        })
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Param> {
        if !self.entries.contains_key(path) {
            return Err(Error::Lookup {
                path: path.to_string(),
                valid: self.paths().map(str::to_string).collect(),
            });
        }
        Ok(self.entries.get_mut(path).expect("checked"))
    }

    pub fn value(&self, path: &str) -> Result<&Tensor> {
        Ok(&self.get(path)?.value)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total scalar count of trainable entries whose path ends with `suffix`.
    pub fn count_with_suffix(&self, suffix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, p)| p.trainable && k.ends_with(suffix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn bn_state(&self, path: &str) -> Result<BnState> {
        Ok(BnState {
            running_mean: self.value(&format!("{path}/running_mean"))?.data().to_vec(),
            running_var: self.value(&format!("{path}/running_var"))?.data().to_vec(),
            momentum: BnState::MOMENTUM,
            eps: BnState::EPS,
        })
    }

    pub fn set_bn_state(&mut self, path: &str, state: &BnState) -> Result<()> {
        self.get_mut(&format!("{path}/running_mean"))?
            .value
            .data_mut()
            .copy_from_slice(&state.running_mean);
        self.get_mut(&format!("{path}/running_var"))?
            .value
            .data_mut()
            .copy_from_slice(&state.running_var);
        Ok(())
    }
}

/// Whether a forward pass uses batch statistics and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Binds a [`ParamStore`] to one [`Graph`] for a single forward pass.
///
/// Parameter leaves are created once per path, so a layer applied several
/// times shares one leaf and its gradient sums over all uses. BN running
/// statistics are updated in a private copy and written back by
/// [`PassOutcome::commit_bn`] after [`Ctx::finish`].
pub struct Ctx<'g, 's> {
    pub graph: &'g Graph,
    pub store: &'s ParamStore,
    pub phase: Phase,
    leaves: RefCell<HashMap<String, Var<'g>>>,
    bn: RefCell<BTreeMap<String, BnState>>,
    rng: RefCell<Option<ChaCha8Rng>>,
    taps: RefCell<Option<BTreeMap<String, Tap>>>,
}

/// Features captured around a diffusion unit for the smoothness probe.
#[derive(Clone, Debug)]
pub struct Tap {
    pub input: Tensor,
    pub output: Tensor,
    pub neighbors: crate::geometry::NeighborIndex,
}

impl<'g, 's> Ctx<'g, 's> {
    pub fn new(graph: &'g Graph, store: &'s ParamStore, phase: Phase) -> Self {
        Ctx {
            graph,
            store,
            phase,
            leaves: RefCell::new(HashMap::new()),
            bn: RefCell::new(BTreeMap::new()),
            rng: RefCell::new(None),
            taps: RefCell::new(None),
        }
    }

    /// Supplies the generator used for dropout masks.
    pub fn with_rng(self, rng: ChaCha8Rng) -> Self {
        *self.rng.borrow_mut() = Some(rng);
        self
    }

    /// Enables recording of diffusion-unit inputs and outputs.
    pub fn with_taps(self) -> Self {
        *self.taps.borrow_mut() = Some(BTreeMap::new());
        self
    }

    pub fn training(&self) -> bool {
        self.phase == Phase::Train
    }

    pub fn param(&self, path: &str) -> Result<Var<'g>> {
        if let Some(v) = self.leaves.borrow().get(path) {
            return Ok(*v);
        }
        let p = self.store.get(path)?;
        let v = self.graph.leaf(p.value.clone(), p.trainable);
        self.leaves.borrow_mut().insert(path.to_string(), v);
        Ok(v)
    }

    pub fn try_param(&self, path: &str) -> Result<Option<Var<'g>>> {
        if self.store.contains(path) {
            self.param(path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Applies the batch-norm layer registered under `path`.
    pub fn batch_norm(&self, x: Var<'g>, path: &str) -> Result<Var<'g>> {
        let gamma = self.param(&format!("{path}/gamma"))?;
        let beta = self.param(&format!("{path}/beta"))?;
        let mut state = match self.bn.borrow().get(path) {
            Some(s) => s.clone(),
            None => self.store.bn_state(path)?,
        };
        let y = x.batch_norm(gamma, beta, &mut state, self.training())?;
        if self.training() {
            self.bn.borrow_mut().insert(path.to_string(), state);
        }
        Ok(y)
    }

    /// Inverted dropout; identity outside training or without an rng.
    pub fn dropout(&self, x: Var<'g>, p: f64) -> Result<Var<'g>> {
        if !self.training() || p <= 0.0 {
            return Ok(x);
        }
        let mut rng = self.rng.borrow_mut();
        let Some(rng) = rng.as_mut() else {
            return Ok(x);
        };
        let shape = x.shape();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.graph.constant(Tensor::new(shape, mask)?);
        x.mul(m)
    }

    pub fn record_tap(&self, path: &str, tap: Tap) {
        if let Some(t) = self.taps.borrow_mut().as_mut() {
            t.insert(path.to_string(), tap);
        }
    }

    pub fn take_taps(&self) -> BTreeMap<String, Tap> {
        self.taps.borrow_mut().take().unwrap_or_default()
    }

    /// Detaches the pass: leaf gradients (for paths reached by a backward
    /// pass) and updated BN statistics, ready to apply to the store.
    pub fn finish(self) -> PassOutcome {
        let mut grads: Vec<(String, Vec<f64>)> = self
            .leaves
            .into_inner()
            .into_iter()
            .filter_map(|(path, var)| var.grad().map(|g| (path, g)))
            .collect();
        grads.sort_by(|a, b| a.0.cmp(&b.0));
        PassOutcome {
            grads,
            bn: self.bn.into_inner().into_iter().collect(),
        }
    }
}

/// Gradients and statistics produced by one forward/backward pass.
#[derive(Clone, Debug, Default)]
pub struct PassOutcome {
    pub grads: Vec<(String, Vec<f64>)>,
    pub bn: Vec<(String, BnState)>,
}

impl PassOutcome {
    /// Adds gradients into `store`.
    pub fn accumulate_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (path, g) in &self.grads {
            let p = store.get_mut(path)?;
            p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// Writes updated BN running statistics into `store`.
    pub fn commit_bn(&self, store: &mut ParamStore) -> Result<()> {
        for (path, state) in &self.bn {
            store.set_bn_state(path, state)?;
        }
        Ok(())
    }
}
