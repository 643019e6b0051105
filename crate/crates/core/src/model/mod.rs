//! Encoder/decoder networks built from kernel-point convolutions and
//! diffusion units.
//!
//! The encoder lifts raw coordinates pointwise, then runs four stages of
//! farthest-point downsampling, a depthwise kernel-point convolution over
//! each center's kNN (followed by BN + ReLU) and a diffusion unit. The
//! classification head max-pools the last stage; the segmentation decoder
//! walks back up with 3-NN interpolation, skip concatenation, a pointwise
//! fusion map and a diffusion unit per level.

mod batch;
mod config;
mod smoothness;

pub use batch::{sample_count, Batch, CloudGeometry};
pub use config::{ModelConfig, Task, STAGES};
pub(crate) use config::{parse, parse_list};
pub use smoothness::{smoothness, smoothness_probe, SmoothnessReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layers::{
    batched_max_pool, DiffusionUnit, DiffusionUnitSpec, KPConvL, KPConvLSpec, KernelDisposition,
    Pointwise,
};
use crate::params::{Ctx, ParamStore, Phase};
use crate::tensor::{concat_cols, Graph, Tensor, Var};

/// A configuration together with its parameter registry.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
}

/// Registers every parameter of `cfg` in build order from a seeded generator.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let model = Model {
        config: cfg.clone(),
        store: ParamStore::new(),
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.lift().register(&mut store, &mut rng)?;
    for s in 0..STAGES {
        model.conv(s)?.register(&mut store, &mut rng)?;
        store.register_batch_norm(&model.conv_bn_path(s), cfg.widths[s])?;
        model.encoder_du(s)?.register(&mut store, &mut rng)?;
    }
    match cfg.task {
        Task::Classification => {
            for layer in model.cls_head() {
                layer.register(&mut store, &mut rng)?;
            }
        }
        Task::Segmentation => {
            for level in (0..STAGES).rev() {
                model.fuse(level).register(&mut store, &mut rng)?;
                model.decoder_du(level)?.register(&mut store, &mut rng)?;
            }
            for layer in model.seg_head() {
                layer.register(&mut store, &mut rng)?;
            }
        }
    }
    Ok(Model { store, ..model })
}

impl Model {
    /// Feature width at resolution level `level` (0 = lifted input).
    pub fn level_width(&self, level: usize) -> usize {
        if level == 0 {
            self.config.lift_width
        } else {
            self.config.widths[level - 1]
        }
    }

    fn du_spec(&self, channels: usize) -> DiffusionUnitSpec {
        DiffusionUnitSpec {
            channels,
            k: self.config.k,
            enable_phi: self.config.enable_phi,
            enable_varphi: self.config.enable_varphi,
            repeat: self.config.repeat,
        }
    }

    fn lift(&self) -> Pointwise {
        Pointwise::new("lift", self.config.input_dim, self.config.lift_width, true)
    }

    pub fn conv(&self, stage: usize) -> Result<KPConvL> {
        let radius = self.config.kernel_radius * f64::powi(2.0, stage as i32);
        let spec = KPConvLSpec {
            d_in: self.level_width(stage),
            d_out: self.config.widths[stage],
            disposition: KernelDisposition::fibonacci(self.config.kernel_points, radius)?,
        };
        KPConvL::new(format!("encoder/stage{stage}/conv"), spec)
    }

    fn conv_bn_path(&self, stage: usize) -> String {
        format!("encoder/stage{stage}/conv_bn")
    }

    pub fn encoder_du(&self, stage: usize) -> Result<DiffusionUnit> {
        DiffusionUnit::new(
            format!("encoder/stage{stage}/du"),
            self.du_spec(self.config.widths[stage]),
        )
    }

    /// Decoder fusion producing level `level` features from the upsampled
    /// level `level + 1` features and the level `level` skip.
    fn fuse(&self, level: usize) -> Pointwise {
        let up = self.level_width(level + 1);
        let skip = self.level_width(level);
        Pointwise::new(format!("decoder/level{level}/fuse"), up + skip, skip, true)
    }

    pub fn decoder_du(&self, level: usize) -> Result<DiffusionUnit> {
        DiffusionUnit::new(
            format!("decoder/level{level}/du"),
            self.du_spec(self.level_width(level)),
        )
    }

    fn cls_head(&self) -> Vec<Pointwise> {
        let mut layers = Vec::new();
        let mut prev = self.config.widths[STAGES - 1];
        for (i, &w) in self.config.head_widths.iter().enumerate() {
            layers.push(Pointwise::new(format!("head/fc{i}"), prev, w, true));
            prev = w;
        }
        layers.push(Pointwise::new("head/out", prev, self.config.num_classes, false));
        layers
    }

    fn seg_head(&self) -> Vec<Pointwise> {
        let w = self.config.seg_head_width;
        vec![
            Pointwise::new("head/fc0", self.config.lift_width, w, true),
            Pointwise::new("head/out", w, self.config.num_parts, false),
        ]
    }

    /// Paths of all diffusion units, encoder first.
    pub fn du_paths(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..STAGES).map(|s| format!("encoder/stage{s}/du")).collect();
        if self.config.task == Task::Segmentation {
            out.extend((0..STAGES).rev().map(|l| format!("decoder/level{l}/du")));
        }
        out
    }

    /// Resolution level at which the diffusion unit `path` operates.
    pub fn du_level(&self, path: &str) -> Option<usize> {
        (0..STAGES)
            .find(|&s| path == format!("encoder/stage{s}/du"))
            .map(|s| s + 1)
            .or_else(|| {
                (self.config.task == Task::Segmentation)
                    .then(|| (0..STAGES).find(|&l| path == format!("decoder/level{l}/du")))
                    .flatten()
            })
    }

    /// Logits `[B, classes]` for classification or `[sum N, parts]` for
    /// segmentation.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, batch: &Batch) -> Result<Var<'g>> {
        let graph = ctx.graph;
        let x = graph.constant(batch.features.clone());
        let mut feats = vec![self.lift().apply(ctx, x)?];
        for s in 0..STAGES {
            let conv = self.conv(s)?;
            let y = conv.forward(ctx, feats[s], &batch.conv_offsets[s], &batch.conv[s])?;
            let y = ctx.batch_norm(y, &self.conv_bn_path(s))?.relu();
            let nbrs = batch.du[s + 1].as_ref().expect("encoder levels always carry neighborhoods");
            feats.push(self.encoder_du(s)?.forward(ctx, y, nbrs)?);
        }
        match self.config.task {
            Task::Classification => {
                let mut h = batched_max_pool(feats[STAGES], &batch.level_offsets[STAGES])?;
                let head = self.cls_head();
                let (out, hidden) = head.split_last().expect("head has an output layer");
                for layer in hidden {
                    h = ctx.dropout(layer.apply(ctx, h)?, self.config.dropout)?;
                }
                out.apply(ctx, h)
            }
            Task::Segmentation => {
                if batch.interp.len() != STAGES || batch.du[0].is_none() {
                    return Err(Error::Contract("batch was not prepared for segmentation".into()));
                }
                let mut up = feats[STAGES];
                for level in (0..STAGES).rev() {
                    let (nbrs, weights) = &batch.interp[level];
                    let interp = up
                        .gather_rows(nbrs.indices.clone())?
                        .scale_rows(weights.clone())?
                        .segment_sum(nbrs.offsets.clone())?;
                    let fused = self.fuse(level).apply(ctx, concat_cols(&[interp, feats[level]])?)?;
                    let nbrs = batch.du[level].as_ref().expect("segmentation builds every level");
                    up = self.decoder_du(level)?.forward(ctx, fused, nbrs)?;
                }
                let head = self.seg_head();
                let h = ctx.dropout(head[0].apply(ctx, up)?, self.config.dropout)?;
                head[1].apply(ctx, h)
            }
        }
    }

    /// Eval-mode logits for a prepared batch.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let graph = Graph::new();
        let ctx = Ctx::new(&graph, &self.store, Phase::Eval);
        let out = self.forward(&ctx, batch)?;
        Ok((*out.value()).clone())
    }
}

/// Eval-mode class scores of one cloud.
pub fn forward_classify(model: &Model, cloud: &PointCloud) -> Result<Vec<f64>> {
    let batch = Batch::new(&[cloud], &model.config)?;
    Ok(model.predict(&batch)?.into_data())
}

/// Eval-mode per-point part scores `[N, parts]` of one cloud.
pub fn forward_segment(model: &Model, cloud: &PointCloud) -> Result<Tensor> {
    let batch = Batch::new(&[cloud], &model.config)?;
    model.predict(&batch)
}
