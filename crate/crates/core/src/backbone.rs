//! Mini 3-D CNN feature extractor with attention insertion points, plus the
//! action classifier and domain discriminator heads.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::attention::{BlockVariant, CtaBlock};
use crate::autograd::{Graph, GrlCoefficient, Var};
use crate::error::{shape_err, Error, Result};
use crate::ops::Conv3dGeometry;
use crate::param::{ParamId, ParamStore, ParamVars};
use crate::real::Real;
use crate::rng::{he_uniform, rng_from_seed, uniform_fan_in, RunRng};
use crate::tensor::Tensor;

/// Extents of one input clip (per sample).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputGeometry {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl StageConfig {
    pub fn geometry(&self) -> Conv3dGeometry {
        Conv3dGeometry::new(self.stride, self.padding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub input: InputGeometry,
    pub stages: Vec<StageConfig>,
    /// Stage indices followed by an attention block. Never the first or last.
    pub cta_after: Vec<usize>,
    pub variant: BlockVariant,
    pub reduction: usize,
    pub feature_dim: usize,
    pub action_hidden: usize,
    pub domain_hidden: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let stage = |c| StageConfig {
            out_channels: c,
            kernel: [3, 3, 3],
            stride: [1, 2, 2],
            padding: [1, 1, 1],
        };
        BackboneConfig {
            input: InputGeometry { frames: 16, channels: 1, height: 28, width: 28 },
            stages: vec![stage(8), stage(16), stage(32)],
            cta_after: vec![1],
            variant: BlockVariant::CT,
            reduction: 4,
            feature_dim: 32,
            action_hidden: 32,
            domain_hidden: 32,
            dropout: 0.5,
        }
    }
}

/// (T, C, H, W) of a stage's output for one sample.
pub type StageExtent = [usize; 4];

impl BackboneConfig {
    /// Per-stage output extents; fails if any axis underflows.
    pub fn stage_extents(&self) -> Result<Vec<StageExtent>> {
        let mut t = self.input.frames;
        let mut h = self.input.height;
        let mut w = self.input.width;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let geo = s.geometry();
            let ctx = |e: Error| Error::Config(format!("stage {i}: {e}"));
            t = geo.out_extent(0, t, s.kernel[0]).map_err(ctx)?;
            h = geo.out_extent(1, h, s.kernel[1]).map_err(ctx)?;
            w = geo.out_extent(2, w, s.kernel[2]).map_err(ctx)?;
            out.push([t, s.out_channels, h, w]);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let InputGeometry { frames, channels, height, width } = self.input;
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return cfg("input extents must be positive".into());
        }
        if self.stages.is_empty() {
            return cfg("at least one stage is required".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.kernel.contains(&0) || s.stride.contains(&0) {
                return cfg(format!("stage {i} has a zero channel count, kernel or stride"));
            }
        }
        let last = self.stages.len() - 1;
        let mut seen = Vec::new();
        for &k in &self.cta_after {
            if k > last {
                return cfg(format!("cta_after index {k} does not name a stage"));
            }
            if k == 0 || k == last {
                return cfg(format!(
                    "cta_after index {k}: attention goes between middle stages, not after the first or last"
                ));
            }
            if seen.contains(&k) {
                return cfg(format!("cta_after index {k} listed twice"));
            }
            seen.push(k);
        }
        if self.feature_dim != self.stages[last].out_channels {
            return cfg(format!(
                "feature_dim {} must equal the last stage's {} channels",
                self.feature_dim, self.stages[last].out_channels
            ));
        }
        if self.reduction == 0 {
            return cfg("reduction ratio must be positive".into());
        }
        if self.action_hidden == 0 || self.domain_hidden == 0 {
            return cfg("head widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return cfg(format!("dropout {} outside [0, 1)", self.dropout));
        }
        self.stage_extents()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvStage {
    kernel: ParamId,
    bias: ParamId,
    geo: Conv3dGeometry,
}

/// Two affine layers with ReLU between.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

impl MlpHead {
    fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut RunRng,
    ) -> Result<Self> {
        Ok(MlpHead {
            fc1_w: store.add(format!("{prefix}.fc1.weight"), he_uniform(rng, &[hidden, input], input))?,
            fc1_b: store.add(format!("{prefix}.fc1.bias"), Tensor::zeros(&[hidden]))?,
            fc2_w: store.add(format!("{prefix}.fc2.weight"), uniform_fan_in(rng, &[output, hidden], hidden))?,
            fc2_b: store.add(format!("{prefix}.fc2.bias"), Tensor::zeros(&[output]))?,
        })
    }
}

/// Whether the action head applies dropout, and the mask source if so.
pub enum HeadMode<'a> {
    Eval,
    Train(&'a mut RunRng),
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<F: Real>(rng: &mut RunRng, len: usize, p: f64) -> Vec<F> {
    let keep = F::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { F::ZERO } else { keep })
        .collect()
}

/// Feature extractor G_f, action classifier G_y and domain discriminator G_d
/// with all of their parameters.
#[derive(Clone, Debug)]
pub struct ModelBundle<F> {
    pub config: BackboneConfig,
    pub num_classes: usize,
    pub params: ParamStore<F>,
    stages: Vec<ConvStage>,
    /// (stage index, block) in stage order.
    blocks: Vec<(usize, CtaBlock)>,
    pub action_head: MlpHead,
    pub domain_head: MlpHead,
}

impl<F: Real> ModelBundle<F> {
    /// Deterministic initialization: the same `(config, num_classes, seed)`
    /// always yields bitwise-identical parameters.
    pub fn init(config: &BackboneConfig, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("at least two action classes are required".into()));
        }
        let extents = config.stage_extents()?;
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let mut stages = Vec::new();
        let mut blocks = Vec::new();
        let mut cin = config.input.channels;
        for (i, s) in config.stages.iter().enumerate() {
            let [kt, kh, kw] = s.kernel;
            let fan_in = cin * kt * kh * kw;
            let kernel = params.add(
                format!("stage{i}.conv.weight"),
                he_uniform(&mut rng, &[s.out_channels, cin, kt, kh, kw], fan_in),
            )?;
            let bias = params.add(format!("stage{i}.conv.bias"), Tensor::zeros(&[s.out_channels]))?;
            stages.push(ConvStage { kernel, bias, geo: s.geometry() });
            if config.cta_after.contains(&i) {
                let [t, c, _, _] = extents[i];
                let block = CtaBlock::new(
                    &mut params,
                    &format!("cta{i}"),
                    config.variant,
                    t,
                    c,
                    config.reduction,
                    &mut rng,
                )?;
                blocks.push((i, block));
            }
            cin = s.out_channels;
        }
        let action_head = MlpHead::new(
            &mut params,
            "action",
            config.feature_dim,
            config.action_hidden,
            num_classes,
            &mut rng,
        )?;
        let domain_head = MlpHead::new(
            &mut params,
            "domain",
            config.feature_dim,
            config.domain_hidden,
            2,
            &mut rng,
        )?;
        Ok(ModelBundle {
            config: config.clone(),
            num_classes,
            params,
            stages,
            blocks,
            action_head,
            domain_head,
        })
    }

    pub fn cast<G: Real>(&self) -> ModelBundle<G> {
        ModelBundle {
            config: self.config.clone(),
            num_classes: self.num_classes,
            params: self.params.cast(),
            stages: self.stages.clone(),
            blocks: self.blocks.clone(),
            action_head: self.action_head.clone(),
            domain_head: self.domain_head.clone(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = (usize, &CtaBlock)> {
        self.blocks.iter().map(|(i, b)| (*i, b))
    }

    /// True for parameters of the feature extractor (convolutions and
    /// attention blocks).
    pub fn is_extractor_param(name: &str) -> bool {
        name.starts_with("stage") || name.starts_with("cta")
    }

    pub fn is_domain_param(name: &str) -> bool {
        name.starts_with("domain.")
    }

    pub fn bind(&self, g: &mut Graph<F>) -> ParamVars {
        self.params.bind(g)
    }

    /// Runs conv → ReLU → (attention block) per stage, then averages over
    /// (T, H, W). Returns an (N, D) embedding. The extractor has no
    /// train/eval-dependent layers.
    pub fn extract_features(&self, g: &mut Graph<F>, pv: &ParamVars, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let inp = self.config.input;
        if shape.len() != 5 || shape[1..] != [inp.frames, inp.channels, inp.height, inp.width] {
            return shape_err(format!(
                "extractor expects (N, {}, {}, {}, {}), got {shape:?}",
                inp.frames, inp.channels, inp.height, inp.width
            ));
        }
        let mut h = x;
        for (i, stage) in self.stages.iter().enumerate() {
            h = g.conv3d(h, pv.var(stage.kernel), Some(pv.var(stage.bias)), stage.geo)?;
            h = g.relu(h)?;
            if let Some((_, block)) = self.blocks.iter().find(|(k, _)| *k == i) {
                h = block.forward(g, pv, h)?;
            }
        }
        let pooled = g.avg_pool_axes(h, &[1, 3, 4])?;
        g.reshape(pooled, &[shape[0], self.config.feature_dim])
    }

    fn check_features(&self, g: &Graph<F>, features: Var) -> Result<usize> {
        let s = g.shape(features);
        if s.len() != 2 || s[1] != self.config.feature_dim {
            return shape_err(format!(
                "heads expect (N, {}) features, got {s:?}",
                self.config.feature_dim
            ));
        }
        Ok(s[0])
    }

    /// affine → ReLU → dropout (train mode only) → affine. Returns logits;
    /// softmax lives in the loss and in argmax.
    pub fn classify_action(
        &self,
        g: &mut Graph<F>,
        pv: &ParamVars,
        features: Var,
        mode: HeadMode<'_>,
    ) -> Result<Var> {
        self.check_features(g, features)?;
        let head = &self.action_head;
        let h = g.linear(pv.var(head.fc1_w), Some(pv.var(head.fc1_b)), features)?;
        let mut h = g.relu(h)?;
        if let HeadMode::Train(rng) = mode {
            if self.config.dropout > 0.0 {
                let mask = dropout_mask(rng, g.value(h).len(), self.config.dropout);
                h = g.dropout_with_mask(h, mask)?;
            }
        }
        g.linear(pv.var(head.fc2_w), Some(pv.var(head.fc2_b)), h)
    }

    /// Gradient reversal followed by the discriminator. Forward values do not
    /// depend on `coeff`.
    pub fn discriminate_domain(
        &self,
        g: &mut Graph<F>,
        pv: &ParamVars,
        features: Var,
        coeff: GrlCoefficient,
    ) -> Result<Var> {
        self.check_features(g, features)?;
        let reversed = g.grad_reverse(features, coeff)?;
        self.domain_logits(g, pv, reversed)
    }

    /// The discriminator alone, without gradient reversal.
    pub fn domain_logits(&self, g: &mut Graph<F>, pv: &ParamVars, features: Var) -> Result<Var> {
        self.check_features(g, features)?;
        let head = &self.domain_head;
        let h = g.linear(pv.var(head.fc1_w), Some(pv.var(head.fc1_b)), features)?;
        let h = g.relu(h)?;
        g.linear(pv.var(head.fc2_w), Some(pv.var(head.fc2_b)), h)
    }

    /// Eval-mode logits for a batch of clips.
    pub fn predict_logits(&self, videos: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g);
        let x = g.constant(videos.clone());
        let f = self.extract_features(&mut g, &pv, x)?;
        let l = self.classify_action(&mut g, &pv, f, HeadMode::Eval)?;
        Ok(g.value(l).clone())
    }

    /// Eval-mode embeddings for a batch of clips.
    pub fn embed(&self, videos: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g);
        let x = g.constant(videos.clone());
        let f = self.extract_features(&mut g, &pv, x)?;
        Ok(g.value(f).clone())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.params.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Builds the model for `config` and fills it from a checkpoint file.
    pub fn load_checkpoint(config: &BackboneConfig, num_classes: usize, path: impl AsRef<Path>) -> Result<Self> {
        let mut bundle = Self::init(config, num_classes, 0)?;
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let stored = ParamStore::<F>::read_from(&mut f)?;
        bundle.params.load_values(&stored)?;
        Ok(bundle)
    }
}
