//! Two-stage adversarial training, the adaptation-strength ramp and
//! evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::autograd::{Graph, GrlCoefficient};
use crate::backbone::{HeadMode, ModelBundle};
use crate::data::clips::ClipSet;
use crate::data::manifest::DomainTag;
use crate::data::preprocess::PreprocessConfig;
use crate::error::{Error, Result};
use crate::optim::Sgd;
use crate::real::Real;
use crate::rng::{derived_rng, RunRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Source batch size; target batches have the same size.
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_stage2: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_stage1: 1e-2,
            stage1_epochs: 10,
            stage2_epochs: 20,
            lr_stage2: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            gamma: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage1.is_finite()) || !(self.lr_stage2 > 0.0 && self.lr_stage2.is_finite()) {
            return err(format!(
                "learning rates must be positive, got {} and {}",
                self.lr_stage1, self.lr_stage2
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err(format!("weight_decay {} must be nonnegative", self.weight_decay));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return err(format!("gamma {} must be positive", self.gamma));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Mean source cross-entropy.
    pub l_task: f64,
    /// Mean domain cross-entropy over source and target samples together.
    pub l_domain: f64,
    pub lambda_v: f64,
    /// The extractor's effective objective, `l_task - lambda_v * l_domain`.
    pub total: f64,
}

/// `2 / (1 + exp(-gamma * progress)) - 1`.
pub fn lambda_schedule(progress: f64, gamma: f64) -> Result<GrlCoefficient> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::InvalidArgument(format!("progress {progress} outside [0, 1]")));
    }
    GrlCoefficient::new(2.0 / (1.0 + (-gamma * progress).exp()) - 1.0)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.to_f64() > row[best].to_f64() {
            best = i;
        }
    }
    best
}

/// Number of rows of an (N, K) logit matrix whose argmax equals the label.
pub fn count_correct<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

/// Result of one optimization step.
#[derive(Clone, Debug)]
pub struct StepOutcome<F> {
    pub loss: LossBreakdown,
    /// Train-mode source logits, (N, K).
    pub source_logits: Tensor<F>,
}

/// One forward/backward/update. `L_y` is computed on the source batch; with a
/// target batch, `L_d` is computed on the source (d = 1) and target (d = 0)
/// features behind the gradient reversal layer and both losses are
/// backpropagated together. Without a target batch the step is purely
/// supervised and the discriminator is left untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_step<F: Real>(
    bundle: &mut ModelBundle<F>,
    opt: &mut Sgd<F>,
    source: &Tensor<F>,
    labels: &[usize],
    target: Option<&Tensor<F>>,
    coeff: GrlCoefficient,
    lr: f64,
    dropout_rng: &mut RunRng,
) -> Result<StepOutcome<F>> {
    if labels.is_empty() || source.shape().first() != Some(&labels.len()) {
        return Err(Error::Shape(format!(
            "{} labels for a source batch of shape {:?}",
            labels.len(),
            source.shape()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= bundle.num_classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes: bundle.num_classes });
    }
    let mut g = Graph::new();
    let pv = bundle.bind(&mut g);
    let xs = g.constant(source.clone());
    let fs = bundle.extract_features(&mut g, &pv, xs)?;
    let logits = bundle.classify_action(&mut g, &pv, fs, HeadMode::Train(dropout_rng))?;
    let l_task = g.softmax_cross_entropy(logits, labels)?;

    let (loss, l_domain) = match target {
        Some(t) => {
            let xt = g.constant(t.clone());
            let ft = bundle.extract_features(&mut g, &pv, xt)?;
            let both = g.concat_leading(&[fs, ft])?;
            let d = bundle.discriminate_domain(&mut g, &pv, both, coeff)?;
            let ns = labels.len();
            let nt = g.shape(ft)[0];
            let mut domain_labels = vec![DomainTag::Source.value(); ns];
            domain_labels.extend(std::iter::repeat_n(DomainTag::Target.value(), nt));
            let l_domain = g.softmax_cross_entropy(d, &domain_labels)?;
            (g.add(l_task, l_domain)?, Some(l_domain))
        }
        None => (l_task, None),
    };

    let lt = g.value(l_task).item()?.to_f64();
    let ld = match l_domain {
        Some(v) => g.value(v).item()?.to_f64(),
        None => 0.0,
    };
    if !lt.is_finite() || !ld.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    let lambda_v = coeff.lambda();
    let mut grads = g.backward(loss)?;
    let collected = pv.collect(&mut grads);
    if target.is_some() {
        opt.step(&mut bundle.params, collected, lr)?;
    } else {
        opt.step_selected(&mut bundle.params, collected, lr, |n| !ModelBundle::<F>::is_domain_param(n))?;
    }
    Ok(StepOutcome {
        loss: LossBreakdown { l_task: lt, l_domain: ld, lambda_v, total: lt - lambda_v * ld },
        source_logits: g.value(logits).clone(),
    })
}

/// Endless seeded stream of sample indices, reshuffled on every pass.
#[derive(Clone, Debug)]
pub struct IndexStream {
    order: Vec<usize>,
    pos: usize,
    rng: RunRng,
}

impl IndexStream {
    pub fn new(len: usize, rng: RunRng) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut s = IndexStream { order: (0..len).collect(), pos: 0, rng };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Labelled source clips, unlabelled target clips and the labelled target
/// validation clips used only for monitoring.
pub struct TrainData<'a> {
    pub source_train: &'a ClipSet,
    pub target_train: &'a ClipSet,
    pub target_val: &'a ClipSet,
    pub preprocess: PreprocessConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based, counted across both stages.
    pub epoch: usize,
    pub stage: u8,
    /// Adaptation strength at the epoch's last step.
    pub lambda: f64,
    pub l_task: f64,
    pub l_domain: f64,
    /// Train-mode accuracy over the epoch's source batches.
    pub source_acc: f64,
    pub target_val_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,stage,lambda,l_task,l_domain,source_acc,target_val_acc";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.epoch, m.stage, m.lambda, m.l_task, m.l_domain, m.source_acc, m.target_val_acc
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows))?;
    Ok(())
}

/// Steps per epoch: one pass over the larger of the two training streams.
pub fn steps_per_epoch(source: usize, target: usize, batch: usize) -> usize {
    source.max(target).div_ceil(batch)
}

/// Runs stage 1 (supervised on source only, adaptation strength 0,
/// `lr_stage1`) and stage 2 (source and target, ramped strength,
/// `lr_stage2`), logging one metrics row per epoch. Stage 1 rows report
/// `l_domain = 0`.
/// `on_stage_end(stage, bundle)` fires after each stage, including empty ones.
pub fn train(
    bundle: ModelBundle<f32>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mut on_stage_end: impl FnMut(u8, &ModelBundle<f32>) -> Result<()>,
) -> Result<(ModelBundle<f32>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    data.preprocess.validate()?;
    if data.source_train.is_empty() || data.target_train.is_empty() || data.target_val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut bundle = bundle;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut source_stream = IndexStream::new(data.source_train.len(), derived_rng(cfg.seed, "shuffle/source"))?;
    let mut target_stream = IndexStream::new(data.target_train.len(), derived_rng(cfg.seed, "shuffle/target"))?;
    let mut source_crop = derived_rng(cfg.seed, "crop/source");
    let mut target_crop = derived_rng(cfg.seed, "crop/target");
    let mut dropout = derived_rng(cfg.seed, "dropout");

    let steps = steps_per_epoch(data.source_train.len(), data.target_train.len(), cfg.batch_size);
    let stage2_steps = steps * cfg.stage2_epochs;
    let mut metrics = Vec::new();
    let mut epoch = 0;
    let mut stage2_step = 0;
    for (stage, epochs, lr) in [(1u8, cfg.stage1_epochs, cfg.lr_stage1), (2u8, cfg.stage2_epochs, cfg.lr_stage2)] {
        for _ in 0..epochs {
            epoch += 1;
            let (mut sum_task, mut sum_domain, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
            let mut lambda = 0.0;
            for _ in 0..steps {
                let coeff = if stage == 1 {
                    GrlCoefficient::ZERO
                } else {
                    let c = lambda_schedule(stage2_step as f64 / stage2_steps as f64, cfg.gamma)?;
                    stage2_step += 1;
                    c
                };
                let si = source_stream.next_batch(cfg.batch_size);
                let (xs, ys) = data.source_train.batch(&si, &data.preprocess, Some(&mut source_crop))?;
                // stage 1 trains only the extractor and action classifier
                let xt = if stage == 1 {
                    None
                } else {
                    let ti = target_stream.next_batch(cfg.batch_size);
                    Some(data.target_train.batch(&ti, &data.preprocess, Some(&mut target_crop))?.0)
                };
                let out = train_step(&mut bundle, &mut opt, &xs, &ys, xt.as_ref(), coeff, lr, &mut dropout)?;
                sum_task += out.loss.l_task;
                sum_domain += out.loss.l_domain;
                correct += count_correct(&out.source_logits, &ys);
                seen += ys.len();
                lambda = out.loss.lambda_v;
            }
            metrics.push(EpochMetrics {
                epoch,
                stage,
                lambda,
                l_task: sum_task / steps as f64,
                l_domain: sum_domain / steps as f64,
                source_acc: correct as f64 / seen as f64,
                target_val_acc: evaluate(&bundle, data.target_val, &data.preprocess)?,
            });
        }
        on_stage_end(stage, &bundle)?;
    }
    Ok((bundle, metrics))
}

/// Clips per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 32;

/// Eval-mode (center crop, no dropout) logits for every clip, in order.
pub fn predict_all(bundle: &ModelBundle<f32>, clips: &ClipSet, pre: &PreprocessConfig) -> Result<Tensor<f32>> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..clips.len()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = clips.batch(chunk, pre, None)?;
        parts.push(bundle.predict_logits(&x)?);
    }
    let refs: Vec<&Tensor<f32>> = parts.iter().collect();
    Tensor::stack_leading(&refs)
}

/// Fraction of clips whose eval-mode argmax equals the label.
pub fn evaluate(bundle: &ModelBundle<f32>, clips: &ClipSet, pre: &PreprocessConfig) -> Result<f64> {
    let logits = predict_all(bundle, clips, pre)?;
    let labels: Vec<usize> = clips.samples.iter().map(|s| s.label).collect();
    Ok(count_correct(&logits, &labels) as f64 / labels.len() as f64)
}
