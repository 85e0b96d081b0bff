//! Central finite-difference verification of every backward rule, in f64.

use rand::Rng;

use crate::attention::{BlockVariant, ChannelAttention, CtaBlock, TemporalAttention};
use crate::autograd::{Fault, Graph, GrlCoefficient, Var};
use crate::backbone::{dropout_mask, BackboneConfig, HeadMode, InputGeometry, ModelBundle, StageConfig};
use crate::error::Result;
use crate::ops::Conv3dGeometry;
use crate::param::{ParamStore, ParamVars};
use crate::rng::{derived_rng, rng_from_seed, RunRng};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

const SEED: u64 = 0x6772_6164;

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Number of scalar partial derivatives compared.
    pub checked: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// A scalar function of some tensors, differentiated analytically and
/// numerically. `scale` multiplies the numeric derivative to form the
/// reference (it is -lambda for the gradient reversal layer and 1 elsewhere).
struct Case {
    name: String,
    inputs: Vec<Tensor<f64>>,
    build: Build,
    scale: f64,
}

fn uniform(rng: &mut RunRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("finite")
}

/// Entries with magnitude in [0.1, 1) and random sign, clear of ReLU's kink.
fn signed(rng: &mut RunRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite")
}

/// `sum(R ⊙ out)` with fixed weights R in [0.5, 1.5], so every output entry
/// contributes a distinct amount. Scalars pass through.
fn readout(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    if shape.is_empty() {
        return Ok(out);
    }
    let mut rng = derived_rng(SEED, "readout");
    let r = g.constant(uniform(&mut rng, &shape, 0.5, 1.5));
    let weighted = g.broadcast_mul(r, out)?;
    g.sum(weighted)
}

fn evaluate(case: &Case, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let out = readout(&mut g, out)?;
    g.value(out).item()
}

fn check(case: &Case, fault: Option<Fault>) -> Result<OpReport> {
    let mut g = Graph::new();
    if let Some(f) = fault {
        g.inject_fault(f);
    }
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let loss = readout(&mut g, out)?;
    let grads = g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut inputs = case.inputs.clone();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(case.inputs[i].shape());
        let analytic = grads.get(v).unwrap_or(&zeros).clone();
        for j in 0..case.inputs[i].len() {
            let x0 = case.inputs[i].data()[j];
            inputs[i].data_mut()[j] = x0 + FD_STEP;
            let up = evaluate(case, &inputs)?;
            inputs[i].data_mut()[j] = x0 - FD_STEP;
            let down = evaluate(case, &inputs)?;
            inputs[i].data_mut()[j] = x0;
            let numeric = case.scale * (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    Ok(OpReport { name: case.name.clone(), max_rel_error: worst, checked })
}

fn case(name: &str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name: name.into(), inputs, build: Box::new(build), scale: 1.0 }
}

/// Parameters become inputs `1..` after the input clip at index 0.
fn model_case(
    name: &str,
    x: Tensor<f64>,
    store: ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &ParamVars, Var) -> Result<Var> + 'static,
) -> Case {
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    case(name, inputs, move |g, vars| {
        let pv = ParamVars::from_vars(vars[1..].to_vec());
        build(g, &pv, vars[0])
    })
}

/// Replaces every parameter with random values so biases are nonzero.
fn randomize(store: &mut ParamStore<f64>, rng: &mut RunRng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = uniform(rng, &shape, -0.5, 0.5);
    }
}

fn op_cases() -> Vec<Case> {
    let mut rng = derived_rng(SEED, "ops");
    let r = &mut rng;
    let mut cases = vec![
        case("reshape", vec![uniform(r, &[2, 6], -1.0, 1.0)], |g, v| g.reshape(v[0], &[3, 4])),
        case("avg_pool_axes", vec![uniform(r, &[2, 3, 4, 2, 3], -1.0, 1.0)], |g, v| {
            g.avg_pool_axes(v[0], &[1, 3, 4])
        }),
        case(
            "linear",
            vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0), uniform(r, &[2, 5, 4], -1.0, 1.0)],
            |g, v| g.linear(v[0], Some(v[1]), v[2]),
        ),
        case("relu", vec![signed(r, &[4, 5])], |g, v| g.relu(v[0])),
        case("sigmoid", vec![uniform(r, &[4, 5], -3.0, 3.0)], |g, v| g.sigmoid(v[0])),
        case(
            "broadcast_mul",
            vec![uniform(r, &[2, 1, 3, 1, 1], -1.0, 1.0), uniform(r, &[2, 4, 3, 2, 2], -1.0, 1.0)],
            |g, v| g.broadcast_mul(v[0], v[1]),
        ),
        case("add", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| {
            g.add(v[0], v[1])
        }),
        case(
            "conv3d",
            vec![
                uniform(r, &[2, 5, 2, 6, 5], -1.0, 1.0),
                uniform(r, &[3, 2, 3, 3, 2], -0.5, 0.5),
                uniform(r, &[3], -0.5, 0.5),
            ],
            |g, v| g.conv3d(v[0], v[1], Some(v[2]), Conv3dGeometry::new([2, 2, 1], [1, 1, 0])),
        ),
        case("softmax_cross_entropy", vec![uniform(r, &[5, 4], -2.0, 2.0)], |g, v| {
            g.softmax_cross_entropy(v[0], &[0, 3, 1, 1, 2])
        }),
    ];
    let lambda = 0.7;
    cases.push(Case {
        scale: -lambda,
        ..case("grad_reverse", vec![uniform(r, &[3, 4], -1.0, 1.0)], move |g, v| {
            g.grad_reverse(v[0], GrlCoefficient::new(lambda)?)
        })
    });
    let mask: Vec<f64> = dropout_mask(&mut rng_from_seed(SEED), 12, 0.5);
    cases.push(case("dropout", vec![uniform(r, &[3, 4], -1.0, 1.0)], move |g, v| {
        g.dropout_with_mask(v[0], mask.clone())
    }));
    cases.push(case(
        "concat_leading",
        vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1, 3], -1.0, 1.0)],
        |g, v| g.concat_leading(&[v[0], v[1]]),
    ));
    cases.push(case("sum", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.sum(v[0])));
    cases
}

fn attention_cases() -> Result<Vec<Case>> {
    let mut rng = derived_rng(SEED, "attention");
    let (n, t, c, h, w) = (2, 8, 8, 3, 2);
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let ca = ChannelAttention::new(&mut store, "ca", c, 4, true, &mut rng)?;
    randomize(&mut store, &mut rng);
    let x = uniform(&mut rng, &[n, t, c, h, w], -1.0, 1.0);
    cases.push(model_case("channel_attention", x, store, move |g, pv, x| Ok(ca.forward(g, pv, x, None)?.0)));

    let mut store = ParamStore::new();
    let ta = TemporalAttention::new(&mut store, "ta", t, 4, true, &mut rng)?;
    randomize(&mut store, &mut rng);
    let x = uniform(&mut rng, &[n, t, c, h, w], -1.0, 1.0);
    cases.push(model_case("temporal_attention", x, store, move |g, pv, x| Ok(ta.forward(g, pv, x, None)?.0)));

    for variant in BlockVariant::ALL {
        let mut store = ParamStore::new();
        let block = CtaBlock::new(&mut store, "cta", variant, t, c, 4, &mut rng)?;
        randomize(&mut store, &mut rng);
        let x = uniform(&mut rng, &[n, t, c, h, w], -1.0, 1.0);
        cases.push(model_case(&format!("cta_block_{variant}"), x, store, move |g, pv, x| {
            block.forward(g, pv, x)
        }));
    }
    Ok(cases)
}

/// Stages, CT block and both heads; loss is action cross-entropy (with a
/// fixed dropout mask) plus domain cross-entropy.
fn composite_case() -> Result<Case> {
    let stage = |c| StageConfig { out_channels: c, kernel: [3, 3, 3], stride: [1, 2, 2], padding: [1, 1, 1] };
    let config = BackboneConfig {
        input: InputGeometry { frames: 4, channels: 1, height: 6, width: 6 },
        stages: vec![stage(4), stage(4), stage(8)],
        cta_after: vec![1],
        variant: BlockVariant::CT,
        reduction: 2,
        feature_dim: 8,
        action_hidden: 6,
        domain_hidden: 6,
        dropout: 0.5,
    };
    composite_for(config, 3, "extractor_cta_heads")
}

/// One stage, no attention, D = 8, K = 3.
fn tiny_case() -> Result<Case> {
    let config = BackboneConfig {
        input: InputGeometry { frames: 3, channels: 2, height: 4, width: 4 },
        stages: vec![StageConfig { out_channels: 8, kernel: [2, 3, 3], stride: [1, 1, 1], padding: [0, 1, 1] }],
        cta_after: vec![],
        variant: BlockVariant::CT,
        reduction: 4,
        feature_dim: 8,
        action_hidden: 5,
        domain_hidden: 5,
        dropout: 0.5,
    };
    composite_for(config, 3, "tiny_model_end_to_end")
}

fn composite_for(config: BackboneConfig, classes: usize, name: &str) -> Result<Case> {
    let mut model = ModelBundle::<f64>::init(&config, classes, SEED)?;
    let mut rng = derived_rng(SEED, name);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        if model.params.name(id).ends_with("bias") || model.params.name(id).ends_with(".b1") || model.params.name(id).ends_with(".b2") {
            let shape = model.params.get(id).shape().to_vec();
            *model.params.get_mut(id) = uniform(&mut rng, &shape, -0.1, 0.1);
        }
    }
    let inp = config.input;
    let n = 3;
    let x = uniform(&mut rng, &[n, inp.frames, inp.channels, inp.height, inp.width], 0.0, 1.0);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let store = model.params.clone();
    Ok(model_case(name, x, store, move |g, pv, x| {
        let f = model.extract_features(g, pv, x)?;
        let mut mask_rng = rng_from_seed(SEED);
        let logits = model.classify_action(g, pv, f, HeadMode::Train(&mut mask_rng))?;
        let l_task = g.softmax_cross_entropy(logits, &labels)?;
        let d = model.domain_logits(g, pv, f)?;
        let l_domain = g.softmax_cross_entropy(d, &[1, 0, 1])?;
        g.add(l_task, l_domain)
    }))
}

/// Runs every check. With `fault`, the analytic side uses the deliberately
/// broken backward rule.
pub fn run_with(fault: Option<Fault>) -> Result<Vec<OpReport>> {
    let mut cases = op_cases();
    cases.extend(attention_cases()?);
    cases.push(composite_case()?);
    cases.push(tiny_case()?);
    cases.iter().map(|c| check(c, fault)).collect()
}

pub fn run() -> Result<Vec<OpReport>> {
    run_with(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-15);
    }
}
