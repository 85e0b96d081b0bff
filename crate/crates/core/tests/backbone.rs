mod support;

use ctan_core::attention::{BlockVariant, CtaBlock};
use ctan_core::backbone::{dropout_mask, BackboneConfig, HeadMode, InputGeometry, ModelBundle, StageConfig};
use ctan_core::ops::Conv3dGeometry;
use ctan_core::rng::rng_from_seed;
use ctan_core::{Graph, GrlCoefficient, Tensor};
use support::{max_abs_diff, seeded};

fn small_config() -> BackboneConfig {
    let stage = |c| StageConfig { out_channels: c, kernel: [3, 3, 3], stride: [1, 2, 2], padding: [1, 1, 1] };
    BackboneConfig {
        input: InputGeometry { frames: 4, channels: 1, height: 8, width: 8 },
        stages: vec![stage(4), stage(8), stage(8)],
        cta_after: vec![1],
        variant: BlockVariant::CT,
        reduction: 2,
        feature_dim: 8,
        action_hidden: 6,
        domain_hidden: 5,
        dropout: 0.5,
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = BackboneConfig::default();
    let a = ModelBundle::<f32>::init(&cfg, 4, 11).unwrap();
    let b = ModelBundle::<f32>::init(&cfg, 4, 11).unwrap();
    let c = ModelBundle::<f32>::init(&cfg, 4, 12).unwrap();
    let bytes = |m: &ModelBundle<f32>| {
        let mut v = Vec::new();
        m.params.write_to(&mut v).unwrap();
        v
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn parameter_count_matches_closed_form() {
    for variant in BlockVariant::ALL {
        let cfg = BackboneConfig { variant, ..BackboneConfig::default() };
        let k = 4;
        let m = ModelBundle::<f32>::init(&cfg, k, 0).unwrap();
        // convs: Co*Ci*27 + Co
        let convs = (8 * 27 + 8) + (16 * 8 * 27 + 16) + (32 * 16 * 27 + 32);
        // block after stage 1 sees T = 16, C = 16 with r = 4
        let ca = 2 * 16 * 4 + 16 + 4;
        let ta = 2 * 16 * 4 + 16 + 4;
        let block = match variant {
            BlockVariant::C => ca,
            BlockVariant::T => ta,
            _ => ca + ta,
        };
        let heads = (32 * 32 + 32 + 32 * k + k) + (32 * 32 + 32 + 32 * 2 + 2);
        assert_eq!(m.params.numel(), convs + block + heads, "{variant}");
        assert_eq!(CtaBlock::param_count(variant, 16, 16, 4), block);
    }
}

#[test]
fn config_policy_errors() {
    let mut cfg = BackboneConfig::default();
    cfg.cta_after = vec![0];
    assert!(cfg.validate().is_err());
    cfg.cta_after = vec![2];
    assert!(cfg.validate().is_err());
    cfg.cta_after = vec![5];
    assert!(cfg.validate().is_err());
    let mut cfg = BackboneConfig::default();
    cfg.feature_dim = 16;
    assert!(cfg.validate().is_err());
    let mut cfg = BackboneConfig::default();
    cfg.input.height = 1;
    cfg.input.width = 1;
    cfg.stages[0].padding = [0, 0, 0];
    assert!(ModelBundle::<f32>::init(&cfg, 4, 0).is_err());
}

#[test]
fn identity_stage_averages_constant_input() {
    let cfg = BackboneConfig {
        input: InputGeometry { frames: 3, channels: 1, height: 4, width: 5 },
        stages: vec![StageConfig { out_channels: 1, kernel: [1, 1, 1], stride: [1, 1, 1], padding: [0, 0, 0] }],
        cta_after: vec![],
        feature_dim: 1,
        ..BackboneConfig::default()
    };
    let mut m = ModelBundle::<f64>::init(&cfg, 2, 0).unwrap();
    let id = m.params.find("stage0.conv.weight").unwrap();
    *m.params.get_mut(id) = Tensor::ones(&[1, 1, 1, 1, 1]);
    let x = Tensor::full(&[2, 3, 1, 4, 5], 3.0);
    let f = m.embed(&x).unwrap();
    assert_eq!(f.shape(), &[2, 1]);
    assert!(f.data().iter().all(|&v| v == 3.0));
}

#[test]
fn extractor_equals_hand_composed_pipeline() {
    let cfg = small_config();
    let m = ModelBundle::<f64>::init(&cfg, 3, 5).unwrap();
    let x = seeded(&[2, 4, 1, 8, 8], 6);
    let feat = m.embed(&x).unwrap();

    let geo = Conv3dGeometry::new([1, 2, 2], [1, 1, 1]);
    let p = |name: &str| m.params.get(m.params.find(name).unwrap()).clone();
    let relu = |t: Tensor<f64>| t.map(|v| v.max(0.0));
    let mut h = x.clone();
    for i in 0..3 {
        h = relu(support::conv3d(&h, &p(&format!("stage{i}.conv.weight")), Some(&p(&format!("stage{i}.conv.bias"))), geo.stride, geo.padding));
        if i == 1 {
            let (_, block) = m.blocks().next().unwrap();
            let mut g = Graph::new();
            let pv = m.bind(&mut g);
            let hv = g.constant(h.clone());
            let out = block.forward(&mut g, &pv, hv).unwrap();
            h = g.value(out).clone();
        }
    }
    // global average over (T, H, W)
    let s = h.shape().to_vec();
    let mut pooled = vec![0.0; s[0] * s[2]];
    for n in 0..s[0] {
        for t in 0..s[1] {
            for c in 0..s[2] {
                for hw in 0..s[3] * s[4] {
                    pooled[n * s[2] + c] += h.data()[((n * s[1] + t) * s[2] + c) * s[3] * s[4] + hw];
                }
            }
        }
    }
    let denom = (s[1] * s[3] * s[4]) as f64;
    let pooled: Vec<f64> = pooled.iter().map(|v| v / denom).collect();
    assert_eq!(feat.shape(), &[2, 8]);
    assert!(max_abs_diff(feat.data(), &pooled) < 1e-6);
}

fn domain_loss_grads(m: &ModelBundle<f64>, x: &Tensor<f64>, coeff: Option<f64>) -> (Vec<f64>, Vec<Option<Tensor<f64>>>) {
    let mut g = Graph::new();
    let pv = m.bind(&mut g);
    let xv = g.constant(x.clone());
    let f = m.extract_features(&mut g, &pv, xv).unwrap();
    let logits = match coeff {
        Some(l) => m.discriminate_domain(&mut g, &pv, f, GrlCoefficient::new(l).unwrap()).unwrap(),
        None => m.domain_logits(&mut g, &pv, f).unwrap(),
    };
    let loss = g.softmax_cross_entropy(logits, &[1, 0, 1]).unwrap();
    let value = g.value(logits).data().to_vec();
    let mut grads = g.backward(loss).unwrap();
    (value, pv.collect(&mut grads))
}

#[test]
fn gradient_reversal_contract() {
    let m = ModelBundle::<f64>::init(&small_config(), 3, 8).unwrap();
    let x = seeded(&[3, 4, 1, 8, 8], 9);
    let (free_logits, free) = domain_loss_grads(&m, &x, None);
    for lambda in [0.0, 0.5, 1.0] {
        let (logits, grads) = domain_loss_grads(&m, &x, Some(lambda));
        assert_eq!(logits, free_logits, "forward must not depend on lambda");
        for (id, (g, f)) in m.params.ids().zip(grads.iter().zip(&free)) {
            let name = m.params.name(id);
            let (Some(g), Some(f)) = (g, f) else {
                assert!(g.is_none() && f.is_none(), "{name} reached by only one path");
                assert!(name.starts_with("action."));
                continue;
            };
            if ModelBundle::<f64>::is_extractor_param(name) {
                for (&a, &b) in g.data().iter().zip(f.data()) {
                    let want = -lambda * b;
                    assert!((a - want).abs() <= 1e-6 * want.abs().max(1e-12), "{name} at {lambda}: {a} vs {want}");
                }
            } else {
                assert_eq!(g.data(), f.data(), "{name} sits after the reversal");
            }
        }
    }
}

#[test]
fn heads_contracts() {
    let cfg = small_config();
    let mut m = ModelBundle::<f64>::init(&cfg, 3, 1).unwrap();
    let feats = seeded(&[4, 8], 2);

    // eval mode is deterministic
    let eval = |m: &ModelBundle<f64>| {
        let mut g = Graph::new();
        let pv = m.bind(&mut g);
        let f = g.constant(feats.clone());
        let l = m.classify_action(&mut g, &pv, f, HeadMode::Eval).unwrap();
        g.value(l).clone()
    };
    assert_eq!(eval(&m), eval(&m));

    // train mode replays a seeded mask
    let mut g = Graph::new();
    let pv = m.bind(&mut g);
    let f = g.constant(feats.clone());
    let mut rng = rng_from_seed(77);
    let logits = m.classify_action(&mut g, &pv, f, HeadMode::Train(&mut rng)).unwrap();
    let mask: Vec<f64> = dropout_mask(&mut rng_from_seed(77), 4 * cfg.action_hidden, cfg.dropout);
    let head = &m.action_head;
    let p = |id| m.params.get(id).clone();
    let (w1, b1, w2, b2) = (p(head.fc1_w), p(head.fc1_b), p(head.fc2_w), p(head.fc2_b));
    let hid = cfg.action_hidden;
    for n in 0..4 {
        let h: Vec<f64> = (0..hid)
            .map(|j| {
                let z: f64 = (0..8).map(|i| w1.data()[j * 8 + i] * feats.data()[n * 8 + i]).sum::<f64>() + b1.data()[j];
                z.max(0.0) * mask[n * hid + j]
            })
            .collect();
        for k in 0..3 {
            let want: f64 = (0..hid).map(|j| w2.data()[k * hid + j] * h[j]).sum::<f64>() + b2.data()[k];
            assert!((g.value(logits).data()[n * 3 + k] - want).abs() < 1e-12);
        }
    }
    assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));

    // zero weights: logits are the output bias
    for id in [m.action_head.fc1_w, m.action_head.fc2_w] {
        let shape = m.params.get(id).shape().to_vec();
        *m.params.get_mut(id) = Tensor::zeros(&shape);
    }
    *m.params.get_mut(m.action_head.fc2_b) = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
    let l = eval(&m);
    for row in l.data().chunks(3) {
        assert_eq!(row, &[0.5, -1.0, 2.0]);
    }

    // shape errors
    let mut g = Graph::new();
    let pv = m.bind(&mut g);
    let bad = g.constant(seeded(&[2, 7], 3));
    assert!(m.classify_action(&mut g, &pv, bad, HeadMode::Eval).is_err());
    assert!(m.discriminate_domain(&mut g, &pv, bad, GrlCoefficient::ONE).is_err());
    let bad_video = g.constant(seeded(&[1, 4, 2, 8, 8], 4));
    assert!(m.extract_features(&mut g, &pv, bad_video).is_err());
}

#[test]
fn outputs_have_contract_shapes() {
    let m = ModelBundle::<f32>::init(&BackboneConfig::default(), 5, 3).unwrap();
    let x = Tensor::full(&[2, 16, 1, 28, 28], 0.25f32);
    assert_eq!(m.embed(&x).unwrap().shape(), &[2, 32]);
    assert_eq!(m.predict_logits(&x).unwrap().shape(), &[2, 5]);
    let mut g = Graph::new();
    let pv = m.bind(&mut g);
    let xv = g.constant(x.clone());
    let f = m.extract_features(&mut g, &pv, xv).unwrap();
    let d = m.discriminate_domain(&mut g, &pv, f, GrlCoefficient::ONE).unwrap();
    assert_eq!(g.shape(d), &[2, 2]);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = BackboneConfig::default();
    let m = ModelBundle::<f32>::init(&cfg, 4, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save_checkpoint(&path).unwrap();
    let back = ModelBundle::<f32>::load_checkpoint(&cfg, 4, &path).unwrap();
    assert_eq!(back.params, m.params);
    assert!(ModelBundle::<f32>::load_checkpoint(&cfg, 5, &path).is_err());
    let other = BackboneConfig { variant: BlockVariant::C, ..cfg };
    assert!(ModelBundle::<f32>::load_checkpoint(&other, 4, &path).is_err());
}
