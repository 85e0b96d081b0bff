use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctan_cli::config::{RunConfig, StageSection};
use ctan_core::backbone::ModelBundle;
use ctan_core::data::{DomainTag, Manifest, Split};
use ctan_core::trainer::evaluate;
use ctan_core::Tensor;

fn ctan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctan")).args(args).output().expect("running ctan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// A config small enough to train in well under a second.
fn smoke_config(dir: &Path) -> (RunConfig, PathBuf) {
    let mut cfg = RunConfig::default();
    let syn = cfg.data.synthetic.as_mut().unwrap();
    syn.clips_per_class_per_domain = 5;
    syn.height = 16;
    syn.width = 16;
    syn.pattern_sigma = 2.0;
    cfg.preprocess.resize = 16;
    cfg.preprocess.crop = 12;
    let stage = |c| StageSection { out_channels: c, kernel: [3, 3, 3], stride: [1, 2, 2], padding: [1, 1, 1] };
    cfg.backbone.stages = vec![stage(4), stage(8), stage(8)];
    cfg.backbone.reduction = 2;
    cfg.backbone.action_hidden = 8;
    cfg.backbone.domain_hidden = 8;
    cfg.train.batch_size = 4;
    cfg.train.stage1_epochs = 1;
    cfg.train.stage2_epochs = 1;
    cfg.ablate.seeds = vec![1];
    cfg.output_dir = dir.join("run");
    let path = dir.join("smoke.toml");
    std::fs::write(&path, cfg.to_text(false).unwrap()).unwrap();
    (cfg, path)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn init_config_parses_back_to_defaults() {
    let o = ctan(&["init-config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("\n# "));
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
}

#[test]
fn synth_data_writes_six_manifests_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = smoke_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = ctan(&["synth-data", "--config", cfg, "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ctan(&["synth-data", "--config", cfg, "--out", b.to_str().unwrap()]).status.success());

    let mut names = Vec::new();
    for domain in [DomainTag::Source, DomainTag::Target] {
        for split in Split::ALL {
            names.push(format!("{domain}_{split}.csv"));
        }
    }
    let report = stdout(&o);
    let total = report.lines().find(|l| l.starts_with("total")).unwrap();
    let printed: Vec<usize> = total.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(printed.len(), 6);
    for (name, &count) in names.iter().zip(&printed) {
        let m = Manifest::load(a.join(name)).unwrap();
        assert_eq!(m.records.len(), count, "{name}");
        assert_eq!(read(&a.join(name)), read(&b.join(name)));
    }
    let mut clips: Vec<_> = std::fs::read_dir(a.join("clips")).unwrap().map(|e| e.unwrap().file_name()).collect();
    clips.sort();
    assert_eq!(clips.len(), 40);
    for c in clips {
        assert_eq!(read(&a.join("clips").join(&c)), read(&b.join("clips").join(&c)));
    }
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = smoke_config(dir.path());
    let path = path.to_str().unwrap();
    let o = ctan(&["train", "--config", path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = &cfg.output_dir;
    let metrics = String::from_utf8(read(&run.join("metrics.csv"))).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(run.join("stage1.ckpt").is_file() && run.join("stage2.ckpt").is_file());
    let saved = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved, cfg);

    let so = dir.path().join("so");
    let o = ctan(&["train", "--config", path, "--source-only", "--out", so.to_str().unwrap()]);
    assert!(o.status.success());
    let metrics = String::from_utf8(read(&so.join("metrics.csv"))).unwrap();
    for row in metrics.lines().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "1");
        assert_eq!(fields[2], "0.000000");
    }
    assert!(so.join("stage2.ckpt").is_file());
}

#[test]
fn eval_and_export_match_in_process_results() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = smoke_config(dir.path());
    let path = path.to_str().unwrap();
    let data = dir.path().join("data");
    assert!(ctan(&["synth-data", "--config", path, "--out", data.to_str().unwrap()]).status.success());
    assert!(ctan(&["train", "--config", path]).status.success());
    let ckpt = cfg.output_dir.join("stage2.ckpt");
    let manifest = data.join("target_test.csv");
    let args = ["eval", "--config", path, "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()];
    let first = ctan(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = ctan(&args);
    assert_eq!(stdout(&first), stdout(&second));
    let line = stdout(&first);
    let value: f64 = line.trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert_eq!(line.trim().len(), "accuracy=0.0000".len());

    let (m, clips) = ctan_cli::commands::load_clips(&manifest, None).unwrap();
    let model = ModelBundle::<f32>::load_checkpoint(&cfg.backbone(1).unwrap(), m.class_names.len(), &ckpt).unwrap();
    let acc = evaluate(&model, &clips, &cfg.preprocess()).unwrap();
    assert_eq!(format!("{acc:.4}"), format!("{value:.4}"));

    // five-record manifest
    let m = Manifest::load(data.join("target_train.csv")).unwrap();
    let five = Manifest::new(m.records[..5].to_vec(), Split::Test, m.class_names.clone()).unwrap();
    let five_path = data.join("five.csv");
    five.save(&five_path).unwrap();
    let emb = dir.path().join("emb.csv");
    let emb2 = dir.path().join("emb2.csv");
    for dest in [&emb, &emb2] {
        let o = ctan(&[
            "export-embeddings", "--config", path, "--checkpoint", ckpt.to_str().unwrap(),
            "--manifest", five_path.to_str().unwrap(), "--out", dest.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(&emb), read(&emb2));
    let text = String::from_utf8(read(&emb)).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 5);
    let d = cfg.backbone(1).unwrap().feature_dim;
    let (_, five_clips) = ctan_cli::commands::load_clips(&five_path, Some(&data.join("clips"))).unwrap();
    let (x, _) = five_clips.batch(&[0, 1, 2, 3, 4], &cfg.preprocess(), None).unwrap();
    let want = model.embed(&x).unwrap();
    for (r, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), d + 2);
        assert_eq!(fields[d], m.class_names[m.records[r].label]);
        assert_eq!(fields[d + 1], "target");
        for j in 0..d {
            let v: f64 = fields[j].parse().unwrap();
            assert!((v - want.data()[r * d + j] as f64).abs() < 1e-6);
        }
    }
}

#[test]
fn eval_of_constant_logit_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = smoke_config(dir.path());
    let path = path.to_str().unwrap();
    let data = dir.path().join("data");
    assert!(ctan(&["synth-data", "--config", path, "--out", data.to_str().unwrap()]).status.success());
    let m = Manifest::load(data.join("source_test.csv")).unwrap();
    let only: Vec<_> = m.records.iter().filter(|r| r.label == 2).cloned().collect();
    let single = data.join("single.csv");
    Manifest::new(only, Split::Test, m.class_names.clone()).unwrap().save(&single).unwrap();

    let mut model = ModelBundle::<f32>::init(&cfg.backbone(1).unwrap(), 4, 0).unwrap();
    for id in [model.action_head.fc1_w, model.action_head.fc2_w] {
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = Tensor::zeros(&shape);
    }
    for (favoured, want) in [(2, "accuracy=1.0000"), (0, "accuracy=0.0000")] {
        let mut bias = vec![0.0; 4];
        bias[favoured] = 1.0;
        *model.params.get_mut(model.action_head.fc2_b) = Tensor::from_f64(&[4], &bias).unwrap();
        let ckpt = dir.path().join(format!("const{favoured}.ckpt"));
        model.save_checkpoint(&ckpt).unwrap();
        let o = ctan(&["eval", "--config", path, "--checkpoint", ckpt.to_str().unwrap(), "--manifest", single.to_str().unwrap()]);
        assert_eq!(stdout(&o).trim(), want);
    }
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = ctan(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());

    let bad = dir.path().join("bad.toml");
    let text = RunConfig::default().to_text(false).unwrap().replace("variant = \"CT\"", "variant = \"XY\"");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(ctan(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));

    // checkpoint from another architecture
    let (cfg, path) = smoke_config(dir.path());
    let data = dir.path().join("data");
    assert!(ctan(&["synth-data", "--config", path.to_str().unwrap(), "--out", data.to_str().unwrap()]).status.success());
    let other = ModelBundle::<f32>::init(&ctan_core::backbone::BackboneConfig::default(), 4, 0).unwrap();
    let ckpt = dir.path().join("other.ckpt");
    other.save_checkpoint(&ckpt).unwrap();
    let o = ctan(&[
        "eval", "--config", path.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--manifest", data.join("target_test.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).is_empty());
    let _ = cfg;
}

#[test]
fn gradcheck_lists_every_op_once_and_passes() {
    let o = ctan(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("max_rel_error=")).collect();
    let names: Vec<&str> = rows.iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    for op in ["sigmoid", "conv3d", "channel_attention", "temporal_attention", "grad_reverse"] {
        assert!(names.contains(&op), "{op}");
    }
    assert!(rows.iter().all(|l| l.ends_with("pass")));
}

#[test]
fn ablate_emits_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = smoke_config(dir.path());
    let out = dir.path().join("abl");
    let o = ctan(&["ablate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(&out.join("ablation.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,seed_1,mean,gain");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["source-only", "DANN", "C", "T", "TC", "CT"]);
    assert!(lines[1].ends_with(",0.0000"));
    let text = String::from_utf8(read(&out.join("ablation.txt"))).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(stdout(&o).contains("ranking: "));
}
