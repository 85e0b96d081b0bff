//! Subcommand implementations. Each writes its report to `out` so tests can
//! capture it.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ctan_core::backbone::ModelBundle;
use ctan_core::data::{Benchmark, ClipSet, DomainTag, Manifest, Split};
use ctan_core::gradcheck::{self, OpReport};
use ctan_core::rng::derive_seed;
use ctan_core::trainer::{self, EpochMetrics, TrainData};

use crate::config::RunConfig;
use crate::Internal;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";

pub fn checkpoint_file(stage: u8) -> String {
    format!("stage{stage}.ckpt")
}

/// Generated or loaded six-manifest dataset for a config.
pub fn load_benchmark(cfg: &RunConfig) -> Result<Benchmark> {
    match (cfg.synthetic(), &cfg.data.manifest_dir) {
        (Some(syn), _) => Ok(Benchmark::synthesize(&syn, derive_seed(cfg.seed, "split"))?),
        (None, Some(dir)) => Benchmark::load(dir).with_context(|| format!("loading manifests from {}", dir.display())),
        (None, None) => bail!("config names no data source"),
    }
}

/// Channel count of the clips in a dataset.
fn channels_of(clips: &ClipSet) -> Result<usize> {
    match clips.samples.first() {
        Some(s) => Ok(s.frames.shape()[1]),
        None => Err(ctan_core::Error::EmptyDataset.into()),
    }
}

pub fn synth_data(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    if cfg.data.synthetic.is_none() {
        bail!("synth-data needs data.synthetic in the config");
    }
    let bench = load_benchmark(cfg)?;
    let paths = bench.write(dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    out.write_all(count_table(&bench).as_bytes())?;
    for p in &paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(paths)
}

/// Segments per class, domain and split, with a total row.
pub fn count_table(bench: &Benchmark) -> String {
    let cols: Vec<(DomainTag, Split)> = [DomainTag::Source, DomainTag::Target]
        .into_iter()
        .flat_map(|d| Split::ALL.into_iter().map(move |s| (d, s)))
        .collect();
    let counts: Vec<Vec<usize>> = cols.iter().map(|&(d, s)| bench.manifest(d, s).class_counts()).collect();
    let width = bench.class_names.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut t = format!("{:<width$}", "class");
    for (d, s) in &cols {
        write!(t, " {:>12}", format!("{d}_{s}")).unwrap();
    }
    t.push('\n');
    for (k, name) in bench.class_names.iter().enumerate() {
        write!(t, "{name:<width$}").unwrap();
        for c in &counts {
            write!(t, " {:>12}", c.get(k).copied().unwrap_or(0)).unwrap();
        }
        t.push('\n');
    }
    write!(t, "{:<width$}", "total").unwrap();
    for c in &counts {
        write!(t, " {:>12}", c.iter().sum::<usize>()).unwrap();
    }
    t.push('\n');
    t
}

/// What `train` leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub target_test_accuracy: f64,
    pub output_dir: PathBuf,
}

pub fn train(cfg: &RunConfig, source_only: bool, out: &mut dyn Write) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    if source_only {
        cfg.train.stage2_epochs = 0;
    }
    let bench = load_benchmark(&cfg)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_text(false)?)?;

    let source = bench.clip_set(DomainTag::Source, Split::Train)?;
    let target = bench.clip_set(DomainTag::Target, Split::Train)?;
    let val = bench.clip_set(DomainTag::Target, Split::Val)?;
    let test = bench.clip_set(DomainTag::Target, Split::Test)?;
    let backbone = cfg.backbone(channels_of(&source)?)?;
    let model = ModelBundle::<f32>::init(&backbone, bench.class_names.len(), derive_seed(cfg.seed, "init"))?;
    let data = TrainData { source_train: &source, target_train: &target, target_val: &val, preprocess: cfg.preprocess() };
    let (model, metrics) = trainer::train(model, &data, &cfg.train_config(derive_seed(cfg.seed, "train")), |stage, m| {
        m.save_checkpoint(dir.join(checkpoint_file(stage)))
    })?;
    trainer::write_metrics(dir.join(METRICS_FILE), &metrics)?;
    let acc = trainer::evaluate(&model, &test, &cfg.preprocess())?;
    out.write_all(trainer::metrics_csv(&metrics).as_bytes())?;
    writeln!(out, "target_test_accuracy={acc:.4}")?;
    Ok(TrainOutcome { metrics, target_test_accuracy: acc, output_dir: dir })
}

/// Clips of one manifest; `clip_dir` defaults to `clips/` beside it.
pub fn load_clips(manifest: &Path, clip_dir: Option<&Path>) -> Result<(Manifest, ClipSet)> {
    let m = Manifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let dir = match clip_dir {
        Some(d) => d.to_path_buf(),
        None => manifest.parent().unwrap_or(Path::new(".")).join(ctan_core::data::benchmark::CLIP_DIR),
    };
    let clips = ClipSet::load(&m, &dir).with_context(|| format!("loading clips from {}", dir.display()))?;
    Ok((m, clips))
}

fn load_model(cfg: &RunConfig, checkpoint: &Path, manifest: &Manifest, clips: &ClipSet) -> Result<ModelBundle<f32>> {
    let backbone = cfg.backbone(channels_of(clips)?)?;
    ModelBundle::load_checkpoint(&backbone, manifest.class_names.len(), checkpoint)
        .with_context(|| format!("checkpoint {} does not fit the configured model", checkpoint.display()))
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, clip_dir: Option<&Path>, out: &mut dyn Write) -> Result<f64> {
    let (m, clips) = load_clips(manifest, clip_dir)?;
    let model = load_model(cfg, checkpoint, &m, &clips)?;
    let acc = trainer::evaluate(&model, &clips, &cfg.preprocess())?;
    writeln!(out, "accuracy={acc:.4}")?;
    Ok(acc)
}

/// One row per clip: the embedding, then the class name and domain.
pub fn export_embeddings(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    clip_dir: Option<&Path>,
    dest: &Path,
) -> Result<usize> {
    let (m, clips) = load_clips(manifest, clip_dir)?;
    let model = load_model(cfg, checkpoint, &m, &clips)?;
    let pre = cfg.preprocess();
    let idx: Vec<usize> = (0..clips.len()).collect();
    let mut text = String::new();
    for chunk in idx.chunks(trainer::EVAL_CHUNK) {
        let (x, _) = clips.batch(chunk, &pre, None)?;
        let emb = model.embed(&x)?;
        let d = emb.shape()[1];
        for (row, &i) in emb.data().chunks(d).zip(chunk) {
            let s = &clips.samples[i];
            for v in row {
                write!(text, "{v:e},").unwrap();
            }
            writeln!(text, "{},{}", m.class_names[s.label], s.domain).unwrap();
        }
    }
    std::fs::write(dest, text).with_context(|| format!("writing {}", dest.display()))?;
    Ok(clips.len())
}

pub fn format_gradcheck(reports: &[OpReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut t = String::new();
    for r in reports {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        writeln!(t, "{:<width$}  max_rel_error={:.3e}  checked={:>5}  {verdict}", r.name, r.max_rel_error, r.checked).unwrap();
    }
    t
}

/// Runs the finite-difference suite; fails if any row exceeds tolerance.
pub fn gradcheck(out: &mut dyn Write) -> Result<Vec<OpReport>> {
    let reports = gradcheck::run()?;
    out.write_all(format_gradcheck(&reports).as_bytes())?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Internal(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    writeln!(out, "all {} checks within {:e}", reports.len(), gradcheck::TOLERANCE)?;
    Ok(reports)
}
