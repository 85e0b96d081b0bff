//! Block ablation: every method trained once per seed on the same data,
//! reported as mean target-test accuracy and gain over source-only.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use anyhow::Result;

use ctan_core::attention::BlockVariant;
use ctan_core::backbone::ModelBundle;
use ctan_core::data::{Benchmark, ClipSet, DomainTag, Split};
use ctan_core::rng::derive_seed;
use ctan_core::trainer::{self, TrainData};

use crate::commands::load_benchmark;
use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// No attention, stage 1 only.
    SourceOnly,
    /// No attention, both stages.
    Dann,
    /// Attention block of the given ordering, both stages.
    Block(BlockVariant),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SourceOnly,
        Method::Dann,
        Method::Block(BlockVariant::C),
        Method::Block(BlockVariant::T),
        Method::Block(BlockVariant::TC),
        Method::Block(BlockVariant::CT),
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SourceOnly => f.write_str("source-only"),
            Method::Dann => f.write_str("DANN"),
            Method::Block(v) => write!(f, "{v}"),
        }
    }
}

/// Loaded clip sets shared by every run.
pub struct Splits {
    pub source: ClipSet,
    pub target: ClipSet,
    pub val: ClipSet,
    pub test: ClipSet,
    pub classes: usize,
}

impl Splits {
    pub fn from_benchmark(bench: &Benchmark) -> Result<Self> {
        Ok(Splits {
            source: bench.clip_set(DomainTag::Source, Split::Train)?,
            target: bench.clip_set(DomainTag::Target, Split::Train)?,
            val: bench.clip_set(DomainTag::Target, Split::Val)?,
            test: bench.clip_set(DomainTag::Target, Split::Test)?,
            classes: bench.class_names.len(),
        })
    }
}

/// Target-test accuracy of one method trained with one seed.
pub fn run_method(cfg: &RunConfig, splits: &Splits, method: Method, seed: u64) -> Result<f64> {
    let mut cfg = cfg.clone();
    match method {
        Method::SourceOnly => {
            cfg.backbone.cta_after.clear();
            cfg.train.stage2_epochs = 0;
        }
        Method::Dann => cfg.backbone.cta_after.clear(),
        Method::Block(v) => cfg.variant = v.to_string(),
    }
    let channels = splits.source.samples.first().map_or(1, |s| s.frames.shape()[1]);
    let model = ModelBundle::<f32>::init(&cfg.backbone(channels)?, splits.classes, derive_seed(seed, "init"))?;
    let data = TrainData {
        source_train: &splits.source,
        target_train: &splits.target,
        target_val: &splits.val,
        preprocess: cfg.preprocess(),
    };
    let (model, _) = trainer::train(model, &data, &cfg.train_config(derive_seed(seed, "train")), |_, _| Ok(()))?;
    Ok(trainer::evaluate(&model, &splits.test, &cfg.preprocess())?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: Method,
    /// Target-test accuracy per seed, in [0, 1].
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, method: Method) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Mean gain over source-only in percentage points (0 without a
    /// source-only row).
    pub fn gain(&self, method: Method) -> f64 {
        match (self.row(method), self.row(Method::SourceOnly)) {
            (Some(r), Some(base)) => 100.0 * (r.mean() - base.mean()),
            _ => 0.0,
        }
    }

    pub fn to_text(&self) -> String {
        let mut t = format!("{:<12}", "method");
        for s in &self.seeds {
            write!(t, " {:>9}", format!("seed {s}")).unwrap();
        }
        writeln!(t, " {:>9} {:>9}", "mean", "gain").unwrap();
        for r in &self.rows {
            write!(t, "{:<12}", r.method.to_string()).unwrap();
            for a in &r.accuracies {
                write!(t, " {:>9.2}", 100.0 * a).unwrap();
            }
            writeln!(t, " {:>9.2} {:>+9.2}", 100.0 * r.mean(), self.gain(r.method)).unwrap();
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut t = String::from("method");
        for s in &self.seeds {
            write!(t, ",seed_{s}").unwrap();
        }
        t.push_str(",mean,gain\n");
        for r in &self.rows {
            t.push_str(&r.method.to_string());
            for a in &r.accuracies {
                write!(t, ",{:.4}", 100.0 * a).unwrap();
            }
            writeln!(t, ",{:.4},{:.4}", 100.0 * r.mean(), self.gain(r.method)).unwrap();
        }
        t
    }

    /// Methods ordered by mean accuracy, best first.
    pub fn ranking(&self) -> Vec<Method> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.mean().total_cmp(&a.mean()));
        rows.into_iter().map(|r| r.method).collect()
    }
}

/// Trains `methods` × `cfg.ablate.seeds`, reporting progress to `out`.
pub fn run_ablation(cfg: &RunConfig, methods: &[Method], out: &mut dyn Write) -> Result<AblationTable> {
    let splits = Splits::from_benchmark(&load_benchmark(cfg)?)?;
    let mut rows = Vec::new();
    for &method in methods {
        let mut accuracies = Vec::new();
        for &seed in &cfg.ablate.seeds {
            let acc = run_method(cfg, &splits, method, seed)?;
            writeln!(out, "{method} seed {seed}: target test accuracy {acc:.4}")?;
            accuracies.push(acc);
        }
        rows.push(AblationRow { method, accuracies });
    }
    Ok(AblationTable { seeds: cfg.ablate.seeds.clone(), rows })
}

/// Full six-row ablation; writes `ablation.txt` and `ablation.csv` to `dir`.
pub fn ablate(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<AblationTable> {
    let table = run_ablation(cfg, &Method::ALL, out)?;
    std::fs::create_dir_all(dir)?;
    let text = table.to_text();
    std::fs::write(dir.join("ablation.txt"), &text)?;
    std::fs::write(dir.join("ablation.csv"), table.to_csv())?;
    out.write_all(text.as_bytes())?;
    let ranking: Vec<String> = table.ranking().iter().map(Method::to_string).collect();
    writeln!(out, "ranking: {}", ranking.join(" > "))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> AblationTable {
        let rows = Method::ALL
            .iter()
            .enumerate()
            .map(|(i, &method)| AblationRow { method, accuracies: vec![0.25 + 0.05 * i as f64, 0.3 + 0.05 * i as f64] })
            .collect();
        AblationTable { seeds: vec![1, 2], rows }
    }

    #[test]
    fn gain_is_relative_to_source_only() {
        let t = table();
        assert_eq!(t.gain(Method::SourceOnly), 0.0);
        assert!((t.gain(Method::Block(BlockVariant::CT)) - 25.0).abs() < 1e-9);
        assert_eq!(t.ranking()[0], Method::Block(BlockVariant::CT));
    }

    #[test]
    fn layouts_have_six_rows() {
        let t = table();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,seed_1,seed_2,mean,gain");
        assert_eq!(lines.len(), 7);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 5));
        assert_eq!(lines[1], "source-only,25.0000,30.0000,27.5000,0.0000");
        let text = t.to_text();
        assert_eq!(text.lines().count(), 7);
        let widths: Vec<usize> = text.lines().map(str::len).collect();
        assert!(widths.iter().all(|&w| w == widths[0]));
    }
}
