//! Six-manifest datasets (source/target × train/val/test) and their on-disk
//! layout: `<dir>/<domain>_<split>.csv` (+ `.classes`) and
//! `<dir>/clips/<video_id>.ctan`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::data::clips::ClipSet;
use crate::data::manifest::{DomainTag, Manifest, SegmentRecord, Split};
use crate::data::split::{split_test_equidistant, split_val_random};
use crate::data::synthetic::{generate_synthetic, SyntheticConfig, SyntheticDomain};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

pub const CLIP_DIR: &str = "clips";

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSplits {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

impl DomainSplits {
    /// Equidistant 8:2 test split per class, then a seeded 9:1 train/val split.
    pub fn build(records: &[SegmentRecord], class_names: &[String], val_seed: u64) -> Result<Self> {
        let (train_all, test) = split_test_equidistant(records);
        let (train, val) = split_val_random(&train_all, val_seed)?;
        Ok(DomainSplits {
            train: Manifest::new(train, Split::Train, class_names.to_vec())?,
            val: Manifest::new(val, Split::Val, class_names.to_vec())?,
            test: Manifest::new(test, Split::Test, class_names.to_vec())?,
        })
    }

    pub fn get(&self, split: Split) -> &Manifest {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub class_names: Vec<String>,
    pub source: DomainSplits,
    pub target: DomainSplits,
    pub videos: HashMap<String, Tensor<f32>>,
}

pub fn manifest_file_name(domain: DomainTag, split: Split) -> String {
    format!("{domain}_{split}.csv")
}

impl Benchmark {
    pub fn from_domains(
        source: SyntheticDomain,
        target: SyntheticDomain,
        class_names: Vec<String>,
        split_seed: u64,
    ) -> Result<Self> {
        let s = DomainSplits::build(&source.records, &class_names, derive_seed(split_seed, "source"))?;
        let t = DomainSplits::build(&target.records, &class_names, derive_seed(split_seed, "target"))?;
        let videos = source
            .videos
            .into_iter()
            .chain(target.videos)
            .map(|v| (v.video_id, v.frames))
            .collect();
        Ok(Benchmark { class_names, source: s, target: t, videos })
    }

    pub fn synthesize(cfg: &SyntheticConfig, split_seed: u64) -> Result<Self> {
        let (source, target) = generate_synthetic(cfg)?;
        Self::from_domains(source, target, cfg.class_names(), split_seed)
    }

    pub fn splits(&self, domain: DomainTag) -> &DomainSplits {
        match domain {
            DomainTag::Source => &self.source,
            DomainTag::Target => &self.target,
        }
    }

    pub fn manifest(&self, domain: DomainTag, split: Split) -> &Manifest {
        self.splits(domain).get(split)
    }

    pub fn clip_set(&self, domain: DomainTag, split: Split) -> Result<ClipSet> {
        ClipSet::from_manifest(self.manifest(domain, split), &self.videos)
    }

    /// Writes every manifest and clip file. Returns the manifest paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let clip_dir = dir.join(CLIP_DIR);
        std::fs::create_dir_all(&clip_dir)?;
        let mut ids: Vec<&String> = self.videos.keys().collect();
        ids.sort();
        for id in ids {
            self.videos[id].save(clip_dir.join(format!("{id}.ctan")))?;
        }
        let mut paths = Vec::new();
        for domain in [DomainTag::Source, DomainTag::Target] {
            for split in Split::ALL {
                let p = dir.join(manifest_file_name(domain, split));
                self.manifest(domain, split).save(&p)?;
                paths.push(p);
            }
        }
        Ok(paths)
    }

    /// Reads a directory written by [`Benchmark::write`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |d, s| Manifest::load(dir.join(manifest_file_name(d, s)));
        let source = DomainSplits {
            train: load(DomainTag::Source, Split::Train)?,
            val: load(DomainTag::Source, Split::Val)?,
            test: load(DomainTag::Source, Split::Test)?,
        };
        let target = DomainSplits {
            train: load(DomainTag::Target, Split::Train)?,
            val: load(DomainTag::Target, Split::Val)?,
            test: load(DomainTag::Target, Split::Test)?,
        };
        let class_names = source.train.class_names.clone();
        for m in [&source.val, &source.test, &target.train, &target.val, &target.test] {
            if m.class_names != class_names {
                return Err(Error::Format("manifests disagree on the class list".into()));
            }
        }
        let mut videos = HashMap::new();
        for m in [&source.train, &source.val, &source.test, &target.train, &target.val, &target.test] {
            for r in &m.records {
                if !videos.contains_key(&r.video_id) {
                    let p = dir.join(CLIP_DIR).join(format!("{}.ctan", r.video_id));
                    videos.insert(r.video_id.clone(), Tensor::<f32>::load(&p)?);
                }
            }
        }
        Ok(Benchmark { class_names, source, target, videos })
    }
}
