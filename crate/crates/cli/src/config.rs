//! Run configuration: a flat TOML file of dotted keys
//! (`train.lr_stage1 = 0.03`) mapped onto the core config types.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ctan_core::attention::BlockVariant;
use ctan_core::backbone::{BackboneConfig, InputGeometry, StageConfig};
use ctan_core::data::{DomainShift, PreprocessConfig, SyntheticConfig, SEGMENT_LENGTH};
use ctan_core::rng::derive_seed;
use ctan_core::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: String,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub preprocess: PreprocessSection,
    pub backbone: BackboneSection,
    pub train: TrainSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    /// Directory holding the six `<domain>_<split>.csv` manifests and `clips/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub clips_per_class_per_domain: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pattern_sigma: f64,
    #[serde(default)]
    pub target_class_keep: Vec<f64>,
    pub source: ShiftSection,
    pub target: ShiftSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    pub brightness_offset: f64,
    pub contrast_scale: f64,
    pub noise_sigma: f64,
    pub background_palette_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub resize: usize,
    pub crop: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    pub stages: Vec<StageSection>,
    pub cta_after: Vec<usize>,
    pub reduction: usize,
    pub action_hidden: usize,
    pub domain_hidden: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub stage1_epochs: usize,
    pub lr_stage2: f64,
    pub stage2_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
}

impl From<DomainShift> for ShiftSection {
    fn from(s: DomainShift) -> Self {
        ShiftSection {
            brightness_offset: s.brightness_offset,
            contrast_scale: s.contrast_scale,
            noise_sigma: s.noise_sigma,
            background_palette_id: s.background_palette_id,
        }
    }
}

impl From<ShiftSection> for DomainShift {
    fn from(s: ShiftSection) -> Self {
        DomainShift {
            brightness_offset: s.brightness_offset,
            contrast_scale: s.contrast_scale,
            noise_sigma: s.noise_sigma,
            background_palette_id: s.background_palette_id,
        }
    }
}

impl From<&StageSection> for StageConfig {
    fn from(s: &StageSection) -> Self {
        StageConfig { out_channels: s.out_channels, kernel: s.kernel, stride: s.stride, padding: s.padding }
    }
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let c = SyntheticConfig::default();
        SyntheticSection {
            num_classes: c.num_classes,
            clips_per_class_per_domain: c.clips_per_class_per_domain,
            frames: c.frames,
            height: c.height,
            width: c.width,
            channels: c.channels,
            pattern_sigma: c.pattern_sigma,
            target_class_keep: c.target_class_keep,
            source: c.source.into(),
            target: c.target.into(),
        }
    }
}

impl Default for RunConfig {
    /// The frozen synthetic benchmark.
    fn default() -> Self {
        let b = BackboneConfig::default();
        let p = PreprocessConfig::default();
        RunConfig {
            seed: 0,
            variant: b.variant.to_string(),
            output_dir: PathBuf::from("runs/default"),
            data: DataSection { synthetic: Some(SyntheticSection::default()), manifest_dir: None },
            preprocess: PreprocessSection { resize: p.resize, crop: p.crop },
            backbone: BackboneSection {
                stages: b
                    .stages
                    .iter()
                    .map(|s| StageSection { out_channels: s.out_channels, kernel: s.kernel, stride: s.stride, padding: s.padding })
                    .collect(),
                cta_after: b.cta_after,
                reduction: b.reduction,
                action_hidden: b.action_hidden,
                domain_hidden: b.domain_hidden,
                dropout: b.dropout,
            },
            train: TrainSection {
                batch_size: 8,
                lr_stage1: 0.03,
                stage1_epochs: 5,
                lr_stage2: 0.005,
                stage2_epochs: 50,
                momentum: 0.5,
                weight_decay: 5e-4,
                gamma: 10.0,
            },
            ablate: AblateSection { seeds: vec![1, 2, 3] },
        }
    }
}

/// Explanations printed above each key by `init-config`.
const DOCS: &[(&str, &str)] = &[
    ("seed", "root seed; data, split, init and training streams are derived from it"),
    ("variant", "attention block ordering: C, T, TC or CT"),
    ("output_dir", "where train writes metrics.csv, stage checkpoints and the resolved config"),
    ("data.synthetic.num_classes", "synthetic benchmark (replace with data.manifest_dir for prepared manifests)"),
    ("data.synthetic.pattern_sigma", "blob radius in pixels"),
    ("data.synthetic.target_class_keep", "per-class fraction of target videos kept; empty keeps all"),
    ("data.synthetic.source.brightness_offset", "photometric regime of each domain"),
    ("preprocess.resize", "frames are resized to a square of this side, then cropped"),
    ("backbone.stages", "conv stages, each followed by ReLU"),
    ("backbone.cta_after", "stage indices followed by an attention block; never the first or last"),
    ("backbone.reduction", "reduction ratio of the excitation layers"),
    ("backbone.dropout", "dropout on the action head's hidden layer"),
    ("train.batch_size", "clips per domain per step"),
    ("train.lr_stage1", "stage 1: supervised, adaptation strength fixed at 0"),
    ("train.lr_stage2", "stage 2: adaptation strength ramps from 0 towards 1"),
    ("train.gamma", "steepness of the adaptation-strength ramp"),
    ("ablate.seeds", "one training run per seed and method"),
];

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        v => out.push((prefix.to_string(), v.to_string())),
    }
}

impl RunConfig {
    /// Serializes as one `dotted.key = value` line per leaf.
    pub fn to_text(&self, with_docs: bool) -> Result<String> {
        let value = toml::Value::try_from(self).context("serializing config")?;
        let mut leaves = Vec::new();
        flatten("", &value, &mut leaves);
        let mut out = String::new();
        for (key, v) in leaves {
            if with_docs {
                if let Some((_, doc)) = DOCS.iter().find(|(k, _)| *k == key) {
                    out.push_str(&format!("\n# {doc}\n"));
                }
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing config")?;
        Ok(cfg)
    }

    /// Parses and validates a config file. Relative data paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(dir) = &cfg.data.manifest_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.manifest_dir = Some(base.join(dir));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.manifest_dir) {
            (Some(s), None) => {
                self.synthetic_config(s).validate()?;
                if s.frames < SEGMENT_LENGTH {
                    bail!("data.synthetic.frames must be at least {SEGMENT_LENGTH}");
                }
            }
            (None, Some(dir)) => {
                if !dir.is_dir() {
                    bail!("data.manifest_dir {} does not exist", dir.display());
                }
            }
            _ => bail!("set exactly one of data.synthetic and data.manifest_dir"),
        }
        self.block_variant()?;
        self.preprocess().validate()?;
        self.backbone(1)?.validate()?;
        self.train_config(self.seed).validate()?;
        if self.ablate.seeds.is_empty() {
            bail!("ablate.seeds must name at least one seed");
        }
        Ok(())
    }

    pub fn block_variant(&self) -> Result<BlockVariant> {
        Ok(self.variant.parse()?)
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig { resize: self.preprocess.resize, crop: self.preprocess.crop }
    }

    /// Backbone for clips with `channels` channels; the input extent follows
    /// the crop and the embedding width follows the last stage.
    pub fn backbone(&self, channels: usize) -> Result<BackboneConfig> {
        let b = &self.backbone;
        let stages: Vec<StageConfig> = b.stages.iter().map(StageConfig::from).collect();
        Ok(BackboneConfig {
            input: InputGeometry {
                frames: SEGMENT_LENGTH,
                channels,
                height: self.preprocess.crop,
                width: self.preprocess.crop,
            },
            feature_dim: stages.last().map_or(0, |s| s.out_channels),
            stages,
            cta_after: b.cta_after.clone(),
            variant: self.block_variant()?,
            reduction: b.reduction,
            action_hidden: b.action_hidden,
            domain_hidden: b.domain_hidden,
            dropout: b.dropout,
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            lr_stage1: t.lr_stage1,
            stage1_epochs: t.stage1_epochs,
            stage2_epochs: t.stage2_epochs,
            lr_stage2: t.lr_stage2,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            seed,
            gamma: t.gamma,
        }
    }

    fn synthetic_config(&self, s: &SyntheticSection) -> SyntheticConfig {
        SyntheticConfig {
            num_classes: s.num_classes,
            clips_per_class_per_domain: s.clips_per_class_per_domain,
            frames: s.frames,
            height: s.height,
            width: s.width,
            channels: s.channels,
            pattern_sigma: s.pattern_sigma,
            source: s.source.into(),
            target: s.target.into(),
            target_class_keep: s.target_class_keep.clone(),
            seed: derive_seed(self.seed, "data"),
        }
    }

    /// The generator config, with its seed derived from the root seed.
    pub fn synthetic(&self) -> Option<SyntheticConfig> {
        self.data.synthetic.as_ref().map(|s| self.synthetic_config(s))
    }
}
