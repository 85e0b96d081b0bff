//! In-memory labelled segments and batch assembly.

use std::collections::HashMap;
use std::path::Path;

use crate::data::manifest::{DomainTag, Manifest};
use crate::data::preprocess::{preprocess_clip, CropMode, PreprocessConfig};
use crate::data::window::SEGMENT_LENGTH;
use crate::error::{Error, Result};
use crate::rng::RunRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub start_frame: usize,
    /// Raw (16, C, H0, W0) frames of the segment.
    pub frames: Tensor<f32>,
    pub label: usize,
    pub domain: DomainTag,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipSet {
    pub samples: Vec<Sample>,
}

/// Copies frames `[start, start + 16)` out of a (F, C, H, W) video.
pub fn slice_segment(video: &Tensor<f32>, start: usize) -> Result<Tensor<f32>> {
    let s = video.shape();
    if s.len() != 4 || start + SEGMENT_LENGTH > s[0] {
        return Err(Error::InvalidArgument(format!(
            "segment at {start} does not fit video of shape {s:?}"
        )));
    }
    let per: usize = s[1..].iter().product();
    let data = video.data()[start * per..(start + SEGMENT_LENGTH) * per].to_vec();
    Tensor::new(vec![SEGMENT_LENGTH, s[1], s[2], s[3]], data)
}

impl ClipSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Resolves every manifest record against a map of loaded videos.
    pub fn from_manifest(manifest: &Manifest, videos: &HashMap<String, Tensor<f32>>) -> Result<Self> {
        let samples = manifest
            .records
            .iter()
            .map(|r| {
                let video = videos
                    .get(&r.video_id)
                    .ok_or_else(|| Error::InvalidArgument(format!("no frames for video `{}`", r.video_id)))?;
                Ok(Sample {
                    video_id: r.video_id.clone(),
                    start_frame: r.start_frame,
                    frames: slice_segment(video, r.start_frame)?,
                    label: r.label,
                    domain: r.domain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClipSet { samples })
    }

    /// Loads a manifest's clips from `<clip_dir>/<video_id>.ctan`.
    pub fn load(manifest: &Manifest, clip_dir: impl AsRef<Path>) -> Result<Self> {
        let mut videos = HashMap::new();
        for r in &manifest.records {
            if !videos.contains_key(&r.video_id) {
                let path = clip_dir.as_ref().join(format!("{}.ctan", r.video_id));
                videos.insert(r.video_id.clone(), Tensor::<f32>::load(&path)?);
            }
        }
        Self::from_manifest(manifest, &videos)
    }

    /// Preprocesses the selected samples and stacks them into a
    /// (N, 16, C, crop, crop) batch. With an rng, crops are random per clip;
    /// without, centered.
    pub fn batch(
        &self,
        indices: &[usize],
        cfg: &PreprocessConfig,
        mut rng: Option<&mut RunRng>,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut parts = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("sample index {i} out of range")))?;
            let mode = match rng.as_deref_mut() {
                Some(r) => CropMode::Random(r),
                None => CropMode::Center,
            };
            parts.push(preprocess_clip(&s.frames, SEGMENT_LENGTH, cfg, mode)?);
            labels.push(s.label);
        }
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        Ok((Tensor::stack_leading(&refs)?, labels))
    }
}
