//! Two-domain synthetic video generator.
//!
//! Each clip shows a small Gaussian blob moving under a class-specific motion
//! law. The class laws are shared by both domains; domains differ only in
//! background palette and photometric regime (brightness, contrast, noise).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::manifest::{DomainTag, SegmentRecord};
use crate::data::preprocess::RAW_MAX;
use crate::data::window::{window_segments, SEGMENT_LENGTH, SEGMENT_OVERLAP};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, RunRng};
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 4] = ["horizontal", "vertical", "circular", "pulsation"];
pub const PALETTES: usize = 4;

/// Photometric regime of one domain. Offsets and noise are in units of the
/// full intensity range; `contrast_scale` multiplies intensities before the
/// offset is added.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainShift {
    pub brightness_offset: f64,
    pub contrast_scale: f64,
    pub noise_sigma: f64,
    pub background_palette_id: usize,
}

impl DomainShift {
    pub const IDENTITY: DomainShift = DomainShift {
        brightness_offset: 0.0,
        contrast_scale: 1.0,
        noise_sigma: 0.0,
        background_palette_id: 0,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub clips_per_class_per_domain: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Standard deviation of the blob, in pixels.
    pub pattern_sigma: f64,
    pub source: DomainShift,
    pub target: DomainShift,
    /// Optional per-class keep fraction applied to the target domain only
    /// (empty = keep everything).
    pub target_class_keep: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 4,
            clips_per_class_per_domain: 40,
            frames: 16,
            height: 32,
            width: 32,
            channels: 1,
            pattern_sigma: 4.0,
            source: DomainShift::IDENTITY,
            target: DomainShift {
                brightness_offset: 0.3,
                contrast_scale: 0.7,
                noise_sigma: 0.1,
                background_palette_id: 0,
            },
            target_class_keep: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 || self.num_classes > CLASS_NAMES.len() {
            return bad(format!("num_classes must be in 2..={}", CLASS_NAMES.len()));
        }
        if self.clips_per_class_per_domain == 0 || self.channels == 0 {
            return bad("clip count and channels must be positive".into());
        }
        if self.frames < SEGMENT_LENGTH {
            return bad(format!("frames must be at least {SEGMENT_LENGTH}"));
        }
        if !(self.pattern_sigma > 0.0) {
            return bad("pattern_sigma must be positive".into());
        }
        let side = self.height.min(self.width);
        if side < 16 || 4.0 * self.pattern_sigma > side as f64 / 2.0 {
            return bad(format!(
                "pattern of sigma {} does not fit a {}x{} frame",
                self.pattern_sigma, self.height, self.width
            ));
        }
        for s in [&self.source, &self.target] {
            if !(s.noise_sigma >= 0.0) || !(s.contrast_scale > 0.0) || !s.brightness_offset.is_finite() {
                return bad("noise_sigma must be >= 0 and contrast_scale > 0".into());
            }
            if s.background_palette_id >= PALETTES {
                return bad(format!("background palette {} (have {PALETTES})", s.background_palette_id));
            }
        }
        if !self.target_class_keep.is_empty()
            && (self.target_class_keep.len() != self.num_classes
                || self.target_class_keep.iter().any(|f| !(0.0..=1.0).contains(f)))
        {
            return bad("target_class_keep needs one fraction in [0, 1] per class".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        CLASS_NAMES[..self.num_classes].iter().map(|s| s.to_string()).collect()
    }
}

/// Background intensity in [0, 1] for a palette at pixel (y, x).
pub fn background(palette: usize, y: usize, x: usize, h: usize, w: usize) -> f64 {
    let fy = y as f64 / (h - 1) as f64;
    let fx = x as f64 / (w - 1) as f64;
    match palette {
        // soft vertical gradient
        0 => 0.02 + 0.04 * fy,
        // diagonal stripes
        1 => 0.15 + if ((x + y) / 4) % 2 == 0 { 0.15 } else { 0.0 },
        // checkerboard
        2 => 0.1 + if (x / 6 + y / 6) % 2 == 0 { 0.2 } else { 0.0 },
        // radial vignette
        _ => {
            let d = ((fx - 0.5).powi(2) + (fy - 0.5).powi(2)).sqrt();
            0.35 - 0.3 * d
        }
    }
}

/// Per-clip motion parameters drawn from the class law.
#[derive(Clone, Copy, Debug)]
struct Motion {
    class: usize,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
}

impl Motion {
    fn draw(class: usize, frames: usize, h: usize, w: usize, rng: &mut RunRng) -> Motion {
        let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
        let span = (frames - 1) as f64;
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match class {
            // a = fixed row, b = start column, c = velocity
            0 => Motion { class, a: cy + u(-2.0, 2.0), b: w as f64 * u(0.15, 0.25), c: 0.6 * w as f64 / span * u(0.8, 1.0), d: 0.0, e: 0.0 },
            1 => Motion { class, a: cx + u(-2.0, 2.0), b: h as f64 * u(0.15, 0.25), c: 0.6 * h as f64 / span * u(0.8, 1.0), d: 0.0, e: 0.0 },
            // centre (a, b), radius c, phase d, angular speed e
            2 => Motion {
                class,
                a: cy + u(-1.0, 1.0),
                b: cx + u(-1.0, 1.0),
                c: 0.25 * h.min(w) as f64 * u(0.9, 1.1),
                d: u(0.0, 2.0 * PI),
                e: 2.0 * PI / frames as f64 * u(0.8, 1.2),
            },
            // centre (a, b), period c, phase d
            _ => Motion { class, a: cy + u(-2.0, 2.0), b: cx + u(-2.0, 2.0), c: u(5.0, 8.0), d: u(0.0, 2.0 * PI), e: 0.0 },
        }
    }

    /// Blob (row, col, sigma scale, intensity) at frame `t`.
    fn at(&self, t: usize) -> (f64, f64, f64, f64) {
        let t = t as f64;
        match self.class {
            0 => (self.a, self.b + self.c * t, 1.0, 0.9),
            1 => (self.b + self.c * t, self.a, 1.0, 0.9),
            2 => {
                let ang = self.d + self.e * t;
                (self.a + self.c * ang.sin(), self.b + self.c * ang.cos(), 1.0, 0.9)
            }
            _ => {
                let s = (2.0 * PI * t / self.c + self.d).sin();
                (self.a, self.b, 1.0 + 0.7 * s, 0.75 + 0.15 * s)
            }
        }
    }
}

/// One generated video (all frames) with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub label: usize,
    pub domain: DomainTag,
    /// (frames, channels, height, width), raw intensities in [0, 255].
    pub frames: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDomain {
    pub domain: DomainTag,
    pub videos: Vec<SyntheticVideo>,
    pub records: Vec<SegmentRecord>,
}

fn render(cfg: &SyntheticConfig, motion: &Motion, shift: &DomainShift, noise: &mut RunRng) -> Tensor<f32> {
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let mut data = Vec::with_capacity(cfg.frames * c * h * w);
    let bg: Vec<f64> = (0..h * w)
        .map(|i| background(shift.background_palette_id, i / w, i % w, h, w))
        .collect();
    for t in 0..cfg.frames {
        let (py, px, scale, intensity) = motion.at(t);
        let sigma = cfg.pattern_sigma * scale;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for _ in 0..c {
            for (i, &b) in bg.iter().enumerate() {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let blob = intensity * (-((y - py).powi(2) + (x - px).powi(2)) * inv).exp();
                let clean = b.max(blob);
                let mut v = shift.contrast_scale * clean + shift.brightness_offset;
                if shift.noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(noise);
                    v += shift.noise_sigma * z;
                }
                data.push((v.clamp(0.0, 1.0) * RAW_MAX as f64) as f32);
            }
        }
    }
    Tensor::new(vec![cfg.frames, c, h, w], data).expect("finite pixels")
}

/// Generates one domain. Motion parameters depend only on `(seed, class,
/// clip)`, so two domains generated with the same seed share trajectories.
pub fn generate_domain(cfg: &SyntheticConfig, shift: &DomainShift, domain: DomainTag, seed: u64) -> Result<SyntheticDomain> {
    cfg.validate()?;
    let prefix = match domain {
        DomainTag::Source => "src",
        DomainTag::Target => "tgt",
    };
    let mut keep_rng = derived_rng(seed, "keep");
    let mut videos = Vec::new();
    let mut records = Vec::new();
    for class in 0..cfg.num_classes {
        for clip in 0..cfg.clips_per_class_per_domain {
            let mut motion_rng = derived_rng(seed, &format!("motion/{class}/{clip}"));
            let mut noise_rng = derived_rng(seed, &format!("noise/{class}/{clip}"));
            let motion = Motion::draw(class, cfg.frames, cfg.height, cfg.width, &mut motion_rng);
            if domain == DomainTag::Target && !cfg.target_class_keep.is_empty() {
                let keep: f64 = keep_rng.random();
                if keep >= cfg.target_class_keep[class] {
                    continue;
                }
            }
            let frames = render(cfg, &motion, shift, &mut noise_rng);
            let video_id = format!("{prefix}_c{class}_{clip:03}");
            for start in window_segments(cfg.frames, SEGMENT_LENGTH, SEGMENT_OVERLAP)? {
                records.push(SegmentRecord::new(video_id.clone(), start, class, domain));
            }
            videos.push(SyntheticVideo { video_id, label: class, domain, frames });
        }
    }
    Ok(SyntheticDomain { domain, videos, records })
}

/// Source and target domains, each from its own derived seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(SyntheticDomain, SyntheticDomain)> {
    let source = generate_domain(cfg, &cfg.source, DomainTag::Source, derive_seed(cfg.seed, "source"))?;
    let target = generate_domain(cfg, &cfg.target, DomainTag::Target, derive_seed(cfg.seed, "target"))?;
    Ok((source, target))
}
