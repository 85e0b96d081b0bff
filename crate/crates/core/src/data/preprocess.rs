//! Clip preprocessing: bilinear resize to a square, crop, scale to [0, 1].

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RunRng;
use crate::tensor::Tensor;

/// Raw frames are stored as 8-bit style intensities in [0, 255].
pub const RAW_MAX: f32 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessConfig {
    /// Side of the square every frame is resized to.
    pub resize: usize,
    /// Side of the square crop taken from the resized frame.
    pub crop: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        // 256 → 224 scaled down: 32 → 28 keeps the 0.875 ratio.
        PreprocessConfig { resize: 32, crop: 28 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resize == 0 || self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} must be in 1..={} (resize)",
                self.crop, self.resize
            )));
        }
        Ok(())
    }
}

pub enum CropMode<'a> {
    /// Crop offset drawn from the rng, shared by every frame of the clip.
    Random(&'a mut RunRng),
    Center,
}

/// Bilinear resize of one (H0, W0) plane to (S, S) with half-pixel centers
/// and edge clamping.
fn resize_plane(src: &[f32], h0: usize, w0: usize, s: usize, dst: &mut [f32]) {
    let axis = |len: usize| -> Vec<(usize, usize, f32)> {
        let scale = len as f64 / s as f64;
        (0..s)
            .map(|d| {
                let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(h0);
    let xs = axis(w0);
    for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = src[y0 * w0 + x0] * (1.0 - fx) + src[y0 * w0 + x1] * fx;
            let bot = src[y1 * w0 + x0] * (1.0 - fx) + src[y1 * w0 + x1] * fx;
            dst[dy * s + dx] = top * (1.0 - fy) + bot * fy;
        }
    }
}

/// Turns a raw (T, C, H0, W0) clip into a (1, T, C, crop, crop) sample with
/// values in [0, 1].
pub fn preprocess_clip(
    frames: &Tensor<f32>,
    expected_frames: usize,
    cfg: &PreprocessConfig,
    mode: CropMode<'_>,
) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let shape = frames.shape();
    if shape.len() != 4 || shape[0] != expected_frames {
        return Err(Error::InvalidArgument(format!(
            "malformed clip: expected ({expected_frames}, C, H, W), got {shape:?}"
        )));
    }
    let (t, c, h0, w0) = (shape[0], shape[1], shape[2], shape[3]);
    let (s, k) = (cfg.resize, cfg.crop);
    let (oy, ox) = match mode {
        CropMode::Center => ((s - k) / 2, (s - k) / 2),
        CropMode::Random(rng) => (rng.random_range(0..=s - k), rng.random_range(0..=s - k)),
    };
    let mut plane = vec![0.0f32; s * s];
    let mut out = Vec::with_capacity(t * c * k * k);
    for src in frames.data().chunks_exact(h0 * w0) {
        resize_plane(src, h0, w0, s, &mut plane);
        for y in oy..oy + k {
            for x in ox..ox + k {
                out.push((plane[y * s + x] / RAW_MAX).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![1, t, c, k, k], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn ramp(t: usize, h: usize, w: usize) -> Tensor<f32> {
        let data = (0..t * h * w).map(|i| (i % 251) as f32).collect();
        Tensor::new(vec![t, 1, h, w], data).unwrap()
    }

    #[test]
    fn eval_is_deterministic_and_shaped() {
        let clip = ramp(16, 40, 36);
        let cfg = PreprocessConfig::default();
        let a = preprocess_clip(&clip, 16, &cfg, CropMode::Center).unwrap();
        let b = preprocess_clip(&clip, 16, &cfg, CropMode::Center).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[1, 16, 1, 28, 28]);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn full_size_crop_is_identity_up_to_scaling() {
        let clip = ramp(16, 32, 32);
        let cfg = PreprocessConfig { resize: 32, crop: 32 };
        let out = preprocess_clip(&clip, 16, &cfg, CropMode::Center).unwrap();
        for (o, i) in out.data().iter().zip(clip.data()) {
            assert_eq!(*o, i / RAW_MAX);
        }
    }

    #[test]
    fn constant_frames_stay_constant() {
        let clip = Tensor::full(&[16, 2, 20, 50], 102.0f32);
        let mut rng = rng_from_seed(4);
        let out = preprocess_clip(&clip, 16, &PreprocessConfig::default(), CropMode::Random(&mut rng)).unwrap();
        assert_eq!(out.shape(), &[1, 16, 2, 28, 28]);
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn random_crop_is_shared_across_frames() {
        // every frame identical → every output frame identical
        let frame: Vec<f32> = (0..32 * 32).map(|i| (i % 97) as f32).collect();
        let data: Vec<f32> = (0..16).flat_map(|_| frame.clone()).collect();
        let clip = Tensor::new(vec![16, 1, 32, 32], data).unwrap();
        let mut rng = rng_from_seed(11);
        let out = preprocess_clip(&clip, 16, &PreprocessConfig::default(), CropMode::Random(&mut rng)).unwrap();
        let per = 28 * 28;
        let first = &out.data()[..per];
        assert!(out.data().chunks_exact(per).all(|f| f == first));
    }

    #[test]
    fn malformed_clips_are_rejected() {
        let cfg = PreprocessConfig::default();
        assert!(preprocess_clip(&ramp(15, 32, 32), 16, &cfg, CropMode::Center).is_err());
        let flat = Tensor::full(&[16, 32], 0.0f32);
        assert!(preprocess_clip(&flat, 16, &cfg, CropMode::Center).is_err());
        let bad = PreprocessConfig { resize: 20, crop: 28 };
        assert!(preprocess_clip(&ramp(16, 32, 32), 16, &bad, CropMode::Center).is_err());
    }
}
