//! Dataset construction: windowing, splits, manifests, preprocessing and the
//! synthetic two-domain generator.

pub mod benchmark;
pub mod clips;
pub mod manifest;
pub mod preprocess;
pub mod split;
pub mod synthetic;
pub mod window;

pub use benchmark::{Benchmark, DomainSplits};
pub use clips::{ClipSet, Sample};
pub use manifest::{DomainTag, Manifest, SegmentRecord, Split};
pub use preprocess::{preprocess_clip, CropMode, PreprocessConfig};
pub use split::{split_test_equidistant, split_val_random};
pub use synthetic::{generate_domain, generate_synthetic, DomainShift, SyntheticConfig};
pub use window::{window_segments, SEGMENT_LENGTH, SEGMENT_OVERLAP};
