use crate::error::{Error, Result};

pub const SEGMENT_LENGTH: usize = 16;
pub const SEGMENT_OVERLAP: usize = 4;

/// Start frames of every `window`-frame segment of a `frame_count`-frame
/// video, with `overlap` frames shared between neighbours. Videos shorter
/// than one window yield nothing.
pub fn window_segments(frame_count: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if overlap >= window {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be smaller than window {window}"
        )));
    }
    let stride = window - overlap;
    Ok((0..)
        .map(|i| i * stride)
        .take_while(|s| s + window <= frame_count)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cases() {
        assert_eq!(window_segments(16, 16, 4).unwrap(), vec![0]);
        assert_eq!(window_segments(28, 16, 4).unwrap(), vec![0, 12]);
        assert_eq!(window_segments(15, 16, 4).unwrap(), Vec::<usize>::new());
        assert_eq!(window_segments(0, 16, 4).unwrap(), Vec::<usize>::new());
        assert_eq!(window_segments(40, 16, 4).unwrap(), vec![0, 12, 24]);
        assert!(window_segments(10, 4, 4).is_err());
    }
}
