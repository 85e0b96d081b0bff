//! Train/val/test split construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::manifest::SegmentRecord;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Within each class, records are ordered by (video_id, start_frame) and every
/// fifth one (positions 4, 9, 14, ...) goes to test, giving an 8:2 split that
/// is stratified and deterministic. Returns `(train, test)`, grouped by class.
pub fn split_test_equidistant(records: &[SegmentRecord]) -> (Vec<SegmentRecord>, Vec<SegmentRecord>) {
    let mut by_class: BTreeMap<usize, Vec<&SegmentRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.label).or_default().push(r);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut group) in by_class {
        group.sort_by(|a, b| {
            a.video_id
                .cmp(&b.video_id)
                .then(a.start_frame.cmp(&b.start_frame))
        });
        for (i, r) in group.into_iter().enumerate() {
            if i % 5 == 4 {
                test.push(r.clone());
            } else {
                train.push(r.clone());
            }
        }
    }
    (train, test)
}

/// Seeded 9:1 split: after a shuffle, the first `ceil(m / 10)` records are
/// validation. Both outputs keep the input's relative order.
pub fn split_val_random(records: &[SegmentRecord], seed: u64) -> Result<(Vec<SegmentRecord>, Vec<SegmentRecord>)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = records.len();
    let n_val = m.div_ceil(10);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut is_val = vec![false; m];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .zip(is_val)
        .partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(r, _)| r).collect(),
        val.into_iter().map(|(r, _)| r).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::DomainTag;

    fn recs(class: usize, n: usize) -> Vec<SegmentRecord> {
        (0..n)
            .map(|i| SegmentRecord::new(format!("v{class}_{i:02}"), 0, class, DomainTag::Source))
            .collect()
    }

    #[test]
    fn equidistant_positions() {
        let (train, test) = split_test_equidistant(&recs(0, 10));
        let ids: Vec<&str> = test.iter().map(|r| r.video_id.as_str()).collect();
        assert_eq!(ids, vec!["v0_04", "v0_09"]);
        assert_eq!(train.len(), 8);
        let (train, test) = split_test_equidistant(&recs(1, 4));
        assert_eq!((train.len(), test.len()), (4, 0));
    }

    #[test]
    fn val_counts() {
        let (t, v) = split_val_random(&recs(0, 10), 3).unwrap();
        assert_eq!((t.len(), v.len()), (9, 1));
        let (t, v) = split_val_random(&recs(0, 7), 3).unwrap();
        assert_eq!((t.len(), v.len()), (6, 1));
        let (t, v) = split_val_random(&recs(0, 11), 3).unwrap();
        assert_eq!((t.len(), v.len()), (9, 2));
        assert!(split_val_random(&[], 3).is_err());
        assert_eq!(split_val_random(&recs(0, 30), 8).unwrap(), split_val_random(&recs(0, 30), 8).unwrap());
    }
}
