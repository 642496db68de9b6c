//! Overlap classification of prediction blobs against ground-truth instances.
//!
//! Every prediction blob falls into one of four buckets, decided by its
//! overlap set `O(p) = { g : IoU(p, g) > threshold }`:
//!
//! | `|O(p)|` | condition on the single instance `g`       | bucket          |
//! |----------|--------------------------------------------|-----------------|
//! | 0        |                                            | ignored         |
//! | 1        | no other blob overlaps `g`                 | good            |
//! | 1        | at least one other blob also overlaps `g`  | bad, type 2     |
//! | >= 2     |                                            | bad, type 1     |
//!
//! Type 1 blobs are merged predictions covering several animals; the type 1
//! count is the number of distinct instances covered by such blobs. Type 2
//! blobs are fragments of one animal; the type 2 count is the number of
//! distinct fragmented instances. The outcome does not depend on the order in
//! which blobs are visited.

use std::collections::BTreeSet;

use crate::error::{check_dims, Result};
use crate::mask::{connected_components, BinaryMask, Connectivity, LabelMap};

/// Intersection over union of two masks; 0 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// `rows x cols` matrix of IoU between prediction blobs (rows) and
/// ground-truth instances (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct IoUMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl IoUMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry for zero-based prediction `p` and instance `g`.
    #[inline]
    pub fn get(&self, p: usize, g: usize) -> f64 {
        self.values[p * self.cols + g]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.cols..(p + 1) * self.cols]
    }
}

/// IoU of every prediction blob against every ground-truth instance, from a
/// single pass over the pixels.
pub fn iou_matrix(preds: &LabelMap, gt: &LabelMap) -> Result<IoUMatrix> {
    check_dims(gt.dims(), preds.dims())?;
    let rows = preds.count() as usize;
    let cols = gt.count() as usize;
    let mut inter = vec![0usize; rows * cols];
    for (&p, &g) in preds.labels().iter().zip(gt.labels()) {
        if p != 0 && g != 0 {
            inter[(p as usize - 1) * cols + (g as usize - 1)] += 1;
        }
    }
    let pred_area = preds.areas();
    let gt_area = gt.areas();
    let values = inter
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if n == 0 {
                return 0.0;
            }
            let union = pred_area[i / cols] + gt_area[i % cols] - n;
            n as f64 / union as f64
        })
        .collect();
    Ok(IoUMatrix { rows, cols, values })
}

/// Which output a prediction blob was routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlobClass {
    Ignored,
    Good,
    BadType1,
    BadType2,
}

/// The six outputs of the splitter plus the two seen-instance sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub n_good: u32,
    pub n_bad_type1: u32,
    pub n_bad_type2: u32,
    pub good_mask: BinaryMask,
    pub bad1_mask: BinaryMask,
    pub bad2_mask: BinaryMask,
    /// Instances covered by some merged (type 1) blob.
    pub seen_type1: BTreeSet<u32>,
    /// Instances overlapped by two or more blobs (type 2).
    pub seen_type2: BTreeSet<u32>,
    /// Class of each prediction blob, indexed by `id - 1`.
    pub blob_classes: Vec<BlobClass>,
}

impl SplitResult {
    pub fn counts(&self) -> (u32, u32, u32) {
        (self.n_good, self.n_bad_type1, self.n_bad_type2)
    }

    /// Masks in head order: good, bad type 1, bad type 2.
    pub fn masks(&self) -> [&BinaryMask; 3] {
        [&self.good_mask, &self.bad1_mask, &self.bad2_mask]
    }
}

/// Classifies prediction blobs against ground truth. Two regions overlap when
/// their IoU is strictly greater than `overlap_threshold` (0 means any shared
/// pixel).
pub fn split_masks(preds: &LabelMap, gt: &LabelMap, overlap_threshold: f64) -> Result<SplitResult> {
    let m = iou_matrix(preds, gt)?;
    let overlaps = |p: usize, g: usize| m.get(p, g) > overlap_threshold;

    // K(g): how many blobs overlap each instance.
    let hits: Vec<usize> = (0..m.cols())
        .map(|g| (0..m.rows()).filter(|&p| overlaps(p, g)).count())
        .collect();

    let mut seen_type1 = BTreeSet::new();
    let mut seen_type2 = BTreeSet::new();
    let mut n_good = 0u32;
    let mut classes = Vec::with_capacity(m.rows());

    for p in 0..m.rows() {
        let o: Vec<usize> = (0..m.cols()).filter(|&g| overlaps(p, g)).collect();
        let class = match o.as_slice() {
            [] => BlobClass::Ignored,
            [g] if hits[*g] == 1 => {
                n_good += 1;
                BlobClass::Good
            }
            [g] => {
                seen_type2.insert(*g as u32 + 1);
                BlobClass::BadType2
            }
            many => {
                seen_type1.extend(many.iter().map(|&g| g as u32 + 1));
                BlobClass::BadType1
            }
        };
        classes.push(class);
    }

    let (w, h) = preds.dims();
    let mut good_mask = BinaryMask::zeros(w, h);
    let mut bad1_mask = BinaryMask::zeros(w, h);
    let mut bad2_mask = BinaryMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = preds.get(x, y);
            if p == 0 {
                continue;
            }
            match classes[p as usize - 1] {
                BlobClass::Ignored => {}
                BlobClass::Good => good_mask.set(x, y, true),
                BlobClass::BadType1 => bad1_mask.set(x, y, true),
                BlobClass::BadType2 => bad2_mask.set(x, y, true),
            }
        }
    }

    Ok(SplitResult {
        n_good,
        n_bad_type1: seen_type1.len() as u32,
        n_bad_type2: seen_type2.len() as u32,
        good_mask,
        bad1_mask,
        bad2_mask,
        seen_type1,
        seen_type2,
        blob_classes: classes,
    })
}

/// Labels the blobs of a binarized prediction and splits them.
pub fn split_binary(
    prediction: &BinaryMask,
    gt: &LabelMap,
    connectivity: Connectivity,
    overlap_threshold: f64,
) -> Result<SplitResult> {
    let preds = connected_components(prediction, connectivity);
    split_masks(&preds, gt, overlap_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn labels(rows: &[&str]) -> LabelMap {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| {
                r.bytes()
                    .map(|b| if b == b'.' { 0 } else { (b - b'0') as u32 })
            })
            .collect();
        LabelMap::from_labels(w, h, data).unwrap()
    }

    #[test]
    fn iou_basic_cases() {
        let a = BinaryMask::from_rows(&["110", "110", "000"]).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let disjoint = BinaryMask::from_rows(&["000", "000", "111"]).unwrap();
        assert_eq!(iou(&a, &disjoint).unwrap(), 0.0);
        let empty = BinaryMask::zeros(3, 3);
        assert_eq!(iou(&empty, &empty).unwrap(), 0.0);
    }

    #[test]
    fn iou_one_third_for_strip_overlap() {
        let a = BinaryMask::from_rows(&["110", "110", "000"]).unwrap();
        let b = BinaryMask::from_rows(&["000", "110", "110"]).unwrap();
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_dimension_mismatch() {
        let err = iou(&BinaryMask::zeros(2, 2), &BinaryMask::zeros(3, 2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn matrix_identity_for_equal_maps() {
        let gt = labels(&["11..", "11..", "..22", "..22"]);
        let m = iou_matrix(&gt, &gt).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matrix_with_no_predictions() {
        let gt = labels(&["1.", ".2"]);
        let m = iou_matrix(&LabelMap::empty(2, 2), &gt).unwrap();
        assert_eq!((m.rows(), m.cols()), (0, 2));
    }

    #[test]
    fn matrix_half_half() {
        let gt = labels(&["1122", "1122"]);
        let pred = labels(&["1111", "1111"]);
        let m = iou_matrix(&pred, &gt).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn one_to_one_is_good() {
        let gt = labels(&["11..", "11..", "....", "...."]);
        let pred = labels(&[".1..", "11..", "....", "...."]);
        let r = split_masks(&pred, &gt, 0.0).unwrap();
        assert_eq!(r.counts(), (1, 0, 0));
        assert_eq!(r.good_mask, pred.extract_instance(1).unwrap());
    }

    #[test]
    fn merged_blob_is_type1_counting_each_instance() {
        let gt = labels(&["11.22", "11.22"]);
        let pred = labels(&["11111", "11111"]);
        let r = split_masks(&pred, &gt, 0.0).unwrap();
        assert_eq!(r.counts(), (0, 2, 0));
        assert_eq!(r.bad1_mask, BinaryMask::ones(5, 2));
    }

    #[test]
    fn fragments_are_type2_counted_once() {
        let gt = labels(&["1111", "1111"]);
        let pred = labels(&["11.2", "11.2"]);
        let r = split_masks(&pred, &gt, 0.0).unwrap();
        assert_eq!(r.counts(), (0, 0, 1));
        assert_eq!(r.bad2_mask, pred.union_mask());
        assert_eq!(r.seen_type2, BTreeSet::from([1]));
    }

    #[test]
    fn mixed_case_puts_instance_in_both_lists() {
        // p1 touches only g; p2 spans g and h.
        let gt = labels(&["111222", "111222"]);
        let pred = labels(&["1.2222", "1.2222"]);
        let r = split_masks(&pred, &gt, 0.0).unwrap();
        assert_eq!(r.counts(), (0, 2, 1));
        assert_eq!(r.seen_type1, BTreeSet::from([1, 2]));
        assert_eq!(r.seen_type2, BTreeSet::from([1]));
        assert_eq!(
            r.blob_classes,
            vec![BlobClass::BadType2, BlobClass::BadType1]
        );
    }

    #[test]
    fn non_overlapping_blobs_are_ignored() {
        let gt = labels(&["11....", "11...."]);
        let pred = labels(&["....11", "....11"]);
        let r = split_masks(&pred, &gt, 0.0).unwrap();
        assert_eq!(r.counts(), (0, 0, 0));
        assert!(r.good_mask.is_empty() && r.bad1_mask.is_empty() && r.bad2_mask.is_empty());
        assert_eq!(r.blob_classes, vec![BlobClass::Ignored]);
    }

    #[test]
    fn threshold_filters_weak_overlaps() {
        // blob 2 touches instance 1 with IoU 1/8.
        let gt = labels(&["1111", "1111"]);
        let pred = labels(&["1112", "111."]);
        let r0 = split_masks(&pred, &gt, 0.0).unwrap();
        assert_eq!(r0.counts(), (0, 0, 1));
        let r = split_masks(&pred, &gt, 0.2).unwrap();
        assert_eq!(r.counts(), (1, 0, 0));
    }

    #[test]
    fn split_binary_labels_first() {
        let gt = labels(&["11..", "11..", "..22", "..22"]);
        let pred = gt.union_mask();
        let r = split_binary(&pred, &gt, Connectivity::Four, 0.0).unwrap();
        assert_eq!(r.counts(), (2, 0, 0));
        let r8 = split_binary(&pred, &gt, Connectivity::Eight, 0.0).unwrap();
        assert_eq!(r8.counts(), (0, 2, 0));
    }
}
