//! Mask average precision.
//!
//! Detections are matched greedily, in descending score order, to the
//! still-unclaimed ground-truth instance of highest IoU. Precision is
//! interpolated at the 101 recall points `0.00, 0.01, ..., 1.00`.
//!
//! Binary outputs carry no confidence. A [`Detection`] without a score is
//! ranked by its area divided by the image area, so larger blobs come first;
//! remaining ties go to the larger blob, then to the earlier first pixel in
//! raster order, then to the earlier image.

use std::cmp::Ordering;

use crate::error::{check_dims, Error, Result};
use crate::mask::{connected_components, BinaryMask, Connectivity, LabelMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    mask: BinaryMask,
    score: Option<f64>,
    area: usize,
    first_pixel: usize,
}

impl Detection {
    pub fn new(mask: BinaryMask, score: Option<f64>) -> Result<Self> {
        let first_pixel = mask
            .first_pixel()
            .ok_or(Error::EmptyInput("detection mask has no foreground"))?;
        if let Some(s) = score {
            if !s.is_finite() {
                return Err(Error::InvalidParameter(format!("detection score {s}")));
            }
        }
        let area = mask.area();
        Ok(Self {
            mask,
            score,
            area,
            first_pixel,
        })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn area(&self) -> usize {
        self.area
    }

    /// The explicit score, or normalized area when none was given.
    pub fn score(&self) -> f64 {
        self.score.unwrap_or_else(|| {
            let (w, h) = self.mask.dims();
            self.area as f64 / (w * h) as f64
        })
    }

    fn rank(&self, other: &Self) -> Ordering {
        other
            .score()
            .total_cmp(&self.score())
            .then(other.area.cmp(&self.area))
            .then(self.first_pixel.cmp(&other.first_pixel))
    }
}

/// One detection per connected blob of a binary prediction. `scores`, when
/// given, is indexed by blob id - 1.
pub fn detections_from_mask(
    prediction: &BinaryMask,
    connectivity: Connectivity,
    scores: Option<&[f64]>,
) -> Result<Vec<Detection>> {
    let blobs = connected_components(prediction, connectivity);
    if let Some(s) = scores {
        if s.len() != blobs.count() as usize {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} prediction blobs",
                s.len(),
                blobs.count()
            )));
        }
    }
    blobs
        .instance_masks()
        .into_iter()
        .enumerate()
        .map(|(i, m)| Detection::new(m, scores.map(|s| s[i])))
        .collect()
}

/// Stable sort into matching order.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(Detection::rank);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// True positive flag per detection, in input order.
    pub true_positive: Vec<bool>,
    /// Claimed instance id per detection.
    pub matched: Vec<Option<u32>>,
    pub false_negatives: usize,
}

/// Greedy matching of detections, taken in the given order, against `gt`.
/// A detection claims the unclaimed instance with the highest IoU (lowest id
/// on ties) when that IoU is at least `iou_threshold`.
pub fn match_detections(
    dets: &[Detection],
    gt: &LabelMap,
    iou_threshold: f64,
) -> Result<MatchResult> {
    let n_gt = gt.count() as usize;
    let gt_area = gt.areas();
    let mut claimed = vec![false; n_gt];
    let mut true_positive = Vec::with_capacity(dets.len());
    let mut matched = Vec::with_capacity(dets.len());
    let mut inter = vec![0usize; n_gt];

    for d in dets {
        check_dims(gt.dims(), d.mask.dims())?;
        inter.iter_mut().for_each(|v| *v = 0);
        for (&m, &g) in d.mask.data().iter().zip(gt.labels()) {
            if m != 0 && g != 0 {
                inter[g as usize - 1] += 1;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for g in 0..n_gt {
            if claimed[g] || inter[g] == 0 {
                continue;
            }
            let iou = inter[g] as f64 / (d.area + gt_area[g] - inter[g]) as f64;
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) if iou >= iou_threshold => {
                claimed[g] = true;
                true_positive.push(true);
                matched.push(Some(g as u32 + 1));
            }
            _ => {
                true_positive.push(false);
                matched.push(None);
            }
        }
    }

    Ok(MatchResult {
        true_positive,
        matched,
        false_negatives: claimed.iter().filter(|&&c| !c).count(),
    })
}

/// 101-point interpolated AP of a ranked TP/FP sequence against `n_gt`
/// instances.
///
/// With no instances, AP is 1 when there are also no detections and 0
/// otherwise.
pub fn average_precision(true_positive: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if true_positive.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(true_positive.len());
    let mut recall = Vec::with_capacity(true_positive.len());
    let mut tp = 0usize;
    for (i, &hit) in true_positive.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }

    let mut sum = 0.0;
    let mut cursor = 0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while cursor < recall.len() && recall[cursor] < level {
            cursor += 1;
        }
        if cursor == recall.len() {
            break;
        }
        sum += precision[cursor];
    }
    sum / 101.0
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub gt: LabelMap,
}

/// AP at one IoU threshold over a set of images.
pub fn ap_at(images: &[ImageEval], iou_threshold: f64) -> Result<f64> {
    struct Pooled {
        image: usize,
        det: usize,
        tp: bool,
    }

    let mut pooled = Vec::new();
    let mut n_gt = 0usize;
    let mut sorted = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let mut dets = img.detections.clone();
        sort_detections(&mut dets);
        let m = match_detections(&dets, &img.gt, iou_threshold)?;
        n_gt += img.gt.count() as usize;
        pooled.extend(m.true_positive.iter().enumerate().map(|(j, &tp)| Pooled {
            image: i,
            det: j,
            tp,
        }));
        sorted.push(dets);
    }
    pooled.sort_by(|a, b| {
        sorted[a.image][a.det]
            .rank(&sorted[b.image][b.det])
            .then(a.image.cmp(&b.image))
            .then(a.det.cmp(&b.det))
    });
    let flags: Vec<bool> = pooled.iter().map(|p| p.tp).collect();
    Ok(average_precision(&flags, n_gt))
}

/// `0.50, 0.55, ..., 0.95`.
pub fn sweep_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct APReport {
    /// `(threshold, AP)` over the 0.50:0.05:0.95 sweep.
    pub per_threshold: Vec<(f64, f64)>,
    pub ap50: f64,
    pub ap70: f64,
    /// Mean over the sweep.
    pub ap50_95: f64,
}

impl APReport {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, ap)| ap)
    }
}

pub fn ap_sweep(images: &[ImageEval]) -> Result<APReport> {
    let per_threshold = sweep_thresholds()
        .into_iter()
        .map(|t| Ok((t, ap_at(images, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let ap50_95 = per_threshold.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold.len() as f64;
    Ok(APReport {
        ap50: per_threshold[0].1,
        ap70: per_threshold[4].1,
        per_threshold,
        ap50_95,
    })
}
