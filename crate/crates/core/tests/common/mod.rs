//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks, apart
//! from plain data accessors.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use masksplitter::head::{BadCountTarget, HeadParams, LossTargets};
use masksplitter::{BinaryMask, LabelMap, Plane, ScoreMapPair, SplitResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Pixels = HashSet<(usize, usize)>;

pub fn pixel_sets(map: &LabelMap) -> Vec<Pixels> {
    let mut sets = vec![Pixels::new(); map.count() as usize];
    for y in 0..map.height() {
        for x in 0..map.width() {
            let l = map.get(x, y);
            if l != 0 {
                sets[l as usize - 1].insert((x, y));
            }
        }
    }
    sets
}

pub fn set_iou(a: &Pixels, b: &Pixels) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn mask_of(w: usize, h: usize, pixels: &Pixels) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| pixels.contains(&(x, y)))
}

/// Outcome of a reference splitter: counts and the three masks.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSplit {
    pub counts: (u32, u32, u32),
    pub good: BinaryMask,
    pub bad1: BinaryMask,
    pub bad2: BinaryMask,
    pub seen1: BTreeSet<u32>,
    pub seen2: BTreeSet<u32>,
}

impl RefSplit {
    pub fn matches(&self, r: &SplitResult) -> bool {
        self.counts == r.counts()
            && self.good == r.good_mask
            && self.bad1 == r.bad1_mask
            && self.bad2 == r.bad2_mask
            && self.seen1 == r.seen_type1
            && self.seen2 == r.seen_type2
    }
}

/// Rule-table classifier over explicit pixel sets.
pub fn brute_split(preds: &LabelMap, gt: &LabelMap, threshold: f64) -> RefSplit {
    let (w, h) = preds.dims();
    let p_sets = pixel_sets(preds);
    let g_sets = pixel_sets(gt);
    let overlap: Vec<Vec<bool>> = p_sets
        .iter()
        .map(|p| g_sets.iter().map(|g| set_iou(p, g) > threshold).collect())
        .collect();

    let mut good = Pixels::new();
    let mut bad1 = Pixels::new();
    let mut bad2 = Pixels::new();
    let mut n_good = 0;
    let mut seen1 = BTreeSet::new();
    let mut seen2 = BTreeSet::new();
    for (p, row) in overlap.iter().enumerate() {
        let hit: Vec<usize> = (0..g_sets.len()).filter(|&g| row[g]).collect();
        if hit.is_empty() {
            continue;
        }
        if hit.len() >= 2 {
            bad1.extend(&p_sets[p]);
            seen1.extend(hit.iter().map(|&g| g as u32 + 1));
            continue;
        }
        let g = hit[0];
        let k = overlap.iter().filter(|r| r[g]).count();
        if k == 1 {
            n_good += 1;
            good.extend(&p_sets[p]);
        } else {
            bad2.extend(&p_sets[p]);
            seen2.insert(g as u32 + 1);
        }
    }
    RefSplit {
        counts: (n_good, seen1.len() as u32, seen2.len() as u32),
        good: mask_of(w, h, &good),
        bad1: mask_of(w, h, &bad1),
        bad2: mask_of(w, h, &bad2),
        seen1,
        seen2,
    }
}

/// Single-pass, list-based classifier with argmax column lookup, including its
/// order dependence: only the first prediction reaching an already-listed
/// fragmented instance is copied to the type 2 mask.
pub fn single_pass_split(preds: &LabelMap, gt: &LabelMap, threshold: f64) -> RefSplit {
    let (w, h) = preds.dims();
    let p_sets = pixel_sets(preds);
    let g_sets = pixel_sets(gt);
    let iou: Vec<Vec<f64>> = p_sets
        .iter()
        .map(|p| g_sets.iter().map(|g| set_iou(p, g)).collect())
        .collect();
    let column_hits = |c: usize| iou.iter().filter(|row| row[c] > threshold).count();

    let (mut n_good, mut n_bad1, mut n_bad2) = (0u32, 0u32, 0u32);
    let mut l1 = BTreeSet::new();
    let mut l2 = BTreeSet::new();
    let mut good = Pixels::new();
    let mut bad1 = Pixels::new();
    let mut bad2 = Pixels::new();

    for (b, row) in iou.iter().enumerate() {
        let overlapped: Vec<usize> = (0..row.len()).filter(|&c| row[c] > threshold).collect();
        if overlapped.is_empty() {
            continue;
        }
        // argmax over the row; first maximum wins
        let mut c_star = 0;
        for c in 0..row.len() {
            if row[c] > row[c_star] {
                c_star = c;
            }
        }
        if overlapped.len() == 1 {
            for _c in 0..g_sets.len() {
                if column_hits(c_star) == 1 {
                    n_good += 1;
                    good.extend(&p_sets[b]);
                    break;
                } else if column_hits(c_star) > 1 && !l2.contains(&c_star) {
                    n_bad2 += 1;
                    l2.insert(c_star);
                    bad2.extend(&p_sets[b]);
                    break;
                }
            }
        } else {
            for &c in &overlapped {
                if !l1.contains(&c) {
                    n_bad1 += 1;
                    l1.insert(c);
                }
            }
            bad1.extend(&p_sets[b]);
        }
    }
    RefSplit {
        counts: (n_good, n_bad1, n_bad2),
        good: mask_of(w, h, &good),
        bad1: mask_of(w, h, &bad1),
        bad2: mask_of(w, h, &bad2),
        seen1: l1.into_iter().map(|c| c as u32 + 1).collect(),
        seen2: l2.into_iter().map(|c| c as u32 + 1).collect(),
    }
}

/// Up to `max` random axis-aligned rectangles painted in order, later ones
/// on top; ids compacted.
pub fn random_rect_map(rng: &mut impl Rng, w: usize, h: usize, max: usize) -> LabelMap {
    let n = rng.random_range(0..=max);
    let mut labels = vec![0u32; w * h];
    for id in 1..=n as u32 {
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        let x1 = rng.random_range(x0..w) + 1;
        let y1 = rng.random_range(y0..h) + 1;
        for y in y0..y1 {
            for x in x0..x1 {
                labels[y * w + x] = id;
            }
        }
    }
    LabelMap::from_labels_compacted(w, h, labels).unwrap()
}

/// Each pixel independently background (with probability `p_bg`) or one of
/// `k` ids; ids compacted.
pub fn random_pixel_map(rng: &mut impl Rng, w: usize, h: usize, k: u32, p_bg: f64) -> LabelMap {
    let labels = (0..w * h)
        .map(|_| {
            if k == 0 || rng.random_bool(p_bg) {
                0
            } else {
                rng.random_range(1..=k)
            }
        })
        .collect();
    LabelMap::from_labels_compacted(w, h, labels).unwrap()
}

/// Mixed generator for splitter scenarios: `≤ max` predictions and
/// `≤ max` instances on a `w x h` grid.
pub fn random_scenario(seed: u64, w: usize, h: usize, max: usize) -> (LabelMap, LabelMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds = if rng.random_bool(0.7) {
        random_rect_map(&mut rng, w, h, max)
    } else {
        let k = rng.random_range(0..=max as u32);
        random_pixel_map(&mut rng, w, h, k, 0.6)
    };
    let gt = if rng.random_bool(0.7) {
        random_rect_map(&mut rng, w, h, max)
    } else {
        let k = rng.random_range(0..=max as u32);
        random_pixel_map(&mut rng, w, h, k, 0.6)
    };
    (preds, gt)
}

/// Brute-force AP: match with explicit pixel sets, then for every recall
/// level take the best precision among all prefixes reaching it.
///
/// `images` holds `(detections as (mask, score), ground truth)`.
pub fn brute_ap(images: &[(Vec<(BinaryMask, f64)>, LabelMap)], threshold: f64) -> f64 {
    // rank key: score desc, area desc, first pixel asc, image, input order
    let mut events = Vec::new();
    let mut n_gt = 0usize;
    for (img, (dets, gt)) in images.iter().enumerate() {
        n_gt += gt.count() as usize;
        let g_sets = pixel_sets(gt);
        let mut order: Vec<usize> = (0..dets.len()).collect();
        let key = |i: usize| {
            let m = &dets[i].0;
            let area = m.data().iter().filter(|&&v| v != 0).count();
            let first = m.data().iter().position(|&v| v != 0).unwrap();
            (dets[i].1, area, first)
        };
        order.sort_by(|&a, &b| {
            let (sa, aa, fa) = key(a);
            let (sb, ab, fb) = key(b);
            sb.partial_cmp(&sa)
                .unwrap()
                .then(ab.cmp(&aa))
                .then(fa.cmp(&fb))
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; g_sets.len()];
        for (rank, &i) in order.iter().enumerate() {
            let (m, score) = &dets[i];
            let d: Pixels = (0..m.height())
                .flat_map(|y| (0..m.width()).map(move |x| (x, y)))
                .filter(|&(x, y)| m.get(x, y))
                .collect();
            let mut best: Option<(usize, f64)> = None;
            for (g, gs) in g_sets.iter().enumerate() {
                let v = set_iou(&d, gs);
                if taken[g] || v == 0.0 {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let tp = match best {
                Some((g, v)) if v >= threshold => {
                    taken[g] = true;
                    true
                }
                _ => false,
            };
            let (_, area, first) = key(i);
            events.push((*score, area, first, img, rank, tp));
        }
    }
    events.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });
    let flags: Vec<bool> = events.iter().map(|e| e.5).collect();
    brute_pr_ap(&flags, n_gt)
}

/// 101-point AP by direct enumeration of every PR-curve prefix.
pub fn brute_pr_ap(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let points: Vec<(f64, f64)> = (1..=flags.len())
        .map(|k| {
            let tp = flags[..k].iter().filter(|&&f| f).count();
            (tp as f64 / n_gt as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut total = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= level)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 101.0
}

/// Random configuration for gradient checks: random score pair, random
/// ground truth, random split masks (disjoint) and fully random parameters
/// including biases.
pub struct GradCase {
    pub scores: ScoreMapPair,
    pub split: SplitResult,
    pub targets: LossTargets,
    pub params: HeadParams,
}

pub fn random_grad_case(seed: u64, h: usize, w: usize) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = Plane::from_fn(w, h, |_, _| rng.random_range(-2.0..2.0));
    let bg = Plane::from_fn(w, h, |_, _| rng.random_range(-2.0..2.0));
    let scores = ScoreMapPair::new(obj, bg).unwrap();
    let gt = random_pixel_map(&mut rng, w, h, 3, 0.5);
    let preds = random_rect_map(&mut rng, w, h, 4);
    let split = masksplitter::split_masks(&preds, &gt, 0.0).unwrap();

    // replace the masks with a random disjoint 3-way assignment so every
    // branch sees gated pixels
    let mut split = split;
    let assign: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..4u8)).collect();
    let pick =
        |k: u8| BinaryMask::new(w, h, assign.iter().map(|&a| (a == k) as u8).collect()).unwrap();
    split.good_mask = pick(0);
    split.bad1_mask = pick(1);
    split.bad2_mask = pick(2);

    let targets = LossTargets::new(&gt, &split, BadCountTarget::SplitterCounts);
    let mut params = HeadParams::random(h, w, &mut rng);
    params.unified.bias = rng.random_range(-0.5..0.5);
    for k in 0..3 {
        params.type_convs[k].bias = rng.random_range(-0.5..0.5);
        params.units[k].bias = rng.random_range(-1.0..1.0);
    }
    GradCase {
        scores,
        split,
        targets,
        params,
    }
}

/// Counts of each distinct value.
pub fn histogram<T: Ord + Copy>(values: &[T]) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for &v in values {
        *m.entry(v).or_default() += 1;
    }
    m
}

/// Loop-nest forward pass written directly from the layer description:
/// returns `(good logits, unit outputs)`.
pub fn naive_forward(
    scores: &ScoreMapPair,
    masks: [&BinaryMask; 3],
    p: &HeadParams,
) -> (Vec<f64>, [f64; 3]) {
    let (w, h) = scores.dims();
    let at = |plane: &[f64], x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    let conv = |chans: &[&[f64]], weights: &[f64], bias: f64| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = bias;
                for (c, ch) in chans.iter().enumerate() {
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let k = c * 9 + (dy + 1) as usize * 3 + (dx + 1) as usize;
                            s += weights[k] * at(ch, x + dx, y + dy);
                        }
                    }
                }
                out[y as usize * w + x as usize] = s;
            }
        }
        out
    };
    let unified = conv(
        &[scores.object().data(), scores.background().data()],
        &p.unified.weights,
        p.unified.bias,
    );
    let maps: Vec<Vec<f64>> = p
        .type_convs
        .iter()
        .map(|k| conv(&[&unified], &k.weights, k.bias))
        .collect();
    let mut units = [0.0; 3];
    for k in 0..3 {
        let mut s = p.units[k].bias;
        for i in 0..w * h {
            if masks[k].data()[i] != 0 {
                s += maps[k][i] * p.units[k].weights[i];
            }
        }
        units[k] = s;
    }
    (maps[0].clone(), units)
}

/// Pixelwise cross-entropy of sigmoid(logit), computed the textbook way with
/// log-probabilities; accurate for moderate logits only.
pub fn naive_ce(logits: &[f64], target: &BinaryMask) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(target.data())
        .map(|(&s, &t)| {
            let p = 1.0 / (1.0 + (-s).exp());
            if t != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}
