//! Dataset construction helpers: automatic thresholding of foreground maps,
//! fixed-size crops around each instance, seeded train/validation splits and
//! a synthetic scene generator with controllable occlusion.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dims, Error, Result};
use crate::mask::{LabelMap, Plane, ScoreMapPair};

/// 8-bit grayscale frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &v in &self.data {
            hist[v as usize] += 1;
        }
        hist
    }
}

/// Upper bound on ISODATA iterations. The update is monotone on integer
/// thresholds, so it settles well within 256 steps.
pub const ISODATA_MAX_ITERATIONS: usize = 256;

/// Ridler-Calvard threshold of an image: pixels `<= t` are background.
pub fn isodata_threshold(img: &GrayImage) -> Result<u8> {
    isodata_histogram(&img.histogram()).map(|(t, _)| t)
}

/// ISODATA on a 256-bin histogram. Returns the threshold and the number of
/// updates performed.
///
/// Starts at the rounded global mean and repeats
/// `t <- round((mean(<= t) + mean(> t)) / 2)` until `t` stops changing. `t`
/// is kept in `[min, max - 1]` so both classes stay nonempty.
pub fn isodata_histogram(hist: &[u64; 256]) -> Result<(u8, usize)> {
    let lo = hist
        .iter()
        .position(|&c| c > 0)
        .ok_or(Error::EmptyInput("histogram has no pixels"))?;
    let hi = hist.iter().rposition(|&c| c > 0).unwrap_or(lo);
    if lo == hi {
        return Err(Error::ConstantImage(lo as u8));
    }

    // prefix sums of counts and intensity-weighted counts
    let mut count = [0f64; 257];
    let mut mass = [0f64; 257];
    for (v, &c) in hist.iter().enumerate() {
        count[v + 1] = count[v] + c as f64;
        mass[v + 1] = mass[v] + (v as f64) * c as f64;
    }
    let total = count[256];
    let clamp = |t: f64| (t.round() as usize).clamp(lo, hi - 1);

    let mut t = clamp(mass[256] / total);
    for iteration in 1..=ISODATA_MAX_ITERATIONS {
        let below = mass[t + 1] / count[t + 1];
        let above = (mass[256] - mass[t + 1]) / (total - count[t + 1]);
        let next = clamp((below + above) / 2.0);
        if next == t {
            return Ok((t as u8, iteration));
        }
        t = next;
    }
    Err(Error::NoConvergence(ISODATA_MAX_ITERATIONS))
}

/// Square crop around an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub size: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { size: 250 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub image: GrayImage,
    /// Every instance meeting the window, renumbered `1..` in increasing
    /// order of the original id.
    pub labels: LabelMap,
    /// Top-left corner of the window in the frame.
    pub origin: (usize, usize),
    /// Id of the cropped-around instance inside `labels`. `None` only for a
    /// non-convex instance with no pixel near its own centroid.
    pub instance: Option<u32>,
}

/// Cuts a `size x size` window centred on the rounded pixel centroid of
/// instance `id`, shifted just enough to lie inside the frame.
pub fn crop_around_instance(
    frame: &GrayImage,
    gt: &LabelMap,
    id: u32,
    spec: CropSpec,
) -> Result<Crop> {
    check_dims(frame.dims(), gt.dims())?;
    let (w, h) = frame.dims();
    if spec.size == 0 || spec.size > w || spec.size > h {
        return Err(Error::CropTooLarge {
            size: spec.size,
            width: w,
            height: h,
        });
    }
    if id == 0 || id > gt.count() {
        return Err(Error::UnknownInstance {
            id,
            count: gt.count(),
        });
    }

    let (mut sx, mut sy, mut n) = (0usize, 0usize, 0usize);
    for (i, &l) in gt.labels().iter().enumerate() {
        if l == id {
            sx += i % w;
            sy += i / w;
            n += 1;
        }
    }
    let cx = (sx as f64 / n as f64).round() as isize;
    let cy = (sy as f64 / n as f64).round() as isize;
    let half = (spec.size / 2) as isize;
    let left = (cx - half).clamp(0, (w - spec.size) as isize) as usize;
    let top = (cy - half).clamp(0, (h - spec.size) as isize) as usize;

    let s = spec.size;
    let image = GrayImage::from_fn(s, s, |x, y| frame.get(left + x, top + y));
    let raw: Vec<u32> = (0..s * s)
        .map(|i| gt.get(left + i % s, top + i / s))
        .collect();
    let labels = LabelMap::from_labels_compacted(s, s, raw)?;
    let instance = (0..s * s)
        .find(|&i| gt.get(left + i % s, top + i / s) == id)
        .map(|i| labels.labels()[i]);

    Ok(Crop {
        image,
        labels,
        origin: (left, top),
        instance,
    })
}

/// Seeded random partition into `(train, validation)`, each keeping the input
/// order. The validation set has `round(val_fraction * n)` items.
pub fn split_train_val<T: Clone>(
    items: &[T],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::EmptyInput("nothing to split"));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (val_fraction * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; items.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(items.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (item, v) in items.iter().zip(is_val) {
        if v {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub n_instances: usize,
    /// Largest fraction of a new ellipse allowed to cover earlier instances.
    pub occlusion: f64,
    /// Standard deviation of the Gaussian noise added to each score map.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(width: usize, height: usize, n_instances: usize, occlusion: f64, seed: u64) -> Self {
        Self {
            width,
            height,
            n_instances,
            occlusion,
            noise: 0.35,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scores: ScoreMapPair,
    pub labels: LabelMap,
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Random filled ellipses with noisy object/background scores.
///
/// Pixels shared by two ellipses belong to the one drawn later; an ellipse is
/// rejected if it would erase an earlier instance. When no ellipse fits, a
/// single free pixel is used instead. Scores are `±1` plus noise, so their
/// argmax approximately recovers the union of instances.
pub fn synth_scene(
    width: usize,
    height: usize,
    n_instances: usize,
    occlusion: f64,
    seed: u64,
) -> Result<SynthScene> {
    synth_scene_with(&SynthConfig::new(
        width,
        height,
        n_instances,
        occlusion,
        seed,
    ))
}

pub fn synth_scene_with(cfg: &SynthConfig) -> Result<SynthScene> {
    let (w, h) = (cfg.width, cfg.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("scene must be at least 1x1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.occlusion) {
        return Err(Error::InvalidParameter(format!(
            "occlusion must be in [0, 1], got {}",
            cfg.occlusion
        )));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise {}", cfg.noise)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut owner = vec![0u32; w * h];
    let mut areas: Vec<usize> = Vec::with_capacity(cfg.n_instances);
    let min_dim = w.min(h) as f64;
    let r_lo = (min_dim * 0.08).max(0.8);
    let r_hi = (min_dim * 0.25).max(r_lo + 0.5);

    for id in 1..=cfg.n_instances as u32 {
        let mut pixels = Vec::new();
        let mut accepted = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let a = rng.random_range(r_lo..r_hi);
            let b = rng.random_range(r_lo..r_hi);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let cx = rng.random_range(0.0..w as f64);
            let cy = rng.random_range(0.0..h as f64);
            rasterize_ellipse(w, h, (cx, cy), (a, b), theta, &mut pixels);
            if pixels.is_empty() {
                continue;
            }
            let mut covered = vec![0usize; areas.len()];
            for &i in &pixels {
                if owner[i] != 0 {
                    covered[owner[i] as usize - 1] += 1;
                }
            }
            let n_covered: usize = covered.iter().sum();
            if n_covered as f64 > cfg.occlusion * pixels.len() as f64 {
                continue;
            }
            if covered.iter().zip(&areas).any(|(&c, &a)| c == a) {
                continue;
            }
            for (c, a) in covered.iter().zip(areas.iter_mut()) {
                *a -= c;
            }
            accepted = true;
            break;
        }
        if !accepted {
            let free: Vec<usize> = (0..w * h).filter(|&i| owner[i] == 0).collect();
            if free.is_empty() {
                return Err(Error::SceneTooCrowded {
                    placed: areas.len(),
                    requested: cfg.n_instances,
                });
            }
            pixels.clear();
            pixels.push(free[rng.random_range(0..free.len())]);
        }
        for &i in &pixels {
            owner[i] = id;
        }
        areas.push(pixels.len());
    }

    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut obj = Vec::with_capacity(w * h);
    let mut bg = Vec::with_capacity(w * h);
    for &o in &owner {
        let s = if o != 0 { 1.0 } else { -1.0 };
        obj.push(s + noise.sample(&mut rng));
        bg.push(-s + noise.sample(&mut rng));
    }

    Ok(SynthScene {
        scores: ScoreMapPair::new(Plane::new(w, h, obj)?, Plane::new(w, h, bg)?)?,
        labels: LabelMap::from_labels(w, h, owner)?,
    })
}

fn rasterize_ellipse(
    w: usize,
    h: usize,
    center: (f64, f64),
    axes: (f64, f64),
    theta: f64,
    out: &mut Vec<usize>,
) {
    out.clear();
    let (cx, cy) = center;
    let (a, b) = axes;
    let (sin, cos) = theta.sin_cos();
    let r = a.max(b).ceil() as isize + 1;
    let (x0, y0) = (cx.floor() as isize, cy.floor() as isize);
    for y in (y0 - r).max(0)..=(y0 + r).min(h as isize - 1) {
        for x in (x0 - r).max(0)..=(x0 + r).min(w as isize - 1) {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                out.push(y as usize * w + x as usize);
            }
        }
    }
}
