//! Raster primitives: binary masks, instance label maps, real-valued planes
//! and the object/background score pair produced by a segmentation backbone.
//!
//! All grids are row-major with index `y * width + x`.

use std::collections::BTreeMap;

use crate::error::{check_dims, Error, Result};

/// Pixel adjacency used when grouping foreground pixels into blobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidParameter(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }
}

/// A `width x height` grid of {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NotBinary { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Parses rows of `'0'`/`'1'` characters; anything else is ignored.
    /// Handy for fixtures.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let parsed: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| {
                r.bytes()
                    .filter_map(|b| match b {
                        b'0' | b'.' => Some(0),
                        b'1' | b'#' => Some(1),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        let width = parsed.first().map_or(0, Vec::len);
        if parsed.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("ragged mask rows".into()));
        }
        Self::new(width, height, parsed.concat())
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
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Raster index of the first foreground pixel.
    pub fn first_pixel(&self) -> Option<usize> {
        self.data.iter().position(|&v| v != 0)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        check_dims(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a & b != 0)
            .count())
    }

    /// Pixelwise OR, in place.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        check_dims(self.dims(), other.dims())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Instance map: 0 is background and `1..=count` are instance ids.
///
/// Ids are always contiguous. Ground-truth maps read from disk are not
/// required to have connected instances (an occluded animal may be split in
/// two), whereas maps produced by [`connected_components`] are.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    /// Builds a map whose nonzero ids must be exactly `{1..=max}`.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                len: labels.len(),
            });
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        let mut present = vec![false; max as usize + 1];
        for &l in &labels {
            present[l as usize] = true;
        }
        if let Some(missing) = present.iter().skip(1).position(|&p| !p) {
            let expected = missing as u32 + 1;
            let found = (expected..=max)
                .find(|&i| present[i as usize])
                .unwrap_or(max);
            return Err(Error::NonContiguousLabels { expected, found });
        }
        Ok(Self {
            width,
            height,
            labels,
            count: max,
        })
    }

    /// Builds a map from arbitrary nonnegative ids, renumbering the distinct
    /// nonzero ids to `1..=n` in increasing order of their original value.
    pub fn from_labels_compacted(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                len: labels.len(),
            });
        }
        let mut remap = BTreeMap::new();
        for &l in labels.iter().filter(|&&l| l != 0) {
            remap.insert(l, 0u32);
        }
        for (next, v) in remap.values_mut().enumerate() {
            *v = next as u32 + 1;
        }
        let count = remap.len() as u32;
        let labels = labels
            .into_iter()
            .map(|l| if l == 0 { 0 } else { remap[&l] })
            .collect();
        Ok(Self {
            width,
            height,
            labels,
            count,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            count: 0,
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count of each instance, indexed by `id - 1`.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.count as usize];
        for &l in self.labels.iter().filter(|&&l| l != 0) {
            areas[l as usize - 1] += 1;
        }
        areas
    }

    /// Indicator mask of one instance.
    pub fn extract_instance(&self, id: u32) -> Result<BinaryMask> {
        if id == 0 || id > self.count {
            return Err(Error::UnknownInstance {
                id,
                count: self.count,
            });
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| (l == id) as u8).collect(),
        })
    }

    /// Indicator masks of every instance, in id order.
    pub fn instance_masks(&self) -> Vec<BinaryMask> {
        let n = self.count as usize;
        let mut masks = vec![BinaryMask::zeros(self.width, self.height); n];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                masks[l as usize - 1].data[i] = 1;
            }
        }
        masks
    }

    /// Foreground of all instances together.
    pub fn union_mask(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| (l != 0) as u8).collect(),
        }
    }
}

/// Free-function form of [`LabelMap::extract_instance`].
pub fn extract_instance(map: &LabelMap, id: u32) -> Result<BinaryMask> {
    map.extract_instance(id)
}

/// Free-function form of [`LabelMap::union_mask`].
pub fn mask_union(map: &LabelMap) -> BinaryMask {
    map.union_mask()
}

/// Groups foreground pixels into maximal connected blobs.
///
/// Ids are assigned in raster order of each blob's first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    let offsets = connectivity.offsets();

    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if mask.data[n] != 0 && labels[n] == 0 {
                    labels[n] = next;
                    stack.push(n);
                }
            }
        }
    }

    LabelMap {
        width: w,
        height: h,
        labels,
        count: next,
    }
}

/// Row-major real-valued grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
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

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

/// Object and background score maps of a two-class backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapPair {
    object: Plane,
    background: Plane,
}

impl ScoreMapPair {
    pub fn new(object: Plane, background: Plane) -> Result<Self> {
        check_dims(object.dims(), background.dims())?;
        object.check_finite()?;
        background.check_finite()?;
        Ok(Self { object, background })
    }

    pub fn width(&self) -> usize {
        self.object.width
    }

    pub fn height(&self) -> usize {
        self.object.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.object.dims()
    }

    pub fn object(&self) -> &Plane {
        &self.object
    }

    pub fn background(&self) -> &Plane {
        &self.background
    }
}

/// Pixelwise argmax of the score pair. Ties go to background.
pub fn binarize_scores(scores: &ScoreMapPair) -> BinaryMask {
    let (w, h) = scores.dims();
    BinaryMask {
        width: w,
        height: h,
        data: scores
            .object
            .data
            .iter()
            .zip(&scores.background.data)
            .map(|(o, b)| (o > b) as u8)
            .collect(),
    }
}
