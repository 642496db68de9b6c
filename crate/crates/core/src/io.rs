//! On-disk formats.
//!
//! * Binary `P5` graymaps. Gray images and binary masks use maxval 255, with
//!   mask foreground written as 255 and any nonzero sample read back as 1.
//!   Label maps use maxval 65535 with big-endian 16-bit samples.
//! * Score-map pairs as JSON: `{"width", "height", "object", "background"}`
//!   with row-major arrays.
//! * Manifests as CSV rows `image,prediction,ground_truth[,scores]`, paths
//!   relative to the manifest. A first row starting with `image` is a header.
//!   Score files hold one number per line, one per prediction blob.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::GrayImage;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelMap, Plane, ScoreMapPair};

/// Largest instance count a 16-bit label map can hold.
pub const MAX_INSTANCES: u32 = 65_534;

/// Raw contents of a P5 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad {what}")))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::UnsupportedFormat("not a netpbm file".into()));
    }
    if bytes[1] != b'5' {
        return Err(Error::UnsupportedFormat(format!(
            "P{} (only binary P5 graymaps are supported)",
            bytes[1] as char
        )));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("no whitespace after maxval".into())),
    }

    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bytes_per_sample;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let samples: Vec<u16> = if bytes_per_sample == 1 {
        payload[..expected].iter().map(|&b| b as u16).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(&v) = samples.iter().find(|&&v| v as u32 > maxval) {
        return Err(Error::MalformedHeader(format!(
            "sample {v} exceeds maxval {maxval}"
        )));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval < 256 {
        out.extend(pgm.samples.iter().map(|&v| v as u8));
    } else {
        for &v in &pgm.samples {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

fn read_pgm(path: &Path) -> Result<Pgm> {
    decode_pgm(&fs::read(path)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn gray_from_pgm(pgm: Pgm) -> Result<GrayImage> {
    if pgm.maxval > 255 {
        return Err(Error::UnsupportedMaxval(pgm.maxval as u32));
    }
    GrayImage::new(
        pgm.width,
        pgm.height,
        pgm.samples.into_iter().map(|v| v as u8).collect(),
    )
}

pub fn mask_from_pgm(pgm: Pgm) -> Result<BinaryMask> {
    BinaryMask::new(
        pgm.width,
        pgm.height,
        pgm.samples.into_iter().map(|v| (v != 0) as u8).collect(),
    )
}

/// Label maps accept any maxval; ids are renumbered to `1..=n` in increasing
/// order if the file skips some.
pub fn labels_from_pgm(pgm: Pgm) -> Result<LabelMap> {
    LabelMap::from_labels_compacted(
        pgm.width,
        pgm.height,
        pgm.samples.into_iter().map(u32::from).collect(),
    )
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    gray_from_pgm(read_pgm(path.as_ref())?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    mask_from_pgm(read_pgm(path.as_ref())?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    labels_from_pgm(read_pgm(path.as_ref())?)
}

pub fn gray_to_pgm(img: &GrayImage) -> Pgm {
    Pgm {
        width: img.width(),
        height: img.height(),
        maxval: 255,
        samples: img.data().iter().map(|&v| v as u16).collect(),
    }
}

pub fn mask_to_pgm(mask: &BinaryMask) -> Pgm {
    Pgm {
        width: mask.width(),
        height: mask.height(),
        maxval: 255,
        samples: mask
            .data()
            .iter()
            .map(|&v| if v != 0 { 255 } else { 0 })
            .collect(),
    }
}

pub fn labels_to_pgm(labels: &LabelMap) -> Result<Pgm> {
    if labels.count() > MAX_INSTANCES {
        return Err(Error::TooManyInstances(labels.count()));
    }
    Ok(Pgm {
        width: labels.width(),
        height: labels.height(),
        maxval: 65535,
        samples: labels.labels().iter().map(|&v| v as u16).collect(),
    })
}

pub fn write_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(&gray_to_pgm(img)))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(&mask_to_pgm(mask)))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(&labels_to_pgm(labels)?))
}

#[derive(Serialize, Deserialize)]
struct ScoreFile {
    width: usize,
    height: usize,
    object: Vec<f64>,
    background: Vec<f64>,
}

pub fn scores_to_json(scores: &ScoreMapPair) -> Result<String> {
    let file = ScoreFile {
        width: scores.width(),
        height: scores.height(),
        object: scores.object().data().to_vec(),
        background: scores.background().data().to_vec(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn scores_from_json(text: &str) -> Result<ScoreMapPair> {
    let f: ScoreFile = serde_json::from_str(text)?;
    ScoreMapPair::new(
        Plane::new(f.width, f.height, f.object)?,
        Plane::new(f.width, f.height, f.background)?,
    )
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreMapPair) -> Result<()> {
    let mut text = scores_to_json(scores)?;
    text.push('\n');
    write_file(path.as_ref(), text.as_bytes())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreMapPair> {
    scores_from_json(&fs::read_to_string(path)?)
}

/// One number per nonblank line.
pub fn read_detection_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path.as_ref())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "{}:{}: not a score: {l:?}",
                        path.as_ref().display(),
                        i + 1
                    ))
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub prediction: PathBuf,
    pub ground_truth: PathBuf,
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let line = row.position().map_or(i + 1, |p| p.line() as usize);
            if row.iter().all(str::is_empty) {
                continue;
            }
            if i == 0 && row.get(0).is_some_and(|c| c.eq_ignore_ascii_case("image")) {
                continue;
            }
            if !(3..=4).contains(&row.len()) {
                return Err(Error::Manifest {
                    line,
                    message: format!("expected 3 or 4 fields, got {}", row.len()),
                });
            }
            let field = |k: usize| -> Result<PathBuf> {
                match row.get(k) {
                    Some(s) if !s.is_empty() => Ok(base.join(s)),
                    _ => Err(Error::Manifest {
                        line,
                        message: format!("empty path in column {}", k + 1),
                    }),
                }
            };
            let image = field(0)?;
            if !seen.insert(image.clone()) {
                return Err(Error::Manifest {
                    line,
                    message: format!("duplicate image {}", image.display()),
                });
            }
            let scores = match row.get(3) {
                Some(s) if !s.is_empty() => Some(base.join(s)),
                _ => None,
            };
            records.push(ManifestRecord {
                image,
                prediction: field(1)?,
                ground_truth: field(2)?,
                scores,
            });
        }
        Ok(Self { records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&fs::read_to_string(path)?, base)
    }
}
