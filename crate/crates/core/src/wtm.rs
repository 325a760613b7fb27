//! Weighted template matching.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Raster};
use crate::imaging::{crop, enhance_adaptive, ClaheParams, Region};
use crate::landmark::{Landmark, Point};
use crate::pnm::{read_gray, write_bytes, write_pgm};

const MAGIC: &[u8; 8] = b"HALDTMPL";

/// Largest template side.
pub const MAX_TEMPLATE_SIDE: usize = 95;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTemplate {
    pub landmark: Landmark,
    pub template: Raster,
    pub weights: Raster,
    /// Landmark position inside the template frame.
    pub anchor: Point,
    pub trained_on: usize,
}

impl WeightedTemplate {
    pub fn width(&self) -> usize {
        self.template.width
    }

    pub fn height(&self) -> usize {
        self.template.height
    }

    pub fn validate(&self) -> Result<()> {
        let (tw, th) = (self.template.width, self.template.height);
        if (self.weights.width, self.weights.height) != (tw, th) {
            return Err(Error::DimensionMismatch {
                expected: (tw, th),
                actual: (self.weights.width, self.weights.height),
            });
        }
        check_weights(&self.weights)?;
        let a = self.anchor;
        if !(a.x >= 0.0 && a.x < tw as f64 && a.y >= 0.0 && a.y < th as f64) {
            return Err(Error::Invariant(format!(
                "anchor ({}, {}) outside {tw}x{th} template",
                a.x, a.y
            )));
        }
        Ok(())
    }

    /// Replaces the weights, keeping dimensions.
    pub fn with_weights(mut self, weights: Raster) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    /// Pixels left, above, right and below the anchor's integer cell.
    pub fn anchor_extents(&self) -> (i64, i64, i64, i64) {
        let ax = self.anchor.x.floor() as i64;
        let ay = self.anchor.y.floor() as i64;
        (
            ax,
            ay,
            self.width() as i64 - 1 - ax,
            self.height() as i64 - 1 - ay,
        )
    }

    /// Window in which every anchor position inside `certain` is a valid placement.
    pub fn search_window(&self, certain: &Region, width: usize, height: usize) -> Result<Region> {
        let (l, t, r, b) = self.anchor_extents();
        certain
            .expand(l, t, r, b)
            .clip_to(width, height)
            .ok_or(Error::EmptyIntersection)
    }
}

fn check_weights(w: &Raster) -> Result<()> {
    if w.data.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidWeights);
    }
    if w.data.iter().map(|&v| v as f64).sum::<f64>() <= 0.0 {
        return Err(Error::InvalidWeights);
    }
    Ok(())
}

/// Unnormalized Gaussian centred on `anchor`, sigma = min(w, h) / 4.
pub fn gaussian_weights(width: usize, height: usize, anchor: Point) -> Raster {
    let sigma = width.min(height) as f64 / 4.0;
    let mut out = Raster::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let d2 = (x as f64 - anchor.x).powi(2) + (y as f64 - anchor.y).powi(2);
            out.set(x, y, (-d2 / (2.0 * sigma * sigma)).exp() as f32);
        }
    }
    out
}

/// Averages crops aligned on their landmark points. Crops should already
/// be contrast-enhanced. `weights` overrides the default Gaussian.
pub fn build_template(
    landmark: Landmark,
    crops: &[(GrayImage, Point)],
    weights: Option<Raster>,
) -> Result<WeightedTemplate> {
    if crops.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let cells: Vec<(i64, i64)> = crops
        .iter()
        .map(|(_, p)| (p.x.round() as i64, p.y.round() as i64))
        .collect();
    let mut left = i64::MAX;
    let mut top = i64::MAX;
    let mut right = i64::MAX;
    let mut bottom = i64::MAX;
    for ((img, _), &(kx, ky)) in crops.iter().zip(&cells) {
        left = left.min(kx);
        top = top.min(ky);
        right = right.min(img.width() as i64 - 1 - kx);
        bottom = bottom.min(img.height() as i64 - 1 - ky);
    }
    if left < 0 || top < 0 || right < 0 || bottom < 0 {
        return Err(Error::NoOverlap);
    }
    let tw = (left + right + 1) as usize;
    let th = (top + bottom + 1) as usize;
    let mut sum = vec![0f64; tw * th];
    for ((img, _), &(kx, ky)) in crops.iter().zip(&cells) {
        let (ox, oy) = ((kx - left) as usize, (ky - top) as usize);
        for y in 0..th {
            for x in 0..tw {
                sum[y * tw + x] += img.get(ox + x, oy + y) as f64;
            }
        }
    }
    let n = crops.len() as f64;
    let template = Raster::from_vec(tw, th, sum.iter().map(|&s| (s / n) as f32).collect())?;

    let (mut fx, mut fy) = (0.0, 0.0);
    for ((_, p), &(kx, ky)) in crops.iter().zip(&cells) {
        fx += p.x - kx as f64;
        fy += p.y - ky as f64;
    }
    let anchor = Point::new(
        (left as f64 + fx / n).clamp(0.0, tw as f64 - 0.5),
        (top as f64 + fy / n).clamp(0.0, th as f64 - 0.5),
    );
    let weights = weights.unwrap_or_else(|| gaussian_weights(tw, th, anchor));
    let t = WeightedTemplate {
        landmark,
        template,
        weights,
        anchor,
        trained_on: crops.len(),
    };
    t.validate()?;
    Ok(t)
}

/// Weighted squared error of the template against `src` placed at `(ox, oy)`.
fn score_at(t: &WeightedTemplate, src: &Raster, ox: usize, oy: usize) -> f64 {
    let tw = t.template.width;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for y in 0..t.template.height {
        let trow = &t.template.data[y * tw..(y + 1) * tw];
        let wrow = &t.weights.data[y * tw..(y + 1) * tw];
        let start = (oy + y) * src.width + ox;
        let srow = &src.data[start..start + tw];
        for x in 0..tw {
            let w = wrow[x] as f64;
            let d = trow[x] as f64 - srow[x] as f64;
            num += w * d * d;
            den += w;
        }
    }
    num / den
}

/// Σw(T−W)² / Σw.
pub fn wmse(t: &WeightedTemplate, window: &Raster) -> Result<f64> {
    if (window.width, window.height) != (t.width(), t.height()) {
        return Err(Error::DimensionMismatch {
            expected: (t.width(), t.height()),
            actual: (window.width, window.height),
        });
    }
    Ok(score_at(t, window, 0, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// Anchor position in full-image coordinates.
    pub point: Point,
    pub score: f64,
    /// Top-left corner of the best placement, full-image coordinates.
    pub placement: (i64, i64),
}

/// Best placement of `t` inside `region`. With `clahe` set, the region
/// crop is enhanced first (tile shrunk to fit).
pub fn match_template(
    t: &WeightedTemplate,
    img: &GrayImage,
    region: &Region,
    clahe: Option<&ClaheParams>,
) -> Result<MatchResult> {
    let cropped = crop(img, region)?;
    let (cw, ch) = (cropped.image.width(), cropped.image.height());
    if cw < t.width() || ch < t.height() {
        return Err(Error::RegionSmallerThanTemplate {
            region: (cw, ch),
            template: (t.width(), t.height()),
        });
    }
    let local = match clahe.and_then(|p| p.fitted_to(cw, ch)) {
        Some(p) => enhance_adaptive(&cropped.image, &p)?,
        None => cropped.image,
    };
    let (ox, oy, score) = best_placement(t, &local.to_raster());
    let (rx, ry) = (cropped.region.x0, cropped.region.y0);
    Ok(MatchResult {
        point: Point::new(
            (rx + ox as i64) as f64 + t.anchor.x,
            (ry + oy as i64) as f64 + t.anchor.y,
        ),
        score,
        placement: (rx + ox as i64, ry + oy as i64),
    })
}

/// Exhaustive argmin; ties go to the smallest (y, x).
fn best_placement(t: &WeightedTemplate, src: &Raster) -> (usize, usize, f64) {
    let nx = src.width - t.width() + 1;
    let ny = src.height - t.height() + 1;
    let rows: Vec<(usize, f64)> = (0..ny)
        .into_par_iter()
        .map(|oy| {
            let mut best = (0, f64::INFINITY);
            for ox in 0..nx {
                let s = score_at(t, src, ox, oy);
                if s < best.1 {
                    best = (ox, s);
                }
            }
            best
        })
        .collect();
    let mut best = (0, 0, f64::INFINITY);
    for (oy, &(ox, s)) in rows.iter().enumerate() {
        if s < best.2 {
            best = (ox, oy, s);
        }
    }
    best
}

/// Reads a hand-made weight map (PGM or PNG, value / 255).
pub fn load_weight_map(path: &Path, width: usize, height: usize) -> Result<Raster> {
    let img = read_gray(path)?;
    if (img.width(), img.height()) != (width, height) {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            actual: (img.width(), img.height()),
        });
    }
    let r = Raster::from_vec(
        width,
        height,
        img.pixels().iter().map(|&v| v as f32 / 255.0).collect(),
    )?;
    check_weights(&r)?;
    Ok(r)
}

fn encode_f32(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * r.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(r.width as u32).to_le_bytes());
    out.extend_from_slice(&(r.height as u32).to_le_bytes());
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_f32(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::UnsupportedFormat("not a HALDTMPL raster".into()));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension);
    }
    let body = &bytes[16..];
    if body.len() != 4 * w * h {
        return Err(Error::UnsupportedFormat(format!(
            "raster body holds {} bytes, {w}x{h} needs {}",
            body.len(),
            4 * w * h
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Raster::from_vec(w, h, data)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_template(t: &WeightedTemplate, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pgm(&dir.join("template.pgm"), &t.template.to_gray(1.0)?)?;
    write_bytes(&dir.join("template.f32"), &encode_f32(&t.template))?;
    write_bytes(&dir.join("weights.f32"), &encode_f32(&t.weights))?;
    write_bytes(
        &dir.join("anchor.txt"),
        format!("{} {}\n", t.anchor.x, t.anchor.y).as_bytes(),
    )?;
    let mut meta = String::new();
    writeln!(meta, "landmark {}", t.landmark).expect("string write");
    writeln!(meta, "trained_on {}", t.trained_on).expect("string write");
    write_bytes(&dir.join("meta.txt"), meta.as_bytes())
}

pub fn load_template(dir: &Path) -> Result<WeightedTemplate> {
    let template = decode_f32(&read(&dir.join("template.f32"))?)?;
    let weights = decode_f32(&read(&dir.join("weights.f32"))?)?;
    let anchor_text = read_text(&dir.join("anchor.txt"))?;
    let nums: Vec<f64> = anchor_text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: 1,
            msg: "bad anchor.txt".into(),
        })?;
    if nums.len() != 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "anchor.txt needs `ax ay`".into(),
        });
    }
    let meta = read_text(&dir.join("meta.txt"))?;
    let mut landmark = None;
    let mut trained_on = 0;
    for (i, line) in meta.lines().enumerate() {
        match line.split_once(' ') {
            Some(("landmark", v)) => landmark = Some(v.trim().parse::<Landmark>()?),
            Some(("trained_on", v)) => {
                trained_on = v.trim().parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad training count `{v}`"),
                })?
            }
            _ => {}
        }
    }
    let landmark = landmark.ok_or(Error::Parse {
        line: 1,
        msg: "meta.txt lacks a landmark line".into(),
    })?;
    let t = WeightedTemplate {
        landmark,
        template,
        weights,
        anchor: Point::new(nums[0], nums[1]),
        trained_on,
    };
    t.validate()?;
    Ok(t)
}
