//! Certain regions: per-landmark search windows learned from training
//! annotations in image-normalized coordinates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Region;
use crate::landmark::{Landmark, LandmarkSet, LineKind};
use crate::pnm::write_bytes;

/// Slack added to every half-extent so training extremes survive rounding.
const COVERAGE_SLACK: f64 = 1e-6;
/// Pixel bounds this close to an integer snap to it.
const SNAP: f64 = 1e-7;

/// Window centred at `(u, v)` with half-extents `(du, dv)`, all as fractions
/// of image width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionEntry {
    pub u: f64,
    pub v: f64,
    pub du: f64,
    pub dv: f64,
}

impl RegionEntry {
    /// Normalizes a pixel window.
    pub fn from_region(region: &Region, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        RegionEntry {
            u: (region.x0 as f64 + region.width as f64 / 2.0) / w,
            v: (region.y0 as f64 + region.height as f64 / 2.0) / h,
            du: region.width as f64 / (2.0 * w),
            dv: region.height as f64 / (2.0 * h),
        }
    }

    /// Pixel window for an image of the given size, clipped to its bounds.
    pub fn to_region(&self, width: usize, height: usize) -> Option<Region> {
        let (w, h) = (width as f64, height as f64);
        let (cx, cy) = (self.u * w, self.v * h);
        let (hx, hy) = (self.du * w, self.dv * h);
        let x0 = (cx - hx + SNAP).floor() as i64;
        let y0 = (cy - hy + SNAP).floor() as i64;
        let x1 = ((cx + hx - SNAP).ceil() as i64).max(x0 + 1);
        let y1 = ((cy + hy - SNAP).ceil() as i64).max(y0 + 1);
        Region {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        }
        .clip_to(width, height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    pub entries: BTreeMap<String, RegionEntry>,
    pub margin: f64,
    pub trained_on: usize,
}

/// Image size and expert landmarks of one training case.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a> {
    pub case: &'a str,
    pub width: usize,
    pub height: usize,
    pub landmarks: &'a LandmarkSet,
}

/// Learns a window per landmark in `required`, plus one per edge-fitted
/// line whose endpoints are both required. Half-extents are the largest
/// normalized deviation from the mean, inflated by `margin`.
pub fn learn_regions(
    train: &[TrainingSample<'_>],
    required: &[Landmark],
    margin: f64,
) -> Result<RegionModel> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::param("regions.margin", "must be non-negative"));
    }
    let mut normalized: BTreeMap<Landmark, Vec<(f64, f64)>> = BTreeMap::new();
    for sample in train {
        for &name in required {
            let p = sample.landmarks.require(name, sample.case)?;
            normalized
                .entry(name)
                .or_default()
                .push((p.x / sample.width as f64, p.y / sample.height as f64));
        }
    }
    let mut entries = BTreeMap::new();
    for (name, pts) in &normalized {
        let n = pts.len() as f64;
        // sum in a canonical order so the mean ignores training order
        let mut us: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mut vs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        us.sort_by(f64::total_cmp);
        vs.sort_by(f64::total_cmp);
        let u = us.iter().sum::<f64>() / n;
        let v = vs.iter().sum::<f64>() / n;
        let du = us.iter().map(|x| (x - u).abs()).fold(0.0, f64::max);
        let dv = vs.iter().map(|y| (y - v).abs()).fold(0.0, f64::max);
        entries.insert(
            name.to_string(),
            RegionEntry {
                u,
                v,
                du: du + margin + COVERAGE_SLACK,
                dv: dv + margin + COVERAGE_SLACK,
            },
        );
    }
    for line in LineKind::EDGE_FITTED {
        let (a, b) = line.endpoints();
        let (Some(pa), Some(pb)) = (normalized.get(&a), normalized.get(&b)) else {
            continue;
        };
        let all = pa.iter().chain(pb.iter());
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(u, v) in all {
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        entries.insert(
            line.region_key().to_string(),
            RegionEntry {
                u: (umin + umax) / 2.0,
                v: (vmin + vmax) / 2.0,
                du: (umax - umin) / 2.0 + margin + COVERAGE_SLACK,
                dv: (vmax - vmin) / 2.0 + margin + COVERAGE_SLACK,
            },
        );
    }
    Ok(RegionModel {
        entries,
        margin,
        trained_on: train.len(),
    })
}

impl RegionModel {
    /// Pixel window for `key` (a landmark abbreviation or a line region key).
    pub fn region_for(&self, key: &str, width: usize, height: usize) -> Result<Region> {
        let entry = self
            .entries
            .get(key)
            .ok_or_else(|| Error::UnknownLandmark(key.to_string()))?;
        entry.to_region(width, height).ok_or(Error::EmptyIntersection)
    }

    pub fn landmark_region(&self, name: Landmark, width: usize, height: usize) -> Result<Region> {
        self.region_for(name.abbreviation(), width, height)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# regions v1 margin={} n={}\n", self.margin, self.trained_on);
        for (name, e) in &self.entries {
            writeln!(out, "{name} {} {} {} {}", e.u, e.v, e.du, e.dv).expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty regions file".into(),
        })?;
        let bad_header = || Error::Parse {
            line: 1,
            msg: format!("bad regions header `{header}`"),
        };
        let rest = header.strip_prefix("# regions v1 ").ok_or_else(bad_header)?;
        let mut margin = None;
        let mut trained_on = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("margin", m)) => margin = m.parse().ok(),
                Some(("n", n)) => trained_on = n.parse().ok(),
                _ => return Err(bad_header()),
            }
        }
        let (Some(margin), Some(trained_on)) = (margin, trained_on) else {
            return Err(bad_header());
        };
        let mut entries = BTreeMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad number `{s}`"),
                })
            };
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "expected `name u v du dv`".into(),
                });
            }
            let entry = RegionEntry {
                u: parse(parts[1])?,
                v: parse(parts[2])?,
                du: parse(parts[3])?,
                dv: parse(parts[4])?,
            };
            if entries.insert(parts[0].to_string(), entry).is_some() {
                return Err(Error::DuplicateLandmark(parts[0].to_string()));
            }
        }
        Ok(RegionModel {
            entries,
            margin,
            trained_on,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_text(&text)
    }
}
