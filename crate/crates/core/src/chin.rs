//! Menton, pogonion and gnathion from the traced symphysis contour.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::edges::{canny, trace_contours, CannyParams, ContourChain, Pixel};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imaging::{crop, enhance_adaptive, ClaheParams, Region};
use crate::landmark::{Facing, Landmark, Point};
use crate::regions::RegionModel;

/// How gnathion is placed between pogonion and menton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GnRule {
    /// Arc-length midpoint.
    #[default]
    ArcMid,
    /// Point farthest from the Pog-Me chord.
    ChordMax,
}

impl FromStr for GnRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arc_mid" => Ok(GnRule::ArcMid),
            "chord_max" => Ok(GnRule::ChordMax),
            _ => Err(Error::param("gn.rule", format!("unknown rule `{s}`"))),
        }
    }
}

impl fmt::Display for GnRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GnRule::ArcMid => "arc_mid",
            GnRule::ChordMax => "chord_max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChinParams {
    pub canny: CannyParams,
    pub clahe: ClaheParams,
    pub gn_rule: GnRule,
    /// Chains shorter than this are ignored.
    pub min_chain_len: usize,
    /// Run CLAHE on the crop before Canny.
    pub enhance_first: bool,
}

impl Default for ChinParams {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            clahe: ClaheParams::default(),
            gn_rule: GnRule::ArcMid,
            min_chain_len: 20,
            enhance_first: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChinDetection {
    pub me: Point,
    pub pog: Point,
    pub gn: Point,
    /// Selected contour, full-image coordinates.
    pub chain: ContourChain,
}

/// Searches the union of the Me, Pog and Gn regions.
pub fn detect_chin(
    img: &GrayImage,
    model: &RegionModel,
    facing: Facing,
    params: &ChinParams,
) -> Result<ChinDetection> {
    let (w, h) = (img.width(), img.height());
    let mut region = model.landmark_region(Landmark::Me, w, h)?;
    for name in [Landmark::Pog, Landmark::Gn] {
        region = region.union(&model.landmark_region(name, w, h)?);
    }
    detect_chin_in(img, &region, facing, params)
}

/// Runs the chin detector inside an explicit window.
pub fn detect_chin_in(
    img: &GrayImage,
    region: &Region,
    facing: Facing,
    params: &ChinParams,
) -> Result<ChinDetection> {
    let cropped = crop(img, region)?;
    let fitted = params
        .clahe
        .fitted_to(cropped.image.width(), cropped.image.height())
        .filter(|_| params.enhance_first);
    let local = match fitted {
        Some(clahe) => enhance_adaptive(&cropped.image, &clahe)?,
        None => cropped.image.clone(),
    };
    let edges = canny(&local, &params.canny)?;
    let chain = select_chin_chain(trace_contours(&edges), params.min_chain_len)?;

    let me = plateau_lowest(&chain, facing);
    let pog = plateau_anterior(&chain, facing);
    if me == pog {
        return Err(Error::DegenerateContour);
    }
    let gn = match params.gn_rule {
        GnRule::ArcMid => arc_midpoint(&chain, me, pog)?,
        GnRule::ChordMax => chord_max_point(&chain, pog, me)?,
    };

    let (ox, oy) = (cropped.region.x0, cropped.region.y0);
    let shift = |(x, y): Pixel| Point::new((x + ox) as f64, (y + oy) as f64);
    let full = ContourChain {
        points: chain.points.iter().map(|&(x, y)| (x + ox, y + oy)).collect(),
        closed: chain.closed,
    };
    Ok(ChinDetection {
        me: shift(me),
        pog: shift(pog),
        gn: shift(gn),
        chain: full,
    })
}

/// Longest chain among those whose lowest pixel is lowest.
pub fn select_chin_chain(chains: Vec<ContourChain>, min_len: usize) -> Result<ContourChain> {
    let mut best: Option<(i64, usize, ContourChain)> = None;
    for chain in chains {
        if chain.len() < min_len.max(1) {
            continue;
        }
        let low = chain.distinct().iter().map(|p| p.1).max().unwrap_or(i64::MIN);
        let better = match &best {
            None => true,
            Some((bl, bn, _)) => low > *bl || (low == *bl && chain.len() > *bn),
        };
        if better {
            best = Some((low, chain.len(), chain));
        }
    }
    best.map(|b| b.2)
        .ok_or(Error::NoContourFound { min_len })
}

fn anterior(p: Pixel, facing: Facing) -> i64 {
    match facing {
        Facing::Right => p.0,
        Facing::Left => -p.0,
    }
}

/// Maximum-y pixel, ties toward the facing direction. Empty chains give `None`.
pub fn lowest_point(chain: &ContourChain, facing: Facing) -> Option<Pixel> {
    chain
        .distinct()
        .iter()
        .copied()
        .reduce(|a, b| {
            if (b.1, anterior(b, facing)) > (a.1, anterior(a, facing)) {
                b
            } else {
                a
            }
        })
}

/// Most anterior pixel, ties toward the lowest.
pub fn anterior_point(chain: &ContourChain, facing: Facing) -> Option<Pixel> {
    chain
        .distinct()
        .iter()
        .copied()
        .reduce(|a, b| {
            if (anterior(b, facing), b.1) > (anterior(a, facing), a.1) {
                b
            } else {
                a
            }
        })
}

/// Pixels this close to the extreme coordinate still count as extreme.
const PLATEAU_TOLERANCE: i64 = 1;

/// Centre of the run of near-extreme pixels around `winner` along the
/// chain. `key` holds the extremal coordinate (larger is more extreme); the
/// run member nearest the mean of the cross coordinate wins, ties decided
/// by `rank`.
fn plateau_centre(
    chain: &ContourChain,
    winner: Pixel,
    key: impl Fn(Pixel) -> i64,
    cross: impl Fn(Pixel) -> i64,
    rank: impl Fn(Pixel) -> i64,
) -> Pixel {
    let pts = chain.distinct();
    let n = pts.len();
    let start = pts.iter().position(|&p| p == winner).unwrap_or(0);
    let target = key(winner);
    let mut run = vec![winner];
    let step = |i: usize, fwd: bool| -> Option<usize> {
        if fwd {
            if i + 1 < n {
                Some(i + 1)
            } else if chain.closed {
                Some(0)
            } else {
                None
            }
        } else if i > 0 {
            Some(i - 1)
        } else if chain.closed {
            Some(n - 1)
        } else {
            None
        }
    };
    for fwd in [true, false] {
        let mut i = start;
        while let Some(j) = step(i, fwd) {
            if j == start || key(pts[j]) < target - PLATEAU_TOLERANCE || run.contains(&pts[j]) {
                break;
            }
            run.push(pts[j]);
            i = j;
        }
    }
    let mean = run.iter().map(|&p| cross(p) as f64).sum::<f64>() / run.len() as f64;
    *run.iter()
        .min_by(|&&a, &&b| {
            let da = (cross(a) as f64 - mean).abs();
            let db = (cross(b) as f64 - mean).abs();
            da.total_cmp(&db).then(rank(b).cmp(&rank(a)))
        })
        .expect("run holds the winner")
}

fn plateau_lowest(chain: &ContourChain, facing: Facing) -> Pixel {
    let winner = lowest_point(chain, facing).expect("selected chain is non-empty");
    plateau_centre(chain, winner, |p| p.1, |p| p.0, |p| anterior(p, facing))
}

fn plateau_anterior(chain: &ContourChain, facing: Facing) -> Pixel {
    let winner = anterior_point(chain, facing).expect("selected chain is non-empty");
    plateau_centre(chain, winner, |p| anterior(p, facing), |p| p.1, |p| p.1)
}

fn step_len(a: Pixel, b: Pixel) -> f64 {
    ((a.0 - b.0) as f64).hypot((a.1 - b.1) as f64)
}

fn path_len(path: &[Pixel]) -> f64 {
    path.windows(2).map(|w| step_len(w[0], w[1])).sum()
}

/// Chain pixels from `a` to `b` inclusive; on closed chains the shorter way round.
fn path_between(chain: &ContourChain, a: Pixel, b: Pixel) -> Result<Vec<Pixel>> {
    let pts = chain.distinct();
    let find = |p: Pixel| {
        pts.iter()
            .position(|&q| q == p)
            .ok_or(Error::PointNotOnChain(p.0, p.1))
    };
    let (ia, ib) = (find(a)?, find(b)?);
    if !chain.closed {
        return Ok(if ia <= ib {
            pts[ia..=ib].to_vec()
        } else {
            pts[ib..=ia].iter().rev().copied().collect()
        });
    }
    let n = pts.len();
    let walk = |step: usize| {
        let mut out = vec![pts[ia]];
        let mut i = ia;
        while i != ib {
            i = (i + step) % n;
            out.push(pts[i]);
        }
        out
    };
    let fwd = walk(1);
    let back = walk(n - 1);
    Ok(if path_len(&back) < path_len(&fwd) {
        back
    } else {
        fwd
    })
}

/// Chain pixel whose arc length from `a` is closest to half the `a`→`b` arc.
pub fn arc_midpoint(chain: &ContourChain, a: Pixel, b: Pixel) -> Result<Pixel> {
    let path = path_between(chain, a, b)?;
    let half = path_len(&path) / 2.0;
    let mut best = (f64::INFINITY, a);
    let mut s = 0.0;
    for (k, &p) in path.iter().enumerate() {
        if k > 0 {
            s += step_len(path[k - 1], p);
        }
        let d = (s - half).abs();
        if d < best.0 {
            best = (d, p);
        }
    }
    Ok(best.1)
}

/// Chain pixel between `a` and `b` farthest from the chord `ab`.
pub fn chord_max_point(chain: &ContourChain, a: Pixel, b: Pixel) -> Result<Pixel> {
    let path = path_between(chain, a, b)?;
    let (dx, dy) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
    let norm = dx.hypot(dy);
    if norm == 0.0 {
        return Ok(a);
    }
    let mut best = (f64::NEG_INFINITY, a);
    for &p in &path {
        let d = (dx * (p.1 - a.1) as f64 - dy * (p.0 - a.0) as f64).abs() / norm;
        if d > best.0 {
            best = (d, p);
        }
    }
    Ok(best.1)
}
