//! Line estimates: Frankfort plane, edge-fitted lines and degree thresholds.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edges::{canny_detailed, CannyParams};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imaging::{crop, enhance_adaptive, ClaheParams, Region};
use crate::landmark::{Facing, LineKind, Point};
use crate::pnm::write_bytes;

/// Infinite line in image coordinates (y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2D {
    pub point: Point,
    /// Unit vector with `dx >= 0`; vertical lines use `(0, 1)`.
    pub direction: (f64, f64),
    /// `atan2(dy, dx)` in degrees, within (−90, 90].
    pub inclination_deg: f64,
}

impl Line2D {
    /// Normalizes `(dx, dy)`; a zero vector is `CoincidentPoints`.
    pub fn new(point: Point, dx: f64, dy: f64) -> Result<Self> {
        let n = dx.hypot(dy);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::CoincidentPoints);
        }
        let (mut ux, mut uy) = (dx / n, dy / n);
        if ux < 0.0 || (ux == 0.0 && uy < 0.0) {
            ux = -ux;
            uy = -uy;
        }
        if ux == 0.0 {
            uy = 1.0;
        }
        Ok(Self {
            point,
            direction: (ux, uy),
            inclination_deg: uy.atan2(ux).to_degrees(),
        })
    }

    pub fn through(a: Point, b: Point) -> Result<Self> {
        Self::new(a, b.x - a.x, b.y - a.y)
    }

    pub fn from_inclination(point: Point, deg: f64) -> Self {
        let mut d = deg % 180.0;
        if d <= -90.0 {
            d += 180.0;
        } else if d > 90.0 {
            d -= 180.0;
        }
        if d == 90.0 {
            return Self {
                point,
                direction: (0.0, 1.0),
                inclination_deg: 90.0,
            };
        }
        let r = d.to_radians();
        Self {
            point,
            direction: (r.cos(), r.sin()),
            inclination_deg: d,
        }
    }

    /// Unsigned distance from `p` to the line.
    pub fn distance(&self, p: Point) -> f64 {
        let (dx, dy) = self.direction;
        (dx * (p.y - self.point.y) - dy * (p.x - self.point.x)).abs()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            point: Point::new(self.point.x + dx, self.point.y + dy),
            ..*self
        }
    }
}

/// Smallest angle between two undirected lines, in [0, 90].
pub fn angle_between_deg(a: &Line2D, b: &Line2D) -> f64 {
    let d = (a.inclination_deg - b.inclination_deg).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Inclination in the patient frame: y up, face toward +x.
fn anatomical(image_deg: f64, facing: Facing) -> f64 {
    match facing {
        Facing::Right => -image_deg,
        Facing::Left => image_deg,
    }
}

fn to_image(anatomical_deg: f64, facing: Facing) -> f64 {
    anatomical(anatomical_deg, facing)
}

/// Frankfort candidates in the patient frame: the Or-Po line and the S-N
/// line rotated down by `sn_offset_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrankfortCandidates {
    pub or_po_deg: f64,
    pub sn_deg: f64,
}

/// Picks whichever Frankfort candidate lies closer to the image horizontal
/// and returns it as a line through `or_pt`. Ties keep the Or-Po candidate.
pub fn frankfort_line(
    or_pt: Point,
    po_pt: Point,
    s_pt: Point,
    n_pt: Point,
    facing: Facing,
    sn_offset_deg: f64,
) -> Result<(Line2D, FrankfortCandidates)> {
    for p in [or_pt, po_pt, s_pt, n_pt] {
        if !p.is_finite() {
            return Err(Error::param("frankfort", "non-finite landmark"));
        }
    }
    let or_po = Line2D::through(po_pt, or_pt)?;
    let sn = Line2D::through(s_pt, n_pt)?;
    let a = normalize_deg(anatomical(or_po.inclination_deg, facing));
    let b = normalize_deg(anatomical(sn.inclination_deg, facing) - sn_offset_deg);
    let chosen = if b.abs() < a.abs() { b } else { a };
    Ok((
        Line2D::from_inclination(or_pt, to_image(chosen, facing)),
        FrankfortCandidates {
            or_po_deg: a,
            sn_deg: b,
        },
    ))
}

fn normalize_deg(d: f64) -> f64 {
    Line2D::from_inclination(Point::default(), d).inclination_deg
}

/// Orthogonal regression through the centroid.
pub fn fit_line_tls(points: &[Point]) -> Result<Line2D> {
    if points.is_empty() {
        return Err(Error::AllPointsCoincident);
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx + syy == 0.0 {
        return Err(Error::AllPointsCoincident);
    }
    let centroid = Point::new(cx, cy);
    if sxy == 0.0 {
        return if sxx >= syy {
            Line2D::new(centroid, 1.0, 0.0)
        } else {
            Line2D::new(centroid, 0.0, 1.0)
        };
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Line2D::new(centroid, theta.cos(), theta.sin())
}

/// Sum of squared orthogonal distances.
pub fn orthogonal_residual(line: &Line2D, points: &[Point]) -> f64 {
    points.iter().map(|&p| line.distance(p).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier band half-width in pixels.
    pub band: f64,
    pub min_inliers: usize,
    pub seed: u64,
    /// Largest gap along the line inside one inlier run, in pixels.
    pub max_gap: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            band: 2.0,
            min_inliers: 10,
            seed: 0,
            max_gap: 5.0,
        }
    }
}

/// Heaviest run of band inliers along `line` with no gap above
/// `max_gap`, as point indices in order along the line.
fn best_run(line: &Line2D, points: &[Point], weights: &[f64], params: &RansacParams) -> (f64, Vec<usize>) {
    let (dx, dy) = line.direction;
    let mut along: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(_, &p)| line.distance(p) <= params.band)
        .map(|(i, p)| ((p.x - line.point.x) * dx + (p.y - line.point.y) * dy, i))
        .collect();
    along.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = (0.0, 0, 0);
    let mut start = 0;
    let mut score = 0.0;
    for k in 0..along.len() {
        if k > start && along[k].0 - along[k - 1].0 > params.max_gap {
            start = k;
            score = 0.0;
        }
        score += weights[along[k].1];
        if score > best.0 {
            best = (score, start, k + 1);
        }
    }
    (best.0, along[best.1..best.2].iter().map(|&(_, i)| i).collect())
}

/// Upper bound on inlier re-selection rounds after the first TLS fit.
const REFIT_ROUNDS: usize = 10;

/// Dominant line through `points`: RANSAC on pairs, then TLS on the inliers
/// of the best pair, re-selecting inliers around the fit until they settle.
/// Inliers are the heaviest unbroken run inside the band. Returns the fit
/// and its inliers.
pub fn ransac_tls(points: &[Point], params: &RansacParams) -> Result<(Line2D, Vec<Point>)> {
    ransac_tls_weighted(points, &vec![1.0; points.len()], params)
}

/// As [`ransac_tls`], but a candidate scores the summed weight of its
/// inliers instead of their count.
pub fn ransac_tls_weighted(
    points: &[Point],
    weights: &[f64],
    params: &RansacParams,
) -> Result<(Line2D, Vec<Point>)> {
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: (points.len(), 1),
            actual: (weights.len(), 1),
        });
    }
    let needed = params.min_inliers.max(2);
    if points.len() < needed {
        return Err(Error::TooFewEdgePixels {
            found: points.len(),
            needed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, Line2D)> = None;
    for _ in 0..params.iterations {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let Ok(candidate) = Line2D::through(points[i], points[j]) else {
            continue;
        };
        let (score, _) = best_run(&candidate, points, weights, params);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, candidate));
        }
    }
    let Some((_, line)) = best else {
        return Err(Error::AllPointsCoincident);
    };
    let within = |l: &Line2D| -> Vec<Point> {
        let (_, mut idx) = best_run(l, points, weights, params);
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    };
    let mut inliers = within(&line);
    if inliers.len() < needed {
        return Err(Error::TooFewEdgePixels {
            found: inliers.len(),
            needed,
        });
    }
    let mut fit = fit_line_tls(&inliers)?;
    for _ in 0..REFIT_ROUNDS {
        let next = within(&fit);
        if next == inliers || next.len() < needed {
            break;
        }
        inliers = next;
        fit = fit_line_tls(&inliers)?;
    }
    Ok((fit, inliers))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeLineParams {
    pub canny: CannyParams,
    pub clahe: ClaheParams,
    pub ransac: RansacParams,
}

/// Fits the dominant straight edge inside `region`.
pub fn estimate_edge_line(img: &GrayImage, region: &Region, params: &EdgeLineParams) -> Result<Line2D> {
    let cropped = crop(img, region)?;
    let (cw, ch) = (cropped.image.width(), cropped.image.height());
    let local = match params.clahe.fitted_to(cw, ch) {
        Some(p) => enhance_adaptive(&cropped.image, &p)?,
        None => cropped.image.clone(),
    };
    let out = canny_detailed(&local, &params.canny)?;
    let pixels = out.edges.pixels();
    let pts: Vec<Point> = pixels.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
    let strength: Vec<f64> = pixels
        .iter()
        .map(|&(x, y)| out.gradients.magnitude_at(x as usize, y as usize) as f64)
        .collect();
    let (line, _) = ransac_tls_weighted(&pts, &strength, &params.ransac)?;
    Ok(line.translated(cropped.region.x0 as f64, cropped.region.y0 as f64))
}

/// Angle swept when the endpoints of a line of length `line_length_mm`
/// move `x_mm` apart perpendicular to it. Independent endpoints each move
/// half the distance.
pub fn degree_threshold(x_mm: f64, line_length_mm: f64, endpoints_independent: bool) -> Result<f64> {
    if !(x_mm > 0.0 && x_mm.is_finite()) {
        return Err(Error::param("x_mm", "must be positive"));
    }
    if !(line_length_mm > 0.0 && line_length_mm.is_finite()) {
        return Err(Error::param("line_length_mm", "must be positive"));
    }
    let d = if endpoints_independent { x_mm / 2.0 } else { x_mm };
    Ok((2.0 * d / line_length_mm).atan().to_degrees())
}

const SHIPPED: &str = include_str!("../data/shipped.degthr");

/// Per-line angular thresholds for 1, 2, 3 and 4 mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeThresholds {
    rows: Vec<(String, [f64; 4])>,
}

impl DegreeThresholds {
    /// The shipped reference thresholds.
    pub fn shipped() -> Self {
        Self::from_text(SHIPPED).expect("shipped threshold table parses")
    }

    pub fn from_rows(rows: Vec<(String, [f64; 4])>) -> Result<Self> {
        for (name, t) in &rows {
            if !(t[0] > 0.0 && t.windows(2).all(|w| w[0] < w[1])) {
                return Err(Error::NonMonotonicThresholds(name.clone()));
            }
        }
        Ok(Self { rows })
    }

    /// Thresholds derived from mean line lengths.
    pub fn derived(lengths_mm: &[(LineKind, f64)]) -> Result<Self> {
        let mut rows = Vec::new();
        for &(line, len) in lengths_mm {
            let mut t = [0.0; 4];
            for (k, slot) in t.iter_mut().enumerate() {
                *slot = degree_threshold((k + 1) as f64, len, line.endpoints_independent())?;
            }
            rows.push((line.name().to_string(), t));
        }
        Self::from_rows(rows)
    }

    pub fn rows(&self) -> &[(String, [f64; 4])] {
        &self.rows
    }

    pub fn get(&self, line: LineKind) -> Option<[f64; 4]> {
        self.rows
            .iter()
            .find(|(name, _)| name.parse::<LineKind>().ok() == Some(line))
            .map(|r| r.1)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# degthr v1\n");
        for (name, t) in &self.rows {
            writeln!(out, "{name} {} {} {} {}", t[0], t[1], t[2], t[3]).expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "# degthr v1" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "expected `# degthr v1` header".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "expected `name t1 t2 t3 t4`".into(),
                });
            }
            let mut t = [0.0; 4];
            for (slot, s) in t.iter_mut().zip(&parts[1..]) {
                *slot = s.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad number `{s}`"),
                })?;
            }
            rows.push((parts[0].to_string(), t));
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }
}
