//! Canny edge detection and contour chain extraction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imaging::{gaussian_blur, sobel_gradients, GradientField};

/// Pixel coordinate `(x, y)`.
pub type Pixel = (i64, i64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub sigma: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low_ratio: 0.08,
            high_ratio: 0.20,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("canny.sigma", "must be positive"));
        }
        if !(self.low_ratio > 0.0 && self.low_ratio < self.high_ratio && self.high_ratio <= 1.0) {
            return Err(Error::param(
                "canny.low_ratio/high_ratio",
                "need 0 < low_ratio < high_ratio <= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edge: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            edge: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.edge[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: i64, y: i64, value: bool) {
        self.edge[y as usize * self.width + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.edge.iter().filter(|&&e| e).count()
    }

    pub fn pixels(&self) -> Vec<Pixel> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.edge[y * self.width + x] {
                    out.push((x as i64, y as i64));
                }
            }
        }
        out
    }

    pub fn neighbor_count(&self, x: i64, y: i64) -> usize {
        NEIGHBORS
            .iter()
            .filter(|(dx, dy)| self.get(x + dx, y + dy))
            .count()
    }

    /// Debug rendering: edge 255, background 0.
    pub fn to_gray(&self, mm_per_pixel: f64) -> Result<GrayImage> {
        let px = self.edge.iter().map(|&e| if e { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, px, mm_per_pixel)
    }
}

/// 4-neighbors first, then diagonals.
const NEIGHBORS: [(i64, i64); 8] = [
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, 0),
    (1, -1),
    (1, 1),
    (-1, 1),
    (-1, -1),
];

/// Intermediate results of a Canny run.
#[derive(Debug, Clone)]
pub struct CannyOutput {
    pub edges: EdgeMap,
    pub gradients: GradientField,
    /// Thinned local maxima before thresholding.
    pub candidates: EdgeMap,
}

pub fn canny(img: &GrayImage, params: &CannyParams) -> Result<EdgeMap> {
    Ok(canny_detailed(img, params)?.edges)
}

/// Blur, Sobel, four-sector non-maximum suppression, thinning to
/// one-pixel-wide curves, then hysteresis relative to the maximum gradient.
pub fn canny_detailed(img: &GrayImage, params: &CannyParams) -> Result<CannyOutput> {
    params.validate()?;
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let blurred = gaussian_blur(img, params.sigma)?;
    let gradients = sobel_gradients(&blurred)?;
    let mut candidates = non_maximum_suppression(&gradients);
    thin(&mut candidates, &gradients);
    let max = gradients.max_magnitude();
    let edges = if max > 0.0 {
        hysteresis(
            &candidates,
            &gradients,
            (params.low_ratio * max as f64) as f32,
            (params.high_ratio * max as f64) as f32,
        )
    } else {
        EdgeMap::new(img.width(), img.height())
    };
    Ok(CannyOutput {
        edges,
        gradients,
        candidates,
    })
}

/// Neighbor offset along the quantized gradient direction.
pub fn sector_offset(direction: f32) -> (i64, i64) {
    let mut deg = direction.to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (1, 0)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

fn non_maximum_suppression(g: &GradientField) -> EdgeMap {
    let (w, h) = (g.width, g.height);
    let mut out = EdgeMap::new(w, h);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = g.magnitude_at(x, y);
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = sector_offset(g.direction_at(x, y));
            let fwd = g.magnitude_at((x as i64 + dx) as usize, (y as i64 + dy) as usize);
            let back = g.magnitude_at((x as i64 - dx) as usize, (y as i64 - dy) as usize);
            // ties along a plateau keep only the forward-most pixel
            if m > fwd && m >= back {
                out.set(x as i64, y as i64, true);
            }
        }
    }
    out
}

/// Removes pixels whose edge neighbors stay 8-connected without them,
/// weakest first, so staircase corners and doubled diagonal ridges collapse
/// to one-pixel curves. Curve tips are never removed.
fn thin(map: &mut EdgeMap, g: &GradientField) {
    let mut order: Vec<(i64, i64)> = map.pixels();
    order.sort_by(|a, b| {
        let ma = g.magnitude_at(a.0 as usize, a.1 as usize);
        let mb = g.magnitude_at(b.0 as usize, b.1 as usize);
        ma.total_cmp(&mb).then((a.1, a.0).cmp(&(b.1, b.0)))
    });
    thin_in_order(map, &order);
}

fn thin_in_order(map: &mut EdgeMap, order: &[(i64, i64)]) {
    loop {
        let mut changed = false;
        for &(x, y) in order {
            if map.get(x, y) && is_redundant(map, x, y) {
                map.set(x, y, false);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

fn adjacent(a: (i64, i64), b: (i64, i64)) -> bool {
    (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1
}

fn is_redundant(map: &EdgeMap, x: i64, y: i64) -> bool {
    let ring: Vec<(i64, i64)> = NEIGHBORS
        .iter()
        .filter(|(dx, dy)| map.get(x + dx, y + dy))
        .map(|(dx, dy)| (x + dx, y + dy))
        .collect();
    if ring.len() < 2 {
        return false;
    }
    // an L corner (two perpendicular 4-neighbours) bends the curve; any
    // other mutually adjacent ring marks a curve tip
    let clique = ring
        .iter()
        .enumerate()
        .all(|(i, &a)| ring[i + 1..].iter().all(|&b| adjacent(a, b)));
    let corner = ring.len() == 2 && ring.iter().all(|&(nx, ny)| (nx - x).abs() + (ny - y).abs() == 1);
    if clique && !corner {
        return false;
    }
    let mut seen = vec![false; ring.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..ring.len() {
            if !seen[j] && adjacent(ring[i], ring[j]) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn hysteresis(candidates: &EdgeMap, g: &GradientField, low: f32, high: f32) -> EdgeMap {
    let (w, h) = (candidates.width, candidates.height);
    let mut out = EdgeMap::new(w, h);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if candidates.edge[y * w + x] && g.magnitude_at(x, y) >= high {
                out.edge[y * w + x] = true;
                queue.push_back((x as i64, y as i64));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if candidates.get(nx, ny) && !out.get(nx, ny) {
                let m = g.magnitude_at(nx as usize, ny as usize);
                if m >= low {
                    out.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    out
}

/// Ordered 8-connected run of edge pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContourChain {
    pub points: Vec<Pixel>,
    /// When set, the last point repeats the first.
    pub closed: bool,
}

impl ContourChain {
    pub fn open(points: Vec<Pixel>) -> Self {
        Self {
            points,
            closed: false,
        }
    }

    /// Number of distinct pixels.
    pub fn len(&self) -> usize {
        if self.closed {
            self.points.len().saturating_sub(1)
        } else {
            self.points.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct pixels in traversal order.
    pub fn distinct(&self) -> &[Pixel] {
        &self.points[..self.len()]
    }
}

/// Splits the edge pixels into maximal 8-connected chains, breaking at
/// junctions (three or more edge neighbors). Longest chains come first.
pub fn trace_contours(edges: &EdgeMap) -> Vec<ContourChain> {
    let w = edges.width;
    let mut visited = vec![false; edges.edge.len()];
    let idx = |(x, y): Pixel| y as usize * w + x as usize;
    let pixels = edges.pixels();
    let degree = |p: Pixel| edges.neighbor_count(p.0, p.1);
    let mut chains = Vec::new();

    let walk = |start: Pixel, visited: &mut Vec<bool>| -> Vec<Pixel> {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            if cur != start && degree(cur) >= 3 {
                break;
            }
            let next = NEIGHBORS
                .iter()
                .map(|(dx, dy)| (cur.0 + dx, cur.1 + dy))
                .find(|&(nx, ny)| edges.get(nx, ny) && !visited[idx((nx, ny))]);
            match next {
                Some(n) => {
                    visited[idx(n)] = true;
                    path.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        path
    };

    // endpoints, then junctions, then whatever is left (loops)
    let phases: [Box<dyn Fn(Pixel) -> bool>; 3] = [
        Box::new(|p| degree(p) == 1),
        Box::new(|p| degree(p) >= 3),
        Box::new(|_| true),
    ];
    for (phase, selects) in phases.iter().enumerate() {
        for &p in &pixels {
            if visited[idx(p)] || !selects(p) {
                continue;
            }
            visited[idx(p)] = true;
            let forward = walk(p, &mut visited);
            if phase == 1 {
                let mut points = vec![p];
                points.extend(forward);
                chains.push(ContourChain::open(points));
                continue;
            }
            let adjacent = |a: Pixel, b: Pixel| (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1;
            if let Some(&last) = forward.last() {
                if forward.len() >= 3 && adjacent(last, p) && degree(last) < 3 && degree(p) < 3 {
                    let mut points = vec![p];
                    points.extend(forward);
                    points.push(p);
                    chains.push(ContourChain {
                        points,
                        closed: true,
                    });
                    continue;
                }
            }
            let backward = walk(p, &mut visited);
            let mut points: Vec<Pixel> = backward.into_iter().rev().collect();
            points.push(p);
            points.extend(forward);
            chains.push(ContourChain::open(points));
        }
    }
    chains.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| (a.points[0].1, a.points[0].0).cmp(&(b.points[0].1, b.points[0].0)))
    });
    chains
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::DEFAULT_MM_PER_PIXEL;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn image_from_fn(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> u8) -> GrayImage {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        GrayImage::new(w, h, px, DEFAULT_MM_PER_PIXEL).unwrap()
    }

    fn map_from(w: usize, h: usize, pts: &[Pixel]) -> EdgeMap {
        let mut m = EdgeMap::new(w, h);
        for &(x, y) in pts {
            m.set(x, y, true);
        }
        m
    }

    fn assert_partition(map: &EdgeMap, chains: &[ContourChain]) {
        let mut seen = HashSet::new();
        for c in chains {
            for w in c.points.windows(2) {
                assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
                assert_ne!(w[0], w[1]);
            }
            if c.closed {
                assert_eq!(c.points.first(), c.points.last());
            }
            for &p in c.distinct() {
                assert!(seen.insert(p), "pixel {p:?} in two chains");
            }
        }
        let all: HashSet<Pixel> = map.pixels().into_iter().collect();
        assert_eq!(seen, all);
    }

    #[test]
    fn flat_image_has_no_edges() {
        let e = canny(&GrayImage::filled(40, 30, 100), &CannyParams::default()).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn step_edge_is_one_pixel_wide() {
        let img = image_from_fn(30, 24, |x, _| if x < 15 { 0 } else { 255 });
        let e = canny(&img, &CannyParams::default()).unwrap();
        for y in 2..22 {
            let row: Vec<i64> = (0..30).filter(|&x| e.get(x, y)).collect();
            assert_eq!(row.len(), 1, "row {y}: {row:?}");
            assert!(row[0] == 14 || row[0] == 15);
        }
    }

    pub(crate) fn disk_image(size: usize, cx: f64, cy: f64, r: f64) -> GrayImage {
        image_from_fn(size, size, |x, y| {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn disk_edge_hugs_the_circle_and_is_thin() {
        let (cx, cy, r) = (32.0, 32.0, 20.0);
        let out = canny_detailed(&disk_image(64, cx, cy, r), &CannyParams::default()).unwrap();
        let pts = out.edges.pixels();
        assert!(!pts.is_empty());
        for &(x, y) in &pts {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            assert!((d - r).abs() <= 1.0, "edge ({x},{y}) at radius {d}");
            assert!(out.edges.neighbor_count(x, y) <= 2, "({x},{y}) not thin");
        }
        for k in 0..3600 {
            let t = k as f64 * std::f64::consts::TAU / 3600.0;
            let (px, py) = (cx + r * t.cos(), cy + r * t.sin());
            let near = pts
                .iter()
                .map(|&(x, y)| (x as f64 - px).hypot(y as f64 - py))
                .fold(f64::INFINITY, f64::min);
            assert!(near <= 1.0, "circle point at {t} is {near} from the edge");
        }
        assert_nms_thin(&out);
    }

    pub(crate) fn assert_nms_thin(out: &CannyOutput) {
        let g = &out.gradients;
        for (x, y) in out.edges.pixels() {
            let (dx, dy) = sector_offset(g.direction_at(x as usize, y as usize));
            let m = g.magnitude_at(x as usize, y as usize);
            for s in [-1, 1] {
                let (nx, ny) = (x + s * dx, y + s * dy);
                if out.edges.get(nx, ny) {
                    assert!(g.magnitude_at(nx as usize, ny as usize) <= m);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_params_and_tiny_input() {
        let img = GrayImage::filled(10, 10, 0);
        let bad = CannyParams {
            sigma: 1.0,
            low_ratio: 0.3,
            high_ratio: 0.2,
        };
        assert!(canny(&img, &bad).is_err());
        assert!(matches!(
            canny(&GrayImage::filled(2, 9, 0), &CannyParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn horizontal_run_is_one_chain() {
        let pts: Vec<Pixel> = (2..7).map(|x| (x, 3)).collect();
        let chains = trace_contours(&map_from(10, 6, &pts));
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].points, pts);
        assert!(!chains[0].closed);
        assert!(trace_contours(&EdgeMap::new(5, 5)).is_empty());
    }

    fn circle_pixels(cx: i64, cy: i64, r: f64) -> Vec<Pixel> {
        // 8-connected digital circle from the midpoint algorithm
        let mut pts = HashSet::new();
        let (mut x, mut y) = (r as i64, 0i64);
        let mut err = 1 - x;
        while x >= y {
            for (a, b) in [(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)] {
                pts.insert((cx + a, cy + b));
            }
            y += 1;
            if err < 0 {
                err += 2 * y + 1;
            } else {
                x -= 1;
                err += 2 * (y - x) + 1;
            }
        }
        let mut v: Vec<Pixel> = pts.into_iter().collect();
        v.sort();
        v
    }

    #[test]
    fn two_circles_give_two_closed_chains() {
        let mut pts = circle_pixels(12, 12, 8.0);
        pts.extend(circle_pixels(40, 14, 10.0));
        let mut map = map_from(60, 30, &pts);
        let order = map.pixels();
        thin_in_order(&mut map, &order);
        let chains = trace_contours(&map);
        assert_eq!(chains.len(), 2);
        assert!(chains.iter().all(|c| c.closed));
        assert_partition(&map, &chains);
    }

    #[test]
    fn junction_splits_chains() {
        // a T: horizontal bar with a stem hanging from its middle
        let mut pts: Vec<Pixel> = (0..9).map(|x| (x, 2)).collect();
        pts.extend((3..8).map(|y| (4, y)));
        let mut map = map_from(10, 10, &pts);
        let order = map.pixels();
        thin_in_order(&mut map, &order);
        let chains = trace_contours(&map);
        assert_eq!(chains.len(), 3);
        assert_partition(&map, &chains);
    }

    proptest! {
        #[test]
        fn trace_partitions_random_maps(seed in any::<u64>(), density in 0.02f64..0.3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut map = EdgeMap::new(24, 20);
            for i in 0..map.edge.len() {
                map.edge[i] = rng.gen_bool(density);
            }
            let chains = trace_contours(&map);
            assert_partition(&map, &chains);
            for w in chains.windows(2) {
                prop_assert!(w[0].len() >= w[1].len());
            }
        }

        #[test]
        fn lowering_low_ratio_never_removes_edges(seed in any::<u64>(), low_a in 0.02f64..0.15, gap in 0.0f64..0.1) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = image_from_fn(32, 32, |x, y| {
                let base = if (x as i64 - 16).pow(2) + (y as i64 - 15).pow(2) < 81 { 180 } else { 60 };
                (base + rng.gen_range(0..30)) as u8
            });
            let low_b = (low_a - gap).max(0.01);
            let hi = CannyParams { sigma: 1.2, low_ratio: low_a, high_ratio: 0.3 };
            let lo = CannyParams { low_ratio: low_b, ..hi };
            let a = canny(&img, &hi).unwrap();
            let b = canny(&img, &lo).unwrap();
            for (ea, eb) in a.edge.iter().zip(&b.edge) {
                prop_assert!(!*ea || *eb);
            }
        }
    }
}
