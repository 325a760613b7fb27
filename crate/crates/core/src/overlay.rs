//! PPM overlays of detections over the radiograph.

use crate::image::{GrayImage, RgbImage};
use crate::imaging::Region;
use crate::landmark::{LandmarkSet, Point};
use crate::lines::Line2D;

pub const DETECTED: [u8; 3] = [255, 40, 40];
pub const LINE: [u8; 3] = [40, 220, 40];
pub const EXPERT: [u8; 3] = [40, 120, 255];
pub const CHAIN: [u8; 3] = [250, 210, 40];

#[derive(Debug, Clone)]
pub struct Overlay {
    pub canvas: RgbImage,
}

impl Overlay {
    pub fn new(img: &GrayImage) -> Self {
        Self {
            canvas: RgbImage::from_gray(img),
        }
    }

    /// 5-px cross centred on the rounded point.
    pub fn cross(&mut self, p: Point, color: [u8; 3]) {
        let (x, y) = (p.x.round() as i64, p.y.round() as i64);
        for d in -2..=2 {
            self.canvas.put(x + d, y, color);
            self.canvas.put(x, y + d, color);
        }
    }

    pub fn circle(&mut self, p: Point, radius: f64, color: [u8; 3]) {
        let steps = (radius * 8.0).ceil().max(8.0) as usize;
        for i in 0..steps {
            let t = i as f64 / steps as f64 * std::f64::consts::TAU;
            let x = (p.x + radius * t.cos()).round() as i64;
            let y = (p.y + radius * t.sin()).round() as i64;
            self.canvas.put(x, y, color);
        }
    }

    pub fn pixels(&mut self, pts: &[(i64, i64)], color: [u8; 3]) {
        for &(x, y) in pts {
            self.canvas.put(x, y, color);
        }
    }

    /// Draws the part of `line` inside `region`.
    pub fn line_in(&mut self, line: &Line2D, region: &Region, color: [u8; 3]) {
        let Some((t0, t1)) = clip_span(line, region) else {
            return;
        };
        let (dx, dy) = line.direction;
        let steps = ((t1 - t0) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = t0 + (t1 - t0) * i as f64 / steps as f64;
            let x = (line.point.x + t * dx).round() as i64;
            let y = (line.point.y + t * dy).round() as i64;
            if region.contains_pixel(x, y) {
                self.canvas.put(x, y, color);
            }
        }
    }

    pub fn experts(&mut self, truth: &LandmarkSet) {
        for (_, p) in truth.iter() {
            self.circle(p, 4.0, EXPERT);
        }
    }
}

/// Parameter interval of `line` inside the closed box of `region`.
fn clip_span(line: &Line2D, region: &Region) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let bounds = [
        (line.point.x, line.direction.0, region.x0 as f64, (region.x1() - 1) as f64),
        (line.point.y, line.direction.1, region.y0 as f64, (region.y1() - 1) as f64),
    ];
    for (p, d, a, b) in bounds {
        if d.abs() < 1e-12 {
            if p < a || p > b {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((a - p) / d, (b - p) / d);
        lo = lo.max(ta.min(tb));
        hi = hi.min(ta.max(tb));
    }
    (lo <= hi).then_some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_has_five_pixel_arms() {
        let mut o = Overlay::new(&GrayImage::filled(11, 11, 0));
        o.cross(Point::new(5.2, 4.8), DETECTED);
        let lit: Vec<usize> = (0..121).filter(|&i| o.canvas.data[i] == DETECTED).collect();
        assert_eq!(lit.len(), 9);
        assert_eq!(o.canvas.data[5 * 11 + 3], DETECTED);
        assert_eq!(o.canvas.data[7 * 11 + 5], DETECTED);
        assert_eq!(o.canvas.data[6 * 11 + 6], [0, 0, 0]);
    }

    #[test]
    fn line_stays_inside_region() {
        let mut o = Overlay::new(&GrayImage::filled(40, 40, 0));
        let region = Region::new(10, 10, 20, 20).unwrap();
        let line = Line2D::through(Point::new(0.0, 0.0), Point::new(39.0, 39.0)).unwrap();
        o.line_in(&line, &region, LINE);
        for y in 0..40 {
            for x in 0..40 {
                let on = o.canvas.data[y * 40 + x] == LINE;
                assert_eq!(on, x == y && (10..30).contains(&x), "({x},{y})");
            }
        }
    }

    #[test]
    fn line_missing_region_draws_nothing() {
        let mut o = Overlay::new(&GrayImage::filled(40, 40, 0));
        let region = Region::new(0, 0, 5, 5).unwrap();
        let line = Line2D::through(Point::new(0.0, 20.0), Point::new(39.0, 20.0)).unwrap();
        o.line_in(&line, &region, LINE);
        assert!(o.canvas.data.iter().all(|&c| c == [0, 0, 0]));
    }

    #[test]
    fn circles_edge_clip() {
        let mut o = Overlay::new(&GrayImage::filled(10, 10, 0));
        o.circle(Point::new(0.0, 0.0), 4.0, EXPERT);
        assert_eq!(o.canvas.data[4], EXPERT);
        assert_eq!(o.canvas.data[0], [0, 0, 0]);
    }
}
