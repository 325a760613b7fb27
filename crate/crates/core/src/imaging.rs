//! Raster primitives: regions and cropping, contrast-limited adaptive
//! histogram equalization, Gaussian smoothing and Sobel gradients.
//!
//! Every convolution replicates border pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Raster};
use crate::landmark::Point;

/// Axis-aligned pixel window; `x0, y0` inclusive, `width x height` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x0: i64,
    pub y0: i64,
    pub width: i64,
    pub height: i64,
}

impl Region {
    pub fn new(x0: i64, y0: i64, width: i64, height: i64) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::param("region", format!("{width}x{height} is empty")));
        }
        Ok(Self {
            x0,
            y0,
            width,
            height,
        })
    }

    pub fn full(img: &GrayImage) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: img.width() as i64,
            height: img.height() as i64,
        }
    }

    /// Exclusive right edge.
    pub fn x1(&self) -> i64 {
        self.x0 + self.width
    }

    /// Exclusive bottom edge.
    pub fn y1(&self) -> i64 {
        self.y0 + self.height
    }

    pub fn intersect(&self, other: &Region) -> Option<Region> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x1 > x0 && y1 > y0).then(|| Region {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }

    pub fn union(&self, other: &Region) -> Region {
        let x0 = self.x0.min(other.x0);
        let y0 = self.y0.min(other.y0);
        Region {
            x0,
            y0,
            width: self.x1().max(other.x1()) - x0,
            height: self.y1().max(other.y1()) - y0,
        }
    }

    pub fn clip_to(&self, width: usize, height: usize) -> Option<Region> {
        self.intersect(&Region {
            x0: 0,
            y0: 0,
            width: width as i64,
            height: height as i64,
        })
    }

    /// Grows the window by the given number of pixels on each side.
    pub fn expand(&self, left: i64, top: i64, right: i64, bottom: i64) -> Region {
        Region {
            x0: self.x0 - left,
            y0: self.y0 - top,
            width: self.width + left + right,
            height: self.height + top + bottom,
        }
    }

    /// Containment of a continuous point in the closed box
    /// `[x0, x0 + width] x [y0, y0 + height]`.
    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.x0 as f64
            && p.x <= self.x1() as f64
            && p.y >= self.y0 as f64
            && p.y <= self.y1() as f64
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }
}

/// A sub-image together with the full-image position of its top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Cropped {
    pub image: GrayImage,
    pub region: Region,
}

impl Cropped {
    pub fn to_full(&self, p: Point) -> Point {
        Point::new(p.x + self.region.x0 as f64, p.y + self.region.y0 as f64)
    }

    pub fn to_local(&self, p: Point) -> Point {
        Point::new(p.x - self.region.x0 as f64, p.y - self.region.y0 as f64)
    }
}

/// Extracts the part of `region` that lies inside the image.
pub fn crop(img: &GrayImage, region: &Region) -> Result<Cropped> {
    let clipped = region
        .clip_to(img.width(), img.height())
        .ok_or(Error::EmptyIntersection)?;
    let (w, h) = (clipped.width as usize, clipped.height as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for y in clipped.y0 as usize..clipped.y1() as usize {
        let row = y * img.width();
        pixels.extend_from_slice(&img.pixels()[row + clipped.x0 as usize..row + clipped.x1() as usize]);
    }
    Ok(Cropped {
        image: GrayImage::new(w, h, pixels, img.mm_per_pixel())?,
        region: clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    /// Nominal tile side in pixels.
    pub tile: usize,
    /// Clip limit as a multiple of the uniform bin height.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tile: 64,
            clip_limit: 4.0,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tile < 8 {
            return Err(Error::param("enhance.tile", "must be at least 8"));
        }
        if !(1.0..=40.0).contains(&self.clip_limit) {
            return Err(Error::param("enhance.clip", "must lie in [1, 40]"));
        }
        Ok(())
    }

    /// Shrinks the tile to fit small crops; `None` when the crop is below
    /// the minimum tile size.
    pub fn fitted_to(&self, width: usize, height: usize) -> Option<ClaheParams> {
        let tile = self.tile.min(width).min(height);
        (tile >= 8).then_some(ClaheParams {
            tile,
            clip_limit: self.clip_limit,
        })
    }
}

/// Contrast-limited adaptive histogram equalization with bilinear
/// interpolation between tile mappings. Flat tiles map to themselves.
pub fn enhance_adaptive(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if params.tile > w || params.tile > h {
        return Err(Error::TileLargerThanImage {
            tile: params.tile,
            width: w,
            height: h,
        });
    }
    let nx = w / params.tile;
    let ny = h / params.tile;
    let xb: Vec<usize> = (0..=nx).map(|i| i * w / nx).collect();
    let yb: Vec<usize> = (0..=ny).map(|j| j * h / ny).collect();

    let mut luts = vec![[0f32; 256]; nx * ny];
    for ty in 0..ny {
        for tx in 0..nx {
            let mut hist = [0u32; 256];
            for y in yb[ty]..yb[ty + 1] {
                for x in xb[tx]..xb[tx + 1] {
                    hist[img.get(x, y) as usize] += 1;
                }
            }
            luts[ty * nx + tx] = tile_mapping(&hist, params.clip_limit);
        }
    }

    let centers = |b: &[usize]| -> Vec<f64> {
        b.windows(2)
            .map(|p| (p[0] + p[1] - 1) as f64 / 2.0)
            .collect()
    };
    let cx = centers(&xb);
    let cy = centers(&yb);
    let bracket = |c: &[f64], v: f64| -> (usize, usize, f32) {
        if v <= c[0] {
            return (0, 0, 0.0);
        }
        let last = c.len() - 1;
        if v >= c[last] {
            return (last, last, 0.0);
        }
        let i = c.partition_point(|&ci| ci <= v) - 1;
        (i, i + 1, ((v - c[i]) / (c[i + 1] - c[i])) as f32)
    };
    let xs: Vec<(usize, usize, f32)> = (0..w).map(|x| bracket(&cx, x as f64)).collect();

    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let (j0, j1, fy) = bracket(&cy, y as f64);
        for x in 0..w {
            let (i0, i1, fx) = xs[x];
            let v = img.get(x, y) as usize;
            let top = luts[j0 * nx + i0][v] * (1.0 - fx) + luts[j0 * nx + i1][v] * fx;
            let bottom = luts[j1 * nx + i0][v] * (1.0 - fx) + luts[j1 * nx + i1][v] * fx;
            let mapped = top * (1.0 - fy) + bottom * fy;
            out[y * w + x] = mapped.round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage::new(w, h, out, img.mm_per_pixel())
}

fn tile_mapping(hist: &[u32; 256], clip_limit: f64) -> [f32; 256] {
    let mut lut = [0f32; 256];
    let lo = hist.iter().position(|&c| c > 0);
    let hi = hist.iter().rposition(|&c| c > 0);
    if lo == hi {
        for (k, v) in lut.iter_mut().enumerate() {
            *v = k as f32;
        }
        return lut;
    }
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let limit = (clip_limit * total / 256.0).max(1.0);
    let mut clipped = [0f64; 256];
    let mut excess = 0.0;
    for (k, &c) in hist.iter().enumerate() {
        let c = c as f64;
        if c > limit {
            excess += c - limit;
            clipped[k] = limit;
        } else {
            clipped[k] = c;
        }
    }
    let share = excess / 256.0;
    let mut cdf = 0.0;
    for k in 0..256 {
        cdf += clipped[k] + share;
        lut[k] = (255.0 * cdf / total) as f32;
    }
    lut
}

/// Discrete Gaussian of radius `ceil(3 sigma)`, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<Raster> {
    blur_raster(&img.to_raster(), sigma)
}

/// Separable Gaussian smoothing of a real raster.
pub fn blur_raster(src: &Raster, sigma: f64) -> Result<Raster> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be positive"));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * src.get_clamped(x as isize + k as isize - r, y as isize) as f64;
            }
            tmp.set(x, y, acc as f32);
        }
    }
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y as isize + k as isize - r) as f64;
            }
            out.set(x, y, acc as f32);
        }
    }
    Ok(out)
}

/// Per-pixel gradient from 3x3 Sobel kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
    pub magnitude: Vec<f32>,
    /// `atan2(gy, gx)` in radians, image coordinates (y down).
    pub direction: Vec<f32>,
}

impl GradientField {
    #[inline]
    pub fn magnitude_at(&self, x: usize, y: usize) -> f32 {
        self.magnitude[y * self.width + x]
    }

    #[inline]
    pub fn direction_at(&self, x: usize, y: usize) -> f32 {
        self.direction[y * self.width + x]
    }

    pub fn max_magnitude(&self) -> f32 {
        self.magnitude.iter().copied().fold(0.0, f32::max)
    }
}

pub fn sobel_gradients(src: &Raster) -> Result<GradientField> {
    let (w, h) = (src.width, src.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let n = w * h;
    let mut field = GradientField {
        width: w,
        height: h,
        gx: vec![0.0; n],
        gy: vec![0.0; n],
        magnitude: vec![0.0; n],
        direction: vec![0.0; n],
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| src.get_clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            field.gx[i] = gx;
            field.gy[i] = gy;
            field.magnitude[i] = gx.hypot(gy);
            field.direction[i] = gy.atan2(gx);
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::DEFAULT_MM_PER_PIXEL;
    use proptest::prelude::*;
    use std::f32::consts::PI;

    fn image_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        GrayImage::new(w, h, px, DEFAULT_MM_PER_PIXEL).unwrap()
    }

    #[test]
    fn clahe_constant_image_is_unchanged() {
        for v in [0u8, 1, 77, 128, 254, 255] {
            let img = GrayImage::filled(96, 80, v);
            let out = enhance_adaptive(&img, &ClaheParams::default()).unwrap();
            assert!(out.pixels().iter().all(|&p| (p as i32 - v as i32).abs() <= 1));
        }
    }

    #[test]
    fn clahe_two_flat_halves() {
        let img = image_from_fn(128, 64, |x, _| if x < 64 { 50 } else { 200 });
        let params = ClaheParams {
            tile: 64,
            clip_limit: 40.0,
        };
        let out = enhance_adaptive(&img, &params).unwrap();
        for (x0, x1) in [(0usize, 64usize), (64, 128)] {
            let (imin, imax, omin, omax) = half_range(&img, &out, x0, x1);
            assert!(omin <= imin && omax >= imax);
            assert!(omax - omin >= imax - imin);
        }
    }

    fn half_range(img: &GrayImage, out: &GrayImage, x0: usize, x1: usize) -> (u8, u8, u8, u8) {
        let mut r = (255u8, 0u8, 255u8, 0u8);
        for y in 0..img.height() {
            for x in x0..x1 {
                r.0 = r.0.min(img.get(x, y));
                r.1 = r.1.max(img.get(x, y));
                r.2 = r.2.min(out.get(x, y));
                r.3 = r.3.max(out.get(x, y));
            }
        }
        r
    }

    #[test]
    fn clahe_spreads_low_contrast_halves() {
        // each half is a two-level texture 4 gray levels apart
        let img = image_from_fn(128, 64, |x, y| {
            let base = if x < 64 { 50 } else { 200 };
            base + ((x + y) % 2) as u8 * 4
        });
        let params = ClaheParams {
            tile: 64,
            clip_limit: 40.0,
        };
        let out = enhance_adaptive(&img, &params).unwrap();
        for (x0, x1) in [(0usize, 64usize), (64, 128)] {
            let (imin, imax, omin, omax) = half_range(&img, &out, x0, x1);
            assert!(omax - omin > 4 * (imax - imin), "{omin}..{omax}");
        }
    }

    #[test]
    fn clahe_rejects_oversized_tile_and_bad_params() {
        let img = GrayImage::filled(32, 100, 9);
        assert!(matches!(
            enhance_adaptive(&img, &ClaheParams::default()),
            Err(Error::TileLargerThanImage { .. })
        ));
        let bad = ClaheParams {
            tile: 4,
            clip_limit: 2.0,
        };
        assert!(enhance_adaptive(&img, &bad).is_err());
        let bad = ClaheParams {
            tile: 8,
            clip_limit: 0.5,
        };
        assert!(enhance_adaptive(&img, &bad).is_err());
    }

    #[test]
    fn blurred_impulse_matches_analytic_gaussian() {
        let sigma = 1.0;
        let img = image_from_fn(21, 21, |x, y| if x == 10 && y == 10 { 255 } else { 0 });
        let out = blur_raster(
            &Raster::from_vec(21, 21, img.pixels().iter().map(|&p| p as f32 / 255.0).collect())
                .unwrap(),
            sigma,
        )
        .unwrap();
        // normalized 2-D Gaussian sampled on the (2r+1)^2 support
        let r = 3i64;
        let z: f64 = (-r..=r)
            .flat_map(|j| (-r..=r).map(move |i| (i, j)))
            .map(|(i, j)| (-((i * i + j * j) as f64) / 2.0).exp())
            .sum();
        let mut total = 0.0f64;
        for y in 0..21i64 {
            for x in 0..21i64 {
                let (dx, dy) = (x - 10, y - 10);
                let expected = if dx.abs() <= r && dy.abs() <= r {
                    (-((dx * dx + dy * dy) as f64) / 2.0).exp() / z
                } else {
                    0.0
                };
                let got = out.get(x as usize, y as usize) as f64;
                assert!((got - expected).abs() < 1e-6, "({x},{y}) {got} vs {expected}");
                total += got;
            }
        }
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blur_preserves_constant() {
        let out = gaussian_blur(&GrayImage::filled(17, 9, 131), 2.3).unwrap();
        assert!(out.data.iter().all(|&v| (v - 131.0).abs() < 1e-3));
        assert!(gaussian_blur(&GrayImage::filled(3, 3, 1), 0.0).is_err());
    }

    #[test]
    fn sobel_vertical_step() {
        let img = image_from_fn(20, 12, |x, _| if x < 10 { 0 } else { 255 });
        let g = sobel_gradients(&img.to_raster()).unwrap();
        let max = g.max_magnitude();
        for y in 1..11 {
            for x in [9usize, 10] {
                assert_eq!(g.magnitude_at(x, y), max);
                assert!(g.direction_at(x, y).abs() < 1e-6);
            }
            assert_eq!(g.magnitude_at(5, y), 0.0);
        }
    }

    #[test]
    fn sobel_constant_and_too_small() {
        let g = sobel_gradients(&GrayImage::filled(8, 8, 90).to_raster()).unwrap();
        assert!(g.magnitude.iter().all(|&m| m == 0.0));
        assert!(matches!(
            sobel_gradients(&Raster::new(2, 5)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn sobel_direction_rotates_with_image() {
        let (w, h) = (15usize, 11usize);
        let img = image_from_fn(w, h, |x, y| ((x * 37 + y * y * 11 + x * y * 5) % 251) as u8);
        // rotate 90 degrees clockwise on screen: (x, y) -> (h - 1 - y, x)
        let rot = image_from_fn(h, w, |x, y| img.get(y, h - 1 - x));
        let g = sobel_gradients(&img.to_raster()).unwrap();
        let gr = sobel_gradients(&rot.to_raster()).unwrap();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if g.magnitude_at(x, y) < 1.0 {
                    continue;
                }
                let (rx, ry) = (h - 1 - y, x);
                let mut d = gr.direction_at(rx, ry) - g.direction_at(x, y) - PI / 2.0;
                d = (d + PI).rem_euclid(2.0 * PI) - PI;
                assert!(d.abs() < 1e-4, "({x},{y}) off by {d}");
            }
        }
    }

    #[test]
    fn crop_basics() {
        let img = image_from_fn(12, 10, |x, y| (x + 12 * y) as u8);
        let full = crop(&img, &Region::full(&img)).unwrap();
        assert_eq!(full.image, img);
        let one = crop(&img, &Region::new(5, 7, 1, 1).unwrap()).unwrap();
        assert_eq!(one.image.pixels(), &[img.get(5, 7)]);
        let clipped = crop(&img, &Region::new(-3, 8, 6, 9).unwrap()).unwrap();
        assert_eq!(clipped.region, Region::new(0, 8, 3, 2).unwrap());
        assert!(matches!(
            crop(&img, &Region::new(40, 0, 3, 3).unwrap()),
            Err(Error::EmptyIntersection)
        ));
    }

    proptest! {
        #[test]
        fn clahe_output_in_range_and_shape(seed in any::<u64>()) {
            let img = image_from_fn(40, 33, |x, y| ((seed as usize ^ (x * 131 + y * 71)) % 256) as u8);
            let out = enhance_adaptive(&img, &ClaheParams { tile: 16, clip_limit: 3.0 }).unwrap();
            prop_assert_eq!((out.width(), out.height()), (40, 33));
            prop_assert_eq!(out.mm_per_pixel(), img.mm_per_pixel());
        }

        #[test]
        fn blur_commutes_with_mirror(vals in proptest::collection::vec(any::<u8>(), 13 * 7), sigma in 0.5f64..3.0) {
            let img = GrayImage::new(13, 7, vals, DEFAULT_MM_PER_PIXEL).unwrap();
            let mirrored = image_from_fn(13, 7, |x, y| img.get(12 - x, y));
            let a = gaussian_blur(&img, sigma).unwrap();
            let b = gaussian_blur(&mirrored, sigma).unwrap();
            for y in 0..7 {
                for x in 0..13 {
                    prop_assert!((a.get(x, y) - b.get(12 - x, y)).abs() < 1e-3);
                }
            }
        }

        #[test]
        fn sobel_magnitude_ignores_offset(vals in proptest::collection::vec(0u8..200, 9 * 9), c in 0u8..55) {
            let img = GrayImage::new(9, 9, vals, DEFAULT_MM_PER_PIXEL).unwrap();
            let shifted = image_from_fn(9, 9, |x, y| img.get(x, y) + c);
            let a = sobel_gradients(&img.to_raster()).unwrap();
            let b = sobel_gradients(&shifted.to_raster()).unwrap();
            for y in 1..8 {
                for x in 1..8 {
                    prop_assert_eq!(a.magnitude_at(x, y), b.magnitude_at(x, y));
                }
            }
        }

        #[test]
        fn crop_of_crop_is_crop_of_intersection(
            ax in -5i64..20, ay in -5i64..20, aw in 1i64..20, ah in 1i64..20,
            bx in -5i64..20, by in -5i64..20, bw in 1i64..20, bh in 1i64..20,
        ) {
            let img = image_from_fn(16, 14, |x, y| (x * 16 + y) as u8);
            let ra = Region::new(ax, ay, aw, ah).unwrap();
            let rb = Region::new(bx, by, bw, bh).unwrap();
            let Ok(first) = crop(&img, &ra) else { return Ok(()); };
            // region b expressed in the first crop's frame
            let local = Region::new(bx - first.region.x0, by - first.region.y0, bw, bh).unwrap();
            let nested = crop(&first.image, &local);
            let direct = ra.intersect(&rb).and_then(|r| crop(&img, &r).ok());
            match (nested, direct) {
                (Ok(n), Some(d)) => prop_assert_eq!(n.image, d.image),
                (Err(_), None) => {}
                (n, d) => prop_assert!(false, "mismatch {:?} {:?}", n.is_ok(), d.is_some()),
            }
        }
    }
}
