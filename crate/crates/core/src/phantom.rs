//! Synthetic radiograph-like corpus with planted landmark structures.
//!
//! Every landmark sits on a small distinctive shape (ring, spike, chevron,
//! bar tip, disk extremum) so its position is known exactly. Incisors are
//! flat-ended bars along their tip-apex axis and the mandible is a band whose
//! lower edge lies on the Go-Me line.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::save_annotations;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::landmark::{Landmark, LandmarkSet, LineKind, Point, Source};
use crate::pnm::write_pgm;

pub const CHIN_RADIUS: f64 = 24.0;
const BACKGROUND: f32 = 90.0;
const INCISOR_HALF_WIDTH: f64 = 4.0;
const MANDIBLE_THICKNESS: f64 = 28.0;
const MANDIBLE_EXTENT: f64 = 0.65;
/// Whole-head shift in px, per axis.
const GLOBAL_SHIFT: i64 = 8;
/// Per-structure jitter in px, per axis.
const LOCAL_JITTER: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    pub count: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Uniform integer noise in `[-noise, noise]`.
    pub noise: u8,
    pub mm_per_pixel: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            count: 12,
            seed: 1,
            width: 600,
            height: 700,
            noise: 8,
            mm_per_pixel: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub id: String,
    pub image: GrayImage,
    /// Planted positions.
    pub truth: LandmarkSet,
    pub expert_a: LandmarkSet,
    pub expert_b: LandmarkSet,
    pub chin_center: Point,
}

impl PhantomCase {
    /// Inclination of a planted line in image degrees.
    pub fn planted_inclination(&self, line: LineKind) -> f64 {
        let (a, b) = line.endpoints();
        let (p, q) = (self.truth.get(a).unwrap(), self.truth.get(b).unwrap());
        crate::lines::Line2D::through(p, q)
            .map(|l| l.inclination_deg)
            .unwrap_or(f64::NAN)
    }
}

struct Canvas {
    w: usize,
    h: usize,
    v: Vec<f32>,
}

impl Canvas {
    fn paint(&mut self, bbox: (f64, f64, f64, f64), value: f32, inside: impl Fn(f64, f64) -> bool) {
        let x0 = bbox.0.floor().max(0.0) as usize;
        let y0 = bbox.1.floor().max(0.0) as usize;
        let x1 = (bbox.2.ceil().max(0.0) as usize).min(self.w - 1);
        let y1 = (bbox.3.ceil().max(0.0) as usize).min(self.h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(x as f64, y as f64) {
                    self.v[y * self.w + x] = value;
                }
            }
        }
    }

    fn disk(&mut self, c: Point, r: f64, value: f32) {
        self.paint((c.x - r, c.y - r, c.x + r, c.y + r), value, |x, y| {
            (x - c.x).hypot(y - c.y) <= r
        });
    }

    fn ring(&mut self, c: Point, r_in: f64, r_out: f64, value: f32, keep: impl Fn(f64, f64) -> bool) {
        self.paint((c.x - r_out, c.y - r_out, c.x + r_out, c.y + r_out), value, |x, y| {
            let d = (x - c.x).hypot(y - c.y);
            d >= r_in && d <= r_out && keep(x - c.x, y - c.y)
        });
    }

    /// Flat-ended bar from `a` to `b`.
    fn bar(&mut self, a: Point, b: Point, half_width: f64, value: f32) {
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len = dx.hypot(dy);
        let (ux, uy) = (dx / len, dy / len);
        let pad = half_width + 1.0;
        let bbox = (
            a.x.min(b.x) - pad,
            a.y.min(b.y) - pad,
            a.x.max(b.x) + pad,
            a.y.max(b.y) + pad,
        );
        self.paint(bbox, value, |x, y| {
            let (px, py) = (x - a.x, y - a.y);
            let t = px * ux + py * uy;
            let n = -px * uy + py * ux;
            (0.0..=len).contains(&t) && n.abs() <= half_width
        });
    }

    /// Horizontal spike with its tip at `tip`, body on the side of `dir`.
    fn spike(&mut self, tip: Point, dir: f64, length: f64, value: f32) {
        let far = tip.x + dir * length;
        self.paint(
            (tip.x.min(far), tip.y - length, tip.x.max(far), tip.y + length),
            value,
            |x, y| {
                let along = (x - tip.x) * dir;
                along >= 0.0 && along <= length && (y - tip.y).abs() <= 0.3 * along
            },
        );
    }
}

fn quantize(v: f64) -> f64 {
    (v * 64.0).round() / 64.0
}

fn jitter(rng: &mut ChaCha8Rng, amp: i64) -> f64 {
    rng.gen_range(-amp..=amp) as f64
}

/// Nominal layout on a 600 x 700 canvas, scaled to the requested size.
fn nominal(name: Landmark) -> (f64, f64) {
    match name {
        Landmark::S => (200.0, 190.0),
        Landmark::N => (500.0, 170.0),
        Landmark::Po => (90.0, 260.0),
        Landmark::Or => (400.0, 250.0),
        Landmark::Pns => (220.0, 340.0),
        Landmark::Ans => (480.0, 330.0),
        Landmark::A => (478.0, 400.0),
        Landmark::B => (478.0, 562.0),
        Landmark::Uit => (445.0, 490.0),
        Landmark::Lit => (415.0, 515.0),
        Landmark::Go => (170.0, 560.0),
        _ => (0.0, 0.0),
    }
}

/// Generates case `index` of the corpus; cases are independent of `count`.
pub fn generate_case(params: &PhantomParams, index: usize) -> Result<PhantomCase> {
    if params.width < 300 || params.height < 350 {
        return Err(Error::param("phantom.size", "canvas must be at least 300 x 350"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64 + 1);
    let sx = params.width as f64 / 600.0;
    let sy = params.height as f64 / 700.0;
    let gx = jitter(&mut rng, GLOBAL_SHIFT);
    let gy = jitter(&mut rng, GLOBAL_SHIFT);
    let mut truth = LandmarkSet::new(Source::Expert);
    let mut place = |rng: &mut ChaCha8Rng, name: Landmark, extra_y: (i64, i64)| {
        let (x, y) = nominal(name);
        let p = Point::new(
            (x * sx).round() + gx + jitter(rng, LOCAL_JITTER),
            (y * sy).round() + gy + jitter(rng, LOCAL_JITTER) + rng.gen_range(extra_y.0..=extra_y.1) as f64,
        );
        truth.set(name, p);
        p
    };
    let s = place(&mut rng, Landmark::S, (0, 0));
    let n = place(&mut rng, Landmark::N, (0, 0));
    let or = place(&mut rng, Landmark::Or, (0, 0));
    let po = place(&mut rng, Landmark::Po, (-15, 25));
    let pns = place(&mut rng, Landmark::Pns, (0, 0));
    let ans = place(&mut rng, Landmark::Ans, (0, 0));
    let a = place(&mut rng, Landmark::A, (0, 0));
    let b = place(&mut rng, Landmark::B, (0, 0));
    let uit = place(&mut rng, Landmark::Uit, (0, 0));
    let lit = place(&mut rng, Landmark::Lit, (0, 0));
    let go = place(&mut rng, Landmark::Go, (-6, 6));

    let upper_tilt = rng.gen_range(14.0..26.0f64).to_radians();
    let lower_tilt = rng.gen_range(8.0..20.0f64).to_radians();
    let uia = Point::new(
        quantize(uit.x - 110.0 * upper_tilt.sin()),
        quantize(uit.y - 110.0 * upper_tilt.cos()),
    );
    let lia = Point::new(
        quantize(lit.x - 90.0 * lower_tilt.sin()),
        quantize(lit.y + 90.0 * lower_tilt.cos()),
    );
    truth.set(Landmark::Uia, uia);
    truth.set(Landmark::Lia, lia);

    let chin = Point::new((460.0 * sx).round() + gx + jitter(&mut rng, LOCAL_JITTER), (622.0 * sy).round() + gy + jitter(&mut rng, LOCAL_JITTER));
    let r = CHIN_RADIUS;
    let me = Point::new(chin.x, chin.y + r);
    let pog = Point::new(chin.x + r, chin.y);
    let d = (r / 2f64.sqrt()).round();
    let gn = Point::new(chin.x + d, chin.y + d);
    truth.set(Landmark::Me, me);
    truth.set(Landmark::Pog, pog);
    truth.set(Landmark::Gn, gn);

    let mut c = Canvas {
        w: params.width,
        h: params.height,
        v: vec![BACKGROUND; params.width * params.height],
    };
    // Mandible band above the Go-Me line, stopping short of the chin.
    let (mx, my) = (me.x - go.x, me.y - go.y);
    let len = mx.hypot(my);
    let (ux, uy) = (mx / len, my / len);
    c.paint(
        (go.x - 2.0, go.y - MANDIBLE_THICKNESS - 2.0, me.x, me.y + 2.0),
        150.0,
        |x, y| {
            let (px, py) = (x - go.x, y - go.y);
            let t = px * ux + py * uy;
            let up = px * uy - py * ux;
            (0.0..=MANDIBLE_EXTENT * len).contains(&t) && (0.0..=MANDIBLE_THICKNESS).contains(&up)
        },
    );
    c.disk(chin, r, 200.0);
    c.ring(s, 10.0, 14.0, 180.0, |_, dy| dy >= 0.0);
    c.bar(n, Point::new(n.x - 20.0, n.y - 25.0), 3.0, 185.0);
    c.bar(n, Point::new(n.x - 20.0, n.y + 25.0), 3.0, 185.0);
    c.ring(Point::new(or.x, or.y - 6.0), 4.0, 7.5, 175.0, |_, _| true);
    c.disk(Point::new(po.x, po.y + 7.0), 7.0, 20.0);
    c.spike(pns, 1.0, 40.0, 170.0);
    c.spike(ans, -1.0, 40.0, 170.0);
    c.ring(Point::new(a.x + 18.0, a.y), 16.0, 20.0, 165.0, |dx, _| dx <= 0.0);
    c.bar(Point::new(b.x - 10.0, b.y), Point::new(b.x + 10.0, b.y), 2.0, 190.0);
    c.bar(Point::new(b.x, b.y - 10.0), Point::new(b.x, b.y + 10.0), 2.0, 190.0);
    c.bar(uia, uit, INCISOR_HALF_WIDTH, 180.0);
    c.bar(lia, lit, INCISOR_HALF_WIDTH, 180.0);

    let amp = params.noise as i32;
    let pixels: Vec<u8> = c
        .v
        .iter()
        .map(|&v| {
            let noise = if amp > 0 { rng.gen_range(-amp..=amp) } else { 0 };
            (v.round() as i32 + noise).clamp(0, 255) as u8
        })
        .collect();
    let image = GrayImage::new(params.width, params.height, pixels, params.mm_per_pixel)?;

    let mut expert_a = LandmarkSet::new(Source::Expert);
    let mut expert_b = LandmarkSet::new(Source::Expert);
    for (name, p) in truth.iter() {
        let dx = rng.gen_range(-4..=4) as f64 * 0.25;
        let dy = rng.gen_range(-4..=4) as f64 * 0.25;
        expert_a.set(name, Point::new(p.x + dx, p.y + dy));
        expert_b.set(name, Point::new(p.x - dx, p.y - dy));
    }
    truth.validate_bounds(params.width, params.height)?;
    Ok(PhantomCase {
        id: format!("ph{index:03}"),
        image,
        truth,
        expert_a,
        expert_b,
        chin_center: chin,
    })
}

pub fn generate(params: &PhantomParams) -> Result<Vec<PhantomCase>> {
    (0..params.count).map(|i| generate_case(params, i)).collect()
}

/// Writes `<id>.pgm`, `<id>.a.lmk` and `<id>.b.lmk` for every case.
pub fn write_corpus(dir: &Path, params: &PhantomParams) -> Result<Vec<PhantomCase>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cases = generate(params)?;
    for case in &cases {
        write_pgm(&dir.join(format!("{}.pgm", case.id)), &case.image)?;
        let mm = Some(params.mm_per_pixel);
        save_annotations(&dir.join(format!("{}.a.lmk", case.id)), &case.expert_a, mm)?;
        save_annotations(&dir.join(format!("{}.b.lmk", case.id)), &case.expert_b, mm)?;
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{average_expert_sets, discover_cases, load_case};

    #[test]
    fn deterministic_and_complete() {
        let p = PhantomParams::default();
        let a = generate_case(&p, 3).unwrap();
        let b = generate_case(&p, 3).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.len(), 16);
        assert_ne!(generate_case(&p, 4).unwrap().image, a.image);
    }

    #[test]
    fn experts_average_to_truth() {
        let case = generate_case(&PhantomParams::default(), 0).unwrap();
        assert_eq!(average_expert_sets(&case.expert_a, &case.expert_b).unwrap(), case.truth);
    }

    #[test]
    fn noise_stays_in_amplitude() {
        let p = PhantomParams { noise: 8, ..Default::default() };
        let case = generate_case(&p, 1).unwrap();
        // (5, 5) is background on every case.
        let v = case.image.get(5, 5) as i32;
        assert!((82..=98).contains(&v));
    }

    #[test]
    fn planted_structures_are_where_the_truth_says() {
        let p = PhantomParams { noise: 0, ..Default::default() };
        let case = generate_case(&p, 2).unwrap();
        let at = |l: Landmark, dx: f64, dy: f64| {
            let q = case.truth.get(l).unwrap();
            case.image.get((q.x + dx) as usize, (q.y + dy) as usize)
        };
        assert_eq!(at(Landmark::Me, 0.0, 0.0), 200);
        assert_eq!(at(Landmark::Me, 0.0, 1.0), 90);
        assert_eq!(at(Landmark::Pog, 0.0, 0.0), 200);
        assert_eq!(at(Landmark::Pog, 1.0, 0.0), 90);
        assert_eq!(at(Landmark::Po, 0.0, 1.0), 20);
        assert_eq!(at(Landmark::Pns, 0.0, 0.0), 170);
        assert_eq!(at(Landmark::Pns, -1.0, 0.0), 90);
        assert_eq!(at(Landmark::Ans, 1.0, 0.0), 90);
        assert_eq!(at(Landmark::B, 0.0, 0.0), 190);
    }

    #[test]
    fn written_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = PhantomParams { count: 2, ..Default::default() };
        let cases = write_corpus(dir.path(), &p).unwrap();
        let files = discover_cases(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let loaded = load_case(&files[0]).unwrap();
        assert_eq!(loaded.truth, cases[0].truth);
        assert_eq!(loaded.image.mm_per_pixel(), 0.1);
    }
}
