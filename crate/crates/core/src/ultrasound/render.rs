use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Gamma};

use super::{UltrasoundConfig, UltrasoundFrame};
use crate::phantom::PhantomScene;
use crate::rng::mix;
use crate::spatial::{Pose, Vec3};

/// Pre-generated multiplicative speckle textures. Each frame takes one at
/// a random cyclic offset, which keeps per-frame cost at a copy.
#[derive(Debug, Clone)]
pub struct SpeckleBank {
    width: usize,
    height: usize,
    textures: Vec<Vec<u8>>,
    background: f64,
    seed: Option<u64>,
}

impl SpeckleBank {
    pub fn new(cfg: &UltrasoundConfig, seed: u64) -> Self {
        let (w, h) = (cfg.probe.image_width, cfg.probe.image_height);
        let looks = cfg.speckle_looks;
        let gamma = Gamma::new(looks, looks).expect("positive speckle looks");
        let mut lut = [0u8; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            let q = gamma.inverse_cdf((i as f64 + 0.5) / 256.0);
            *v = (cfg.background * q).round().clamp(0.0, 255.0) as u8;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x005E_C71E));
        let textures = (0..cfg.speckle_bank)
            .map(|_| {
                let mut t = vec![0u8; w * h];
                rng.fill_bytes(&mut t);
                for b in t.iter_mut() {
                    *b = lut[*b as usize];
                }
                t
            })
            .collect();
        Self {
            width: w,
            height: h,
            textures,
            background: cfg.background,
            seed: Some(seed),
        }
    }

    /// Uniform background, for noise-free rendering.
    pub fn flat(cfg: &UltrasoundConfig) -> Self {
        let (w, h) = (cfg.probe.image_width, cfg.probe.image_height);
        Self {
            width: w,
            height: h,
            textures: vec![vec![cfg.background.round() as u8; w * h]],
            background: cfg.background,
            seed: None,
        }
    }

    fn fill(&self, frame_id: u64, out: &mut Vec<u8>) {
        out.clear();
        let Some(seed) = self.seed else {
            out.extend_from_slice(&self.textures[0]);
            return;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, frame_id));
        let tex = &self.textures[rng.random_range(0..self.textures.len())];
        let dr = rng.random_range(0..self.height);
        let dc = rng.random_range(0..self.width);
        for r in 0..self.height {
            let row = &tex[((r + dr) % self.height) * self.width..][..self.width];
            out.extend_from_slice(&row[dc..]);
            out.extend_from_slice(&row[..dc]);
        }
    }
}

struct Raster<'a> {
    data: &'a mut [u8],
    width: usize,
    height: usize,
    px: f64,
    lumen_gain: f64,
    lumen_cap: f64,
}

impl Raster<'_> {
    fn col_x(&self, c: usize) -> f64 {
        (c as f64 - self.width as f64 / 2.0) * self.px
    }

    fn row_z(&self, r: usize) -> f64 {
        r as f64 * self.px
    }

    fn cols(&self, x0: f64, x1: f64) -> std::ops::Range<usize> {
        let w = self.width as f64;
        let lo = (x0 / self.px + w / 2.0).floor().clamp(0.0, w) as usize;
        let hi = ((x1 / self.px + w / 2.0).ceil() + 1.0).clamp(0.0, w) as usize;
        lo..hi
    }

    fn rows(&self, z0: f64, z1: f64) -> std::ops::Range<usize> {
        let h = self.height as f64;
        let lo = (z0 / self.px).floor().clamp(0.0, h) as usize;
        let hi = ((z1 / self.px).ceil() + 1.0).clamp(0.0, h) as usize;
        lo..hi
    }

    fn darken(&mut self, r: usize, c: usize) {
        let i = r * self.width + c;
        self.data[i] = (self.data[i] as f64 * self.lumen_gain).min(self.lumen_cap).round() as u8;
    }
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Cross-section of a tube crossing the image plane, squashed vertically
/// about its center and widened laterally by the same factor.
fn draw_crossing(img: &mut Raster, a: &Vec3, b: &Vec3, radius: f64, squash: f64) {
    let ab = b - a;
    let (ya, yb) = (a.y, b.y);
    // part of the segment within one radius of the plane
    let (t0, t1) = if (yb - ya).abs() < 1e-15 {
        if ya.abs() > radius {
            return;
        }
        (0.0, 1.0)
    } else {
        let ta = (-radius - ya) / (yb - ya);
        let tb = (radius - ya) / (yb - ya);
        (ta.min(tb).max(0.0), ta.max(tb).min(1.0))
    };
    if t0 > t1 {
        return;
    }
    let t_mid = if (yb - ya).abs() < 1e-15 { 0.5 } else { (-ya / (yb - ya)).clamp(0.0, 1.0) };
    let center = a + ab * t_mid;
    let (p0, p1) = (a + ab * t0, a + ab * t1);
    let (x0, x1) = (p0.x.min(p1.x) - radius, p0.x.max(p1.x) + radius);
    let (z0, z1) = (p0.z.min(p1.z) - radius, p0.z.max(p1.z) + radius);
    let widen = |x: f64| center.x + (x - center.x) / squash;
    let flatten = |z: f64| center.z + (z - center.z) * squash;
    let cols = img.cols(widen(x0), widen(x1));
    let rows = img.rows(flatten(z0), flatten(z1));
    for r in rows {
        let z = center.z + (img.row_z(r) - center.z) / squash;
        for c in cols.clone() {
            let x = center.x + (img.col_x(c) - center.x) * squash;
            if segment_distance(&Vec3::new(x, 0.0, z), a, b) < radius {
                img.darken(r, c);
            }
        }
    }
}

/// Vessel lying along the array: a band whose thickness is the chord of the
/// tube cut by the plane, thinned by compression.
fn draw_band(img: &mut Raster, a: &Vec3, b: &Vec3, radius: f64, squash: f64) {
    let (xa, xb) = if a.x <= b.x { (a, b) } else { (b, a) };
    let span = xb.x - xa.x;
    for c in img.cols(xa.x, xb.x) {
        let x = img.col_x(c);
        if x < xa.x || x > xb.x {
            continue;
        }
        let t = if span > 0.0 { (x - xa.x) / span } else { 0.0 };
        let y = xa.y + (xb.y - xa.y) * t;
        if y.abs() >= radius {
            continue;
        }
        let zc = xa.z + (xb.z - xa.z) * t;
        let half = (radius * radius - y * y).sqrt() * squash;
        for r in img.rows(zc - half, zc + half) {
            if (img.row_z(r) - zc).abs() < half {
                img.darken(r, c);
            }
        }
    }
}

/// Frame seen by a probe at `probe` pressing with `normal_force` newtons.
/// Image columns run along the probe x axis, rows along probe z (depth).
pub fn render_frame(
    scene: &PhantomScene,
    probe: &Pose,
    normal_force: f64,
    cfg: &UltrasoundConfig,
    bank: &SpeckleBank,
    frame_id: u64,
) -> UltrasoundFrame {
    let (w, h) = (cfg.probe.image_width, cfg.probe.image_height);
    let mut data = Vec::with_capacity(w * h);
    bank.fill(frame_id, &mut data);
    let squash = cfg.compression.squash(normal_force);
    let cos_tol = cfg.longitudinal_tolerance_deg.to_radians().cos();
    let to_probe = probe.inverse();
    {
        let mut img = Raster {
            data: &mut data,
            width: w,
            height: h,
            px: cfg.probe.px(),
            lumen_gain: cfg.vessel_intensity / bank.background,
            lumen_cap: 30.0,
        };
        for vessel in &scene.vessels {
            for (i, seg) in vessel.centerline.windows(2).enumerate() {
                let a = to_probe.transform_point(&seg[0]);
                let b = to_probe.transform_point(&seg[1]);
                let radius = 0.5 * (vessel.radius_mm[i] + vessel.radius_mm[i + 1]) * 1e-3;
                let dir = (b - a).normalize();
                if dir.x.abs() >= cos_tol {
                    draw_band(&mut img, &a, &b, radius, squash);
                } else {
                    draw_crossing(&mut img, &a, &b, radius, squash);
                }
            }
        }
    }
    let half_box = cfg.center_box_px / 2;
    UltrasoundFrame {
        width: w,
        height: h,
        intensities: data,
        frame_id,
        probe: *probe,
        center_box: (w / 2 - half_box, w / 2 - half_box + cfg.center_box_px),
    }
}
