//! Procedural toy corpus.
//!
//! Each class is a random "landmark": a ground color with a faint texture,
//! buildings, ponds, trees and roads laid out in world coordinates
//! `[-1, 1]^2`. The satellite view renders the landmark top-down with a muted
//! palette, contrast-stretched around the corpus median level. Drone views
//! look at the same landmark rotated, zoomed in (lower altitude) and shifted, then pass through a per-image camera style: haze
//! toward neutral gray (lower contrast), extra saturation, brightness and tint.
//!
//! All randomness flows from one seed, so output is bit-identical per spec.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::RgbImage;
use crate::math;
use crate::{Error, Result};

/// Drone camera style ranges. All zero means drone colors equal satellite colors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleJitter {
    /// Additive brightness offset drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Per-channel gain drawn from `[1 - tint, 1 + tint]`.
    pub tint: f64,
    /// Blend weight toward the airlight drawn from `[haze_min, haze_max]`.
    pub haze_min: f64,
    pub haze_max: f64,
    /// Saturation gain drawn from `[1, 1 + saturation]`.
    pub saturation: f64,
}

impl StyleJitter {
    pub const NONE: StyleJitter = StyleJitter {
        brightness: 0.0,
        tint: 0.0,
        haze_min: 0.0,
        haze_max: 0.0,
        saturation: 0.0,
    };
}

impl Default for StyleJitter {
    fn default() -> Self {
        Self {
            brightness: 0.04,
            tint: 0.05,
            haze_min: 0.5,
            haze_max: 0.75,
            saturation: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub num_classes: usize,
    /// Drone views per class in the train split.
    pub drone_views: usize,
    /// Held-out drone views per class for the query split.
    pub query_views: usize,
    pub image_size: usize,
    pub seed: u64,
    pub style: StyleJitter,
    /// Largest drone rotation in degrees.
    pub max_rotation: f64,
    /// Drone zoom drawn from `[1, max_zoom]`.
    pub max_zoom: f64,
    /// Largest drone shift in world units.
    pub max_shift: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            drone_views: 8,
            query_views: 8,
            image_size: 64,
            seed: 7,
            style: StyleJitter::default(),
            max_rotation: 15.0,
            max_zoom: 1.4,
            max_shift: 0.08,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!(
                "toy dataset needs at least 2 classes, got {}",
                self.num_classes
            ));
        }
        if self.drone_views < 1 {
            return bad("toy dataset needs at least 1 drone view per class".into());
        }
        if self.image_size < 8 {
            return bad(format!("toy image size must be at least 8, got {}", self.image_size));
        }
        let s = self.style;
        let ok = [s.brightness, s.tint, s.haze_min, s.haze_max, s.saturation]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && s.haze_min <= s.haze_max
            && s.haze_max < 1.0
            && s.tint < 1.0;
        if !ok {
            return bad(format!("invalid style jitter {:?}", s));
        }
        if !(self.max_zoom >= 1.0 && self.max_rotation >= 0.0 && self.max_shift >= 0.0) {
            return bad("invalid drone geometry ranges".into());
        }
        Ok(())
    }
}

/// Rendered corpus; class `k` owns `satellite[k]`, `drone[k]` and `query[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub satellite: Vec<RgbImage>,
    pub drone: Vec<Vec<RgbImage>>,
    pub query: Vec<Vec<RgbImage>>,
}

type Rgb = [f64; 3];

const GROUNDS: [Rgb; 5] = [
    [0.42, 0.50, 0.30],
    [0.55, 0.50, 0.36],
    [0.36, 0.44, 0.28],
    [0.60, 0.56, 0.45],
    [0.47, 0.45, 0.40],
];

const ROOFS: [Rgb; 7] = [
    [0.70, 0.35, 0.28],
    [0.78, 0.76, 0.72],
    [0.40, 0.42, 0.48],
    [0.85, 0.62, 0.40],
    [0.30, 0.45, 0.62],
    [0.62, 0.30, 0.45],
    [0.92, 0.88, 0.70],
];

const WATER: Rgb = [0.16, 0.30, 0.42];
const TREE: Rgb = [0.16, 0.32, 0.14];
const ROAD: Rgb = [0.33, 0.33, 0.35];
/// Drone haze blends toward this neutral gray.
const AIRLIGHT: Rgb = [0.5, 0.5, 0.5];
/// Contrast stretch of the satellite tone around the corpus median.
const SAT_CONTRAST: f64 = 1.8;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Rect { hw: f64, hh: f64, cos: f64, sin: f64 },
    Disk { r: f64 },
    Road { dx: f64, dy: f64, len: f64, half: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    cx: f64,
    cy: f64,
    kind: Kind,
    color: Rgb,
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (px, py) = (x - self.cx, y - self.cy);
        match self.kind {
            Kind::Rect { hw, hh, cos, sin } => {
                let u = px * cos + py * sin;
                let v = -px * sin + py * cos;
                u.abs() <= hw && v.abs() <= hh
            }
            Kind::Disk { r } => px * px + py * py <= r * r,
            Kind::Road { dx, dy, len, half } => {
                let t = px * dx + py * dy;
                let n = -px * dy + py * dx;
                t.abs() <= len && n.abs() <= half
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Landmark {
    ground: Rgb,
    texture: [f64; 4],
    shapes: Vec<Shape>,
}

impl Landmark {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let ground = GROUNDS[rng.gen_range(0..GROUNDS.len())];
        let texture = [
            math::uniform(rng, 4.0, 9.0),
            math::uniform(rng, 4.0, 9.0),
            math::uniform(rng, 0.0, core::f64::consts::TAU),
            math::uniform(rng, 0.03, 0.2),
        ];
        let mut shapes = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let a = math::uniform(rng, 0.0, core::f64::consts::PI);
            shapes.push(Shape {
                cx: math::uniform(rng, -0.5, 0.5),
                cy: math::uniform(rng, -0.5, 0.5),
                kind: Kind::Road {
                    dx: math::cos(a),
                    dy: math::sin(a),
                    len: 1.6,
                    half: math::uniform(rng, 0.03, 0.06),
                },
                color: ROAD,
            });
        }
        if rng.gen_bool(0.5) {
            shapes.push(Shape {
                cx: math::uniform(rng, -0.7, 0.7),
                cy: math::uniform(rng, -0.7, 0.7),
                kind: Kind::Disk {
                    r: math::uniform(rng, 0.12, 0.25),
                },
                color: WATER,
            });
        }
        for _ in 0..rng.gen_range(2..=5) {
            shapes.push(Shape {
                cx: math::uniform(rng, -0.85, 0.85),
                cy: math::uniform(rng, -0.85, 0.85),
                kind: Kind::Disk {
                    r: math::uniform(rng, 0.04, 0.09),
                },
                color: TREE,
            });
        }
        for _ in 0..rng.gen_range(3..=6) {
            let a = math::uniform(rng, 0.0, core::f64::consts::PI);
            let shade = math::uniform(rng, 0.85, 1.1);
            let roof = ROOFS[rng.gen_range(0..ROOFS.len())];
            shapes.push(Shape {
                cx: math::uniform(rng, -0.6, 0.6),
                cy: math::uniform(rng, -0.6, 0.6),
                kind: Kind::Rect {
                    hw: math::uniform(rng, 0.07, 0.22),
                    hh: math::uniform(rng, 0.07, 0.18),
                    cos: math::cos(a),
                    sin: math::sin(a),
                },
                color: roof.map(|c| (c * shade).min(1.0)),
            });
        }
        Self {
            ground,
            texture,
            shapes,
        }
    }

    /// Satellite color at a world point; `pivot` maps to mid-gray.
    fn tile_color(&self, x: f64, y: f64, pivot: &Rgb) -> Rgb {
        let c = desaturate(self.color(x, y));
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = 0.5 + SAT_CONTRAST * (c[k] - pivot[k]);
        }
        out
    }

    fn color(&self, x: f64, y: f64) -> Rgb {
        if let Some(s) = self.shapes.iter().rev().find(|s| s.contains(x, y)) {
            return s.color;
        }
        let [fx, fy, ph, amp] = self.texture;
        let t = amp * math::sin(fx * x + ph) * math::cos(fy * y - ph);
        self.ground.map(|c| c + t)
    }
}

/// Per-channel median of the desaturated colors of all landmarks, sampled on a grid.
fn corpus_median(lands: &[Landmark]) -> Rgb {
    const GRID: usize = 32;
    let mut samples: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for land in lands {
        for y in 0..GRID {
            for x in 0..GRID {
                let u = (x as f64 + 0.5) / GRID as f64 * 2.0 - 1.0;
                let v = (y as f64 + 0.5) / GRID as f64 * 2.0 - 1.0;
                let c = desaturate(land.color(u, v));
                (0..3).for_each(|k| samples[k].push(c[k]));
            }
        }
    }
    samples.map(|mut s| {
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    })
}

/// The satellite palette is 40% desaturated toward luminance.
fn desaturate(c: Rgb) -> Rgb {
    let l = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    c.map(|v| l + 0.6 * (v - l))
}

#[derive(Debug, Clone, Copy)]
struct Camera {
    zoom: f64,
    cos: f64,
    sin: f64,
    tx: f64,
    ty: f64,
    saturation: f64,
    haze: f64,
    brightness: f64,
    gain: Rgb,
}

impl Camera {
    const SATELLITE: Camera = Camera {
        zoom: 1.0,
        cos: 1.0,
        sin: 0.0,
        tx: 0.0,
        ty: 0.0,
        saturation: 1.0,
        haze: 0.0,
        brightness: 0.0,
        gain: [1.0; 3],
    };

    fn drone<R: Rng + ?Sized>(rng: &mut R, spec: &ToySpec) -> Camera {
        let a = math::uniform(rng, -spec.max_rotation, spec.max_rotation).to_radians();
        let j = spec.style;
        let mut tint = || math::uniform(rng, 1.0 - j.tint, 1.0 + j.tint);
        let gain = [tint(), tint(), tint()];
        Camera {
            zoom: math::uniform(rng, 1.0, spec.max_zoom),
            cos: math::cos(a),
            sin: math::sin(a),
            tx: math::uniform(rng, -spec.max_shift, spec.max_shift),
            ty: math::uniform(rng, -spec.max_shift, spec.max_shift),
            saturation: math::uniform(rng, 1.0, 1.0 + j.saturation),
            haze: math::uniform(rng, j.haze_min, j.haze_max),
            brightness: math::uniform(rng, -j.brightness, j.brightness),
            gain,
        }
    }

    fn world(&self, u: f64, v: f64) -> (f64, f64) {
        let (u, v) = (u / self.zoom, v / self.zoom);
        (
            self.cos * u - self.sin * v + self.tx,
            self.sin * u + self.cos * v + self.ty,
        )
    }

    fn style(&self, c: Rgb) -> Rgb {
        let l = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        let mut out = [0.0; 3];
        for k in 0..3 {
            let s = l + self.saturation * (c[k] - l);
            let h = (1.0 - self.haze) * s + self.haze * AIRLIGHT[k];
            out[k] = (h + self.brightness) * self.gain[k];
        }
        out
    }
}

fn render<R: Rng + ?Sized>(land: &Landmark, pivot: &Rgb, cam: &Camera, size: usize, rng: &mut R) -> Result<RgbImage> {
    const SS: usize = 2;
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let u = ((x * SS + sx) as f64 + 0.5) / (size * SS) as f64 * 2.0 - 1.0;
                    let v = ((y * SS + sy) as f64 + 0.5) / (size * SS) as f64 * 2.0 - 1.0;
                    let (wx, wy) = cam.world(u, v);
                    let c = cam.style(land.tile_color(wx, wy, pivot));
                    (0..3).for_each(|k| acc[k] += c[k]);
                }
            }
            let noise = 0.04 * math::normal(rng);
            for a in acc {
                let v = a / (SS * SS) as f64 + noise;
                px.push(math::round(v * 255.0).clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(size, size, px)
}

/// Renders the whole toy corpus.
pub fn generate_toy(spec: &ToySpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = ToyDataset {
        satellite: Vec::new(),
        drone: Vec::new(),
        query: Vec::new(),
    };
    let lands: Vec<Landmark> = (0..spec.num_classes).map(|_| Landmark::random(&mut rng)).collect();
    let pivot = corpus_median(&lands);
    for land in &lands {
        out.satellite
            .push(render(land, &pivot, &Camera::SATELLITE, spec.image_size, &mut rng)?);
        let views = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<RgbImage>> {
            (0..n)
                .map(|_| {
                    let cam = Camera::drone(rng, spec);
                    render(land, &pivot, &cam, spec.image_size, rng)
                })
                .collect()
        };
        let drone = views(spec.drone_views, &mut rng)?;
        let query = views(spec.query_views, &mut rng)?;
        out.drone.push(drone);
        out.query.push(query);
    }
    Ok(out)
}
