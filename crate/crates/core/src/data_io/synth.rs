//! Deterministic synthetic RGB-D rail images with rendered defects.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::{to_byte, Image};
use super::sample::Sample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DefectKind {
    Scar,
    Crack,
    Hole,
    Weld,
}

impl DefectKind {
    pub const ALL: [DefectKind; 4] = [DefectKind::Scar, DefectKind::Crack, DefectKind::Hole, DefectKind::Weld];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Scar => "scar",
            DefectKind::Crack => "crack",
            DefectKind::Hole => "hole",
            DefectKind::Weld => "weld",
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefectKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown defect kind {s:?}")))
    }
}

/// Generator settings. Sizes are fractions of the shorter image side.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of defects per image, drawn uniformly.
    pub defect_count: (usize, usize),
    pub kinds: Vec<DefectKind>,
    /// Radius range of blob-like defects.
    pub defect_scale: (f64, f64),
    /// Depth change at the centre of a defect, in unit depth.
    pub depth_amplitude: f64,
    /// Amplitude of the band-limited background texture.
    pub texture_amplitude: f64,
    /// Per-pixel sensor noise σ.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 64,
            width: 64,
            defect_count: (1, 3),
            kinds: DefectKind::ALL.to_vec(),
            defect_scale: (0.08, 0.2),
            depth_amplitude: 0.35,
            texture_amplitude: 0.08,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.defect_count;
        let (slo, shi) = self.defect_scale;
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic image size must be positive".into()));
        }
        if lo > hi {
            return Err(Error::Config(format!("defect count range {lo}..={hi} is empty")));
        }
        if hi > 0 && self.kinds.is_empty() {
            return Err(Error::Config("no defect kinds enabled".into()));
        }
        if !(slo > 0.0 && slo <= shi && shi <= 0.5) {
            return Err(Error::Config(format!("defect scale range {slo}..{shi} must lie in (0, 0.5]")));
        }
        Ok(())
    }
}

/// Redraws allowed before a defect is shrunk to fit.
const MAX_RETRIES: usize = 16;

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<[f64; 3]>,
    depth: Vec<f64>,
    mask: Vec<bool>,
}

impl Canvas {
    fn mark(&mut self, y: usize, x: usize, shade: [f64; 3], depth_delta: f64, blend: f64) {
        let i = y * self.w + x;
        for (c, s) in self.rgb[i].iter_mut().zip(shade) {
            *c = *c * (1.0 - blend) + s * blend;
        }
        self.depth[i] += depth_delta;
        self.mask[i] = true;
    }
}

/// Smooth noise: bilinear interpolation of a coarse random grid.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / h as f64 * cells as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / w as f64 * cells as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |yy: usize, xx: usize| grid[yy * g + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn background(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Canvas {
    let (h, w) = (spec.height, spec.width);
    let coarse = value_noise(rng, h, w, 4);
    let fine = value_noise(rng, h, w, 12);
    let tint = rng.gen_range(-0.04..0.04);
    let centre = rng.gen_range(0.4..0.6);
    let mut rgb = Vec::with_capacity(h * w);
    let mut depth = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // Rail head: bright polished band running vertically.
            let u = (x as f64 + 0.5) / w as f64 - centre;
            let sheen = 0.45 + 0.25 * (-u * u / 0.05).exp();
            let tex = spec.texture_amplitude * (0.7 * coarse[y * w + x] + 0.3 * fine[y * w + x]);
            let v = sheen + tex;
            rgb.push([v + tint, v, v - tint]);
            depth.push(0.55 + 0.1 * (-u * u / 0.08).exp() + 0.5 * tex);
        }
    }
    Canvas {
        h,
        w,
        rgb,
        depth,
        mask: vec![false; h * w],
    }
}

/// Axis-aligned bounding box of a candidate defect; must lie inside the image.
fn fits(c: &Canvas, cy: f64, cx: f64, ry: f64, rx: f64) -> bool {
    cy - ry >= 0.0 && cx - rx >= 0.0 && cy + ry <= c.h as f64 - 1.0 && cx + rx <= c.w as f64 - 1.0
}

fn draw_blob(c: &mut Canvas, spec: &SynthSpec, kind: DefectKind, rng: &mut ChaCha8Rng) {
    let side = c.h.min(c.w) as f64;
    let (lo, hi) = spec.defect_scale;
    let mut shrink = 1.0;
    let (mut cy, mut cx, mut ry, mut rx, mut angle);
    let mut tries = 0;
    loop {
        let r = rng.gen_range(lo..=hi) * side * shrink;
        let aspect = if kind == DefectKind::Scar { rng.gen_range(1.5..3.0) } else { 1.0 };
        ry = (r * aspect).max(1.0);
        rx = (r / aspect.sqrt()).max(1.0);
        angle = if kind == DefectKind::Scar { rng.gen_range(0.0..std::f64::consts::PI) } else { 0.0 };
        cy = rng.gen_range(0.0..c.h as f64);
        cx = rng.gen_range(0.0..c.w as f64);
        let ext = ry.max(rx);
        if fits(c, cy, cx, ext, ext) {
            break;
        }
        tries += 1;
        if tries >= MAX_RETRIES {
            shrink *= 0.7;
            tries = 0;
        }
    }
    let (sin, cos) = angle.sin_cos();
    let shade = match kind {
        DefectKind::Scar => [0.22, 0.2, 0.18],
        DefectKind::Hole => [0.08, 0.08, 0.1],
        _ => [0.95, 0.92, 0.85],
    };
    let amp = match kind {
        DefectKind::Scar => -spec.depth_amplitude * 0.6,
        DefectKind::Hole => -spec.depth_amplitude,
        _ => spec.depth_amplitude * 0.6,
    };
    let ext = ry.max(rx).ceil() as isize + 1;
    let (y0, x0) = (cy.round() as isize, cx.round() as isize);
    for y in (y0 - ext).max(0)..(y0 + ext + 1).min(c.h as isize) {
        for x in (x0 - ext).max(0)..(x0 + ext + 1).min(c.w as isize) {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let (v, u) = (dy * cos - dx * sin, dy * sin + dx * cos);
            let d2 = (v / ry).powi(2) + (u / rx).powi(2);
            if d2 <= 1.0 {
                let profile = 1.0 - d2;
                c.mark(y as usize, x as usize, shade, amp * profile.sqrt(), 0.6 + 0.3 * profile);
            }
        }
    }
}

fn draw_crack(c: &mut Canvas, spec: &SynthSpec, rng: &mut ChaCha8Rng) {
    let side = c.h.min(c.w) as f64;
    let half = rng.gen_range(1..=3usize) as f64 / 2.0;
    let len = rng.gen_range(spec.defect_scale.0..=spec.defect_scale.1) * side * 4.0;
    let steps = (len / 2.0).ceil().max(2.0) as usize;
    let mut pts = Vec::with_capacity(steps + 1);
    let mut tries = 0;
    loop {
        pts.clear();
        let (mut y, mut x) = (rng.gen_range(0.0..c.h as f64), rng.gen_range(0.0..c.w as f64));
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        pts.push((y, x));
        for _ in 0..steps {
            heading += rng.gen_range(-0.5..0.5);
            y += 2.0 * heading.sin();
            x += 2.0 * heading.cos();
            pts.push((y, x));
        }
        let inside = pts.iter().all(|&(py, px)| fits(c, py, px, half, half));
        tries += 1;
        if inside || tries >= MAX_RETRIES {
            break;
        }
    }
    let clamp = |v: f64, n: usize| v.clamp(half, n as f64 - 1.0 - half);
    for p in pts.iter_mut() {
        *p = (clamp(p.0, c.h), clamp(p.1, c.w));
    }
    let amp = -spec.depth_amplitude * 0.8;
    let reach = half + 0.5;
    let r = reach.ceil() as isize;
    let mut hit = vec![false; c.h * c.w];
    for seg in pts.windows(2) {
        let ((ay, ax), (by, bx)) = (seg[0], seg[1]);
        let ylo = (ay.min(by).floor() as isize - r).max(0);
        let yhi = (ay.max(by).ceil() as isize + r).min(c.h as isize - 1);
        let xlo = (ax.min(bx).floor() as isize - r).max(0);
        let xhi = (ax.max(bx).ceil() as isize + r).min(c.w as isize - 1);
        for y in ylo..=yhi {
            for x in xlo..=xhi {
                if segment_distance(y as f64, x as f64, (ay, ax), (by, bx)) <= half {
                    hit[y as usize * c.w + x as usize] = true;
                }
            }
        }
    }
    for (i, _) in hit.iter().enumerate().filter(|(_, &h)| h) {
        c.mark(i / c.w, i % c.w, [0.1, 0.09, 0.08], amp, 0.85);
    }
}

fn segment_distance(py: f64, px: f64, (ay, ax): (f64, f64), (by, bx): (f64, f64)) -> f64 {
    let (dy, dx) = (by - ay, bx - ax);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((py - ay) * dy + (px - ax) * dx) / len2).clamp(0.0, 1.0)
    };
    ((py - ay - t * dy).powi(2) + (px - ax - t * dx).powi(2)).sqrt()
}

/// Renders sample `index` of the set described by `spec`. Each index has
/// its own random stream, so any subset can be regenerated independently.
pub fn generate_one(spec: &SynthSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut canvas = background(spec, &mut rng);
    let count = rng.gen_range(spec.defect_count.0..=spec.defect_count.1);
    for _ in 0..count {
        let kind = spec.kinds[rng.gen_range(0..spec.kinds.len())];
        match kind {
            DefectKind::Crack => draw_crack(&mut canvas, spec, &mut rng),
            blob => draw_blob(&mut canvas, spec, blob, &mut rng),
        }
    }
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let (h, w) = (spec.height, spec.width);
    let mut rgb = Vec::with_capacity(3 * h * w);
    let mut depth = Vec::with_capacity(h * w);
    for (px, d) in canvas.rgb.iter().zip(&canvas.depth) {
        for &v in px {
            rgb.push(to_byte(v + noise.sample(&mut rng)));
        }
        depth.push(to_byte(d + noise.sample(&mut rng)));
    }
    let mask = canvas.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    Sample::new(
        format!("synth_{index:05}"),
        Image::rgb(w, h, rgb)?,
        Image::gray(w, h, depth)?,
        Image::gray(w, h, mask)?,
    )
}

/// Number of defects `generate_one` renders for `index` (same draw order).
pub fn defect_count(spec: &SynthSpec, index: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let _ = background(spec, &mut rng);
    rng.gen_range(spec.defect_count.0..=spec.defect_count.1)
}

pub fn generate(spec: &SynthSpec, n: usize) -> Result<Vec<Sample>> {
    (0..n).map(|i| generate_one(spec, i)).collect()
}
