use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_io::FloatSample;
use crate::{Error, Result};

const CROP_RETRIES: usize = 10;

/// Augmentation magnitudes. Each geometric transform has its own
/// probability so that an all-zero spec is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub flip_prob: f64,
    pub crop_prob: f64,
    /// Side-length fraction of the crop window.
    pub crop_scale: (f64, f64),
    pub rotate_prob: f64,
    /// Angles are drawn uniformly from ±this many degrees.
    pub rotation_degrees: f64,
    pub gaussian_sigma: f64,
    pub impulse_prob: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flip_prob: 0.5,
            crop_prob: 0.5,
            crop_scale: (0.7, 1.0),
            rotate_prob: 0.5,
            rotation_degrees: 15.0,
            gaussian_sigma: 0.01,
            impulse_prob: 0.01,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Every transform off.
    pub fn identity() -> Self {
        AugmentSpec {
            flip_prob: 0.0,
            crop_prob: 0.0,
            rotate_prob: 0.0,
            gaussian_sigma: 0.0,
            impulse_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("crop_prob", self.crop_prob)?;
        prob("rotate_prob", self.rotate_prob)?;
        prob("impulse_prob", self.impulse_prob)?;
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop_scale must satisfy 0 < lo ≤ hi ≤ 1, got ({lo}, {hi})")));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(Error::Config("rotation_degrees must be finite and ≥ 0".into()));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Config("gaussian_sigma must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Crop window in source pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropWindow {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

/// One realized set of augmentation decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub crop: Option<CropWindow>,
    /// Radians, counter-clockwise.
    pub angle: Option<f64>,
    pub gaussian_sigma: f64,
    pub impulse_prob: f64,
    pub noise_seed: u64,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(spec: &AugmentSpec, height: usize, width: usize, rng: &mut R) -> Self {
        let flip = rng.gen::<f64>() < spec.flip_prob;
        let crop = if rng.gen::<f64>() < spec.crop_prob {
            draw_crop(spec, height, width, rng)
        } else {
            None
        };
        let angle = if rng.gen::<f64>() < spec.rotate_prob && spec.rotation_degrees > 0.0 {
            let d = spec.rotation_degrees;
            Some(rng.gen_range(-d..=d).to_radians())
        } else {
            None
        };
        AugmentDraw {
            flip,
            crop,
            angle,
            gaussian_sigma: spec.gaussian_sigma,
            impulse_prob: spec.impulse_prob,
            noise_seed: rng.gen(),
        }
    }
}

fn draw_crop<R: Rng + ?Sized>(spec: &AugmentSpec, height: usize, width: usize, rng: &mut R) -> Option<CropWindow> {
    let (lo, hi) = spec.crop_scale;
    for _ in 0..CROP_RETRIES {
        let s = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let (ch, cw) = (s * height as f64, s * width as f64);
        if ch < 1.0 || cw < 1.0 {
            continue;
        }
        return Some(CropWindow {
            top: rng.gen::<f64>() * (height as f64 - ch),
            left: rng.gen::<f64>() * (width as f64 - cw),
            height: ch,
            width: cw,
        });
    }
    None
}

/// Mirror every plane left to right.
pub fn flip_horizontal(s: &FloatSample) -> FloatSample {
    let w = s.width;
    let flip = |plane: &[f32]| -> Vec<f32> {
        plane.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
    };
    FloatSample {
        height: s.height,
        width: w,
        rgb: flip(&s.rgb),
        depth: flip(&s.depth),
        mask: flip(&s.mask),
    }
}

/// Maps an output pixel centre to a source position; None marks pixels
/// with no source (rotated-in corners).
type Warp<'a> = dyn Fn(f64, f64) -> Option<(f64, f64)> + 'a;

fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    // Sample positions are in pixel-centre coordinates.
    let y = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let x = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| plane[r * w + c] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

fn nearest(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let r = (y.floor().max(0.0) as usize).min(h - 1);
    let c = (x.floor().max(0.0) as usize).min(w - 1);
    plane[r * w + c]
}

fn warp(s: &FloatSample, map: &Warp) -> FloatSample {
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    let mut out = FloatSample {
        height: h,
        width: w,
        rgb: vec![0.0; 3 * hw],
        depth: vec![0.0; hw],
        mask: vec![0.0; hw],
    };
    for r in 0..h {
        for c in 0..w {
            let Some((y, x)) = map(r as f64 + 0.5, c as f64 + 0.5) else {
                continue;
            };
            let i = r * w + c;
            for ch in 0..3 {
                out.rgb[ch * hw + i] = bilinear(&s.rgb[ch * hw..(ch + 1) * hw], h, w, y, x);
            }
            out.depth[i] = bilinear(&s.depth, h, w, y, x);
            out.mask[i] = nearest(&s.mask, h, w, y, x);
        }
    }
    out
}

/// Inverse rotation about the image centre; None outside the frame.
fn unrotate(h: usize, w: usize, angle: f64) -> impl Fn(f64, f64) -> Option<(f64, f64)> {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    move |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        let (sy, sx) = (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx);
        (sy >= 0.0 && sx >= 0.0 && sy < h as f64 && sx < w as f64).then_some((sy, sx))
    }
}

fn uncrop(h: usize, w: usize, win: CropWindow) -> impl Fn(f64, f64) -> (f64, f64) {
    let (sy, sx) = (win.height / h as f64, win.width / w as f64);
    move |y, x| (win.top + y * sy, win.left + x * sx)
}

/// Resample the crop window back to full size.
pub fn crop_resize(s: &FloatSample, win: CropWindow) -> FloatSample {
    let f = uncrop(s.height, s.width, win);
    warp(s, &|y, x| Some(f(y, x)))
}

/// Rotate about the image centre; uncovered corners become zero.
pub fn rotate(s: &FloatSample, angle: f64) -> FloatSample {
    warp(s, &unrotate(s.height, s.width, angle))
}

/// Apply a realized draw. Noise touches RGB and depth, never the mask.
pub fn apply(s: &FloatSample, draw: &AugmentDraw) -> FloatSample {
    let mut out = if draw.flip { flip_horizontal(s) } else { s.clone() };
    // Crop and rotation are composed into one resampling pass.
    let (h, w) = (s.height, s.width);
    match (draw.crop, draw.angle) {
        (None, None) => {}
        (Some(win), None) => out = crop_resize(&out, win),
        (None, Some(a)) => out = rotate(&out, a),
        (Some(win), Some(a)) => {
            let (rot, crop) = (unrotate(h, w, a), uncrop(h, w, win));
            out = warp(&out, &|y, x| rot(y, x).map(|(y, x)| crop(y, x)));
        }
    }
    if draw.gaussian_sigma > 0.0 || draw.impulse_prob > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(draw.noise_seed);
        if draw.gaussian_sigma > 0.0 {
            let normal = Normal::new(0.0, draw.gaussian_sigma).expect("validated sigma");
            for v in out.rgb.iter_mut().chain(out.depth.iter_mut()) {
                *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        if draw.impulse_prob > 0.0 {
            let hw = out.height * out.width;
            for i in 0..hw {
                if rng.gen::<f64>() < draw.impulse_prob {
                    let v = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                    for ch in 0..3 {
                        out.rgb[ch * hw + i] = v;
                    }
                }
            }
        }
    }
    out
}

/// Draw and apply in one go.
pub fn augment<R: Rng + ?Sized>(s: &FloatSample, spec: &AugmentSpec, rng: &mut R) -> FloatSample {
    let draw = AugmentDraw::sample(spec, s.height, s.width, rng);
    apply(s, &draw)
}
