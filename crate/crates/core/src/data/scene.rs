//! Procedural RGB-D scenes: layered primitives with sharp occlusion
//! boundaries, plus colour texture that has no depth counterpart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::ResizeFactor;
use crate::tensor::{Shape, Tensor};

/// Colour texture applied on top of the flat primitive colours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureRule {
    /// Peak amplitude of per-pixel uniform colour noise.
    pub noise: f64,
    /// Number of colour-only stripe patches.
    pub distractors: usize,
}

impl Default for TextureRule {
    fn default() -> Self {
        TextureRule {
            noise: 0.03,
            distractors: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub scale: usize,
    pub primitives: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub texture: TextureRule,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            scale: 4,
            primitives: 6,
            z_min: 0.5,
            z_max: 5.0,
            texture: TextureRule::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("scene", reason));
        if self.scale == 0 || self.height % self.scale != 0 || self.width % self.scale != 0 {
            return bad(format!("{}×{} not divisible by scale {}", self.height, self.width, self.scale));
        }
        if self.height < 3 * self.scale || self.width < 3 * self.scale {
            return bad(format!("{}×{} too small for scale {}", self.height, self.width, self.scale));
        }
        if !(self.z_min > 0.0 && self.z_max > self.z_min && self.z_max.is_finite()) {
            return bad(format!("depth range [{}, {}] must satisfy 0 < z_min < z_max", self.z_min, self.z_max));
        }
        if !(self.texture.noise >= 0.0 && self.texture.noise.is_finite()) {
            return bad(format!("noise amplitude {} must be non-negative", self.texture.noise));
        }
        Ok(())
    }
}

/// Where a primitive covers the canvas, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Footprint {
    Rect { top: f64, left: f64, height: f64, width: f64 },
    Circle { cy: f64, cx: f64, radius: f64 },
}

impl Footprint {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Footprint::Rect { top, left, height, width } => y >= top && y < top + height && x >= left && x < left + width,
            Footprint::Circle { cy, cx, radius } => (y - cy).powi(2) + (x - cx).powi(2) <= radius * radius,
        }
    }

    fn centre(&self) -> (f64, f64) {
        match *self {
            Footprint::Rect { top, left, height, width } => (top + height / 2.0, left + width / 2.0),
            Footprint::Circle { cy, cx, .. } => (cy, cx),
        }
    }
}

/// One opaque layer. A non-zero `slope` (depth change per pixel along y and
/// x, measured from the footprint centre) makes it a planar ramp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub footprint: Footprint,
    pub depth: f64,
    pub slope: [f64; 2],
    pub color: [f64; 3],
}

impl Primitive {
    fn depth_at(&self, y: f64, x: f64) -> f64 {
        let (cy, cx) = self.footprint.centre();
        self.depth + self.slope[0] * (y - cy) + self.slope[1] * (x - cx)
    }
}

/// A synthetic training example.
#[derive(Clone, Debug)]
pub struct DepthSample {
    pub rgb: Tensor,
    pub depth_hr: Tensor,
    pub depth_lr: Tensor,
    pub scale: usize,
    pub seed: u64,
}

/// Bicubic down-sampling by `s`; `s = 1` returns the input unchanged.
pub fn degrade(depth_hr: &Tensor, s: usize) -> Result<Tensor> {
    if s == 1 {
        return Ok(depth_hr.detach());
    }
    depth_hr.bicubic_resize(ResizeFactor::down(s)?)
}

/// Draws a random layer list for `spec`. Layers are returned far to near.
pub fn layout(spec: &SceneSpec) -> Result<Vec<Primitive>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let span = spec.z_max - spec.z_min;
    let mut layers: Vec<Primitive> = (0..spec.primitives)
        .map(|_| {
            let kind = rng.gen_range(0..3);
            let footprint = if kind == 1 {
                let radius = rng.gen_range(0.1..0.3) * h.min(w);
                Footprint::Circle {
                    cy: rng.gen_range(0.0..h),
                    cx: rng.gen_range(0.0..w),
                    radius,
                }
            } else {
                let height = rng.gen_range(0.2..0.6) * h;
                let width = rng.gen_range(0.2..0.6) * w;
                Footprint::Rect {
                    top: rng.gen_range(-0.1 * h..h - 0.5 * height),
                    left: rng.gen_range(-0.1 * w..w - 0.5 * width),
                    height,
                    width,
                }
            };
            let depth = spec.z_min + rng.gen_range(0.05..0.85) * span;
            let slope = if kind == 2 {
                let g = 0.15 * span / h.max(w);
                [rng.gen_range(-g..g), rng.gen_range(-g..g)]
            } else {
                [0.0, 0.0]
            };
            let color = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            Primitive {
                footprint,
                depth,
                slope,
                color,
            }
        })
        .collect();
    layers.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    Ok(layers)
}

/// Renders explicit layers (drawn in order, later ones occluding) over a
/// background at `z_max`, then applies the texture rule.
pub fn render(spec: &SceneSpec, layers: &[Primitive]) -> Result<DepthSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;
    // independent stream so texture does not shift when the layout changes
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let background = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];

    let mut depth = vec![spec.z_max; plane];
    let mut rgb = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut color = background;
            for layer in layers.iter().filter(|l| l.footprint.contains(py, px)) {
                depth[y * w + x] = layer.depth_at(py, px).clamp(spec.z_min, spec.z_max);
                color = layer.color;
            }
            for (c, v) in color.iter().enumerate() {
                rgb[c * plane + y * w + x] = *v;
            }
        }
    }

    for _ in 0..spec.texture.distractors {
        let (ph, pw) = (rng.gen_range(0.15..0.4) * h as f64, rng.gen_range(0.15..0.4) * w as f64);
        let top = rng.gen_range(0.0..h as f64 - ph);
        let left = rng.gen_range(0.0..w as f64 - pw);
        let period = rng.gen_range(3.0..8.0);
        let vertical = rng.gen_bool(0.5);
        let tint = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
        let patch = Footprint::Rect {
            top,
            left,
            height: ph,
            width: pw,
        };
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let phase = if vertical { px } else { py };
                if patch.contains(py, px) && (phase / period).floor() as i64 % 2 == 0 {
                    for (c, t) in tint.iter().enumerate() {
                        rgb[c * plane + y * w + x] += t;
                    }
                }
            }
        }
    }
    if spec.texture.noise > 0.0 {
        let a = spec.texture.noise;
        for v in rgb.iter_mut() {
            *v += rng.gen_range(-a..=a);
        }
    }
    rgb.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let depth_hr = Tensor::new(Shape::new(1, 1, h, w), depth)?;
    let depth_lr = degrade(&depth_hr, spec.scale)?;
    Ok(DepthSample {
        rgb: Tensor::new(Shape::new(1, 3, h, w), rgb)?,
        depth_hr,
        depth_lr,
        scale: spec.scale,
        seed: spec.seed,
    })
}

/// Random layout rendered with texture.
pub fn synth_scene(spec: &SceneSpec) -> Result<DepthSample> {
    render(spec, &layout(spec)?)
}

/// `count` scenes sharing `template` except for their seeds, which are drawn
/// from stream `stream` of a generator seeded with `seed`.
pub fn scene_pool(template: &SceneSpec, count: usize, seed: u64, stream: u64) -> Result<Vec<DepthSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count)
        .map(|_| {
            synth_scene(&SceneSpec {
                seed: rng.gen(),
                ..template.clone()
            })
        })
        .collect()
}
