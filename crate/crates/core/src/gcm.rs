//! Gradient calibration: edge-strength maps of the guide and the blurry
//! depth are fused into a calibrated depth gradient, which is then encoded
//! together with the depth into a gradient-enhanced feature at LR size.

use crate::blocks::{ChannelAttention, Conv2d, Resample, ResidualGroup};
use crate::error::{Error, Result};
use crate::params::{Initializer, ParamStore};
use crate::tensor::{BackwardCtx, Tensor};

/// Magnitudes below this have zero gradient.
pub const GRADIENT_EPS: f64 = 1e-12;

impl Tensor {
    /// Per-pixel magnitude of central differences with replicate borders,
    /// averaged over channels. Output is N×1×H×W.
    pub fn gradient_map(&self) -> Result<Tensor> {
        const OP: &str = "gradient_map";
        let s = self.shape();
        if s.h < 3 || s.w < 3 {
            return Err(Error::invalid(OP, format!("extent {}×{} below 3", s.h, s.w)));
        }
        let (h, w, plane) = (s.h, s.w, s.plane());
        let inv_c = 1.0 / s.c as f64;
        // (dx, dy, magnitude) per input element
        let mut diffs = Vec::with_capacity(s.numel());
        for p in self.data().chunks_exact(plane) {
            for y in 0..h {
                let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
                for x in 0..w {
                    let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
                    let dx = p[y * w + right] - p[y * w + left];
                    let dy = p[down * w + x] - p[up * w + x];
                    diffs.push((dx, dy, dx.hypot(dy)));
                }
            }
        }
        let mut data = vec![0.0; s.n * plane];
        for (n, out) in data.chunks_exact_mut(plane).enumerate() {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                for (o, d) in out.iter_mut().zip(&diffs[base..base + plane]) {
                    *o += d.2 * inv_c;
                }
            }
        }
        Tensor::from_op(
            OP,
            s.with_c(1),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; s.numel()];
                for (idx, &(dx, dy, m)) in diffs.iter().enumerate() {
                    if m < GRADIENT_EPS {
                        continue;
                    }
                    let (nc, pos) = (idx / plane, idx % plane);
                    let (y, x) = (pos / w, pos % w);
                    let go = ctx.grad[(nc / s.c) * plane + pos] * inv_c / m;
                    let dst = &mut g[nc * plane..(nc + 1) * plane];
                    dst[y * w + (x + 1).min(w - 1)] += go * dx;
                    dst[y * w + x.saturating_sub(1)] -= go * dx;
                    dst[(y + 1).min(h - 1) * w + x] += go * dy;
                    dst[y.saturating_sub(1) * w + x] -= go * dy;
                }
                vec![Some(g)]
            }),
        )
    }
}

/// Calibrated HR gradient and the gradient-enhanced LR feature.
#[derive(Clone, Debug)]
pub struct GcmOutput {
    pub f_ge: Tensor,
    pub g_sr: Tensor,
}

/// A lifting convolution (k = 3) followed by a residual group.
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    lift: Conv2d,
    group: ResidualGroup,
}

impl Encoder {
    pub(crate) fn new(
        init: &mut Initializer<'_>,
        name: &str,
        cin: usize,
        channels: usize,
        depth: usize,
    ) -> Result<Self> {
        Ok(Encoder {
            lift: Conv2d::new(init, &format!("{name}.lift"), cin, channels, 3, true)?,
            group: ResidualGroup::new(init, &format!("{name}.rg"), channels, depth)?,
        })
    }

    pub(crate) fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.group.forward(store, &self.lift.forward(store, x)?)
    }
}

#[derive(Clone, Debug)]
pub struct Gcm {
    fuse: Conv2d,
    groups: [ResidualGroup; 2],
    attention: ChannelAttention,
    out: Conv2d,
    depth_branch: Encoder,
    gradient_branch: Encoder,
    down: Resample,
}

impl Gcm {
    pub fn new(
        init: &mut Initializer<'_>,
        channels: usize,
        depth: usize,
        ratio: usize,
        scale: usize,
    ) -> Result<Self> {
        Ok(Gcm {
            fuse: Conv2d::new(init, "gcm.fg.fuse", 2, channels, 1, true)?,
            groups: [
                ResidualGroup::new(init, "gcm.fg.rg1", channels, depth)?,
                ResidualGroup::new(init, "gcm.fg.rg2", channels, depth)?,
            ],
            attention: ChannelAttention::new(init, "gcm.fg.ca", channels, ratio)?,
            out: Conv2d::new(init, "gcm.fg.out", channels, 1, 3, true)?,
            depth_branch: Encoder::new(init, "gcm.fr_depth", 1, channels, depth)?,
            gradient_branch: Encoder::new(init, "gcm.fr_grad", 1, channels, depth)?,
            down: Resample::down(init, "gcm.fds", channels, channels, scale)?,
        })
    }

    /// The conv producing the calibrated gradient.
    pub fn output_conv(&self) -> &Conv2d {
        &self.out
    }

    pub fn forward(&self, store: &ParamStore, i_rgb: &Tensor, d_lr_up: &Tensor) -> Result<GcmOutput> {
        let (a, b) = (i_rgb.shape(), d_lr_up.shape());
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) || a.c != 3 || b.c != 1 {
            return Err(Error::shape("gcm", a.with_c(1), b));
        }
        let g_rgb = i_rgb.gradient_map()?;
        let g_lr = d_lr_up.gradient_map()?;
        let mut h = self.fuse.forward(store, &Tensor::concat(&[&g_rgb, &g_lr])?)?;
        for g in &self.groups {
            h = g.forward(store, &h)?;
        }
        let g_sr = self.out.forward(store, &self.attention.forward(store, &h)?)?;
        let merged = self
            .depth_branch
            .forward(store, d_lr_up)?
            .add(&self.gradient_branch.forward(store, &g_sr)?)?;
        let f_ge = self.down.forward(store, &merged)?;
        Ok(GcmOutput { f_ge, g_sr })
    }
}
