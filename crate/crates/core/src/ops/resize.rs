//! Separable bicubic resampling (Catmull-Rom, a = −0.5).
//!
//! Output pixel `o` samples the input at `(o + 0.5)·(n_in / n_out) − 0.5`
//! (half-pixel centres); taps outside the image clamp to the border. The
//! map is linear and fixed, so the backward pass applies its transpose.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Tensor};

const CUBIC_A: f64 = -0.5;

/// A supported power-of-two resampling factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeFactor {
    Up(usize),
    Down(usize),
}

impl ResizeFactor {
    const ALLOWED: [usize; 4] = [2, 4, 8, 16];

    pub fn up(s: usize) -> Result<Self> {
        Self::check(s).map(|_| ResizeFactor::Up(s))
    }

    pub fn down(s: usize) -> Result<Self> {
        Self::check(s).map(|_| ResizeFactor::Down(s))
    }

    fn check(s: usize) -> Result<()> {
        if Self::ALLOWED.contains(&s) {
            Ok(())
        } else {
            Err(Error::invalid("bicubic_resize", format!("unsupported factor {s}")))
        }
    }

    fn apply(self, extent: usize) -> Result<usize> {
        match self {
            ResizeFactor::Up(s) => Ok(extent * s),
            ResizeFactor::Down(s) if extent % s == 0 && extent >= s => Ok(extent / s),
            ResizeFactor::Down(s) => Err(Error::invalid(
                "bicubic_resize",
                format!("extent {extent} is not divisible by {s}"),
            )),
        }
    }
}

impl fmt::Display for ResizeFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResizeFactor::Up(s) => write!(f, "×{s}"),
            ResizeFactor::Down(s) => write!(f, "×1/{s}"),
        }
    }
}

/// Catmull-Rom cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Four (source index, weight) taps per output position along one axis.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    (0..n_out)
        .map(|o| {
            let src = ((2 * o + 1) * n_in) as f64 / (2 * n_out) as f64 - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let last = n_in as isize - 1;
            let weights = [cubic_kernel(t + 1.0), cubic_kernel(t), cubic_kernel(1.0 - t), cubic_kernel(2.0 - t)];
            std::array::from_fn(|k| ((base - 1 + k as isize).clamp(0, last) as usize, weights[k]))
        })
        .collect()
}

fn resize_planes(
    data: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    rows: &[[(usize, f64); 4]],
    cols: &[[(usize, f64); 4]],
) -> Vec<f64> {
    let mut out = vec![0.0; planes * ho * wo];
    let mut tmp = vec![0.0; h * wo];
    for (src, dst) in data.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[y * wo + x] = taps.iter().map(|&(i, k)| k * line[i]).sum();
            }
        }
        for (y, taps) in rows.iter().enumerate() {
            for x in 0..wo {
                dst[y * wo + x] = taps.iter().map(|&(i, k)| k * tmp[i * wo + x]).sum();
            }
        }
    }
    out
}

fn resize_planes_transpose(
    grad: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    rows: &[[(usize, f64); 4]],
    cols: &[[(usize, f64); 4]],
) -> Vec<f64> {
    let mut out = vec![0.0; planes * h * w];
    let mut tmp = vec![0.0; h * wo];
    for (g, dst) in grad.chunks_exact(ho * wo).zip(out.chunks_exact_mut(h * w)) {
        tmp.fill(0.0);
        for (y, taps) in rows.iter().enumerate() {
            for &(i, k) in taps {
                for x in 0..wo {
                    tmp[i * wo + x] += k * g[y * wo + x];
                }
            }
        }
        for y in 0..h {
            for (x, taps) in cols.iter().enumerate() {
                let v = tmp[y * wo + x];
                for &(i, k) in taps {
                    dst[y * w + i] += k * v;
                }
            }
        }
    }
    out
}

impl Tensor {
    /// Bicubic resampling of every plane by `factor`.
    pub fn bicubic_resize(&self, factor: ResizeFactor) -> Result<Tensor> {
        let s = self.shape();
        let (ho, wo) = (factor.apply(s.h)?, factor.apply(s.w)?);
        let rows = axis_taps(s.h, ho);
        let cols = axis_taps(s.w, wo);
        let planes = s.n * s.c;
        let data = resize_planes(self.data(), planes, (s.h, s.w), (ho, wo), &rows, &cols);
        Tensor::from_op(
            "bicubic_resize",
            s.with_hw(ho, wo),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                vec![Some(resize_planes_transpose(
                    ctx.grad,
                    planes,
                    (s.h, s.w),
                    (ho, wo),
                    &rows,
                    &cols,
                ))]
            }),
        )
    }
}
