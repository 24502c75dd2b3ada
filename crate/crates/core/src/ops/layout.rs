//! Channel concatenation, slicing and per-channel broadcasting.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Shape, Tensor};

impl Tensor {
    /// Concatenates along the channel axis, preserving part order.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        const OP: &str = "concat";
        let first = parts.first().ok_or_else(|| Error::invalid(OP, "empty part list"))?;
        let s0 = first.shape();
        for p in parts {
            let s = p.shape();
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape(OP, s0.with_c(s.c), s));
            }
        }
        let channels: Vec<usize> = parts.iter().map(|p| p.shape().c).collect();
        let total: usize = channels.iter().sum();
        let out_shape = s0.with_c(total);
        let plane = s0.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for (p, &c) in parts.iter().zip(&channels) {
                data.extend_from_slice(&p.data()[n * c * plane..(n + 1) * c * plane]);
            }
        }
        Tensor::from_op(
            OP,
            out_shape,
            data,
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut grads: Vec<Option<Vec<f64>>> = ctx
                    .needs
                    .iter()
                    .zip(&channels)
                    .map(|(&need, &c)| need.then(|| Vec::with_capacity(s0.n * c * plane)))
                    .collect();
                let mut at = 0;
                for _ in 0..s0.n {
                    for (g, &c) in grads.iter_mut().zip(&channels) {
                        if let Some(g) = g {
                            g.extend_from_slice(&ctx.grad[at..at + c * plane]);
                        }
                        at += c * plane;
                    }
                }
                grads
            }),
        )
    }

    /// Channels `range` of every sample.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor> {
        const OP: &str = "slice_channels";
        let s = self.shape();
        if range.start >= range.end || range.end > s.c {
            return Err(Error::invalid(OP, format!("range {range:?} outside {} channels", s.c)));
        }
        let plane = s.plane();
        let (lo, hi) = (range.start * plane, range.end * plane);
        let out_shape = s.with_c(range.len());
        let mut data = Vec::with_capacity(out_shape.numel());
        for chunk in self.data().chunks_exact(s.c * plane) {
            data.extend_from_slice(&chunk[lo..hi]);
        }
        Tensor::from_op(
            OP,
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; s.numel()];
                for (dst, src) in g.chunks_exact_mut(s.c * plane).zip(ctx.grad.chunks_exact(hi - lo)) {
                    dst[lo..hi].copy_from_slice(src);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Multiplies every H×W plane by the matching entry of `gate`
    /// (N×C×1×1).
    pub fn mul_channels(&self, gate: &Tensor) -> Result<Tensor> {
        const OP: &str = "mul_channels";
        let s = self.shape();
        if gate.shape() != Shape::new(s.n, s.c, 1, 1) {
            return Err(Error::shape(OP, Shape::new(s.n, s.c, 1, 1), gate.shape()));
        }
        let plane = s.plane();
        let data = self
            .data()
            .chunks_exact(plane)
            .zip(gate.data())
            .flat_map(|(p, &g)| p.iter().map(move |v| v * g))
            .collect();
        Tensor::from_op(
            OP,
            s,
            data,
            vec![self.clone(), gate.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (x, gate) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let dx = ctx.needs[0].then(|| {
                    ctx.grad
                        .chunks_exact(plane)
                        .zip(gate)
                        .flat_map(|(p, &g)| p.iter().map(move |v| v * g))
                        .collect()
                });
                let dg = ctx.needs[1].then(|| {
                    ctx.grad
                        .chunks_exact(plane)
                        .zip(x.chunks_exact(plane))
                        .map(|(g, x)| g.iter().zip(x).map(|(a, b)| a * b).sum())
                        .collect()
                });
                vec![dx, dg]
            }),
        )
    }

    /// Stacks constant samples along the batch axis. Not differentiable.
    pub fn stack_batch(samples: &[&Tensor]) -> Result<Tensor> {
        const OP: &str = "stack_batch";
        let first = samples.first().ok_or_else(|| Error::invalid(OP, "no samples"))?;
        let s0 = first.shape();
        let mut data = Vec::with_capacity(s0.numel() * samples.len());
        let mut n = 0;
        for t in samples {
            let s = t.shape();
            if (s.c, s.h, s.w) != (s0.c, s0.h, s0.w) {
                return Err(Error::shape(OP, s0, s));
            }
            n += s.n;
            data.extend_from_slice(t.data());
        }
        Tensor::new(Shape::new(n, s0.c, s0.h, s0.w), data)
    }

    /// Sample `index` as a constant 1×C×H×W tensor.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let s = self.shape();
        if index >= s.n {
            return Err(Error::invalid("batch_item", format!("index {index} ≥ batch {}", s.n)));
        }
        let len = s.c * s.plane();
        Tensor::new(Shape::new(1, s.c, s.h, s.w), self.data()[index * len..(index + 1) * len].to_vec())
    }

    /// Spatial window `[top, top+h) × [left, left+w)`. Not differentiable.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape();
        if top + h > s.h || left + w > s.w || h == 0 || w == 0 {
            return Err(Error::invalid("crop", format!("window {h}×{w} at ({top},{left}) outside {s}")));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in self.data().chunks_exact(s.plane()) {
            for y in top..top + h {
                data.extend_from_slice(&plane[y * s.w + left..y * s.w + left + w]);
            }
        }
        Tensor::new(s.with_hw(h, w), data)
    }
}
