//! Reductions: sums, means, L1 distance and global pooling.

use crate::branch;
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Shape, Tensor};

/// Global pooling mode used by channel attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Mean,
    Max,
}

impl Tensor {
    pub fn sum(&self) -> Result<Tensor> {
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Shape::scalar(),
            vec![self.data().iter().sum()],
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        let inv = 1.0 / n as f64;
        Tensor::from_op(
            "mean",
            Shape::scalar(),
            vec![self.data().iter().sum::<f64>() * inv],
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0] * inv; n])]),
        )
    }

    /// Mean of `|self − other|` over every element.
    pub fn mean_abs_diff(&self, other: &Tensor) -> Result<Tensor> {
        const OP: &str = "mean_abs_diff";
        if self.shape() != other.shape() {
            return Err(Error::shape(OP, self.shape(), other.shape()));
        }
        let diff: Vec<f64> = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        let mut signs: Vec<i8> = diff
            .iter()
            .map(|&d| if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 })
            .collect();
        branch::flags(&mut signs);
        let count = diff.len() as f64;
        let total: f64 = diff
            .iter()
            .zip(&signs)
            .map(|(&d, &s)| if s == 0 { d.abs() } else { f64::from(s) * d })
            .sum();
        Tensor::from_op(
            OP,
            Shape::scalar(),
            vec![total / count],
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let k = ctx.grad[0] / count;
                let pos: Vec<f64> = signs.iter().map(|&s| k * f64::from(s)).collect();
                let neg = ctx.needs[1].then(|| pos.iter().map(|v| -v).collect());
                vec![ctx.needs[0].then_some(pos), neg]
            }),
        )
    }

    /// Per-channel pooling to N×C×1×1. Max routes its gradient to the first
    /// arg-max in row-major order.
    pub fn global_pool(&self, mode: Pool) -> Result<Tensor> {
        let s = self.shape();
        let plane = s.plane();
        if plane == 0 {
            return Err(Error::invalid("global_pool", "empty spatial extent"));
        }
        let out_shape = Shape::new(s.n, s.c, 1, 1);
        match mode {
            Pool::Mean => {
                let inv = 1.0 / plane as f64;
                let data = self
                    .data()
                    .chunks_exact(plane)
                    .map(|p| p.iter().sum::<f64>() * inv)
                    .collect();
                Tensor::from_op(
                    "global_mean_pool",
                    out_shape,
                    data,
                    vec![self.clone()],
                    Box::new(move |ctx: &BackwardCtx<'_>| {
                        let g = ctx.grad.iter().flat_map(|&g| std::iter::repeat(g * inv).take(plane)).collect();
                        vec![Some(g)]
                    }),
                )
            }
            Pool::Max => {
                let mut arg: Vec<usize> = self
                    .data()
                    .chunks_exact(plane)
                    .map(|p| {
                        p.iter()
                            .enumerate()
                            .fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
                    })
                    .collect();
                branch::indices(&mut arg);
                let data = self
                    .data()
                    .chunks_exact(plane)
                    .zip(&arg)
                    .map(|(p, &i)| p[i])
                    .collect();
                Tensor::from_op(
                    "global_max_pool",
                    out_shape,
                    data,
                    vec![self.clone()],
                    Box::new(move |ctx: &BackwardCtx<'_>| {
                        let mut g = vec![0.0; s.numel()];
                        for (k, (&gv, &i)) in ctx.grad.iter().zip(&arg).enumerate() {
                            g[k * plane + i] = gv;
                        }
                        vec![Some(g)]
                    }),
                )
            }
        }
    }
}
