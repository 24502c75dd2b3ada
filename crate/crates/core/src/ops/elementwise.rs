//! Pointwise arithmetic and activations. Binary ops require identical shapes.

use crate::branch;
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Tensor};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tensor {
    /// Pointwise map whose derivative is expressed through the input value
    /// `x` and the output value `y`.
    fn map_unary<F, D>(&self, op: &'static str, f: F, df: D) -> Result<Tensor>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            op,
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.inputs[0].data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x.iter().zip(ctx.output))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(
            "add",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let g = ctx.grad;
                vec![
                    ctx.needs[0].then(|| g.to_vec()),
                    ctx.needs[1].then(|| g.to_vec()),
                ]
            }),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(
            "sub",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let g = ctx.grad;
                vec![
                    ctx.needs[0].then(|| g.to_vec()),
                    ctx.needs[1].then(|| g.iter().map(|v| -v).collect()),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Tensor::from_op(
            "mul",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad;
                vec![
                    ctx.needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    ctx.needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }),
        )
    }

    /// Multiplies by a constant.
    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.map_unary("scale", |x| x * factor, move |_, _| factor)
    }

    /// Adds a constant.
    pub fn shift(&self, offset: f64) -> Result<Tensor> {
        self.map_unary("shift", |x| x + offset, |_, _| 1.0)
    }

    /// Absolute value; the derivative at exactly 0 is taken as 0.
    pub fn abs(&self) -> Result<Tensor> {
        let mut signs: Vec<i8> = self.data().iter().map(|&x| sign_flag(x)).collect();
        branch::flags(&mut signs);
        let data = self
            .data()
            .iter()
            .zip(&signs)
            .map(|(&x, &s)| if s == 0 { x.abs() } else { f64::from(s) * x })
            .collect();
        Tensor::from_op(
            "abs",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.iter().zip(&signs).map(|(g, &s)| g * f64::from(s)).collect();
                vec![Some(g)]
            }),
        )
    }

    /// `x` for `x > 0`, `slope·x` otherwise (the kink takes the slope).
    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        let mut pos: Vec<i8> = self.data().iter().map(|&x| i8::from(x > 0.0)).collect();
        branch::flags(&mut pos);
        let data = self
            .data()
            .iter()
            .zip(&pos)
            .map(|(&x, &p)| if p == 1 { x } else { slope * x })
            .collect();
        Tensor::from_op(
            "leaky_relu",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(&pos)
                    .map(|(g, &p)| if p == 1 { *g } else { g * slope })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map_unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.map_unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map_unary("exp", f64::exp, |_, y| y)
    }

    pub fn cos(&self) -> Result<Tensor> {
        self.map_unary("cos", f64::cos, |x, _| -x.sin())
    }

    pub fn sin(&self) -> Result<Tensor> {
        self.map_unary("sin", f64::sin, |x, _| x.cos())
    }
}

fn sign_flag(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
