//! Learnable building blocks shared by the calibration and frequency
//! modules. Blocks hold parameter names only; values live in a
//! [`ParamStore`] passed to every forward call, so one block description
//! serves any number of parameter snapshots.

use crate::error::{Error, Result};
use crate::ops::{Pool, ResizeFactor};
use crate::params::{Initializer, ParamStore};
use crate::tensor::Tensor;

/// Negative slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Soft bound on the coupling log-scale: `s ↦ σ·tanh(s/σ)`.
pub const COUPLING_CLAMP: f64 = 2.0;

/// Soft bound on attention logits, keeping gates strictly inside (0, 1).
pub const GATE_LOGIT_BOUND: f64 = 30.0;

/// Stride-1 convolution with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    name: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    bias: bool,
}

impl Conv2d {
    pub fn new(
        init: &mut Initializer<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        let conv = Conv2d {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            bias,
        };
        let fan_in = in_channels * kernel * kernel;
        init.uniform(&conv.weight_name(), &[out_channels, in_channels, kernel, kernel], fan_in)?;
        if bias {
            init.zeros(&conv.bias_name(), &[out_channels])?;
        }
        Ok(conv)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let w = store.get(&self.weight_name())?;
        let b = if self.bias {
            Some(store.get(&self.bias_name())?)
        } else {
            None
        };
        x.conv2d(w, b, 1, self.kernel / 2)
    }
}

fn expect_channels(op: &'static str, x: &Tensor, c: usize) -> Result<()> {
    if x.shape().c != c {
        return Err(Error::shape(op, format!("{c} channels"), x.shape()));
    }
    Ok(())
}

/// Residual blocks (conv3×3 → leaky ReLU → conv3×3, identity skip) followed
/// by a tail conv3×3, all wrapped in a group-level identity skip.
#[derive(Clone, Debug)]
pub struct ResidualGroup {
    channels: usize,
    blocks: Vec<(Conv2d, Conv2d)>,
    tail: Conv2d,
}

impl ResidualGroup {
    pub fn new(init: &mut Initializer<'_>, name: &str, channels: usize, depth: usize) -> Result<Self> {
        let blocks = (0..depth)
            .map(|b| {
                Ok((
                    Conv2d::new(init, &format!("{name}.block{b}.conv1"), channels, channels, 3, true)?,
                    Conv2d::new(init, &format!("{name}.block{b}.conv2"), channels, channels, 3, true)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv2d::new(init, &format!("{name}.tail"), channels, channels, 3, true)?;
        Ok(ResidualGroup { channels, blocks, tail })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        expect_channels("residual_group", x, self.channels)?;
        let mut h = x.clone();
        for (c1, c2) in &self.blocks {
            let body = c2.forward(store, &c1.forward(store, &h)?.leaky_relu(LEAKY_SLOPE)?)?;
            h = h.add(&body)?;
        }
        x.add(&self.tail.forward(store, &h)?)
    }
}

/// Channel gating from a shared bottleneck over mean- and max-pooled
/// descriptors.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    channels: usize,
    reduce: Conv2d,
    expand: Conv2d,
}

impl ChannelAttention {
    pub fn new(init: &mut Initializer<'_>, name: &str, channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::invalid(
                "channel_attention",
                format!("{channels} channels not divisible by ratio {ratio}"),
            ));
        }
        let hidden = channels / ratio;
        Ok(ChannelAttention {
            channels,
            reduce: Conv2d::new(init, &format!("{name}.reduce"), channels, hidden, 1, false)?,
            expand: Conv2d::new(init, &format!("{name}.expand"), hidden, channels, 1, false)?,
        })
    }

    fn bottleneck(&self, store: &ParamStore, v: &Tensor) -> Result<Tensor> {
        self.expand.forward(store, &self.reduce.forward(store, v)?.leaky_relu(LEAKY_SLOPE)?)
    }

    /// Per-channel gate values, N×C×1×1, strictly inside (0, 1).
    pub fn gate(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        expect_channels("channel_attention", x, self.channels)?;
        let avg = self.bottleneck(store, &x.global_pool(Pool::Mean)?)?;
        let max = self.bottleneck(store, &x.global_pool(Pool::Max)?)?;
        avg.add(&max)?
            .scale(1.0 / GATE_LOGIT_BOUND)?
            .tanh()?
            .scale(GATE_LOGIT_BOUND)?
            .sigmoid()
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.mul_channels(&self.gate(store, x)?)
    }
}

/// Affine coupling over a 2C-channel input split into halves (x1, x2):
/// `y1 = x1`, `y2 = x2 ⊙ exp(clamp(s(x1))) + t(x1)`.
#[derive(Clone, Debug)]
pub struct CouplingBlock {
    half: usize,
    scale_net: (Conv2d, Conv2d),
    shift_net: (Conv2d, Conv2d),
}

impl CouplingBlock {
    /// `half` is the channel count of each half.
    pub fn new(init: &mut Initializer<'_>, name: &str, half: usize) -> Result<Self> {
        let mut sub = |tag: &str| -> Result<(Conv2d, Conv2d)> {
            Ok((
                Conv2d::new(init, &format!("{name}.{tag}.conv1"), half, half, 3, true)?,
                Conv2d::new(init, &format!("{name}.{tag}.conv2"), half, half, 3, true)?,
            ))
        };
        let scale_net = sub("scale")?;
        let shift_net = sub("shift")?;
        Ok(CouplingBlock {
            half,
            scale_net,
            shift_net,
        })
    }

    fn subnet(store: &ParamStore, net: &(Conv2d, Conv2d), x: &Tensor) -> Result<Tensor> {
        net.1.forward(store, &net.0.forward(store, x)?.leaky_relu(LEAKY_SLOPE)?)
    }

    fn log_scale(&self, store: &ParamStore, x1: &Tensor) -> Result<Tensor> {
        Self::subnet(store, &self.scale_net, x1)?
            .scale(1.0 / COUPLING_CLAMP)?
            .tanh()?
            .scale(COUPLING_CLAMP)
    }

    fn split(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = x.shape().c;
        if c % 2 != 0 {
            return Err(Error::invalid("coupling", format!("odd channel count {c}")));
        }
        expect_channels("coupling", x, 2 * self.half)?;
        Ok((x.slice_channels(0..self.half)?, x.slice_channels(self.half..c)?))
    }

    /// The two output halves `(y1, y2)`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (x1, x2) = self.split(x)?;
        let s = self.log_scale(store, &x1)?;
        let t = Self::subnet(store, &self.shift_net, &x1)?;
        let y2 = x2.mul(&s.exp()?)?.add(&t)?;
        Ok((x1, y2))
    }

    /// The output halves re-concatenated into one 2C-channel tensor.
    pub fn forward_merged(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (y1, y2) = self.forward(store, x)?;
        Tensor::concat(&[&y1, &y2])
    }

    /// Algebraic inverse: recovers the concatenated input from `(y1, y2)`.
    pub fn inverse(&self, store: &ParamStore, y1: &Tensor, y2: &Tensor) -> Result<Tensor> {
        expect_channels("coupling_inverse", y1, self.half)?;
        expect_channels("coupling_inverse", y2, self.half)?;
        let s = self.log_scale(store, y1)?;
        let t = Self::subnet(store, &self.shift_net, y1)?;
        let x2 = y2.sub(&t)?.mul(&s.scale(-1.0)?.exp()?)?;
        Tensor::concat(&[y1, &x2])
    }
}

/// Bicubic resampling by a fixed factor followed by a conv3×3. A factor of 1
/// leaves only the convolution.
#[derive(Clone, Debug)]
pub struct Resample {
    factor: Option<ResizeFactor>,
    conv: Conv2d,
}

impl Resample {
    pub fn down(init: &mut Initializer<'_>, name: &str, cin: usize, cout: usize, s: usize) -> Result<Self> {
        let factor = if s == 1 { None } else { Some(ResizeFactor::down(s)?) };
        Ok(Resample {
            factor,
            conv: Conv2d::new(init, name, cin, cout, 3, true)?,
        })
    }

    pub fn up(init: &mut Initializer<'_>, name: &str, cin: usize, cout: usize, s: usize) -> Result<Self> {
        let factor = if s == 1 { None } else { Some(ResizeFactor::up(s)?) };
        Ok(Resample {
            factor,
            conv: Conv2d::new(init, name, cin, cout, 3, true)?,
        })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        match self.factor {
            Some(f) => self.conv.forward(store, &x.bicubic_resize(f)?),
            None => self.conv.forward(store, x),
        }
    }
}
