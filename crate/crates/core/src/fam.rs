//! Frequency awareness: a recursion of spectrum differencing blocks that
//! compares guide and depth spectra per channel and feeds the difference
//! back into the depth features.

use crate::blocks::{Conv2d, CouplingBlock, Resample, ResidualGroup, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::gcm::Encoder;
use crate::params::{Initializer, ParamStore};
use crate::spectral::{compose, decompose, dft2, idft2, AmplitudePhase};
use crate::tensor::Tensor;

/// Two 1×1 convolutions with a leaky ReLU between them.
#[derive(Clone, Debug)]
struct PointwiseStack(Conv2d, Conv2d);

impl PointwiseStack {
    fn new(init: &mut Initializer<'_>, name: &str, channels: usize) -> Result<Self> {
        Ok(PointwiseStack(
            Conv2d::new(init, &format!("{name}.conv1"), channels, channels, 1, true)?,
            Conv2d::new(init, &format!("{name}.conv2"), channels, channels, 1, true)?,
        ))
    }

    fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.1.forward(store, &self.0.forward(store, x)?.leaky_relu(LEAKY_SLOPE)?)
    }
}

/// Amplitude spectra seen inside one block, for inspection.
#[derive(Clone, Debug)]
pub struct SdbTrace {
    pub a_dg: Tensor,
    pub a_rgb: Tensor,
    pub a_diff: Tensor,
}

#[derive(Clone, Debug)]
pub struct SdbOutput {
    pub f_rgb: Tensor,
    pub f_d: Tensor,
    pub trace: SdbTrace,
}

/// One spectrum differencing block.
#[derive(Clone, Debug)]
pub struct Sdb {
    channels: usize,
    fuse: Conv2d,
    up: Resample,
    amp: PointwiseStack,
    amp_diff: PointwiseStack,
    pha: PointwiseStack,
    pha_diff: PointwiseStack,
    fuse_amp: Conv2d,
    fuse_pha: Conv2d,
    couple_guide: CouplingBlock,
    couple_freq: CouplingBlock,
    down: Resample,
}

impl Sdb {
    pub fn new(init: &mut Initializer<'_>, name: &str, channels: usize, scale: usize) -> Result<Self> {
        let c = channels;
        Ok(Sdb {
            channels,
            fuse: Conv2d::new(init, &format!("{name}.fuse"), 2 * c, c, 3, true)?,
            up: Resample::up(init, &format!("{name}.up"), c, c, scale)?,
            amp: PointwiseStack::new(init, &format!("{name}.fc_amp"), c)?,
            amp_diff: PointwiseStack::new(init, &format!("{name}.fc_amp_diff"), c)?,
            pha: PointwiseStack::new(init, &format!("{name}.fc_pha"), c)?,
            pha_diff: PointwiseStack::new(init, &format!("{name}.fc_pha_diff"), c)?,
            fuse_amp: Conv2d::new(init, &format!("{name}.ff_amp"), 2 * c, c, 1, true)?,
            fuse_pha: Conv2d::new(init, &format!("{name}.ff_pha"), 2 * c, c, 1, true)?,
            couple_guide: CouplingBlock::new(init, &format!("{name}.fi_guide"), c)?,
            couple_freq: CouplingBlock::new(init, &format!("{name}.fi_freq"), c)?,
            down: Resample::down(init, &format!("{name}.down"), c, c, scale)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, f_rgb_prev: &Tensor, f_d_prev: &Tensor, f_ge: &Tensor) -> Result<SdbOutput> {
        let c = self.channels;
        for t in [f_rgb_prev, f_d_prev, f_ge] {
            if t.shape().c != c {
                return Err(Error::shape("sdb", t.shape().with_c(c), t.shape()));
            }
        }
        if f_d_prev.shape() != f_ge.shape() {
            return Err(Error::shape("sdb", f_ge.shape(), f_d_prev.shape()));
        }
        let f_dg = self
            .up
            .forward(store, &self.fuse.forward(store, &Tensor::concat(&[f_ge, f_d_prev])?)?)?;
        if f_dg.shape() != f_rgb_prev.shape() {
            return Err(Error::shape("sdb", f_dg.shape(), f_rgb_prev.shape()));
        }

        let dg = decompose(&dft2(&f_dg)?)?;
        let rgb = decompose(&dft2(f_rgb_prev)?)?;
        let a_diff = rgb.amplitude.sub(&dg.amplitude)?.abs()?;
        let p_diff = rgb.phase.sub(&dg.phase)?.abs()?;
        let a_f = self.fuse_amp.forward(
            store,
            &Tensor::concat(&[&self.amp.forward(store, &dg.amplitude)?, &self.amp_diff.forward(store, &a_diff)?])?,
        )?;
        let p_f = self.fuse_pha.forward(
            store,
            &Tensor::concat(&[&self.pha.forward(store, &dg.phase)?, &self.pha_diff.forward(store, &p_diff)?])?,
        )?;
        let f_f = idft2(&compose(&AmplitudePhase {
            amplitude: a_f,
            phase: p_f,
        })?)?;

        let (f_rgb, f_s) = self.couple_guide.forward(store, &Tensor::concat(&[f_rgb_prev, &f_dg])?)?;
        let merged = self.couple_freq.forward_merged(store, &Tensor::concat(&[&f_s, &f_f])?)?;
        let folded = merged.slice_channels(0..c)?.add(&merged.slice_channels(c..2 * c)?)?;
        let f_d = self.down.forward(store, &f_dg.add(&folded)?)?;

        let trace = SdbTrace {
            a_dg: dg.amplitude.detach(),
            a_rgb: rgb.amplitude.detach(),
            a_diff: a_diff.detach(),
        };
        Ok(SdbOutput { f_rgb, f_d, trace })
    }
}

#[derive(Clone, Debug)]
pub struct Fam {
    channels: usize,
    rgb_encoder: Encoder,
    depth_encoder: Encoder,
    blocks: Vec<Sdb>,
    aggregate: ResidualGroup,
    up: Resample,
    head: Conv2d,
}

/// Frequency-enhanced residual plus per-block spectra.
#[derive(Clone, Debug)]
pub struct FamOutput {
    pub d_fe: Tensor,
    pub traces: Vec<SdbTrace>,
}

impl Fam {
    pub fn new(
        init: &mut Initializer<'_>,
        channels: usize,
        blocks: usize,
        depth: usize,
        scale: usize,
    ) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::invalid("fam", "at least one block is required"));
        }
        let rgb_encoder = Encoder::new(init, "fam.enc_rgb", 3, channels, depth)?;
        let depth_encoder = Encoder::new(init, "fam.enc_depth", 1, channels, depth)?;
        let blocks = (1..=blocks)
            .map(|i| Sdb::new(init, &format!("fam.sdb{i}"), channels, scale))
            .collect::<Result<Vec<_>>>()?;
        let wide = channels * blocks.len();
        Ok(Fam {
            channels,
            rgb_encoder,
            depth_encoder,
            aggregate: ResidualGroup::new(init, "fam.agg.rg", wide, depth)?,
            up: Resample::up(init, "fam.agg.up", wide, channels, scale)?,
            head: Conv2d::new(init, "fam.head", channels, 1, 3, true)?,
            blocks,
        })
    }

    /// The final conv reducing features to the depth residual.
    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn blocks(&self) -> &[Sdb] {
        &self.blocks
    }

    pub fn forward(&self, store: &ParamStore, i_rgb: &Tensor, d_lr: &Tensor, f_ge: &Tensor) -> Result<FamOutput> {
        if f_ge.shape().c != self.channels {
            return Err(Error::shape("fam", f_ge.shape().with_c(self.channels), f_ge.shape()));
        }
        let mut f_rgb = self.rgb_encoder.forward(store, i_rgb)?;
        let mut f_d = self.depth_encoder.forward(store, d_lr)?;
        let mut history = Vec::with_capacity(self.blocks.len());
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let out = block.forward(store, &f_rgb, &f_d, f_ge)?;
            f_rgb = out.f_rgb;
            f_d = out.f_d;
            history.push(f_d.clone());
            traces.push(out.trace);
        }
        let parts: Vec<&Tensor> = history.iter().collect();
        let h = self.aggregate.forward(store, &Tensor::concat(&parts)?)?;
        let d_fe = self.head.forward(store, &self.up.forward(store, &h)?)?;
        Ok(FamOutput { d_fe, traces })
    }
}
