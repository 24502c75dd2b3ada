//! The assembled network, its three-domain loss and the RMSE metric.

use crate::error::{Error, Result};
use crate::fam::{Fam, SdbTrace};
use crate::gcm::Gcm;
use crate::ops::ResizeFactor;
use crate::params::{Initializer, ParamStore};
use crate::spectral::{decompose, dft2};
use crate::tensor::Tensor;

/// Weights of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 0.5,
            gamma1: 0.001,
            gamma2: 0.002,
        }
    }
}

impl LossWeights {
    /// Only the spatial term.
    pub fn spatial_only() -> Self {
        LossWeights {
            gamma1: 0.0,
            gamma2: 0.0,
            ..LossWeights::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub sdb_count: usize,
    pub scale: usize,
    pub res_blocks: usize,
    pub attention_ratio: usize,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 8,
            sdb_count: 3,
            scale: 4,
            res_blocks: 2,
            attention_ratio: 4,
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("model_config", reason));
        let c = self.channels;
        if c < 2 || c % 2 != 0 {
            return bad(format!("channels {c} must be even and at least 2"));
        }
        if self.attention_ratio == 0 || c % self.attention_ratio != 0 {
            return bad(format!("channels {c} not divisible by ratio {}", self.attention_ratio));
        }
        if self.sdb_count == 0 {
            return bad("sdb_count must be at least 1".into());
        }
        ResizeFactor::up(self.scale)?;
        let w = self.loss;
        for (name, v) in [("lambda1", w.lambda1), ("lambda2", w.lambda2), ("gamma1", w.gamma1), ("gamma2", w.gamma2)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub d_sr: Tensor,
    pub g_sr: Tensor,
    pub d_bi: Tensor,
    pub d_fe: Tensor,
    pub traces: Vec<SdbTrace>,
}

/// Loss components as plain values plus the differentiable total.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub l_spa: f64,
    pub l_gra: f64,
    pub l_amp: f64,
    pub l_pha: f64,
    pub l_fre: f64,
    pub l_total: f64,
    pub total: Tensor,
}

/// Spatial, gradient and frequency loss of a prediction against `d_hr`.
pub fn loss_total(d_sr: &Tensor, g_sr: &Tensor, d_hr: &Tensor, w: &LossWeights) -> Result<LossBreakdown> {
    if d_sr.shape() != d_hr.shape() {
        return Err(Error::shape("loss", d_hr.shape(), d_sr.shape()));
    }
    let spa = d_sr.mean_abs_diff(d_hr)?;
    let gra = g_sr.mean_abs_diff(&d_hr.gradient_map()?)?;
    let sr = decompose(&dft2(d_sr)?)?;
    let hr = decompose(&dft2(d_hr)?)?;
    let amp = sr.amplitude.mean_abs_diff(&hr.amplitude)?;
    let pha = sr.phase.mean_abs_diff(&hr.phase)?;
    let fre = amp.scale(w.lambda1)?.add(&pha.scale(w.lambda2)?)?;
    let total = spa.add(&gra.scale(w.gamma1)?)?.add(&fre.scale(w.gamma2)?)?;
    Ok(LossBreakdown {
        l_spa: spa.item()?,
        l_gra: gra.item()?,
        l_amp: amp.item()?,
        l_pha: pha.item()?,
        l_fre: fre.item()?,
        l_total: total.item()?,
        total,
    })
}

/// `unit_scale · sqrt(mean((a − b)²))`.
pub fn rmse(d_sr: &Tensor, d_hr: &Tensor, unit_scale: f64) -> Result<f64> {
    if d_sr.shape() != d_hr.shape() {
        return Err(Error::shape("rmse", d_hr.shape(), d_sr.shape()));
    }
    if !(unit_scale > 0.0) {
        return Err(Error::invalid("rmse", format!("unit scale {unit_scale} must be positive")));
    }
    let sq: f64 = d_sr.data().iter().zip(d_hr.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(unit_scale * (sq / d_sr.numel() as f64).sqrt())
}

/// The network with its parameters.
#[derive(Clone, Debug)]
pub struct Sgnet {
    config: ModelConfig,
    gcm: Gcm,
    fam: Fam,
    params: ParamStore,
}

impl Sgnet {
    /// Fresh network initialised from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(&mut params, config.seed);
        let gcm = Gcm::new(&mut init, config.channels, config.res_blocks, config.attention_ratio, config.scale)?;
        let fam = Fam::new(&mut init, config.channels, config.sdb_count, config.res_blocks, config.scale)?;
        Ok(Sgnet {
            config,
            gcm,
            fam,
            params,
        })
    }

    /// Network for `config` carrying `params`, whose names and extents must
    /// match the architecture exactly.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut net = Sgnet::new(config)?;
        let expected: Vec<(&str, &[usize])> = net.params.iter().map(|(n, p)| (n, p.dims())).collect();
        let found: Vec<(&str, &[usize])> = params.iter().map(|(n, p)| (n, p.dims())).collect();
        if expected != found {
            let missing = expected
                .iter()
                .find(|e| !found.contains(e))
                .or_else(|| found.iter().find(|f| !expected.contains(f)))
                .map(|(n, d)| format!("{n} {d:?}"))
                .unwrap_or_default();
            return Err(Error::invalid("sgnet", format!("parameter set does not match the configuration at {missing}")));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn gcm(&self) -> &Gcm {
        &self.gcm
    }

    pub fn fam(&self) -> &Fam {
        &self.fam
    }

    /// Zeroes the FAM output head so the prediction is plain bicubic.
    pub fn zero_head(&mut self) -> Result<()> {
        let head = self.fam.head().clone();
        for name in [head.weight_name(), head.bias_name()] {
            let len = self.params.get(&name)?.numel();
            self.params.set(&name, vec![0.0; len])?;
        }
        Ok(())
    }

    pub fn forward(&self, i_rgb: &Tensor, d_lr: &Tensor) -> Result<Prediction> {
        let (r, d) = (i_rgb.shape(), d_lr.shape());
        let s = self.config.scale;
        if r.c != 3 || d.c != 1 || r.n != d.n || r.h != s * d.h || r.w != s * d.w {
            return Err(Error::shape("sgnet", d.with_c(3).with_hw(s * d.h, s * d.w), r));
        }
        let d_bi = d_lr.bicubic_resize(ResizeFactor::up(s)?)?;
        let g = self.gcm.forward(&self.params, i_rgb, &d_bi)?;
        let f = self.fam.forward(&self.params, i_rgb, d_lr, &g.f_ge)?;
        let d_sr = f.d_fe.add(&d_bi)?;
        Ok(Prediction {
            d_sr,
            g_sr: g.g_sr,
            d_bi,
            d_fe: f.d_fe,
            traces: f.traces,
        })
    }

    pub fn loss(&self, prediction: &Prediction, d_hr: &Tensor) -> Result<LossBreakdown> {
        loss_total(&prediction.d_sr, &prediction.g_sr, d_hr, &self.config.loss)
    }
}
