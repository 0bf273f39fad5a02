//! Encoder–decoder network with two cascaded screening modules that fuse the
//! global bottleneck feature into the last two decoder stages.
//!
//! ```text
//! L1 (1)   → L2 (1/2) → L3 (1/4) → L4 (1/8) → G (1/16)
//!                                  D4 ← up(G) ⧺ L4
//!                       D3 ← up(D4) ⧺ L3
//!            S2 ← up(D3);   M2 = C(D(G)) ⊗ S2 ⊕ L2
//! S1 ← up(M2);              M1 = C(D(G)) ⊗ S1 ⊕ L1
//! Q = softmax(conv1×1(conv3×3(M1 ⧺ up2×(M2))))
//! ```

mod checkpoint;
mod features;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use features::{image_features, stack_batch};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchNormMode, BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// 5 for LAB + normalized XY, 3 for LAB only.
    pub in_channels: usize,
    /// Channels at scales 1, 1/2, 1/4, 1/8, 1/16.
    pub encoder_channels: [usize; 5],
    pub assoc_channels: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Whether the screening modules are active; the plain decoder otherwise.
    pub esm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 5,
            encoder_channels: [16, 32, 64, 128, 128],
            assoc_channels: 9,
            kernel: 3,
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            esm: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 && self.in_channels != 5 {
            return Err(Error::param("in_channels", format!("must be 3 or 5, got {}", self.in_channels)));
        }
        if self.assoc_channels != 9 {
            return Err(Error::param("assoc_channels", "the association head emits exactly 9 channels"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::param("kernel", "must be odd"));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::param("encoder_channels", "channel counts must be positive"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::param("bn_eps", "must be positive"));
        }
        Ok(())
    }
}

/// Replacement for the learned screening gate, used for ablations and tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Gate {
    #[default]
    Learned,
    Ones,
    Zeros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Batch statistics (and gradients for parameters) when true.
    pub train: bool,
    pub gate: Gate,
    /// Whether the encoder skip is added in the screening modules.
    pub skip: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions { train: true, gate: Gate::Learned, skip: true }
    }

    pub fn eval() -> Self {
        ForwardOptions { train: false, gate: Gate::Learned, skip: true }
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Activations {
    pub l1: Var,
    pub l2: Var,
    pub g: Var,
    pub s1: Var,
    pub s2: Var,
    pub m1: Var,
    pub m2: Var,
    pub q: Var,
}

/// Everything a forward pass recorded besides activations.
pub struct ForwardPass<T: Scalar> {
    pub acts: Activations,
    /// Parameter leaves, in [`EsmNet::params`] order.
    pub param_vars: Vec<Var>,
    batch_stats: Vec<(usize, BatchStats<T>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum LayerKind {
    Conv { cin: usize, cout: usize, k: usize, stride: usize },
    ConvT { cin: usize, cout: usize, k: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    name: String,
    kind: LayerKind,
    /// Followed by batch norm and leaky ReLU.
    normalized: bool,
}

fn layers(cfg: &NetConfig) -> Vec<Layer> {
    let [e1, e2, e3, e4, e5] = cfg.encoder_channels;
    let k = cfg.kernel;
    let conv = |name: &str, cin, cout, stride| Layer {
        name: name.into(),
        kind: LayerKind::Conv { cin, cout, k, stride },
        normalized: true,
    };
    let up = |name: &str, cin, cout, factor| Layer {
        name: name.into(),
        kind: LayerKind::ConvT { cin, cout, k: factor, stride: factor },
        normalized: true,
    };
    let raw = |name: &str, cin, cout, kk| Layer {
        name: name.into(),
        kind: LayerKind::Conv { cin, cout, k: kk, stride: 1 },
        normalized: false,
    };
    vec![
        conv("enc1.conv1", cfg.in_channels, e1, 1),
        conv("enc1.conv2", e1, e1, 1),
        conv("enc2.conv1", e1, e2, 2),
        conv("enc2.conv2", e2, e2, 1),
        conv("enc3.conv1", e2, e3, 2),
        conv("enc3.conv2", e3, e3, 1),
        conv("enc4.conv1", e3, e4, 2),
        conv("enc4.conv2", e4, e4, 1),
        conv("enc5.conv1", e4, e5, 2),
        conv("enc5.conv2", e5, e5, 1),
        up("dec4.up", e5, e3, 2),
        conv("dec4.fuse", e3 + e4, e3, 1),
        up("dec3.up", e3, e2, 2),
        conv("dec3.fuse", e2 + e3, e2, 1),
        up("dec2.up", e2, e2, 2),
        conv("dec2.conv", e2, e2, 1),
        up("esm2.deconv", e5, e2, 8),
        raw("esm2.gate", e2, e2, k),
        up("dec1.up", e2, e1, 2),
        conv("dec1.conv", e1, e1, 1),
        up("esm1.deconv", e5, e1, 16),
        raw("esm1.gate", e1, e1, k),
        conv("head.fuse", e1 + e2, e1, 1),
        raw("head.assoc", e1, cfg.assoc_channels, 1),
    ]
}

impl LayerKind {
    fn weight_shape(&self) -> [usize; 4] {
        match *self {
            LayerKind::Conv { cin, cout, k, .. } => [cout, cin, k, k],
            LayerKind::ConvT { cin, cout, k, .. } => [cin, cout, k, k],
        }
    }

    fn out_channels(&self) -> usize {
        match *self {
            LayerKind::Conv { cout, .. } | LayerKind::ConvT { cout, .. } => cout,
        }
    }

    /// Inputs contributing to one output element.
    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv { cin, k, .. } => cin * k * k,
            LayerKind::ConvT { cin, k, stride, .. } => (cin * k * k / (stride * stride)).max(1),
        }
    }
}

/// Standard deviation targeted by the initializer for a layer.
pub fn init_std(fan_in: usize, leaky_slope: f64) -> f64 {
    let gain = (2.0 / (1.0 + leaky_slope * leaky_slope)).sqrt();
    gain / (fan_in as f64).sqrt()
}

/// The network's parameters, running statistics and configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EsmNet<T: Scalar = f32> {
    cfg: NetConfig,
    seed: u64,
    params: Vec<Param<T>>,
    /// Batch-norm running means and variances.
    buffers: Vec<Param<T>>,
    index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
    layers: Vec<Layer>,
}

impl<T: Scalar> EsmNet<T> {
    /// Fan-in-scaled uniform weights, zero biases, unit BN scale.
    pub fn init_weights(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for layer in layers(cfg) {
            let shape = layer.kind.weight_shape();
            let bound = init_std(layer.kind.fan_in(), cfg.leaky_slope) * 3f64.sqrt();
            let n: usize = shape.iter().product();
            let w: Vec<T> = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
            let cout = layer.kind.out_channels();
            params.push(Param::new(format!("{}.weight", layer.name), Tensor::new(&shape, w)?));
            params.push(Param::new(format!("{}.bias", layer.name), Tensor::zeros(&[cout])));
            if layer.normalized {
                params.push(Param::new(format!("{}.bn.gamma", layer.name), Tensor::ones(&[cout])));
                params.push(Param::new(format!("{}.bn.beta", layer.name), Tensor::zeros(&[cout])));
                buffers.push(Param::new(format!("{}.bn.running_mean", layer.name), Tensor::zeros(&[cout])));
                buffers.push(Param::new(format!("{}.bn.running_var", layer.name), Tensor::ones(&[cout])));
            }
        }
        Ok(Self::assemble(cfg.clone(), seed, params, buffers))
    }

    fn assemble(cfg: NetConfig, seed: u64, params: Vec<Param<T>>, buffers: Vec<Param<T>>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        let buffer_index = buffers.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        EsmNet { layers: layers(&cfg), cfg, seed, params, buffers, index, buffer_index }
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_parts(cfg: NetConfig, seed: u64, params: Vec<Param<T>>, buffers: Vec<Param<T>>) -> Result<Self> {
        let reference = EsmNet::<T>::init_weights(&cfg, 0)?;
        let check = |want: &[Param<T>], got: &[Param<T>]| -> Result<()> {
            if want.len() != got.len() {
                return Err(Error::dim("checkpoint", format!("expected {} tensors, got {}", want.len(), got.len())));
            }
            for (a, b) in want.iter().zip(got) {
                if a.name != b.name || a.value.shape() != b.value.shape() {
                    return Err(Error::dim(
                        "checkpoint",
                        format!("expected {} {:?}, got {} {:?}", a.name, a.value.shape(), b.name, b.value.shape()),
                    ));
                }
            }
            Ok(())
        };
        check(&reference.params, &params)?;
        check(&reference.buffers, &buffers)?;
        Ok(Self::assemble(cfg, seed, params, buffers))
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Param<T>] {
        &self.buffers
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    pub fn set_esm(&mut self, enabled: bool) {
        self.cfg.esm = enabled;
    }

    /// Same network in another element type.
    pub fn cast<U: Scalar>(&self) -> EsmNet<U> {
        let conv = |v: &[Param<T>]| v.iter().map(|p| Param::new(p.name.clone(), p.value.cast())).collect();
        EsmNet::assemble(self.cfg.clone(), self.seed, conv(&self.params), conv(&self.buffers))
    }

    /// Sets every weight and bias to zero (batch-norm affine terms included).
    pub fn zero_weights(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().fill(T::zero());
        }
    }

    /// Records the full network on `tape` for an N×C×H×W feature tensor.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, opts: ForwardOptions) -> Result<ForwardPass<T>> {
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| if opts.train { tape.param(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        self.forward_with_params(tape, input, param_vars, opts)
    }

    /// Like [`EsmNet::forward`] but reads weights from caller-owned tape
    /// variables, one per entry of [`EsmNet::params`] in the same order.
    pub fn forward_with_params(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        param_vars: Vec<Var>,
        opts: ForwardOptions,
    ) -> Result<ForwardPass<T>> {
        if param_vars.len() != self.params.len() {
            return Err(Error::dim(
                "encode",
                format!("expected {} parameter variables, got {}", self.params.len(), param_vars.len()),
            ));
        }
        for (v, p) in param_vars.iter().zip(&self.params) {
            if tape.value(*v).shape() != p.value.shape() {
                return Err(Error::dim(
                    "encode",
                    format!("parameter {} has shape {:?}, expected {:?}", p.name, tape.value(*v).shape(), p.value.shape()),
                ));
            }
        }
        let [_, c, h, w] = tape.value(input).dims4("encode")?;
        if c != self.cfg.in_channels {
            return Err(Error::dim("encode", format!("expected {} input channels, got {c}", self.cfg.in_channels)));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::geometry("encode", format!("{h}×{w} is not divisible by 16")));
        }
        let mut ctx = Ctx { net: self, tape, vars: &param_vars, opts, stats: Vec::new() };

        let x = ctx.block("enc1.conv1", input)?;
        let l1 = ctx.block("enc1.conv2", x)?;
        let x = ctx.block("enc2.conv1", l1)?;
        let l2 = ctx.block("enc2.conv2", x)?;
        let x = ctx.block("enc3.conv1", l2)?;
        let l3 = ctx.block("enc3.conv2", x)?;
        let x = ctx.block("enc4.conv1", l3)?;
        let l4 = ctx.block("enc4.conv2", x)?;
        let x = ctx.block("enc5.conv1", l4)?;
        let g = ctx.block("enc5.conv2", x)?;

        let up = ctx.block("dec4.up", g)?;
        let cat = ctx.tape.concat_channels(&[up, l4])?;
        let d4 = ctx.block("dec4.fuse", cat)?;
        let up = ctx.block("dec3.up", d4)?;
        let cat = ctx.tape.concat_channels(&[up, l3])?;
        let d3 = ctx.block("dec3.fuse", cat)?;
        let up = ctx.block("dec2.up", d3)?;
        let s2 = ctx.block("dec2.conv", up)?;
        let m2 = ctx.screen("esm2", g, s2, l2)?;
        let up = ctx.block("dec1.up", m2)?;
        let s1 = ctx.block("dec1.conv", up)?;
        let m1 = ctx.screen("esm1", g, s1, l1)?;

        let q = ctx.assoc_head(m1, m2)?;
        let batch_stats = std::mem::take(&mut ctx.stats);
        Ok(ForwardPass {
            acts: Activations { l1, l2, g, s1, s2, m1, m2, q },
            param_vars,
            batch_stats,
        })
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        let mom = T::from_f64(self.cfg.bn_momentum);
        let keep = T::one() - mom;
        for (layer, stats) in &pass.batch_stats {
            let name = &self.layers[*layer].name;
            let mi = self.buffer_index[&format!("{name}.bn.running_mean")];
            let vi = self.buffer_index[&format!("{name}.bn.running_var")];
            for (r, &b) in self.buffers[mi].value.data_mut().iter_mut().zip(&stats.mean) {
                *r = keep * *r + mom * b;
            }
            for (r, &b) in self.buffers[vi].value.data_mut().iter_mut().zip(&stats.var) {
                *r = keep * *r + mom * b;
            }
        }
    }

    /// Convenience inference: the association map for one feature tensor.
    pub fn predict(&self, features: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(features);
        let pass = self.forward(&mut tape, x, ForwardOptions::eval())?;
        Ok(tape.value(pass.acts.q).clone())
    }
}

struct Ctx<'a, T: Scalar> {
    net: &'a EsmNet<T>,
    tape: &'a mut Tape<T>,
    vars: &'a [Var],
    opts: ForwardOptions,
    stats: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn var(&self, name: &str) -> Var {
        self.vars[self.net.index[name]]
    }

    fn layer(&self, name: &str) -> (usize, Layer) {
        let i = self.net.layers.iter().position(|l| l.name == name).expect("known layer name");
        (i, self.net.layers[i].clone())
    }

    /// Convolution (or transposed convolution), then BN + leaky ReLU when the
    /// layer is normalized.
    fn block(&mut self, name: &str, x: Var) -> Result<Var> {
        let (li, layer) = self.layer(name);
        let w = self.var(&format!("{name}.weight"));
        let b = self.var(&format!("{name}.bias"));
        let y = match layer.kind {
            LayerKind::Conv { k, stride, .. } => self.tape.conv2d(x, w, Some(b), stride, k / 2)?,
            LayerKind::ConvT { stride, .. } => {
                let y = self.tape.conv_transpose2d(x, w, stride, 0)?;
                self.tape.add_channel_bias(y, b)?
            }
        };
        if !layer.normalized {
            return Ok(y);
        }
        let gamma = self.var(&format!("{name}.bn.gamma"));
        let beta = self.var(&format!("{name}.bn.beta"));
        let eps = self.net.cfg.bn_eps;
        let y = if self.opts.train {
            let (y, stats) = self.tape.batch_norm2d(y, gamma, beta, eps, BatchNormMode::Train)?;
            self.stats.push((li, stats.expect("training statistics")));
            y
        } else {
            let mean = &self.net.buffers[self.net.buffer_index[&format!("{name}.bn.running_mean")]];
            let var = &self.net.buffers[self.net.buffer_index[&format!("{name}.bn.running_var")]];
            let mode = BatchNormMode::Eval { mean: mean.value.data(), var: var.value.data() };
            self.tape.batch_norm2d(y, gamma, beta, eps, mode)?.0
        };
        Ok(self.tape.leaky_relu(y, T::from_f64(self.net.cfg.leaky_slope)))
    }

    /// `M = C(D(G)) ⊗ S ⊕ L`, or `M = S` when screening is disabled.
    fn screen(&mut self, name: &str, g: Var, s: Var, l: Var) -> Result<Var> {
        if !self.net.cfg.esm {
            return Ok(s);
        }
        let gate = match self.opts.gate {
            Gate::Learned => {
                let d = self.block(&format!("{name}.deconv"), g)?;
                self.block(&format!("{name}.gate"), d)?
            }
            Gate::Ones => self.tape.constant(Tensor::ones(self.tape.shape(s))),
            Gate::Zeros => self.tape.constant(Tensor::zeros(self.tape.shape(s))),
        };
        if self.tape.shape(gate) != self.tape.shape(s) {
            return Err(Error::dim(
                "decode_with_esm",
                format!("gate {:?} vs decoder feature {:?}", self.tape.shape(gate), self.tape.shape(s)),
            ));
        }
        let gated = self.tape.mul(gate, s)?;
        let skip = if self.opts.skip { l } else { self.tape.constant(Tensor::zeros(self.tape.shape(l))) };
        self.tape.add(gated, skip)
    }

    fn assoc_head(&mut self, m1: Var, m2: Var) -> Result<Var> {
        let up = self.tape.upsample_bilinear2x(m2)?;
        let cat = self.tape.concat_channels(&[m1, up])?;
        let x = self.block("head.fuse", cat)?;
        let logits = self.block("head.assoc", x)?;
        self.tape.softmax_channels(logits)
    }
}
