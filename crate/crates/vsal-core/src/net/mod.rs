//! A small fully-convolutional saliency network with three side-output
//! heads, hand-written forward and backward passes, and SGD with momentum.
//!
//! The trunk is a 4-layer encoder (stride-2 downsampling after the first two
//! layers) and a 2-layer transposed-convolution decoder restoring full
//! resolution. Two heads tap intermediate decoder scales and are bilinearly
//! upsampled to the input size; a third fuses the full-resolution decoder
//! features. Every head ends in a sigmoid, and the network prediction is the
//! mean of the head maps.

mod forward;
mod io;
mod loss;
mod ops;
mod sgd;

pub use forward::{ForwardCache, NetGrads, NetOutput};
pub use io::{load_params, save_params};
pub use loss::{cross_entropy_loss, euclidean_loss, CrossEntropy};
pub use sgd::{sgd_step, SgdConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const ENCODER_CHANNELS: [usize; 4] = [8, 16, 32, 32];
const DECODER_CHANNELS: [usize; 2] = [16, 8];
pub const HEAD_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    /// 1x1 convolution producing a single-channel logit map.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_w: usize,
    pub in_h: usize,
    pub out_w: usize,
    pub out_h: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * self.k * self.k
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_ch
    }
}

/// Input geometry of the network. Two stride-2 encoder stages and two
/// exactly-doubling decoder stages require dimensions divisible by 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetArch {
    pub input_w: usize,
    pub input_h: usize,
}

impl NetArch {
    pub fn new(input_w: usize, input_h: usize) -> Result<NetArch> {
        if input_w < 8 || input_h < 8 || input_w % 4 != 0 || input_h % 4 != 0 {
            return Err(Error::Invalid(format!(
                "network input size must be at least 8x8 and divisible by 4, got {input_w}x{input_h}"
            )));
        }
        Ok(NetArch { input_w, input_h })
    }

    /// Trunk layers 0..=5 (enc1..dec2) followed by the three heads. Heads
    /// read the activations of trunk layers 3, 4 and 5 respectively.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let (w, h) = (self.input_w, self.input_h);
        let (hw, hh) = (w / 2, h / 2);
        let (qw, qh) = (w / 4, h / 4);
        let conv = |name, in_ch, out_ch, stride, iw, ih, ow, oh| LayerSpec {
            name,
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            k: 3,
            stride,
            pad: 1,
            in_w: iw,
            in_h: ih,
            out_w: ow,
            out_h: oh,
        };
        let head = |name, in_ch, dw, dh| LayerSpec {
            name,
            kind: LayerKind::Head,
            in_ch,
            out_ch: 1,
            k: 1,
            stride: 1,
            pad: 0,
            in_w: dw,
            in_h: dh,
            out_w: dw,
            out_h: dh,
        };
        let deconv = |name, in_ch, out_ch, iw, ih| LayerSpec {
            name,
            kind: LayerKind::Deconv,
            in_ch,
            out_ch,
            k: 4,
            stride: 2,
            pad: 1,
            in_w: iw,
            in_h: ih,
            out_w: iw * 2,
            out_h: ih * 2,
        };
        vec![
            conv("enc1", 3, ENCODER_CHANNELS[0], 2, w, h, hw, hh),
            conv("enc2", ENCODER_CHANNELS[0], ENCODER_CHANNELS[1], 2, hw, hh, qw, qh),
            conv("enc3", ENCODER_CHANNELS[1], ENCODER_CHANNELS[2], 1, qw, qh, qw, qh),
            conv("enc4", ENCODER_CHANNELS[2], ENCODER_CHANNELS[3], 1, qw, qh, qw, qh),
            deconv("dec1", ENCODER_CHANNELS[3], DECODER_CHANNELS[0], qw, qh),
            deconv("dec2", DECODER_CHANNELS[0], DECODER_CHANNELS[1], hw, hh),
            head("side1", ENCODER_CHANNELS[3], qw, qh),
            head("side2", DECODER_CHANNELS[0], hw, hh),
            head("fuse", DECODER_CHANNELS[1], w, h),
        ]
    }
}

/// Parameters of one layer plus its SGD momentum buffers.
///
/// Conv and head weights are laid out `[out_ch][in_ch][ky][kx]`; transposed
/// convolutions use `[in_ch][out_ch][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub spec: LayerSpec,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub vw: Vec<f64>,
    pub vb: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub arch: NetArch,
    pub layers: Vec<LayerParams>,
}

impl NetParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Zero every momentum buffer; fine-tuning stages start the optimizer
    /// fresh.
    pub fn reset_momentum(&mut self) {
        for layer in &mut self.layers {
            layer.vw.iter_mut().for_each(|v| *v = 0.0);
            layer.vb.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let specs = self.arch.layer_specs();
        if specs.len() != self.layers.len() {
            return Err(Error::shape("layer count", specs.len(), self.layers.len()));
        }
        for (spec, layer) in specs.iter().zip(&self.layers) {
            if *spec != layer.spec {
                return Err(Error::Invalid(format!(
                    "layer {} does not match the expected architecture",
                    layer.spec.name
                )));
            }
            if layer.w.len() != spec.weight_len()
                || layer.b.len() != spec.out_ch
                || layer.vw.len() != spec.weight_len()
                || layer.vb.len() != spec.out_ch
            {
                return Err(Error::shape(
                    format!("layer {} buffer lengths", spec.name),
                    format!("w={}, b={}", spec.weight_len(), spec.out_ch),
                    format!("w={}, b={}", layer.w.len(), layer.b.len()),
                ));
            }
            for buf in [&layer.w, &layer.b, &layer.vw, &layer.vb] {
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("layer {}", spec.name)));
                }
            }
        }
        Ok(())
    }

    /// Human-readable layer table for the `net-info` command.
    pub fn layer_table(&self) -> String {
        let mut out = String::new();
        out.push_str("idx  name   kind    in->out  k  stride  pad  output   params\n");
        for (i, layer) in self.layers.iter().enumerate() {
            let s = &layer.spec;
            let kind = match s.kind {
                LayerKind::Conv => "conv",
                LayerKind::Deconv => "deconv",
                LayerKind::Head => "head",
            };
            out.push_str(&format!(
                "{:<4} {:<6} {:<7} {:<8} {:<2} {:<7} {:<4} {:<8} {}\n",
                i,
                s.name,
                kind,
                format!("{}->{}", s.in_ch, s.out_ch),
                s.k,
                s.stride,
                s.pad,
                format!("{}x{}", s.out_w, s.out_h),
                s.param_count(),
            ));
        }
        out.push_str(&format!("total parameters: {}\n", self.param_count()));
        out
    }
}

/// He-style fan-in scaled uniform initialization, deterministic per seed.
/// Biases start at zero, as do the momentum buffers.
pub fn init(arch: NetArch, seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_specs()
        .into_iter()
        .map(|spec| {
            let fan_in = (spec.in_ch * spec.k * spec.k) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let w = (0..spec.weight_len())
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            LayerParams {
                spec,
                w,
                b: vec![0.0; spec.out_ch],
                vw: vec![0.0; spec.weight_len()],
                vb: vec![0.0; spec.out_ch],
            }
        })
        .collect();
    NetParams { arch, layers }
}
