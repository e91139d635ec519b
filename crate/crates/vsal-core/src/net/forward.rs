//! Forward pass with an activation cache, and the matching reverse pass
//! producing exact parameter gradients.

use crate::error::{Error, Result};
use crate::image::{Frame, GrayMap};

use super::ops;
use super::{LayerKind, NetParams, HEAD_COUNT};

/// Head maps (full resolution, strictly inside (0,1)) and their mean.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub side_maps: Vec<GrayMap>,
    pub prediction: GrayMap,
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Network input as channel-major planes.
    pub input: Vec<f64>,
    /// Post-activation outputs of the six trunk layers.
    pub trunk_acts: Vec<Vec<f64>>,
    /// Head logit maps at their native scales.
    pub head_logits: Vec<Vec<f64>>,
    /// Full-resolution head probabilities.
    pub head_probs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Which rectified units were active; used by gradient-check tooling to
    /// detect probes that stepped across an activation kink.
    pub fn relu_mask(&self) -> Vec<bool> {
        self.trunk_acts
            .iter()
            .flat_map(|a| a.iter().map(|&v| v > 0.0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(params: &NetParams) -> NetGrads {
        NetGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.dw.iter_mut().zip(&b.dw) {
                *x += y;
            }
            for (x, y) in a.db.iter_mut().zip(&b.db) {
                *x += y;
            }
        }
    }
}

fn frame_to_planes(frame: &Frame) -> Vec<f64> {
    let n = frame.width * frame.height;
    let mut planes = vec![0.0; n * 3];
    for i in 0..n {
        for c in 0..3 {
            planes[c * n + i] = frame.data[i * 3 + c];
        }
    }
    planes
}

impl NetParams {
    pub fn forward(&self, frame: &Frame) -> Result<NetOutput> {
        Ok(self.forward_cached(frame)?.0)
    }

    pub fn forward_cached(&self, frame: &Frame) -> Result<(NetOutput, ForwardCache)> {
        if (frame.width, frame.height) != (self.arch.input_w, self.arch.input_h) {
            return Err(Error::shape(
                "network input size",
                format!("{}x{}", self.arch.input_w, self.arch.input_h),
                format!("{}x{}", frame.width, frame.height),
            ));
        }
        let input = frame_to_planes(frame);
        let (full_w, full_h) = (self.arch.input_w, self.arch.input_h);
        let full = full_w * full_h;

        let mut trunk_acts: Vec<Vec<f64>> = Vec::with_capacity(6);
        for (i, layer) in self.layers.iter().take(6).enumerate() {
            let s = &layer.spec;
            let x = if i == 0 { &input } else { &trunk_acts[i - 1] };
            let mut y = vec![0.0; s.out_ch * s.out_w * s.out_h];
            match s.kind {
                LayerKind::Deconv => ops::deconv_forward(s, &layer.w, &layer.b, x, &mut y),
                _ => ops::conv_forward(s, &layer.w, &layer.b, x, &mut y),
            }
            ops::relu_inplace(&mut y);
            trunk_acts.push(y);
        }

        let mut head_logits = Vec::with_capacity(HEAD_COUNT);
        let mut head_probs = Vec::with_capacity(HEAD_COUNT);
        for (h, layer) in self.layers.iter().skip(6).enumerate() {
            let s = &layer.spec;
            let x = &trunk_acts[3 + h];
            let mut logit = vec![0.0; s.out_w * s.out_h];
            ops::conv_forward(s, &layer.w, &layer.b, x, &mut logit);
            let up = if (s.out_w, s.out_h) == (full_w, full_h) {
                logit.clone()
            } else {
                ops::upsample_bilinear(&logit, s.out_w, s.out_h, full_w, full_h)
            };
            head_probs.push(up.iter().map(|&v| ops::sigmoid(v)).collect::<Vec<_>>());
            head_logits.push(logit);
        }

        let mut mean = vec![0.0; full];
        for probs in &head_probs {
            for (m, &p) in mean.iter_mut().zip(probs.iter()) {
                *m += p;
            }
        }
        for m in mean.iter_mut() {
            *m /= HEAD_COUNT as f64;
        }

        let side_maps = head_probs
            .iter()
            .map(|p| GrayMap {
                width: full_w,
                height: full_h,
                data: p.clone(),
            })
            .collect();
        let output = NetOutput {
            side_maps,
            prediction: GrayMap {
                width: full_w,
                height: full_h,
                data: mean,
            },
        };
        let cache = ForwardCache {
            input,
            trunk_acts,
            head_logits,
            head_probs,
        };
        Ok((output, cache))
    }

    /// Reverse pass. `upstream` holds the loss gradient with respect to each
    /// full-resolution head probability map. Returns the data-loss gradient
    /// for every weight and bias; weight decay is applied by the optimizer
    /// step, not here.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[Vec<f64>]) -> Result<NetGrads> {
        if upstream.len() != HEAD_COUNT {
            return Err(Error::shape("upstream head gradients", HEAD_COUNT, upstream.len()));
        }
        let full = self.arch.input_w * self.arch.input_h;
        for (k, g) in upstream.iter().enumerate() {
            if g.len() != full {
                return Err(Error::shape(format!("upstream gradient {k}"), full, g.len()));
            }
        }

        let mut grads = NetGrads::zeros_like(self);
        // Gradient with respect to each trunk activation, accumulated from
        // the heads and the downstream trunk.
        let mut act_grads: Vec<Vec<f64>> =
            cache.trunk_acts.iter().map(|a| vec![0.0; a.len()]).collect();

        for h in 0..HEAD_COUNT {
            let layer = &self.layers[6 + h];
            let s = &layer.spec;
            // Through the sigmoid.
            let mut d_up: Vec<f64> = upstream[h]
                .iter()
                .zip(&cache.head_probs[h])
                .map(|(&g, &p)| g * p * (1.0 - p))
                .collect();
            // Through the upsampling, back to the head's native scale.
            let d_logit = if (s.out_w, s.out_h) == (self.arch.input_w, self.arch.input_h) {
                std::mem::take(&mut d_up)
            } else {
                ops::upsample_bilinear_backward(
                    &d_up,
                    self.arch.input_w,
                    self.arch.input_h,
                    s.out_w,
                    s.out_h,
                )
            };
            let x = &cache.trunk_acts[3 + h];
            let lg = &mut grads.layers[6 + h];
            ops::conv_backward_params(s, x, &d_logit, &mut lg.dw, &mut lg.db);
            let mut dx = vec![0.0; x.len()];
            ops::conv_backward_input(s, &layer.w, &d_logit, &mut dx);
            for (a, b) in act_grads[3 + h].iter_mut().zip(&dx) {
                *a += b;
            }
        }

        // Trunk, deepest first.
        for i in (0..6).rev() {
            let layer = &self.layers[i];
            let s = &layer.spec;
            let mut dy = std::mem::take(&mut act_grads[i]);
            ops::relu_backward_inplace(&mut dy, &cache.trunk_acts[i]);
            let x = if i == 0 { &cache.input } else { &cache.trunk_acts[i - 1] };
            let lg = &mut grads.layers[i];
            match s.kind {
                LayerKind::Deconv => {
                    ops::deconv_backward_params(s, x, &dy, &mut lg.dw, &mut lg.db);
                    if i > 0 {
                        let mut dx = vec![0.0; x.len()];
                        ops::deconv_backward_input(s, &layer.w, &dy, &mut dx);
                        for (a, b) in act_grads[i - 1].iter_mut().zip(&dx) {
                            *a += b;
                        }
                    }
                }
                _ => {
                    ops::conv_backward_params(s, x, &dy, &mut lg.dw, &mut lg.db);
                    if i > 0 {
                        let mut dx = vec![0.0; x.len()];
                        ops::conv_backward_input(s, &layer.w, &dy, &mut dx);
                        for (a, b) in act_grads[i - 1].iter_mut().zip(&dx) {
                            *a += b;
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}
