//! SGD with momentum and weight decay:
//! `v <- momentum*v - lr*(g + wd*theta); theta <- theta + v`.
//!
//! The backward pass returns pure data-loss gradients; the decay term enters
//! here, once.

use crate::error::{Error, Result};

use super::{NetGrads, NetParams};

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Consumed by the training loops that own this config (sample order,
    /// augmentation coins); the update rule itself is deterministic.
    pub seed: u64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate,
            momentum: 0.95,
            weight_decay: 0.0005,
            seed,
        }
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig::new(1e-2, 0)
    }
}

/// One in-place update. Non-finite gradients abort with the offending layer
/// named.
pub fn sgd_step(params: &mut NetParams, grads: &NetGrads, cfg: &SgdConfig) -> Result<()> {
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if grads.layers.len() != params.layers.len() {
        return Err(Error::shape(
            "gradient layer count",
            params.layers.len(),
            grads.layers.len(),
        ));
    }
    for (layer, lg) in params.layers.iter().zip(&grads.layers) {
        if lg.dw.len() != layer.w.len() || lg.db.len() != layer.b.len() {
            return Err(Error::shape(
                format!("layer {} gradient lengths", layer.spec.name),
                format!("w={}, b={}", layer.w.len(), layer.b.len()),
                format!("w={}, b={}", lg.dw.len(), lg.db.len()),
            ));
        }
        if lg.dw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "layer {} weight gradient",
                layer.spec.name
            )));
        }
        if lg.db.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "layer {} bias gradient",
                layer.spec.name
            )));
        }
    }
    for (layer, lg) in params.layers.iter_mut().zip(&grads.layers) {
        for i in 0..layer.w.len() {
            let g = lg.dw[i] + cfg.weight_decay * layer.w[i];
            layer.vw[i] = cfg.momentum * layer.vw[i] - cfg.learning_rate * g;
            layer.w[i] += layer.vw[i];
        }
        for i in 0..layer.b.len() {
            let g = lg.db[i] + cfg.weight_decay * layer.b[i];
            layer.vb[i] = cfg.momentum * layer.vb[i] - cfg.learning_rate * g;
            layer.b[i] += layer.vb[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init, NetArch, NetGrads};

    fn setup() -> (NetParams, NetGrads) {
        let arch = NetArch::new(8, 8).unwrap();
        let p = init(arch, 11);
        let g = NetGrads::zeros_like(&p);
        (p, g)
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let (mut p, g) = setup();
        let before = p.clone();
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::new(1e-2, 0)
        };
        sgd_step(&mut p, &g, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_plain_descent() {
        let (mut p, mut g) = setup();
        let w0 = p.layers[0].w[0];
        g.layers[0].dw[0] = 0.5;
        let cfg = SgdConfig::new(1e-2, 0);
        sgd_step(&mut p, &g, &cfg).unwrap();
        let want = w0 - cfg.learning_rate * (0.5 + cfg.weight_decay * w0);
        assert!((p.layers[0].w[0] - want).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_momentum_recurrence() {
        // Constant gradient, no decay: after two steps
        // theta = theta0 - lr*g*(2 + m).
        let (mut p, mut g) = setup();
        let w0 = p.layers[2].w[5];
        g.layers[2].dw[5] = 0.25;
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::new(1e-2, 0)
        };
        sgd_step(&mut p, &g, &cfg).unwrap();
        sgd_step(&mut p, &g, &cfg).unwrap();
        let want = w0 - cfg.learning_rate * 0.25 * (2.0 + cfg.momentum);
        assert!((p.layers[2].w[5] - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let (mut p, mut g) = setup();
        g.layers[1].dw[0] = f64::NAN;
        let err = sgd_step(&mut p, &g, &SgdConfig::default()).unwrap_err();
        assert!(err.to_string().contains("enc2"), "{err}");
    }

    #[test]
    fn rejects_non_positive_learning_rate() {
        let (mut p, g) = setup();
        let cfg = SgdConfig::new(0.0, 0);
        assert!(sgd_step(&mut p, &g, &cfg).is_err());
    }
}
