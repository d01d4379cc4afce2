use super::{ParamSet, SrModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ParamSet<f32>,
    pub v: ParamSet<f32>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(model: &SrModel<f32>) -> Self {
        Self {
            m: ParamSet::zeros(&model.arch),
            v: ParamSet::zeros(&model.arch),
            t: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    model: &mut SrModel<f32>,
    grads: &ParamSet<f32>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != model.params.len() || state.m.len() != model.params.len() {
        return Err(Error::shape("gradient or optimizer state does not match model layout"));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    // Complements taken in f64 so that 1 - 0.999 is not rounded twice.
    let (c1, c2) = ((1.0 - cfg.beta1) as f32, (1.0 - cfg.beta2) as f32);
    let step = (lr / bc1) as f32;
    let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
    let eps = cfg.eps as f32;

    let g_all = grads.tensors();
    let params = model.params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(g_all).zip(ms).zip(vs) {
        if p.len() != g.len() {
            return Err(Error::shape("gradient tensor size mismatch"));
        }
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + c1 * gi;
            v[i] = b2 * v[i] + c2 * gi * gi;
            p[i] -= step * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_model, Architecture};

    fn tiny() -> SrModel<f32> {
        init_model(Architecture::new(1, 1).unwrap(), 3)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = tiny();
        let before = m.clone();
        let mut s = OptimizerState::new(&m);
        let g = ParamSet::zeros(&m.arch);
        adam_step(&mut m, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(m, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = tiny();
        m.params.tensors_mut()[0][0] = 0.0;
        let mut s = OptimizerState::new(&m);
        let mut g = ParamSet::zeros(&m.arch);
        g.tensors_mut()[0][0] = 1.0;
        let lr = 1e-3;
        adam_step(&mut m, &g, &mut s, lr, &AdamConfig::default()).unwrap();
        let moved = -m.params.tensors()[0][0] as f64;
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
        let expect = lr / (1.0 + 1e-8);
        assert!((moved - expect).abs() < 1e-6 * lr, "moved {moved}");
        // Untouched parameters stay put.
        assert_eq!(m.params.tensors()[0][1], tiny().params.tensors()[0][1]);
    }

    #[test]
    fn constant_sign_moves_monotonically() {
        let mut m = tiny();
        let mut s = OptimizerState::new(&m);
        let mut g = ParamSet::zeros(&m.arch);
        let mut prev = m.params.tensors()[0][2];
        for step in 0..50 {
            g.tensors_mut()[0][2] = -0.1 - 0.01 * (step % 3) as f32;
            adam_step(&mut m, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
            let now = m.params.tensors()[0][2];
            assert!(now > prev);
            prev = now;
        }
    }
}
