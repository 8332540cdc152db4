//! Adam with decoupled weight decay plus a 1-cycle learning-rate policy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyper-parameters of the optimizer and its learning-rate schedule.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Peak learning rate of the 1-cycle schedule.
    pub max_lr: f64,
    /// Decoupled weight decay applied outside the adaptive scaling.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Total optimizer steps of the run; the schedule spans exactly these.
    pub total_steps: usize,
    /// Fraction of the cycle spent ramping up to `max_lr`.
    pub warmup_fraction: f64,
    /// Initial lr = max_lr / div_factor.
    pub div_factor: f64,
    /// Final lr = max_lr / final_div_factor.
    pub final_div_factor: f64,
}

impl OptimizerConfig {
    pub fn new(max_lr: f64, weight_decay: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps,
            warmup_fraction: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_lr <= 0.0 {
            return Err(Error::Config(format!("max_lr must be > 0; got {}", self.max_lr)));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) && self.warmup_fraction != 0.0 {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in [0, 1); got {}",
                self.warmup_fraction
            )));
        }
        if self.weight_decay < 0.0 || self.div_factor < 1.0 || self.final_div_factor < 1.0 {
            return Err(Error::Config("invalid decay or div factors".into()));
        }
        Ok(())
    }

    fn warmup_steps(&self) -> usize {
        ((self.total_steps as f64 * self.warmup_fraction).round() as usize)
            .clamp(1, self.total_steps.max(2) - 1)
            .min(self.total_steps)
    }
}

/// Learning rate at `step ∈ [0, total_steps]`: cosine ramp from
/// `max_lr / div_factor` up to `max_lr` over the warmup fraction, then cosine
/// anneal down to `max_lr / final_div_factor`. Continuous at the junction.
pub fn one_cycle_lr(step: usize, config: &OptimizerConfig) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::Contract(format!(
            "schedule step {step} exceeds total_steps {}",
            config.total_steps
        )));
    }
    let base = config.max_lr / config.div_factor;
    let fin = config.max_lr / config.final_div_factor;
    let warmup = config.warmup_steps();
    let lr = if step <= warmup {
        let t = step as f64 / warmup as f64;
        base + (config.max_lr - base) * (1.0 - (std::f64::consts::PI * t).cos()) / 2.0
    } else {
        let t = (step - warmup) as f64 / (config.total_steps - warmup) as f64;
        fin + (config.max_lr - fin) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
    };
    Ok(lr)
}

/// Adam state: one pair of moment buffers per parameter tensor.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    /// Fresh state for parameters of the given sizes.
    pub fn new(param_sizes: &[usize]) -> Self {
        Self {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    /// One update: `θ ← θ − lr·(m̂/(√v̂+ε) + weight_decay·θ)` with
    /// bias-corrected moments. `grads` must align with `params`.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Vec<f64>],
        lr: f64,
        config: &OptimizerConfig,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors; got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() {
                return Err(Error::Dimension(format!(
                    "gradient {i} has {} entries; expected {}",
                    g.len(),
                    self.m[i].len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in tensor {i} at optimizer step {}",
                    self.t + 1
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - config.beta1.powi(self.t as i32);
        let bc2 = 1.0 - config.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (j, theta) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
                v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + config.eps) + config.weight_decay * *theta);
            }
        }
        Ok(())
    }
}
