//! AdamW with decoupled weight decay.
//!
//! Per parameter `p` with gradient `g` at step `t`:
//!
//! ```text
//! p ← p − lr·wd·p
//! m ← β1·m + (1 − β1)·g
//! v ← β2·v + (1 − β2)·g²
//! p ← p − lr · (m / (1 − β1^t)) / (sqrt(v / (1 − β2^t)) + ε)
//! ```

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One parameter block handed to [`AdamWState::step`].
pub struct ParamBlock<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Optimizer moments for an ordered list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamWState {
    /// Zero moments shaped after `block_sizes`.
    pub fn new(config: AdamWConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Restores a state from stored moments.
    pub fn from_parts(
        config: AdamWConfig,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if first.len() != second.len()
            || first.iter().zip(&second).any(|(m, v)| m.len() != v.len())
        {
            return Err(Error::shape(
                "AdamWState::from_parts",
                "matching first/second moment shapes",
                "mismatched moment blocks",
            ));
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// Applies one update to every block. Nothing is modified when any
    /// gradient is non-finite or any shape disagrees.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        if blocks.len() != self.first.len() {
            return Err(Error::shape(
                "adamw_step",
                format!("{} parameter blocks", self.first.len()),
                format!("{}", blocks.len()),
            ));
        }
        for (i, block) in blocks.iter().enumerate() {
            if block.value.len() != self.first[i].len() || block.grad.len() != block.value.len() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("`{}` with {} values", block.name, self.first[i].len()),
                    format!("{} values, {} grads", block.value.len(), block.grad.len()),
                ));
            }
            if block.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(block.name.clone()));
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (i, block) in blocks.iter_mut().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..block.value.len() {
                let g = block.grad[j];
                let p = &mut block.value[j];
                if weight_decay != 0.0 {
                    *p -= lr * weight_decay * *p;
                }
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(state: &mut AdamWState, values: &mut [f64], grads: &[f64]) -> Result<()> {
        let mut blocks = [ParamBlock {
            name: "p".into(),
            value: values,
            grad: grads,
        }];
        state.step(&mut blocks)
    }

    #[test]
    fn zero_grads_without_decay_leave_params_unchanged() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = AdamWState::new(cfg, &[3]);
        let mut p = [0.5, -1.25, 3.0];
        for _ in 0..5 {
            run(&mut state, &mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [0.5, -1.25, 3.0]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn zero_grads_with_decay_shrink_by_lr_times_decay() {
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut state = AdamWState::new(cfg, &[2]);
        let mut p = [2.0, -4.0];
        run(&mut state, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [2.0 - 1e-2 * 0.1 * 2.0, -4.0 - 1e-2 * 0.1 * -4.0]);
    }

    #[test]
    fn scalar_step_follows_hand_recurrence() {
        // Hand recurrence for p=1.0, g=0.5, lr=0.1, β=(0.9, 0.999), ε=1e-8, wd=0.01:
        //   p1 = 1.0 - 0.1*0.01*1.0                = 0.999
        //   m  = 0.1*0.5 = 0.05 ;  m̂ = 0.05/0.1    = 0.5
        //   v  = 0.001*0.25 = 2.5e-4 ; v̂ = 0.25  -> sqrt = 0.5
        //   p  = 0.999 - 0.1 * 0.5/(0.5 + 1e-8)    ≈ 0.899000002
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        };
        let mut state = AdamWState::new(cfg, &[1]);
        let mut p = [1.0];
        run(&mut state, &mut p, &[0.5]).unwrap();
        let expected = 0.999 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {}", p[0], expected);
        assert!((p[0] - 0.899_000_002).abs() < 1e-12);

        // second step with g = -0.5
        //   m = 0.9*0.05 - 0.05 = -0.005 ; m̂ = -0.005/0.19
        //   v = 0.999*2.5e-4 + 0.001*0.25 = 4.9975e-4 ; v̂ = v/(1-0.999²)
        let before = p[0];
        run(&mut state, &mut p, &[-0.5]).unwrap();
        let decayed = before - 0.1 * 0.01 * before;
        let m_hat = -0.005 / (1.0 - 0.81);
        let v_hat = 4.9975e-4 / (1.0 - 0.999f64 * 0.999);
        let expected = decayed - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut state = AdamWState::new(AdamWConfig::default(), &[2, 1]);
        let mut a = [1.0, 2.0];
        let mut b = [3.0];
        let mut blocks = [
            ParamBlock {
                name: "ok".into(),
                value: &mut a,
                grad: &[0.1, 0.2],
            },
            ParamBlock {
                name: "speech.layer1.bias".into(),
                value: &mut b,
                grad: &[f64::NAN],
            },
        ];
        let err = state.step(&mut blocks).unwrap_err();
        assert!(err.to_string().contains("speech.layer1.bias"));
        assert_eq!(a, [1.0, 2.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut state = AdamWState::new(AdamWConfig::default(), &[2]);
        let mut p = [1.0, 2.0, 3.0];
        assert!(run(&mut state, &mut p, &[0.0; 3]).is_err());
    }
}
