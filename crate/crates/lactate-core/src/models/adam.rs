//! Adam optimizer over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl Adam {
    pub fn new(n_params: usize, params: AdamParams) -> Adam {
        Adam {
            params,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    /// One bias-corrected update: theta -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.first_moment.len());
        self.step_count += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Hand-stepped reference: three iterations on a scalar with the update
    // formulas written out independently of the implementation above.
    #[test]
    fn matches_hand_stepped_scalar_oracle() {
        let p = AdamParams {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut opt = Adam::new(1, p);
        let mut theta = [1.0f64];
        let grads = [0.5f64, -0.25, 2.0];

        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = 1.0f64;
        for (t, g) in grads.iter().enumerate() {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            expected -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);

            opt.step(&mut theta, &[*g]);
            assert!(
                (theta[0] - expected).abs() <= 1e-15 * expected.abs().max(1.0),
                "step {}: {} vs {}",
                t + 1,
                theta[0],
                expected
            );
        }
    }
}
