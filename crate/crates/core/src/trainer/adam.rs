use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<S: Scalar> {
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> Default for AdamConfig<S> {
    fn default() -> Self {
        Self {
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            epsilon: S::lit(1e-8),
        }
    }
}

/// Adam with bias correction over a list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    cfg: AdamConfig<S>,
    lr: S,
    step: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig<S>, lr: S, block_sizes: &[usize]) -> Self {
        Self {
            cfg,
            lr,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: block_sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]]) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.cfg;
        let c1 = S::one() - beta1.powi(self.step);
        let c2 = S::one() - beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (S::one() - beta1) * g[k];
                v[k] = beta2 * v[k] + (S::one() - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default(), 0.01f64, &[2]);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut [p.as_mut_slice()], &[&[0.5, -2.0]]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(AdamConfig::default(), 0.1f64, &[1]);
        let mut x = vec![3.0];
        for _ in 0..500 {
            let g = [2.0 * (x[0] - 1.0)];
            adam.step(&mut [x.as_mut_slice()], &[&g]);
        }
        assert!((x[0] - 1.0).abs() < 1e-2);
    }
}
