use crate::scalar::{lit, Scalar};

/// Adam with bias-corrected moment estimates over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    step: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(len: usize, learning_rate: F) -> Self {
        Adam {
            learning_rate,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step as usize
    }

    /// Moves `params` against `grad` in place.
    pub fn update(&mut self, params: &mut [F], grad: &[F]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        let mut opt = Adam::new(2, 0.1f64);
        let mut p = vec![1.0, -1.0];
        opt.update(&mut p, &[3.0, -0.001]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-4);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(3, 0.05f64);
        let target = [1.0, -2.0, 0.5];
        let mut p = vec![0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.update(&mut p, &g);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3, "{x} vs {t}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Adam::new(1, 0.1f32);
        let mut p = vec![0.25f32];
        opt.update(&mut p, &[0.0]);
        assert_eq!(p[0], 0.25);
    }
}
