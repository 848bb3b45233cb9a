//! Adaptive-moment gradient descent with bias correction.

use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// Optimizer state: first/second moment estimates per parameter and the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, param_shapes: &[Vec<usize>]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restore saved state (moments and step counter).
    pub fn restore(&mut self, m: Vec<Tensor>, v: Vec<Tensor>, t: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(UgnError::Training(format!(
                "moment count mismatch: have {} params, got {}/{}",
                self.m.len(),
                m.len(),
                v.len()
            )));
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    /// One update over all parameters. A missing gradient (parameter
    /// unused this step) leaves that parameter and its moments untouched.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<Tensor>],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(UgnError::Training(format!(
                "optimizer built for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = match &grads[i] {
                Some(g) => g,
                None => continue,
            };
            if g.shape() != params[i].shape() {
                return Err(UgnError::shape("adam step", params[i].shape(), g.shape()));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((p, (mj, vj)), &gj) in params[i]
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                .zip(g.data())
            {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut opt = Adam::new(0.1, &[vec![2]]);
        opt.step(&mut [&mut p], &[Some(Tensor::zeros(vec![2]))]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        let mut opt = Adam::new(0.01, &[vec![2]]);
        let g = Tensor::vector(vec![3.0, -0.5]);
        opt.step(&mut [&mut p], &[Some(g)]).unwrap();
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p.data()[1] - (1.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (x - 3)^2
        let mut x = Tensor::scalar(-4.0);
        let mut opt = Adam::new(0.05, &[vec![1]]);
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * (x.data()[0] - 3.0));
            opt.step(&mut [&mut x], &[Some(g)]).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-6, "{}", x.data()[0]);
    }

    #[test]
    fn missing_gradient_skips_param() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let mut opt = Adam::new(0.1, &[vec![1], vec![1]]);
        opt.step(&mut [&mut a, &mut b], &[Some(Tensor::scalar(1.0)), None])
            .unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data()[0], 1.0);
    }
}
