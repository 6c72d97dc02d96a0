use crate::error::{Error, Result};

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        })
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.m.len()),
                found: format!("{} parameters, {} gradients", params.len(), grad.len()),
            });
        }
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(3, 0.1).unwrap();
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn moves_against_gradient_sign() {
        let mut opt = Adam::new(2, 0.01).unwrap();
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.2]).unwrap();
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(Adam::new(1, 0.0).is_err());
        assert!(Adam::new(1, -1.0).is_err());
    }

    #[test]
    fn clipping_bounds_first_step() {
        // First Adam step has magnitude lr regardless of scale; clipping must
        // not change the direction.
        let mut opt = Adam::new(2, 0.1).unwrap().with_clip_norm(Some(1.0));
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[300.0, -400.0]).unwrap();
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = Adam::new(2, 0.1).unwrap();
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
