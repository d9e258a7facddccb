use crate::error::{Error, Result};

use super::ParamVector;

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grad.len() != n {
            return Err(Error::mismatch(
                "adam step",
                n,
                format!("params {} / grad {}", params.len(), grad.len()),
            ));
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at optimizer step {}",
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(
    state: &mut OptimState,
    params: &mut ParamVector,
    grad: &ParamVector,
) -> Result<()> {
    state.step(params, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = OptimState::new(3, 1e-3);
        let mut p = ParamVector::new(vec![1.0, -2.0, 3.0]).unwrap();
        s.step(&mut p, &ParamVector::zeros(3)).unwrap();
        assert_eq!(p.as_slice(), &[1.0, -2.0, 3.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_matches_scalar_oracle() {
        let lr = 0.01;
        let g = [0.3, -4.0, 1e-9];
        let mut s = OptimState::new(3, lr);
        let mut p = ParamVector::zeros(3);
        s.step(&mut p, &ParamVector::new(g.to_vec()).unwrap())
            .unwrap();
        for (i, &gi) in g.iter().enumerate() {
            // m_hat = g, v_hat = g^2 after bias correction
            let m_hat: f64 = (0.1 * gi) / 0.1;
            let v_hat: f64 = (0.001 * gi * gi) / (1.0 - 0.999);
            let want = -lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.as_slice()[i] - want).abs() < 1e-15);
        }
        assert!((p.as_slice()[0] + lr).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [0.5, -0.3, 0.8, -0.6];
        let mut p = ParamVector::zeros(4);
        let mut s = OptimState::new(4, 1e-2);
        let mut dist = Vec::new();
        for _ in 0..500 {
            let g: Vec<f64> = p
                .as_slice()
                .iter()
                .zip(&target)
                .map(|(x, t)| x - t)
                .collect();
            s.step(&mut p, &ParamVector::new(g).unwrap()).unwrap();
            let d: f64 = p
                .as_slice()
                .iter()
                .zip(&target)
                .map(|(x, t)| (x - t).powi(2))
                .sum::<f64>()
                .sqrt();
            dist.push(d);
        }
        // Monotone descent after the warm-up, up to the point where the
        // iterate is within tolerance and starts to jitter around the optimum.
        let settled = dist.iter().position(|&d| d < 1e-3).unwrap();
        assert!(settled > 10);
        assert!(dist[10..settled].windows(2).all(|w| w[1] < w[0]));
        assert!(*dist.last().unwrap() < 1e-3, "final distance {}", dist[499]);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut s = OptimState::new(2, 1e-3);
        let mut p = ParamVector::zeros(2);
        let g = ParamVector(vec![f64::NAN, 0.0]);
        assert!(s.step(&mut p, &g).is_err());
        assert_eq!(s.step_count, 0);
    }
}
