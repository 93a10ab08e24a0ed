use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state owned by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub loss_history: Vec<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
            loss_history: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    state: &mut TrainState<T>,
    params: &mut [T],
    grads: &[T],
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - T::lit(cfg.beta1.powi(state.step as i32));
    let bc2 = T::one() - T::lit(cfg.beta2.powi(state.step as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = TrainState::<f64>::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam_step(&mut st, &mut p, &[0.0; 3], &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut st = TrainState::<f64>::new(2);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..2000 {
            adam_step(&mut st, &mut p, &[3.0, -0.002], &cfg).unwrap();
            let delta: Vec<f64> = p.iter().zip(&prev).map(|(a, b)| a - b).collect();
            prev = p.clone();
            // bias correction makes every step exactly lr * sign(g) up to eps
            assert!((delta[0] + 0.01).abs() < 1e-7);
            assert!((delta[1] - 0.01).abs() < 1e-4);
        }
    }

    #[test]
    fn quadratic_bowl_descends() {
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let mut st = TrainState::<f64>::new(1);
        let mut p = vec![1.5];
        let mut last = p[0] * p[0];
        for _ in 0..100 {
            let g = [2.0 * p[0]];
            adam_step(&mut st, &mut p, &g, &cfg).unwrap();
            let f = p[0] * p[0];
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn mismatched_lengths() {
        let mut st = TrainState::<f64>::new(2);
        let mut p = vec![0.0; 2];
        assert!(adam_step(&mut st, &mut p, &[1.0], &AdamConfig::default()).is_err());
    }
}
