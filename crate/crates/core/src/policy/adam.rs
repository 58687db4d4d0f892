use crate::error::{CfsError, Result};
use crate::scalar::Scalar;

/// Adam with bias-corrected moments. `step` minimizes: parameters move
/// against the supplied gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(num_params: usize, learning_rate: T) -> Self {
        Adam {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            t: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
        }
    }

    pub fn from_state(learning_rate: T, beta1: T, beta2: T, epsilon: T, t: u64, m: Vec<T>, v: Vec<T>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(CfsError::Shape(format!("moment lengths {} and {} differ", m.len(), v.len())));
        }
        Ok(Adam { learning_rate, beta1, beta2, epsilon, t, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grad.len(), self.m.len(), "gradient count");
        self.t += 1;
        let one = T::one();
        let t = self.t.min(i32::MAX as u64) as i32;
        let correction1 = one - self.beta1.powi(t);
        let correction2 = one - self.beta2.powi(t);
        let tiny = T::min_positive_value();
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            // moments of dead units decay geometrically; subnormals are very slow
            if m.abs() < tiny {
                *m = T::zero();
            }
            if *v < tiny {
                *v = T::zero();
            }
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
