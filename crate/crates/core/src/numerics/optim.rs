use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor with its AdamW moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, mut tensor: Tensor<T>) -> Self {
        tensor.requires_grad = true;
        tensor.zero_grad();
        let n = tensor.len();
        Parameter {
            name: name.into(),
            tensor,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn grad(&self) -> &[T] {
        self.tensor.grad.as_deref().unwrap_or(&[])
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad()
            .iter()
            .map(|g| g.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Real>(&self) -> Parameter<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        Parameter {
            name: self.name.clone(),
            tensor: self.tensor.cast(),
            first_moment: conv(&self.first_moment),
            second_moment: conv(&self.second_moment),
            step: self.step,
        }
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    /// Adds a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, tensor));
        self.params.len() - 1
    }

    /// Adds a `rows x cols` weight drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = rows`.
    pub fn push_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> usize {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        self.push(
            name,
            Tensor::matrix(rows, cols, data).expect("positive dims"),
        )
    }

    pub fn push_filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> usize {
        let data = vec![T::lit(value); rows * cols];
        self.push(
            name,
            Tensor::matrix(rows, cols, data).expect("positive dims"),
        )
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter<T> {
        &mut self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self.params.iter().map(Parameter::cast).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            ..AdamW::default()
        }
    }

    /// One decoupled-weight-decay Adam update over every parameter.
    ///
    /// Gradients are checked first; if any is non-finite no parameter is
    /// touched and the offending parameter is named in the error.
    pub fn step<T: Real>(&self, params: &mut ParamSet<T>) -> Result<()> {
        if let Some(p) = params
            .iter()
            .find(|p| p.grad().iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        let (lr, b1, b2) = (T::lit(self.lr), T::lit(self.beta1), T::lit(self.beta2));
        let (eps, wd) = (T::lit(self.eps), T::lit(self.weight_decay));
        for p in params.iter_mut() {
            p.step += 1;
            let bc1 = T::one() - b1.powi(p.step as i32);
            let bc2 = T::one() - b2.powi(p.step as i32);
            let grad = p.tensor.grad.take().unwrap_or_default();
            let w = p.tensor.data_mut();
            for (i, &g) in grad.iter().enumerate() {
                let m = b1 * p.first_moment[i] + (T::one() - b1) * g;
                let v = b2 * p.second_moment[i] + (T::one() - b2) * g * g;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                w[i] = w[i] - lr * wd * w[i];
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }
}

pub fn adamw_step<T: Real>(params: &mut ParamSet<T>, opt: &AdamW) -> Result<()> {
    opt.step(params)
}
