//! Named parameter tensors with gradient accumulators and optional
//! constraints: an entrywise box or the unit L2 ball.

use serde::{Deserialize, Serialize};

use crate::error::{LcmError, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock<T: Real = f32> {
    pub name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    bound: Option<T>,
    unit_ball: bool,
}

impl<T: Real> ParamBlock<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros_like(&value);
        ParamBlock {
            name: name.into(),
            value,
            grad,
            bound: None,
            unit_ball: false,
        }
    }

    /// Block constrained to the closed box `[-bound, bound]`. The initial
    /// value is projected.
    pub fn bounded(name: impl Into<String>, value: Tensor<T>, bound: T) -> Result<Self> {
        if !(bound > T::zero()) {
            return Err(LcmError::Config(format!("box bound must be > 0, got {bound}")));
        }
        let mut p = Self::new(name, value);
        p.bound = Some(bound);
        p.project();
        Ok(p)
    }

    /// Block constrained to `‖value‖₂ ≤ 1`. The initial value is projected.
    pub fn unit_ball(name: impl Into<String>, value: Tensor<T>) -> Self {
        let mut p = Self::new(name, value);
        p.unit_ball = true;
        p.project();
        p
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn bound(&self) -> Option<T> {
        self.bound
    }

    pub fn is_unit_ball(&self) -> bool {
        self.unit_ball
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Replaces the value, keeping the shape. Bounded blocks are projected.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        self.value.expect_same_shape(&value)?;
        self.value = value;
        self.project();
        Ok(())
    }

    /// Replaces the value without projecting it, for values that were
    /// already feasible when saved.
    pub fn restore_value(&mut self, value: Tensor<T>) -> Result<()> {
        self.value.expect_same_shape(&value)?;
        self.value = value;
        Ok(())
    }

    /// Registers the current value as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.param(self.value.clone())
    }

    /// Adds the tape gradient of `var` into the accumulator.
    pub fn accumulate(&mut self, grads: &Gradients<T>, var: Var) -> Result<()> {
        if let Some(g) = grads.get(var) {
            self.grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Plain SGD step `value -= lr · grad`, then projection onto the box.
    pub fn sgd_step(&mut self, lr: T) {
        for (v, &g) in self.value.data_mut().iter_mut().zip(self.grad.data()) {
            *v -= lr * g;
        }
        self.project();
    }

    /// Entrywise clamp into `[-B, B]` and rescaling onto the unit ball,
    /// whichever applies; no-op for unconstrained blocks.
    pub fn project(&mut self) {
        if let Some(b) = self.bound {
            for v in self.value.data_mut() {
                *v = v.max(-b).min(b);
            }
        }
        if self.unit_ball {
            let norm = self.value.data().iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b).sqrt();
            if norm > T::one() {
                for v in self.value.data_mut() {
                    *v = *v / norm;
                }
            }
        }
    }
}

/// Serializable description of a block, used in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Real> From<&ParamBlock<T>> for BlockLayout {
    fn from(p: &ParamBlock<T>) -> Self {
        BlockLayout {
            name: p.name.clone(),
            shape: p.value.dims().to_vec(),
        }
    }
}
