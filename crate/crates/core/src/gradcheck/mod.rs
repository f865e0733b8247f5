//! Central finite-difference checks of the tape's analytic gradients.
//!
//! A check builds a scalar function of some input tensors on a fresh tape,
//! differentiates it with [`Tape::backward`], and compares against central
//! differences of the same function evaluated without the tape's backward
//! pass. Errors are normwise per input: `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.

mod suite;

pub use suite::{run_suite, CaseReport, Fault, SuiteConfig, SuiteReport};

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Normwise relative error per input tensor.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Gradients with both norms below this are compared absolutely; finite
/// differences of an exactly flat direction only return rounding noise.
pub const ABS_FLOOR: f64 = 1e-8;

/// Normwise relative error between analytic and numeric gradients.
pub fn rel_error<T: Real>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> f64 {
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nn = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let (a, n) = (a.to_f64().unwrap_or(f64::NAN), n.to_f64().unwrap_or(f64::NAN));
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let scale = na.sqrt().max(nn.sqrt());
    if diff.is_nan() {
        return f64::INFINITY;
    }
    if scale < ABS_FLOOR {
        return diff.sqrt();
    }
    diff.sqrt() / scale
}

/// Evaluates `build` on a fresh tape with `inputs` bound as parameters and
/// returns the scalar value.
pub fn evaluate<T, F>(build: &F, inputs: &[Tensor<T>]) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Analytic gradients of `build` with respect to each input.
pub fn analytic_gradients<T, F>(build: &F, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect())
}

/// Central-difference gradient `(f(x + h) − f(x − h)) / 2h` for every entry
/// of input `which`.
pub fn numeric_gradient<T, F>(build: &F, inputs: &[Tensor<T>], which: usize, h: f64) -> Result<Tensor<T>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut probe = inputs.to_vec();
    let mut grad = Tensor::zeros_like(&inputs[which]);
    for i in 0..inputs[which].len() {
        let orig = inputs[which].data()[i];
        let step = T::from_f64_lossy(h);
        probe[which].data_mut()[i] = orig + step;
        let plus = evaluate(build, &probe)?;
        probe[which].data_mut()[i] = orig - step;
        let minus = evaluate(build, &probe)?;
        probe[which].data_mut()[i] = orig;
        let g = (plus.to_f64().unwrap() - minus.to_f64().unwrap()) / (2.0 * h);
        grad.data_mut()[i] = T::from_f64_lossy(g);
    }
    Ok(grad)
}

/// Compares analytic and numeric gradients for every input.
pub fn check_gradients<T, F>(build: &F, inputs: &[Tensor<T>], h: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(build, inputs)?;
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let n = numeric_gradient(build, inputs, i, h)?;
        rel_errors.push(rel_error(a, &n));
    }
    Ok(GradCheck { rel_errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_has_exact_gradient() {
        let w = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let build = |t: &mut Tape<f64>, v: &[Var]| {
            let sq = t.square(v[0]);
            Ok(t.sum(sq))
        };
        let g = analytic_gradients(&build, &[w.clone()]).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0]);
        let c = check_gradients(&build, &[w], 1e-5).unwrap();
        assert!(c.max_rel_error() < 1e-9);
    }

    #[test]
    fn rel_error_is_normwise() {
        let a = Tensor::<f64>::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![1.0, 1e-3]).unwrap();
        assert!((rel_error(&a, &b) - 1e-3).abs() < 1e-6);
        assert_eq!(rel_error(&a, &a), 0.0);
    }

    #[test]
    fn suite_detects_sign_flip_and_zero_tolerance() {
        let quick = SuiteConfig {
            instances: 2,
            max_coords: 8,
            ..SuiteConfig::default()
        };
        assert!(run_suite(&quick).unwrap().passed());
        let flipped = run_suite(&SuiteConfig {
            fault: Some(Fault::SignFlip),
            ..quick.clone()
        })
        .unwrap();
        assert!(flipped.cases.iter().all(|c| !c.passed));
        assert!(!run_suite(&SuiteConfig { tolerance: 0.0, ..quick }).unwrap().passed());
    }
}
