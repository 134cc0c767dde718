//! Central finite-difference gradient verification.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::scalar::{cast, Scalar};

/// Numeric gradient of a scalar-valued tensor function at `inputs` by
/// central differences with step `epsilon`, one tensor per input.
pub fn numeric_gradient<S, F>(
    f: &F,
    inputs: &[Tensor<S>],
    epsilon: f64,
) -> Result<Vec<Tensor<S>>, AutodiffError>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eps = cast::<S>(epsilon);
    let eval = |points: &[Tensor<S>]| -> Result<S, AutodiffError> {
        let tape = Tape::new();
        let vars: Vec<Var> = points
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(&format!("input{i}"), t))
            .collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(AutodiffError::NotScalar(v.shape));
        }
        Ok(v.data[0])
    };
    let mut grads = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(&inputs[i].shape);
        for e in 0..inputs[i].numel() {
            let orig = work[i].data[e];
            work[i].data[e] = orig + eps;
            let plus = eval(&work)?;
            work[i].data[e] = orig - eps;
            let minus = eval(&work)?;
            work[i].data[e] = orig;
            g.data[e] = (plus - minus) / (cast::<S>(2.0) * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares tape gradients of a scalar function against central finite
/// differences. Returns the maximum relative error, with denominator
/// `max(1, |analytic|, |numeric|)` per element.
pub fn gradient_check<S, F>(
    f: F,
    inputs: &[Tensor<S>],
    epsilon: f64,
) -> Result<f64, AutodiffError>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Var]) -> Result<Var, AutodiffError>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(&format!("input{i}"), t))
        .collect();
    let loss = f(&tape, &vars)?;
    let analytic = tape.backward(loss)?;
    let numeric = numeric_gradient(&f, inputs, epsilon)?;
    let mut worst = 0.0f64;
    for (i, num) in numeric.iter().enumerate() {
        let name = format!("input{i}");
        let zero = Tensor::zeros(&inputs[i].shape);
        let ana = analytic.get(&name).unwrap_or(&zero);
        for (a, n) in ana.data.iter().zip(num.data.iter()) {
            let a = a.to_f64().unwrap();
            let n = n.to_f64().unwrap();
            let denom = 1.0f64.max(a.abs()).max(n.abs());
            worst = worst.max((a - n).abs() / denom);
        }
    }
    Ok(worst)
}
