//! Central finite-difference checks of tape gradients.
//!
//! ```
//! use manas::gradcheck::check;
//! use manas::Tensor;
//!
//! let x = Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]);
//! let err = check(&[x], 1e-6, |tape, v| {
//!     let s = tape.sigmoid(v[0]);
//!     Ok(tape.sum(s))
//! })?;
//! assert!(err[0] < 1e-6);
//! # Ok::<(), manas::Error>(())
//! ```

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// `(f(x + h) - f(x - h)) / 2h` for each listed coordinate of one input.
pub fn central_differences(
    mut f: impl FnMut(&[Tensor]) -> Result<f64>,
    inputs: &[Tensor],
    which: usize,
    coords: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    let mut xs = inputs.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let x0 = xs[which].data()[i];
        xs[which].data_mut()[i] = x0 + step;
        let plus = f(&xs)?;
        xs[which].data_mut()[i] = x0 - step;
        let minus = f(&xs)?;
        xs[which].data_mut()[i] = x0;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Check the gradient of a scalar tape function with respect to every
/// coordinate of every input; returns one relative error per input.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let root = f(&mut tape, &vars)?;
        scalar(&tape, root)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let root = f(&mut tape, &vars)?;
    scalar(&tape, root)?;
    let grads = tape.backward(root);
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*v, x).into_data();
        let coords: Vec<usize> = (0..x.numel()).collect();
        let numeric = central_differences(eval, inputs, k, &coords, step)?;
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

fn scalar(tape: &Tape, root: Var) -> Result<f64> {
    let t = tape.value(root);
    if t.numel() != 1 {
        return Err(Error::Shape(format!("gradient check needs a scalar root, got {:?}", t.dims())));
    }
    Ok(t.item())
}
