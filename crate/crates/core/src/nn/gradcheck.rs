//! Central finite-difference gradient checking.

use candle_core::{DType, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Compare the backprop gradient of `f` w.r.t. `target` against central
/// differences on up to `max_coords` randomly chosen coordinates. Returns
/// the norm-wise relative error `|g - n| / max(|g|, |n|)`.
pub fn check_gradient(
    target: &Var,
    f: impl Fn() -> Result<Tensor>,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    if target.dtype() != DType::F64 {
        return Err(Error::InvalidInput("gradient checks require f64 tensors".into()));
    }
    let loss = f()?;
    let grads = loss.backward()?;
    let analytic: Vec<f64> = match grads.get(target.as_tensor()) {
        Some(g) => g.flatten_all()?.to_vec1()?,
        None => vec![0.0; target.elem_count()],
    };
    let original = target.as_tensor().flatten_all()?.to_vec1::<f64>()?;
    let shape = target.shape().clone();
    let n = original.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        let mut v = sample(&mut rng, n, max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let eval = |values: &[f64]| -> Result<f64> {
        target.set(&Tensor::from_slice(values, shape.clone(), target.device())?)?;
        Ok(f()?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    };
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    let mut probe = original.clone();
    for &i in &coords {
        probe[i] = original[i] + eps;
        let plus = eval(&probe)?;
        probe[i] = original[i] - eps;
        let minus = eval(&probe)?;
        probe[i] = original[i];
        let numeric = (plus - minus) / (2.0 * eps);
        diff2 += (numeric - analytic[i]).powi(2);
        a2 += analytic[i].powi(2);
        n2 += numeric.powi(2);
    }
    target.set(&Tensor::from_slice(&original, shape, target.device())?)?;
    let denom = a2.sqrt().max(n2.sqrt());
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(diff2.sqrt() / denom)
}
