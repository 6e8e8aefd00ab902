use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::nn::{Real, Tensor};

/// `(fan_in, fan_out)` of a dense `[in, out]` or conv `[k, k, in, out]` shape.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [i, o] => Ok((i, o)),
        [kh, kw, i, o] => Ok((kh * kw * i, kh * kw * o)),
        _ => bail!(Shape, "no fan-in/fan-out convention for shape {shape:?}"),
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform samples drawn from `rng`.
pub fn xavier_uniform<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let bound = xavier_bound(fan_in, fan_out);
    Ok(Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound))))
}

pub fn xavier_init<T: Real>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    xavier_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_for_256_by_256() {
        assert!((xavier_bound(256, 256) - 0.1083).abs() < 1e-4);
    }

    #[test]
    fn samples_are_bounded_and_centered() {
        let t: Tensor<f64> = xavier_init(&[256, 256], 3).unwrap();
        let bound = xavier_bound(256, 256);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < bound / 20.0);
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = xavier_init(&[3, 3, 3, 32], 11).unwrap();
        let b: Tensor<f32> = xavier_init(&[3, 3, 3, 32], 11).unwrap();
        let c: Tensor<f32> = xavier_init(&[3, 3, 3, 32], 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(fans(&[3, 3, 32, 64]).unwrap(), (288, 576));
        assert!(fans(&[5]).is_err());
    }
}
