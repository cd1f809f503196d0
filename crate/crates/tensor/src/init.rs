use rand::Rng;

use crate::tensor::{Element, Tensor};

/// Xavier/Glorot uniform: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
/// Fans are passed explicitly because kernel layout alone does not determine
/// them (deconv kernels store [in_layer, out_layer, k..]). Samples are drawn
/// in f64 and cast, so f32 and f64 nets see the same stream.
pub fn xavier_uniform<E: Element, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<E> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| E::from_f64(rng.gen_range(-bound..bound)))
}
